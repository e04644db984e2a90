"""Command-line driver for every pipeline stage.

Subcommands: synthesize, ground, affordance, train, generate, eval, export.
Each accepts a JSON config file plus --seed and --workers; every run with the
same inputs and seed writes byte-identical artifacts. Exit codes: 0 success,
2 validation failure (bad flags, malformed configs or file contents), 3 I/O
error. Input references are either built-in fixtures ("toy:clean", "toy:room"),
paths, or names resolved inside the directory named by HOIKIT_FIXTURES.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .affordance import (DEFAULT_SIGMA, DEFAULT_TAU, AffordanceTensor,
                         affordance_from_motion, generate_affordance)
from .alignment import SynthesisConfig, synthesize_dataset
from .body import HAND_JOINTS, default_skeleton
from .denoiser import ConditionBundle, TrainConfig, train_denoiser
from .diffusion import NoiseSchedule
from .fixtures import TOY_VARIANTS, room_scene, toy_corpus
from .geometry import TriMesh
from .hio import (AFFORDANCE_AXES, MOTION_AXES, ROTATION_AXES,
                  TRANSLATION_AXES, export_joint_table, export_obj,
                  export_transform_table, load_checkpoint, read_array,
                  read_manifest, read_record, read_scene, save_checkpoint,
                  write_array, write_dataset)
from .interaction import generate_interaction, interaction_training_pair
from .metrics import EvalConfig, evaluate_dataset
from .scene import SceneGraph, ground, parse_text

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
FIXTURE_ENV = "HOIKIT_FIXTURES"
TOY_SCHEME = "toy:"


# ------------------------------------------------------------- plumbing

def _load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON config: {err}")
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed, command: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ValueError(f"{command}: unknown config keys {unknown}; "
                         f"allowed: {sorted(allowed)}")


def _resolve_input(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    root = os.environ.get(FIXTURE_ENV)
    if root and (Path(root) / ref).exists():
        return Path(root) / ref
    raise FileNotFoundError(
        f"cannot read {ref!r} (set {FIXTURE_ENV} to resolve fixture names)")


def _load_scene(ref: str) -> SceneGraph:
    if ref == TOY_SCHEME + "room":
        return room_scene()
    if ref.startswith(TOY_SCHEME):
        raise ValueError(f"unknown built-in scene {ref!r}; only 'toy:room'")
    return read_scene(_resolve_input(ref))


def _load_corpus(ref: str, size: int, fps: float) -> list:
    if not ref.startswith(TOY_SCHEME):
        raise ValueError(f"unknown corpus {ref!r}; only the toy adapter ships "
                         f"(toy:{', toy:'.join(TOY_VARIANTS)})")
    variant = ref[len(TOY_SCHEME):]
    return toy_corpus(n=size, variant=variant, fps=fps)


def _load_records(ref: str, seed: int, corpus_size: int) -> list:
    """A dataset is either a built-in corpus synthesized on the fly or a
    directory previously written by `synthesize`."""
    if ref.startswith(TOY_SCHEME):
        corpus = _load_corpus(ref, corpus_size, 20.0)
        records, _ = synthesize_dataset(corpus, [room_scene()], seed=seed)
        return records
    path = _resolve_input(ref)
    manifest = path / "manifest.txt" if path.is_dir() else path
    info = read_manifest(manifest)
    return [read_record(manifest.parent / entry.directory)
            for entry in info.records]


def _load_record(cfg: dict, seed: int):
    ref = cfg.get("record")
    if ref is None:
        raise ValueError("config needs a 'record' entry (record or dataset "
                         "directory, or a built-in dataset name)")
    index = int(cfg.get("record_index", 0))
    if ref.startswith(TOY_SCHEME):
        records = _load_records(ref, seed, int(cfg.get("corpus_size", 4)))
        if not 0 <= index < len(records):
            raise ValueError(f"record_index {index} out of range "
                             f"({len(records)} records)")
        return records[index]
    path = _resolve_input(ref)
    if (path / "record.txt").exists():
        return read_record(path)
    manifest = path / "manifest.txt" if path.is_dir() else path
    info = read_manifest(manifest)
    if not 0 <= index < len(info.records):
        raise ValueError(f"record_index {index} out of range "
                         f"({len(info.records)} records)")
    return read_record(manifest.parent / info.records[index].directory)


def _record_affordance(record, skeleton) -> AffordanceTensor:
    """Ground-truth hand-object affordance of a stored clip."""
    target = record.scene.object_by_id(record.target_id)
    seq = record.sequence
    hands = seq.motion.joints[:, skeleton.indices(HAND_JOINTS), :]
    return affordance_from_motion(seq.trajectory.apply(target.local_points()),
                                  hands)


def _write_out(args, text: str) -> None:
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")


# ----------------------------------------------------------- subcommands

_SYN_INT = ("distractors", "t_noise", "t_w", "diffusion_steps")
_SYN_FLOAT = ("motion_eps", "prox_eps", "ground_z", "foot_eps",
              "collision_delta", "keep_fraction")


def _cmd_synthesize(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("corpus", "corpus_size", "scene", "fps")
                + _SYN_INT + _SYN_FLOAT, "synthesize")
    corpus = _load_corpus(cfg.get("corpus", "toy:clean"),
                          int(cfg.get("corpus_size", 8)),
                          float(cfg.get("fps", 20.0)))
    scene = _load_scene(cfg.get("scene", "toy:room"))
    kwargs = {k: int(cfg[k]) for k in _SYN_INT if k in cfg}
    kwargs.update({k: float(cfg[k]) for k in _SYN_FLOAT if k in cfg})
    records, stats = synthesize_dataset(corpus, [scene],
                                        SynthesisConfig(**kwargs),
                                        seed=args.seed)
    manifest = write_dataset(args.out, records, stats)
    print(f"emitted {stats.emitted} of {stats.attempted} records -> {manifest}")
    return EXIT_OK


def _cmd_ground(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("text", "scene"), "ground")
    text = cfg.get("text")
    if not text:
        raise ValueError("ground: config needs a 'text' entry")
    scene = _load_scene(cfg.get("scene", "toy:room"))
    target = ground(parse_text(text), scene)
    _write_out(args, target + "\n")
    return EXIT_OK


def _cmd_affordance(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("mode", "record", "record_index", "corpus_size",
                      "checkpoint", "text", "sigma", "tau", "n_joints",
                      "n_frames"), "affordance")
    mode = cfg.get("mode", "compute")
    sigma = float(cfg.get("sigma", DEFAULT_SIGMA))
    tau = float(cfg.get("tau", DEFAULT_TAU))
    skeleton = default_skeleton()
    record = _load_record(cfg, args.seed)
    if mode == "compute":
        target = record.scene.object_by_id(record.target_id)
        seq = record.sequence
        hands = seq.motion.joints[:, skeleton.indices(HAND_JOINTS), :]
        aff = affordance_from_motion(
            seq.trajectory.apply(target.local_points()), hands, sigma, tau)
    elif mode == "generate":
        ckpt = cfg.get("checkpoint")
        if not ckpt:
            raise ValueError("affordance: generate mode needs 'checkpoint'")
        denoiser, sched = load_checkpoint(_resolve_input(ckpt))
        points = record.scene.object_by_id(record.target_id).world_points()
        aff = generate_affordance(points, cfg.get("text", record.text),
                                  denoiser, sched,
                                  np.random.default_rng(args.seed),
                                  int(cfg.get("n_joints", 4)),
                                  int(cfg.get("n_frames", 16)), sigma, tau)
    else:
        raise ValueError(f"affordance: unknown mode {mode!r}")
    write_array(args.out, aff.values, AFFORDANCE_AXES)
    shape = aff.values.shape
    print(f"affordance {shape} sigma={sigma} tau={tau} -> {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("task", "dataset", "corpus_size", "epochs", "lr",
                      "d_model", "d_key", "d_hidden", "diffusion_steps"),
                "train")
    records = _load_records(cfg.get("dataset", "toy:clean"), args.seed,
                            int(cfg.get("corpus_size", 4)))
    if not records:
        raise ValueError("train: dataset has no records")
    sched = NoiseSchedule.linear(int(cfg.get("diffusion_steps", 100)))
    skeleton = default_skeleton()
    task = cfg.get("task", "interaction")
    pairs = []
    if task == "interaction":
        for record in records:
            a0, cond, _ = interaction_training_pair(
                record.scene, record.target_id, record.sequence, skeleton)
            pairs.append((a0, cond))
    elif task == "affordance":
        for record in records:
            aff = _record_affordance(record, skeleton)
            points = record.scene.object_by_id(record.target_id).world_points()
            cond = ConditionBundle.build(text=record.text, points=points)
            pairs.append((aff.values.reshape(aff.n_points, -1), cond))
    else:
        raise ValueError(f"train: unknown task {task!r}")
    config = TrainConfig(epochs=int(cfg.get("epochs", 200)),
                         lr=float(cfg.get("lr", 1e-2)), seed=args.seed,
                         d_model=int(cfg.get("d_model", 32)),
                         d_key=int(cfg.get("d_key", 16)),
                         d_hidden=int(cfg.get("d_hidden", 64)))
    result = train_denoiser(pairs, sched, config)
    save_checkpoint(args.out, result.denoiser, sched)
    print(f"trained {task} denoiser on {len(pairs)} sequences, "
          f"final loss {result.losses[-1]:.6f} -> {args.out}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("checkpoint", "record", "record_index", "corpus_size",
                      "scene", "target", "text", "affordance", "sigma", "tau",
                      "guidance", "fps", "step_size"), "generate")
    ckpt = cfg.get("checkpoint")
    if not ckpt:
        raise ValueError("generate: config needs a 'checkpoint' entry")
    denoiser, sched = load_checkpoint(_resolve_input(ckpt))
    skeleton = default_skeleton()
    if "record" in cfg:
        record = _load_record(cfg, args.seed)
        scene, target_id = record.scene, record.target_id
        text = cfg.get("text", record.text)
        aff = _record_affordance(record, skeleton)
    else:
        for key in ("scene", "target", "text", "affordance"):
            if key not in cfg:
                raise ValueError(f"generate: config needs {key!r} when no "
                                 f"'record' is given")
        scene = _load_scene(cfg["scene"])
        target_id, text = cfg["target"], cfg["text"]
        values, axes = read_array(_resolve_input(cfg["affordance"]))
        if axes != AFFORDANCE_AXES:
            raise ValueError(f"affordance array has axes {axes}, "
                             f"expected {AFFORDANCE_AXES}")
        aff = AffordanceTensor(values, float(cfg.get("sigma", DEFAULT_SIGMA)),
                               float(cfg.get("tau", DEFAULT_TAU)))
    motion, trajectory = generate_interaction(
        scene, target_id, aff, text, denoiser, sched,
        np.random.default_rng(args.seed),
        enable_guidance=bool(cfg.get("guidance", False)), skeleton=skeleton,
        fps=float(cfg.get("fps", 20.0)),
        step_size=float(cfg.get("step_size", 0.01)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_array(out / "motion.hoa", motion.joints, MOTION_AXES)
    write_array(out / "rotations.hoa", trajectory.rotations, ROTATION_AXES)
    write_array(out / "translations.hoa", trajectory.translations,
                TRANSLATION_AXES)
    print(f"generated {motion.n_frames} frames for {target_id!r} -> {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("dataset", "corpus_size", "foot_eps", "max_joint_speed",
                      "bone_tolerance", "collision_margin", "k_samples"),
                "eval")
    records = _load_records(cfg.get("dataset", "toy:clean"), args.seed,
                            int(cfg.get("corpus_size", 4)))
    kwargs = {k: float(cfg[k]) for k in ("foot_eps", "max_joint_speed",
                                         "bone_tolerance", "collision_margin")
              if k in cfg}
    if "k_samples" in cfg:
        kwargs["k_samples"] = int(cfg["k_samples"])
    config = EvalConfig(**kwargs)
    items = []
    for record in records:
        # the target is carried (not collided with) and the walkable ground
        # is excluded like in the synthesis filter
        floor = tuple(o.id for o in record.scene.objects
                      if o.category == "floor")
        items.append((record.sequence, record.scene,
                      (record.target_id,) + floor))
    report = evaluate_dataset(items, config, workers=args.workers)
    _write_out(args, (f"records {len(items)}\n"
                      f"goal_distance {report.goal_distance!r}\n"
                      f"multimodality {report.multimodality!r}\n"
                      f"physical_realism {report.physical_realism!r}\n"
                      f"non_collision {report.non_collision!r}\n"))
    return EXIT_OK


def _cmd_export(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("record", "record_index", "corpus_size",
                      "scene_meshes"), "export")
    record = _load_record(cfg, args.seed)
    skeleton = default_skeleton()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = record.scene.object_by_id(record.target_id)
    written = ["object.obj", "object_trajectory.tsv", "joints.tsv"]
    export_obj(out / "object.obj", target.geometry)
    export_transform_table(out / "object_trajectory.tsv",
                           record.sequence.trajectory)
    export_joint_table(out / "joints.tsv", record.sequence.motion,
                       skeleton.names)
    if bool(cfg.get("scene_meshes", True)):
        for obj in record.scene.objects:
            if not isinstance(obj.geometry, TriMesh) or obj.id == target.id:
                continue
            normals = obj.geometry.vertex_normals
            world = TriMesh(obj.pose.apply(obj.geometry.vertices),
                            obj.geometry.faces,
                            None if normals is None
                            else normals @ obj.pose.rotation.T)
            name = f"scene_{obj.id}.obj"
            export_obj(out / name, world)
            written.append(name)
    print(f"exported {len(written)} files -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------- entry

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hoikit",
        description="Synthesize, train on, generate, and evaluate "
                    "human-object interaction clips in 3-D scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = (
        ("synthesize", _cmd_synthesize, True,
         "retarget a corpus into scenes and write the filtered dataset"),
        ("ground", _cmd_ground, False,
         "resolve a templated sentence to an object id in a scene"),
        ("affordance", _cmd_affordance, True,
         "compute a clip's hand-object affordance or sample one from a model"),
        ("train", _cmd_train, True,
         "fit a denoiser on a dataset and write a checkpoint"),
        ("generate", _cmd_generate, True,
         "sample a motion + object trajectory from a checkpoint"),
        ("eval", _cmd_eval, False,
         "score a dataset: goal distance, diversity, realism, non-collision"),
        ("export", _cmd_export, True,
         "write viewer-ready meshes and per-frame transform tables"),
    )
    for name, func, out_required, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="FILE",
                       help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0,
                       help="random seed (default 0)")
        p.add_argument("--workers", type=int, default=1, metavar="N",
                       help="worker pool size (default 1)")
        p.add_argument("--out", metavar="PATH", required=out_required,
                       help="output file or directory"
                            + ("" if out_required else " (optional)"))
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyError as err:
        print(f"error: {err.args[0] if err.args else err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
