"""File formats: a versioned named-axes binary array container, denoiser
checkpoints, human-readable scene and dataset manifests, and plain-text
exports for external viewers.

Every writer is deterministic (no timestamps, stable ordering, repr-exact
floats), so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import DatasetRecord, FilterReport, SynthesisStats
from .denoiser import TinyDenoiser
from .diffusion import NoiseSchedule
from .geometry import PointCloud, RigidTransform, TriMesh
from .motion import HOISequence, MotionSequence, ObjectTrajectory
from .scene import (PlacementSurface, SceneGraph, SceneObject, SpatialRelation,
                    parse_text)

ARRAY_MAGIC = b"HOAR"
CHECKPOINT_MAGIC = b"HOCK"
FORMAT_VERSION = 1

MOTION_AXES = ("frame", "joint", "coord")
ROTATION_AXES = ("frame", "row", "col")
TRANSLATION_AXES = ("frame", "coord")
AFFORDANCE_AXES = ("point", "joint", "frame")


class FormatError(ValueError):
    """Malformed or mismatched file content."""


def _f(x) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def _token(name: str, what: str) -> str:
    if not name or any(c.isspace() for c in name):
        raise FormatError(f"{what} {name!r} must be nonempty without whitespace")
    return name


# ---------------------------------------------------------------- arrays

def write_array(path, values, axes) -> None:
    """Binary container: magic, version, named axes with dims, float64
    little-endian C-order payload."""
    a = np.asarray(values, dtype=np.float64)
    axes = tuple(axes)
    if len(axes) != a.ndim:
        raise FormatError(f"{a.ndim}-D array needs {a.ndim} axis names, "
                          f"got {len(axes)}")
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, a.ndim))
        for name, dim in zip(axes, a.shape):
            enc = _token(name, "axis").encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<Q", dim))
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


class _Cursor:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_array(path):
    """Inverse of write_array; returns (values, axis names)."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    if cur.take(4) != ARRAY_MAGIC:
        raise FormatError(f"{path}: not an array container")
    version, ndim = cur.unpack("<HH")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    axes, dims = [], []
    for _ in range(ndim):
        (n,) = cur.unpack("<H")
        axes.append(cur.take(n).decode("utf-8"))
        dims.append(cur.unpack("<Q")[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = cur.take(8 * count)
    if cur.pos != len(cur.blob):
        raise FormatError(f"{path}: trailing bytes")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return values.reshape(dims), tuple(axes)


# ------------------------------------------------------------ checkpoints

def save_checkpoint(path, denoiser: TinyDenoiser, sched: NoiseSchedule) -> None:
    """Denoiser layer sizes + parameters plus the noise schedule."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        spec = denoiser.spec
        fh.write(struct.pack("<5Q", spec["d_signal"], spec["d_cond"],
                             spec["d_model"], spec["d_key"], spec["d_hidden"]))
        names = sorted(denoiser.params)
        fh.write(struct.pack("<H", len(names)))
        for name in names:
            enc = name.encode("utf-8")
            arr = np.ascontiguousarray(denoiser.params[name], dtype="<f8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<H", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
        fh.write(struct.pack("<Q", sched.steps))
        fh.write(np.ascontiguousarray(sched.beta, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sched.alpha_bar, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (TinyDenoiser, NoiseSchedule)."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    if cur.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    (version,) = cur.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    d_signal, d_cond, d_model, d_key, d_hidden = cur.unpack("<5Q")
    den = TinyDenoiser(d_signal, d_cond, d_model, d_key, d_hidden)
    (n_params,) = cur.unpack("<H")
    seen = set()
    for _ in range(n_params):
        (n,) = cur.unpack("<H")
        name = cur.take(n).decode("utf-8")
        if name not in den.params:
            raise FormatError(f"{path}: unknown parameter {name!r}")
        (ndim,) = cur.unpack("<H")
        shape = cur.unpack(f"<{ndim}Q")
        if shape != den.params[name].shape:
            raise FormatError(f"{path}: parameter {name!r} has shape {shape}, "
                              f"expected {den.params[name].shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(cur.take(8 * count), dtype="<f8").astype(np.float64)
        den.params[name] = arr.reshape(shape)
        seen.add(name)
    if seen != set(den.params):
        raise FormatError(f"{path}: missing parameters {set(den.params) - seen}")
    (steps,) = cur.unpack("<Q")
    beta = np.frombuffer(cur.take(8 * steps), dtype="<f8").astype(np.float64)
    ab = np.frombuffer(cur.take(8 * (steps + 1)), dtype="<f8").astype(np.float64)
    if cur.pos != len(cur.blob):
        raise FormatError(f"{path}: trailing bytes")
    return den, NoiseSchedule(beta, ab)


# ---------------------------------------------------------------- scenes

def _write_geometry(lines, geom):
    if isinstance(geom, TriMesh):
        has_n = int(geom.vertex_normals is not None)
        lines.append(f"mesh {len(geom.vertices)} {len(geom.faces)} {has_n}")
        for v in geom.vertices:
            lines.append(f"v {_f(v[0])} {_f(v[1])} {_f(v[2])}")
        if has_n:
            for n in geom.vertex_normals:
                lines.append(f"vn {_f(n[0])} {_f(n[1])} {_f(n[2])}")
        for face in geom.faces:
            lines.append(f"f {int(face[0])} {int(face[1])} {int(face[2])}")
    elif isinstance(geom, PointCloud):
        has_n = int(geom.normals is not None)
        lines.append(f"cloud {len(geom.points)} {has_n}")
        for p in geom.points:
            lines.append(f"p {_f(p[0])} {_f(p[1])} {_f(p[2])}")
        if has_n:
            for n in geom.normals:
                lines.append(f"pn {_f(n[0])} {_f(n[1])} {_f(n[2])}")
    else:
        raise FormatError(f"cannot serialize geometry {type(geom).__name__}")


def write_scene(path, scene: SceneGraph) -> None:
    """Line-oriented text scene; face indices are 0-based."""
    lines = [f"hoikit-scene {FORMAT_VERSION}"]
    b = scene.bounds
    lines.append("bounds " + " ".join(_f(x) for x in b.ravel()))
    for obj in scene.objects:
        lines.append(f"object {_token(obj.id, 'object id')} "
                     f"{_token(obj.category, 'category')} {int(obj.movable)}")
        pose = [_f(x) for x in obj.pose.rotation.ravel()] + \
               [_f(x) for x in obj.pose.translation]
        lines.append("pose " + " ".join(pose))
        _write_geometry(lines, obj.geometry)
    for surf in scene.surfaces:
        lines.append(f"surface {_token(surf.owner, 'owner')} {_f(surf.height)} "
                     f"{len(surf.polygon)}")
        for p in surf.polygon:
            lines.append(f"sp {_f(p[0])} {_f(p[1])} {_f(p[2])}")
    for rel in scene.relations:
        lines.append(f"relation {rel.subject} {rel.relation} {rel.anchor}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Lines:
    def __init__(self, text: str, path):
        self.rows = text.splitlines()
        self.pos = 0
        self.path = path

    def done(self) -> bool:
        return self.pos >= len(self.rows)

    def peek(self) -> str:
        return self.rows[self.pos]

    def next(self) -> str:
        if self.done():
            raise FormatError(f"{self.path}: unexpected end of file")
        row = self.rows[self.pos]
        self.pos += 1
        return row

    def expect(self, tag: str) -> list:
        parts = self.next().split()
        if not parts or parts[0] != tag:
            raise FormatError(f"{self.path}: expected {tag!r} line")
        return parts[1:]


def _read_floats(parts, n, path):
    if len(parts) != n:
        raise FormatError(f"{path}: expected {n} fields, got {len(parts)}")
    return [float(p) for p in parts]


def _read_geometry(lines: _Lines):
    parts = lines.next().split()
    if parts[0] == "mesh":
        nv, nf, has_n = int(parts[1]), int(parts[2]), int(parts[3])
        verts = np.array([_read_floats(lines.expect("v"), 3, lines.path)
                          for _ in range(nv)], dtype=np.float64).reshape(nv, 3)
        normals = None
        if has_n:
            normals = np.array([_read_floats(lines.expect("vn"), 3, lines.path)
                                for _ in range(nv)]).reshape(nv, 3)
        faces = np.array([[int(x) for x in lines.expect("f")]
                          for _ in range(nf)], dtype=np.int64).reshape(nf, 3)
        return TriMesh(verts, faces, normals)
    if parts[0] == "cloud":
        n, has_n = int(parts[1]), int(parts[2])
        pts = np.array([_read_floats(lines.expect("p"), 3, lines.path)
                        for _ in range(n)]).reshape(n, 3)
        normals = None
        if has_n:
            normals = np.array([_read_floats(lines.expect("pn"), 3, lines.path)
                                for _ in range(n)]).reshape(n, 3)
        return PointCloud(pts, normals)
    raise FormatError(f"{lines.path}: expected mesh or cloud, got {parts[0]!r}")


def read_scene(path) -> SceneGraph:
    lines = _Lines(Path(path).read_text(encoding="utf-8"), path)
    header = lines.expect("hoikit-scene")
    if header != [str(FORMAT_VERSION)]:
        raise FormatError(f"{path}: unsupported scene version {header}")
    bounds = np.array(_read_floats(lines.expect("bounds"), 6, path)).reshape(2, 3)
    objects, surfaces, relations = [], [], []
    while not lines.done():
        parts = lines.next().split()
        if parts[0] == "object":
            oid, category, movable = parts[1], parts[2], bool(int(parts[3]))
            pose_vals = _read_floats(lines.expect("pose"), 12, path)
            pose = RigidTransform(np.array(pose_vals[:9]).reshape(3, 3),
                                  np.array(pose_vals[9:]))
            geom = _read_geometry(lines)
            objects.append(SceneObject(oid, category, geom, pose, movable))
        elif parts[0] == "surface":
            owner, height, k = parts[1], float(parts[2]), int(parts[3])
            poly = np.array([_read_floats(lines.expect("sp"), 3, path)
                             for _ in range(k)]).reshape(k, 3)
            surfaces.append(PlacementSurface(owner, poly, height))
        elif parts[0] == "relation":
            relations.append(SpatialRelation(parts[1], parts[2], parts[3]))
        else:
            raise FormatError(f"{path}: unexpected line {parts[0]!r}")
    return SceneGraph(tuple(objects), tuple(surfaces), tuple(relations), bounds)


# ---------------------------------------------------------------- records

@dataclass(frozen=True)
class RecordInfo:
    index: int
    directory: str
    target_id: str
    text: str


@dataclass(frozen=True)
class ManifestInfo:
    records: tuple
    attempted: int
    emitted: int
    rejections: dict
    failures: dict


def write_record(directory, record: DatasetRecord) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_scene(directory / "scene.txt", record.scene)
    seq = record.sequence
    write_array(directory / "motion.hoa", seq.motion.joints, MOTION_AXES)
    write_array(directory / "rotations.hoa", seq.trajectory.rotations,
                ROTATION_AXES)
    write_array(directory / "translations.hoa", seq.trajectory.translations,
                TRANSLATION_AXES)
    lines = [f"hoikit-record {FORMAT_VERSION}",
             f"job {record.job_id}",
             f"target {_token(record.target_id, 'target id')}",
             f"contact {seq.contact_frame}",
             f"release {seq.release_frame}",
             f"fps {_f(seq.motion.fps)}"]
    hands = seq.meta.get("engaged_hands")
    if hands:
        lines.append("hands " + ",".join(hands))
    for rep in record.reports:
        lines.append(f"report {rep.name} {int(rep.passed)} {rep.frame} "
                     f"{_f(rep.magnitude)}")
    lines.append(f"text {record.text}")
    (directory / "record.txt").write_text("\n".join(lines) + "\n",
                                          encoding="utf-8")


def read_record(directory) -> DatasetRecord:
    directory = Path(directory)
    scene = read_scene(directory / "scene.txt")
    joints, axes = read_array(directory / "motion.hoa")
    if axes != MOTION_AXES:
        raise FormatError(f"{directory}: motion axes {axes}")
    rotations, axes = read_array(directory / "rotations.hoa")
    if axes != ROTATION_AXES:
        raise FormatError(f"{directory}: rotation axes {axes}")
    translations, axes = read_array(directory / "translations.hoa")
    if axes != TRANSLATION_AXES:
        raise FormatError(f"{directory}: translation axes {axes}")

    path = directory / "record.txt"
    lines = _Lines(path.read_text(encoding="utf-8"), path)
    if lines.expect("hoikit-record") != [str(FORMAT_VERSION)]:
        raise FormatError(f"{path}: unsupported record version")
    job = int(lines.expect("job")[0])
    target = lines.expect("target")[0]
    contact = int(lines.expect("contact")[0])
    release = int(lines.expect("release")[0])
    fps = float(lines.expect("fps")[0])
    meta = {"target_id": target}
    if not lines.done() and lines.peek().startswith("hands "):
        meta["engaged_hands"] = tuple(lines.next().split()[1].split(","))
    reports = []
    while not lines.done() and lines.peek().startswith("report "):
        _, name, passed, frame, magnitude = lines.next().split()
        reports.append(FilterReport(name, bool(int(passed)), int(frame),
                                    float(magnitude)))
    text_line = lines.next()
    if not text_line.startswith("text "):
        raise FormatError(f"{path}: expected text line")
    text = text_line[len("text "):]

    mesh = scene.object_by_id(target).geometry
    seq = HOISequence(MotionSequence(joints, fps),
                      ObjectTrajectory(rotations, translations, fps),
                      mesh, text, contact, release, meta)
    return DatasetRecord(job, scene, target, parse_text(text), text, seq,
                         tuple(reports))


def write_dataset(out_dir, records, stats: SynthesisStats) -> Path:
    """One directory per record plus an index manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"hoikit-manifest {FORMAT_VERSION}", f"records {len(records)}"]
    for i, record in enumerate(records):
        rel = f"records/{i:03d}"
        write_record(out_dir / rel, record)
        lines.append(f"record {i} {rel} {record.target_id} {record.text}")
    lines.append(f"attempted {stats.attempted}")
    lines.append(f"emitted {stats.emitted}")
    for name in sorted(stats.rejections):
        lines.append(f"rejection {name} {stats.rejections[name]}")
    for name in sorted(stats.failures):
        lines.append(f"failure {name} {stats.failures[name]}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> ManifestInfo:
    path = Path(path)
    lines = _Lines(path.read_text(encoding="utf-8"), path)
    if lines.expect("hoikit-manifest") != [str(FORMAT_VERSION)]:
        raise FormatError(f"{path}: unsupported manifest version")
    n = int(lines.expect("records")[0])
    records = []
    for _ in range(n):
        row = lines.next()
        parts = row.split(maxsplit=4)
        if parts[0] != "record" or len(parts) != 5:
            raise FormatError(f"{path}: malformed record line {row!r}")
        records.append(RecordInfo(int(parts[1]), parts[2], parts[3], parts[4]))
    attempted = int(lines.expect("attempted")[0])
    emitted = int(lines.expect("emitted")[0])
    rejections, failures = {}, {}
    while not lines.done():
        parts = lines.next().split()
        if parts[0] == "rejection":
            rejections[parts[1]] = int(parts[2])
        elif parts[0] == "failure":
            failures[parts[1]] = int(parts[2])
        else:
            raise FormatError(f"{path}: unexpected line {parts[0]!r}")
    return ManifestInfo(tuple(records), attempted, emitted, rejections, failures)


# ---------------------------------------------------------------- exports

def export_obj(path, mesh: TriMesh) -> None:
    """Standard ASCII mesh with 1-based face indices."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {_f(v[0])} {_f(v[1])} {_f(v[2])}")
    if mesh.vertex_normals is not None:
        for n in mesh.vertex_normals:
            lines.append(f"vn {_f(n[0])} {_f(n[1])} {_f(n[2])}")
    for face in mesh.faces:
        lines.append(f"f {int(face[0]) + 1} {int(face[1]) + 1} "
                     f"{int(face[2]) + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_transform_table(path, trajectory: ObjectTrajectory) -> None:
    """Tab-separated per-frame rigid transforms (row-major rotation then
    translation)."""
    header = ["frame"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + \
             ["tx", "ty", "tz"]
    lines = ["\t".join(header)]
    for f in range(trajectory.n_frames):
        vals = [str(f)] + [_f(x) for x in trajectory.rotations[f].ravel()] + \
               [_f(x) for x in trajectory.translations[f]]
        lines.append("\t".join(vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_joint_table(path, motion: MotionSequence, joint_names) -> None:
    """Tab-separated per-frame joint positions in long format."""
    if len(joint_names) != motion.n_joints:
        raise FormatError("joint_names must match the motion's joint count")
    lines = ["\t".join(["frame", "joint", "x", "y", "z"])]
    for f in range(motion.n_frames):
        for j, name in enumerate(joint_names):
            p = motion.joints[f, j]
            lines.append("\t".join([str(f), name, _f(p[0]), _f(p[1]), _f(p[2])]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
