"""Retargeting raw interaction clips into scenes: contact detection, height
alignment, diffusion repair of the blend seams, and physics filters.

A source clip records an object at some original rest height h_i; placing it
on scene furniture moves the rest height to h_a. The hand joints that carry
the object are shifted by dh = h_a - h_i with a linear blend ramp of T_w
frames on each side of the grasp interval, the object path is shifted by dh
everywhere, and the ramp seams are re-synthesized by inpainting. Sequences
then pass foot-contact, scene-bounds, and body-collision filters before they
are emitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .body import (FOOT_JOINTS, LEFT_HAND_JOINTS, RIGHT_HAND_JOINTS, BodyProxy,
                   Skeleton, default_skeleton, repair_bone_lengths)
from .denoiser import ConditionBundle, SmoothingDenoiser
from .diffusion import NoiseSchedule, inpaint
from .interaction import penetration_set, scene_collision_cloud
from .motion import HOISequence, ObjectTrajectory, frame_range_valid
from .scene import (GroundingError, InteractionSpec, PlacementError, SceneGraph,
                    SceneObject, Vocabulary, default_vocabulary, ground,
                    place_objects, render_text, supporting_surfaces)

DEFAULT_MOTION_EPS = 5e-3
DEFAULT_PROX_EPS = 0.15
DEFAULT_BLEND_FRAMES = 8
DEFAULT_T_NOISE = 25
DEFAULT_FOOT_EPS = 0.02
# depth is measured to the nearest sampled scene point, which overstates the
# true surface penetration by the tangential off-grid offset, so the
# tolerance stays small and graze-level contact passes
DEFAULT_COLLISION_DELTA = 0.02

HAND_SIDE_JOINTS = {"left": LEFT_HAND_JOINTS, "right": RIGHT_HAND_JOINTS}
# joints re-synthesized by repair_motion, per engaged side: the limb the
# height shift displaced, anchored at the (observed) shoulder
ARM_CHAIN_JOINTS = {
    "left": ("left_elbow", "left_wrist", "left_hand"),
    "right": ("right_elbow", "right_wrist", "right_hand"),
}


class NoContact(RuntimeError):
    """The clip never shows the object moving with a hand nearby."""


@dataclass(frozen=True)
class AlignmentParams:
    """Height endpoints and blend settings for one retargeted clip."""

    h_i: float
    h_a: float
    t_w: int = DEFAULT_BLEND_FRAMES
    t_noise: int = DEFAULT_T_NOISE

    def __post_init__(self):
        if not (np.isfinite(self.h_i) and np.isfinite(self.h_a)):
            raise ValueError("rest heights must be finite")
        if self.t_w < 1:
            raise ValueError("blend window must cover at least one frame")
        if self.t_noise < 0:
            raise ValueError("t_noise must be nonnegative")

    @property
    def dh(self) -> float:
        return self.h_a - self.h_i


@dataclass(frozen=True)
class FilterReport:
    """Outcome of one physics filter over a full sequence."""

    name: str
    passed: bool
    frame: int = -1
    magnitude: float = 0.0

    def __post_init__(self):
        if not self.passed and self.frame < 0:
            raise ValueError("a failing report must record the offending frame")


def _object_world_points(seq: HOISequence) -> np.ndarray:
    return seq.trajectory.apply(seq.object_mesh.vertices)


def _frame_displacements(world: np.ndarray) -> np.ndarray:
    """Max vertex displacement between consecutive frames; entry 0 is 0."""
    out = np.zeros(world.shape[0])
    if world.shape[0] > 1:
        out[1:] = np.linalg.norm(world[1:] - world[:-1], axis=2).max(axis=1)
    return out


def _hand_object_distance(joints_frame, world_frame, skeleton, names) -> float:
    idx = skeleton.indices(names)
    d = np.linalg.norm(joints_frame[idx][:, None, :] - world_frame[None], axis=2)
    return float(d.min())


def detect_contact_start(seq: HOISequence, motion_eps: float = DEFAULT_MOTION_EPS,
                         prox_eps: float = DEFAULT_PROX_EPS,
                         skeleton: Skeleton | None = None) -> int:
    """First frame where the object moved since the previous frame AND a hand
    joint is within prox_eps of it. Both conditions must hold at the same
    frame; a static object or an out-of-reach mover raises NoContact.
    """
    skeleton = skeleton or default_skeleton()
    world = _object_world_points(seq)
    disp = _frame_displacements(world)
    joints = seq.motion.joints
    hand_names = LEFT_HAND_JOINTS + RIGHT_HAND_JOINTS
    for f in range(1, seq.motion.n_frames):
        if disp[f] > motion_eps:
            if _hand_object_distance(joints[f], world[f], skeleton, hand_names) < prox_eps:
                return f
    raise NoContact(
        f"no frame moves the object more than {motion_eps} with a hand within {prox_eps}")


def detect_release(seq: HOISequence, motion_eps: float = DEFAULT_MOTION_EPS) -> int:
    """Last frame where the object moved since the previous frame.

    Meant to follow a successful detect_contact_start; raises NoContact if
    the object never moves at all.
    """
    disp = _frame_displacements(_object_world_points(seq))
    moving = np.flatnonzero(disp > motion_eps)
    if moving.size == 0:
        raise NoContact(f"object never moves more than {motion_eps}")
    return int(moving[-1])


def engaged_hands(seq: HOISequence, frame: int, prox_eps: float = DEFAULT_PROX_EPS,
                  skeleton: Skeleton | None = None) -> tuple:
    """Hands whose joints are within prox_eps of the object at one frame.

    Falls back to both hands when neither is close (manually set contact
    frames may predate proximity).
    """
    skeleton = skeleton or default_skeleton()
    world = seq.trajectory.apply(seq.object_mesh.vertices)[frame]
    joints = seq.motion.joints[frame]
    sides = tuple(side for side in ("left", "right")
                  if _hand_object_distance(joints, world, skeleton,
                                           HAND_SIDE_JOINTS[side]) < prox_eps)
    return sides if sides else ("left", "right")


def blend_weights(n_frames: int, contact: int, release: int, t_w: int) -> np.ndarray:
    """Trapezoid ramp: 0 at contact - t_w, 1 from contact to release, 0 again
    at release + t_w, linear in between. Warns when a window is clipped by
    the sequence ends.
    """
    if not 0 <= contact <= release < n_frames:
        raise ValueError("need 0 <= contact <= release < n_frames")
    if t_w < 1:
        raise ValueError("blend window must cover at least one frame")
    if contact - t_w < 0 or release + t_w > n_frames - 1:
        warnings.warn("blend window clipped at the sequence ends")
    f = np.arange(n_frames, dtype=np.float64)
    up = np.clip((f - (contact - t_w)) / t_w, 0.0, 1.0)
    down = np.clip(((release + t_w) - f) / t_w, 0.0, 1.0)
    return np.minimum(up, down)


def height_shift(seq: HOISequence, params: AlignmentParams,
                 hands=None, prox_eps: float = DEFAULT_PROX_EPS,
                 skeleton: Skeleton | None = None) -> HOISequence:
    """Shift the object path by dh everywhere and ramp the engaged hand
    joints onto it over the blend windows.

    The hand offset is exactly 0 at contact - t_w, exactly dh at contact,
    held through release, and back to 0 at release + t_w. Engaged hands are
    detected by proximity at the contact frame unless given.
    """
    if not frame_range_valid(seq):
        raise ValueError("sequence needs valid contact and release frames")
    skeleton = skeleton or default_skeleton()
    if hands is None:
        hands = engaged_hands(seq, seq.contact_frame, prox_eps, skeleton)
    hands = tuple(hands)
    for side in hands:
        if side not in HAND_SIDE_JOINTS:
            raise ValueError(f"unknown hand {side!r}; expected 'left' or 'right'")
    if not hands:
        raise ValueError("need at least one engaged hand")

    w = blend_weights(seq.motion.n_frames, seq.contact_frame, seq.release_frame,
                      params.t_w)
    joints = seq.motion.joints.copy()
    idx = skeleton.indices([n for side in hands for n in HAND_SIDE_JOINTS[side]])
    joints[:, idx, 2] += params.dh * w[:, None]
    translations = seq.trajectory.translations.copy()
    translations[:, 2] += params.dh
    meta = dict(seq.meta)
    meta["engaged_hands"] = hands
    return replace(
        seq,
        motion=seq.motion.with_joints(joints),
        trajectory=ObjectTrajectory(seq.trajectory.rotations, translations,
                                    seq.trajectory.fps),
        meta=meta,
    )


def repair_motion(seq: HOISequence, params: AlignmentParams, denoiser, sched,
                  rng: np.random.Generator, cond=None,
                  joint_names=None, skeleton: Skeleton | None = None) -> HOISequence:
    """Re-synthesize the blend-seam frames of the shifted arm by inpainting.

    Editable entries are the frames strictly inside the two blend windows
    ([contact - t_w, contact - 1] and [release + 1, release + t_w]),
    restricted to the engaged arm chain; the contact and release frames and
    every other joint stay bit-exact. t_noise = 0 returns the input motion
    unchanged.
    """
    if not frame_range_valid(seq):
        raise ValueError("sequence needs valid contact and release frames")
    skeleton = skeleton or default_skeleton()
    c, r = seq.contact_frame, seq.release_frame
    n_frames = seq.motion.n_frames

    if joint_names is None:
        sides = seq.meta.get("engaged_hands")
        if sides is None:
            sides = engaged_hands(seq, c, skeleton=skeleton)
        joint_names = [n for side in sides for n in ARM_CHAIN_JOINTS[side]]
    cols = skeleton.indices(joint_names)

    editable_frames = [f for f in range(max(c - params.t_w, 0), c)] + \
                      [f for f in range(r + 1, min(r + params.t_w, n_frames - 1) + 1)]
    observed = np.ones(seq.motion.joints.shape, dtype=bool)
    for f in editable_frames:
        observed[f, cols, :] = False

    if observed.all() or params.t_noise == 0:
        return seq
    signal = seq.motion.joints.reshape(n_frames, -1)
    mask = observed.reshape(n_frames, -1)
    if cond is None:
        cond = ConditionBundle.build(text=seq.text or None)
    # diffusion noise is unit-scale, so repair runs on per-column standardized
    # coordinates; observed entries are re-clamped bit-exact afterwards
    mu = signal.mean(axis=0)
    sd = np.maximum(signal.std(axis=0), 1e-8)
    out = inpaint((signal - mu) / sd, mask, params.t_noise, denoiser, cond,
                  sched, rng) * sd + mu
    joints = np.where(mask, signal, out).reshape(seq.motion.joints.shape)
    # residual noise stretches the regenerated limb, so edited frames get
    # their bone lengths restored; the final clamp keeps observed entries
    # bit-exact (bone repair only needs to survive on editable entries)
    edited = np.flatnonzero(~observed.all(axis=(1, 2)))
    joints[edited] = repair_bone_lengths(joints[edited], skeleton)
    joints = np.where(observed, seq.motion.joints, joints)
    return replace(seq, motion=seq.motion.with_joints(joints))


def filter_foot_contact(seq: HOISequence, ground_z: float = 0.0,
                        eps: float = DEFAULT_FOOT_EPS,
                        skeleton: Skeleton | None = None) -> FilterReport:
    """Per frame, the lower foot capsule surface must stay within eps of the
    ground plane: higher means levitating, lower means buried.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    skeleton = skeleton or default_skeleton()
    feet = skeleton.indices(FOOT_JOINTS)
    bones = skeleton.bones
    radii = np.array([skeleton.capsule_radii[[c for _, c in bones].index(j)]
                      for j in feet])
    surface_z = (seq.motion.joints[:, feet, 2] - radii).min(axis=1)
    gap = surface_z - ground_z
    failing = np.abs(gap) > eps
    if not failing.any():
        return FilterReport("foot_contact", True, magnitude=float(np.abs(gap).max()))
    first = int(np.argmax(failing))
    return FilterReport("foot_contact", False, frame=first,
                        magnitude=float(np.abs(gap[failing]).max()))


def filter_bounds(seq: HOISequence, bounds) -> FilterReport:
    """The root joint must stay inside the closed scene bounds box."""
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape != (2, 3):
        raise ValueError("bounds must be (2, 3)")
    root = seq.motion.root_positions()
    exceed = np.maximum(bounds[0] - root, root - bounds[1])
    worst = exceed.max(axis=1)
    failing = worst > 0.0
    if not failing.any():
        return FilterReport("bounds", True)
    first = int(np.argmax(failing))
    return FilterReport("bounds", False, frame=first,
                        magnitude=float(worst[failing].max()))


def filter_collision(seq: HOISequence, scene: SceneGraph,
                     delta: float = DEFAULT_COLLISION_DELTA, exclude_ids=(),
                     skeleton: Skeleton | None = None,
                     inflate: float = 0.01) -> FilterReport:
    """Body capsule samples must not penetrate non-target scene geometry
    deeper than delta at any frame.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    body = BodyProxy(skeleton, inflate=inflate)
    cloud = scene_collision_cloud(scene, exclude_ids=exclude_ids)
    first, worst = -1, 0.0
    for f in range(seq.motion.n_frames):
        pts, _ = body.surface_samples(seq.motion.joints[f])
        pairs = penetration_set(pts, cloud)
        if pairs.size == 0:
            continue
        depth = float(np.linalg.norm(pts[pairs[:, 0]] - cloud.points[pairs[:, 1]],
                                     axis=1).max())
        worst = max(worst, depth)
        if depth > delta and first < 0:
            first = f
    if first < 0:
        return FilterReport("collision", True, magnitude=worst)
    return FilterReport("collision", False, frame=first, magnitude=worst)


@dataclass(frozen=True)
class SynthesisConfig:
    """Knobs for synthesize_dataset; defaults match the filter defaults."""

    distractors: int = 2
    motion_eps: float = DEFAULT_MOTION_EPS
    prox_eps: float = DEFAULT_PROX_EPS
    t_w: int = DEFAULT_BLEND_FRAMES
    # gentler than the AlignmentParams default: synthesized clips must keep
    # the repaired limb within the collision-filter margins
    t_noise: int = 12
    ground_z: float = 0.0
    foot_eps: float = DEFAULT_FOOT_EPS
    collision_delta: float = DEFAULT_COLLISION_DELTA
    # walkable support (the ground) is excluded from body collision; foot
    # contact has its own filter
    collision_exclude_categories: tuple = ("floor",)
    diffusion_steps: int = 100
    keep_fraction: float = 0.25

    def __post_init__(self):
        if self.distractors < 0:
            raise ValueError("distractors must be nonnegative")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be positive")


@dataclass(frozen=True)
class DatasetRecord:
    """One emitted sample: the populated scene, its grounded description, and
    the aligned sequence that passed every filter."""

    job_id: int
    scene: SceneGraph
    target_id: str
    spec: InteractionSpec
    text: str
    sequence: HOISequence
    reports: tuple


@dataclass
class SynthesisStats:
    attempted: int = 0
    emitted: int = 0
    rejections: dict = field(default_factory=lambda: {
        "foot_contact": 0, "bounds": 0, "collision": 0})
    failures: dict = field(default_factory=lambda: {
        "placement": 0, "grounding": 0, "contact": 0})


def _distractor_mesh():
    from .primitives import box_mesh
    return box_mesh((0.06, 0.06, 0.06), center=(0.0, 0.0, 0.03))


def _identity_yaw(scene: SceneGraph, oid: str) -> SceneGraph:
    """Replace one object's yaw with identity, keeping its translation.

    Placement samples a random yaw, but retargeted clips keep the source
    approach azimuth, so the grasped object must stay in its canonical
    orientation. The axis-aligned box keeps the same base height and a
    footprint no larger than the yawed one.
    """
    from .geometry import RigidTransform
    obj = scene.object_by_id(oid)
    pose = RigidTransform(np.eye(3), obj.pose.translation)
    fixed = SceneObject(obj.id, obj.category, obj.geometry, pose, obj.movable)
    return replace(scene, objects=tuple(fixed if o.id == oid else o
                                        for o in scene.objects))


def _spec_for_placement(scene: SceneGraph, target: SceneObject, action: str,
                        vocab: Vocabulary) -> InteractionSpec | None:
    """Derive the unique template description of a placed object, or None
    when its surface owner has no relation edge."""
    surfs = supporting_surfaces(target, scene)
    if not surfs:
        return None
    surf = surfs[0]
    owner = scene.object_by_id(surf.owner)
    edges = sorted((r.relation, r.anchor) for r in scene.relations
                   if r.subject == surf.owner)
    if not edges:
        return None
    rel, anchor_id = edges[0]
    anchor = scene.object_by_id(anchor_id)
    return InteractionSpec(action, target.category, owner.category, rel,
                           anchor.category)


def retarget_xy(seq: HOISequence, dxy) -> HOISequence:
    """Shift the whole clip (joints and object path) in the ground plane."""
    dxy = np.asarray(dxy, dtype=np.float64)
    if dxy.shape != (2,):
        raise ValueError("dxy must be (2,)")
    joints = seq.motion.joints.copy()
    joints[:, :, :2] += dxy
    translations = seq.trajectory.translations.copy()
    translations[:, :2] += dxy
    return replace(
        seq,
        motion=seq.motion.with_joints(joints),
        trajectory=ObjectTrajectory(seq.trajectory.rotations, translations,
                                    seq.trajectory.fps),
    )


def synthesize_dataset(corpus, scenes, config: SynthesisConfig | None = None,
                       seed: int = 0, vocab: Vocabulary | None = None,
                       denoiser=None, sched=None):
    """Retarget every corpus clip into a scene and keep the ones that pass.

    Per clip: place the target object (category from clip meta) on a free
    surface plus distractor objects of other categories, derive and re-ground
    the template text, translate the clip onto the placement point, align
    heights, repair the blend seams, and run the three physics filters. Only
    all-pass sequences are emitted. Deterministic for a fixed seed: job k
    draws from an independent generator seeded with (seed, k).

    Returns (records, stats).
    """
    config = config or SynthesisConfig()
    vocab = vocab or default_vocabulary()
    sched = sched or NoiseSchedule.linear(config.diffusion_steps)
    denoiser = denoiser or SmoothingDenoiser(sched, config.keep_fraction)
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")

    records, stats = [], SynthesisStats()
    for job, seq in enumerate(corpus):
        stats.attempted += 1
        rng = np.random.default_rng([seed, job])
        base_scene = scenes[job % len(scenes)]
        category = seq.meta.get("category", "box")
        action = seq.meta.get("action", "move")

        try:
            scene = place_objects(base_scene, category, seq.object_mesh, 1, rng)
        except PlacementError:
            stats.failures["placement"] += 1
            continue
        target_id = scene.objects[-1].id
        scene = _identity_yaw(scene, target_id)

        others = [c for c in vocab.targets if c != category]
        for k in rng.choice(len(others), size=config.distractors, replace=False):
            try:
                scene = place_objects(scene, others[int(k)], _distractor_mesh(),
                                      1, rng)
            except PlacementError:
                break

        target = scene.object_by_id(target_id)
        spec = _spec_for_placement(scene, target, action, vocab)
        if spec is None:
            stats.failures["grounding"] += 1
            continue
        text = render_text(spec, vocab)
        try:
            if ground(spec, scene) != target_id:
                stats.failures["grounding"] += 1
                continue
        except GroundingError:
            stats.failures["grounding"] += 1
            continue

        world0 = seq.trajectory.apply(seq.object_mesh.vertices)[0]
        h_i = float(world0[:, 2].min())
        h_a = target.base_height()
        dxy = target.centroid_xy() - world0[:, :2].mean(axis=0)
        placed = retarget_xy(seq, dxy)

        try:
            contact = detect_contact_start(placed, config.motion_eps, config.prox_eps)
        except NoContact:
            stats.failures["contact"] += 1
            continue
        release = detect_release(placed, config.motion_eps)
        placed = replace(placed, text=text, contact_frame=contact,
                         release_frame=release,
                         meta={**placed.meta, "target_id": target_id})

        params = AlignmentParams(h_i=h_i, h_a=h_a, t_w=config.t_w,
                                 t_noise=config.t_noise)
        shifted = height_shift(placed, params, prox_eps=config.prox_eps)
        refined = repair_motion(shifted, params, denoiser, sched, rng)

        exclude = (target_id,) + tuple(
            o.id for o in scene.objects
            if o.category in config.collision_exclude_categories)
        reports = (
            filter_foot_contact(refined, config.ground_z, config.foot_eps),
            filter_bounds(refined, scene.bounds),
            filter_collision(refined, scene, config.collision_delta,
                             exclude_ids=exclude),
        )
        if all(rep.passed for rep in reports):
            stats.emitted += 1
            records.append(DatasetRecord(job, scene, target_id, spec, text,
                                         refined, reports))
        else:
            for rep in reports:
                if not rep.passed:
                    stats.rejections[rep.name] += 1
    return records, stats
