"""Evaluation metrics: body-object proximity, generation diversity, per-frame
physical plausibility, collision freedom, and a handcrafted-feature Frechet
distance for comparing motion corpora.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import sqrtm

from .body import (FOOT_JOINTS, LEFT_HAND_JOINTS, RIGHT_HAND_JOINTS, BodyProxy,
                   Skeleton, default_skeleton)
from .geometry import SpatialIndex
from .interaction import penetration_set, scene_collision_cloud
from .motion import HOISequence
from .scene import SceneGraph

DEFAULT_FOOT_EPS = 0.02
DEFAULT_MAX_SPEED = 5.0   # m/s; generous cap for desk-scale clips
# meters of bone-length deviation from rest; wide enough that the height
# alignment's wrist/hand shift (which stretches the engaged forearm by up to
# roughly half the rest-height delta) does not count as unrealistic
DEFAULT_BONE_TOL = 0.05

_FRECHET_RIDGE = 1e-10

FEATURE_NAMES = ("speed_mean", "speed_std", "accel_mean", "accel_std",
                 "foot_height_mean", "foot_height_std",
                 "hand_object_mean", "hand_object_std")


@dataclass(frozen=True)
class EvalConfig:
    """Tolerances for the realism checks and collision counting."""

    foot_eps: float = DEFAULT_FOOT_EPS
    max_joint_speed: float = DEFAULT_MAX_SPEED
    bone_tolerance: float = DEFAULT_BONE_TOL
    ground_z: float = 0.0
    # extra body inflation when counting penetrating frames; 0 measures the
    # bare capsule surface
    collision_margin: float = 0.0
    # generations per prompt when a caller samples a diversity set
    k_samples: int = 4

    def __post_init__(self):
        if (self.foot_eps <= 0 or self.max_joint_speed <= 0
                or self.bone_tolerance <= 0):
            raise ValueError("realism thresholds must be positive")
        if self.collision_margin < 0:
            raise ValueError("collision_margin must be nonnegative")
        if self.k_samples < 2:
            raise ValueError("k_samples must be at least 2")


@dataclass(frozen=True)
class MetricReport:
    """One row of evaluation results."""

    goal_distance: float
    multimodality: float
    physical_realism: float
    non_collision: float

    def __post_init__(self):
        if self.goal_distance < 0 or self.multimodality < 0:
            raise ValueError("distance metrics must be nonnegative")
        if not 0.0 <= self.physical_realism <= 1.0:
            raise ValueError("physical_realism must lie in [0, 1]")
        if not 0.0 <= self.non_collision <= 100.0:
            raise ValueError("non_collision must lie in [0, 100]")


def goal_distance(seq: HOISequence, skeleton: Skeleton | None = None) -> float:
    """Mean over frames of the minimum distance from the body surface to the
    manipulated object's surface points; 0 when touching."""
    skeleton = skeleton or default_skeleton()
    body = BodyProxy(skeleton, inflate=0.0)
    world = seq.trajectory.apply(seq.object_mesh.vertices)
    dists = np.empty(seq.motion.n_frames)
    for f in range(seq.motion.n_frames):
        index = SpatialIndex(world[f])
        pts, _ = body.surface_samples(seq.motion.joints[f])
        _, d = index.nearest_many(pts)
        dists[f] = d.min()
    return float(dists.mean())


def multimodality(motions) -> float:
    """Mean pairwise per-joint L2 distance across K >= 2 generations for one
    prompt, averaged over frames and joints."""
    arrays = [m.joints if hasattr(m, "joints") else np.asarray(m, dtype=np.float64)
              for m in motions]
    if len(arrays) < 2:
        raise ValueError("multimodality needs at least two motions")
    shape = arrays[0].shape
    if arrays[0].ndim != 3 or any(a.shape != shape for a in arrays):
        raise ValueError("motions must share one (frames, joints, 3) shape")
    total, pairs = 0.0, 0
    for i in range(len(arrays)):
        for j in range(i + 1, len(arrays)):
            total += float(np.linalg.norm(arrays[i] - arrays[j], axis=-1).mean())
            pairs += 1
    return total / pairs


def frame_realism(seq: HOISequence, config: EvalConfig | None = None,
                  skeleton: Skeleton | None = None) -> np.ndarray:
    """Per-frame 0/1 flags: a frame is realistic when a foot touches the
    ground, no joint exceeds the speed cap, and every bone stays within
    tolerance of its rest length."""
    config = config or EvalConfig()
    skeleton = skeleton or default_skeleton()
    joints = seq.motion.joints
    n = joints.shape[0]

    feet = skeleton.indices(FOOT_JOINTS)
    children = [c for _, c in skeleton.bones]
    radii = np.array([skeleton.capsule_radii[children.index(j)] for j in feet])
    gap = (joints[:, feet, 2] - radii).min(axis=1) - config.ground_z
    foot_ok = np.abs(gap) <= config.foot_eps

    speed = np.zeros(n)
    if n > 1:
        disp = np.linalg.norm(np.diff(joints, axis=0), axis=-1).max(axis=1)
        speed[1:] = disp * seq.motion.fps
    speed_ok = speed <= config.max_joint_speed

    dev = np.abs(skeleton.bone_lengths(joints) - skeleton.rest_bone_lengths())
    bones_ok = dev.max(axis=1) <= config.bone_tolerance

    return (foot_ok & speed_ok & bones_ok).astype(np.float64)


def physical_realism_proxy(seq: HOISequence, config: EvalConfig | None = None,
                           skeleton: Skeleton | None = None) -> float:
    """Fraction of frames passing all three realism checks."""
    return float(frame_realism(seq, config, skeleton).mean())


def non_collision_score(seq: HOISequence, scene: SceneGraph, exclude_ids=(),
                        config: EvalConfig | None = None,
                        skeleton: Skeleton | None = None) -> float:
    """Percentage of frames where neither the body proxy nor the moved object
    penetrates the (non-excluded) scene geometry."""
    config = config or EvalConfig()
    skeleton = skeleton or default_skeleton()
    body = BodyProxy(skeleton, inflate=config.collision_margin)
    cloud = scene_collision_cloud(scene, exclude_ids=exclude_ids)
    world = seq.trajectory.apply(seq.object_mesh.vertices)
    clean = 0
    for f in range(seq.motion.n_frames):
        pts, _ = body.surface_samples(seq.motion.joints[f])
        if penetration_set(pts, cloud).size:
            continue
        if penetration_set(world[f], cloud).size:
            continue
        clean += 1
    return 100.0 * clean / seq.motion.n_frames


def sequence_features(seq: HOISequence,
                      skeleton: Skeleton | None = None) -> np.ndarray:
    """Eight summary statistics of one clip (see FEATURE_NAMES); the embedding
    used by the corpus-level Frechet comparison."""
    skeleton = skeleton or default_skeleton()
    joints = seq.motion.joints
    fps = seq.motion.fps
    vel = np.linalg.norm(np.diff(joints, axis=0), axis=-1) * fps
    acc = np.linalg.norm(np.diff(joints, 2, axis=0), axis=-1) * fps * fps
    feet = skeleton.indices(FOOT_JOINTS)
    foot_h = joints[:, feet, 2].mean(axis=1)
    hands = skeleton.indices(LEFT_HAND_JOINTS + RIGHT_HAND_JOINTS)
    world = seq.trajectory.apply(seq.object_mesh.vertices)
    hand_obj = np.linalg.norm(joints[:, hands, None, :] - world[:, None, :, :],
                              axis=-1).min(axis=(1, 2))
    return np.array([vel.mean(), vel.std(), acc.mean(), acc.std(),
                     foot_h.mean(), foot_h.std(),
                     hand_obj.mean(), hand_obj.std()])


def fit_feature_gaussian(features) -> tuple:
    """Mean and covariance of stacked feature rows."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two feature rows")
    return x.mean(axis=0), np.cov(x, rowvar=False)


def frechet_gaussian(mu_a, cov_a, mu_b, cov_b) -> float:
    """Closed-form Frechet distance between two Gaussians; a small ridge
    keeps the matrix square root stable for near-singular covariances."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    diff = mu_a - mu_b
    eye = np.eye(len(mu_a)) * _FRECHET_RIDGE
    root = sqrtm((cov_a + eye) @ (cov_b + eye))
    if np.iscomplexobj(root):
        root = root.real
    val = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * root))
    return max(val, 0.0)


def motion_frechet_proxy(seqs_a, seqs_b,
                         skeleton: Skeleton | None = None) -> float:
    """Frechet distance between Gaussians fit to handcrafted per-sequence
    features of two corpora."""
    skeleton = skeleton or default_skeleton()
    fa = np.stack([sequence_features(s, skeleton) for s in seqs_a])
    fb = np.stack([sequence_features(s, skeleton) for s in seqs_b])
    mu_a, cov_a = fit_feature_gaussian(fa)
    mu_b, cov_b = fit_feature_gaussian(fb)
    return frechet_gaussian(mu_a, cov_a, mu_b, cov_b)


def evaluate_dataset(items, config: EvalConfig | None = None,
                     skeleton: Skeleton | None = None,
                     workers: int = 1) -> MetricReport:
    """Aggregate metrics over (sequence, scene, exclude_ids) triples. The
    diversity term treats the sequences as one generation set when their
    joint arrays share a shape; otherwise it is reported as 0. Items are
    independent, so they fan out over a thread pool when workers > 1; the
    merge keeps item order, so the report does not depend on workers."""
    items = list(items)
    if not items:
        raise ValueError("need at least one item")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    config = config or EvalConfig()
    skeleton = skeleton or default_skeleton()

    def one(item):
        seq, scene, exclude = item
        return (goal_distance(seq, skeleton),
                physical_realism_proxy(seq, config, skeleton),
                non_collision_score(seq, scene, exclude, config, skeleton))

    if workers == 1:
        triples = [one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            triples = list(pool.map(one, items))
    gd, pr, nc = zip(*triples)
    motions = [seq.motion for seq, _, _ in items]
    shapes = {m.joints.shape for m in motions}
    mm = multimodality(motions) if len(motions) >= 2 and len(shapes) == 1 else 0.0
    return MetricReport(float(np.mean(gd)), mm, float(np.mean(pr)),
                        float(np.mean(nc)))
