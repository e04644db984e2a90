"""Collision-aware motion + object-trajectory generation.

Local scene patch tokens, the contact and penetration training losses, the
test-time penetration guidance step, and the assembly of the conditional
denoising pipeline that emits a (MotionSequence, ObjectTrajectory) pair.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .affordance import AffordanceTensor
from .body import (HAND_JOINTS, BodyProxy, Skeleton, default_skeleton,
                   repair_bone_lengths)
from .denoiser import DEFAULT_COND_DIM, ConditionBundle, TinyDenoiser, _pad_to, \
    object_tokens, text_token
from .diffusion import NoiseSchedule, diffusion_loss, reverse_denoise
from .geometry import GeometryError, PointCloud, SpatialIndex, TriMesh, VoxelGrid, \
    compute_vertex_normals
from .motion import MotionSequence, ObjectTrajectory
from .scene import SceneGraph

LAMBDA_CONTACT = 1.0
LAMBDA_PENETRATION = 1.0
CONTACT_THRESHOLD = 0.1
GUIDANCE_STEP = 0.01
LOCAL_EXTENT = 0.5
LOCAL_PATCHES = (4, 4)


@dataclass(frozen=True)
class LossWeights:
    """Training-loss mix plus the guidance knobs surfaced in configs."""

    lambda_contact: float = LAMBDA_CONTACT
    lambda_penetration: float = LAMBDA_PENETRATION
    contact_threshold: float = CONTACT_THRESHOLD
    guidance_step: float = GUIDANCE_STEP

    def __post_init__(self):
        vals = (self.lambda_contact, self.lambda_penetration,
                self.contact_threshold, self.guidance_step)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError("loss weights must be finite and nonnegative")


@dataclass(frozen=True)
class LocalSceneTokens:
    """Per-patch features from z-pooled occupancy around the target."""

    tokens: np.ndarray
    patch_count: tuple

    def __post_init__(self):
        toks = np.asarray(self.tokens, dtype=np.float64)
        px, py = (int(c) for c in self.patch_count)
        if toks.ndim != 2 or toks.shape[0] != px * py:
            raise ValueError(f"need {px * py} patch tokens, got {toks.shape}")
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "patch_count", (px, py))


def _split_edges(n: int, parts: int) -> np.ndarray:
    return np.linspace(0, n, parts + 1).round().astype(int)


def local_scene_tokens(grid: VoxelGrid, object_center, extent: float,
                       patch_count=LOCAL_PATCHES) -> LocalSceneTokens:
    """Crop the cube of side 2*extent around the center, partition x-y into
    patches, and pool occupancy per z-slab (max then mean, interleaved)."""
    if not extent > 0:
        raise ValueError("extent must be positive")
    px, py = (int(c) for c in patch_count)
    if px < 1 or py < 1:
        raise ValueError("patch_count entries must be >= 1")
    center = np.asarray(object_center, dtype=np.float64)
    lo = (center - extent - grid.origin) / grid.resolution
    hi = (center + extent - grid.origin) / grid.resolution
    i0 = np.maximum(np.floor(lo).astype(int), 0)
    i1 = np.minimum(np.ceil(hi).astype(int), np.asarray(grid.dims))
    if (i0 >= i1).any():
        warnings.warn("local region lies fully outside the voxel grid")
        return LocalSceneTokens(np.zeros((px * py, 2)), (px, py))
    sub = grid.occupancy[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]]
    xe = _split_edges(sub.shape[0], px)
    ye = _split_edges(sub.shape[1], py)
    nz = sub.shape[2]
    rows = []
    for a in range(px):
        for b in range(py):
            block = sub[xe[a]:xe[a + 1], ye[b]:ye[b + 1], :]
            if block.size == 0:
                rows.append(np.zeros(2 * nz))
                continue
            mx = block.max(axis=(0, 1)).astype(np.float64)
            mn = block.mean(axis=(0, 1))
            rows.append(np.stack([mx, mn], axis=1).ravel())
    return LocalSceneTokens(np.stack(rows), (px, py))


def _per_frame(arr, n_frames: int, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (n_frames,) + arr.shape)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be (N, 3) or (F, N, 3), got {arr.shape}")
    if arr.shape[0] != n_frames:
        raise ValueError(f"{name} covers {arr.shape[0]} frames, expected {n_frames}")
    return arr


def contact_loss(joints: np.ndarray, object_points,
                 threshold: float = CONTACT_THRESHOLD) -> float:
    """Mean squared nearest-object distance over (joint, frame) pairs that
    come within the threshold; zero when none qualify."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 3 or joints.shape[2] != 3:
        raise ValueError(f"joints must be (F, J, 3), got {joints.shape}")
    pts = _per_frame(object_points, joints.shape[0], "object points")
    d = np.linalg.norm(joints[:, :, None, :] - pts[:, None, :, :], axis=3)
    dmin = d.min(axis=2)
    mask = dmin < threshold
    if not mask.any():
        return 0.0
    return float((dmin[mask] ** 2).mean())


def penetration_loss(body_points, object_points, object_normals) -> float:
    """Mean squared distance to the nearest object point over body samples
    that sit behind that point's outward normal; zero without penetration."""
    body = np.asarray(body_points, dtype=np.float64)
    if body.ndim == 2:
        body = body[None]
    if body.ndim != 3 or body.shape[2] != 3:
        raise ValueError(f"body points must be (F, M, 3), got {body.shape}")
    f = body.shape[0]
    pts = _per_frame(object_points, f, "object points")
    nrm = _per_frame(object_normals, f, "object normals")
    if nrm.shape != pts.shape:
        raise ValueError("object normals shape does not match points")
    sq = []
    for t in range(f):
        index = SpatialIndex(pts[t])
        idx, dist = index.nearest_many(body[t])
        disp = body[t] - pts[t][idx]
        depth = -np.einsum("ij,ij->i", nrm[t][idx], disp)
        if (depth > 0).any():
            sq.append(dist[depth > 0] ** 2)
    if not sq:
        return 0.0
    return float(np.concatenate(sq).mean())


def penetration_set(gen_points, scene: PointCloud) -> np.ndarray:
    """Pairs (i, nearest scene j) where point i lies strictly behind the
    scene point's outward normal; shape (K, 2), ordered by i."""
    if scene.normals is None:
        raise GeometryError("scene cloud must carry normals")
    gen = np.asarray(gen_points, dtype=np.float64)
    if gen.ndim != 2 or gen.shape[1] != 3:
        raise ValueError(f"generated points must be (G, 3), got {gen.shape}")
    idx, _ = SpatialIndex(scene).nearest_many(gen)
    disp = gen - scene.points[idx]
    depth = -np.einsum("ij,ij->i", scene.normals[idx], disp)
    hits = np.nonzero(depth > 0)[0]
    return np.stack([hits, idx[hits]], axis=1).astype(np.int64) if hits.size \
        else np.zeros((0, 2), dtype=np.int64)


def ttp_loss(pairs: np.ndarray, gen_points, scene_points) -> float:
    """Sum of Euclidean distances over the penetration pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return 0.0
    gen = np.asarray(gen_points, dtype=np.float64)
    scn = scene_points.points if isinstance(scene_points, PointCloud) \
        else np.asarray(scene_points, dtype=np.float64)
    return float(np.linalg.norm(gen[pairs[:, 0]] - scn[pairs[:, 1]], axis=1).sum())


def ttp_translation_gradient(pairs: np.ndarray, gen_points, scene_points) -> np.ndarray:
    """d(ttp_loss)/d(rigid translation of the generated points) with the
    pair assignment held fixed: the sum of unit vectors scene -> generated.

    Coincident pairs contribute zero (a valid subgradient at distance 0).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return np.zeros(3)
    gen = np.asarray(gen_points, dtype=np.float64)
    scn = scene_points.points if isinstance(scene_points, PointCloud) \
        else np.asarray(scene_points, dtype=np.float64)
    diff = gen[pairs[:, 0]] - scn[pairs[:, 1]]
    norm = np.linalg.norm(diff, axis=1)
    ok = norm > 0
    return (diff[ok] / norm[ok, None]).sum(axis=0) if ok.any() else np.zeros(3)


def ttp_guidance_step(motion: MotionSequence, trajectory: ObjectTrajectory,
                      object_points, scene: PointCloud, body: BodyProxy,
                      step_size: float = GUIDANCE_STEP):
    """One descent step on the test-time penetration loss.

    Nearest-neighbor assignments are frozen from the input state. The object
    translation takes the step for object-vs-scene pairs; each penetrating
    body sample pushes its carrier joint for body-vs-scene pairs. Returns the
    inputs unchanged when nothing penetrates.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if scene.normals is None:
        raise GeometryError("scene cloud must carry normals")
    obj_local = np.asarray(object_points, dtype=np.float64)
    index = SpatialIndex(scene)

    def pairs_for(pts):
        idx, _ = index.nearest_many(pts)
        depth = -np.einsum("ij,ij->i", scene.normals[idx], pts - scene.points[idx])
        hits = np.nonzero(depth > 0)[0]
        return hits, idx[hits]

    obj_world = trajectory.apply(obj_local)
    joints = motion.joints
    new_trans = trajectory.translations.copy()
    new_joints = joints.copy()
    moved = False
    for t in range(motion.n_frames):
        hits, scene_idx = pairs_for(obj_world[t])
        if hits.size:
            pairs = np.stack([hits, scene_idx], axis=1)
            new_trans[t] -= step_size * ttp_translation_gradient(
                pairs, obj_world[t], scene.points)
            moved = True
        samples, _ = body.surface_samples(joints[t])
        hits, scene_idx = pairs_for(samples)
        if hits.size:
            diff = samples[hits] - scene.points[scene_idx]
            norm = np.linalg.norm(diff, axis=1)
            ok = norm > 0
            grad = np.zeros_like(joints[t])
            np.add.at(grad, body.carriers[hits[ok]], diff[ok] / norm[ok, None])
            new_joints[t] -= step_size * grad
            moved = True
    if not moved:
        return motion, trajectory
    return (motion.with_joints(new_joints),
            ObjectTrajectory(trajectory.rotations, new_trans, trajectory.fps))


def total_loss(a0: np.ndarray, a0_hat: np.ndarray, motion: MotionSequence,
               object_points, object_normals, body: BodyProxy,
               weights: LossWeights | None = None) -> float:
    """Reconstruction + weighted contact and penetration terms."""
    w = weights if weights is not None else LossWeights()
    samples = body.surface_samples_sequence(motion.joints)[0]
    return (diffusion_loss(a0, a0_hat)
            + w.lambda_contact * contact_loss(motion.joints, object_points,
                                              w.contact_threshold)
            + w.lambda_penetration * penetration_loss(samples, object_points,
                                                      object_normals))


def rotation_to_6d(rotation: np.ndarray) -> np.ndarray:
    """First two columns of the rotation matrix, stacked."""
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    return np.concatenate([rot[:, 0], rot[:, 1]])


def rotation_from_6d(values: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two encoded columns back into a rotation.

    Degenerate inputs fall back to fixed axes so that decoding a noisy
    signal always yields a valid rotation.
    """
    v = np.asarray(values, dtype=np.float64).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1 if n1 > 1e-9 else np.array([1.0, 0.0, 0.0])
    a2 = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(a2)
    if n2 > 1e-9:
        b2 = a2 / n2
    else:
        helper = np.array([0.0, 1.0, 0.0]) if abs(b1[1]) < 0.9 \
            else np.array([0.0, 0.0, 1.0])
        b2 = helper - np.dot(b1, helper) * b1
        b2 /= np.linalg.norm(b2)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def signal_width(skeleton: Skeleton) -> int:
    return skeleton.n_joints * 3 + 9


def encode_interaction(motion: MotionSequence,
                       trajectory: ObjectTrajectory) -> np.ndarray:
    """Per-frame rows: flattened joints, object translation, 6D rotation."""
    if motion.n_frames != trajectory.n_frames:
        raise ValueError("motion and trajectory frame counts differ")
    f = motion.n_frames
    rot6 = np.stack([rotation_to_6d(r) for r in trajectory.rotations])
    return np.concatenate([motion.joints.reshape(f, -1),
                           trajectory.translations, rot6], axis=1)


def decode_interaction(signal: np.ndarray, skeleton: Skeleton,
                       fps: float) -> tuple:
    """Inverse of encode_interaction; bone lengths are not repaired here."""
    signal = np.asarray(signal, dtype=np.float64)
    width = signal_width(skeleton)
    if signal.ndim != 2 or signal.shape[1] != width:
        raise ValueError(f"signal must be (F, {width}), got {signal.shape}")
    j = skeleton.n_joints * 3
    joints = signal[:, :j].reshape(-1, skeleton.n_joints, 3)
    trans = signal[:, j:j + 3]
    rots = np.stack([rotation_from_6d(row) for row in signal[:, j + 3:]])
    return MotionSequence(joints, fps), ObjectTrajectory(rots, trans, fps)


def scene_collision_cloud(scene: SceneGraph, exclude_ids=()) -> PointCloud:
    """World-frame points + outward normals of all scene geometry except the
    excluded objects; the cloud the guidance step collides against."""
    exclude = set(exclude_ids)
    pts, nrm = [], []
    for obj in scene.objects:
        if obj.id in exclude:
            continue
        geom = obj.geometry
        if isinstance(geom, TriMesh):
            mesh = geom if geom.vertex_normals is not None \
                else compute_vertex_normals(geom)
            local_pts, local_nrm = mesh.vertices, mesh.vertex_normals
        elif isinstance(geom, PointCloud) and geom.normals is not None:
            local_pts, local_nrm = geom.points, geom.normals
        else:
            raise GeometryError(f"object {obj.id!r} has no normals for collision")
        pts.append(obj.pose.apply(local_pts))
        nrm.append(local_nrm @ obj.pose.rotation.T)
    if not pts:
        raise GeometryError("scene has no collision geometry")
    return PointCloud(np.vstack(pts), np.vstack(nrm))


def scene_voxel_grid(scene: SceneGraph, exclude_ids=(),
                     resolution: float = 0.05) -> VoxelGrid:
    """Occupancy of scene geometry (minus exclusions) over the scene bounds."""
    from .geometry import voxelize

    exclude = set(exclude_ids)
    pts = [obj.world_points() for obj in scene.objects if obj.id not in exclude]
    cloud = np.vstack(pts) if pts else np.zeros((0, 3))
    lo, hi = scene.bounds
    dims = np.maximum(np.ceil((hi - lo) / resolution).astype(int), 1)
    return voxelize(cloud, lo, resolution, tuple(dims))


def interaction_condition(text: str, object_points: np.ndarray,
                          affordance: AffordanceTensor,
                          local: LocalSceneTokens,
                          d: int = DEFAULT_COND_DIM) -> ConditionBundle:
    """Condition tokens ordered (text, object features fused with per-joint
    affordance tracks, local scene patches)."""
    rows = [text_token(text, d)]
    rows.extend(object_tokens(object_points, d))
    fused = affordance.values.max(axis=0)  # (J, F) strongest contact per joint
    rows.extend(_pad_to(track, d) for track in fused)
    rows.extend(_pad_to(tok, d) for tok in local.tokens)
    return ConditionBundle(np.stack(rows), d)


def interaction_training_pair(scene: SceneGraph, target_id: str, seq,
                              skeleton: Skeleton | None = None,
                              d_cond: int = DEFAULT_COND_DIM,
                              extent: float = LOCAL_EXTENT,
                              patch_count=LOCAL_PATCHES,
                              voxel_resolution: float = 0.05) -> tuple:
    """Encode one aligned sequence as a (signal, condition, affordance)
    training triple.

    The condition is assembled exactly as generate_interaction assembles it
    (object points at the placement pose, affordance tracks, local scene
    patches), so a denoiser fit on these pairs can be sampled with the same
    scene and affordance inputs. The affordance is the ground-truth tensor of
    the clip's own hand-object distances.
    """
    from .affordance import affordance_from_motion
    skeleton = skeleton if skeleton is not None else default_skeleton()
    target = scene.object_by_id(target_id)
    obj_pts = target.world_points()
    local_pts = target.local_points()
    hands = seq.motion.joints[:, skeleton.indices(HAND_JOINTS), :]
    aff = affordance_from_motion(seq.trajectory.apply(local_pts), hands)
    grid = scene_voxel_grid(scene, exclude_ids=(target_id,),
                            resolution=voxel_resolution)
    local = local_scene_tokens(grid, obj_pts.mean(axis=0), extent, patch_count)
    cond = interaction_condition(seq.text, obj_pts, aff, local, d_cond)
    return encode_interaction(seq.motion, seq.trajectory), cond, aff


def generate_interaction(scene: SceneGraph, target_id: str,
                         affordance: AffordanceTensor, text: str, denoiser,
                         sched: NoiseSchedule, rng: np.random.Generator,
                         enable_guidance: bool = False,
                         skeleton: Skeleton | None = None, fps: float = 20.0,
                         step_size: float = GUIDANCE_STEP,
                         extent: float = LOCAL_EXTENT,
                         patch_count=LOCAL_PATCHES,
                         voxel_resolution: float = 0.05) -> tuple:
    """Reverse-denoise a (motion, object trajectory) pair for the target.

    Guidance, when enabled, applies one penetration descent step to each
    decoded estimate. The returned motion has bone lengths repaired to the
    skeleton; divergence raises an error naming the reverse step.
    """
    skeleton = skeleton if skeleton is not None else default_skeleton()
    target = scene.object_by_id(target_id)
    obj_pts = target.world_points()
    if affordance.n_points != obj_pts.shape[0]:
        raise ValueError(f"affordance covers {affordance.n_points} points, "
                         f"object has {obj_pts.shape[0]}")
    width = signal_width(skeleton)
    if isinstance(denoiser, TinyDenoiser) and denoiser.d_signal != width:
        raise ValueError(f"denoiser expects width {denoiser.d_signal}, "
                         f"skeleton needs {width}")
    grid = scene_voxel_grid(scene, exclude_ids=(target_id,),
                            resolution=voxel_resolution)
    local = local_scene_tokens(grid, obj_pts.mean(axis=0), extent, patch_count)
    d_cond = denoiser.d_cond if isinstance(denoiser, TinyDenoiser) \
        else DEFAULT_COND_DIM
    cond = interaction_condition(text, obj_pts, affordance, local, d_cond)

    guidance = None
    if enable_guidance:
        collision = scene_collision_cloud(scene, exclude_ids=(target_id,))
        body = BodyProxy(skeleton)
        obj_local = obj_pts - obj_pts.mean(axis=0)

        def guidance(a0_hat, t):
            motion, traj = decode_interaction(a0_hat, skeleton, fps)
            motion, traj = ttp_guidance_step(motion, traj, obj_local,
                                             collision, body, step_size)
            return encode_interaction(motion, traj)

    start = rng.standard_normal((affordance.n_frames, width))
    out = reverse_denoise(start, denoiser, cond, sched, rng, guidance=guidance)
    motion, trajectory = decode_interaction(out, skeleton, fps)
    repaired = repair_bone_lengths(motion.joints, skeleton)
    return MotionSequence(repaired, fps), trajectory
