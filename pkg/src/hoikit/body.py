"""Skeleton definition and the capsule body proxy.

The proxy attaches one capsule per bone and carries a fixed pattern of
surface sample points with outward normals; it stands in for a body mesh in
every penetration and distance computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINT_NAMES = (
    "pelvis", "spine", "chest", "neck", "head",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
    "left_shoulder", "left_elbow", "left_wrist", "left_hand",
    "right_shoulder", "right_elbow", "right_wrist", "right_hand",
)
PARENTS = (-1, 0, 1, 2, 3,
           0, 5, 6, 7,
           0, 9, 10, 11,
           2, 13, 14, 15,
           2, 17, 18, 19)

# canonical standing pose, feet just above z=0, +x facing
REST_POSE = np.array([
    [0.00, 0.00, 0.95],    # pelvis
    [0.00, 0.00, 1.10],    # spine
    [0.00, 0.00, 1.25],    # chest
    [0.00, 0.00, 1.40],    # neck
    [0.00, 0.00, 1.55],    # head
    [0.00, 0.09, 0.90],    # left_hip
    [0.00, 0.10, 0.50],    # left_knee
    [0.00, 0.10, 0.10],    # left_ankle
    [0.12, 0.10, 0.045],   # left_foot
    [0.00, -0.09, 0.90],   # right_hip
    [0.00, -0.10, 0.50],   # right_knee
    [0.00, -0.10, 0.10],   # right_ankle
    [0.12, -0.10, 0.045],  # right_foot
    [0.00, 0.18, 1.35],    # left_shoulder
    [0.00, 0.21, 1.08],    # left_elbow
    [0.00, 0.22, 0.83],    # left_wrist
    [0.00, 0.22, 0.74],    # left_hand
    [0.00, -0.18, 1.35],   # right_shoulder
    [0.00, -0.21, 1.08],   # right_elbow
    [0.00, -0.22, 0.83],   # right_wrist
    [0.00, -0.22, 0.74],   # right_hand
], dtype=np.float64)

# capsule radius per bone, keyed by child joint name
CAPSULE_RADII = {
    "spine": 0.10, "chest": 0.10, "neck": 0.06, "head": 0.075,
    "left_hip": 0.07, "left_knee": 0.065, "left_ankle": 0.05, "left_foot": 0.04,
    "right_hip": 0.07, "right_knee": 0.065, "right_ankle": 0.05, "right_foot": 0.04,
    "left_shoulder": 0.05, "left_elbow": 0.042, "left_wrist": 0.036, "left_hand": 0.032,
    "right_shoulder": 0.05, "right_elbow": 0.042, "right_wrist": 0.036, "right_hand": 0.032,
}

HAND_JOINTS = ("left_wrist", "left_hand", "right_wrist", "right_hand")
LEFT_HAND_JOINTS = ("left_wrist", "left_hand")
RIGHT_HAND_JOINTS = ("right_wrist", "right_hand")
FOOT_JOINTS = ("left_foot", "right_foot")


@dataclass(frozen=True)
class Skeleton:
    names: tuple
    parents: tuple
    rest_pose: np.ndarray
    capsule_radii: np.ndarray  # per bone, bone b = (parents[child], child)

    def __post_init__(self):
        if len(self.names) != len(self.parents):
            raise ValueError("names and parents length mismatch")
        for child, parent in enumerate(self.parents):
            if parent >= child:
                raise ValueError("parents must precede children in joint order")
        object.__setattr__(self, "rest_pose", np.asarray(self.rest_pose, dtype=np.float64))

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def bones(self) -> list:
        """(parent, child) joint-index pairs, one per non-root joint."""
        return [(p, c) for c, p in enumerate(self.parents) if p >= 0]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def indices(self, names) -> list:
        return [self.names.index(n) for n in names]

    def bone_lengths(self, joints: np.ndarray) -> np.ndarray:
        """Bone lengths for (..., J, 3) joint positions -> (..., B)."""
        joints = np.asarray(joints, dtype=np.float64)
        pairs = np.asarray(self.bones)
        vec = joints[..., pairs[:, 1], :] - joints[..., pairs[:, 0], :]
        return np.linalg.norm(vec, axis=-1)

    def rest_bone_lengths(self) -> np.ndarray:
        return self.bone_lengths(self.rest_pose)

    def rigidity_drift(self, joints: np.ndarray) -> float:
        """Max per-bone deviation from that bone's median length over frames."""
        lengths = self.bone_lengths(joints)  # (F, B)
        med = np.median(lengths, axis=0)
        return float(np.abs(lengths - med).max()) if lengths.size else 0.0


def default_skeleton() -> Skeleton:
    radii = np.array([CAPSULE_RADII[JOINT_NAMES[c]] for c, p in enumerate(PARENTS) if p >= 0])
    return Skeleton(JOINT_NAMES, PARENTS, REST_POSE, radii)


def _bone_frame(axis: np.ndarray):
    """Deterministic orthonormal frame (e1, e2) perpendicular to axis."""
    n = np.linalg.norm(axis)
    a = axis / n if n > 1e-9 else np.array([0.0, 0.0, 1.0])
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - np.dot(ref, a) * a
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return a, e1, e2


# fixed per-capsule sample pattern entries: (kind, axial fraction or end
# flag, azimuth angle, polar angle for cap rings)
_N_AROUND = 6
_SIDE_ROWS = (0.25, 0.75)
_CAP_ANGLES = (0.0, np.radians(55.0))


def _capsule_pattern():
    pattern = []
    for u in _SIDE_ROWS:
        for k in range(_N_AROUND):
            pattern.append(("side", u, 2 * np.pi * k / _N_AROUND, 0.0))
    for end in (-1, +1):
        pattern.append(("pole", end, 0.0, 0.0))
        for k in range(_N_AROUND):
            pattern.append(("cap", end, 2 * np.pi * k / _N_AROUND, _CAP_ANGLES[1]))
    return pattern


_PATTERN = _capsule_pattern()
SAMPLES_PER_CAPSULE = len(_PATTERN)


class BodyProxy:
    """Capsule-per-bone body with a fixed surface sample pattern.

    Samples move rigidly with the bone endpoints; each sample has a carrier
    joint (the nearer bone endpoint) used when corrections are applied.
    """

    def __init__(self, skeleton: Skeleton | None = None, inflate: float = 0.0):
        self.skeleton = skeleton or default_skeleton()
        self.inflate = float(inflate)
        self._bones = self.skeleton.bones
        carriers = []
        for p, c in self._bones:
            for kind, a, theta, phi in _PATTERN:
                if kind == "side":
                    carriers.append(p if a <= 0.5 else c)
                else:
                    carriers.append(p if a < 0 else c)
        self.carriers = np.asarray(carriers, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return len(self._bones) * SAMPLES_PER_CAPSULE

    def surface_samples(self, joints_frame: np.ndarray):
        """Sample points and outward normals for one frame of joints.

        Returns (points (V, 3), normals (V, 3)); V == n_samples.
        """
        joints_frame = np.asarray(joints_frame, dtype=np.float64)
        pts = np.empty((self.n_samples, 3))
        nrm = np.empty((self.n_samples, 3))
        i = 0
        for (p, c), r in zip(self._bones, self.skeleton.capsule_radii):
            r = r + self.inflate
            a0, a1 = joints_frame[p], joints_frame[c]
            axis, e1, e2 = _bone_frame(a1 - a0)
            for kind, a, theta, phi in _PATTERN:
                if kind == "side":
                    radial = np.cos(theta) * e1 + np.sin(theta) * e2
                    pts[i] = a0 + a * (a1 - a0) + r * radial
                    nrm[i] = radial
                elif kind == "pole":
                    end = a0 if a < 0 else a1
                    d = -axis if a < 0 else axis
                    pts[i] = end + r * d
                    nrm[i] = d
                else:  # cap ring
                    end = a0 if a < 0 else a1
                    d = -axis if a < 0 else axis
                    radial = np.cos(theta) * e1 + np.sin(theta) * e2
                    outward = np.cos(phi) * d + np.sin(phi) * radial
                    pts[i] = end + r * outward
                    nrm[i] = outward
                i += 1
        return pts, nrm

    def surface_samples_sequence(self, joints: np.ndarray):
        """Per-frame samples for (F, J, 3) joints -> ((F, V, 3), (F, V, 3))."""
        joints = np.asarray(joints, dtype=np.float64)
        pts = np.empty((joints.shape[0], self.n_samples, 3))
        nrm = np.empty_like(pts)
        for f in range(joints.shape[0]):
            pts[f], nrm[f] = self.surface_samples(joints[f])
        return pts, nrm


def repair_bone_lengths(joints: np.ndarray, skeleton: Skeleton,
                        reference: np.ndarray | None = None) -> np.ndarray:
    """Renormalize every bone to its reference length, root outward.

    Keeps each bone's direction; reference defaults to the skeleton rest pose.
    """
    joints = np.array(joints, dtype=np.float64)
    ref = skeleton.rest_bone_lengths() if reference is None else np.asarray(reference)
    single = joints.ndim == 2
    frames = joints[None] if single else joints
    out = frames.copy()
    for b, (p, c) in enumerate(skeleton.bones):
        vec = out[:, c] - out[:, p]
        norm = np.linalg.norm(vec, axis=1, keepdims=True)
        norm = np.where(norm < 1e-12, 1.0, norm)
        out[:, c] = out[:, p] + vec / norm * ref[b]
    return out[0] if single else out


def arm_chain_to_target(shoulder, target, l1: float, l2: float, l3: float,
                        bend_dir) -> tuple:
    """Analytic 3-joint arm solve: place the hand tip at (or toward) target.

    Bone lengths are preserved exactly; if the target is out of reach the
    chain extends toward it. Returns (elbow, wrist, hand).
    """
    s = np.asarray(shoulder, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    d = g - s
    dist = np.linalg.norm(d)
    dhat = d / dist if dist > 1e-9 else np.array([1.0, 0.0, 0.0])
    w = g - l3 * dhat
    r = np.linalg.norm(w - s)
    r_min, r_max = abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6
    r_c = min(max(r, r_min), r_max)
    ehat = (w - s) / r if r > 1e-9 else dhat
    w = s + ehat * r_c
    a = (r_c * r_c + l1 * l1 - l2 * l2) / (2.0 * r_c)
    h = np.sqrt(max(l1 * l1 - a * a, 0.0))
    b = np.asarray(bend_dir, dtype=np.float64)
    b_perp = b - np.dot(b, ehat) * ehat
    bn = np.linalg.norm(b_perp)
    if bn < 1e-9:
        _, e1, _ = _bone_frame(ehat)
        b_perp, bn = e1, 1.0
    elbow = s + a * ehat + h * (b_perp / bn)
    hand = w + l3 * (g - w) / np.linalg.norm(g - w) if np.linalg.norm(g - w) > 1e-9 else w + l3 * dhat
    return elbow, w, hand
