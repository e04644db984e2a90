"""Data types for human motion and rigid object trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ROTATION_TOL, TriMesh

DEFAULT_FPS = 20.0
RIGIDITY_TOL = 1e-3


@dataclass(frozen=True)
class MotionSequence:
    """World-space joint positions over frames, (F, J, 3).

    Rigidity is not enforced at construction: intermediate editing stages
    (height shifts, inpainted repairs) stretch bones on purpose. Final
    outputs are checked with Skeleton.rigidity_drift / repair_bone_lengths.
    """

    joints: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 3 or joints.shape[2] != 3 or joints.shape[0] < 1:
            raise ValueError(f"joints must be (F, J, 3) with F >= 1, got {joints.shape}")
        if not np.isfinite(joints).all():
            raise ValueError("joints contain non-finite values")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "joints", joints)

    @property
    def n_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]

    def root_positions(self) -> np.ndarray:
        return self.joints[:, 0]

    def with_joints(self, joints: np.ndarray) -> "MotionSequence":
        return replace(self, joints=joints)


@dataclass(frozen=True)
class ObjectTrajectory:
    """Per-frame rigid transform of one object: rotations (F, 3, 3), translations (F, 3)."""

    rotations: np.ndarray
    translations: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=np.float64)
        tra = np.asarray(self.translations, dtype=np.float64)
        if rot.ndim != 3 or rot.shape[1:] != (3, 3):
            raise ValueError(f"rotations must be (F, 3, 3), got {rot.shape}")
        if tra.shape != (rot.shape[0], 3):
            raise ValueError("translations must be (F, 3) matching rotations")
        if not (np.isfinite(rot).all() and np.isfinite(tra).all()):
            raise ValueError("trajectory contains non-finite values")
        eye = np.eye(3)
        for f in range(rot.shape[0]):
            r = rot[f]
            if (np.abs(r.T @ r - eye).max() > ROTATION_TOL
                    or abs(np.linalg.det(r) - 1.0) > ROTATION_TOL):
                raise ValueError(f"rotation at frame {f} is not orthonormal")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translations", tra)

    @property
    def n_frames(self) -> int:
        return self.rotations.shape[0]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform object-local points per frame -> (F, N, 3)."""
        points = np.asarray(points, dtype=np.float64)
        return np.einsum("fij,nj->fni", self.rotations, points) + self.translations[:, None]

    @staticmethod
    def identity(n_frames: int, fps: float = DEFAULT_FPS) -> "ObjectTrajectory":
        return ObjectTrajectory(np.tile(np.eye(3), (n_frames, 1, 1)),
                                np.zeros((n_frames, 3)), fps)

    @staticmethod
    def still(transform, n_frames: int, fps: float = DEFAULT_FPS) -> "ObjectTrajectory":
        """Constant trajectory holding one rigid transform."""
        return ObjectTrajectory(np.tile(transform.rotation, (n_frames, 1, 1)),
                                np.tile(transform.translation, (n_frames, 1)), fps)


@dataclass(frozen=True)
class HOISequence:
    """One aligned human-object clip plus its provenance fields."""

    motion: MotionSequence
    trajectory: ObjectTrajectory
    object_mesh: TriMesh
    text: str
    contact_frame: int = -1
    release_frame: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.motion.n_frames != self.trajectory.n_frames:
            raise ValueError("motion and trajectory frame counts differ")


def frame_range_valid(seq: HOISequence) -> bool:
    c, r = seq.contact_frame, seq.release_frame
    return 0 <= c <= r < seq.motion.n_frames
