"""Hand-object joint affordance: exact computation and conditional generation.

The affordance tensor A has shape (points N, hand joints J, frames F). The
chain is distance map -> exponential contact likelihood -> thresholded
rescale; engagement per hand falls out of where A is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import ConditionBundle, TinyDenoiser
from .diffusion import NoiseSchedule, reverse_denoise

DEFAULT_SIGMA = 0.05
DEFAULT_TAU = 0.5


def _per_frame_points(points: np.ndarray, n_frames: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 2:
        pts = np.broadcast_to(pts, (n_frames,) + pts.shape)
    if pts.ndim != 3 or pts.shape[2] != 3 or pts.shape[1] < 1:
        raise ValueError(f"object points must be (N, 3) or (F, N, 3), got {pts.shape}")
    if pts.shape[0] != n_frames:
        raise ValueError(f"object points cover {pts.shape[0]} frames, joints {n_frames}")
    return pts


def distance_map(object_points: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Pairwise point-joint Euclidean distances, shape (N, J, F).

    object_points: (N, 3) static or (F, N, 3) already moved per frame;
    joints: (F, J, 3) world hand-joint positions.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim == 2:
        joints = joints[None]
    if joints.ndim != 3 or joints.shape[2] != 3:
        raise ValueError(f"joints must be (F, J, 3), got {joints.shape}")
    pts = _per_frame_points(object_points, joints.shape[0])
    if not (np.isfinite(pts).all() and np.isfinite(joints).all()):
        raise ValueError("non-finite coordinates")
    diff = pts[:, :, None, :] - joints[:, None, :, :]
    return np.transpose(np.linalg.norm(diff, axis=3), (1, 2, 0))


def contact_likelihood(d: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """C = exp(-d / (2 sigma^2)); 1 at contact, decaying with distance."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(d, dtype=np.float64)
    if (d < 0).any():
        raise ValueError("distances must be nonnegative")
    return np.exp(-d / (2.0 * sigma * sigma))


def threshold_affordance(c: np.ndarray, tau: float = DEFAULT_TAU,
                         sigma: float = DEFAULT_SIGMA) -> "AffordanceTensor":
    """A = 1[C > tau] * (C - tau) / (1 - tau)."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    c = np.asarray(c, dtype=np.float64)
    values = np.where(c > tau, (c - tau) / (1.0 - tau), 0.0)
    return AffordanceTensor(values, sigma, tau)


def engagement_distance(sigma: float = DEFAULT_SIGMA,
                        tau: float = DEFAULT_TAU) -> float:
    """Distance below which A becomes positive: d < 2 sigma^2 ln(1/tau)."""
    return 2.0 * sigma * sigma * float(np.log(1.0 / tau))


@dataclass(frozen=True)
class AffordanceTensor:
    """Values in [0, 1] over (point, hand joint, frame) plus its parameters."""

    values: np.ndarray
    sigma: float = DEFAULT_SIGMA
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"affordance must be (N, J, F), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("affordance contains non-finite values")
        if (v < 0.0).any() or (v > 1.0).any():
            raise ValueError("affordance values must lie in [0, 1]")
        if not 0.0 < self.tau < 1.0 or not self.sigma > 0:
            raise ValueError("sigma must be positive and tau in (0, 1)")
        object.__setattr__(self, "values", v)

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def n_joints(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]

    def to_signal(self) -> np.ndarray:
        """(N, J*F) layout used as the diffusion signal."""
        return self.values.reshape(self.n_points, -1)

    @staticmethod
    def from_signal(signal: np.ndarray, n_joints: int, sigma: float = DEFAULT_SIGMA,
                    tau: float = DEFAULT_TAU) -> "AffordanceTensor":
        signal = np.asarray(signal, dtype=np.float64)
        n, jf = signal.shape
        if jf % n_joints:
            raise ValueError(f"signal width {jf} not divisible by {n_joints} joints")
        return AffordanceTensor(signal.reshape(n, n_joints, jf // n_joints), sigma, tau)


def affordance_from_motion(object_points, hand_joints, sigma: float = DEFAULT_SIGMA,
                           tau: float = DEFAULT_TAU) -> AffordanceTensor:
    """Ground-truth affordance for an aligned clip."""
    d = distance_map(object_points, hand_joints)
    return threshold_affordance(contact_likelihood(d, sigma), tau, sigma)


@dataclass(frozen=True)
class HandEngagement:
    """Per-frame engagement flags for the two hands."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=bool)
        right = np.asarray(self.right, dtype=bool)
        if left.shape != right.shape or left.ndim != 1:
            raise ValueError("left/right must be equal-length 1-D masks")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def two_handed(self) -> bool:
        return bool((self.left & self.right).any())

    @property
    def mode(self) -> str:
        if self.two_handed:
            return "two_handed"
        if self.left.any() or self.right.any():
            return "one_handed"
        return "none"


def hand_engagement(aff: AffordanceTensor, left_joints, right_joints) -> HandEngagement:
    """Engaged iff any of the hand's joints has positive affordance that frame."""
    left = np.asarray(left_joints, dtype=int)
    right = np.asarray(right_joints, dtype=int)
    if np.intersect1d(left, right).size:
        raise ValueError("hand joint partitions overlap")
    all_idx = np.concatenate([left, right])
    if all_idx.size and (all_idx.min() < 0 or all_idx.max() >= aff.n_joints):
        raise ValueError("hand joint index out of range")
    v = aff.values
    return HandEngagement((v[:, left, :] > 0).any(axis=(0, 1)),
                          (v[:, right, :] > 0).any(axis=(0, 1)))


def generate_affordance(object_points: np.ndarray, text: str, denoiser,
                        sched: NoiseSchedule, rng: np.random.Generator,
                        n_joints: int = 4, n_frames: int = 16,
                        sigma: float = DEFAULT_SIGMA, tau: float = DEFAULT_TAU,
                        cond: ConditionBundle | None = None) -> AffordanceTensor:
    """Sample an affordance tensor conditioned on the object and sentence."""
    pts = np.asarray(object_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("object points must be (N, 3)")
    width = n_joints * n_frames
    if isinstance(denoiser, TinyDenoiser) and denoiser.d_signal != width:
        raise ValueError(f"denoiser expects width {denoiser.d_signal}, "
                         f"requested {n_joints} joints x {n_frames} frames")
    if cond is None:
        d_cond = denoiser.d_cond if isinstance(denoiser, TinyDenoiser) else None
        kwargs = {} if d_cond is None else {"d": d_cond}
        cond = ConditionBundle.build(text=text, points=pts, **kwargs)
    start = rng.standard_normal((pts.shape[0], width))
    out = reverse_denoise(start, denoiser, cond, sched, rng)
    return AffordanceTensor.from_signal(np.clip(out, 0.0, 1.0), n_joints, sigma, tau)
