"""Small trainable denoiser, conditioning tokens, and a non-learned fallback.

The network maps a (tokens, features) signal to a clean estimate through one
cross-attention block (condition tokens attend into the signal) and one
residual MLP. Forward and backward passes are written out by hand in numpy
so the gradients can be checked against finite differences exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .diffusion import NoiseSchedule, diffusion_loss, forward_sample

DEFAULT_COND_DIM = 32

# fixed parameter order used for flattening / checkpoints
_PARAM_KEYS = ("w_in", "b_in", "w_q", "w_k", "w_v", "w1", "b1", "w2", "b2",
               "w_out", "b_out")


class TrainingDivergence(RuntimeError):
    pass


def _pad_to(vec: np.ndarray, d: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size >= d:
        return vec[:d]
    return np.concatenate([vec, np.zeros(d - vec.size)])


def text_token(text: str, d: int = DEFAULT_COND_DIM) -> np.ndarray:
    """Hash-based bag-of-words embedding; stable across runs and processes."""
    v = np.zeros(d)
    for word in text.lower().split():
        h = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
        v[h % d] += 1.0
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def timestep_token(t: int, d: int = DEFAULT_COND_DIM) -> np.ndarray:
    """Sinusoidal embedding of the diffusion step."""
    half = d // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t * freqs
    emb = np.zeros(d)
    emb[0:2 * half:2] = np.sin(ang)
    emb[1:2 * half:2] = np.cos(ang)
    return emb


def object_tokens(points: np.ndarray, d: int = DEFAULT_COND_DIM,
                  max_points: int = 32) -> np.ndarray:
    """Handcrafted object features: subsampled coordinates + summary token."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError("object points must be (N, 3) with N >= 1")
    if pts.shape[0] > max_points:
        idx = np.linspace(0, pts.shape[0] - 1, max_points).round().astype(int)
        pts = pts[idx]
    centroid = pts.mean(axis=0)
    extent = pts.max(axis=0) - pts.min(axis=0)
    rows = [_pad_to(p, d) for p in pts]
    rows.append(_pad_to(np.concatenate([centroid, extent]), d))
    return np.stack(rows)


@dataclass(frozen=True)
class ConditionBundle:
    """Ordered condition tokens; the timestep token is appended per call."""

    static_tokens: np.ndarray  # (m, d)
    d: int = DEFAULT_COND_DIM

    def __post_init__(self):
        tok = np.asarray(self.static_tokens, dtype=np.float64)
        if tok.ndim != 2 or tok.shape[1] != self.d:
            raise ValueError(f"tokens must be (m, {self.d})")
        if not np.isfinite(tok).all():
            raise ValueError("condition tokens contain non-finite values")
        object.__setattr__(self, "static_tokens", tok)

    def tokens(self, t: int) -> np.ndarray:
        return np.vstack([self.static_tokens, timestep_token(t, self.d)])

    @staticmethod
    def build(d: int = DEFAULT_COND_DIM, text: str | None = None,
              points: np.ndarray | None = None,
              extra_tokens=None) -> "ConditionBundle":
        rows = []
        if text is not None:
            rows.append(text_token(text, d))
        if points is not None:
            rows.extend(object_tokens(points, d))
        for tok in (extra_tokens if extra_tokens is not None else []):
            tok = np.asarray(tok, dtype=np.float64)
            if tok.ndim == 1:
                rows.append(_pad_to(tok, d))
            else:
                rows.extend(_pad_to(r, d) for r in tok)
        if not rows:
            rows.append(np.zeros(d))
        return ConditionBundle(np.stack(rows), d)


def _cond_tokens(cond, t: int) -> np.ndarray:
    if isinstance(cond, ConditionBundle):
        return cond.tokens(t)
    return np.asarray(cond, dtype=np.float64)


class TinyDenoiser:
    """Clean-signal predictor with analytic gradients.

    Layers: input projection, one cross-attention block over the condition
    tokens, a residual tanh MLP, output projection. All math is float64.
    """

    def __init__(self, d_signal: int, d_cond: int = DEFAULT_COND_DIM,
                 d_model: int = 32, d_key: int = 16, d_hidden: int = 64,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.d_signal, self.d_cond = d_signal, d_cond
        self.d_model, self.d_key, self.d_hidden = d_model, d_key, d_hidden

        def init(n_in, n_out):
            return rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_in, n_out))

        self.params = {
            "w_in": init(d_signal, d_model), "b_in": np.zeros(d_model),
            "w_q": init(d_model, d_key), "w_k": init(d_cond, d_key),
            "w_v": init(d_cond, d_model),
            "w1": init(d_model, d_hidden), "b1": np.zeros(d_hidden),
            "w2": init(d_hidden, d_model), "b2": np.zeros(d_model),
            "w_out": init(d_model, d_signal), "b_out": np.zeros(d_signal),
        }

    @property
    def spec(self) -> dict:
        return {"d_signal": self.d_signal, "d_cond": self.d_cond,
                "d_model": self.d_model, "d_key": self.d_key,
                "d_hidden": self.d_hidden}

    def __call__(self, a_t: np.ndarray, t: int, cond) -> np.ndarray:
        return self._forward(np.asarray(a_t, dtype=np.float64),
                             _cond_tokens(cond, t))[0]

    def _forward(self, s: np.ndarray, c: np.ndarray):
        p = self.params
        x0 = s @ p["w_in"] + p["b_in"]
        q = x0 @ p["w_q"]
        k = c @ p["w_k"]
        v = c @ p["w_v"]
        scores = q @ k.T / np.sqrt(self.d_key)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=1, keepdims=True)
        x1 = x0 + attn @ v
        h_pre = x1 @ p["w1"] + p["b1"]
        h = np.tanh(h_pre)
        x2 = x1 + h @ p["w2"] + p["b2"]
        out = x2 @ p["w_out"] + p["b_out"]
        cache = (s, c, x0, q, k, v, attn, x1, h, x2)
        return out, cache

    def loss_and_grads(self, a_t: np.ndarray, tokens: np.ndarray,
                       target: np.ndarray):
        """Mean-squared-error loss against the clean target, with gradients."""
        s = np.asarray(a_t, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        out, cache = self._forward(s, np.asarray(tokens, dtype=np.float64))
        (s, c, x0, q, k, v, attn, x1, h, x2) = cache
        p = self.params
        loss = float(np.mean((out - target) ** 2))

        d_out = 2.0 * (out - target) / out.size
        g = {}
        g["w_out"] = x2.T @ d_out
        g["b_out"] = d_out.sum(axis=0)
        d_x2 = d_out @ p["w_out"].T
        g["w2"] = h.T @ d_x2
        g["b2"] = d_x2.sum(axis=0)
        d_h = d_x2 @ p["w2"].T
        d_hpre = d_h * (1.0 - h * h)
        g["w1"] = x1.T @ d_hpre
        g["b1"] = d_hpre.sum(axis=0)
        d_x1 = d_x2 + d_hpre @ p["w1"].T
        d_attn = d_x1 @ v.T
        g["w_v"] = c.T @ (attn.T @ d_x1)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True))
        d_scores /= np.sqrt(self.d_key)
        d_q = d_scores @ k
        d_k = d_scores.T @ q
        g["w_q"] = x0.T @ d_q
        g["w_k"] = c.T @ d_k
        d_x0 = d_x1 + d_q @ p["w_q"].T
        g["w_in"] = s.T @ d_x0
        g["b_in"] = d_x0.sum(axis=0)
        return loss, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_KEYS])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        i = 0
        for key in _PARAM_KEYS:
            shape = self.params[key].shape
            n = int(np.prod(shape))
            self.params[key] = flat[i:i + n].reshape(shape).copy()
            i += n
        if i != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, expected {i}")

    @staticmethod
    def flatten_grads(grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in _PARAM_KEYS])


class SmoothingDenoiser:
    """Non-learned denoiser: low-pass projection along the token axis.

    Rescales the noisy input by 1/sqrt(alpha_bar_t) to undo the forward
    shrinkage, then keeps only the lowest-frequency cosine modes, which is a
    strong smoothness prior for trajectory-like signals.
    """

    def __init__(self, sched: NoiseSchedule, keep_fraction: float = 0.25):
        if not 0.0 < keep_fraction <= 1.0:
            raise ValueError("keep_fraction must be in (0, 1]")
        self.sched = sched
        self.keep_fraction = keep_fraction

    def __call__(self, a_t: np.ndarray, t: int, cond=None) -> np.ndarray:
        a = np.asarray(a_t, dtype=np.float64) / np.sqrt(self.sched.alpha_bar[t])
        n = a.shape[0]
        keep = max(1, int(np.ceil(self.keep_fraction * n)))
        spec = sfft.dct(a, axis=0, norm="ortho")
        spec[keep:] = 0.0
        return sfft.idct(spec, axis=0, norm="ortho")


class Adam:
    def __init__(self, size: int, lr: float = 1e-2, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-2
    seed: int = 0
    d_model: int = 32
    d_key: int = 16
    d_hidden: int = 64


@dataclass
class TrainResult:
    denoiser: TinyDenoiser
    losses: list = field(default_factory=list)

    @property
    def decrease(self) -> float:
        """Fractional drop from the first epoch's loss to the last's."""
        if len(self.losses) < 2 or self.losses[0] == 0.0:
            return 0.0
        return 1.0 - self.losses[-1] / self.losses[0]


def train_denoiser(dataset, sched: NoiseSchedule,
                   config: TrainConfig | None = None,
                   denoiser: TinyDenoiser | None = None) -> TrainResult:
    """Fit the denoiser on (clean signal, condition) pairs.

    Each step draws a random timestep, noises the clean signal, and descends
    the mean-squared error of the clean-signal prediction with Adam.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    a0_first = np.asarray(dataset[0][0], dtype=np.float64)
    if denoiser is None:
        d_cond = dataset[0][1].d if isinstance(dataset[0][1], ConditionBundle) \
            else np.asarray(dataset[0][1]).shape[1]
        denoiser = TinyDenoiser(a0_first.shape[1], d_cond, config.d_model,
                                config.d_key, config.d_hidden, rng)
    flat = denoiser.get_flat()
    opt = Adam(flat.size, lr=config.lr)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for i in order:
            a0, cond = dataset[int(i)]
            a0 = np.asarray(a0, dtype=np.float64)
            t = int(rng.integers(1, sched.steps + 1))
            eps = rng.standard_normal(a0.shape)
            a_t = forward_sample(a0, t, eps, sched)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = denoiser.loss_and_grads(a_t, _cond_tokens(cond, t), a0)
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}, sample {int(i)}, t={t}")
            flat = opt.step(flat, TinyDenoiser.flatten_grads(grads))
            denoiser.set_flat(flat)
            epoch_loss += loss
        losses.append(epoch_loss / len(dataset))
    return TrainResult(denoiser, losses)


def gradient_check(denoiser: TinyDenoiser, a_t: np.ndarray, tokens: np.ndarray,
                   target: np.ndarray, n_coords: int = 100, h: float = 1e-5,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = rng or np.random.default_rng(0)
    _, grads = denoiser.loss_and_grads(a_t, tokens, target)
    analytic = TinyDenoiser.flatten_grads(grads)
    flat = denoiser.get_flat()
    coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    worst = 0.0
    for c in coords:
        c = int(c)
        bump = np.zeros_like(flat)
        bump[c] = h
        denoiser.set_flat(flat + bump)
        up, _ = denoiser.loss_and_grads(a_t, tokens, target)
        denoiser.set_flat(flat - bump)
        dn, _ = denoiser.loss_and_grads(a_t, tokens, target)
        fd = (up - dn) / (2.0 * h)
        scale = max(abs(analytic[c]), abs(fd), 1e-6)
        worst = max(worst, abs(analytic[c] - fd) / scale)
    denoiser.set_flat(flat)
    return worst


def memorization_error(denoiser: TinyDenoiser, dataset, sched: NoiseSchedule,
                       rng: np.random.Generator) -> float:
    """Mean reconstruction MSE over the training items from full noise."""
    from .diffusion import reverse_denoise
    total = 0.0
    for a0, cond in dataset:
        a0 = np.asarray(a0, dtype=np.float64)
        a_t = rng.standard_normal(a0.shape)
        rec = reverse_denoise(a_t, denoiser, cond, sched, rng)
        total += diffusion_loss(a0, rec)
    return total / len(dataset)
