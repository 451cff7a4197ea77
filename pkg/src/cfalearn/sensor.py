"""Learnable sensor layer: soft channel selection, measurement formation,
temperature annealing, hardening, and entropy diagnostics.

The sensor is a P x P grid of per-pixel logit vectors over C candidate
channels.  During training the selection is the softmax of the logits scaled
by a temperature factor that grows quadratically with the iteration count;
for validation and deployment the selection is hardened to the per-pixel
argmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ContractError(ValueError):
    """Input violates a documented precondition."""


@dataclass
class AnnealSchedule:
    """Quadratic temperature schedule: alpha(t) = 1 + (gamma * t)^2."""

    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractError("gamma must be positive")

    def alpha_at(self, t: int) -> float:
        if t < 0:
            raise ContractError("iteration must be nonnegative")
        return 1.0 + (self.gamma * t) ** 2


@dataclass
class SensorPattern:
    """P x P grid of selection logits over C channels."""

    period: int
    channels: int
    w: Tensor = field(default=None)

    @staticmethod
    def init(period: int, channels: int, seed: int, init_scale: float = 0.01) -> "SensorPattern":
        """Fresh pattern with logits i.i.d. uniform on [-init_scale, init_scale].

        Near-zero logits give a near-uniform soft selection at alpha = 1, so
        the initial mean entropy is ln(C).
        """
        if period < 1 or channels < 2:
            raise ContractError("need period >= 1 and channels >= 2")
        rng = np.random.default_rng(seed)
        w = rng.uniform(-init_scale, init_scale, size=(period, period, channels))
        return SensorPattern(period, channels, Tensor(w, requires_grad=True))


def soft_select(pattern: SensorPattern, alpha: float) -> Tensor:
    """Per-pixel softmax of alpha * w.  Differentiable w.r.t. w.

    Gradients w.r.t. w scale with alpha, which keeps the pattern learnable
    as the selection sharpens.
    """
    if alpha < 1.0:
        raise ContractError("alpha must be >= 1")
    return ad.softmax(ad.scale(pattern.w, alpha))


def harden(pattern: SensorPattern) -> np.ndarray:
    """P x P map of winning channel indices; ties go to the lowest index."""
    return np.argmax(pattern.w.data, axis=-1)


def one_hot(indices: np.ndarray, channels: int) -> np.ndarray:
    """Convert a channel-index map to a one-hot selection grid."""
    out = np.zeros(indices.shape + (channels,), dtype=np.float64)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def measure(selection, x) -> Tensor:
    """Sensor measurements s = <selection, x> per pixel.

    ``selection`` may be the P x P x C pattern-sized grid (tiled periodically
    to cover the image) or already image-sized.  ``x`` is H x W x C or
    batched N x H x W x C.  Differentiable w.r.t. both factors when they are
    tensors.
    """
    sel = selection if isinstance(selection, Tensor) else Tensor(selection)
    xt = x if isinstance(x, Tensor) else Tensor(x)
    h, w = xt.data.shape[-3], xt.data.shape[-2]
    sh, sw, _ = sel.data.shape
    if (sh, sw) != (h, w):
        if h % sh or w % sw:
            raise ad.ShapeError(f"pattern {sh}x{sw} does not tile image {h}x{w}")
        sel = ad.tile_hw(sel, h // sh, w // sw)
    return ad.channel_dot(sel, xt)


def mean_entropy(selection) -> float:
    """Mean over pixels of the per-pixel selection entropy, in nats.

    Each pixel's C values must form a distribution; 0 * ln 0 counts as 0.
    """
    p = selection.data if isinstance(selection, Tensor) else np.asarray(selection, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ContractError("selection values must form per-pixel distributions")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(-terms.sum(axis=-1).mean())
