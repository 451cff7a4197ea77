"""Bifurcated reconstruction network.

Each P x P output patch is reconstructed from the 3P x 3P measurement window
centered on it.  Two paths both emit P x P x 3K values:

* a multiplicative path: a bias-free fully-connected layer applied in the
  log domain (so its outputs are products of input-pixel powers), followed
  by an independent 3K x 3K linear mix at each of the P*P locations, giving
  K candidate values per output color intensity;
* a gating path: two valid convolutions (P x P kernel with stride P, then
  3 x 3) with relu, followed by a fully-connected layer, giving one gate per
  candidate.

The final estimate per pixel and color is the gated sum over the K
candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class NetParams:
    """All weights of the reconstruction network."""

    P: int
    K: int
    F: int
    w_log: Tensor      # (3P*3P) x (P*P*3K), no bias
    w_mix: Tensor      # P*P blocks of 3K x 3K
    conv1_k: Tensor    # P x P x 1 x F
    conv1_b: Tensor    # F
    conv2_k: Tensor    # 3 x 3 x F x F
    conv2_b: Tensor    # F
    w_gate: Tensor     # F x (P*P*3K)
    gate_b: Tensor     # P*P*3K
    gate_softmax: bool = False  # optional softmax over the K gates per group

    def parameters(self):
        """Trainable tensors in a fixed order."""
        return [self.w_log, self.w_mix, self.conv1_k, self.conv1_b,
                self.conv2_k, self.conv2_b, self.w_gate, self.gate_b]

    def state_arrays(self):
        return {
            "w_log": self.w_log.data, "w_mix": self.w_mix.data,
            "conv1_k": self.conv1_k.data, "conv1_b": self.conv1_b.data,
            "conv2_k": self.conv2_k.data, "conv2_b": self.conv2_b.data,
            "w_gate": self.w_gate.data, "gate_b": self.gate_b.data,
        }


@dataclass
class ReconOutput:
    y_hat: Tensor      # ... x P x P x 3
    f: Tensor          # ... x P x P x 3K  (candidate values)
    lam: Tensor        # ... x P x P x 3K  (gates)


def init_params(P: int, K: int, F: int, seed: int, gate_softmax: bool = False,
                warm_start: bool = False) -> NetParams:
    """Deterministic fan-in-scaled Gaussian init (std = 1/sqrt(fan_in)), zero biases.

    With ``warm_start`` the multiplicative path starts at the identity: each
    output pixel's candidates copy that pixel's own measurement (one-hot
    log-weights, near-identity mix, gates summing to 1), so the network's
    initial prediction is the mosaic value replicated across color channels.
    Starting from this "copy" solution instead of noise removes the long
    plateau where SGD must first discover site-selection structure in the
    wide log-domain layer, at the cost of biasing the solution toward the
    identity basin.
    """
    if min(P, K, F) < 1:
        raise ValueError("P, K, F must all be >= 1")
    rng = np.random.default_rng(seed)

    def g(shape, fan_in, scale=1.0):
        return Tensor(rng.normal(0.0, scale / np.sqrt(fan_in), size=shape), requires_grad=True)

    d_in = 9 * P * P
    d_out = 3 * K * P * P
    # The log-domain inputs to this layer are far from unit scale (log of
    # values near the floor is strongly negative), so a plain 1/sqrt(fan)
    # init would put the exponentiated features orders of magnitude off.
    # Damping keeps the initial candidates near exp(0) = 1.
    # draw order is part of the format: identical seeds must keep producing
    # identical cold-start weights
    w_log = g((d_in, d_out), d_in, scale=0.1)
    w_mix = g((P * P, 3 * K, 3 * K), 3 * K)
    conv1_k = g((P, P, 1, F), P * P)
    conv2_k = g((3, 3, F, F), 9 * F)
    w_gate = g((F, d_out), F)
    gate_b = Tensor(np.zeros(d_out), requires_grad=True)
    if warm_start:
        for i in range(P):
            site = np.arange(P) + (P + i) * 3 * P + P
            for j in range(P):
                loc = i * P + j
                w_log.data[site[j], loc * 3 * K:(loc + 1) * 3 * K] += 1.0
        w_mix.data *= 0.2
        w_mix.data += np.eye(3 * K)
        # damp the conv path's contribution to the gates so the constant
        # 1/K bias dominates and the initial prediction really is the copy
        w_gate.data *= 0.1
        gate_b.data += 1.0 / K
    return NetParams(
        P=P, K=K, F=F,
        w_log=w_log,
        w_mix=w_mix,
        conv1_k=conv1_k,
        conv1_b=Tensor(np.zeros(F), requires_grad=True),
        conv2_k=conv2_k,
        conv2_b=Tensor(np.zeros(F), requires_grad=True),
        w_gate=w_gate,
        gate_b=gate_b,
        gate_softmax=gate_softmax,
    )


def _batched(s_patch) -> tuple[Tensor, bool]:
    t = s_patch if isinstance(s_patch, Tensor) else Tensor(s_patch)
    if t.data.ndim == 2:
        return ad.reshape(t, (1,) + t.data.shape), True
    if t.data.ndim == 3:
        return t, False
    raise ad.ShapeError("expected a 3Px3P patch or a batch of them")


def path_multiplicative(s_patch, params: NetParams) -> Tensor:
    """Candidate values f: location-wise mix of exponentiated log-domain features.

    Input values must be strictly positive (the data pipeline clamps at its
    floor before patches reach the network).
    """
    t, squeeze = _batched(s_patch)
    P, K = params.P, params.K
    n = t.data.shape[0]
    flat = ad.reshape(t, (n, 9 * P * P))
    feats = ad.exp(ad.matmul(ad.log(flat), params.w_log))
    mixed = ad.location_mix(ad.reshape(feats, (n, P * P, 3 * K)), params.w_mix)
    out = ad.reshape(mixed, (n, P, P, 3 * K))
    return ad.reshape(out, (P, P, 3 * K)) if squeeze else out


def path_gating(s_patch, params: NetParams) -> Tensor:
    """Gate values lambda from the convolutional path."""
    t, squeeze = _batched(s_patch)
    P, K, F = params.P, params.K, params.F
    n = t.data.shape[0]
    img = ad.reshape(t, (n, 3 * P, 3 * P, 1))
    h = ad.relu(ad.bias_add(ad.conv2d(img, params.conv1_k, stride=P), params.conv1_b))
    h = ad.relu(ad.bias_add(ad.conv2d(h, params.conv2_k, stride=1), params.conv2_b))
    h = ad.reshape(h, (n, F))
    lam = ad.bias_add(ad.matmul(h, params.w_gate), params.gate_b)
    lam = ad.reshape(lam, (n, P, P, 3 * K))
    if params.gate_softmax:
        lam = ad.reshape(lam, (n, P, P, 3, K))
        lam = ad.softmax(lam)
        lam = ad.reshape(lam, (n, P, P, 3 * K))
    return ad.reshape(lam, (P, P, 3 * K)) if squeeze else lam


def combine(f: Tensor, lam: Tensor) -> Tensor:
    """Gated sum over the K candidates per (pixel, color) group.

    The last axis is laid out color-major: 3 contiguous groups of K.
    """
    return ad.group_sum(ad.mul(lam, f), groups=3)


def forward(s_patch, params: NetParams) -> ReconOutput:
    """Full reconstruction of P x P x 3 output(s) from 3P x 3P measurement window(s)."""
    f = path_multiplicative(s_patch, params)
    lam = path_gating(s_patch, params)
    return ReconOutput(y_hat=combine(f, lam), f=f, lam=lam)
