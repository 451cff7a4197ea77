"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Supplies exactly the operations the sensor layer and the bifurcated
reconstruction network need: matmul, valid-geometry conv2d, a handful of
elementwise ops, softmax, and a mean-squared-error loss.  Everything is
float64 and single-threaded per graph; gradient accumulation follows a
single deterministic reverse-topological order so that replaying a graph
with identical inputs is bit-identical.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Operand values lie outside an operation's domain (e.g. log of <= 0)."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (e.g. backward from a non-scalar)."""


# When True, every op output is checked for NaN/Inf.  Off by default so the
# trainer's divergence guard can observe a non-finite loss instead of dying
# mid-graph.
DEBUG_CHECK_FINITE = False

_node_counter = itertools.count()


class Tensor:
    """A dense float64 array with optional gradient tracking.

    Tensors created by ops hold references to their parents and a backward
    closure; `backward()` on a scalar loss propagates gradients to every
    reachable leaf with ``requires_grad=True``.  Data is immutable by
    convention after creation except for in-place parameter updates done by
    the trainer between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not _parents:
            if not np.all(np.isfinite(arr)):
                raise DomainError("tensor data must be finite")
        elif DEBUG_CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise DomainError("non-finite op output")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"

    def _accumulate(self, g, own=False):
        # own=True: g is freshly allocated by the caller and may be stored
        # without a defensive copy
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable requires_grad leaf.

    The loss must be scalar.  Nodes are visited in a single deterministic
    reverse-topological order; gradients of non-parameter intermediates are
    freed as soon as they have been consumed.
    """
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")

    # Iterative DFS; parents are stored in fixed tuple order, so the
    # resulting topological order is deterministic.
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if not node.requires_grad and node._backward is not None:
            node.grad = None


# ---------------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _backward=None)

    def _bwd(g):
        a._accumulate(g @ b.data.T, own=True)
        b._accumulate(a.data.T @ g, own=True)

    out._backward = _bwd
    return out


def _conv_windows(x, k, stride):
    n, h, w, c = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    s = x.strides
    return as_strided(
        x, (n, ho, wo, k, k, c),
        (s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
    )


def conv2d(x: Tensor, kernels: Tensor, stride: int) -> Tensor:
    """Valid (unpadded) cross-correlation.

    ``x`` is H x W x Cin or batched N x H x W x Cin; ``kernels`` is
    k x k x Cin x Cout.  (H - k) and (W - k) must divide ``stride`` exactly.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv2d expects HxWxC (or NxHxWxC) input and kxkxCinxCout kernels")
    n, h, w, cin = xd.shape
    k, k2, kcin, cout = kernels.data.shape
    if k != k2 or kcin != cin:
        raise ShapeError(f"kernel shape {kernels.data.shape} incompatible with input {xd.shape}")
    if h < k or w < k or (h - k) % stride or (w - k) % stride:
        raise ShapeError(f"geometry {h}x{w} with kernel {k}, stride {stride} does not divide")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    # im2col: windows flattened to rows so both passes are BLAS matmuls
    wmat = np.ascontiguousarray(_conv_windows(xd, k, stride)).reshape(n * ho * wo, k * k * cin)
    kmat = kernels.data.reshape(k * k * cin, cout)
    out_d = (wmat @ kmat).reshape(n, ho, wo, cout)
    out = Tensor(out_d[0] if squeeze else out_d, _parents=(x, kernels), _backward=None)

    def _bwd(g):
        gd = (g[None] if squeeze else g).reshape(n * ho * wo, cout)
        kernels._accumulate((wmat.T @ gd).reshape(k, k, cin, cout), own=True)
        contrib = (gd @ kmat.T).reshape(n, ho, wo, k, k, cin)
        gx = np.zeros_like(xd)
        for i in range(k):
            for j in range(k):
                gx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += contrib[:, :, :, i, j]
        x._accumulate(gx[0] if squeeze else gx, own=True)

    out._backward = _bwd
    return out


def _unary(x, fn, dfn):
    x = _as_tensor(x)
    out = Tensor(fn(x.data), _parents=(x,), _backward=None)

    def _bwd(g):
        x._accumulate(g * dfn(x.data, out.data), own=True)

    out._backward = _bwd
    return out


def exp(x: Tensor) -> Tensor:
    return _unary(x, np.exp, lambda xd, od: od)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    return _unary(x, np.log, lambda xd, od: 1.0 / xd)


def relu(x: Tensor) -> Tensor:
    # gradient is 0 at exactly 0 (fixed for reproducibility)
    return _unary(x, lambda d: np.maximum(d, 0.0), lambda xd, od: (xd > 0).astype(np.float64))


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname} requires equal shapes, got {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b), _backward=None)

    def _bwd(g):
        a._accumulate(g)
        b._accumulate(g)

    out._backward = _bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b), _backward=None)

    def _bwd(g):
        a._accumulate(g * b.data, own=True)
        b._accumulate(g * a.data, own=True)

    out._backward = _bwd
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _unary(x, lambda d: d * c, lambda xd, od: c)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias vector along the last axis."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"bias shape {b.data.shape} incompatible with {x.data.shape}")
    out = Tensor(x.data + b.data, _parents=(x, b), _backward=None)

    def _bwd(g):
        x._accumulate(g)
        b._accumulate(g.reshape(-1, b.data.shape[0]).sum(axis=0), own=True)

    out._backward = _bwd
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape), _parents=(x,), _backward=None)

    def _bwd(g):
        x._accumulate(g.reshape(x.data.shape))

    out._backward = _bwd
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, _parents=(x,), _backward=None)

    def _bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        x._accumulate(s * (g - dot), own=True)

    out._backward = _bwd
    return out


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.array(x.data.sum()), _parents=(x,), _backward=None)

    def _bwd(g):
        x._accumulate(np.broadcast_to(g, x.data.shape).astype(np.float64), own=True)

    out._backward = _bwd
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    pred = _as_tensor(pred)
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != tdata.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.data.shape} vs {tdata.shape}")
    diff = pred.data - tdata
    out = Tensor(np.array(np.mean(diff * diff)), _parents=(pred,), _backward=None)

    def _bwd(g):
        pred._accumulate(g * 2.0 * diff / diff.size, own=True)

    out._backward = _bwd
    return out


# ---------------------------------------------------------------------------
# structured ops used by the sensor layer and the reconstruction network
# ---------------------------------------------------------------------------

def tile_hw(x: Tensor, reps_h: int, reps_w: int) -> Tensor:
    """Tile a P x P x C grid periodically to (reps_h*P) x (reps_w*P) x C."""
    x = _as_tensor(x)
    p, q, c = x.data.shape
    out = Tensor(np.tile(x.data, (reps_h, reps_w, 1)), _parents=(x,), _backward=None)

    def _bwd(g):
        x._accumulate(g.reshape(reps_h, p, reps_w, q, c).sum(axis=(0, 2)), own=True)

    out._backward = _bwd
    return out


def channel_dot(selection: Tensor, x: Tensor) -> Tensor:
    """Per-pixel inner product over the channel axis.

    ``selection`` is H x W x C; ``x`` is H x W x C or batched N x H x W x C.
    Returns H x W (or N x H x W).
    """
    selection, x = _as_tensor(selection), _as_tensor(x)
    if selection.data.shape != x.data.shape[-3:]:
        raise ShapeError(f"selection {selection.data.shape} does not match input {x.data.shape}")
    out = Tensor((selection.data * x.data).sum(axis=-1), _parents=(selection, x), _backward=None)

    def _bwd(g):
        ge = g[..., None]
        gsel = ge * x.data
        if x.data.ndim == 4:
            gsel = gsel.sum(axis=0)
        selection._accumulate(gsel, own=True)
        x._accumulate(ge * selection.data, own=True)

    out._backward = _bwd
    return out


def location_mix(x: Tensor, w: Tensor) -> Tensor:
    """Independent linear map per location: (N x L x D) @ (L x D x D) -> N x L x D."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("location_mix expects NxLxD input and LxDxD weights")
    if x.data.shape[1:] != w.data.shape[:2] or w.data.shape[1] != w.data.shape[2]:
        raise ShapeError(f"location_mix shapes incompatible: {x.data.shape} vs {w.data.shape}")
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))  # L x N x D
    out = Tensor((xt @ w.data).transpose(1, 0, 2), _parents=(x, w), _backward=None)

    def _bwd(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2))  # L x N x D
        x._accumulate((gt @ w.data.transpose(0, 2, 1)).transpose(1, 0, 2), own=True)
        w._accumulate(xt.transpose(0, 2, 1) @ gt, own=True)

    out._backward = _bwd
    return out


def group_sum(x: Tensor, groups: int) -> Tensor:
    """Sum the last axis in equal contiguous groups: (..., G*K) -> (..., G)."""
    x = _as_tensor(x)
    last = x.data.shape[-1]
    if last % groups:
        raise ShapeError(f"last axis {last} not divisible into {groups} groups")
    k = last // groups
    shaped = x.data.reshape(x.data.shape[:-1] + (groups, k))
    out = Tensor(shaped.sum(axis=-1), _parents=(x,), _backward=None)

    def _bwd(g):
        x._accumulate(np.repeat(g, k, axis=-1).reshape(x.data.shape), own=True)

    out._backward = _bwd
    return out
