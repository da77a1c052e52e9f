"""Differentiable primitives with hand-derived backward passes.

Every forward returns ``(output, context)``; the matching ``*_backward``
consumes exactly that context plus the upstream gradient and returns exact
analytic gradients. All arrays are float64. Ops are pure functions of their
inputs (dropout additionally takes an explicit RNG).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# conv2d


@dataclass
class ConvCtx:
    x: np.ndarray
    w: np.ndarray


def conv2d(x, w, b):
    """Valid (no padding) 2-d convolution, CHW layout.

    out[o, y, z] = b[o] + sum_{c,i,j} x[c, y+i, z+j] * w[o, c, i, j]
    """
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    if x.ndim != 3:
        raise ValueError(f"conv2d input must be 3-d (C,H,W), got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d kernels must be (C_out,C_in,k,k), got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[0]} channels, "
            f"kernels expect {w.shape[1]}"
        )
    k = w.shape[2]
    if k < 1:
        raise ValueError(f"conv2d kernel size must be >= 1, got {k}")
    if x.shape[1] < k or x.shape[2] < k:
        raise ValueError(
            f"conv2d input {x.shape[1]}x{x.shape[2]} smaller than kernel {k}x{k}"
        )
    if b.shape != (w.shape[0],):
        raise ValueError(
            f"conv2d bias shape {b.shape} does not match C_out={w.shape[0]}"
        )
    out = kernels.conv2d_fwd(x, w, b)
    return out, ConvCtx(x, w)


def conv2d_backward(ctx: ConvCtx, g):
    """Gradients w.r.t. (input, kernels, bias)."""
    g = _as_f64(g)
    return kernels.conv2d_bwd(ctx.x, ctx.w, g)


# ---------------------------------------------------------------------------
# pooling


@dataclass
class MaxPoolCtx:
    argmax: np.ndarray  # (C, H/2, W/2) index into the row-major 2x2 block
    in_shape: tuple


def maxpool2(x):
    """2x2 max pooling over disjoint blocks; ties go to the first element in
    row-major scan order within the block."""
    x = _as_f64(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 requires even H and W, got {h}x{w}")
    blocks = (
        x.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    idx = blocks.argmax(axis=3)  # argmax picks the first max: row-major tie rule
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
    return out, MaxPoolCtx(idx, (c, h, w))


def maxpool2_backward(ctx: MaxPoolCtx, g):
    c, h, w = ctx.in_shape
    g = _as_f64(g)
    gb = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(gb, ctx.argmax[..., None], g[..., None], axis=3)
    return gb.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)


@dataclass
class QuadPoolCtx:
    argmax: list  # per quadrant: (rows, cols) arrays of shape (C,)
    bounds: list  # per quadrant: (y0, y1, x0, x1)
    in_shape: tuple


def quadrant_pool(x):
    """Max over the four quadrants of each channel, split at floor midpoints.

    Output is (C, 2, 2); same first-in-row-major tie rule as maxpool2.
    """
    x = _as_f64(x)
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"quadrant_pool requires H,W >= 2, got {h}x{w}")
    hy, hx = h // 2, w // 2
    bounds = [(0, hy, 0, hx), (0, hy, hx, w), (hy, h, 0, hx), (hy, h, hx, w)]
    out = np.empty((c, 2, 2))
    argmax = []
    for q, (y0, y1, x0, x1) in enumerate(bounds):
        quad = x[:, y0:y1, x0:x1].reshape(c, -1)
        flat = quad.argmax(axis=1)
        qw = x1 - x0
        argmax.append((flat // qw, flat % qw))
        out[:, q // 2, q % 2] = np.take_along_axis(quad, flat[:, None], axis=1)[:, 0]
    return out, QuadPoolCtx(argmax, bounds, (c, h, w))


def quadrant_pool_backward(ctx: QuadPoolCtx, g):
    g = _as_f64(g)
    dx = np.zeros(ctx.in_shape)
    chan = np.arange(ctx.in_shape[0])
    for q, (y0, _y1, x0, _x1) in enumerate(ctx.bounds):
        rows, cols = ctx.argmax[q]
        dx[chan, y0 + rows, x0 + cols] += g[:, q // 2, q % 2]
    return dx


# ---------------------------------------------------------------------------
# activations


@dataclass
class ActCtx:
    x: np.ndarray
    kind: str


def activation(x, kind):
    """Elementwise relu or tanh. ReLU derivative at exactly 0 is 0."""
    x = _as_f64(x)
    if kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ValueError(f"unknown activation kind {kind!r} (expected relu or tanh)")
    return out, ActCtx(x, kind)


def activation_backward(ctx: ActCtx, g):
    g = _as_f64(g)
    if ctx.kind == "relu":
        return g * (ctx.x > 0)
    t = np.tanh(ctx.x)
    return g * (1.0 - t * t)


# ---------------------------------------------------------------------------
# affine map


@dataclass
class LinearCtx:
    x: np.ndarray
    w: np.ndarray


def linear(x, w, b):
    """out = w @ x + b for a vector input."""
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    if x.ndim != 1 or w.ndim != 2:
        raise ValueError(
            f"linear expects vector input and 2-d weight, got {x.shape} and {w.shape}"
        )
    if w.shape[1] != x.shape[0]:
        raise ValueError(
            f"linear dimension mismatch: weight expects input of {w.shape[1]}, "
            f"got {x.shape[0]}"
        )
    if b.shape != (w.shape[0],):
        raise ValueError(f"linear bias shape {b.shape} does not match m={w.shape[0]}")
    return w @ x + b, LinearCtx(x, w)


def linear_backward(ctx: LinearCtx, g):
    """Gradients w.r.t. (input, weight, bias)."""
    g = _as_f64(g)
    return ctx.w.T @ g, np.outer(g, ctx.x), g.copy()


# ---------------------------------------------------------------------------
# dropout


@dataclass
class DropoutCtx:
    mask: np.ndarray | None  # None means identity (eval mode or p == 0)
    scale: float


def dropout(x, p, mode, rng=None):
    """Inverted dropout: train-time zeroing with 1/(1-p) rescaling of the
    survivors so that eval mode is the exact identity."""
    x = _as_f64(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x, DropoutCtx(None, 1.0)
    if rng is None:
        raise ValueError("dropout in train mode with p > 0 requires an explicit rng")
    mask = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    return x * mask * scale, DropoutCtx(mask, scale)


def dropout_backward(ctx: DropoutCtx, g):
    g = _as_f64(g)
    if ctx.mask is None:
        return g
    return g * ctx.mask * ctx.scale


# ---------------------------------------------------------------------------
# loss


@dataclass
class MseCtx:
    diff: np.ndarray


def mse_loss(pred, target):
    """(1/n) * sum((pred - target)^2)."""
    pred, target = _as_f64(pred), _as_f64(target)
    if pred.shape != target.shape:
        raise ValueError(
            f"mse_loss length mismatch: pred {pred.shape} vs target {target.shape}"
        )
    if pred.size == 0:
        raise ValueError("mse_loss requires at least one element")
    diff = pred - target
    return float(np.mean(diff * diff)), MseCtx(diff)


def mse_loss_backward(ctx: MseCtx, upstream=1.0):
    """Gradient w.r.t. pred."""
    return (2.0 / ctx.diff.size) * ctx.diff * upstream
