"""Minimal dense tensor with reverse-mode differentiation.

Covers exactly the operations the saliency pipeline needs: dilated 2-D
convolution, max pooling, sigmoid, channel softmax, bilinear resize,
channel stacking, elementwise arithmetic, matrix products, the two
training losses, and momentum SGD with a poly learning-rate schedule.
All arithmetic is float64.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "ConvSpec",
    "OptimizerState",
    "conv2d",
    "max_pool2d",
    "relu",
    "sigmoid",
    "softmax_channels",
    "bilinear_resize",
    "stack_channels",
    "add",
    "mul",
    "matmul",
    "balanced_bce_loss",
    "squared_error_loss",
    "poly_lr",
    "sgd_step",
    "uniform_init",
]

EPS_PRED = 1e-7  # prediction clamp before any log
EPS_BETA = 1e-6  # class-balance clamp for degenerate masks


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient and a backward tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def dims(self):
        return self.data.shape

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-mode accumulation from this tensor into every .grad."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed requires a scalar tensor")
            seed = np.ones_like(self.data)
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t._backward is not None:
                for p, pg in zip(t._parents, t._backward(g)):
                    if pg is None:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg

    # convenience operators
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction (frozen-weight inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _tracked(*inputs):
    return _grad_enabled and any(t.requires_grad or t._parents for t in inputs)


def _make(data, parents, backward):
    out = Tensor(data)
    if _tracked(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one (possibly dilated) 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def effective_kernel(self):
        return (
            (self.kernel_h - 1) * self.dilation + 1,
            (self.kernel_w - 1) * self.dilation + 1,
        )

    def out_dims(self, h, w):
        eh, ew = self.effective_kernel()
        oh = (h + 2 * self.padding - eh) // self.stride + 1
        ow = (w + 2 * self.padding - ew) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv input {h}x{w} too small for effective kernel {eh}x{ew} "
                f"with padding {self.padding}"
            )
        return oh, ow

    @staticmethod
    def same(in_channels, out_channels, kernel, stride=1, dilation=1):
        """Padding so that output dims are ceil(input/stride)."""
        eff = (kernel - 1) * dilation + 1
        return ConvSpec(
            in_channels, out_channels, kernel, kernel,
            stride=stride, dilation=dilation, padding=(eff - 1) // 2,
        )


def _conv_patches(xp, kh, kw, stride, dilation, oh, ow):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d(x, weights, bias, spec: ConvSpec):
    """Dilated 2-D convolution: y[i] = sum_k x[i + r*k] w[k] (+ bias).

    x: (N, C, H, W); weights: (O, C, kh, kw); bias: (O,).
    """
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got rank {x.data.ndim}")
    if weights.data.shape != spec.weight_shape:
        raise ShapeError(
            f"weight dims {weights.data.shape} do not match spec {spec.weight_shape}"
        )
    if x.data.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input has {x.data.shape[1]} channels, spec expects {spec.in_channels}"
        )
    if bias.data.shape != (spec.out_channels,):
        raise ShapeError(
            f"bias dims {bias.data.shape} do not match ({spec.out_channels},)"
        )
    n, c, h, w = x.data.shape
    oh, ow = spec.out_dims(h, w)
    p = spec.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    patches = _conv_patches(xp, spec.kernel_h, spec.kernel_w, spec.stride,
                            spec.dilation, oh, ow)
    y = np.tensordot(weights.data, patches, axes=([1, 2, 3], [1, 2, 3]))
    y = y.transpose(1, 0, 2, 3) + bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if weights.requires_grad or weights._parents:
            gw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))
        if bias.requires_grad or bias._parents:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad or x._parents:
            gxp = np.zeros_like(xp)
            s, d = spec.stride, spec.dilation
            for i in range(spec.kernel_h):
                for j in range(spec.kernel_w):
                    t = np.einsum("nohw,oc->nchw", g, weights.data[:, :, i, j])
                    gxp[:, :, i * d:i * d + oh * s:s, j * d:j * d + ow * s:s] += t
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    return _make(y, (x, weights, bias), backward)


def max_pool2d(x, window, stride, same_pad=False):
    """Per-window max. Gradient routes to the first (row-major) argmax.

    With same_pad=True the bottom/right edges are padded with -inf so the
    output keeps the input dims when stride is 1.
    """
    x = _as_tensor(x)
    if window < 1:
        raise ShapeError(f"pool window must be >= 1, got {window}")
    if stride not in (1, 2):
        raise ShapeError(f"pool stride must be 1 or 2, got {stride}")
    n, c, h, w = x.data.shape
    if same_pad:
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = (oh - 1) * stride + window - h
        pw = (ow - 1) * stride + window - w
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, max(ph, 0)), (0, max(pw, 0))),
                    constant_values=-np.inf)
    else:
        if window > h or window > w:
            raise ShapeError(f"pool window {window} larger than input {h}x{w}")
        oh = (h - window) // stride + 1
        ow = (w - window) // stride + 1
        xp = x.data
    patches = _conv_patches(xp, window, window, stride, 1, oh, ow)
    flat = patches.reshape(n, c, window * window, oh, ow)
    amax = flat.argmax(axis=2)
    y = np.take_along_axis(flat, amax[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros_like(xp)
        ni, ci, ohi, owi = np.indices(amax.shape)
        ih = ohi * stride + amax // window
        iw = owi * stride + amax % window
        np.add.at(gx, (ni, ci, ih, iw), g)
        return (gx[:, :, :h, :w],)

    return _make(y, (x,), backward)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward)


def softmax_channels(x):
    """Softmax across axis 1 (channels), independently per spatial location."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), backward)


def _interp_axis(length, out_length):
    """Source indices/weights for 1-D bilinear resampling (endpoint-aligned)."""
    if out_length == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(out_length) * ((length - 1) / (out_length - 1))
    i0 = np.floor(pos).astype(np.intp)
    i0 = np.minimum(i0, length - 1)
    i1 = np.minimum(i0 + 1, length - 1)
    frac = pos - i0
    return i0, i1, frac


def bilinear_resize(x, out_h, out_w):
    """Endpoint-aligned bilinear resize of the two trailing axes."""
    x = _as_tensor(x)
    h, w = x.data.shape[-2:]
    if (out_h, out_w) == (h, w):
        def backward(g):
            return (g,)
        return _make(x.data.copy(), (x,), backward)
    r0, r1, rf = _interp_axis(h, out_h)
    c0, c1, cf = _interp_axis(w, out_w)
    rf_ = rf.reshape(-1, 1)
    rows = x.data[..., r0, :] * (1 - rf_) + x.data[..., r1, :] * rf_
    y = rows[..., c0] * (1 - cf) + rows[..., c1] * cf

    def backward(g):
        grows = np.zeros(x.data.shape[:-2] + (out_h, w))
        np.add.at(grows, (Ellipsis, c0), g * (1 - cf))
        np.add.at(grows, (Ellipsis, c1), g * cf)
        gx = np.zeros_like(x.data)
        gx_t = gx.swapaxes(-1, -2)
        grows_t = grows.swapaxes(-1, -2)
        np.add.at(gx_t, (Ellipsis, r0), grows_t * (1 - rf))
        np.add.at(gx_t, (Ellipsis, r1), grows_t * rf)
        return (gx,)

    return _make(y, (x,), backward)


def stack_channels(tensors):
    """Concatenate along the channel axis (axis 1)."""
    tensors = [_as_tensor(t) for t in tensors]
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape[0] != base[0] or t.data.shape[2:] != base[2:]:
            raise ShapeError(
                f"stack_channels dims mismatch: {t.data.shape} vs {base}"
            )
    y = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=1))

    return _make(y, tuple(tensors), backward)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"add dims mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        ga = g if a.data.shape == g.shape else np.sum(g).reshape(a.data.shape)
        gb = g if b.data.shape == g.shape else np.sum(g).reshape(b.data.shape)
        return ga, gb

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"mul dims mismatch: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        if a.data.shape != ga.shape:
            ga = np.sum(ga).reshape(a.data.shape)
        if b.data.shape != gb.shape:
            gb = np.sum(gb).reshape(b.data.shape)
        return ga, gb

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul dims mismatch: {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward)


def balanced_bce_loss(pred, gt, beta=None):
    """Class-balanced cross-entropy with per-image balance weight.

    beta defaults to (#negative pixels) / (#pixels) of gt, clamped away from
    0 and 1 for degenerate all-positive/all-negative masks.  Predictions are
    clamped to [1e-7, 1-1e-7] before the log; the gradient is zero where the
    clamp is active.
    """
    pred = _as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.data.shape != gt.shape:
        raise ShapeError(f"pred dims {pred.data.shape} != gt dims {gt.shape}")
    if beta is None:
        beta = float((gt < 0.5).sum()) / gt.size
    beta = min(max(beta, EPS_BETA), 1.0 - EPS_BETA)
    p = np.clip(pred.data, EPS_PRED, 1.0 - EPS_PRED)
    loss = -(beta * (gt * np.log(p)).sum()
             + (1.0 - beta) * ((1.0 - gt) * np.log1p(-p)).sum())

    def backward(g):
        inside = (pred.data > EPS_PRED) & (pred.data < 1.0 - EPS_PRED)
        gp = (-beta * gt / p + (1.0 - beta) * (1.0 - gt) / (1.0 - p)) * inside
        return (g * gp,)

    return _make(loss, (pred,), backward)


def squared_error_loss(pred, labels):
    """Sum of squared errors over a flat vector of scores."""
    pred = _as_tensor(pred)
    labels = np.asarray(labels, dtype=np.float64)
    if pred.data.shape != labels.shape:
        raise ShapeError(
            f"pred dims {pred.data.shape} != label dims {labels.shape}"
        )
    diff = pred.data - labels

    def backward(g):
        return (g * 2.0 * diff,)

    return _make((diff * diff).sum(), (pred,), backward)


@dataclass
class OptimizerState:
    """Momentum SGD with weight decay and a poly learning-rate schedule."""

    base_lr: float
    max_iter: int
    momentum: float = 0.9
    weight_decay: float = 0.0005
    power: float = 0.9
    iter: int = 0
    velocity: dict = field(default_factory=dict)

    def lr(self):
        return poly_lr(self)


def poly_lr(state: OptimizerState):
    if not 0 <= state.iter <= state.max_iter:
        raise ValueError(f"iter {state.iter} outside [0, {state.max_iter}]")
    return state.base_lr * (1.0 - state.iter / state.max_iter) ** state.power


def sgd_step(params, state: OptimizerState, lr_scale=None):
    """One momentum-SGD update over a {name: Tensor} parameter dict.

    lr_scale optionally maps parameter names to per-parameter learning-rate
    multipliers (newly added layers train faster than the backbone).
    """
    lr = poly_lr(state)
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter '{name}'")
        scale = 1.0 if lr_scale is None else lr_scale.get(name, 1.0)
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v - lr * scale * (g + state.weight_decay * p.data)
        state.velocity[name] = v
        p.data += v
    state.iter = min(state.iter + 1, state.max_iter)


def uniform_init(shape, fan_in, fan_out, rng):
    """He-style uniform init in +/- sqrt(6/fan_in), scaled for relu stacks.

    fan_out is accepted for call-site symmetry but does not enter the bound;
    variance preservation through rectifiers depends on fan_in only.
    """
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)
