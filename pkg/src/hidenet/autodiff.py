"""Small dense-tensor engine with reverse-mode automatic differentiation.

Every op takes :class:`Tensor` inputs, computes its forward result with numpy
and, when gradient recording is enabled and some input requires a gradient,
attaches a closure that maps the output gradient to input gradients.
:func:`backward` walks the recorded graph once in reverse topological order.

Tensors default to float32. Ops keep the dtype of their inputs, so a graph
built from float64 leaves runs entirely in float64 (used by gradient checks).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "RunningStats",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "topological_order",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "tensor_sum",
    "mean",
    "square",
    "reshape",
    "concat",
    "pad",
    "crop",
    "crop_windows",
    "relu",
    "linear",
    "global_avg_pool",
    "softmax",
    "log_softmax",
    "conv2d",
    "conv2d_transpose",
    "batchnorm",
    "broadcast_channels",
]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array node in the autodiff graph.

    ``data`` is a C-contiguous numpy array. ``grad`` is ``None`` until a
    backward pass reaches this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = np.float32
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# graph traversal


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that carry gradients, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Leaves passed explicitly but not connected to ``loss`` get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", a.data * b.data, (a, b), back)


def neg(x: Tensor) -> Tensor:
    return _result("neg", -x.data, (x,), lambda g: (-g,))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar without promoting the dtype."""
    f = x.dtype.type(factor)
    return _result("scale", x.data * f, (x,), lambda g: (g * f,))


def square(x: Tensor) -> Tensor:
    return _result("square", x.data * x.data, (x,), lambda g: (g * 2 * x.data,))


def tensor_sum(x: Tensor) -> Tensor:
    return _result("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    inv = x.dtype.type(1.0 / n)

    def back(g):
        return (np.full(x.shape, g * inv, dtype=x.dtype),)

    return _result("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,), back)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def broadcast_channels(v: Tensor, spatial: tuple[int, int]) -> Tensor:
    """Replicate a (N, L) tensor into an (N, L, H, W) volume."""
    n, length = v.shape
    h, w = spatial
    out = np.broadcast_to(v.data[:, :, None, None], (n, length, h, w))
    return _result("broadcast_channels", np.ascontiguousarray(out), (v,), lambda g: (g.sum(axis=(2, 3)),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(np.ascontiguousarray(g[tuple(idx)]))
        return parts

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def pad(x: Tensor, before: tuple[int, int], after: tuple[int, int] | None = None, mode: str = "constant") -> Tensor:
    """Pad the two trailing (spatial) axes with zeros or replicated edges."""
    if after is None:
        after = before
    (pt, pl), (pb, pr) = before, after
    h, w = x.shape[-2:]
    if mode == "constant":
        widths = [(0, 0)] * (x.ndim - 2) + [(pt, pb), (pl, pr)]
        out = np.pad(x.data, widths)

        def back(g):
            return (np.ascontiguousarray(g[..., pt:pt + h, pl:pl + w]),)

        return _result("pad", out, (x,), back)
    if mode != "edge":
        raise ValueError(f"unknown pad mode {mode!r}")
    rows = np.clip(np.arange(-pt, h + pb), 0, h - 1)
    cols = np.clip(np.arange(-pl, w + pr), 0, w - 1)
    out = x.data[..., rows, :][..., cols]

    def back(g):
        gr = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        for i, r in enumerate(rows):
            gr[..., r, :] += g[..., i, :]
        gx = np.zeros(x.shape, dtype=g.dtype)
        for j, c in enumerate(cols):
            gx[..., c] += gr[..., j]
        return (gx,)

    return _result("pad_edge", out, (x,), back)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    h, w = x.shape[-2:]
    if top < 0 or left < 0 or top + height > h or left + width > w or height < 1 or width < 1:
        raise ValueError(f"crop window ({top},{left},{height},{width}) outside {h}x{w}")
    out = x.data[..., top:top + height, left:left + width]

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[..., top:top + height, left:left + width] = g
        return (gx,)

    return _result("crop", out, (x,), back)


def crop_windows(x: Tensor, offsets: Sequence[tuple[int, int]], height: int, width: int) -> Tensor:
    """Per-sample crop: sample n keeps ``x[n, :, t:t+height, l:l+width]``."""
    if len(offsets) != x.shape[0]:
        raise ValueError("one offset per sample required")
    out = np.stack([x.data[n, :, t:t + height, l:l + width] for n, (t, l) in enumerate(offsets)])

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for n, (t, l) in enumerate(offsets):
            gx[n, :, t:t + height, l:l + width] = g[n]
        return (gx,)

    return _result("crop_windows", out, (x,), back)


# ---------------------------------------------------------------------------
# nonlinearities, pooling, dense layers


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with x (N, F), weight (F, G), bias (G,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[1]} outputs")
        out = out + bias.data
        parents.append(bias)

    def back(g):
        grads = [g @ weight.data.T if x.requires_grad else None, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _result("linear", out, parents, back)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    inv = x.dtype.type(1.0 / (h * w))

    def back(g):
        return (np.broadcast_to((g * inv)[:, :, None, None], x.shape).copy(),)

    return _result("global_avg_pool", x.data.mean(axis=(2, 3), dtype=x.dtype), (x,), back)


def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result("softmax", p, (logits,), back)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result("log_softmax", out, (logits,), back)


# ---------------------------------------------------------------------------
# convolution


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise ValueError(f"kernel {k} larger than padded extent {size + 2 * padding}")
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix (N*ho*wo, kh*kw*C) from a padded channels-last array."""
    n, c = xp.shape[0], xp.shape[3]
    if kh == 1 and kw == 1 and stride == 1:
        return np.ascontiguousarray(xp).reshape(n * ho * wo, c)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation, NCHW input, (Cout, Cin, kh, kw) weight."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"input has {cin} channels but weight expects {wcin}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    xp = x.data.transpose(0, 2, 3, 1)
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = [x, weight] + ([bias] if bias is not None else [])

    def back(g):
        g_nhwc = g.transpose(0, 2, 3, 1)
        g2 = g_nhwc.reshape(-1, cout)
        gw = None
        if weight.requires_grad:
            gw = (cols.T @ g2).T.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad and stride == 1 and padding <= min(kh, kw) - 1:
            # input gradient = full correlation of g with the spatially flipped kernel
            ph, pw = kh - 1 - padding, kw - 1 - padding
            gp = np.pad(g_nhwc, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else g_nhwc
            flipped = weight.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, cin)
            gx = (_im2col(gp, kh, kw, 1, h, w) @ flipped).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        elif x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
            gx = gxp[:, padding:padding + h, padding:padding + w].transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result("conv2d", out, parents, back)


def conv2d_transpose(x: Tensor, weight: Tensor, stride: int) -> Tensor:
    """Non-overlapping transpose convolution; weight is (Cin, Cout, k, k) with k == stride."""
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if kh != stride or kw != stride:
        raise ValueError(f"only kernel == stride is supported, got kernel {kh}x{kw} stride {stride}")
    if wcin != cin:
        raise ValueError(f"input has {cin} channels but weight expects {wcin}")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    blocks = (xm @ wmat).reshape(n, h, w, cout, kh, kw)
    out = np.ascontiguousarray(blocks.transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, h * kh, w * kw))

    def back(g):
        gb = g.reshape(n, cout, h, kh, w, kw).transpose(0, 2, 4, 1, 3, 5).reshape(-1, cout * kh * kw)
        gx = (gb @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xm.T @ gb).reshape(weight.shape) if weight.requires_grad else None
        return gx, gw

    return _result("conv2d_transpose", out, (x, weight), back)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class RunningStats:
    """Per-channel running mean/variance for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    steps: int = field(default=0)

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> RunningStats:
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


BN_EPS = 1e-5


def batchnorm(x: Tensor, scale_: Tensor, shift: Tensor, running: RunningStats | None,
              mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor.

    In ``train`` mode the batch statistics are used and ``running`` (if given)
    is updated in place by exponential moving average; in ``eval`` mode only
    ``running`` is used.
    """
    n, c, h, w = x.shape
    if n * h * w < 1:
        raise ValueError("batchnorm needs at least one element per channel")
    bshape = (1, c, 1, 1)
    gamma = scale_.data.reshape(bshape)
    beta = shift.data.reshape(bshape)
    if mode == "eval":
        if running is None or running.mean is None or running.var is None:
            raise RuntimeError("batchnorm in eval mode needs initialized running statistics")
        inv_std = (1.0 / np.sqrt(running.var + eps)).astype(x.dtype).reshape(bshape)
        xhat = (x.data - running.mean.astype(x.dtype).reshape(bshape)) * inv_std

        def back_eval(g):
            return (g * gamma * inv_std,
                    (g * xhat).sum(axis=(0, 2, 3)),
                    g.sum(axis=(0, 2, 3)))

        return _result("batchnorm_eval", xhat * gamma + beta, (x, scale_, shift), back_eval)
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    m = n * h * w
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv_std
    if running is not None:
        mom = running.momentum
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running.mean = ((1 - mom) * running.mean + mom * mu.reshape(c)).astype(running.mean.dtype)
        running.var = ((1 - mom) * running.var + mom * unbiased).astype(running.var.dtype)
        running.steps += 1

    def back(g):
        gsum = g.sum(axis=(0, 2, 3), keepdims=True)
        gxhat_sum = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gx = None
        if x.requires_grad:
            gx = (gamma * inv_std / m) * (m * g - gsum - xhat * gxhat_sum)
        return gx, gxhat_sum.reshape(c), gsum.reshape(c)

    return _result("batchnorm", xhat * gamma + beta, (x, scale_, shift), back)
