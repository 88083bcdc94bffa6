"""A small reverse-mode automatic differentiation engine on numpy arrays.

Each op computes its output eagerly and, when any input needs gradients,
records a closure mapping the output gradient to input gradients. The ops
are coarse (a whole temporal convolution, a batch norm) so graphs stay
short and the heavy lifting lands in BLAS matmuls.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np


class UsageError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __neg__(self):
        return neg(self)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tensor on the tape."""
        if self.data.size != 1:
            raise UsageError(f"backward needs a scalar root, got shape {self.shape}")
        order = _topo(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise --------------------------------------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    # plain numbers take the other operand's dtype so float32 graphs stay float32
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


_LETTERS = "abcdefghij"


def _mul_grad(g: np.ndarray, other: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Gradient of ``self * other`` w.r.t. ``self`` of the given (broadcast) shape."""
    if g.shape == shape:
        return g * other
    if g.ndim != len(shape) or other.shape != g.shape:
        return _unbroadcast(g * other, shape)
    # reduce the broadcast axes inside einsum, without a full-size temporary
    full = _LETTERS[: g.ndim]
    kept = "".join(ch for ch, n in zip(full, shape) if n != 1)
    return np.einsum(f"{full},{full}->{kept}", g, other).reshape(shape)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _mul_grad(g, b.data, a.shape) if a.requires_grad else None
        gb = _mul_grad(g, a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _result(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows, unlike 1 / (1 + exp(-x))
    out = np.tanh(x * 0.5)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return _result(out, (x,), lambda g: (g * (out > 0),))


def relu6(x: Tensor) -> Tensor:
    mask = (x.data > 0) & (x.data < 6)
    return _result(np.clip(x.data, 0, 6), (x,), lambda g: (g * mask,))


def hardswish(x: Tensor) -> Tensor:
    d = x.data
    inner = np.clip(d + 3.0, 0.0, 6.0) / 6.0
    slope = np.where(d <= -3, 0.0, np.where(d >= 3, 1.0, (2.0 * d + 3.0) / 6.0)).astype(d.dtype)
    return _result(d * inner, (x,), lambda g: (g * slope,))


def swish(x: Tensor) -> Tensor:
    d = x.data
    s = _sigmoid(d)
    return _result(d * s, (x,), lambda g: (g * (s + d * s * (1.0 - s)),))


ACTIVATIONS = {"Relu": relu, "Relu6": relu6, "Hardswish": hardswish, "Swish": swish}


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return _result(s, (x,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# --- reductions and shape ops -----------------------------------------------

def _channel_sum(xr: np.ndarray) -> np.ndarray:
    """Sum of an (N, C, R) array over N and R, via BLAS matrix-vector products."""
    return np.matmul(xr, np.ones(xr.shape[2], dtype=xr.dtype)).sum(axis=0)


def _last_axes_mean(x: np.ndarray, k: int) -> np.ndarray:
    """Mean over the last ``k`` axes as a matrix-vector product."""
    lead = x.shape[: x.ndim - k]
    r = int(np.prod(x.shape[x.ndim - k:]))
    ones = np.full(r, 1.0 / r, dtype=x.dtype)
    return (np.ascontiguousarray(x).reshape(-1, r) @ ones).reshape(lead)


def mean(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % x.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    if axes == tuple(range(x.ndim - len(axes), x.ndim)):
        out = _last_axes_mean(x.data, len(axes))
        if keepdims:
            out = out.reshape(out.shape + (1,) * len(axes))
    else:
        out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        # read-only view: no backward rule writes into its incoming gradient
        return (np.broadcast_to(g / x.dtype.type(n), x.shape),)
    return _result(out, (x,), bw)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(x.ndim))
    else:
        axes = tuple(a % x.ndim for a in ((axis,) if isinstance(axis, int) else axis))
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)
    return _result(out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                   lambda g: tuple(np.split(g, cuts, axis=axis)))


def split(x: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    cuts = np.cumsum(sizes)[:-1]
    pieces = np.split(x.data, cuts, axis=axis)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for i, piece in enumerate(pieces):
        lo, hi = bounds[i], bounds[i + 1]

        def bw(g, lo=lo, hi=hi):
            full = np.zeros_like(x.data)
            idx = [slice(None)] * x.ndim
            idx[axis] = slice(lo, hi)
            full[tuple(idx)] = g
            return (full,)
        out.append(_result(np.ascontiguousarray(piece), (x,), bw))
    return out


def take(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; ``index`` must be a permutation (channel shuffle)."""
    inv = np.argsort(index)
    return _result(np.take(x.data, index, axis=axis), (x,), lambda g: (np.take(g, inv, axis=axis),))


# --- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _result(out, (a, b), bw)


def graph_aggregate(x: Tensor, at: np.ndarray) -> Tensor:
    """``x @ at`` over the vertex axis of (N, C, T, V), run as one 2-D matmul."""
    v = x.shape[-1]
    out = (x.data.reshape(-1, v) @ at).reshape(x.shape[:-1] + (at.shape[1],))

    def bw(g):
        return ((g.reshape(-1, at.shape[1]) @ at.T).reshape(x.shape),)
    return _result(out, (x,), bw)


def channel_mix(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-position linear map over axis 1: (N, C, *rest) -> (N, O, *rest)."""
    n, c = x.shape[:2]
    rest = x.shape[2:]
    xr = x.data.reshape(n, c, -1)
    out = np.matmul(w.data, xr)
    if b is not None:
        out += b.data[None, :, None]
    o = w.shape[0]

    def bw(g):
        gr = g.reshape(n, o, -1)
        gx = np.matmul(w.data.T, gr).reshape(x.shape) if x.requires_grad else None
        gw = np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0) if w.requires_grad else None
        gb = gr.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return gx, gw, gb
    parents = (x, w) if b is None else (x, w, b)
    return _result(out.reshape((n, o) + rest), parents, bw)


def _tap_ranges(t: int, t_out: int, k: int, stride: int):
    """For each tap j: output range [lo, hi) and the matching input slice, no padding."""
    pad = (k - 1) // 2
    out = []
    for j in range(k):
        off = j - pad
        lo = max(0, -(off // stride))  # first i with i * stride + off >= 0
        hi = min(t_out, (t - 1 - off) // stride + 1)
        if hi <= lo:
            out.append(None)
            continue
        start = lo * stride + off
        out.append((lo, hi, slice(start, start + (hi - lo - 1) * stride + 1, stride)))
    return out


def temporal_conv(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, groups: int = 1) -> Tensor:
    """Convolution along T of an (N, C, T, V) tensor with zero 'same' padding.

    ``w`` has shape (O, C // groups, k) with odd k; the output length is
    ceil(T / stride).
    """
    n, c, t, v = x.shape
    o, cg, k = w.shape
    if c != cg * groups or o % groups:
        raise UsageError(f"temporal_conv: channels {c}->{o} incompatible with groups={groups}")
    if k % 2 == 0:
        raise UsageError("temporal_conv: window must be odd")
    t_out = -(-t // stride)
    taps = _tap_ranges(t, t_out, k, stride)
    xd = x.data

    if groups == c and o == c and cg == 1:  # depthwise
        wk = w.data[:, 0, :]
        out = np.zeros((n, c, t_out, v), dtype=x.dtype)
        for j, tap in enumerate(taps):
            if tap is not None:
                lo, hi, sl = tap
                out[:, :, lo:hi] += xd[:, :, sl] * wk[None, :, j, None, None]
        if b is not None:
            out += b.data[None, :, None, None]

        def bw(g):
            gx = gw = gb = None
            if x.requires_grad:
                gx = np.zeros_like(xd)
                for j, tap in enumerate(taps):
                    if tap is not None:
                        lo, hi, sl = tap
                        gx[:, :, sl] += g[:, :, lo:hi] * wk[None, :, j, None, None]
            if w.requires_grad:
                gw = np.zeros_like(w.data)
                for j, tap in enumerate(taps):
                    if tap is not None:
                        lo, hi, sl = tap
                        gw[:, 0, j] = np.einsum("nctv,nctv->c", g[:, :, lo:hi], xd[:, :, sl])
            if b is not None and b.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb
    else:
        og = o // groups
        r = t_out * v
        # im2col at output resolution: (N, C, k, T_out, V), zeros where taps fall off the edge
        cols = np.zeros((n, c, k, t_out, v), dtype=x.dtype)
        for j, tap in enumerate(taps):
            if tap is not None:
                lo, hi, sl = tap
                cols[:, :, j, lo:hi] = xd[:, :, sl]
        cols = cols.reshape(n, groups, cg * k, r)
        wm = w.data.reshape(groups, og, cg * k)
        out = np.matmul(wm[None], cols).reshape(n, o, t_out, v)
        if b is not None:
            out += b.data[None, :, None, None]

        def bw(g):
            gx = gw = gb = None
            gr = g.reshape(n, groups, og, r)
            if x.requires_grad:
                gcols = np.matmul(np.swapaxes(wm, -1, -2)[None], gr).reshape(n, c, k, t_out, v)
                gx = np.zeros_like(xd)
                for j, tap in enumerate(taps):
                    if tap is not None:
                        lo, hi, sl = tap
                        gx[:, :, sl] += gcols[:, :, j, lo:hi]
            if w.requires_grad:
                gw = np.matmul(gr, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w.shape)
            if b is not None and b.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb
    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis but 1.

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    n, c = x.shape[:2]
    xr = x.data.reshape(n, c, -1)
    m = xr.shape[0] * xr.shape[2]
    dt = x.dtype
    if training:
        mu = _channel_sum(xr).astype(np.float64) / m
        centred = xr - mu.astype(dt)[None, :, None]
        # two passes: the centred sum of squares does not cancel in float32
        var = np.einsum("ncr,ncr->c", centred, centred) / m
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
        inv = 1.0 / np.sqrt(var + eps)
        scale = gamma.data * inv
        out = centred
        out *= scale.astype(dt)[None, :, None]
        out += beta.data.astype(dt)[None, :, None]
    else:
        mu, var = running_mean, running_var
        inv = 1.0 / np.sqrt(var + eps)
        scale = gamma.data * inv
        shift = beta.data - mu * scale
        out = xr * scale.astype(dt)[None, :, None]
        out += shift.astype(dt)[None, :, None]

    def bw(g):
        gr = g.reshape(n, c, -1)
        gsum = _channel_sum(gr).astype(np.float64)
        gxhat = (np.einsum("ncr,ncr->c", gr, xr) - mu * gsum) * inv  # sum of g * xhat
        gx = None
        if x.requires_grad:
            if training:
                # dx = scale * (g - mean(g) - xhat * mean(g * xhat)), as a*g + b*x + c
                b = -scale * inv * gxhat / m
                c0 = -scale * gsum / m - b * mu
                gx = gr * scale.astype(dt)[None, :, None]
                gx += xr * b.astype(dt)[None, :, None]
                gx += c0.astype(dt)[None, :, None]
            else:
                gx = gr * scale.astype(dt)[None, :, None]
            gx = gx.reshape(x.shape)
        return gx, gxhat.astype(gamma.dtype), gsum.astype(beta.dtype)
    return _result(out.reshape(x.shape), (x, gamma, beta), bw)


def cross_entropy(logits: Tensor, labels: np.ndarray, class_weights=None) -> Tensor:
    """Mean over samples of ``w[y] * -log softmax(logits)[y]``."""
    z = logits.data
    n = z.shape[0]
    labels = np.asarray(labels, dtype=int)
    w = np.ones(z.shape[1], dtype=z.dtype) if class_weights is None else np.asarray(class_weights, z.dtype)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(n), labels]
    sw = w[labels]
    loss = np.asarray((sw * nll).sum() / n, dtype=z.dtype)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return (g * p * (sw / n)[:, None],)
    return _result(loss, (logits,), bw)
