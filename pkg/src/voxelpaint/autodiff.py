"""Dense tensors with reverse-mode automatic differentiation.

Five-dimensional data follows the [batch, channel, depth, height, width]
layout. Every forward op that touches a gradient-requiring tensor records
a closure on its output; Tensor.backward() on a scalar result replays the
closures in reverse topological order and accumulates into .grad buffers.

Buffers are float32 by default. float64 graphs are supported so that
finite-difference test harnesses can run the same code at full precision.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense array node in a reverse-mode differentiation graph.

    ``grad`` stays None until a backward pass deposits something; None
    means an all-zero gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph construction helpers -------------------------------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        _check_binary(self, other)
        out_data = self.data + other.data

        def backward(g):
            _accumulate(self, _reduce_to(g, self.data.shape))
            _accumulate(other, _reduce_to(g, other.data.shape))

        return _node(out_data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        _check_binary(self, other)
        out_data = self.data - other.data

        def backward(g):
            _accumulate(self, _reduce_to(g, self.data.shape))
            _accumulate(other, _reduce_to(-g, other.data.shape))

        return _node(out_data, (self, other), backward)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)
        _check_binary(self, other)
        out_data = self.data * other.data

        def backward(g):
            _accumulate(self, _reduce_to(g * other.data, self.data.shape))
            _accumulate(other, _reduce_to(g * self.data, other.data.shape))

        return _node(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        _check_binary(self, other)
        out_data = self.data / other.data

        def backward(g):
            _accumulate(self, _reduce_to(g / other.data, self.data.shape))
            _accumulate(other, _reduce_to(-g * self.data / (other.data * other.data), other.data.shape))

        return _node(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        def backward(g):
            _accumulate(self, -g)

        return _node(-self.data, (self,), backward)

    def abs(self):
        """Elementwise |x|; the subgradient at zero is zero."""
        sign = np.sign(self.data)

        def backward(g):
            _accumulate(self, g * sign)

        return _node(np.abs(self.data), (self,), backward)

    # -- reductions -------------------------------------------------------

    def sum(self):
        def backward(g):
            _accumulate(self, np.broadcast_to(g, self.data.shape).astype(self.data.dtype, copy=False))

        return _node(np.asarray(self.data.sum(), dtype=self.data.dtype), (self,), backward)

    def mean(self):
        n = self.data.size

        def backward(g):
            _accumulate(self, np.broadcast_to(g / n, self.data.shape).astype(self.data.dtype, copy=False))

        return _node(np.asarray(self.data.mean(), dtype=self.data.dtype), (self,), backward)

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad.

        self must hold a single value. Each graph node is visited exactly
        once, in reverse topological order.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # binary ops only broadcast scalar-vs-array, so a full sum suffices
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _check_binary(a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"operand shapes {a.shape} and {b.shape} do not match")


def _check_5d(x: Tensor, name: str) -> None:
    if x.data.ndim != 5:
        raise ShapeError(f"{name} must be 5-D [N,C,D,H,W], got {x.shape}")


# -- network primitives -----------------------------------------------------


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """3D cross-correlation with a cubic kernel, stride 1, zero padding.

    x: [N,Cin,D,H,W], weight: [Cout,Cin,k,k,k], bias: [Cout] or None.
    Output spatial extent is D + 2*padding - k + 1 per axis.
    """
    _check_5d(x, "conv3d input")
    if weight.data.ndim != 5:
        raise ShapeError(f"conv3d weight must be 5-D, got {weight.shape}")
    cout, cin, kd, kh, kw = weight.data.shape
    if not (kd == kh == kw):
        raise ShapeError(f"conv3d kernel must be cubic, got {(kd, kh, kw)}")
    k = kd
    if x.data.shape[1] != cin:
        raise ShapeError(f"conv3d input has {x.data.shape[1]} channels, weight expects {cin}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"conv3d bias must be [{cout}], got {bias.shape}")
    p = int(padding)
    if p < 0 or p > k - 1:
        raise ShapeError(f"conv3d padding must be in [0, {k - 1}], got {p}")
    if min(x.data.shape[2:]) + 2 * p < k:
        raise ShapeError(f"conv3d input {x.shape} too small for kernel {k} with padding {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))  # [N,Cin,D',H',W',k,k,k]
    out = np.tensordot(win, weight.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # [N,D',H',W',Cout]
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3, 4)))
        if weight.requires_grad:
            gw = np.tensordot(win, g, axes=([0, 2, 3, 4], [0, 2, 3, 4]))  # [Cin,k,k,k,Cout]
            _accumulate(weight, np.moveaxis(gw, -1, 0))
        if x.requires_grad:
            q = k - 1 - p
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q), (q, q)))
            gwin = sliding_window_view(gp, (k, k, k), axis=(2, 3, 4))  # [N,Cout,D,H,W,k,k,k]
            wf = weight.data[:, :, ::-1, ::-1, ::-1]
            gx = np.tensordot(gwin, wf, axes=([1, 5, 6, 7], [0, 2, 3, 4]))  # [N,D,H,W,Cin]
            _accumulate(x, np.ascontiguousarray(np.moveaxis(gx, -1, 1)))

    return _node(out, parents, backward)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) slice over its spatial voxels.

    Uses the biased variance (divisor D*H*W). gamma and beta are [C].
    """
    _check_5d(x, "instance_norm input")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"instance_norm needs gamma/beta of shape [{c}]")

    axes = (2, 3, 4)
    # float64 accumulation keeps the normalized mean near zero on large slices
    mu = x.data.mean(axis=axes, keepdims=True, dtype=np.float64).astype(x.data.dtype)
    var = x.data.var(axis=axes, keepdims=True, dtype=np.float64).astype(x.data.dtype)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mu) * inv
    gview = gamma.data.reshape(1, c, 1, 1, 1)
    out = gview * xhat + beta.data.reshape(1, c, 1, 1, 1)

    def backward(g):
        _accumulate(beta, g.sum(axis=(0, 2, 3, 4)))
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            gg = g * gview
            gx = inv * (
                gg
                - gg.mean(axis=axes, keepdims=True)
                - xhat * (gg * xhat).mean(axis=axes, keepdims=True)
            )
            _accumulate(x, gx.astype(x.data.dtype, copy=False))

    return _node(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at zero is zero."""
    pos = x.data > 0

    def backward(g):
        _accumulate(x, g * pos)

    return _node(np.maximum(x.data, 0), (x,), backward)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """x for x >= 0, alpha * x otherwise; alpha is one learnable scalar."""
    if alpha.data.size != 1:
        raise ShapeError(f"prelu alpha must hold one value, got shape {alpha.shape}")
    neg = x.data < 0
    a = alpha.data.reshape(())
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * np.where(neg, a, x.data.dtype.type(1)))
        if alpha.requires_grad:
            _accumulate(alpha, np.asarray((g * x.data * neg).sum(), dtype=alpha.data.dtype).reshape(alpha.data.shape))

    return _node(out, (x, alpha), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element with probability ``rate``; scale survivors by 1/(1-rate).

    Identity in eval mode or at rate 0. The caller's rng makes the draw
    reproducible.
    """
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - rate))

    def backward(g):
        _accumulate(x, g * keep)

    return _node(x.data * keep, (x,), backward)


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling with stride 2.

    The gradient routes to the window's argmax; ties go to the first
    element in (kd, kh, kw) scan order.
    """
    _check_5d(x, "maxpool3d input")
    n, c, d, h, w = x.data.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError(f"maxpool3d needs even spatial extents, got {(d, h, w)}")
    d2, h2, w2 = d // 2, h // 2, w // 2
    r = (
        x.data.reshape(n, c, d2, 2, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d2, h2, w2, 8)
    )
    idx = r.argmax(axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        buf = np.zeros_like(r)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        gx = (
            buf.reshape(n, c, d2, h2, w2, 2, 2, 2)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(n, c, d, h, w)
        )
        _accumulate(x, gx)

    return _node(np.ascontiguousarray(out), (x,), backward)


def upsample3d_nearest(x: Tensor) -> Tensor:
    """Double every spatial axis by nearest-neighbor replication."""
    _check_5d(x, "upsample3d input")
    n, c, d, h, w = x.data.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)

    def backward(g):
        gx = g.reshape(n, c, d, 2, h, 2, w, 2).sum(axis=(3, 5, 7))
        _accumulate(x, gx)

    return _node(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two tensors along the channel axis, ``a`` first."""
    _check_5d(a, "concat operand")
    if b.data.ndim != 5:
        raise ShapeError(f"concat operand must be 5-D, got {b.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat operands disagree outside channels: {a.shape} vs {b.shape}")
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        _accumulate(a, g[:, :ca])
        _accumulate(b, g[:, ca:])

    return _node(out, (a, b), backward)
