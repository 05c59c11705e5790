"""Dense-tensor reverse-mode automatic differentiation.

A Tensor wraps a float64 numpy array together with a lazily allocated
gradient buffer.  Every operation records a backward closure on the tape
implicitly formed by the ``_prev`` links; ``Tensor.backward()`` replays
those closures in reverse topological order, accumulating (never
overwriting) gradients so tensors feeding multiple consumers are handled
correctly.

Everything runs in double precision on the CPU.  Broadcasting is limited
to scalars and bias-style trailing-dimension vectors; gradients of
broadcast operands are reduced back to the operand shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "sigmoid",
    "tanh",
    "matmul",
    "affine",
    "conv2d",
    "pool2",
    "upsample2",
    "concat_channels",
    "concat",
    "narrow",
    "mse_loss",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array participating in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Run the reverse pass starting from this (scalar) tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output, got shape %s"
                             % (self.shape,))
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return _add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return _add(_wrap(other), _mul(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return _hadamard(self, other)
        return _mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return _mul(self, -1.0)

    def sum(self):
        return _sum(self)

    def mean(self):
        return _mul(_sum(self), 1.0 / self.size)

    def reshape(self, *shape):
        return _reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._prev for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._prev = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def _hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "hadamard")
    ad, bd = a.data, b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * bd, a.shape))
        b._accumulate(_unbroadcast(g * ad, b.shape))

    return _node(ad * bd, (a, b), backward)


def _mul(a: Tensor, k: float) -> Tensor:
    def backward(g):
        a._accumulate(g * k)

    return _node(a.data * k, (a,), backward)


def _sum(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), backward)


def _reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _node(a.data.reshape(shape), (a,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable logistic
    s = np.where(x.data >= 0,
                 1.0 / (1.0 + np.exp(-np.clip(x.data, None, 500))),
                 np.exp(np.clip(x.data, -500, None)) /
                 (1.0 + np.exp(np.clip(x.data, -500, None))))

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    return _node(s, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - t * t))

    return _node(t, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product: (m, k) @ (k, n)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        a._accumulate(g @ bd.T)
        b._accumulate(ad.T @ g)

    return _node(ad @ bd, (a, b), backward)


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """W x + b with W of shape (out, in) and x a vector of shape (in,)."""
    if x.data.ndim != 1 or W.data.ndim != 2 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"affine: W {W.shape} incompatible with x {x.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"affine: bias {b.shape} incompatible with W {W.shape}")
    Wd, xd = W.data, x.data

    def backward(g):
        W._accumulate(np.outer(g, xd))
        x._accumulate(Wd.T @ g)
        b._accumulate(g)

    return _node(Wd @ xd + b.data, (x, W, b), backward)


def _im2col(padded: np.ndarray, k: int, H: int, W: int) -> np.ndarray:
    """(Cin, H+2p, W+2p) -> (H*W, Cin*k*k) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    # (Cin, H, W, k, k) -> (H, W, Cin, k, k) -> (H*W, Cin*k*k)
    return windows.transpose(1, 2, 0, 3, 4).reshape(H * W, -1)


def conv2d(X: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """Same-padded stride-1 2-D convolution.

    X: (Cin, H, W), K: (Cout, Cin, k, k) with k odd, b: (Cout,).
    Output: (Cout, H, W).
    """
    if X.data.ndim != 3 or K.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 3-D input and 4-D kernel, "
                         f"got {X.shape} and {K.shape}")
    Cout, Cin, k, k2 = K.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {K.shape}")
    if X.shape[0] != Cin:
        raise ShapeError(f"conv2d: input channels {X.shape[0]} != kernel Cin {Cin}")
    if b.shape != (Cout,):
        raise ShapeError(f"conv2d: bias {b.shape} incompatible with Cout {Cout}")
    _, H, W = X.shape
    p = (k - 1) // 2
    padded = np.pad(X.data, ((0, 0), (p, p), (p, p)))
    cols = _im2col(padded, k, H, W)            # (H*W, Cin*k*k)
    Kmat = K.data.reshape(Cout, -1)            # (Cout, Cin*k*k)
    out = (cols @ Kmat.T + b.data).T.reshape(Cout, H, W)

    def backward(g):
        gmat = g.reshape(Cout, H * W).T        # (H*W, Cout)
        K._accumulate((gmat.T @ cols).reshape(K.shape))
        b._accumulate(gmat.sum(axis=0))
        dcols = gmat @ Kmat                        # (H*W, Cin*k*k)
        dcols = dcols.reshape(H, W, Cin, k, k)
        dpad = np.zeros_like(padded)
        for di in range(k):
            for dj in range(k):
                dpad[:, di:di + H, dj:dj + W] += dcols[:, :, :, di, dj].transpose(2, 0, 1)
        X._accumulate(dpad[:, p:p + H, p:p + W] if p else dpad)

    return _node(out, (X, K, b), backward)


def pool2(X: Tensor) -> Tensor:
    """2x2 max pooling with stride 2 over a (C, H, W) tensor."""
    if X.data.ndim != 3:
        raise ShapeError(f"pool2: expected (C, H, W), got {X.shape}")
    C, H, W = X.shape
    if H % 2 or W % 2:
        raise ShapeError(f"pool2: spatial extents must be even, got {H}x{W}")
    blocks = X.data.reshape(C, H // 2, 2, W // 2, 2).transpose(0, 1, 3, 2, 4)
    flat = blocks.reshape(C, H // 2, W // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        d = dflat.reshape(C, H // 2, W // 2, 2, 2).transpose(0, 1, 3, 2, 4)
        X._accumulate(d.reshape(C, H, W))

    return _node(out, (X,), backward)


def upsample2(X: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of a (C, H, W) tensor."""
    if X.data.ndim != 3:
        raise ShapeError(f"upsample2: expected (C, H, W), got {X.shape}")
    C, H, W = X.shape
    out = X.data.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        X._accumulate(g.reshape(C, H, 2, W, 2).sum(axis=(2, 4)))

    return _node(out, (X,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (C, H, W) tensors along the channel axis."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    Ca = a.shape[0]

    def backward(g):
        a._accumulate(g[:Ca])
        b._accumulate(g[Ca:])

    return _node(np.concatenate([a.data, b.data], axis=0), (a, b), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def narrow(X: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > X.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of bounds "
                         f"for axis {axis} of {X.shape}")
    index = tuple(slice(None) if a != axis else slice(start, start + length)
                  for a in range(X.data.ndim))

    def backward(g):
        d = np.zeros_like(X.data)
        d[index] = g
        X._accumulate(d)

    return _node(X.data[index].copy(), (X,), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements; returns a scalar tensor."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        scale = 2.0 * float(g) / n
        pred._accumulate(scale * diff)
        target._accumulate(-scale * diff)

    return _node(np.asarray((diff * diff).mean()), (pred, target), backward)
