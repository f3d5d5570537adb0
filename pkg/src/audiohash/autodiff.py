"""Minimal reverse-mode autodiff over numpy arrays.

Only the op set the encoder needs is provided: 2-D convolution (stride 1,
same padding), ReLU, 2x2 max pooling, global average pooling, dense layers,
elementwise add/mul, sum, mean and axis-0 concatenation. A graph is consumed by its first
``backward()``; every node in it refuses a second pass.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class TapeError(RuntimeError):
    """Misuse of the computation tape (non-scalar root, repeated backward)."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad=False, _parents=(), name=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if self._consumed:
            raise TapeError("backward() already ran on this graph")
        if grad is None:
            if self.data.size != 1:
                raise TapeError(f"backward() without a seed needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise TapeError(f"seed gradient shape {grad.shape} != root shape {self.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._parents or node is self:
                node._consumed = True
            node._backward = None
            node._parents = ()

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _needs_grad(*ts):
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward):
    rg = _needs_grad(*parents)
    out = Tensor(data, requires_grad=rg, _parents=parents if rg else ())
    if rg:
        out._backward = backward
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), backward)


def tsum(x):
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), (x,), backward)


def mean(x):
    n = x.data.size

    def backward(g):
        x._accumulate(np.broadcast_to(g / n, x.shape))

    return _make(np.asarray(x.data.mean()), (x,), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), backward)


def dense(x, w, b):
    """``x @ w + b`` with ``x: (N, F)``, ``w: (F, O)``, ``b: (O,)``."""
    if x.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(x.data @ w.data + b.data, (x, w, b), backward)


def conv2d(x, w, b):
    """Stride-1 'same' convolution. ``x: (N, C, H, W)``, ``w: (O, C, kh, kw)`` with odd kernels."""
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2 or b.shape != (o,) or kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # (N, C, H, W, kh, kw) -> (N*H*W, C*kh*kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T + b.data).reshape(n, h, wd, o).transpose(0, 3, 1, 2)

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(n * h * wd, o)
        if w.requires_grad:
            w._accumulate((gflat.T @ cols).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            gcols = (gflat @ wmat).reshape(n, h, wd, c, kh, kw)
            gxp = np.zeros(xp.shape, dtype=x.data.dtype)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di:di + h, dj:dj + wd] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, ph:ph + h, pw:pw + wd])

    return _make(np.ascontiguousarray(out), (x, w, b), backward)


def maxpool2x2(x):
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped."""
    n, c, h, wd = x.shape
    h2, w2 = h // 2, wd // 2
    if h2 == 0 or w2 == 0:
        raise ValueError(f"maxpool2x2: input too small {x.shape}")
    blocks = x.data[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=x.data.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros(x.shape, dtype=x.data.dtype)
        gx[:, :, : 2 * h2, : 2 * w2] = gb.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        x._accumulate(gx)

    return _make(out, (x,), backward)


def global_avg_pool(x):
    """``(N, C, H, W) -> (N, C)``."""
    n, c, h, wd = x.shape

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * wd), x.shape))

    return _make(x.data.mean(axis=(2, 3)), (x,), backward)


def custom(inputs, value, backward_fn):
    """Wrap an externally computed value. ``backward_fn(g)`` returns one gradient per input."""
    inputs = tuple(inputs)

    def backward(g):
        grads = backward_fn(g)
        for t, gt in zip(inputs, grads):
            if t.requires_grad and gt is not None:
                t._accumulate(gt)

    return _make(np.asarray(value), inputs, backward)


def concat(tensors):
    """Concatenate along axis 0."""
    tensors = list(tensors)
    sizes = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        for t, a, b in zip(tensors, sizes[:-1], sizes[1:]):
            if t.requires_grad:
                t._accumulate(g[a:b])

    return _make(np.concatenate([t.data for t in tensors]), tuple(tensors), backward)
