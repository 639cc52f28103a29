"""Dense tensors with a reverse-mode tape.

Only the operations the convolutional trunk, its heads and the two training
losses need are provided.  Every op checks its operands' shapes, rejects
non-finite results, and records a backward closure when any operand requires
a gradient and recording is enabled (see :func:`no_grad`).

Float32 is the working precision; passing float64 arrays runs the same code
in double precision, which the gradient checks rely on.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NumericError, ShapeError

_FLOATS = (np.float32, np.float64)
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, target networks)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{where}: non-finite values encountered")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float32)
        _check_finite(arr, name or "Tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def from_op(data: np.ndarray, parents: tuple, backward_fn, opname: str) -> Tensor:
    """Wrap an op result; attach ``backward_fn`` when a parent needs gradients.

    ``backward_fn(grad_out)`` must return one gradient (or ``None``) per parent.
    """
    _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = parents if needs else ()
    out._backward = backward_fn if needs else None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` slot of every reachable leaf."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")
    if not loss.requires_grad:
        raise GraphError("loss was not produced by recorded ops on trainable tensors")

    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype, copy=True)
            else:
                node.grad += g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._backward = None
        node._parents = ()
        node._consumed = True


# ----------------------------------------------------------------------------
# elementwise and reductions


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        return from_op(a.data + b, (a,), lambda g: (g,), "add")
    _same_shape(a, b, "add")
    return from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        return from_op(a.data - b, (a,), lambda g: (g,), "sub")
    _same_shape(a, b, "sub")
    return from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        s = b
        return from_op(a.data * s, (a,), lambda g: (g * s,), "mul")
    _same_shape(a, b, "mul")
    return from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def tsum(x: Tensor) -> Tensor:
    return from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return from_op(np.asarray(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / n),), "mean")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return from_op(np.maximum(x.data, 0), (x,), lambda g: (g * mask,), "relu")


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten of every axis after the batch axis."""
    shape = x.shape
    return from_op(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


def select(q: Tensor, index) -> Tensor:
    """Pick ``q[i, index[i]]`` for every row, e.g. Q(s_i, a_i)."""
    idx = np.asarray(index, dtype=np.int64)
    if q.ndim != 2 or idx.shape != (q.shape[0],):
        raise ShapeError(f"select: need N x A values and N indices, got {q.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= q.shape[1]):
        raise ShapeError(f"select: index out of range [0, {q.shape[1]})")
    rows = np.arange(q.shape[0])

    def back(g):
        gq = np.zeros_like(q.data)
        gq[rows, idx] = g
        return (gq,)

    return from_op(q.data[rows, idx], (q,), back, "select")


# ----------------------------------------------------------------------------
# layers


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid 3x3 cross-correlation on N x C x H x W input; kernel C_out x C_in x 3 x 3."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be N x C x H x W, got {x.shape}")
    nhwc = to_channels_last(x)
    return to_channels_first(conv2d_nhwc(nhwc, w, b, stride))


def to_channels_last(x: Tensor) -> Tensor:
    """N x C x H x W -> N x H x W x C."""
    return from_op(
        np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)), (x,), lambda g: (g.transpose(0, 3, 1, 2),), "to_nhwc"
    )


def to_channels_first(x: Tensor) -> Tensor:
    """N x H x W x C -> N x C x H x W."""
    return from_op(
        np.ascontiguousarray(x.data.transpose(0, 3, 1, 2)), (x,), lambda g: (g.transpose(0, 2, 3, 1),), "to_nchw"
    )


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    n, h, wd, c = x.shape
    ho = (h - 3) // stride + 1
    wo = (wd - 3) // stride + 1
    win = sliding_window_view(x, (3, 3), axis=(1, 2))[:, ::stride, ::stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, 9 * c)


def conv2d_nhwc(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Channels-last form of :func:`conv2d` used inside the model (same kernel layout)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be N x H x W x C, got {x.shape}")
    n, h, wd, c = x.shape
    if w.ndim != 4 or w.shape[1] != c or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: kernel {w.shape} incompatible with input channels {c}")
    co = w.shape[0]
    if b.shape != (co,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {co} output channels")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h < 3 or wd < 3:
        raise ShapeError(f"conv2d: spatial extent {h}x{wd} smaller than the 3x3 kernel")
    ho = (h - 3) // stride + 1
    wo = (wd - 3) // stride + 1

    cols = _im2col(x.data, stride)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(co, 9 * c)
    out = cols @ wmat.T
    out += b.data
    out = out.reshape(n, ho, wo, co)

    def back(g):
        gm = g.reshape(-1, co)
        gw = (gm.T @ cols).reshape(co, 3, 3, c).transpose(0, 3, 1, 2) if w.requires_grad else None
        gb = gm.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            if stride == 1:
                # full correlation of the padded output gradient with the flipped kernel
                gp = np.pad(g, ((0, 0), (2, 2), (2, 2), (0, 0)))
                wflip = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(9 * co, c)
                gx = (_im2col(gp, 1) @ wflip).reshape(n, h, wd, c)
            else:
                gcols = (gm @ wmat).reshape(n, ho, wo, 3, 3, c)
                gx = np.zeros_like(x.data)
                hi = stride * (ho - 1) + 1
                wi = stride * (wo - 1) + 1
                for i in range(3):
                    for j in range(3):
                        gx[:, i:i + hi:stride, j:j + wi:stride, :] += gcols[:, :, :, i, j, :]
        return gx, gw, gb

    return from_op(out, (x, w, b), back, "conv2d")


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    channels_last: bool = False,
) -> Tensor:
    """Per-channel normalization; ``running_*`` arrays are updated in place in training.

    Input is N x C x H x W, or N x H x W x C with ``channels_last``.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: input must be 4-D, got {x.shape}")
    if channels_last:
        c = x.shape[3]
        axes = (0, 1, 2)
        bshape = (1, 1, 1, c)
    else:
        c = x.shape[1]
        axes = (0, 2, 3)
        bshape = (1, c, 1, 1)
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: affine params {gamma.shape}/{beta.shape} vs {c} channels")
    if eps <= 0:
        raise ShapeError("batchnorm2d: eps must be positive")
    m = x.data.size // c

    if training:
        if m < 2:
            raise NumericError("batchnorm2d: a single value per channel has degenerate variance")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu = running_mean
        var = running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(bshape)
    xhat = (x.data - mu.astype(x.dtype).reshape(bshape)) * inv
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gxhat.sum(axis=axes).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv
        return gx, ggamma, gbeta

    return from_op(out, (x, gamma, beta), back, "batchnorm2d")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not match {w.shape[1]} units")
    out = x.data @ w.data + b.data

    def back(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return from_op(out, (x, w, b), back, "dense")


# ----------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {y.shape}")
    k = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ShapeError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.asarray((lse - z[rows, y]).mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, y] -= 1
        return (p * (g / n),)

    return from_op(loss, (logits,), back, "softmax_cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error; a plain array ``target`` is treated as a constant."""
    t = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    _same_shape(pred, t, "mse")
    diff = pred.data - t.data
    n = diff.size
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def back(g):
        gp = diff * (2.0 * g / n)
        return gp, -gp

    return from_op(loss, (pred, t), back, "mse")
