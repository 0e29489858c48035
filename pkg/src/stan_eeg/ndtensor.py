"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op evaluates eagerly with numpy and, when any input
requires a gradient, appends a record to the current :class:`Tape`.
``backward`` replays the tape in exact reverse order.

Ops accept leading batch axes wherever that is natural (matmul, convolutions,
softmax, layer norm); a leading axis of size one is the single-window case.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, InputTooShortError, NonFiniteError, ShapeError

LN_EPS = 1e-5


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of executed differentiable ops.

    Records are appended in execution order, so every op's inputs precede it;
    :meth:`backward` walks them in exact reverse.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self.records.append(_Record(out, inputs, backward))

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ContractError("backward called on an empty tape")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            g = rec.out.grad
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi
        for rec in self.records:
            for inp in rec.inputs:
                if inp.requires_grad and inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
        self.clear()


class _State(threading.local):
    def __init__(self):
        self.stack: list[Tape] = [Tape()]
        self.grad_enabled = True


_state = _State()


def current_tape() -> Tape:
    return _state.stack[-1]


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def backward(loss: Tensor) -> None:
    """Back-propagate ``loss`` through the current tape, then clear it."""
    current_tape().backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        if all(np.isfinite(t.data).all() for t in inputs):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
        raise NonFiniteError(f"{op} received non-finite input")
    track = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, track)
    if track:
        current_tape().record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    g = g.sum(axis=tuple(range(g.ndim - len(shape)))) if g.ndim > len(shape) else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch axes do not broadcast: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                # fold batch axes into rows instead of summing a stack of products
                k, m = bd.shape
                gb = np.broadcast_to(ad, g.shape[:-1] + (k,)).reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- structural


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def take(x: Tensor, index) -> Tensor:
    """Basic or integer-array indexing."""
    src = x.shape

    basic = isinstance(index, (int, slice)) or (
        isinstance(index, tuple) and all(isinstance(i, (int, slice)) or i is Ellipsis for i in index)
    )

    def bw(g):
        out = np.zeros(src)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _result(np.array(x.data[index]), (x,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- pointwise


def _tanh(x):
    y = np.tanh(x)
    return y, lambda g: g * (1.0 - y * y)


def _relu(x):
    mask = x > 0
    return np.where(mask, x, 0.0), lambda g: g * mask


def _sigmoid(x):
    y = expit(x)
    return y, lambda g: g * y * (1.0 - y)


def _softplus(x):
    return np.logaddexp(0.0, x), lambda g: g * expit(x)


_POINTWISE = {"tanh": _tanh, "relu": _relu, "sigmoid": _sigmoid, "softplus": _softplus}


def pointwise(x: Tensor, f: str) -> Tensor:
    try:
        fn = _POINTWISE[f]
    except KeyError:
        raise ContractError(f"unknown pointwise function {f!r}") from None
    y, dfn = fn(x.data)
    return _result(y, (x,), lambda g: (dfn(g),), f)


def tanh(x: Tensor) -> Tensor:
    return pointwise(x, "tanh")


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return pointwise(x, "sigmoid")


def softplus(x: Tensor) -> Tensor:
    return pointwise(x, "softplus")


# ---------------------------------------------------------------- normalisers


def _ordered_sum(a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    """Sum after sorting along ``axis``: independent of the order of the terms."""
    return np.sort(a, axis=axis).sum(axis=axis, keepdims=keepdims)


def sorted_sum(x: Tensor, axis: int) -> Tensor:
    """Sum along ``axis`` whose rounding does not depend on element order."""
    axis = axis % x.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(_ordered_sum(x.data, axis), (x,), bw, "sorted_sum")


def softmax(x: Tensor, axis: int = -1, order_invariant: bool = False) -> Tensor:
    """Max-shifted softmax. ``order_invariant`` makes every output bitwise
    independent of how the entries along ``axis`` are arranged."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    denom = _ordered_sum(e, axis, keepdims=True) if order_invariant else e.sum(axis=axis, keepdims=True)
    y = e / denom

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then apply a per-feature affine map."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}, {bias.shape} do not match last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as zero."""
    xd = x.data
    nrm = np.sqrt((xd * xd).sum(axis=axis))

    def bw(g):
        n = np.expand_dims(nrm, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, xd / safe, 0.0) * np.expand_dims(g, axis),)

    return _result(nrm, (x,), bw, "l2_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: a no-op outside training."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor._wrap(mask, False))


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand ``np.einsum`` without BLAS dispatch.

    Every output element is reduced in the same fixed index order, so results
    do not depend on an element's position in the batch. Each input index must
    appear in the other input or in the output.
    """
    ins, out_idx = spec.replace(" ", "").split("->")
    ia, ib = ins.split(",")
    for idx, other in ((ia, ib), (ib, ia)):
        if any(c not in other + out_idx for c in idx.replace("...", "")):
            raise ContractError(f"einsum {spec!r}: every input index must be shared or kept")
    try:
        out = np.einsum(spec, a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"einsum {spec!r} on {a.shape} and {b.shape}: {exc}") from None

    def grad(g, target: str, other: str, other_data: np.ndarray, shape) -> np.ndarray:
        # keep broadcast axes in the result, then fold them back onto ``shape``
        keep = target if "..." in target or "..." not in out_idx + other else "..." + target
        return _unbroadcast(np.einsum(f"{out_idx},{other}->{keep}", g, other_data), shape)

    def bw(g):
        ga = grad(g, ia, ib, b.data, a.shape) if a.requires_grad else None
        gb = grad(g, ib, ia, a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw, "einsum")


# ---------------------------------------------------------------- convolution


def conv1d(x: Tensor, kernels: Tensor) -> Tensor:
    """Valid 1-D cross-correlation.

    ``x`` is ``[..., n_in, T]`` and ``kernels`` is ``[n_out, n_in, k]``;
    the result is ``[..., n_out, T - k + 1]``.
    """
    *lead, n_in, T = x.shape
    n_out, k_in, k = kernels.shape
    if k_in != n_in:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if T < k:
        raise InputTooShortError(f"conv1d input length {T} shorter than kernel {k}")
    xd, kd = x.data, kernels.data
    win = sliding_window_view(xd, k, axis=-1)  # [..., n_in, T', k]
    out = np.einsum("...itk,oik->...ot", win, kd, optimize=True)
    t_out = T - k + 1

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for j in range(k):
                gx[..., j:j + t_out] += np.einsum("...ot,oi->...it", g, kd[:, :, j], optimize=True)
        if kernels.requires_grad:
            gk = np.einsum("...ot,...itk->oik", g, win, optimize=True)
        return gx, gk

    return _result(out, (x, kernels), bw, "conv1d")


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D cross-correlation.

    ``x`` is ``[..., c, h, w]`` and ``kernels`` is ``[f, c, kh, kw]``. With the
    default stride the result is ``[..., f, h - kh + 1, w - kw + 1]``.
    """
    *lead, c, h, w = x.shape
    f, kc, kh, kw = kernels.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    if h < kh or w < kw:
        raise InputTooShortError(f"conv2d input {h}x{w} smaller than kernel {kh}x{kw}")
    xd, kd = x.data, kernels.data
    win = sliding_window_view(xd, (kh, kw), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    oh, ow = win.shape[-4], win.shape[-3]
    out = np.einsum("...cyxij,fcij->...fyx", win, kd, optimize=True)

    def bw(g):
        gx = gk = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gx[..., i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += np.einsum(
                        "...fyx,fc->...cyx", g, kd[:, :, i, j], optimize=True
                    )
        if kernels.requires_grad:
            gk = np.einsum("...fyx,...cyxij->fcij", g, win, optimize=True)
        return gx, gk

    return _result(out, (x, kernels), bw, "conv2d")


# ---------------------------------------------------------------- checking


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``t``."""
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * h)
    return out.reshape(t.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative difference, zero when both are zero."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_gradients(
    fn: Callable[[], Tensor], tensors: Iterable[Tensor], h: float = 1e-5
) -> dict[int, float]:
    """Compare tape gradients of ``fn`` with finite differences.

    Returns the relative error per tensor, keyed by position in ``tensors``.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    return {i: relative_error(t.grad, numerical_grad(fn, t, h)) for i, t in enumerate(tensors)}
