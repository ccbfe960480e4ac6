"""Minimal tape-based reverse-mode autodiff over numpy arrays.

Only the operations the vocoder needs are provided. Layer tensors use a
``(..., channels, length)`` layout; a leading batch axis is optional.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, UsageError


class Tensor:
    """An ndarray plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[-2]

    @property
    def length(self) -> int:
        return self.data.shape[-1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Run ops without recording the tape (inference); intermediates are freed early."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    The recorded graph is released afterwards, so each forward pass can be
    backpropagated exactly once.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    # zero gradient at the origin instead of inf * 0
    safe = np.where(out > 0, out, 1.0)
    return _make(out, (x,), lambda g: (np.where(out > 0, g * 0.5 / safe, 0.0),))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def absolute(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data > floor
    return _make(np.where(mask, x.data, floor), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return expit(v)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    """``x`` where ``x >= 0``, ``alpha * x`` elsewhere."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"leaky_relu slope must lie in [0, 1], got {alpha}")
    slope = np.where(x.data >= 0, 1.0, alpha).astype(x.data.dtype)
    return _make(x.data * slope, (x,), lambda g: (g * slope,))


def gated_activation(a: Tensor, b: Tensor) -> Tensor:
    """tanh(a) * sigmoid(b)."""
    if a.shape != b.shape:
        raise ConfigurationError(f"gate halves differ in shape: {a.shape} vs {b.shape}")
    ta = np.tanh(a.data)
    sb = _sigmoid(b.data)
    return _make(
        ta * sb,
        (a, b),
        lambda g: (g * sb * (1.0 - ta * ta), g * ta * sb * (1.0 - sb)),
    )


# reductions / structure -------------------------------------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return _make(
        np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.data.dtype),)
    )


def getitem(x: Tensor, index) -> Tensor:
    def fn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g) if _needs_add_at(index) else out.__setitem__(index, g)
        return (out,)

    return _make(x.data[index], (x,), fn)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(data, tensors, fn)


# convolution layers ---------------------------------------------------------


def _check_weight(x: Tensor, w: Tensor) -> None:
    if w.data.ndim != 2 or w.shape[1] != x.channels:
        raise ConfigurationError(
            f"weight of shape {w.shape} cannot consume {x.channels} input channels"
        )


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise convolution: ``out[c, t] = sum_k w[c, k] x[k, t] + b[c]``."""
    _check_weight(x, w)
    out = np.matmul(w.data, x.data)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ConfigurationError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
        out = out + b.data[:, None]

    def fn(g):
        gx = np.matmul(w.data.T, g)
        gw = np.matmul(g, np.swapaxes(x.data, -1, -2))
        while gw.ndim > 2:
            gw = gw.sum(axis=0)
        grads = [gx, gw]
        if b is not None:
            gb = g.sum(axis=-1)
            while gb.ndim > 1:
                gb = gb.sum(axis=0)
            grads.append(gb)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, fn)


def _shift(v: np.ndarray, d: int) -> np.ndarray:
    """``out[..., t] = v[..., t - d]`` with zeros outside the signal."""
    out = np.zeros_like(v)
    n = v.shape[-1]
    if d >= n or -d >= n:
        return out
    if d > 0:
        out[..., d:] = v[..., : n - d]
    elif d < 0:
        out[..., :d] = v[..., -d:]
    else:
        out[...] = v
    return out


class Gather:
    """Per-sample tap gather ``out[..., t] = v[..., t + step[t]]`` (zero out of range).

    Built from a per-sample signed offset array of shape ``(T,)`` or
    ``(B, T)``. Index arrays are computed once and reused for the forward
    gather and the backward scatter-add.
    """

    def __init__(self, step: np.ndarray):
        step = np.asarray(step, dtype=np.int64)
        self.batched = step.ndim == 2
        steps = step if self.batched else step[None, :]
        nb, n = steps.shape
        src = np.arange(n)[None, :] + steps
        self.valid = (src >= 0) & (src < n)
        self.src = np.where(self.valid, src, 0)
        self.shape = (nb, n)
        self._scatter = None

    def forward(self, v: np.ndarray) -> np.ndarray:
        n = v.shape[-1]
        if n != self.shape[1]:
            raise ConfigurationError(f"plan covers {self.shape[1]} samples, input has {n}")
        if self.batched:
            if v.ndim != 3 or v.shape[0] != self.shape[0]:
                raise ConfigurationError("batched plan needs a (B, C, T) input of matching batch")
            idx = self.src[:, None, :]
            out = np.take_along_axis(v, np.broadcast_to(idx, v.shape), axis=-1)
            return out * self.valid[:, None, :]
        out = v[..., self.src[0]]
        return out * self.valid[0]

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        """Scatter-add ``g`` back to the source positions."""
        from scipy import sparse

        nb, n = self.shape
        if self._scatter is None:
            rows, cols = np.nonzero(self.valid)
            flat_src = rows * n + self.src[rows, cols]
            flat_dst = rows * n + cols
            self._scatter = sparse.csr_matrix(
                (np.ones(flat_src.size), (flat_src, flat_dst)), shape=(nb * n, nb * n)
            )
        m = self._scatter
        if self.batched:
            c = g.shape[1]
            flat = g.transpose(1, 0, 2).reshape(c, nb * n)
            out = (m @ flat.T).T.reshape(c, nb, n).transpose(1, 0, 2)
        else:
            lead = g.shape[:-1]
            flat = g.reshape(-1, n)
            out = (m @ flat.T).T.reshape(*lead, n)
        return np.ascontiguousarray(out, dtype=g.dtype)


def _three_tap(x: Tensor, wc, wp, wf, b, past: np.ndarray, future: np.ndarray, adj_past, adj_future):
    for w in (wc, wp, wf):
        _check_weight(x, w)
    if not (wc.shape == wp.shape == wf.shape):
        raise ConfigurationError("the three taps must share one shape")
    out = np.matmul(wc.data, x.data) + np.matmul(wp.data, past) + np.matmul(wf.data, future)
    if b is not None:
        out = out + b.data[:, None]

    def red(m):
        while m.ndim > 2:
            m = m.sum(axis=0)
        return m

    def fn(g):
        gx = (
            np.matmul(wc.data.T, g)
            + adj_past(np.matmul(wp.data.T, g))
            + adj_future(np.matmul(wf.data.T, g))
        )
        grads = [
            gx,
            red(np.matmul(g, np.swapaxes(x.data, -1, -2))),
            red(np.matmul(g, np.swapaxes(past, -1, -2))),
            red(np.matmul(g, np.swapaxes(future, -1, -2))),
        ]
        if b is not None:
            gb = g.sum(axis=-1)
            while gb.ndim > 1:
                gb = gb.sum(axis=0)
            grads.append(gb)
        return grads

    parents = (x, wc, wp, wf) if b is None else (x, wc, wp, wf, b)
    return _make(out, parents, fn)


def dilated_conv1d(x: Tensor, wc: Tensor, wp: Tensor, wf: Tensor, b: Tensor | None, d: int) -> Tensor:
    """Non-causal three-tap dilated convolution with zero padding.

    ``out[:, t] = wc @ x[:, t] + wp @ x[:, t - d] + wf @ x[:, t + d] + b``.
    """
    if int(d) != d or d < 1:
        raise ConfigurationError(f"dilation must be a positive integer, got {d}")
    d = int(d)
    past = _shift(x.data, d)
    future = _shift(x.data, -d)
    return _three_tap(
        x, wc, wp, wf, b, past, future, lambda g: _shift(g, -d), lambda g: _shift(g, d)
    )


def pitch_dilated_conv1d(x: Tensor, wc: Tensor, wp: Tensor, wf: Tensor, b: Tensor | None, plan) -> Tensor:
    """Three-tap convolution whose gap varies per sample.

    ``plan`` is a :class:`~qpv.features.DilationPlan` (or anything with
    ``past_gather``/``future_gather`` attributes); its offsets must cover
    every sample of ``x``.
    """
    past_g, future_g = plan.past_gather, plan.future_gather
    past = past_g.forward(x.data)
    future = future_g.forward(x.data)
    return _three_tap(x, wc, wp, wf, b, past, future, past_g.adjoint, future_g.adjoint)


def weight_norm(v: Tensor, g: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Reparametrise a weight as ``g * v / ||v||`` with one norm per output row.

    ``v`` may be a single matrix ``(out, in)`` or a stack ``(taps, out, in)``;
    in the stacked case the norm runs jointly over taps and inputs.
    """
    if axes is None:
        axes = (-1,) if v.data.ndim == 2 else (0, -1)
    sq = np.sum(v.data * v.data, axis=axes, keepdims=True)
    norm = np.sqrt(sq)
    safe = np.where(norm > 0, norm, 1.0)
    gshape = norm.shape
    gv = g.data.reshape(gshape)
    unit = np.where(norm > 0, v.data / safe, 0.0)
    out = gv * unit

    def fn(grad):
        gg = np.sum(grad * unit, axis=axes, keepdims=True)
        gv_ = np.where(norm > 0, gv / safe * (grad - unit * gg), 0.0)
        return gv_, gg.reshape(g.shape)

    return _make(out, (v, g), fn)


# gradient checking -------------------------------------------------------


def grad_check(fn: Callable[..., Tensor], inputs: Iterable[np.ndarray], eps: float = 1e-6) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``fn`` maps fresh :class:`Tensor` leaves (one per input array) to a scalar
    tensor. The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: function produced a non-finite value")
    backward(out)
    worst = 0.0
    for i, a in enumerate(arrays):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(a)
        for j in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][j] += eps
            minus[i][j] -= eps
            fp = fn(*[Tensor(x) for x in plus]).data
            fm = fn(*[Tensor(x) for x in minus]).data
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: non-finite value under perturbation")
            numeric = float(fp - fm) / (2.0 * eps)
            err = abs(float(analytic[j]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
