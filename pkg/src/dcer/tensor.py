"""Dense float32 tensors with tape-based reverse-mode autodiff.

The op set is exactly what the fixed architecture needs: matmul, elementwise
arithmetic with numpy broadcasting, shape ops, reductions, softmax/sigmoid/
softplus/gelu, fused layer norm, embedding lookup, and strided periodic
convolutions for the wavelet transform. Every op registers a `TapeRecord`
on its output; `backward` replays the reachable records once, in reverse
topological order, with a fixed deterministic reduction order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def debug_mode() -> bool:
    return getattr(_state, "debug", False)


def set_debug(flag: bool) -> None:
    """Enable per-op finiteness assertions (NaN/Inf detection)."""
    _state.debug = bool(flag)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class enable_grad:
    """Context manager that re-enables tape recording (used inside no_grad)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = True
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A contiguous row-major float32 array plus an optional gradient buffer.

    `requires_grad` marks participation in autodiff; a tensor is a leaf when
    it has no creating record. Only leaves receive `.grad` from `backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record", "no_decay")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype == np.float32:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._record: Optional[TapeRecord] = None
        self.no_decay = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, no_decay: bool = False) -> Tensor:
    """Create a trainable leaf tensor."""
    t = Tensor(data, requires_grad=True)
    t.no_decay = no_decay
    return t


class TapeRecord:
    """One executed op: kind, input nodes, output node id, backward closure.

    `backward(grad_out)` returns one gradient array (or None) per input, in
    input order. Activations needed by the backward are captured in the
    closure. The record holds its inputs but only the id of its output, so
    the graph is a cycle-free chain of strong references pointing upstream.
    """

    __slots__ = ("op", "inputs", "output_id", "backward")

    def __init__(self, op: str, inputs, output_id: int, backward):
        self.op = op
        self.inputs = inputs
        self.output_id = output_id
        self.backward = backward


@dataclass
class Tape:
    """Ordered op records reachable from one root, inputs before outputs."""

    records: list

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        records = []
        visited = set()
        if root._record is not None:
            stack = [(root._record, False)]
            while stack:
                rec, expanded = stack.pop()
                if expanded:
                    records.append(rec)
                    continue
                if id(rec) in visited:
                    continue
                visited.add(id(rec))
                stack.append((rec, True))
                for t in rec.inputs:
                    r = t._record
                    if r is not None and id(r) not in visited:
                        stack.append((r, False))
        return cls(records)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _apply(op: str, out_data: np.ndarray, inputs, backward) -> Tensor:
    if debug_mode() and not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._record = None
    out.no_decay = False
    out.requires_grad = False
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = TapeRecord(op, tuple(inputs), id(out), backward)
    return out


def backward(loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> None:
    """Seed d(loss)/d(loss)=1 and accumulate gradients into leaf `.grad`.

    With `wrt` given, accumulation is restricted to those leaves.
    """
    for t, g in _run_backward(loss):
        if wrt is not None and not any(t is w for w in wrt):
            continue
        t.grad = g if t.grad is None else t.grad + g


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list:
    """Return gradients of `loss` w.r.t. leaf tensors without touching `.grad`."""
    found = {id(t): None for t in wrt}
    for t, g in _run_backward(loss):
        key = id(t)
        if key in found:
            prev = found[key]
            found[key] = g if prev is None else prev + g
    return [found[id(t)] for t in wrt]


def _run_backward(loss: Tensor):
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    tape = Tape.trace(loss)
    if not tape.records:
        if loss.requires_grad:
            yield loss, np.ones_like(loss.data)
        return
    # gradients keyed by the record that produced the tensor
    grads = {id(loss._record): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        gout = grads.pop(id(rec), None)
        if gout is None:
            continue
        gins = rec.backward(gout)
        for t, g in zip(rec.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            producer = t._record
            if producer is not None:
                key = id(producer)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
            else:
                yield t, g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _apply("mul", out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _apply("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (-g,)

    return _apply("neg", -a.data, (a,), bw)


def square(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (g * (2.0 * a.data),)

    return _apply("square", a.data * a.data, (a,), bw)


def absolute(a) -> Tensor:
    """Elementwise |x| with sign subgradient (0 at the kink)."""
    a = _coerce(a)

    def bw(g):
        return (g * np.sign(a.data),)

    return _apply("abs", np.abs(a.data), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _apply("matmul", out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fused affine map over the last axis: x @ w (+ b)."""
    x, w = _coerce(x), _coerce(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(
            f"linear dimensions differ: {x.data.shape} @ {w.data.shape}"
        )
    out = x.data @ w.data
    if b is not None:
        b = _coerce(b)
        out += b.data
        inputs = (x, w, b)
    else:
        inputs = (x, w)

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gx = g @ w.data.T
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = x.data.reshape(-1, x.data.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _apply("linear", out, inputs, bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _coerce(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _apply("transpose", a.data.transpose(axes), (a,), bw)


def swap_last(a: Tensor) -> Tensor:
    nd = a.data.ndim
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def reshape(a: Tensor, shape) -> Tensor:
    a = _coerce(a)
    orig = a.data.shape

    def bw(g):
        return (g.reshape(orig),)

    return _apply("reshape", a.data.reshape(shape), (a,), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _coerce(a)

    def bw(g):
        return (_unbroadcast(g, a.data.shape),)

    return _apply("broadcast", np.broadcast_to(a.data, shape).copy(), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", out, tuple(tensors), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = _coerce(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _apply("narrow", a.data[idx], (a,), bw)


def index_select(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate in backward."""
    a = _coerce(a)
    indices = np.asarray(indices, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _apply("index_select", a.data[indices], (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=np.float32)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _apply("sum", out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=np.float32)
    inv = np.float32(1.0 / n)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g * inv, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk * inv, a.data.shape).copy(),)

    return _apply("mean", out, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _apply("softmax", out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    a = _coerce(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", np.asarray(out, dtype=np.float32), (a,), bw)


def softplus(a: Tensor) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        return (g / (1.0 + np.exp(-x)),)

    return _apply("softplus", np.asarray(out, dtype=np.float32), (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """GELU with the standard tanh approximation:
    0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    a = _coerce(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    th = np.tanh(inner)
    out = np.float32(0.5) * x * (np.float32(1.0) + th)

    def bw(g):
        sech2 = np.float32(1.0) - th * th
        d_inner = _GELU_C * (np.float32(1.0) + np.float32(3.0) * _GELU_A * x * x)
        d = np.float32(0.5) * (np.float32(1.0) + th) + np.float32(0.5) * x * sech2 * d_inner
        return (g * d,)

    return _apply("gelu", out, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Fused layer norm over the last axis; variance epsilon 1e-5."""
    a, gain, bias = _coerce(a), _coerce(gain), _coerce(bias)
    x = a.data
    n = x.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError(
            f"layer_norm expects gain/bias of shape ({n},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv_std
    out = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv_std
        return dx, dgain, dbias

    return _apply("layer_norm", np.asarray(out, dtype=np.float32), (a, gain, bias), bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into `table`; backward scatter-adds into the table."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (full,)

    return _apply("embedding", table.data[ids], (table,), bw)


# ---------------------------------------------------------------------------
# strided periodic convolutions (wavelet analysis / synthesis)
# ---------------------------------------------------------------------------

def _conv_index(out_len: int, taps: int, period: int) -> np.ndarray:
    k = np.arange(out_len, dtype=np.intp)[:, None]
    n = np.arange(taps, dtype=np.intp)[None, :]
    return (2 * k + n) % period


def periodic_conv_down(x: Tensor, filt: Tensor) -> Tensor:
    """out[..., k, c] = sum_n filt[n] * x[..., (2k+n) mod T, c]."""
    x, filt = _coerce(x), _coerce(filt)
    T = x.data.shape[-2]
    taps = filt.data.shape[0]
    idx = _conv_index(T // 2, taps, T)
    gathered = x.data[..., idx, :]
    out = np.einsum("...knc,n->...kc", gathered, filt.data, optimize=True)

    def bw(g):
        gx = gf = None
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for n in range(taps):
                gx[..., idx[:, n], :] += filt.data[n] * g
        if filt.requires_grad:
            gf = np.asarray(
                np.einsum("...knc,...kc->n", gathered, g, optimize=True),
                dtype=np.float32,
            )
        return gx, gf

    return _apply("periodic_conv_down", np.asarray(out, dtype=np.float32), (x, filt), bw)


def periodic_conv_up(c: Tensor, filt: Tensor, out_len: int) -> Tensor:
    """Transpose of `periodic_conv_down`: scatter c through the filter."""
    c, filt = _coerce(c), _coerce(filt)
    taps = filt.data.shape[0]
    idx = _conv_index(c.data.shape[-2], taps, out_len)
    shape = c.data.shape[:-2] + (out_len,) + c.data.shape[-1:]
    out = np.zeros(shape, dtype=np.float32)
    for n in range(taps):
        out[..., idx[:, n], :] += filt.data[n] * c.data

    def bw(g):
        gathered = g[..., idx, :]
        gc = gf = None
        if c.requires_grad:
            gc = np.asarray(
                np.einsum("...knc,n->...kc", gathered, filt.data, optimize=True),
                dtype=np.float32,
            )
        if filt.requires_grad:
            gf = np.asarray(
                np.einsum("...knc,...kc->n", gathered, c.data, optimize=True),
                dtype=np.float32,
            )
        return gc, gf

    return _apply("periodic_conv_up", out, (c, filt), bw)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    passed: bool

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"{status} (max rel err {self.max_rel_err:.3e}, tol {self.tol:.1e})"


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-3,
    tol: float = 1e-2,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar `f` at `x` against central
    finite differences.

    The relative error is the max absolute difference normalized by the
    larger of the two gradients' max magnitudes, which keeps the check
    meaningful when individual entries are near zero.
    """
    if not x.requires_grad:
        raise ContractError("grad_check target must have requires_grad=True")
    y = f(x)
    if y.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    analytic = grad(y, [x])[0]
    if analytic is None:
        analytic = np.zeros_like(x.data)

    fd = np.zeros(x.data.size, dtype=np.float64)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + np.float32(step)
            hi = float(f(x).data.reshape(-1)[0])
            flat[i] = orig - np.float32(step)
            lo = float(f(x).data.reshape(-1)[0])
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)
    fd = fd.reshape(x.data.shape)

    scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-12)
    max_rel = float(np.abs(analytic.astype(np.float64) - fd).max() / scale)
    return GradCheckReport(max_rel_err=max_rel, tol=tol, passed=max_rel <= tol)
