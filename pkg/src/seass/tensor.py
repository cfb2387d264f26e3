"""Dense numpy kernel with a reverse-accumulation tape.

Every op takes :class:`Var` inputs and returns a :class:`Var`. When any input
belongs to a :class:`Tape`, the op appends a backward closure to it; with no
tape in play the op is a plain forward computation, which is what inference
and decoding use.

Arrays are numpy arrays; matrices are stored ``(out, in)`` and applied as
``x @ W.T`` so that a GRU weight acting on ``[x; h]`` has shape
``(hidden, input + hidden)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


class Var:
    """A value on (or off) a tape, with an accumulated gradient."""

    __slots__ = ("value", "grad", "tape", "cache")

    def __init__(self, value, tape: "Tape | None" = None):
        self.value = np.asarray(value)
        self.grad = None
        self.tape = tape
        self.cache = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, taped={self.tape is not None})"


class Tape:
    """Ordered record of executed ops; ``backward`` replays them in reverse."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []

    def __len__(self):
        return len(self._ops)

    def var(self, value) -> Var:
        """Register a leaf whose gradient should be collected."""
        return Var(value, self)

    def record(self, backward: Callable[[], None]) -> None:
        self._ops.append(backward)

    def backward(self, out: Var, seed=None) -> None:
        if out.tape is not self:
            raise ValueError("output was not produced on this tape")
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=out.value.dtype)
        for op in reversed(self._ops):
            op()
        self._ops.clear()


def const(value) -> Var:
    return Var(value, None)


def grad_of(v: Var) -> np.ndarray:
    """Gradient of a leaf after backward; zeros when it was never reached."""
    return np.zeros_like(v.value) if v.grad is None else v.grad


def _tape_of(*vs: Var) -> Tape | None:
    for v in vs:
        if v.tape is not None:
            return v.tape
    return None


def _acc(v: Var, g) -> None:
    if v.tape is None:
        return
    v.grad = g if v.grad is None else v.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _out(value, tape: Tape | None) -> Var:
    return Var(value, tape)


# elementwise ---------------------------------------------------------------

def add(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    out = _out(a.value + b.value, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _acc(a, _unbroadcast(out.grad, a.value.shape))
            _acc(b, _unbroadcast(out.grad, b.value.shape))
        tape.record(backward)
    return out


def mul(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    out = _out(a.value * b.value, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _acc(a, _unbroadcast(out.grad * b.value, a.value.shape))
            _acc(b, _unbroadcast(out.grad * a.value, b.value.shape))
        tape.record(backward)
    return out


def scale(a: Var, c: float) -> Var:
    tape = a.tape
    out = _out(a.value * c, tape)
    if tape is not None:
        def backward():
            if out.grad is not None:
                _acc(a, out.grad * c)
        tape.record(backward)
    return out


_sigmoid = expit


def sigmoid(a: Var) -> Var:
    y = _sigmoid(a.value)
    out = _out(y, a.tape)
    if a.tape is not None:
        def backward():
            if out.grad is not None:
                _acc(a, out.grad * y * (1.0 - y))
        a.tape.record(backward)
    return out


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)
    out = _out(y, a.tape)
    if a.tape is not None:
        def backward():
            if out.grad is not None:
                _acc(a, out.grad * (1.0 - y * y))
        a.tape.record(backward)
    return out


def dropout(a: Var, p: float, rng: np.random.Generator | None, train: bool) -> Var:
    """Inverted dropout: kept units are scaled by ``1/(1-p)``; identity at inference."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    keep = 1.0 - p
    mask = (rng.random(a.value.shape) < keep).astype(a.value.dtype) / keep
    out = _out(a.value * mask, a.tape)
    if a.tape is not None:
        def backward():
            if out.grad is not None:
                _acc(a, out.grad * mask)
        a.tape.record(backward)
    return out


# shape plumbing ------------------------------------------------------------

def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    out = _out(a.value.reshape(shape), a.tape)
    if a.tape is not None:
        def backward():
            if out.grad is not None:
                _acc(a, out.grad.reshape(old))
        a.tape.record(backward)
    return out


def concat(vs: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*vs)
    out = _out(np.concatenate([v.value for v in vs], axis=axis), tape)
    if tape is not None:
        sizes = np.cumsum([v.value.shape[axis] for v in vs])[:-1]

        def backward():
            if out.grad is None:
                return
            for v, g in zip(vs, np.split(out.grad, sizes, axis=axis)):
                _acc(v, g)
        tape.record(backward)
    return out


def stack(vs: Sequence[Var], axis: int = 1) -> Var:
    tape = _tape_of(*vs)
    out = _out(np.stack([v.value for v in vs], axis=axis), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            for i, v in enumerate(vs):
                _acc(v, np.take(out.grad, i, axis=axis))
        tape.record(backward)
    return out


def take(a: Var, index: int, axis: int = 1) -> Var:
    """Select one slice along ``axis`` (a time step of a ``(B, n, D)`` array)."""
    out = _out(np.take(a.value, index, axis=axis), a.tape)
    if a.tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(a.value)
            sl = [slice(None)] * a.value.ndim
            sl[axis] = index
            g[tuple(sl)] = out.grad
            _acc(a, g)
        a.tape.record(backward)
    return out


def embedding(table: Var, ids: np.ndarray) -> Var:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise IndexError(f"token id out of range for embedding table of size {table.value.shape[0]}")
    out = _out(table.value[ids], table.tape)
    if table.tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(table.value)
            np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.value.shape[1]))
            _acc(table, g)
        table.tape.record(backward)
    return out


# linear algebra ------------------------------------------------------------

def linear(x: Var, W: Var, b: Var | None = None) -> Var:
    """``x @ W.T + b`` over any number of leading axes of ``x``."""
    if x.value.shape[-1] != W.value.shape[1]:
        raise ShapeError(f"linear: input dim {x.value.shape[-1]} does not match weight {W.value.shape}")
    y = x.value @ W.value.T
    if b is not None:
        y = y + b.value
    tape = _tape_of(x, W) if b is None else _tape_of(x, W, b)
    out = _out(y, tape)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            g2 = g.reshape(-1, g.shape[-1])
            if W.tape is not None:
                _acc(W, g2.T @ x.value.reshape(-1, x.value.shape[-1]))
            if b is not None and b.tape is not None:
                _acc(b, g2.sum(axis=0))
            if x.tape is not None:
                _acc(x, g @ W.value)
        tape.record(backward)
    return out


def inner(x: Var, v: Var) -> Var:
    """Contract the last axis of ``x`` with vector ``v``."""
    if x.value.shape[-1] != v.value.shape[0]:
        raise ShapeError(f"inner: {x.value.shape} against vector {v.value.shape}")
    tape = _tape_of(x, v)
    out = _out(x.value @ v.value, tape)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            if v.tape is not None:
                _acc(v, g.reshape(-1) @ x.value.reshape(-1, v.value.shape[0]))
            if x.tape is not None:
                _acc(x, g[..., None] * v.value)
        tape.record(backward)
    return out


def weighted_sum(alpha: Var, values: Var) -> Var:
    """``c[b] = sum_i alpha[b, i] * values[b, i]`` for ``(B, n)`` weights and ``(B, n, D)`` values."""
    tape = _tape_of(alpha, values)
    out = _out(np.einsum("bn,bnd->bd", alpha.value, values.value), tape)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            if alpha.tape is not None:
                _acc(alpha, np.einsum("bd,bnd->bn", g, values.value))
            if values.tape is not None:
                _acc(values, alpha.value[:, :, None] * g[:, None, :])
        tape.record(backward)
    return out


# normalizers ---------------------------------------------------------------

def _softmax(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask > 0, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Var, mask: np.ndarray | None = None) -> Var:
    """Softmax over the last axis; positions where ``mask == 0`` get exactly zero weight."""
    if a.value.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if mask is not None and not np.all(np.asarray(mask).reshape(-1, a.value.shape[-1]).sum(axis=-1) > 0):
        raise ValueError("softmax mask leaves a row with no positions")
    y = _softmax(a.value, mask)
    out = _out(y, a.tape)
    if a.tape is not None:
        def backward():
            g = out.grad
            if g is not None:
                _acc(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))
        a.tape.record(backward)
    return out


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def nll(logits: Var, targets: np.ndarray, mask: np.ndarray | None = None) -> Var:
    """Summed negative log-likelihood of ``targets`` under ``softmax(logits)``.

    Rows with ``mask == 0`` contribute nothing.
    """
    targets = np.asarray(targets)
    rows = np.arange(targets.shape[0])
    logp = log_softmax_np(logits.value)
    w = np.ones(targets.shape[0], dtype=logits.value.dtype) if mask is None else np.asarray(mask, dtype=logits.value.dtype)
    out = _out(np.asarray(-(logp[rows, targets] * w).sum()), logits.tape)
    if logits.tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.exp(logp)
            g[rows, targets] -= 1.0
            _acc(logits, g * (w * out.grad)[:, None])
        logits.tape.record(backward)
    return out


def maxout_pairs(r: Var) -> Var:
    """Max over consecutive pairs along the last axis: ``2d -> d``."""
    n = r.value.shape[-1]
    if n % 2:
        raise ShapeError(f"maxout needs an even last dimension, got {n}")
    pairs = r.value.reshape(r.value.shape[:-1] + (n // 2, 2))
    pick = np.argmax(pairs, axis=-1)
    y = np.take_along_axis(pairs, pick[..., None], axis=-1)[..., 0]
    out = _out(y, r.tape)
    if r.tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(pairs)
            np.put_along_axis(g, pick[..., None], out.grad[..., None], axis=-1)
            _acc(r, g.reshape(r.value.shape))
        r.tape.record(backward)
    return out


def total(vs: Sequence[Var]) -> Var:
    """Sum of scalar Vars."""
    tape = _tape_of(*vs)
    out = _out(np.asarray(sum(float(v.value) for v in vs), dtype=vs[0].value.dtype), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            for v in vs:
                _acc(v, out.grad)
        tape.record(backward)
    return out


# recurrent cell ------------------------------------------------------------

@dataclass(frozen=True)
class GruWeights:
    Wz: Var
    Wr: Var
    Wh: Var
    name: str = "gru"


def gru_cell_forward(x: Var, h_prev: Var, w: GruWeights, mask: np.ndarray | None = None) -> Var:
    """One GRU step on ``[x; h_prev]`` without biases.

    ``mask`` (shape ``(B,)``) holds rows at ``h_prev`` where it is zero, which
    lets padded batches run a fixed number of steps. The gate activations
    ``(z, r, h_tilde)`` are left on ``out.cache``.
    """
    nx = x.value.shape[-1]
    nh = h_prev.value.shape[-1]
    for label, W in (("Wz", w.Wz), ("Wr", w.Wr), ("Wh", w.Wh)):
        if W.value.shape != (nh, nx + nh):
            raise ShapeError(
                f"{w.name}.{label} has shape {W.value.shape}, expected {(nh, nx + nh)} for input {nx} and hidden {nh}"
            )
    xv, hv = x.value, h_prev.value
    xh = np.concatenate([xv, hv], axis=-1)
    z = _sigmoid(xh @ w.Wz.value.T)
    r = _sigmoid(xh @ w.Wr.value.T)
    xrh = np.concatenate([xv, r * hv], axis=-1)
    ht = np.tanh(xrh @ w.Wh.value.T)
    hn = (1.0 - z) * hv + z * ht
    if mask is not None:
        m = np.asarray(mask, dtype=hv.dtype)[:, None]
        hn = m * hn + (1.0 - m) * hv
    tape = _tape_of(x, h_prev, w.Wz, w.Wr, w.Wh)
    out = _out(hn, tape)
    out.cache = (z, r, ht)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            if mask is not None:
                g_hn = m * g
                g_h = (1.0 - m) * g
            else:
                g_hn = g
                g_h = 0.0
            g_h = g_h + g_hn * (1.0 - z)
            a_h = g_hn * z * (1.0 - ht * ht)
            a_z = g_hn * (ht - hv) * z * (1.0 - z)
            g_xrh = a_h @ w.Wh.value
            g_rh = g_xrh[..., nx:]
            a_r = g_rh * hv * r * (1.0 - r)
            g_h = g_h + g_rh * r
            g_xh = a_z @ w.Wz.value + a_r @ w.Wr.value
            _acc(w.Wh, a_h.T @ xrh)
            _acc(w.Wz, a_z.T @ xh)
            _acc(w.Wr, a_r.T @ xh)
            _acc(x, g_xrh[..., :nx] + g_xh[..., :nx])
            _acc(h_prev, g_h + g_xh[..., nx:])
        tape.record(backward)
    return out


# gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(
    f: Callable[[Mapping[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-4,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` with central finite differences.

    ``f`` receives a mapping of name to :class:`Var` and must be deterministic.
    Parameter arrays are perturbed in place and restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tape = Tape()
    leaves = {k: tape.var(v) for k, v in params.items()}
    loss = f(leaves)
    if not np.isfinite(loss.value):
        raise FloatingPointError(f"non-finite loss {float(loss.value)}")
    if loss.tape is tape:
        tape.backward(loss)
    analytic = {k: grad_of(v) for k, v in leaves.items()}

    def evaluate() -> float:
        val = float(f({k: const(v) for k, v in params.items()}).value)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss {val}")
        return val

    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for name, arr in params.items():
        flat = arr.reshape(-1)
        numeric = np.empty(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        err = float(relative_error(analytic[name].reshape(-1), numeric, floor).max()) if flat.size else 0.0
        report.per_param[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
        report.n_checked += flat.size
    return report
