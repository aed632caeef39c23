"""Minimal dense-tensor reverse-mode autodiff.

Covers exactly the operations the dialog GNN needs: affine layers, the
usual pointwise nonlinearities, softmax / cross entropy, dot products,
embedding lookups, a fused GRU cell, and a few structural ops (stack,
concat, weighted sum).  Everything is float64 so finite-difference
checks have headroom.

A Tape records executed operations in order; backward() replays them in
exact reverse, accumulating additively into shared inputs.  Tapes are
single-threaded.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


_node_counter = itertools.count()

# the tape currently recording, if any
_ACTIVE: Optional["Tape"] = None


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "node_id")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)

    @property
    def shape(self):
        return self.values.shape

    @staticmethod
    def const(values) -> "Tensor":
        return Tensor(values, requires_grad=False)

    @staticmethod
    def param(values) -> "Tensor":
        return Tensor(values, requires_grad=True)

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeRecord:
    input_ids: tuple
    output_id: int
    backward: Callable[[], None]


class Tape:
    """Ordered record of executed ops; context manager activates recording."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("nested tapes are not supported")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def backward(self, loss: Tensor):
        if loss.values.shape != ():
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.values.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for rec in reversed(self.records):
            rec.backward()


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _record(inputs: Sequence[Tensor], out: Tensor, backward: Callable[[], None]):
    out.requires_grad = any(t.requires_grad for t in inputs)
    if _ACTIVE is not None and out.requires_grad:
        _ACTIVE.records.append(
            TapeRecord(tuple(t.node_id for t in inputs), out.node_id, backward)
        )


def _out_grad(out: Tensor) -> Optional[np.ndarray]:
    return out.grad


# ---------------------------------------------------------------------------
# affine / pointwise ops


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = W x + b.  x may be a vector (n,) or a batch (B, n)."""
    if w.values.ndim != 2:
        raise ShapeError(f"linear expects a matrix W, got shape {w.shape}")
    m, n = w.values.shape
    if x.values.ndim not in (1, 2) or x.values.shape[-1] != n:
        raise ShapeError(f"linear shape mismatch: W {w.shape} vs x {x.shape}")
    if b is not None and b.values.shape != (m,):
        raise ShapeError(f"linear shape mismatch: W {w.shape} vs b {b.shape}")
    y = x.values @ w.values.T
    if b is not None:
        y = y + b.values
    out = Tensor(y)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        if x.values.ndim == 1:
            _accumulate(w, np.outer(g, x.values))
            _accumulate(x, w.values.T @ g)
        else:
            _accumulate(w, g.T @ x.values)
            _accumulate(x, g @ w.values)
        if b is not None:
            _accumulate(b, g if g.ndim == 1 else g.sum(axis=0))

    _record([x, w] + ([b] if b is not None else []), out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(0.0, x.values))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, g * (x.values > 0.0))

    _record([x], out, backward)
    return out


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # branch on the sign so neither exp overflows
    pos = v >= 0
    r = np.empty_like(v)
    r[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    r[~pos] = ev / (1.0 + ev)
    return r


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.values)
    out = Tensor(s)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, g * s * (1.0 - s))

    _record([x], out, backward)
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.values)
    out = Tensor(t)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, g * (1.0 - t * t))

    _record([x], out, backward)
    return out


def softmax(x: Tensor) -> Tensor:
    if x.values.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    z = x.values - x.values.max()
    e = np.exp(z)
    s = e / e.sum()
    out = Tensor(s)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, s * (g - np.dot(g, s)))

    _record([x], out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, g)

    _record([a, b], out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values - b.values)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, -g)

    _record([a, b], out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values * b.values)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    _record([a, b], out, backward)
    return out


def scale(s: Tensor, x: Tensor) -> Tensor:
    """Scalar tensor times tensor."""
    if s.values.shape != ():
        raise ShapeError(f"scale expects a scalar multiplier, got shape {s.shape}")
    out = Tensor(s.values * x.values)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(s, np.sum(g * x.values))
        _accumulate(x, g * s.values)

    _record([s, x], out, backward)
    return out


def smul(c: float, x: Tensor) -> Tensor:
    """Constant times tensor."""
    out = Tensor(c * x.values)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, c * g)

    _record([x], out, backward)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 1 or b.values.ndim != 1 or a.values.shape != b.values.shape:
        raise ShapeError(f"dot length mismatch: {a.shape} vs {b.shape}")
    out = Tensor(np.dot(a.values, b.values))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    _record([a, b], out, backward)
    return out


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.values))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(x, g * np.ones_like(x.values))

    _record([x], out, backward)
    return out


# ---------------------------------------------------------------------------
# structural ops


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    for p in parts:
        if p.values.shape != ():
            raise ShapeError(f"stack expects scalars, got shape {p.values.shape}")
    out = Tensor(np.array([p.values for p in parts]))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        for i, p in enumerate(parts):
            _accumulate(p, g[i])

    _record(list(parts), out, backward)
    return out


def get(x: Tensor, i: int) -> Tensor:
    if x.values.ndim != 1:
        raise ShapeError(f"get expects a vector, got shape {x.shape}")
    out = Tensor(x.values[i])

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        buf = np.zeros_like(x.values)
        buf[i] = g
        _accumulate(x, buf)

    _record([x], out, backward)
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ShapeError(f"concat expects vectors, got {a.shape} and {b.shape}")
    na = a.values.shape[0]
    out = Tensor(np.concatenate([a.values, b.values]))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, g[:na])
        _accumulate(b, g[na:])

    _record([a, b], out, backward)
    return out


def row(e: Tensor, i: int) -> Tensor:
    """Embedding lookup of a single row."""
    out = Tensor(e.values[i].copy())

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        buf = np.zeros_like(e.values)
        buf[i] = g
        _accumulate(e, buf)

    _record([e], out, backward)
    return out


def rows(e: Tensor, idx) -> Tensor:
    """Embedding lookup of a batch of rows; duplicate indices accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(e.values[idx].copy())

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        buf = np.zeros_like(e.values)
        np.add.at(buf, idx, g)
        _accumulate(e, buf)

    _record([e], out, backward)
    return out


def weighted_sum(w: Tensor, xs: Sequence[Tensor]) -> Tensor:
    """out = sum_k w[k] * xs[k] for vector xs of equal shape."""
    if w.values.ndim != 1 or len(xs) != w.values.shape[0]:
        raise ShapeError(f"weighted_sum: {len(xs)} terms vs weights {w.shape}")
    acc = np.zeros_like(xs[0].values)
    for k, x in enumerate(xs):
        if x.values.shape != xs[0].values.shape:
            raise ShapeError(f"weighted_sum term shape mismatch: {x.shape} vs {xs[0].shape}")
        acc = acc + w.values[k] * x.values
    out = Tensor(acc)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        gw = np.array([np.sum(g * x.values) for x in xs])
        _accumulate(w, gw)
        for k, x in enumerate(xs):
            _accumulate(x, w.values[k] * g)

    _record([w] + list(xs), out, backward)
    return out


def where_rows(mask, a: Tensor, b: Tensor) -> Tensor:
    """Row-select between two (B, d) tensors by a boolean mask of length B."""
    mask = np.asarray(mask, dtype=bool)
    if a.values.shape != b.values.shape:
        raise ShapeError(f"where_rows shape mismatch: {a.shape} vs {b.shape}")
    sel = mask[:, None]
    out = Tensor(np.where(sel, a.values, b.values))

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        _accumulate(a, np.where(sel, g, 0.0))
        _accumulate(b, np.where(sel, 0.0, g))

    _record([a, b], out, backward)
    return out


# ---------------------------------------------------------------------------
# GRU cell (fused: one tape record, hand-derived backward)


@dataclass
class GruParams:
    """Standard reset-before-candidate GRU: z, r gates then candidate state."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    @staticmethod
    def init(in_dim: int, hid_dim: int, rng: np.random.Generator,
             z_bias: float = 0.0) -> "GruParams":
        """``z_bias`` shifts the update-gate bias, biasing the cell toward
        keeping its state (the usual forget-gate-bias trick)."""
        bound = 1.0 / np.sqrt(hid_dim)

        def w(r, c):
            return Tensor.param(rng.uniform(-bound, bound, size=(r, c)))

        def b(r, offset=0.0):
            return Tensor.param(rng.uniform(-bound, bound, size=(r,)) + offset)

        return GruParams(
            wz=w(hid_dim, in_dim), uz=w(hid_dim, hid_dim), bz=b(hid_dim, z_bias),
            wr=w(hid_dim, in_dim), ur=w(hid_dim, hid_dim), br=b(hid_dim),
            wh=w(hid_dim, in_dim), uh=w(hid_dim, hid_dim), bh=b(hid_dim),
        )

    @staticmethod
    def zeros(in_dim: int, hid_dim: int) -> "GruParams":
        def w(r, c):
            return Tensor.param(np.zeros((r, c)))

        def b(r):
            return Tensor.param(np.zeros(r))

        return GruParams(
            wz=w(hid_dim, in_dim), uz=w(hid_dim, hid_dim), bz=b(hid_dim),
            wr=w(hid_dim, in_dim), ur=w(hid_dim, hid_dim), br=b(hid_dim),
            wh=w(hid_dim, in_dim), uh=w(hid_dim, hid_dim), bh=b(hid_dim),
        )

    def tensors(self):
        return [self.wz, self.uz, self.bz, self.wr, self.ur, self.br, self.wh, self.uh, self.bh]


def gru_cell(h: Tensor, m: Tensor, p: GruParams) -> Tensor:
    """h' = (1-z) * h + z * h~ with z, r, h~ the usual GRU gates.

    h is the previous hidden state, m the incoming message/input.  Both
    may be vectors (d,) or batches (B, d).
    """
    d = p.uz.values.shape[0]
    if h.values.shape[-1] != d:
        raise ShapeError(f"gru_cell hidden shape mismatch: h {h.shape} vs hidden dim {d}")
    if m.values.shape[-1] != p.wz.values.shape[1]:
        raise ShapeError(f"gru_cell input shape mismatch: m {m.shape} vs W {p.wz.shape}")
    if h.values.ndim != m.values.ndim:
        raise ShapeError(f"gru_cell rank mismatch: h {h.shape} vs m {m.shape}")

    hv, mv = h.values, m.values
    z = _sigmoid(mv @ p.wz.values.T + hv @ p.uz.values.T + p.bz.values)
    r = _sigmoid(mv @ p.wr.values.T + hv @ p.ur.values.T + p.br.values)
    rh = r * hv
    c = np.tanh(mv @ p.wh.values.T + rh @ p.uh.values.T + p.bh.values)
    out = Tensor((1.0 - z) * hv + z * c)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        dz = g * (c - hv)
        dc = g * z
        dh = g * (1.0 - z)
        dac = dc * (1.0 - c * c)
        daz = dz * z * (1.0 - z)
        drh = dac @ p.uh.values
        dr = drh * hv
        dh = dh + drh * r
        dar = dr * r * (1.0 - r)
        dm = dac @ p.wh.values + dar @ p.wr.values + daz @ p.wz.values
        dh = dh + dar @ p.ur.values + daz @ p.uz.values

        if hv.ndim == 1:
            _accumulate(p.wh, np.outer(dac, mv))
            _accumulate(p.uh, np.outer(dac, rh))
            _accumulate(p.wr, np.outer(dar, mv))
            _accumulate(p.ur, np.outer(dar, hv))
            _accumulate(p.wz, np.outer(daz, mv))
            _accumulate(p.uz, np.outer(daz, hv))
            _accumulate(p.bh, dac)
            _accumulate(p.br, dar)
            _accumulate(p.bz, daz)
        else:
            _accumulate(p.wh, dac.T @ mv)
            _accumulate(p.uh, dac.T @ rh)
            _accumulate(p.wr, dar.T @ mv)
            _accumulate(p.ur, dar.T @ hv)
            _accumulate(p.wz, daz.T @ mv)
            _accumulate(p.uz, daz.T @ hv)
            _accumulate(p.bh, dac.sum(axis=0))
            _accumulate(p.br, dar.sum(axis=0))
            _accumulate(p.bz, daz.sum(axis=0))
        _accumulate(h, dh)
        _accumulate(m, dm)

    _record([h, m] + p.tensors(), out, backward)
    return out


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    if logits.values.ndim != 1:
        raise ShapeError(f"cross_entropy expects a logit vector, got shape {logits.shape}")
    k = logits.values.shape[0]
    if not 0 <= target < k:
        raise IndexError(f"cross_entropy target {target} out of range for {k} classes")
    zmax = logits.values.max()
    lse = zmax + np.log(np.sum(np.exp(logits.values - zmax)))
    out = Tensor(lse - logits.values[target])
    probs = np.exp(logits.values - lse)

    def backward():
        g = _out_grad(out)
        if g is None:
            return
        gx = probs.copy()
        gx[target] -= 1.0
        _accumulate(logits, g * gx)

    _record([logits], out, backward)
    return out


# ---------------------------------------------------------------------------
# finite-difference gradient checking


class GradCheckError(RuntimeError):
    pass


def grad_check(f, inputs: Sequence[Tensor], step: float = 1e-5,
               exclude=None, min_magnitude: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must return a scalar Tensor when called with no arguments (it
    closes over ``inputs``).  ``exclude(tensor_index, coord_index)`` may
    mask coordinates (e.g. relu kinks) out of the comparison.

    Coordinates where both gradients are below ``min_magnitude`` are
    dominated by float64 rounding in the central difference; they are
    required to agree within ``min_magnitude`` absolutely and are left
    out of the relative comparison.
    """
    for t in inputs:
        t.zero_grad()
        t.requires_grad = True
    with Tape() as tape:
        out = f()
    if not np.isfinite(out.values):
        raise GradCheckError("non-finite forward value")
    tape.backward(out)

    worst = 0.0
    for ti, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        flat = t.values.reshape(-1)
        aflat = analytic.reshape(-1)
        for ci in range(flat.shape[0]):
            if exclude is not None and exclude(ti, ci):
                continue
            orig = flat[ci]
            flat[ci] = orig + step
            fp = float(f().values)
            flat[ci] = orig - step
            fm = float(f().values)
            flat[ci] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite perturbed value at input {ti} coord {ci}")
            numeric = (fp - fm) / (2.0 * step)
            if abs(aflat[ci]) < min_magnitude and abs(numeric) < min_magnitude:
                if abs(aflat[ci] - numeric) > min_magnitude:
                    raise GradCheckError(
                        f"near-zero gradients disagree at input {ti} coord {ci}")
                continue
            denom = max(1e-8, abs(aflat[ci]) + abs(numeric))
            rel = abs(aflat[ci] - numeric) / denom
            worst = max(worst, rel)
    return worst
