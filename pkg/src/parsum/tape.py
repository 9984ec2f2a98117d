"""Reverse-mode autodiff over float64 numpy arrays.

Small on purpose: exactly the operations the summarization model needs, each
with a hand-written backward. Three extras drive the performance contracts:

* an activation ledger that counts array elements saved for backward, so
  linear-memory and checkpointing claims are assertable in tests;
* saved arrays are released as soon as a node's backward has run;
* a ``checkpoint`` combinator that skips saving inside a block and recomputes
  it during backward, trading compute for peak activation memory.

Everything is single-threaded and deterministic; no in-place mutation of
inputs anywhere.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

NEG_INF = -np.inf


class ActivationLedger:
    """Counts elements currently saved for backward, peak, and total ever saved."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.current = 0
        self.peak = 0
        self.total = 0

    def add(self, n: int) -> None:
        self.current += n
        self.total += n
        if self.current > self.peak:
            self.peak = self.current

    def release(self, n: int) -> None:
        self.current -= n


ledger = ActivationLedger()

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


class _Node:
    __slots__ = ("parents", "fn", "saved", "counted")

    def __init__(self, parents, fn, saved, counted):
        self.parents = parents
        self.fn = fn          # fn(grad, saved) -> per-parent grads (None allowed)
        self.saved = saved    # list of arrays the backward needs
        self.counted = counted


class Tensor:
    """Array plus optional graph node. Leaves with requires_grad accumulate .grad."""

    __slots__ = ("data", "grad", "requires_grad", "is_param", "_node")

    def __init__(self, data, requires_grad: bool = False, is_param: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.is_param = is_param
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    def tracked(self) -> bool:
        return self.requires_grad or self._node is not None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.grad is not None else 'no'})"


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True, is_param=True)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=DTYPE))


def _saved_size(saved: Sequence, parents: Sequence[Tensor]) -> int:
    """Element count of saved arrays, excluding parameter data (alive anyway)."""
    param_ids = {id(p.data) for p in parents if p.is_param}
    return sum(a.size for a in saved if isinstance(a, np.ndarray) and id(a) not in param_ids)


def _make(out_data, parents: tuple[Tensor, ...], fn, saved: list) -> Tensor:
    out = Tensor(out_data)
    if _grad_enabled and any(p.tracked() for p in parents):
        counted = _saved_size(saved, parents)
        ledger.add(counted)
        out._node = _Node(parents, fn, saved, counted)
    return out


def backward(out: Tensor, seed: np.ndarray | None = None) -> None:
    """Backpropagate from ``out``; accumulates into .grad of requires_grad leaves.

    Saved activations are released as each node finishes, so ledger.current
    falls back toward zero as the sweep proceeds.
    """
    if seed is None:
        seed = np.ones_like(out.data)
    order = _toposort(out)
    grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=DTYPE)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        node = t._node
        if node is None:
            continue
        parent_grads = node.fn(g, node.saved)
        ledger.release(node.counted)
        node.saved = None
        node.counted = 0
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.tracked():
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
    return order


def checkpoint(fn: Callable[..., Tensor], *inputs: Tensor) -> Tensor:
    """Run ``fn`` without saving its internals; recompute them during backward.

    ``fn`` must be deterministic and return a single Tensor. Tensors closed
    over by ``fn`` (e.g. parameters) receive their gradients directly from
    the recomputed inner graph.
    """
    if not _grad_enabled or not any(t.tracked() for t in inputs):
        return fn(*inputs)
    boundary = [t.data for t in inputs]
    flags = [t.tracked() for t in inputs]
    with no_grad():
        out_data = fn(*(Tensor(d) for d in boundary)).data

    def bw(g, saved):
        leaves = [Tensor(d, requires_grad=f) for d, f in zip(saved, flags)]
        with enable_grad():
            inner_out = fn(*leaves)
            backward(inner_out, g)
        return [leaf.grad for leaf in leaves]

    return _make(out_data, tuple(inputs), bw, boundary)


# --- shape helpers ------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- arithmetic ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g, saved):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _make(a.data + b.data, (a, b), bw, [])


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g, saved):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _make(a.data - b.data, (a, b), bw, [])


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape

    def bw(g, saved):
        ad, bd = saved
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _make(a.data * b.data, (a, b), bw, [a.data, b.data])


def scale(a: Tensor, s: float) -> Tensor:
    def bw(g, saved):
        return (g * s,)

    return _make(a.data * s, (a,), bw, [])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dims must match exactly or be absent on one side."""
    ash, bsh = a.data.shape, b.data.shape
    if ash[-1] != bsh[-2]:
        raise ValueError(f"matmul shape mismatch: {ash} @ {bsh}")

    def bw(g, saved):
        ad, bd = saved
        da = _unbroadcast(g @ bd.swapaxes(-1, -2), ash)
        db = _unbroadcast(ad.swapaxes(-1, -2) @ g, bsh)
        return da, db

    return _make(a.data @ b.data, (a, b), bw, [a.data, b.data])


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))

    def bw(g, saved):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bw, [])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape

    def bw(g, saved):
        return (g.reshape(orig),)

    return _make(a.data.reshape(shape), (a,), bw, [])


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    split = a.data.shape[-1]

    def bw(g, saved):
        return g[..., :split], g[..., split:]

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), bw, [])


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    orig = a.data.shape

    def bw(g, saved):
        out = np.zeros(orig, dtype=DTYPE)
        out[..., start:stop] = g
        return (out,)

    return _make(np.ascontiguousarray(a.data[..., start:stop]), (a,), bw, [])


# --- nonlinearities -----------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd**3)
    t = np.tanh(u)

    def bw(g, saved):
        (xs,) = saved
        us = _GELU_C * (xs + _GELU_A * xs**3)
        ts = np.tanh(us)
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xs**2)
        return (g * (0.5 * (1.0 + ts) + 0.5 * xs * (1.0 - ts**2) * du),)

    return _make(0.5 * xd * (1.0 + t), (x,), bw, [xd])


def softmax_last(x: Tensor) -> Tensor:
    """Row softmax over the last axis; rows that are entirely -inf yield zeros."""
    s = _softmax_data(x.data)

    def bw(g, saved):
        (sv,) = saved
        return (sv * (g - (g * sv).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), bw, [s])


def _softmax_data(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    dead = np.isneginf(m)
    e = np.exp(x - np.where(dead, 0.0, m))
    z = e.sum(axis=-1, keepdims=True)
    return np.where(dead, 0.0, e / np.where(z == 0.0, 1.0, z))


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g, saved):
        xh, iv, gm = saved
        dxhat = g * gm
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xh).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dx = iv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xh * (dxhat * xh).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    out = xhat * gamma.data + beta.data
    return _make(out, (x, gamma, beta), bw, [xhat, inv, gamma.data])


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0.0:
        return x
    if p >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.data.shape) >= p).astype(DTYPE) / (1.0 - p)

    def bw(g, saved):
        (k,) = saved
        return (g * k,)

    return _make(x.data * keep, (x,), bw, [keep])


# --- indexing -----------------------------------------------------------


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: table [V, d], ids [n] -> [n, d]."""
    ids = np.asarray(ids)
    vshape = table.data.shape

    def bw(g, saved):
        (idv,) = saved
        dt = np.zeros(vshape, dtype=DTYPE)
        np.add.at(dt, idv, g)
        return (dt,)

    return _make(table.data[ids], (table,), bw, [ids])


def index_select(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select positions along axis -2: x [..., n, d], idx [m] -> [..., m, d]."""
    idx = np.asarray(idx)
    orig = x.data.shape

    def bw(g, saved):
        (iv,) = saved
        dx = np.zeros(orig, dtype=DTYPE)
        flat = dx.reshape(-1, orig[-2], orig[-1])
        gflat = g.reshape(-1, len(iv), orig[-1])
        for b in range(flat.shape[0]):
            np.add.at(flat[b], iv, gflat[b])
        return (dx,)

    return _make(np.take(x.data, idx, axis=-2), (x,), bw, [idx])


def row_scatter(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Overwrite base[..., idx, :] with rows; gradients split accordingly."""
    idx = np.asarray(idx)
    out = base.data.copy()
    out[..., idx, :] = rows.data

    def bw(g, saved):
        (iv,) = saved
        dbase = g.copy()
        dbase[..., iv, :] = 0.0
        drows = g[..., iv, :]
        return dbase, drows

    return _make(out, (base, rows), bw, [idx])


# --- windowed attention kernels ----------------------------------------


def window_scores(q: Tensor, k: Tensor, idx: np.ndarray, scal: float) -> Tensor:
    """Banded attention scores.

    q, k: [h, n, d]; idx: [n, w+1] neighbor positions (clipped; invalid
    entries must be masked downstream). Returns [h, n, w+1] of scaled dot
    products q_i . k_{idx[i, j]}.
    """
    idx = np.asarray(idx)
    if q.data.shape != k.data.shape:
        raise ValueError(f"window_scores shape mismatch: {q.data.shape} vs {k.data.shape}")

    def bw(g, saved):
        qd, kd, iv = saved
        kn = kd[:, iv, :]
        dq = scal * np.einsum("hnk,hnkd->hnd", g, kn)
        dk = np.zeros_like(kd)
        contrib = scal * np.einsum("hnk,hnd->hnkd", g, qd)
        for h in range(kd.shape[0]):
            np.add.at(dk[h], iv, contrib[h])
        return dq, dk

    out = scal * np.einsum("hnd,hnkd->hnk", q.data, k.data[:, idx, :])
    return _make(out, (q, k), bw, [q.data, k.data, idx])


def window_apply(p: Tensor, v: Tensor, idx: np.ndarray) -> Tensor:
    """Contract banded weights with values: p [h, n, w+1], v [h, n, d] -> [h, n, d]."""
    idx = np.asarray(idx)

    def bw(g, saved):
        pd, vd, iv = saved
        vn = vd[:, iv, :]
        dp = np.einsum("hnd,hnkd->hnk", g, vn)
        dv = np.zeros_like(vd)
        contrib = np.einsum("hnk,hnd->hnkd", pd, g)
        for h in range(vd.shape[0]):
            np.add.at(dv[h], iv, contrib[h])
        return dp, dv

    out = np.einsum("hnk,hnkd->hnd", p.data, v.data[:, idx, :])
    return _make(out, (p, v), bw, [p.data, v.data, idx])


# --- loss ---------------------------------------------------------------


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy over positions where mask is 1.

    logits [m, V]; targets [m] int; mask [m] 0/1.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=DTYPE)
    count = mask.sum()
    if count <= 0:
        raise ValueError("cross_entropy needs at least one unmasked target")
    ld = logits.data
    m = ld.max(axis=-1, keepdims=True)
    e = np.exp(ld - m)
    z = e.sum(axis=-1, keepdims=True)
    s = e / z
    logp = (ld - m) - np.log(z)
    nll = -(logp[np.arange(len(targets)), targets] * mask).sum() / count

    def bw(g, saved):
        sv, tv, mv = saved
        d = sv.copy()
        d[np.arange(len(tv)), tv] -= 1.0
        return (d * (g * mv / count)[:, None],)

    return _make(np.asarray(nll), (logits,), bw, [s, targets, mask])
