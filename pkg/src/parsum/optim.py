"""Adafactor updates with factored second moments.

Matrices keep one row accumulator and one column accumulator instead of a
full second-moment table; vectors and scalars keep the full accumulator.
No momentum, no relative-step sizing, no weight decay — a fixed learning
rate with update clipping, which is all the training recipe here uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import DTYPE, Tensor


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-4
    eps1: float = 1e-30
    eps2: float = 1e-3
    clip_threshold: float = 1.0
    beta2_exponent: float = 0.8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be positive")


class AdafactorState:
    """Accumulators per parameter name, plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.t = 0
        self.row: dict[str, np.ndarray] = {}
        self.col: dict[str, np.ndarray] = {}
        self.full: dict[str, np.ndarray] = {}
        for name, p in params.items():
            if p.data.ndim == 2:
                self.row[name] = np.zeros(p.data.shape[0], dtype=DTYPE)
                self.col[name] = np.zeros(p.data.shape[1], dtype=DTYPE)
            else:
                self.full[name] = np.zeros(p.data.shape, dtype=DTYPE)

    def save(self, path) -> None:
        arrays = {"__t__": np.asarray(self.t, dtype=np.int64)}
        for kind, table in (("row", self.row), ("col", self.col), ("full", self.full)):
            for name, arr in table.items():
                arrays[f"{kind}|{name}"] = arr
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, params: dict[str, Tensor]) -> "AdafactorState":
        state = cls(params)
        with np.load(path) as z:
            state.t = int(z["__t__"])
            for key in z.files:
                if key == "__t__":
                    continue
                kind, name = key.split("|", 1)
                table = getattr(state, kind)
                if name not in table:
                    raise ValueError(f"{path}: state entry {name!r} matches no parameter")
                if z[key].shape != table[name].shape:
                    raise ValueError(f"{path}: state entry {name!r} has wrong shape")
                table[name] = np.asarray(z[key], dtype=DTYPE)
        return state


def init_state(params: dict[str, Tensor]) -> AdafactorState:
    return AdafactorState(params)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def adafactor_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdafactorState,
    cfg: OptimConfig,
) -> None:
    """Apply one update in place (parameters and state both mutate)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    beta2 = 1.0 - state.t ** (-cfg.beta2_exponent)

    for name, p in params.items():
        g = np.asarray(grads[name], dtype=DTYPE)
        sq = g * g + cfg.eps1
        if p.data.ndim == 2:
            r = state.row[name]
            c = state.col[name]
            r[:] = beta2 * r + (1.0 - beta2) * sq.mean(axis=1)
            c[:] = beta2 * c + (1.0 - beta2) * sq.mean(axis=0)
            mr = r.mean()
            vhat = np.outer(r, c) / (mr if mr > 0.0 else 1.0)
        else:
            v = state.full[name]
            v[:] = beta2 * v + (1.0 - beta2) * sq
            vhat = v
        # vhat entries are exactly zero only where the gradient is too
        # (eps1=0 edge); keep those coordinates still instead of 0/0.
        denom = np.sqrt(vhat)
        safe = np.where(denom > 0.0, denom, 1.0)
        u = np.where(denom > 0.0, g / safe, 0.0)
        u /= max(1.0, _rms(u) / cfg.clip_threshold)
        p.data = p.data - cfg.learning_rate * u
