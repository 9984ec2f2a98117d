"""Shared fixtures and numeric helpers for the test suite."""

import numpy as np
import pytest

from parsum import tokenizer
from parsum.model import ModelConfig

# Small Persian corpus used to train throwaway tokenizers.  Repetition is
# deliberate: BPE needs recurring pairs to have anything to merge.
PERSIAN_LINES = [
    "خلاصه سازی متن فارسی",
    "متن های بلند فارسی",
    "خلاصه های کوتاه",
    "مدل زبانی برای متن",
    "این متن کوتاه است",
    "متن بلند خلاصه می شود",
]


@pytest.fixture(scope="session")
def tiny_tok():
    return tokenizer.train_bpe(PERSIAN_LINES, vocab_size=80)


def tiny_config(**overrides) -> ModelConfig:
    """A model small enough for finite differences and exhaustive checks."""
    base = dict(
        vocab_size=50,
        d_model=8,
        n_heads=2,
        n_enc_layers=1,
        n_dec_layers=1,
        d_ff=16,
        window_size=4,
        max_enc_len=32,
        max_dec_len=16,
        dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def central_difference(f, arrays, h=1e-5):
    """Gradient of scalar f(arrays...) w.r.t. every entry, one at a time."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, fd, floor=1e-6):
    """Worst relative disagreement; the floor keeps pure FD roundoff noise
    on near-zero entries from dominating the statistic."""
    worst = 0.0
    for an, num in zip(analytic, fd):
        denom = np.maximum(np.maximum(np.abs(num), np.abs(an)), floor)
        worst = max(worst, float(np.max(np.abs(an - num) / denom)))
    return worst
