"""Greedy and beam-search generation.

Both decoders run over a step function mapping a generated prefix to a
log-probability vector for the next token, so the search logic is testable
against handcrafted distributions without a trained model. Scores are
cumulative log-probabilities; ties break toward the lexicographically
smallest token sequence, making every search fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tape
from .model import ModelConfig, _decode, _encode, _spec_for_encoding
from .tokenizer import EOS, SOS, Encoding

ScoreFn = Callable[[tuple[int, ...]], np.ndarray]


@dataclass(frozen=True)
class GenConfig:
    beam_size: int = 2
    max_output_len: int = 512
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_output_len < 1:
            raise ValueError("max_output_len must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    """A generated sequence (SOS excluded), its cumulative log-prob, and state."""

    ids: tuple[int, ...]
    score: float
    finished: bool

    def ranking_score(self, alpha: float) -> float:
        if alpha == 0.0 or not self.ids:
            return self.score
        return self.score / (len(self.ids) ** alpha)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    z = np.exp(logits - m).sum()
    return logits - m - math.log(z)


def model_score_fn(params, mcfg: ModelConfig, enc: Encoding) -> ScoreFn:
    """Encode once; each call scores the next token after [SOS] + prefix."""
    n_real = len(enc.real_ids)
    ids = np.asarray(enc.ids[:n_real])
    with tape.no_grad():
        enc_out = _encode(params, mcfg, ids, _spec_for_encoding(mcfg, enc, n_real))
        enc_states = tape.constant(enc_out.data)

    def fn(prefix: tuple[int, ...]) -> np.ndarray:
        dec_in = np.asarray((SOS,) + prefix)
        with tape.no_grad():
            logits = _decode(params, mcfg, enc_states, dec_in).data
        return _log_softmax(logits[-1])

    return fn


def _output_cap(gcfg: GenConfig, mcfg: ModelConfig | None) -> int:
    cap = gcfg.max_output_len
    if mcfg is not None:
        cap = min(cap, mcfg.max_dec_len)
    return cap


def greedy_over(score_fn: ScoreFn, cap: int, eos_id: int = EOS) -> Hypothesis:
    ids: tuple[int, ...] = ()
    score = 0.0
    while len(ids) < cap:
        logp = score_fn(ids)
        tok = int(np.argmax(logp))  # first max = lowest token id on ties
        ids += (tok,)
        score += float(logp[tok])
        if tok == eos_id:
            return Hypothesis(ids, score, True)
    return Hypothesis(ids, score, True)


def beam_over(score_fn: ScoreFn, cap: int, beam_size: int,
              alpha: float = 0.0, eos_id: int = EOS) -> Hypothesis:
    """Length-synchronous beam search with a finished pool.

    Each round extends every live hypothesis by every token; EOS extensions
    ranking inside the top beam_size retire to the pool, and the best
    beam_size non-EOS extensions carry on. With alpha=0 scores only fall as
    length grows, so the search ends once no live hypothesis can beat the
    pool.
    """
    beams = [Hypothesis((), 0.0, False)]
    pool: list[Hypothesis] = []
    for _ in range(cap):
        candidates: list[Hypothesis] = []
        for hyp in beams:
            logp = score_fn(hyp.ids)
            for tok, lp in enumerate(logp):
                candidates.append(
                    Hypothesis(hyp.ids + (tok,), hyp.score + float(lp), tok == eos_id)
                )
        candidates.sort(key=lambda h: (-h.score, h.ids))
        next_beams: list[Hypothesis] = []
        for rank, hyp in enumerate(candidates):
            if hyp.finished:
                if rank < beam_size:
                    pool.append(hyp)
            elif len(next_beams) < beam_size:
                next_beams.append(hyp)
            if len(next_beams) == beam_size and rank >= beam_size:
                break
        beams = next_beams
        if not beams:
            break
        if alpha == 0.0 and pool:
            best_pool = max(h.score for h in pool)
            if all(h.score <= best_pool for h in beams):
                beams = []  # no live hypothesis can still beat the pool
                break
    # Anything still live ran into the length cap, which also counts as done.
    pool.extend(Hypothesis(h.ids, h.score, True) for h in beams)
    return min(pool, key=lambda h: (-h.ranking_score(alpha), h.ids))


def decode_with_score(params, mcfg: ModelConfig, enc: Encoding,
                      gcfg: GenConfig | None = None) -> Hypothesis:
    """Full decoding result (ids, cumulative log-prob, finished flag)."""
    gcfg = gcfg or GenConfig()
    fn = model_score_fn(params, mcfg, enc)
    cap = _output_cap(gcfg, mcfg)
    if gcfg.beam_size == 1:
        return greedy_over(fn, cap)
    return beam_over(fn, cap, gcfg.beam_size, gcfg.length_penalty)


def greedy_decode(params, mcfg: ModelConfig, enc: Encoding,
                  gcfg: GenConfig | None = None) -> list[int]:
    """Argmax decoding; returns generated ids (EOS included when emitted)."""
    gcfg = gcfg or GenConfig()
    hyp = greedy_over(model_score_fn(params, mcfg, enc), _output_cap(gcfg, mcfg))
    return list(hyp.ids)


def beam_search(params, mcfg: ModelConfig, enc: Encoding,
                gcfg: GenConfig | None = None) -> list[int]:
    """Beam decoding; returns the best finished sequence's generated ids."""
    gcfg = gcfg or GenConfig()
    hyp = beam_over(model_score_fn(params, mcfg, enc), _output_cap(gcfg, mcfg),
                    gcfg.beam_size, gcfg.length_penalty)
    return list(hyp.ids)


def sequence_score(params, mcfg: ModelConfig, enc: Encoding, ids) -> float:
    """Cumulative log-probability the model assigns to a generated sequence."""
    fn = model_score_fn(params, mcfg, enc)
    total = 0.0
    prefix: tuple[int, ...] = ()
    for tok in ids:
        total += float(fn(prefix)[tok])
        prefix += (int(tok),)
    return total
