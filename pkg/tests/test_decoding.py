import itertools
import math

import numpy as np
import pytest

from conftest import tiny_config
from parsum.decoding import (
    GenConfig,
    Hypothesis,
    beam_over,
    beam_search,
    decode_with_score,
    greedy_decode,
    greedy_over,
    model_score_fn,
    sequence_score,
)
from parsum.model import init_parameters
from parsum.tokenizer import EOS, SOS, Encoding


def table_fn(table, vocab):
    """Score function backed by an explicit prefix -> distribution table."""
    def fn(prefix):
        probs = np.asarray(table[prefix], dtype=np.float64)
        assert probs.shape == (vocab,)
        return np.log(probs)
    return fn


def random_fn(seed, vocab):
    """Deterministic pseudo-random distributions keyed by the prefix."""
    def fn(prefix):
        rng = np.random.default_rng((seed, 7919) + tuple(int(t) + 1 for t in prefix))
        p = rng.dirichlet(np.ones(vocab))
        return np.log(p)
    return fn


def enc_of(ids):
    a = np.asarray(ids)
    ones = np.ones(len(a), dtype=np.int64)
    glob = np.zeros(len(a), dtype=np.int64)
    glob[0] = 1
    return Encoding(ids=a, attention_mask=ones, global_mask=glob, length=len(a))


def test_gen_config_validation():
    with pytest.raises(ValueError):
        GenConfig(beam_size=0)
    with pytest.raises(ValueError):
        GenConfig(max_output_len=0)


def test_ranking_score_applies_length_penalty():
    h = Hypothesis((1, 2, 3, 4), -8.0, True)
    assert h.ranking_score(0.0) == -8.0
    assert h.ranking_score(1.0) == -2.0
    assert h.ranking_score(0.5) == -4.0


# ----------------------------------------------------- handcrafted tables

def test_greedy_follows_argmax_and_prefers_low_ids_on_ties():
    table = {
        (): [0.4, 0.4, 0.2],       # tie between 0 and 1 -> picks 0
        (0,): [0.1, 0.1, 0.8],     # picks 2 = EOS here
    }
    hyp = greedy_over(table_fn(table, 3), cap=5, eos_id=2)
    assert hyp.ids == (0, 2)
    assert hyp.finished
    assert hyp.score == pytest.approx(math.log(0.4) + math.log(0.8))


def test_beam_two_beats_greedy_on_garden_path():
    # greedy takes token 0 (p=.5) but the best length-2 sequence starts
    # with the slightly cheaper token 1
    table = {
        (): [0.50, 0.45, 0.05],
        (0,): [0.30, 0.30, 0.40],
        (1,): [0.05, 0.90, 0.05],
        (2,): [1 / 3, 1 / 3, 1 / 3],
    }
    fn = table_fn(table, 3)
    eos = 99  # never emitted: every hypothesis runs to the cap

    greedy = greedy_over(fn, cap=2, eos_id=eos)
    assert greedy.ids == (0, 2)
    assert math.exp(greedy.score) == pytest.approx(0.5 * 0.4)

    beam = beam_over(fn, cap=2, beam_size=2, eos_id=eos)
    assert beam.ids == (1, 1)
    assert math.exp(beam.score) == pytest.approx(0.45 * 0.9)

    # exhaustive check over all 9 length-2 sequences
    def total(seq):
        p = 1.0
        prefix = ()
        for t in seq:
            p *= table[prefix][t]
            prefix += (t,)
        return p
    best = max(itertools.product(range(3), repeat=2), key=total)
    assert beam.ids == best
    assert math.exp(beam.score) == pytest.approx(total(best))


def test_eos_retires_hypotheses_early():
    table = {
        (): [0.1, 0.2, 0.7],  # EOS (id 2) dominates immediately
        (0,): [0.4, 0.3, 0.3],
        (1,): [0.4, 0.3, 0.3],
    }
    for hyp in (greedy_over(table_fn(table, 3), cap=10, eos_id=2),
                beam_over(table_fn(table, 3), cap=10, beam_size=2, eos_id=2)):
        assert hyp.ids == (2,)
        assert hyp.finished


def test_beam_pool_can_prefer_shorter_finished_sequence():
    # EOS right away scores p=.6; the best two-token continuation only
    # reaches .4 * .9 = .36, so the pooled one-token hypothesis wins
    table = {
        (): [0.6, 0.4],
        (1,): [0.1, 0.9],
        (1, 1): [0.5, 0.5],
    }
    hyp = beam_over(table_fn(table, 2), cap=3, beam_size=2, eos_id=0)
    assert hyp.ids == (0,)
    assert math.exp(hyp.score) == pytest.approx(0.6)


def test_beam_size_one_is_greedy_on_random_tables():
    for seed in range(20):
        vocab = 6
        fn = random_fn(seed, vocab)
        g = greedy_over(fn, cap=8, eos_id=2)
        b = beam_over(fn, cap=8, beam_size=1, eos_id=2)
        assert g.ids == b.ids
        assert g.score == pytest.approx(b.score, rel=1e-15)


def test_wider_beams_never_score_worse_on_random_tables():
    for seed in range(12):
        fn = random_fn(seed, 5)
        g = greedy_over(fn, cap=6, eos_id=2)
        b2 = beam_over(fn, cap=6, beam_size=2, eos_id=2)
        b4 = beam_over(fn, cap=6, beam_size=4, eos_id=2)
        assert b2.score >= g.score - 1e-12
        assert b4.score >= b2.score - 1e-12


def test_no_eos_means_exact_cap_length():
    fn = random_fn(3, 4)
    hyp = greedy_over(fn, cap=5, eos_id=3999)
    assert len(hyp.ids) == 5
    assert hyp.finished  # hitting the cap counts as done
    hyp_b = beam_over(fn, cap=5, beam_size=3, eos_id=3999)
    assert len(hyp_b.ids) == 5


# ---------------------------------------------------------- model-backed

@pytest.fixture(scope="module")
def small_model():
    cfg = tiny_config(vocab_size=20, max_dec_len=8)
    return cfg, init_parameters(cfg, seed=11)


def test_model_score_fn_is_normalized(small_model):
    cfg, params = small_model
    fn = model_score_fn(params, cfg, enc_of([SOS, 5, 6, EOS]))
    logp = fn(())
    assert logp.shape == (cfg.vocab_size,)
    assert np.exp(logp).sum() == pytest.approx(1.0, rel=1e-12)
    logp2 = fn((4, 7))
    assert np.exp(logp2).sum() == pytest.approx(1.0, rel=1e-12)


def test_decode_is_deterministic_and_capped(small_model):
    cfg, params = small_model
    enc = enc_of([SOS, 5, 6, 7, EOS])
    gcfg = GenConfig(beam_size=2, max_output_len=100)  # model cap (8) applies
    a = decode_with_score(params, cfg, enc, gcfg)
    b = decode_with_score(params, cfg, enc, gcfg)
    assert a == b
    assert len(a.ids) <= cfg.max_dec_len
    if EOS in a.ids:
        assert a.ids[-1] == EOS and a.ids.count(EOS) == 1


def test_greedy_decode_agrees_with_beam_one(small_model):
    cfg, params = small_model
    enc = enc_of([SOS, 9, 10, EOS])
    g = greedy_decode(params, cfg, enc, GenConfig(beam_size=1, max_output_len=8))
    b = beam_search(params, cfg, enc, GenConfig(beam_size=1, max_output_len=8))
    d = decode_with_score(params, cfg, enc, GenConfig(beam_size=1, max_output_len=8))
    assert g == b == list(d.ids)


def test_sequence_score_matches_decode_score(small_model):
    cfg, params = small_model
    enc = enc_of([SOS, 4, 12, EOS])
    hyp = decode_with_score(params, cfg, enc, GenConfig(beam_size=2, max_output_len=6))
    assert sequence_score(params, cfg, enc, hyp.ids) == pytest.approx(hyp.score, rel=1e-12)
