import numpy as np
import pytest

from conftest import tiny_config
from parsum.model import init_parameters
from parsum.scoring import (
    EmbeddingTable,
    ScoreReport,
    cosine,
    f1,
    score_corpus,
    score_pair,
    strip_special,
)
from parsum.tokenizer import EOS, PAD, SOS, UNK, Encoding, encode, train_bpe


def table_from(vectors):
    return EmbeddingTable({i: np.asarray(v, dtype=float) for i, v in vectors.items()},
                          source="test")


ORTHO = table_from({4: [1, 0, 0], 5: [0, 1, 0], 6: [0, 0, 1],
                    7: [1, 0, 0], 3: [0.5, 0.5, 0]})


# -------------------------------------------------------------- primitives

def test_cosine_basics():
    assert cosine([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine([2, 0], [1, 0]) == pytest.approx(1.0)
    assert cosine([1, 1], [-1, -1]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        cosine([0, 0], [1, 0])


def test_f1_values():
    assert f1(0.5, 0.5) == pytest.approx(0.5)
    assert f1(1.0, 0.5) == pytest.approx(2 / 3)
    assert f1(0.0, 0.0) == 0.0
    x = 0.713
    assert f1(x, x) == pytest.approx(x)


def test_strip_special_keeps_unk():
    assert strip_special([PAD, SOS, 9, UNK, 5, EOS, PAD]) == [9, UNK, 5]


# -------------------------------------------------------------- score_pair

def test_identical_sequences_score_one():
    rep = score_pair([SOS, 4, 5, 6, EOS], [4, 5, 6], ORTHO)
    assert rep.precision == pytest.approx(1.0)
    assert rep.recall == pytest.approx(1.0)
    assert rep.f1 == pytest.approx(1.0)


def test_subset_candidate_has_full_precision_partial_recall():
    # candidate {4}; reference {4, 5}; embeddings orthogonal
    rep = score_pair([4], [4, 5], ORTHO)
    assert rep.precision == pytest.approx(1.0)
    assert rep.recall == pytest.approx(0.5)
    assert rep.f1 == pytest.approx(2 / 3)


def test_synonym_tokens_match_via_embedding():
    # ids 4 and 7 share a vector, so each fully covers the other
    rep = score_pair([7], [4], ORTHO)
    assert rep.f1 == pytest.approx(1.0)


def test_swapping_sides_swaps_precision_and_recall():
    a = score_pair([4, 5], [5, 6], ORTHO)
    b = score_pair([5, 6], [4, 5], ORTHO)
    assert a.precision == pytest.approx(b.recall)
    assert a.recall == pytest.approx(b.precision)
    assert a.f1 == pytest.approx(b.f1)


def test_scores_are_bounded():
    rng = np.random.default_rng(5)
    emb = table_from({i: rng.standard_normal(4) for i in range(4, 20)})
    for _ in range(10):
        c = rng.integers(4, 20, size=6)
        r = rng.integers(4, 20, size=5)
        rep = score_pair(c, r, emb)
        for v in (rep.precision, rep.recall):
            assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


def test_specials_only_sequences_are_errors():
    with pytest.raises(ValueError):
        score_pair([SOS, EOS], [4], ORTHO)
    with pytest.raises(ValueError):
        score_pair([4], [PAD, PAD], ORTHO)


def test_score_report_dict():
    d = ScoreReport(0.25, 0.75, 0.375).as_dict()
    assert d == {"precision": 0.25, "recall": 0.75, "f1": 0.375}


# ------------------------------------------------------------ score_corpus

def test_corpus_score_averages_then_combines():
    pairs = [([4], [4, 5]), ([5], [5])]
    reports = [score_pair(c, r, ORTHO) for c, r in pairs]
    got = score_corpus(pairs, ORTHO)
    p = np.mean([r.precision for r in reports])
    r = np.mean([r.recall for r in reports])
    assert got.precision == pytest.approx(p)
    assert got.recall == pytest.approx(r)
    assert got.f1 == pytest.approx(f1(p, r))
    with pytest.raises(ValueError):
        score_corpus([], ORTHO)


# --------------------------------------------------------- embedding table

def test_embedding_table_validation():
    with pytest.raises(ValueError):
        EmbeddingTable({}, source="x")
    with pytest.raises(ValueError):
        table_from({1: [1, 0], 2: [1, 0, 0]})
    with pytest.raises(KeyError):
        ORTHO.lookup(999)
    assert ORTHO.matrix([4, 5]).shape == (2, 3)


def test_from_file_round_trip(tmp_path, tiny_tok):
    tokens = [t for t in tiny_tok.vocab if t not in ("<pad>", "<s>", "</s>", "<unk>")][:5]
    path = tmp_path / "emb.txt"
    rng = np.random.default_rng(0)
    rows = {t: rng.standard_normal(3) for t in tokens}
    lines = ["3"] + [t + "\t" + " ".join(f"{x:.6f}" for x in v) for t, v in rows.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    emb = EmbeddingTable.from_file(str(path), tiny_tok)
    assert emb.dim == 3
    for t, v in rows.items():
        assert np.allclose(emb.lookup(tiny_tok.vocab[t]), np.round(v, 6))


def test_from_file_errors(tmp_path, tiny_tok):
    bad_dim = tmp_path / "bad.txt"
    tok = next(iter(tiny_tok.vocab))
    bad_dim.write_text(f"3\n{tok}\t1.0 2.0\n")
    with pytest.raises(ValueError, match=":2:"):
        EmbeddingTable.from_file(str(bad_dim), tiny_tok)

    no_header = tmp_path / "nohdr.txt"
    no_header.write_text("not-a-number\n")
    with pytest.raises(ValueError, match="dimension"):
        EmbeddingTable.from_file(str(no_header), tiny_tok)

    no_match = tmp_path / "nomatch.txt"
    no_match.write_text("2\nzzzz\t1.0 2.0\n")
    with pytest.raises(ValueError, match="vocabulary"):
        EmbeddingTable.from_file(str(no_match), tiny_tok)


def test_from_encoder_averages_states_and_falls_back(tiny_tok):
    cfg = tiny_config(vocab_size=len(tiny_tok), max_enc_len=64)
    params = init_parameters(cfg, seed=1)
    texts = ["خلاصه سازی متن", "متن فارسی"]
    encodings = [encode(tiny_tok, t, max_len=32) for t in texts]
    emb = EmbeddingTable.from_encoder(params, cfg, encodings)
    assert emb.dim == cfg.d_model

    seen = {int(t) for e in encodings for t in e.real_ids}
    unseen = next(i for i in range(len(tiny_tok)) if i not in seen)
    # unseen ids resolve to their input embedding row
    assert np.array_equal(emb.lookup(unseen), params["tok_emb"].data[unseen])
    # seen ids get contextual states, which differ from the input embedding
    some_seen = next(i for i in seen if i > 3)
    assert not np.allclose(emb.lookup(some_seen), params["tok_emb"].data[some_seen])
