import numpy as np
import pytest

from parsum import tokenizer
from parsum.tokenizer import (
    EOS,
    PAD,
    SOS,
    SPECIAL_TOKENS,
    UNK,
    Encoding,
    TokenizerModel,
    decode,
    encode,
    load_model,
    save_model,
    train_bpe,
)


@pytest.fixture(scope="module")
def ab_model():
    # alphabet {a, b}; (a,a) occurs 4 times, (a,b) twice
    return train_bpe(["aaab", "aaab"], vocab_size=8)


# --------------------------------------------------------------- training

def test_special_tokens_occupy_low_ids(ab_model):
    for i, tok in enumerate(SPECIAL_TOKENS):
        assert ab_model.vocab[tok] == i
    assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)


def test_merge_order_most_frequent_then_lexicographic(ab_model):
    # (a,a): 4 occurrences; after merging, (aa,a) and (a,b) tie at 2 and
    # ("a","b") < ("aa","a") lexicographically
    assert ab_model.merges == [("a", "a"), ("a", "b")]
    assert ab_model.vocab["aa"] == 6
    assert ab_model.vocab["ab"] == 7


def test_training_is_deterministic():
    texts = ["تست متن", "متن تست", "تست"]
    a = train_bpe(texts, vocab_size=20)
    b = train_bpe(texts, vocab_size=20)
    assert a.vocab == b.vocab and a.merges == b.merges


def test_training_stops_when_no_pair_repeats():
    m = train_bpe(["abc"], vocab_size=100)
    assert m.merges == []  # every pair occurs once
    assert len(m) == 4 + 3


def test_train_rejects_empty_corpus():
    with pytest.raises(ValueError):
        train_bpe([], vocab_size=10)
    with pytest.raises(ValueError):
        train_bpe(["", ""], vocab_size=10)


def test_train_rejects_too_small_vocab():
    # alphabet {a, b} + 4 specials = 6; need strictly more
    with pytest.raises(ValueError, match="too small"):
        train_bpe(["ab"], vocab_size=6)


def test_vocab_ids_are_dense():
    m = train_bpe(["aaab", "aaab"], vocab_size=8)
    assert sorted(m.vocab.values()) == list(range(len(m.vocab)))
    with pytest.raises(ValueError, match="dense"):
        TokenizerModel(vocab={"<pad>": 0, "<s>": 1, "</s>": 2, "<unk>": 3, "a": 9},
                       merges=[])


# --------------------------------------------------------------- encoding

def test_encode_wraps_with_sos_eos(ab_model):
    enc = encode(ab_model, "aaab", max_len=10)
    assert enc.ids.tolist() == [SOS, ab_model.vocab["aa"], ab_model.vocab["ab"], EOS]
    assert enc.length == 4
    assert enc.attention_mask.tolist() == [1, 1, 1, 1]
    assert enc.global_mask.tolist() == [1, 0, 0, 0]


def test_encode_unknown_symbol_maps_to_unk(ab_model):
    enc = encode(ab_model, "aaabq", max_len=10)
    assert enc.ids.tolist()[-2] == UNK


def test_encode_empty_text(ab_model):
    enc = encode(ab_model, "", max_len=5)
    assert enc.ids.tolist() == [SOS, EOS]


def test_encode_pads_to_max(ab_model):
    enc = encode(ab_model, "aaab", max_len=9, pad_to_max=True)
    assert len(enc.ids) == 9
    assert enc.length == 4
    assert enc.ids.tolist()[4:] == [PAD] * 5
    assert enc.attention_mask.tolist() == [1] * 4 + [0] * 5
    assert enc.real_ids.tolist() == enc.ids.tolist()[:4]


def test_encode_truncates_keeping_eos_last(ab_model):
    enc = encode(ab_model, "ab" * 50, max_len=6)
    assert enc.length == 6
    assert enc.ids[0] == SOS
    assert enc.ids[-1] == EOS
    assert all(i == ab_model.vocab["ab"] for i in enc.ids.tolist()[1:5])


def test_encode_rejects_tiny_max_len(ab_model):
    with pytest.raises(ValueError):
        encode(ab_model, "a", max_len=1)


def test_encoding_mask_invariants():
    with pytest.raises(ValueError, match="prefix"):
        Encoding(ids=np.array([1, 2, 0]), attention_mask=np.array([1, 0, 1]),
                 global_mask=np.array([0, 0, 0]), length=2)
    with pytest.raises(ValueError, match="subset"):
        Encoding(ids=np.array([1, 2, 0]), attention_mask=np.array([1, 1, 0]),
                 global_mask=np.array([0, 0, 1]), length=2)


# --------------------------------------------------------------- decoding

def test_round_trip(ab_model):
    for text in ["aaab", "ab", "ba", "abab", "b"]:
        enc = encode(ab_model, text, max_len=64)
        assert decode(ab_model, enc.ids) == text


def test_round_trip_persian(tiny_tok):
    from conftest import PERSIAN_LINES
    for text in PERSIAN_LINES:
        enc = encode(tiny_tok, text, max_len=128, pad_to_max=True)
        assert decode(tiny_tok, enc.ids) == text


def test_decode_skips_specials_and_checks_bounds(ab_model):
    assert decode(ab_model, [PAD, SOS, EOS, ab_model.vocab["a"]]) == "a"
    with pytest.raises(ValueError, match="out of range"):
        decode(ab_model, [len(ab_model.vocab)])
    with pytest.raises(ValueError, match="out of range"):
        decode(ab_model, [-1])


# ------------------------------------------------------------ persistence

def test_save_load_round_trip(tmp_path, tiny_tok):
    vp, mp = tmp_path / "vocab.txt", tmp_path / "merges.txt"
    save_model(tiny_tok, str(vp), str(mp))
    back = load_model(str(vp), str(mp))
    assert back.vocab == tiny_tok.vocab
    assert back.merges == tiny_tok.merges


def test_save_load_escapes_whitespace_tokens(tmp_path):
    # tab is part of the alphabet here, so tokens contain raw tabs
    m = train_bpe(["a\tb", "a\tb", "a\tb"], vocab_size=9)
    assert any("\t" in t for t in m.vocab)
    vp, mp = tmp_path / "v.txt", tmp_path / "m.txt"
    save_model(m, str(vp), str(mp))
    back = load_model(str(vp), str(mp))
    assert back.vocab == m.vocab
    assert back.merges == m.merges


def test_saved_files_are_byte_deterministic(tmp_path):
    texts = ["خلاصه سازی", "متن فارسی", "خلاصه متن"]
    for i in (1, 2):
        m = train_bpe(texts, vocab_size=25)
        save_model(m, str(tmp_path / f"v{i}"), str(tmp_path / f"m{i}"))
    assert (tmp_path / "v1").read_bytes() == (tmp_path / "v2").read_bytes()
    assert (tmp_path / "m1").read_bytes() == (tmp_path / "m2").read_bytes()


def test_load_model_reports_malformed_lines(tmp_path):
    vp, mp = tmp_path / "v.txt", tmp_path / "m.txt"
    vp.write_text("<pad>\t0\nbroken line\n")
    mp.write_text("")
    with pytest.raises(ValueError, match=":2:"):
        load_model(str(vp), str(mp))
