"""Trainable byte-pair subword tokenizer with fixed special-token contracts.

The model operates on raw character sequences (no pre-tokenization), so
merges may span spaces and decode is plain concatenation — this makes
decode(encode(x)) exact for in-vocabulary text, ZWNJ included.

Special ids are fixed: pad=0, sos=1, eos=2, unk=3.
"""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")


@dataclass
class Encoding:
    """Fixed-contract id sequence: SOS + subwords + EOS, optional padding."""

    ids: np.ndarray
    attention_mask: np.ndarray
    global_mask: np.ndarray
    length: int

    def __post_init__(self) -> None:
        if not (len(self.ids) == len(self.attention_mask) == len(self.global_mask)):
            raise ValueError("ids and masks must have equal length")
        mask = np.asarray(self.attention_mask)
        if mask[: self.length].min(initial=1) != 1 or mask[self.length :].max(initial=0) != 0:
            raise ValueError("attention_mask must be a prefix of 1s followed by 0s")
        if np.any(self.global_mask > self.attention_mask):
            raise ValueError("global_mask must be a subset of attention_mask")

    @property
    def real_ids(self) -> np.ndarray:
        return self.ids[: self.length]


@dataclass
class TokenizerModel:
    vocab: dict[str, int]          # token string -> id (specials included)
    merges: list[tuple[str, str]]  # in training priority order
    special: dict[str, int] = field(
        default_factory=lambda: {"pad_id": PAD, "sos_id": SOS, "eos_id": EOS, "unk_id": UNK}
    )

    def __post_init__(self) -> None:
        ids = sorted(self.vocab.values())
        if ids != list(range(len(self.vocab))):
            raise ValueError("vocab ids must be dense in [0, |vocab|)")
        self.id_to_token = {i: tok for tok, i in self.vocab.items()}
        self.merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.vocab)


def train_bpe(texts: Iterable[str], vocab_size: int) -> TokenizerModel:
    """Train a character-level BPE model.

    Repeatedly merges the most frequent adjacent symbol pair (ties broken by
    lexicographically smallest pair) until ``vocab_size`` is reached or no
    pair occurs twice. Fully deterministic for a given corpus and size.
    """
    sequences = [list(t) for t in texts if t]
    if not sequences:
        raise ValueError("cannot train a tokenizer on an empty corpus")

    alphabet = sorted({ch for seq in sequences for ch in seq})
    floor = len(alphabet) + len(SPECIAL_TOKENS)
    if vocab_size <= floor:
        raise ValueError(
            f"vocab_size {vocab_size} too small: need > {floor} "
            f"(alphabet {len(alphabet)} + {len(SPECIAL_TOKENS)} special tokens)"
        )

    vocab: dict[str, int] = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for ch in alphabet:
        vocab[ch] = len(vocab)

    pair_counts: Counter[tuple[str, str]] = Counter()
    pair_seqs: dict[tuple[str, str], set[int]] = {}
    for si, seq in enumerate(sequences):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += 1
            pair_seqs.setdefault(pair, set()).add(si)

    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size and pair_counts:
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        joined = best[0] + best[1]
        if joined in SPECIAL_TOKENS:
            # would make the vocab file ambiguous; skip this candidate
            del pair_counts[best]
            pair_seqs.pop(best, None)
            continue
        merges.append(best)
        if joined not in vocab:
            # two different pairs can concatenate to the same string
            # (e.g. "a"+"bc" and "ab"+"c"); reuse the existing id then
            vocab[joined] = len(vocab)
        for si in sorted(pair_seqs.get(best, ())):
            old = sequences[si]
            new = _merge_once(old, best, joined)
            sequences[si] = new
            _update_counts(pair_counts, pair_seqs, si, old, new)
        pair_seqs.pop(best, None)

    return TokenizerModel(vocab=vocab, merges=merges)


def _merge_once(seq: list[str], pair: tuple[str, str], joined: str) -> list[str]:
    """Replace non-overlapping occurrences of ``pair`` left to right."""
    out: list[str] = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _update_counts(
    counts: Counter[tuple[str, str]],
    pair_seqs: dict[tuple[str, str], set[int]],
    si: int,
    old: list[str],
    new: list[str],
) -> None:
    delta: Counter[tuple[str, str]] = Counter(zip(new, new[1:]))
    delta.subtract(Counter(zip(old, old[1:])))
    for pair, d in delta.items():
        if d == 0:
            continue
        counts[pair] += d
        if counts[pair] <= 0:
            del counts[pair]
            pair_seqs.pop(pair, None)
        elif d > 0:
            pair_seqs.setdefault(pair, set()).add(si)


def _bpe_segment(model: TokenizerModel, text: str) -> list[str]:
    """Segment text into subword strings by applying merges in rank order.

    Linked-list + heap formulation: always merge the present pair with the
    lowest rank; among equal-rank occurrences, leftmost first.
    """
    symbols = list(text)
    n = len(symbols)
    if n == 0:
        return []
    if n == 1:
        return symbols
    ranks = model.merge_ranks
    nxt = list(range(1, n)) + [-1]
    prv = [-1] + list(range(n - 1))
    alive = [True] * n

    heap: list[tuple[int, int, int, int]] = []
    counter = 0
    for i in range(n - 1):
        rank = ranks.get((symbols[i], symbols[i + 1]))
        if rank is not None:
            heap.append((rank, counter, i, i + 1))
            counter += 1
    heapq.heapify(heap)

    while heap:
        rank, _, i, j = heapq.heappop(heap)
        if not (alive[i] and alive[j]) or nxt[i] != j:
            continue
        if ranks.get((symbols[i], symbols[j])) != rank:
            continue
        symbols[i] = symbols[i] + symbols[j]
        alive[j] = False
        k = nxt[j]
        nxt[i] = k
        if k != -1:
            prv[k] = i
            r = ranks.get((symbols[i], symbols[k]))
            if r is not None:
                heapq.heappush(heap, (r, counter, i, k))
                counter += 1
        p = prv[i]
        if p != -1:
            r = ranks.get((symbols[p], symbols[i]))
            if r is not None:
                heapq.heappush(heap, (r, counter, p, i))
                counter += 1

    return [symbols[i] for i in range(n) if alive[i]]


def encode(
    model: TokenizerModel,
    text: str,
    max_len: int,
    pad_to_max: bool = False,
    mark_global: Sequence[int] = (0,),
) -> Encoding:
    """Encode text as SOS + subword ids + EOS with truncation and padding.

    Truncation keeps EOS as the last real token; unknown symbols map to the
    unk id; ``mark_global`` positions (clipped to real tokens) are flagged
    for global attention.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    unk = model.special["unk_id"]
    ids = [model.special["sos_id"]]
    ids.extend(model.vocab.get(piece, unk) for piece in _bpe_segment(model, text))
    ids.append(model.special["eos_id"])
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [model.special["eos_id"]]
    length = len(ids)

    total = max_len if pad_to_max else length
    out = np.full(total, model.special["pad_id"], dtype=np.int64)
    out[:length] = ids
    attention = np.zeros(total, dtype=np.int64)
    attention[:length] = 1
    global_mask = np.zeros(total, dtype=np.int64)
    for pos in mark_global:
        if 0 <= pos < length:
            global_mask[pos] = 1
    return Encoding(ids=out, attention_mask=attention, global_mask=global_mask, length=length)


def decode(model: TokenizerModel, ids: Sequence[int]) -> str:
    """Concatenate subwords, dropping special tokens; out-of-vocab ids are errors."""
    special_ids = set(model.special.values())
    pieces = []
    for i in ids:
        i = int(i)
        if i >= len(model.vocab) or i < 0:
            raise ValueError(f"id {i} out of range for vocab of {len(model.vocab)}")
        if i in special_ids:
            continue
        pieces.append(model.id_to_token[i])
    return "".join(pieces)


# --- model persistence -------------------------------------------------
#
# Two UTF-8 files: vocab (token<TAB>id per line) and merges (pair per line,
# priority order). Tokens are raw character n-grams and may contain tabs or
# newlines, so those plus backslash/CR are escaped.

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def _escape(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def _unescape(token: str) -> str:
    out = []
    it: Iterator[str] = iter(token)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            if nxt not in _UNESCAPES:
                raise ValueError(f"bad escape sequence \\{nxt} in token")
            out.append(_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def save_model(model: TokenizerModel, vocab_path: str, merges_path: str) -> None:
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for tok, i in sorted(model.vocab.items(), key=lambda kv: kv[1]):
            fh.write(f"{_escape(tok)}\t{i}\n")
    with open(merges_path, "w", encoding="utf-8") as fh:
        for left, right in model.merges:
            fh.write(f"{_escape(left)}\t{_escape(right)}\n")


def load_model(vocab_path: str, merges_path: str) -> TokenizerModel:
    vocab: dict[str, int] = {}
    with open(vocab_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                tok, id_str = line.split("\t")
                vocab[_unescape(tok)] = int(id_str)
            except ValueError as exc:
                raise ValueError(f"{vocab_path}:{lineno}: malformed entry: {exc}") from exc
    merges: list[tuple[str, str]] = []
    with open(merges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{merges_path}:{lineno}: expected two tab-separated symbols")
            merges.append((_unescape(parts[0]), _unescape(parts[1])))
    return TokenizerModel(vocab=vocab, merges=merges)
