"""Embedding-based precision/recall/F1 for generated summaries.

Each candidate token is matched to its most similar reference token by
cosine, and vice versa; precision and recall are the means of those maxima
and F1 their harmonic mean. Token vectors come either from the model's own
encoder (final-layer states averaged per token id, with the input embedding
as fallback for ids never seen in context) or from an external text file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .model import ModelConfig, _encode, _spec_for_encoding
from .tokenizer import EOS, PAD, SOS, Encoding, TokenizerModel

_CONTENT_EXCLUDED = (PAD, SOS, EOS)


@dataclass(frozen=True)
class ScoreReport:
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


class EmbeddingTable:
    """token id -> fixed-dimension vector, from the encoder or a text file."""

    def __init__(self, vectors: dict[int, np.ndarray], source: str):
        if not vectors:
            raise ValueError("embedding table is empty")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError(f"inconsistent embedding shapes: {sorted(dims)}")
        self.dim = next(iter(dims))[0]
        self.source = source
        self._vectors = {t: np.asarray(v, dtype=tape.DTYPE) for t, v in vectors.items()}

    def lookup(self, token_id: int) -> np.ndarray:
        try:
            return self._vectors[token_id]
        except KeyError:
            raise KeyError(f"no embedding for token id {token_id}") from None

    def matrix(self, ids) -> np.ndarray:
        return np.stack([self.lookup(int(t)) for t in ids])

    @classmethod
    def from_encoder(cls, params, mcfg: ModelConfig,
                     encodings: list[Encoding]) -> "EmbeddingTable":
        """Average final-layer encoder states per token id over the given texts.

        Ids that never occur in the encodings fall back to their input
        embedding row, so every id in the vocabulary resolves.
        """
        d = mcfg.d_model
        sums: dict[int, np.ndarray] = {}
        counts: dict[int, int] = {}
        for enc in encodings:
            n_real = len(enc.real_ids)
            ids = np.asarray(enc.ids[:n_real])
            with tape.no_grad():
                states = _encode(params, mcfg, ids,
                                 _spec_for_encoding(mcfg, enc, n_real)).data
            for tok, vec in zip(ids, states):
                t = int(tok)
                if t in sums:
                    sums[t] += vec
                    counts[t] += 1
                else:
                    sums[t] = vec.copy()
                    counts[t] = 1
        vectors = {t: s / counts[t] for t, s in sums.items()}
        emb = params["tok_emb"].data
        for t in range(emb.shape[0]):
            if t not in vectors:
                vectors[t] = emb[t].copy()
        assert all(v.shape == (d,) for v in vectors.values())
        return cls(vectors, source="model_encoder")

    @classmethod
    def from_file(cls, path, tok: TokenizerModel) -> "EmbeddingTable":
        """Load `dim` header then token<TAB>floats lines; keys map via the vocab."""
        vectors: dict[int, np.ndarray] = {}
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            try:
                dim = int(header)
            except ValueError:
                raise ValueError(f"{path}: first line must be the dimension, got {header!r}")
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, rest = line.partition("\t")
                values = np.asarray([float(x) for x in rest.split()], dtype=tape.DTYPE)
                if values.shape != (dim,):
                    raise ValueError(f"{path}:{lineno}: expected {dim} floats, got {len(values)}")
                if token in tok.vocab:
                    vectors[tok.vocab[token]] = values
        if not vectors:
            raise ValueError(f"{path}: no line matched any vocabulary token")
        return cls(vectors, source="external_file")


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=tape.DTYPE)
    v = np.asarray(v, dtype=tape.DTYPE)
    if u.shape != v.shape:
        raise ValueError(f"vector length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero-norm vector")
    return float(u @ v / (nu * nv))


def f1(p: float, r: float) -> float:
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def strip_special(ids) -> list[int]:
    return [int(t) for t in ids if int(t) not in _CONTENT_EXCLUDED]


def _normalized(emb: EmbeddingTable, ids) -> np.ndarray:
    m = emb.matrix(ids)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cosine undefined for zero-norm embedding")
    return m / norms


def score_pair(candidate_ids, reference_ids, emb: EmbeddingTable) -> ScoreReport:
    """Greedy max-cosine matching in both directions."""
    cand = strip_special(candidate_ids)
    ref = strip_special(reference_ids)
    if not cand or not ref:
        raise ValueError("cannot score an empty token sequence")
    sim = _normalized(emb, cand) @ _normalized(emb, ref).T
    p = float(sim.max(axis=1).mean())
    r = float(sim.max(axis=0).mean())
    return ScoreReport(p, r, f1(p, r))


def score_corpus(pairs, emb: EmbeddingTable) -> ScoreReport:
    """Mean per-pair precision and recall; F1 is their harmonic mean."""
    reports = [score_pair(c, r, emb) for c, r in pairs]
    if not reports:
        raise ValueError("no pairs to score")
    p = float(np.mean([rep.precision for rep in reports]))
    r = float(np.mean([rep.recall for rep in reports]))
    return ScoreReport(p, r, f1(p, r))
