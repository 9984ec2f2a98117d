"""Corpus records, deterministic splitting, line-delimited IO, and length stats."""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .textnorm import CleanDocument

SPLIT_NAMES = ("train", "validation", "test")

# Histogram bucket edges (token counts); the last bucket is open-ended.
HISTOGRAM_EDGES = (0, 512, 1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    article: str
    summary: str
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.article:
            raise ValueError(f"record {self.id}: article must be non-empty")
        if not self.summary:
            raise ValueError(f"record {self.id}: summary must be non-empty")


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.90
    validation: float = 0.05
    test: float = 0.05

    def __post_init__(self) -> None:
        parts = (self.train, self.validation, self.test)
        if any(p < 0 for p in parts):
            raise ValueError("split ratios must be non-negative")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {sum(parts)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.train, self.validation, self.test)


@dataclass
class CorpusStats:
    record_count: int
    article_token_histogram: list[int]
    summary_token_histogram: list[int]
    article_mean: float
    article_median: float
    summary_mean: float
    summary_median: float
    bucket_edges: tuple[int, ...] = HISTOGRAM_EDGES

    def as_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "bucket_edges": list(self.bucket_edges),
            "article_token_histogram": self.article_token_histogram,
            "summary_token_histogram": self.summary_token_histogram,
            "article_mean": self.article_mean,
            "article_median": self.article_median,
            "summary_mean": self.summary_mean,
            "summary_median": self.summary_median,
        }


def make_record(doc: CleanDocument) -> CorpusRecord:
    """Turn an accepted clean document into a corpus record.

    The cleaned body becomes the article and the cleaned abstract the
    reference summary; an empty summary is an error.
    """
    if not doc.summary:
        raise ValueError(f"document {doc.id}: summary is empty after normalization")
    return CorpusRecord(
        id=doc.id, article=doc.body, summary=doc.summary, category=doc.category
    )


def assign_split(doc_id: str, seed: int, ratios: SplitRatios) -> str:
    """Deterministically bucket an id into train/validation/test.

    Uses a keyed blake2b hash of the id so the assignment is stable across
    runs, machines, and corpus orderings.
    """
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8, key=key).digest()
    u = int.from_bytes(digest, "little") / 2.0**64
    acc = 0.0
    for name, ratio in zip(SPLIT_NAMES, ratios.as_tuple()):
        acc += ratio
        if u < acc:
            return name
    return SPLIT_NAMES[-1]


def write_corpus(records: Iterable[CorpusRecord], path: str) -> int:
    """Write records as UTF-8 JSON lines; returns the number written.

    Duplicate ids are an error.
    """
    seen: set[str] = set()
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "article": rec.article,
                        "summary": rec.summary,
                        "category": rec.category,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
            count += 1
    return count


def read_corpus(path: str) -> list[CorpusRecord]:
    """Read a JSON-lines corpus file; errors name the offending line."""
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = CorpusRecord(
                    id=obj["id"],
                    article=obj["article"],
                    summary=obj["summary"],
                    category=obj.get("category"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if rec.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def split_corpus(
    records: Sequence[CorpusRecord], seed: int, ratios: SplitRatios | None = None
) -> dict[str, list[CorpusRecord]]:
    """Partition records by assign_split; every record lands in exactly one split."""
    ratios = ratios or SplitRatios()
    out: dict[str, list[CorpusRecord]] = {name: [] for name in SPLIT_NAMES}
    for rec in records:
        out[assign_split(rec.id, seed, ratios)].append(rec)
    return out


def _token_count(text: str) -> int:
    return len(text.split())


def _histogram(counts: Sequence[int]) -> list[int]:
    buckets = [0] * len(HISTOGRAM_EDGES)
    for c in counts:
        idx = len(HISTOGRAM_EDGES) - 1
        for i in range(len(HISTOGRAM_EDGES) - 1):
            if c < HISTOGRAM_EDGES[i + 1]:
                idx = i
                break
        buckets[idx] += 1
    return buckets


def compute_stats(records: Sequence[CorpusRecord]) -> CorpusStats:
    """Whitespace-token length statistics over a non-empty corpus."""
    if not records:
        raise ValueError("cannot compute stats on an empty corpus")
    article_counts = [_token_count(r.article) for r in records]
    summary_counts = [_token_count(r.summary) for r in records]
    return CorpusStats(
        record_count=len(records),
        article_token_histogram=_histogram(article_counts),
        summary_token_histogram=_histogram(summary_counts),
        article_mean=statistics.fmean(article_counts),
        article_median=float(statistics.median(article_counts)),
        summary_mean=statistics.fmean(summary_counts),
        summary_median=float(statistics.median(summary_counts)),
    )
