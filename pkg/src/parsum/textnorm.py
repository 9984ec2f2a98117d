"""Deterministic Persian text cleaning and document-level filtering.

The cleanup pipeline, in fixed order:

1. character normalization (Arabic -> Persian forms, diacritic removal)
2. line normalization (collapse horizontal whitespace, drop empty lines)
3. front-matter removal (drop everything before the first heading marker)
4. short-line filtering (drop lines with fewer than ``min_line_tokens`` tokens)
5. language gate (reject documents whose letter mass is not mostly Arabic-script)

All functions are pure; documents are never mutated in place.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field, replace

# Arabic forms that Persian orthography writes differently.
# U+064A ARABIC LETTER YEH            -> U+06CC ARABIC LETTER FARSI YEH
# U+0643 ARABIC LETTER KAF            -> U+06A9 ARABIC LETTER KEHEH
# U+0629 ARABIC LETTER TEH MARBUTA    -> U+0647 ARABIC LETTER HEH
# U+0649 ARABIC LETTER ALEF MAKSURA   -> U+06CC ARABIC LETTER FARSI YEH
# Arabic-Indic digits U+0660..U+0669  -> Extended Arabic-Indic U+06F0..U+06F9
DEFAULT_CHAR_MAP: dict[str, str] = {
    "ي": "ی",
    "ك": "ک",
    "ة": "ه",
    "ى": "ی",
    **{chr(0x0660 + i): chr(0x06F0 + i) for i in range(10)},
}

# Deleted outright: harakat/tanwin diacritics and tatweel. ZWNJ (U+200C) is
# orthographically meaningful in Persian compounds and is kept.
DEFAULT_STRIP_RANGES: tuple[tuple[int, int], ...] = (
    (0x064B, 0x0652),  # tanwin + fatha/damma/kasra + shadda + sukun
    (0x0640, 0x0640),  # tatweel
)

# Headings that open the main content of an article. Everything before the
# first line containing one of these is treated as front matter.
DEFAULT_FRONT_MATTER_MARKERS: tuple[str, ...] = ("مقدمه", "چکیده")

# Unicode blocks counted as "Persian" letters (Arabic script and its
# presentation forms; Persian-specific letters live in the base block).
_ARABIC_SCRIPT_RANGES = (
    (0x0600, 0x06FF),
    (0x0750, 0x077F),
    (0x08A0, 0x08FF),
    (0xFB50, 0xFDFF),
    (0xFE70, 0xFEFF),
)

_HORIZONTAL_WS_RE = re.compile(r"[^\S\n]+")

REJECT_NON_PERSIAN = "non_persian"
REJECT_EMPTY = "empty_after_filtering"


@dataclass(frozen=True)
class RawDocument:
    """One document/summary pair as it comes out of text extraction."""

    id: str
    body: str
    summary: str
    title: str | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")


# A CleanDocument has the same shape as a RawDocument; the distinction is
# purely contractual (body/summary fully normalized).
CleanDocument = RawDocument


@dataclass(frozen=True)
class Rejection:
    """Machine-readable reason a document was dropped from the corpus."""

    id: str
    reason: str

    def as_record(self) -> dict[str, str]:
        return {"id": self.id, "reason": self.reason}


@dataclass(frozen=True)
class NormalizationRules:
    char_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CHAR_MAP))
    strip_ranges: tuple[tuple[int, int], ...] = DEFAULT_STRIP_RANGES
    min_line_tokens: int = 10
    persian_threshold: float = 0.6
    front_matter_markers: tuple[str, ...] = DEFAULT_FRONT_MATTER_MARKERS

    def __post_init__(self) -> None:
        for key in self.char_map:
            if len(key) != 1:
                raise ValueError(f"char_map key {key!r} is not a single codepoint")
        if self.min_line_tokens < 0:
            raise ValueError("min_line_tokens must be >= 0")
        if not 0.0 <= self.persian_threshold <= 1.0:
            raise ValueError("persian_threshold must be in [0, 1]")
        spans = sorted(self.strip_ranges)
        for lo, hi in spans:
            if lo > hi:
                raise ValueError(f"strip_ranges entry ({lo:#x}, {hi:#x}) is inverted")
        for (_, hi), (lo2, _) in zip(spans, spans[1:]):
            if lo2 <= hi:
                raise ValueError("strip_ranges must be disjoint")

    def translation_table(self) -> dict[int, str | None]:
        table: dict[int, str | None] = {ord(k): v for k, v in self.char_map.items()}
        for lo, hi in self.strip_ranges:
            for cp in range(lo, hi + 1):
                table.setdefault(cp, None)
        return table


def normalize_characters(text: str, rules: NormalizationRules) -> str:
    """Apply the codepoint map and delete stripped ranges; total function."""
    return text.translate(rules.translation_table())


def normalize_lines(text: str) -> str:
    """Collapse runs of horizontal whitespace to one space and drop empty lines."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = []
    for line in text.split("\n"):
        line = _HORIZONTAL_WS_RE.sub(" ", line).strip()
        if line:
            lines.append(line)
    return "\n".join(lines)


def filter_short_lines(text: str, min_tokens: int) -> str:
    """Keep only lines with at least ``min_tokens`` whitespace-separated tokens.

    Surviving lines are preserved exactly and in order.
    """
    if not text:
        return ""
    kept = [line for line in text.split("\n") if len(line.split()) >= min_tokens]
    return "\n".join(kept)


def _is_arabic_script(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _ARABIC_SCRIPT_RANGES)


def persian_ratio(text: str) -> float:
    """Fraction of letter codepoints that belong to the Arabic-script blocks.

    Digits, punctuation, and whitespace are neutral. Returns 0.0 for texts
    with no letters at all.
    """
    letters = 0
    persian = 0
    for ch in text:
        if unicodedata.category(ch).startswith("L"):
            letters += 1
            if _is_arabic_script(ch):
                persian += 1
    return persian / letters if letters else 0.0


def strip_front_matter(
    doc: RawDocument, rules: NormalizationRules
) -> tuple[RawDocument, bool]:
    """Drop all body lines strictly before the first front-matter marker line.

    Returns (document, marker_found). When no marker matches, the body is
    left unchanged and marker_found is False so callers can log the miss.
    """
    lines = doc.body.split("\n") if doc.body else []
    for i, line in enumerate(lines):
        if any(marker in line for marker in rules.front_matter_markers):
            return replace(doc, body="\n".join(lines[i:])), True
    return doc, False


def normalize_document(
    doc: RawDocument, rules: NormalizationRules | None = None
) -> CleanDocument | Rejection:
    """Run the full cleanup pipeline on one document.

    Stage order is fixed: characters -> lines -> front matter -> short-line
    filter -> language gate. The summary receives character and line
    normalization only; the structural filters are about article bodies.
    """
    rules = rules or NormalizationRules()
    body = normalize_characters(doc.body, rules)
    body = normalize_lines(body)
    stripped, _found = strip_front_matter(replace(doc, body=body), rules)
    body = filter_short_lines(stripped.body, rules.min_line_tokens)
    summary = normalize_lines(normalize_characters(doc.summary, rules))
    if not body:
        return Rejection(doc.id, REJECT_EMPTY)
    if persian_ratio(body) < rules.persian_threshold:
        return Rejection(doc.id, REJECT_NON_PERSIAN)
    return replace(doc, body=body, summary=summary)


def load_char_map(path: str) -> dict[str, str]:
    """Read a character-map config file: one ``SRC_HEX -> DST_HEX...`` per line.

    The destination may be several space-separated codepoints. Blank lines
    and ``#`` comments are ignored.
    """
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'SRC_HEX -> DST_HEX'")
            src_part, dst_part = line.split("->", 1)
            try:
                src = chr(int(src_part.strip(), 16))
                dst = "".join(chr(int(tok, 16)) for tok in dst_part.split())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad codepoint: {exc}") from exc
            mapping[src] = dst
    return mapping
