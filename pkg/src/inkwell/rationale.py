"""Word-level rationales: extraction, span bookkeeping, random baselines,
and masked rendering for annotators."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Document

log = logging.getLogger(__name__)

METHODS = ("limitedink", "random", "sparse_n", "sparse_c", "sparse_ib")

Span = tuple[int, int]


def word_budget(level: float, n_words: int) -> int:
    """Number of rationale words at a length level: ceil(level * n), floor 1.

    Levels are usually round percentages; those are computed in integer
    arithmetic so float noise (0.3 * 10 != 3.0) can never shift the budget.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError(f"length level must be in (0, 1], got {level}")
    pct = round(level * 100)
    if abs(level * 100 - pct) < 1e-9:
        k = -((-pct * n_words) // 100)
    else:
        k = math.ceil(level * n_words - 1e-9)
    return max(1, min(int(k), n_words))


@dataclass
class Rationale:
    doc_id: str
    method: str
    length_level: float
    mask: list[int]  # one 0/1 flag per word
    spans: list[Span] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.spans:
            self.spans = spans_from_mask(self.mask)

    @property
    def budget(self) -> int:
        return int(sum(self.mask))

    @property
    def n_segments(self) -> int:
        return len(self.spans)


def spans_from_mask(mask: Sequence[int]) -> list[Span]:
    """Maximal runs of selected words as half-open (start, end) spans."""
    spans: list[Span] = []
    start = None
    for i, bit in enumerate(mask):
        if bit and start is None:
            start = i
        elif not bit and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(mask)))
    return spans


def mask_from_spans(spans: Iterable[Span], n: int) -> list[int]:
    mask = [0] * n
    for start, end in spans:
        for i in range(start, end):
            mask[i] = 1
    return mask


def aggregate_word_scores(subtoken_scores: np.ndarray, alignment: Sequence[int],
                          n_words: int) -> np.ndarray:
    """Pool subtoken scores to words by max."""
    scores = np.asarray(subtoken_scores, dtype=np.float64).reshape(-1)
    if len(scores) != len(alignment):
        raise ValueError("score / alignment length mismatch")
    out = np.full(n_words, -np.inf)
    np.maximum.at(out, np.asarray(alignment, dtype=np.int64), scores)
    return out


def extract(doc: Document, subtoken_scores: np.ndarray, level: float,
            method: str = "limitedink") -> Rationale:
    """Top-budget word rationale from per-subtoken scores.

    Budgets are nested: with the same scores, a lower level's words are a
    subset of a higher level's (deterministic lower-index tie-breaking).
    """
    from .model import hard_topk  # local import keeps module load order flexible

    word_scores = aggregate_word_scores(subtoken_scores, doc.alignment, doc.n_words)
    k = word_budget(level, doc.n_words)
    mask = hard_topk(word_scores, k)
    return Rationale(doc_id=doc.doc_id, method=method, length_level=level,
                     mask=[int(b) for b in mask])


def avg_segment_count(rationales: Iterable[Rationale]) -> float:
    counts = [r.n_segments for r in rationales]
    if not counts:
        raise ValueError("no rationales given")
    return float(np.mean(counts))


def _uniform_composition(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    """Uniformly random composition of ``total`` into ``parts`` positive parts."""
    if parts > total:
        raise ValueError("more parts than units")
    if parts == 1:
        return [total]
    cuts = np.sort(rng.choice(total - 1, size=parts - 1, replace=False)) + 1
    bounds = np.concatenate([[0], cuts, [total]])
    return [int(v) for v in np.diff(bounds)]


def _uniform_gap_starts(n: int, lengths: Sequence[int],
                        rng: np.random.Generator) -> list[int]:
    """Uniform placement of runs with at least one unselected word between them.

    Chooses among all feasible placements with equal probability via a
    stars-and-bars draw over the slack positions.
    """
    s = len(lengths)
    free = n - sum(lengths) - (s - 1)
    if free < 0:
        raise ValueError("runs do not fit")
    # s bars among free + s slots define a weak composition of the slack
    bars = np.sort(rng.choice(free + s, size=s, replace=False))
    parts = [int(bars[0])] + [int(bars[i] - bars[i - 1] - 1) for i in range(1, s)]
    starts = []
    pos = 0
    for i, length in enumerate(lengths):
        gap = parts[i] + (1 if i > 0 else 0)
        pos += gap
        starts.append(pos)
        pos += length
    return starts


def max_feasible_segments(n: int, k: int) -> int:
    """Largest run count for ``k`` selected of ``n`` words with gaps between runs."""
    return max(1, min(k, n - k + 1))


def random_rationale(doc_id: str, n_words: int, budget: int, segments: int,
                     rng: np.random.Generator, level: float = 1.0) -> Rationale:
    """Content-independent rationale: ``budget`` words in ``segments`` runs.

    Run lengths are a uniform random composition of the budget; run positions
    are uniform over all feasible arrangements.  An infeasible segment count
    is reduced to the largest feasible value (logged).
    """
    if not 1 <= budget <= n_words:
        raise ValueError(f"budget {budget} out of range for {n_words} words")
    if segments < 1:
        raise ValueError("segment count must be positive")
    feasible = max_feasible_segments(n_words, budget)
    if segments > feasible:
        log.warning("reducing segment count %d -> %d (n=%d, budget=%d)",
                    segments, feasible, n_words, budget)
        segments = feasible
    lengths = _uniform_composition(budget, segments, rng)
    starts = _uniform_gap_starts(n_words, lengths, rng)
    spans = [(start, start + length) for start, length in zip(starts, lengths)]
    return Rationale(doc_id=doc_id, method="random", length_level=level,
                     mask=mask_from_spans(spans, n_words), spans=spans)


ELLIPSIS = "…"


def render_masked(words: Sequence[str], mask: Sequence[int],
                  rng: np.random.Generator) -> str:
    """Replace each masked run with 1-5 ellipsis glyphs.

    Rationale words appear verbatim in document order; nothing of a masked
    word's surface survives, and run lengths are hidden by the random glyph
    count.
    """
    if len(words) != len(mask):
        raise ValueError("mask length does not match word count")
    tokens: list[str] = []
    i = 0
    while i < len(words):
        if mask[i]:
            tokens.append(words[i])
            i += 1
        else:
            while i < len(words) and not mask[i]:
                i += 1
            tokens.append(ELLIPSIS * int(rng.integers(1, 6)))
    return " ".join(tokens)


# ----------------------------------------------------------------- JSONL io

def save_rationales(rationales: Iterable[Rationale], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rationales:
            fh.write(json.dumps({
                "doc_id": r.doc_id,
                "method": r.method,
                "length_level": r.length_level,
                "mask": r.mask,
                "spans": [list(s) for s in r.spans],
            }) + "\n")


def load_rationales(path: str | Path) -> list[Rationale]:
    out: list[Rationale] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
                out.append(Rationale(
                    doc_id=rec["doc_id"], method=rec["method"],
                    length_level=float(rec["length_level"]),
                    mask=[int(b) for b in rec["mask"]],
                    spans=[tuple(s) for s in rec.get("spans", [])]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {line_no}: bad rationale record: {exc}") from None
    return out


def index_rationales(rationales: Iterable[Rationale]
                     ) -> dict[tuple[str, str, int], Rationale]:
    """Index by (doc_id, method, level percent)."""
    out = {}
    for r in rationales:
        key = (r.doc_id, r.method, round(r.length_level * 100))
        if key in out:
            raise ValueError(f"duplicate rationale for {key}")
        out[key] = r
    return out
