"""Document model, subword tokenization, and JSONL ingestion.

A document is a list of words plus a parallel subtoken layer.  The
``alignment`` array maps each subtoken back to the word it came from; scores
computed per subtoken get pooled to words through it.  Evidence spans are
half-open word ranges ``[start, end)`` and may overlap; consumers union them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

VALID_SPLITS = ("train", "val", "test")
DEFAULT_MAX_WORDS = 256

CONTINUATION = "##"


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus inputs."""


@dataclass
class LabelSpace:
    """Fixed, ordered label set."""

    names: list[str]

    def __post_init__(self):
        if len(self.names) < 2:
            raise CorpusError("label space needs at least two labels")
        if len(set(self.names)) != len(self.names):
            raise CorpusError("label names must be unique")
        self._index = {name: i for i, name in enumerate(self.names)}

    def index(self, name: str) -> int:
        if name not in self._index:
            raise CorpusError(f"unknown label: {name!r}")
        return self._index[name]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index


@dataclass
class Document:
    doc_id: str
    words: list[str]
    subtokens: list[str]
    alignment: list[int]  # subtoken -> word index, non-decreasing, covers all words
    label: str
    evidence: list[tuple[int, int]] = field(default_factory=list)
    truncated: bool = False

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_subtokens(self) -> int:
        return len(self.subtokens)


@dataclass
class Dataset:
    label_space: LabelSpace
    train: list[Document] = field(default_factory=list)
    val: list[Document] = field(default_factory=list)
    test: list[Document] = field(default_factory=list)

    def split(self, name: str) -> list[Document]:
        if name not in VALID_SPLITS:
            raise CorpusError(f"unknown split: {name!r}")
        return getattr(self, name)

    def documents(self) -> Iterable[Document]:
        yield from self.train
        yield from self.val
        yield from self.test

    def by_id(self, doc_id: str) -> Document:
        for doc in self.documents():
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)


def tokenize_subwords(words: list[str], vocab: set[str]) -> tuple[list[str], list[int]]:
    """Greedy longest-match subword split with per-character fallback.

    Pieces after the first within a word carry a ``##`` continuation marker.
    Stripping markers and concatenating a word's pieces reproduces the word
    exactly, for any vocabulary.
    """
    subtokens: list[str] = []
    alignment: list[int] = []
    for w_idx, word in enumerate(words):
        if not word:
            raise CorpusError(f"empty word at position {w_idx}")
        pos = 0
        first = True
        while pos < len(word):
            match = None
            # longest vocab entry that prefixes the remainder
            for end in range(len(word), pos, -1):
                if word[pos:end] in vocab:
                    match = word[pos:end]
                    break
            if match is None:
                match = word[pos]  # single-character fallback
            subtokens.append(match if first else CONTINUATION + match)
            alignment.append(w_idx)
            pos += len(match)
            first = False
    return subtokens, alignment


def word_surfaces(subtokens: list[str], alignment: list[int], n_words: int) -> list[str]:
    """Reassemble word strings from marked subtokens."""
    words = [""] * n_words
    seen = [False] * n_words
    for piece, w in zip(subtokens, alignment):
        if seen[w] and piece.startswith(CONTINUATION):
            piece = piece[len(CONTINUATION):]
        words[w] += piece
        seen[w] = True
    return words


def _check_alignment(doc: Document) -> list[str]:
    problems = []
    n, m = doc.n_words, doc.n_subtokens
    a = doc.alignment
    if m == 0 or len(a) != m:
        problems.append(f"{doc.doc_id}: alignment length {len(a)} != subtoken count {m}")
        return problems
    if any(a[i] > a[i + 1] for i in range(m - 1)):
        problems.append(f"{doc.doc_id}: alignment is not non-decreasing")
    if a[0] != 0:
        problems.append(f"{doc.doc_id}: alignment does not start at word 0")
    if a[-1] != n - 1:
        problems.append(f"{doc.doc_id}: alignment does not end at the last word")
    if set(a) != set(range(n)):
        problems.append(f"{doc.doc_id}: alignment does not cover every word")
    return problems


def validate(dataset: Dataset) -> list[str]:
    """Structural checks; returns a list of human-readable violations."""
    problems: list[str] = []
    seen_ids: set[str] = set()
    for doc in dataset.documents():
        if doc.doc_id in seen_ids:
            problems.append(f"duplicate document id: {doc.doc_id}")
        seen_ids.add(doc.doc_id)
        if doc.n_words < 1:
            problems.append(f"{doc.doc_id}: document has no words")
            continue
        if doc.label not in dataset.label_space:
            problems.append(f"{doc.doc_id}: unknown label {doc.label!r}")
        problems.extend(_check_alignment(doc))
        for start, end in doc.evidence:
            if not (0 <= start < end <= doc.n_words):
                problems.append(
                    f"{doc.doc_id}: evidence span ({start}, {end}) out of bounds "
                    f"for {doc.n_words} words")
    return problems


def _parse_record(raw: str, line_no: int, label_space: LabelSpace) -> dict:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {line_no}: malformed JSON: {exc}") from None
    if not isinstance(record, dict):
        raise CorpusError(f"line {line_no}: record is not an object")
    for key in ("id", "split", "words", "label"):
        if key not in record:
            raise CorpusError(f"line {line_no}: missing field {key!r}")
    if record["split"] not in VALID_SPLITS:
        raise CorpusError(f"line {line_no}: unknown split {record['split']!r}")
    words = record["words"]
    if (not isinstance(words, list) or not words
            or not all(isinstance(w, str) and w for w in words)):
        raise CorpusError(f"line {line_no}: 'words' must be a non-empty list of words")
    if record["label"] not in label_space:
        raise CorpusError(f"line {line_no}: unknown label {record['label']!r}")
    evidence = record.get("evidence", [])
    for span in evidence:
        if (not isinstance(span, (list, tuple)) or len(span) != 2
                or not all(isinstance(v, int) for v in span)):
            raise CorpusError(f"line {line_no}: malformed evidence span {span!r}")
        start, end = span
        if not (0 <= start < end <= len(words)):
            raise CorpusError(
                f"line {line_no}: evidence span ({start}, {end}) out of bounds "
                f"for {len(words)} words")
    return record


def load_jsonl(path: str | Path, label_space: LabelSpace,
               vocab: Optional[set[str]] = None,
               max_words: int = DEFAULT_MAX_WORDS) -> Dataset:
    """Load a dataset from JSONL, one document per line.

    Documents longer than ``max_words`` are truncated at ingestion and marked.
    When ``vocab`` is None each word becomes its own subtoken.  All structural
    errors carry the 1-based line number they were found on.
    """
    dataset = Dataset(label_space=label_space)
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            record = _parse_record(raw, line_no, label_space)
            doc_id = str(record["id"])
            if doc_id in seen:
                raise CorpusError(f"line {line_no}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            words = [str(w) for w in record["words"]]
            truncated = bool(record.get("truncated", False))
            if len(words) > max_words:
                words = words[:max_words]
                truncated = True
            evidence = []
            for start, end in record.get("evidence", []):
                end = min(end, len(words))
                if start < end:
                    evidence.append((start, end))
            if vocab is None:
                subtokens, alignment = list(words), list(range(len(words)))
            else:
                subtokens, alignment = tokenize_subwords(words, vocab)
            dataset.split(record["split"]).append(Document(
                doc_id=doc_id, words=words, subtokens=subtokens,
                alignment=alignment, label=record["label"],
                evidence=evidence, truncated=truncated))
    return dataset


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for split in VALID_SPLITS:
            for doc in dataset.split(split):
                record = {
                    "id": doc.doc_id,
                    "split": split,
                    "words": doc.words,
                    "label": doc.label,
                    "evidence": [list(span) for span in doc.evidence],
                }
                if doc.truncated:
                    record["truncated"] = True
                fh.write(json.dumps(record) + "\n")
