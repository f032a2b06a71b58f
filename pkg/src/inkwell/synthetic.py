"""Synthetic planted-keyword review corpus.

Each review is 30-60 filler words with 1-3 contiguous runs of polarity
keywords planted in it; the label is simply the polarity of the planted
words, and the planted runs double as gold evidence spans.  Keyword mass is
pinned to ~20% of each document so evidence size lines up with a 20%
rationale budget.  Small but honest: classifiers must find the keywords,
extractors must localize them.
"""

from __future__ import annotations

from typing import Optional

from . import rng as rngmod
from .corpus import Dataset, Document, LabelSpace, tokenize_subwords
from .rationale import (_uniform_composition, _uniform_gap_starts,
                        max_feasible_segments, word_budget)

POSITIVE_WORDS = [
    "wonderful", "superb", "delightful", "brilliant", "captivating",
    "masterful", "stunning", "heartfelt", "gripping", "charming",
    "dazzling", "flawless", "inspired", "riveting", "luminous",
    "triumphant", "exquisite", "soaring", "magnetic", "joyous",
]

NEGATIVE_WORDS = [
    "dreadful", "tedious", "clumsy", "lifeless", "grating",
    "hollow", "muddled", "shallow", "plodding", "wooden",
    "dismal", "tiresome", "careless", "bloated", "joyless",
    "stilted", "lurid", "aimless", "leaden", "forgettable",
]

FILLER_WORDS = [
    "the", "movie", "film", "plot", "actor", "scene", "camera", "story",
    "director", "screen", "runtime", "dialogue", "soundtrack", "character",
    "sequel", "studio", "audience", "ticket", "trailer", "montage",
    "editing", "casting", "premiere", "script", "subplot", "narrator",
    "costume", "lighting", "footage", "matinee", "cinema", "reel",
    "genre", "setting", "pacing", "ensemble", "protagonist", "cliffhanger",
    "voiceover", "widescreen",
]

# These appear in documents but not in the subword vocabulary as whole words,
# so they split into pieces and exercise the subtoken-to-word pooling path.
SPLIT_WORDS = ["rewatchable", "cinemascope", "storyboarding", "overdirected"]
SPLIT_PIECES = ["re", "watch", "able", "scope", "board", "ing", "over", "direct", "ed"]

LABELS = ["positive", "negative"]

KEYWORDS = {"positive": POSITIVE_WORDS, "negative": NEGATIVE_WORDS}


def subword_vocab() -> set[str]:
    """Vocabulary for the greedy tokenizer: whole words plus split pieces."""
    vocab = set(POSITIVE_WORDS) | set(NEGATIVE_WORDS) | set(FILLER_WORDS)
    vocab |= set(SPLIT_PIECES)
    return vocab


def label_space() -> LabelSpace:
    return LabelSpace(names=list(LABELS))


def _make_document(doc_id: str, label: str, rng, vocab: set[str],
                   planted_fraction: float, max_segments: int) -> Document:
    n = int(rng.integers(30, 61))
    planted = word_budget(planted_fraction, n)
    segments = int(rng.integers(1, max_segments + 1))
    segments = min(segments, max_feasible_segments(n, planted), planted)
    lengths = _uniform_composition(planted, segments, rng)
    starts = _uniform_gap_starts(n, lengths, rng)
    spans = [(s, s + length) for s, length in zip(starts, lengths)]

    fillers = FILLER_WORDS + SPLIT_WORDS
    words = [str(rng.choice(fillers)) for _ in range(n)]
    keywords = KEYWORDS[label]
    for start, end in spans:
        for i in range(start, end):
            words[i] = str(rng.choice(keywords))

    subtokens, alignment = tokenize_subwords(words, vocab)
    return Document(doc_id=doc_id, words=words, subtokens=subtokens,
                    alignment=alignment, label=label, evidence=spans)


def make_reviews(n_train: int = 300, n_val: int = 100, n_test: int = 200,
                 seed: int = 0, planted_fraction: float = 0.2,
                 max_segments: int = 3,
                 vocab: Optional[set[str]] = None) -> Dataset:
    """Build a balanced synthetic review dataset.

    Deterministic in ``seed``.  Labels alternate within each split so every
    split is as balanced as its size allows.
    """
    vocab = subword_vocab() if vocab is None else vocab
    dataset = Dataset(label_space=label_space())
    rng = rngmod.generator(seed, "synthetic-corpus")
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(count):
            label = LABELS[i % 2]
            doc = _make_document(f"{split}-{i:04d}", label, rng, vocab,
                                 planted_fraction, max_segments)
            dataset.split(split).append(doc)
    return dataset
