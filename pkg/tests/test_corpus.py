"""Ingestion, tokenization, and validation of the document model."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inkwell.corpus import (
    CorpusError, Dataset, Document, LabelSpace, load_jsonl, save_jsonl,
    tokenize_subwords, validate, word_surfaces,
)

LABELS = LabelSpace(["positive", "negative"])


def write_lines(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                    encoding="utf-8")


def record(doc_id, split="train", words=("fine", "movie"), label="positive",
           **extra):
    rec = {"id": doc_id, "split": split, "words": list(words), "label": label}
    rec.update(extra)
    return rec


def test_load_jsonl_split_sizes(tmp_path):
    path = tmp_path / "data.jsonl"
    write_lines(path, [record("a"), record("b"),
                       record("c", split="test", label="negative")])
    ds = load_jsonl(path, LABELS)
    assert (len(ds.train), len(ds.val), len(ds.test)) == (2, 0, 1)
    assert [d.doc_id for d in ds.train] == ["a", "b"]  # order preserved


def test_load_jsonl_rejects_out_of_bounds_evidence(tmp_path):
    path = tmp_path / "data.jsonl"
    write_lines(path, [record("a", evidence=[[0, 3]])])
    with pytest.raises(CorpusError, match="out of bounds"):
        load_jsonl(path, LABELS)


def test_load_jsonl_rejects_unknown_label(tmp_path):
    path = tmp_path / "data.jsonl"
    write_lines(path, [record("a", label="neutral")])
    with pytest.raises(CorpusError, match="unknown label"):
        load_jsonl(path, LABELS)


def test_load_jsonl_reports_line_number(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(json.dumps(record("a")) + "\nnot json\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="line 2"):
        load_jsonl(path, LABELS)


def test_load_jsonl_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "data.jsonl"
    write_lines(path, [record("a"), record("a", split="test")])
    with pytest.raises(CorpusError, match="duplicate"):
        load_jsonl(path, LABELS)


def test_load_jsonl_truncates_and_marks(tmp_path):
    path = tmp_path / "data.jsonl"
    write_lines(path, [record("a", words=["w"] * 10, evidence=[[0, 2], [7, 10]])])
    ds = load_jsonl(path, LABELS, max_words=5)
    doc = ds.train[0]
    assert doc.n_words == 5
    assert doc.truncated
    # spans clipped to the surviving words; fully cut spans dropped
    assert doc.evidence == [(0, 2)]


def test_tokenize_whole_words_is_identity():
    subtokens, alignment = tokenize_subwords(["good", "movie"],
                                             {"good", "movie"})
    assert subtokens == ["good", "movie"]
    assert alignment == [0, 1]


def test_tokenize_splits_against_vocab():
    subtokens, alignment = tokenize_subwords(["unbelievable"],
                                             {"un", "believ", "able"})
    assert subtokens == ["un", "##believ", "##able"]
    assert alignment == [0, 0, 0]


def test_tokenize_falls_back_to_characters():
    subtokens, alignment = tokenize_subwords(["xyz"], {"nothing"})
    assert subtokens == ["x", "##y", "##z"]
    assert alignment == [0, 0, 0]


def test_tokenize_rejects_empty_word():
    with pytest.raises(CorpusError, match="empty word"):
        tokenize_subwords(["ok", ""], {"ok"})


def test_word_surfaces_round_trip():
    words = ["unbelievable", "movie", "xq"]
    vocab = {"un", "believ", "able", "movie"}
    subtokens, alignment = tokenize_subwords(words, vocab)
    assert word_surfaces(subtokens, alignment, len(words)) == words


def make_doc(**kwargs):
    base = dict(doc_id="d", words=["a", "b", "c"], subtokens=["a", "b", "c"],
                alignment=[0, 1, 2], label="positive")
    base.update(kwargs)
    return Document(**base)


def test_validate_accepts_valid_documents():
    ds = Dataset(label_space=LABELS, train=[make_doc()])
    assert validate(ds) == []


def test_validate_flags_alignment_gap():
    ds = Dataset(label_space=LABELS,
                 train=[make_doc(subtokens=["a", "b"], alignment=[0, 2])])
    problems = validate(ds)
    assert any("cover" in p for p in problems)


def test_validate_accepts_overlapping_evidence():
    ds = Dataset(label_space=LABELS,
                 train=[make_doc(evidence=[(0, 2), (1, 3)])])
    assert validate(ds) == []


def test_validate_flags_bad_span_and_label():
    ds = Dataset(label_space=LABELS,
                 train=[make_doc(label="meh", evidence=[(2, 2)])])
    problems = validate(ds)
    assert any("unknown label" in p for p in problems)
    assert any("out of bounds" in p for p in problems)


def test_label_space_contract():
    assert LABELS.index("negative") == 1
    assert "positive" in LABELS and "neutral" not in LABELS
    with pytest.raises(CorpusError):
        LABELS.index("neutral")
    with pytest.raises(CorpusError):
        LabelSpace(["only"])
    with pytest.raises(CorpusError):
        LabelSpace(["a", "a"])


words_strategy = st.lists(
    st.text(alphabet="abcdefg", min_size=1, max_size=6), min_size=1, max_size=12)


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_save_load_round_trip(tmp_path_factory, data):
    tmp_path = tmp_path_factory.mktemp("roundtrip")
    docs = {"train": [], "val": [], "test": []}
    n = data.draw(st.integers(min_value=1, max_value=6))
    for i in range(n):
        words = data.draw(words_strategy)
        split = data.draw(st.sampled_from(["train", "val", "test"]))
        label = data.draw(st.sampled_from(LABELS.names))
        spans = []
        if len(words) > 1 and data.draw(st.booleans()):
            start = data.draw(st.integers(0, len(words) - 2))
            end = data.draw(st.integers(start + 1, len(words)))
            spans.append((start, end))
        docs[split].append(Document(
            doc_id=f"doc-{i}", words=words, subtokens=list(words),
            alignment=list(range(len(words))), label=label, evidence=spans))
    ds = Dataset(label_space=LABELS, **docs)
    path = tmp_path / "ds.jsonl"
    save_jsonl(ds, path)
    loaded = load_jsonl(path, LABELS)
    for split in ("train", "val", "test"):
        orig, back = ds.split(split), loaded.split(split)
        assert [d.doc_id for d in back] == [d.doc_id for d in orig]
        for a, b in zip(orig, back):
            assert (a.words, a.label, a.evidence) == (b.words, b.label, b.evidence)
            assert (a.subtokens, a.alignment) == (b.subtokens, b.alignment)
