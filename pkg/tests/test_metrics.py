"""Agreement/classification metrics and the ablation grid."""

import numpy as np
import pytest

from inkwell.corpus import Dataset, Document, LabelSpace
from inkwell.metrics import (
    ablation_variants, classification_scores, dataset_agreement, format_aligned,
    gold_evidence_mask, token_prf, weighted_f1,
)
from inkwell.rationale import Rationale
from inkwell.trainer import TrainConfig


def doc(doc_id, n, label="positive", evidence=()):
    words = [f"w{i}" for i in range(n)]
    return Document(doc_id=doc_id, words=words, subtokens=list(words),
                    alignment=list(range(n)), label=label,
                    evidence=[tuple(e) for e in evidence])


def test_token_prf_half_overlap():
    assert token_prf([1, 1, 0, 0], [0, 1, 1, 0]) == (0.5, 0.5, 0.5)


def test_token_prf_empty_sides():
    assert token_prf([0, 0], [1, 0]) == (0.0, 0.0, 0.0)
    assert token_prf([1, 0], [0, 0]) == (0.0, 0.0, 0.0)
    p, r, f1 = token_prf([1, 0], [1, 0])
    assert (p, r, f1) == (1.0, 1.0, 1.0)


def test_token_prf_rejects_length_mismatch():
    with pytest.raises(ValueError):
        token_prf([1, 0], [1, 0, 1])


def test_token_prf_matches_set_arithmetic():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        pred = rng.integers(0, 2, size=n)
        gold = rng.integers(0, 2, size=n)
        p_set = {i for i in range(n) if pred[i]}
        g_set = {i for i in range(n) if gold[i]}
        inter = len(p_set & g_set)
        exp_p = inter / len(p_set) if p_set else 0.0
        exp_r = inter / len(g_set) if g_set else 0.0
        exp_f = (2 * exp_p * exp_r / (exp_p + exp_r)) if exp_p + exp_r else 0.0
        assert token_prf(pred, gold) == (exp_p, exp_r, exp_f)


def test_gold_evidence_mask_union():
    d = doc("a", 6, evidence=[(0, 2), (4, 5)])
    assert gold_evidence_mask(d) == [1, 1, 0, 0, 1, 0]
    assert gold_evidence_mask(doc("b", 3)) is None


def test_weighted_f1_perfect_and_hopeless():
    assert weighted_f1([0, 1, 0, 1], [0, 1, 0, 1], 2) == 1.0
    assert weighted_f1([0, 1], [1, 0], 2) == 0.0


def test_weighted_f1_majority_predictor():
    # all predictions the majority label on a 60/40 binary split:
    # F1 on the majority class is 2*0.6/1.6 = 0.75, so 0.6*0.75 = 0.45
    gold = [0] * 6 + [1] * 4
    pred = [0] * 10
    assert weighted_f1(gold, pred, 2) == pytest.approx(0.45, abs=1e-12)


def test_classification_scores_per_label():
    gold = [0, 0, 1, 1, 1]
    pred = [0, 1, 1, 1, 0]
    out = classification_scores(gold, pred, ["neg", "pos"])
    neg, pos = out["per_label"]
    assert neg["support"] == 2 and pos["support"] == 3
    assert neg["precision"] == 0.5 and neg["recall"] == 0.5
    assert pos["precision"] == pytest.approx(2 / 3)
    assert pos["recall"] == pytest.approx(2 / 3)
    assert out["accuracy"] == pytest.approx(3 / 5)
    assert out["macro_f1"] == pytest.approx((0.5 + 2 / 3) / 2)
    assert out["weighted_f1"] == pytest.approx((0.5 * 2 + (2 / 3) * 3) / 5)


def test_classification_scores_length_mismatch():
    with pytest.raises(ValueError):
        classification_scores([0], [0, 1], ["a", "b"])


def small_dataset():
    space = LabelSpace(["positive", "negative"])
    return Dataset(label_space=space, test=[
        doc("t0", 5, evidence=[(1, 3)]),
        doc("t1", 4, evidence=[(0, 1)]),
        doc("t2", 4),  # no evidence: skipped, counted
    ])


def test_dataset_agreement_macro_means():
    data = small_dataset()
    rats = [
        Rationale("t0", "limitedink", 0.4, [0, 1, 1, 0, 0]),  # exact hit
        Rationale("t1", "limitedink", 0.4, [0, 0, 0, 1]),     # miss
        Rationale("t2", "limitedink", 0.4, [1, 0, 0, 0]),     # skipped
        Rationale("t0", "random", 0.4, [1, 1, 0, 0, 0]),
    ]
    cells = {(c["method"], c["length_level"]): c
             for c in dataset_agreement(rats, data)["cells"]}
    li = cells[("limitedink", 0.4)]
    assert li["n_documents"] == 2
    assert li["skipped_no_evidence"] == 1
    assert li["f1"] == pytest.approx(0.5)  # mean of 1.0 and 0.0
    assert li["precision"] == pytest.approx(0.5)
    rd = cells[("random", 0.4)]
    assert rd["n_documents"] == 1
    p, r, f1 = token_prf([1, 1, 0, 0, 0], [0, 1, 1, 0, 0])
    assert rd["f1"] == pytest.approx(f1)


def test_dataset_agreement_unknown_document():
    data = small_dataset()
    stray = Rationale("nope", "random", 0.2, [1, 0])
    with pytest.raises(ValueError, match="unknown document"):
        dataset_agreement([stray], data)


def test_format_aligned_pads_columns():
    rows = [{"setup": "full_model", "f1": 0.912345},
            {"setup": "ab", "f1": 1.0}]
    text = format_aligned(rows, ["setup", "f1"], precision=2)
    lines = text.splitlines()
    assert lines[0].startswith("setup")
    assert lines[1].startswith("full_model  0.91")
    assert lines[2].startswith("ab          1.00")
    assert len({line.index("0.91") if "0.91" in line else line.index("1.00")
                for line in lines[1:]}) == 1


def test_ablation_variants_cover_the_grid():
    base = TrainConfig(epochs=3, seed=5)
    variants = dict(ablation_variants(base))
    assert list(dict(ablation_variants(base))) == [
        "no_sufficiency", "no_continuity", "no_sparsity", "no_contextual",
        "full_model"]
    assert variants["no_sufficiency"].shuffled_labels is True
    assert variants["no_continuity"].weights.continuity == 0.0
    assert variants["no_sparsity"].weights.length_control == 0.0
    assert variants["no_contextual"].conv_window == 1
    assert variants["full_model"] == base
    # everything else stays put
    assert variants["no_continuity"].epochs == 3
    assert variants["no_sufficiency"].weights == base.weights
