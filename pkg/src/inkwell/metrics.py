"""Agreement and end-task metrics, plus the ablation table."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Dataset
from .rationale import Rationale, mask_from_spans


def token_prf(pred_mask: Sequence[int], gold_mask: Sequence[int]
              ) -> tuple[float, float, float]:
    """Token-level precision/recall/F1 between two 0/1 masks.

    Empty prediction pins precision to 0, empty gold pins recall to 0, and
    F1 is 0 whenever precision + recall is 0.
    """
    pred = np.asarray(pred_mask, dtype=bool)
    gold = np.asarray(gold_mask, dtype=bool)
    if pred.shape != gold.shape:
        raise ValueError("mask length mismatch")
    overlap = float(np.logical_and(pred, gold).sum())
    p = overlap / float(pred.sum()) if pred.sum() else 0.0
    r = overlap / float(gold.sum()) if gold.sum() else 0.0
    f1 = 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0
    return p, r, f1


def gold_evidence_mask(doc) -> Optional[list[int]]:
    """Union of a document's evidence spans; None when it has no evidence."""
    if not doc.evidence:
        return None
    return mask_from_spans(doc.evidence, doc.n_words)


def dataset_agreement(rationales: Iterable[Rationale], dataset: Dataset) -> dict:
    """Macro (per-document mean) agreement against gold evidence.

    Scores are grouped by (method, length level); documents without any
    evidence span are skipped and reported per group.
    """
    docs = {doc.doc_id: doc for doc in dataset.documents()}
    groups: dict[tuple[str, int], dict] = defaultdict(
        lambda: {"p": [], "r": [], "f1": [], "skipped": 0})
    for rat in rationales:
        if rat.doc_id not in docs:
            raise ValueError(f"rationale references unknown document {rat.doc_id!r}")
        doc = docs[rat.doc_id]
        gold = gold_evidence_mask(doc)
        cell = groups[(rat.method, round(rat.length_level * 100))]
        if gold is None:
            cell["skipped"] += 1
            continue
        p, r, f1 = token_prf(rat.mask, gold)
        cell["p"].append(p)
        cell["r"].append(r)
        cell["f1"].append(f1)
    cells = []
    for (method, pct), cell in sorted(groups.items()):
        n = len(cell["f1"])
        cells.append({
            "method": method,
            "length_level": pct / 100.0,
            "n_documents": n,
            "skipped_no_evidence": cell["skipped"],
            "precision": float(np.mean(cell["p"])) if n else 0.0,
            "recall": float(np.mean(cell["r"])) if n else 0.0,
            "f1": float(np.mean(cell["f1"])) if n else 0.0,
        })
    return {"cells": cells}


def classification_scores(gold: Sequence[int], pred: Sequence[int],
                          label_names: Sequence[str]) -> dict:
    """Per-label P/R/F1 with support-weighted and macro rollups."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError("gold / prediction length mismatch")
    per_label = []
    for idx, name in enumerate(label_names):
        tp = float(np.sum((pred == idx) & (gold == idx)))
        fp = float(np.sum((pred == idx) & (gold != idx)))
        fn = float(np.sum((pred != idx) & (gold == idx)))
        p = tp / (tp + fp) if (tp + fp) else 0.0
        r = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = 2.0 * p * r / (p + r) if (p + r) else 0.0
        per_label.append({"label": name, "precision": p, "recall": r,
                          "f1": f1, "support": int(np.sum(gold == idx))})
    total = max(1, len(gold))
    weighted_f1 = sum(row["f1"] * row["support"] for row in per_label) / total
    return {
        "accuracy": float(np.mean(gold == pred)) if len(gold) else 0.0,
        "weighted_f1": float(weighted_f1),
        "macro_precision": float(np.mean([r["precision"] for r in per_label])),
        "macro_recall": float(np.mean([r["recall"] for r in per_label])),
        "macro_f1": float(np.mean([r["f1"] for r in per_label])),
        "per_label": per_label,
    }


def weighted_f1(gold: Sequence[int], pred: Sequence[int], n_labels: int) -> float:
    names = [str(i) for i in range(n_labels)]
    return classification_scores(gold, pred, names)["weighted_f1"]


def format_aligned(rows: list[dict], columns: list[str], precision: int = 4) -> str:
    """Plain-text table with space-aligned columns."""
    def fmt(value) -> str:
        if isinstance(value, float):
            return f"{value:.{precision}f}"
        return str(value)

    table = [[fmt(row.get(col, "")) for col in columns] for row in rows]
    widths = [max(len(col), *(len(line[i]) for line in table)) if table else len(col)
              for i, col in enumerate(columns)]
    out = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(columns))]
    for line in table:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(out)


ABLATION_SETUPS = ("no_sufficiency", "no_continuity", "no_sparsity",
                   "no_contextual", "full_model")


def ablation_variants(config) -> list[tuple[str, object]]:
    """The standard ablation grid derived from a base training config."""
    from dataclasses import replace

    return [
        ("no_sufficiency", replace(config, shuffled_labels=True)),
        ("no_continuity",
         replace(config, weights=replace(config.weights, continuity=0.0))),
        ("no_sparsity",
         replace(config, weights=replace(config.weights, length_control=0.0))),
        ("no_contextual", replace(config, conv_window=1)),
        ("full_model", config),
    ]


def ablation_report(dataset: Dataset, config, split: str = "test") -> dict:
    """Train each ablation variant and tabulate end-task scores."""
    from .trainer import evaluate, train

    rows = []
    for name, variant in ablation_variants(config):
        ckpt = train(dataset, variant)
        scores = evaluate(ckpt, dataset, split)
        rows.append({
            "setup": name,
            "precision": scores["macro_precision"],
            "recall": scores["macro_recall"],
            "f1": scores["macro_f1"],
            "weighted_f1": scores["weighted_f1"],
            "accuracy": scores["accuracy"],
        })
    text = format_aligned(
        rows, ["setup", "precision", "recall", "f1", "weighted_f1", "accuracy"],
        precision=2)
    return {"rows": rows, "text": text}
