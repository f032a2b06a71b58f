"""Counterbalanced forward-prediction study: plan, simulation, analysis.

The design mirrors a two-condition crowdsourcing layout: 100 reviews split
into 20 batches of 5; per batch, each condition gets 5 HITs whose
review-to-length-level assignment is a cyclic Latin square, so every
(review, condition, level) triple appears in exactly one HIT.  Ten worker
groups of 20 map one-to-one onto the 10 HITs of each batch, rotating across
batches so a group alternates conditions and never meets a review twice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .corpus import Dataset, Document
from .metrics import classification_scores
from .rationale import Rationale

N_REVIEWS = 100
N_WORKERS = 200
N_BATCHES = 20
BATCH_SIZE = 5
N_GROUPS = 10
GROUP_SIZE = 20
LEVELS = (10, 20, 30, 40, 50)
STUDY_METHODS = ("limitedink", "random")
ASSIGNMENTS_PER_HIT = 7
DEFAULT_PARTICIPATION = 0.835  # completed / posted assignment slots


@dataclass(frozen=True)
class HitSpec:
    hit_id: str
    batch: int
    method: str
    reviews: tuple[str, ...]           # batch order
    levels: dict[str, int]             # review id -> level percent
    group: int
    workers: tuple[str, ...]           # sampled assignment slots

    def __post_init__(self):
        if sorted(self.levels.values()) != sorted(LEVELS):
            raise ValueError(f"{self.hit_id}: levels must be a permutation of {LEVELS}")


@dataclass(frozen=True)
class Response:
    worker_id: str
    review_id: str
    method: str
    length_level: int                  # percent
    label: str
    confidence: int
    timestamp: float

    def __post_init__(self):
        if not 1 <= self.confidence <= 5:
            raise ValueError(f"confidence must be 1..5, got {self.confidence}")


@dataclass
class StudyPlan:
    seed: int
    batches: list[list[str]]
    groups: list[list[str]]
    hits: list[HitSpec]
    assignments_per_hit: int = ASSIGNMENTS_PER_HIT

    def slot_count(self) -> int:
        return sum(len(h.workers) for h in self.hits)

    def hits_for_group(self, group: int) -> list[HitSpec]:
        return sorted((h for h in self.hits if h.group == group),
                      key=lambda h: h.batch)

    def review_ids(self) -> list[str]:
        return [r for batch in self.batches for r in batch]


def build_plan(review_ids: Sequence[str], worker_ids: Sequence[str],
               seed: int, assignments_per_hit: int = ASSIGNMENTS_PER_HIT) -> StudyPlan:
    """Construct the full counterbalanced plan.

    Batch composition, group membership, and assignment sampling come from
    ``seed``; the Latin square and the group-to-HIT rotation are fixed
    combinatorial rules, which is what the coverage invariants rely on.
    """
    review_ids = list(review_ids)
    worker_ids = list(worker_ids)
    if len(review_ids) != N_REVIEWS or len(set(review_ids)) != N_REVIEWS:
        raise ValueError(f"need exactly {N_REVIEWS} distinct review ids")
    if len(worker_ids) != N_WORKERS or len(set(worker_ids)) != N_WORKERS:
        raise ValueError(f"need exactly {N_WORKERS} distinct worker ids")
    if not 1 <= assignments_per_hit <= GROUP_SIZE:
        raise ValueError("assignments per HIT must be within the group size")

    rng = rngmod.generator(seed, "plan")
    reviews = [review_ids[i] for i in rng.permutation(N_REVIEWS)]
    batches = [reviews[b * BATCH_SIZE:(b + 1) * BATCH_SIZE] for b in range(N_BATCHES)]
    workers = [worker_ids[i] for i in rng.permutation(N_WORKERS)]
    groups = [workers[g * GROUP_SIZE:(g + 1) * GROUP_SIZE] for g in range(N_GROUPS)]

    hits: list[HitSpec] = []
    for b in range(N_BATCHES):
        for m_idx, method in enumerate(STUDY_METHODS):
            for j in range(BATCH_SIZE):
                # cyclic Latin square: row j assigns review i level 10*((i+j)%5+1)
                levels = {batches[b][i]: 10 * (((i + j) % 5) + 1)
                          for i in range(BATCH_SIZE)}
                # slot 2j+m rotates through groups as the batch advances, so
                # each group alternates methods batch to batch
                group = (2 * j + m_idx - b) % N_GROUPS
                member_idx = rng.choice(GROUP_SIZE, size=assignments_per_hit,
                                        replace=False)
                hits.append(HitSpec(
                    hit_id=f"b{b:02d}-{method}-{j}",
                    batch=b, method=method,
                    reviews=tuple(batches[b]),
                    levels=levels,
                    group=group,
                    workers=tuple(groups[group][i] for i in sorted(member_idx))))
    return StudyPlan(seed=seed, batches=batches, groups=groups, hits=hits,
                     assignments_per_hit=assignments_per_hit)


def verify_plan(plan: StudyPlan) -> list[str]:
    """All structural invariants; returns human-readable violations."""
    problems: list[str] = []
    all_reviews = plan.review_ids()
    if len(all_reviews) != N_REVIEWS or len(set(all_reviews)) != N_REVIEWS:
        problems.append("batches do not partition the reviews")
    if any(len(b) != BATCH_SIZE for b in plan.batches):
        problems.append("every batch must hold exactly 5 reviews")
    flat_workers = [w for g in plan.groups for w in g]
    if (len(plan.groups) != N_GROUPS
            or any(len(g) != GROUP_SIZE for g in plan.groups)
            or len(set(flat_workers)) != N_WORKERS):
        problems.append("groups do not partition the workers")

    for b in range(N_BATCHES):
        for method in STUDY_METHODS:
            square = [h for h in plan.hits if h.batch == b and h.method == method]
            if len(square) != BATCH_SIZE:
                problems.append(f"batch {b} {method}: expected 5 HITs")
                continue
            for review in plan.batches[b]:
                missing = [h.hit_id for h in square if review not in h.levels]
                if missing:
                    problems.append(
                        f"batch {b} {method}: review {review} absent from {missing}")
                    continue
                levels = sorted(h.levels[review] for h in square)
                if levels != sorted(LEVELS):
                    problems.append(
                        f"batch {b} {method}: review {review} levels {levels}")
        batch_hits = [h for h in plan.hits if h.batch == b]
        groups_here = [h.group for h in batch_hits]
        if sorted(groups_here) != list(range(N_GROUPS)):
            problems.append(f"batch {b}: group pairing is not a bijection")

    seen: dict[str, set[str]] = {}
    for hit in plan.hits:
        if len(set(hit.workers)) != len(hit.workers):
            problems.append(f"{hit.hit_id}: duplicate assignment slots")
        group_members = set(plan.groups[hit.group])
        if not set(hit.workers) <= group_members:
            problems.append(f"{hit.hit_id}: slot worker outside paired group")
        for worker in hit.workers:
            views = seen.setdefault(worker, set())
            dup = views & set(hit.reviews)
            if dup:
                problems.append(f"worker {worker} sees reviews twice: {sorted(dup)}")
            views |= set(hit.reviews)
    return problems


# -------------------------------------------------------------------- io

def save_plan(plan: StudyPlan, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "meta", "seed": plan.seed,
                             "assignments_per_hit": plan.assignments_per_hit}) + "\n")
        for b, reviews in enumerate(plan.batches):
            fh.write(json.dumps({"type": "batch", "index": b, "reviews": reviews}) + "\n")
        for g, workers in enumerate(plan.groups):
            fh.write(json.dumps({"type": "group", "index": g, "workers": workers}) + "\n")
        for h in plan.hits:
            fh.write(json.dumps({
                "type": "hit", "hit_id": h.hit_id, "batch": h.batch,
                "method": h.method, "reviews": list(h.reviews),
                "levels": h.levels, "group": h.group,
                "workers": list(h.workers)}) + "\n")


def load_plan(path: str | Path) -> StudyPlan:
    meta = None
    batches: dict[int, list[str]] = {}
    groups: dict[int, list[str]] = {}
    hits: list[HitSpec] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            rec = json.loads(raw)
            kind = rec.get("type")
            if kind == "meta":
                meta = rec
            elif kind == "batch":
                batches[rec["index"]] = list(rec["reviews"])
            elif kind == "group":
                groups[rec["index"]] = list(rec["workers"])
            elif kind == "hit":
                hits.append(HitSpec(
                    hit_id=rec["hit_id"], batch=rec["batch"], method=rec["method"],
                    reviews=tuple(rec["reviews"]),
                    levels={k: int(v) for k, v in rec["levels"].items()},
                    group=rec["group"], workers=tuple(rec["workers"])))
            else:
                raise ValueError(f"unknown plan record type {kind!r}")
    if meta is None:
        raise ValueError("plan file has no meta record")
    plan = StudyPlan(
        seed=int(meta["seed"]),
        batches=[batches[i] for i in sorted(batches)],
        groups=[groups[i] for i in sorted(groups)],
        hits=sorted(hits, key=lambda h: h.hit_id),
        assignments_per_hit=int(meta["assignments_per_hit"]))
    problems = verify_plan(plan)
    if problems:
        raise ValueError("invalid plan: " + "; ".join(problems[:5]))
    return plan


def save_responses(responses: Iterable[Response], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in responses:
            fh.write(json.dumps({
                "worker_id": r.worker_id, "review_id": r.review_id,
                "method": r.method, "length_level": r.length_level,
                "label": r.label, "confidence": r.confidence,
                "timestamp": r.timestamp}) + "\n")


def load_responses(path: str | Path) -> list[Response]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                rec = json.loads(raw)
                out.append(Response(
                    worker_id=rec["worker_id"], review_id=rec["review_id"],
                    method=rec["method"], length_level=int(rec["length_level"]),
                    label=rec["label"], confidence=int(rec["confidence"]),
                    timestamp=float(rec["timestamp"])))
    return out


# -------------------------------------------------------------- simulation

@dataclass(frozen=True)
class SimAnnotator:
    """Keyword-matching stand-in for a crowd worker.

    Confidently answers the gold label when any gold-side keyword survives
    in the rationale; otherwise guesses at ``guess_accuracy`` with low
    confidence.
    """

    keywords: dict[str, set[str]]
    guess_accuracy: float = 0.5

    def annotate(self, words: Sequence[str], mask: Sequence[int],
                 gold_label: str, other_labels: Sequence[str],
                 rng: np.random.Generator) -> tuple[str, int]:
        visible = {w for w, m in zip(words, mask) if m}
        if visible & self.keywords.get(gold_label, set()):
            return gold_label, 5
        if rng.random() < self.guess_accuracy:
            return gold_label, int(rng.integers(1, 3))
        wrong = sorted(other_labels)
        return str(rng.choice(wrong)), int(rng.integers(1, 3))


def select_study_docs(checkpoints: dict[int, "object"], dataset: Dataset,
                      n: int = N_REVIEWS) -> list[Document]:
    """Pick test documents the swept models predict correctly.

    Documents correct under every level come first; remaining slots fill by
    how many levels got them right (ties by id).
    """
    from .trainer import predict_label

    docs = dataset.split("test")
    if len(docs) < n:
        raise ValueError(f"test split has {len(docs)} docs; need {n}")
    scored = []
    for doc in docs:
        gold = dataset.label_space.index(doc.label)
        correct = 0
        for ckpt in checkpoints.values():
            idn, cls = ckpt.nets()
            pred = predict_label(idn, cls, ckpt.vocabulary(), doc,
                                 ckpt.config.method, ckpt.config.length_level)
            correct += int(pred == gold)
        scored.append((-correct, doc.doc_id, doc))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [doc for _, _, doc in scored[:n]]


def simulate(plan: StudyPlan, rationale_index: dict[tuple[str, str, int], Rationale],
             docs_by_id: dict[str, Document], annotator: SimAnnotator,
             label_names: Sequence[str], seed: int,
             participation: float = DEFAULT_PARTICIPATION) -> list[Response]:
    """Run every assignment slot through the annotator.

    Each participating slot (a worker completing one HIT) produces one
    response per review in the HIT.  Deterministic in ``seed``.
    """
    responses: list[Response] = []
    tick = 0.0
    for hit in sorted(plan.hits, key=lambda h: h.hit_id):
        for worker in hit.workers:
            take = rngmod.generator(seed, "take", hit.hit_id, worker).random()
            if take > participation:
                continue
            for review_id in hit.reviews:
                doc = docs_by_id[review_id]
                level = hit.levels[review_id]
                key = (review_id, hit.method, level)
                if key not in rationale_index:
                    raise ValueError(f"no rationale for {key}")
                rat = rationale_index[key]
                rng = rngmod.generator(seed, "resp", hit.hit_id, worker, review_id)
                others = [name for name in label_names if name != doc.label]
                label, confidence = annotator.annotate(
                    doc.words, rat.mask, doc.label, others, rng)
                tick += 1.0
                responses.append(Response(
                    worker_id=worker, review_id=review_id, method=hit.method,
                    length_level=level, label=label, confidence=confidence,
                    timestamp=tick))
    return responses


# ---------------------------------------------------------------- analysis

def analyze(responses: Sequence[Response], gold_by_review: dict[str, str],
            label_names: Sequence[str]) -> dict:
    """Accuracy, confidence, and per-label scores per (method, level) cell."""
    names = list(label_names)
    index = {name: i for i, name in enumerate(names)}
    cells: dict[tuple[str, int], list[Response]] = {}
    for resp in responses:
        if resp.review_id not in gold_by_review:
            raise ValueError(f"response references unknown review {resp.review_id!r}")
        if resp.label not in index:
            raise ValueError(f"response carries unknown label {resp.label!r}")
        cells.setdefault((resp.method, resp.length_level), []).append(resp)

    out_cells = []
    for (method, level), group in sorted(cells.items()):
        gold = [index[gold_by_review[r.review_id]] for r in group]
        pred = [index[r.label] for r in group]
        scores = classification_scores(gold, pred, names)
        out_cells.append({
            "method": method,
            "length_level": level,
            "n_responses": len(group),
            "accuracy": scores["accuracy"],
            "mean_confidence": float(np.mean([r.confidence for r in group])),
            "per_label": scores["per_label"],
        })

    result: dict = {"cells": out_cells, "n_responses": len(responses)}
    codes = {m: [index[r.label] + 1 for r in responses if r.method == m]
             for m in STUDY_METHODS}
    a, b = codes.get("limitedink", []), codes.get("random", [])
    if len(a) >= 2 and len(b) >= 2:
        try:
            t, df, p = two_sample_t(a, b)
            result["label_code_t_test"] = {
                "statistic": t, "df": df, "p_value": p,
                "mean_limitedink": float(np.mean(a)), "mean_random": float(np.mean(b)),
                "sd_limitedink": float(np.std(a, ddof=1)),
                "sd_random": float(np.std(b, ddof=1)),
            }
        except ValueError:
            result["label_code_t_test"] = None
    return result


def analysis_text(analysis: dict) -> str:
    from .metrics import format_aligned

    rows = [{"method": c["method"], "level": c["length_level"],
             "n": c["n_responses"], "accuracy": c["accuracy"],
             "confidence": c["mean_confidence"]} for c in analysis["cells"]]
    return format_aligned(rows, ["method", "level", "n", "accuracy", "confidence"])


def analysis_csv(analysis: dict) -> str:
    lines = ["length_level,method,accuracy,mean_confidence"]
    for cell in sorted(analysis["cells"],
                       key=lambda c: (c["length_level"], c["method"])):
        lines.append(f"{cell['length_level']},{cell['method']},"
                     f"{cell['accuracy']:.6f},{cell['mean_confidence']:.6f}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ t-test

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter, eps, fpmin = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (a * math.log(x) + b * math.log1p(-x)
                + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def two_sample_t(a: Sequence[float], b: Sequence[float]
                 ) -> tuple[float, int, float]:
    """Pooled-variance two-sample t-test; returns (t, df, two-sided p).

    Identical samples give t = 0, p = 1.  Zero pooled variance with unequal
    means has no finite statistic and raises instead.
    """
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if xa.size < 2 or xb.size < 2:
        raise ValueError("each sample needs at least two observations")
    na, nb = xa.size, xb.size
    df = na + nb - 2
    va = float(xa.var(ddof=1))
    vb = float(xb.var(ddof=1))
    pooled = ((na - 1) * va + (nb - 1) * vb) / df
    diff = float(xa.mean() - xb.mean())
    if pooled == 0.0:
        if diff == 0.0:
            return 0.0, df, 1.0
        raise ValueError("degenerate variance: identical values, unequal means")
    t = diff / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return t, df, student_t_two_sided_p(t, df)
