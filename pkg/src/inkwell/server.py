"""HTTP study server: qualification, HIT delivery, response collection.

Workers qualify once and land in a fixed group; each GET of /api/hit serves
the group's next unfinished HIT with rationale-masked texts and nothing
that would reveal the condition (no method, no length level).  Every event
is appended to a JSONL log, and restarting the server replays that log, so
a crash loses at most the record being written.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response as HttpResponse
from pydantic import BaseModel

from . import rng as rngmod
from .corpus import Dataset, Document
from .rationale import Rationale, render_masked
from .study import (
    GROUP_SIZE, N_GROUPS, N_WORKERS, HitSpec, StudyPlan, analyze,
)

log = logging.getLogger(__name__)

CONFIDENCE_RANGE = (1, 5)


class QualifyRequest(BaseModel):
    worker_id: str


class QualifyReply(BaseModel):
    worker_id: str
    group: int
    registered: bool  # False when the worker had already qualified


class HitItem(BaseModel):
    review_id: str
    text: str
    answered: bool


class HitPayload(BaseModel):
    hit_id: str
    items: list[HitItem]
    labels: list[str]
    confidence_min: int = CONFIDENCE_RANGE[0]
    confidence_max: int = CONFIDENCE_RANGE[1]
    completed_hits: int
    total_hits: int


class SubmitRequest(BaseModel):
    worker_id: str
    review_id: str
    label: str
    confidence: int


class SubmitReply(BaseModel):
    accepted: bool
    remaining_in_hit: int


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": message})


def public_hit_id(plan_seed: int, hit_id: str) -> str:
    """Opaque client-facing HIT id.

    The internal id encodes the condition (``b03-random-2``), which the
    payload must never reveal; clients only need a stable unique token.
    """
    digest = hashlib.blake2b(f"{plan_seed}:{hit_id}".encode(), digest_size=6)
    return digest.hexdigest()


class StudyState:
    """All mutable server state plus the append-only log behind one lock."""

    def __init__(self, plan: StudyPlan, dataset: Dataset,
                 rationale_index: dict[tuple[str, str, int], Rationale],
                 log_path: str | Path):
        self.plan = plan
        self.dataset = dataset
        self.rationales = rationale_index
        self.log_path = Path(log_path)
        self.lock = threading.Lock()
        self.groups_of: dict[str, int] = {}       # worker -> group, arrival order
        self.responses: dict[tuple[str, str], dict] = {}
        self.docs: dict[str, Document] = {}
        for review_id in plan.review_ids():
            self.docs[review_id] = dataset.by_id(review_id)
        self._replay()

    # -- log -------------------------------------------------------------

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                rec = json.loads(raw)
                if rec["type"] == "qualify":
                    self.groups_of[rec["worker_id"]] = int(rec["group"])
                elif rec["type"] == "response":
                    self.responses[(rec["worker_id"], rec["review_id"])] = rec
        if self.groups_of or self.responses:
            log.info("replayed %d workers, %d responses from %s",
                     len(self.groups_of), len(self.responses), self.log_path)

    def _append(self, record: dict) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()

    # -- domain ----------------------------------------------------------

    def qualify(self, worker_id: str) -> tuple[Optional[int], bool]:
        """Returns (group, newly_registered); group None means study full."""
        if worker_id in self.groups_of:
            return self.groups_of[worker_id], False
        if len(self.groups_of) >= N_WORKERS:
            return None, False
        group = len(self.groups_of) % N_GROUPS
        self.groups_of[worker_id] = group
        self._append({"type": "qualify", "worker_id": worker_id,
                      "group": group, "ts": time.time()})
        return group, True

    def _answered(self, worker_id: str, hit: HitSpec) -> set[str]:
        return {r for r in hit.reviews if (worker_id, r) in self.responses}

    def current_hit(self, worker_id: str) -> Optional[HitSpec]:
        for hit in self.plan.hits_for_group(self.groups_of[worker_id]):
            if len(self._answered(worker_id, hit)) < len(hit.reviews):
                return hit
        return None

    def render_item(self, hit: HitSpec, review_id: str) -> str:
        doc = self.docs[review_id]
        level = hit.levels[review_id]
        rat = self.rationales[(review_id, hit.method, level)]
        # same glyph runs on every request: noise keyed by (plan seed, hit, review)
        render_rng = rngmod.generator(self.plan.seed, "render", hit.hit_id, review_id)
        return render_masked(doc.words, rat.mask, render_rng)

    def record_response(self, hit: HitSpec, req: SubmitRequest) -> int:
        record = {
            "type": "response",
            "worker_id": req.worker_id,
            "review_id": req.review_id,
            "method": hit.method,
            "length_level": hit.levels[req.review_id],
            "label": req.label,
            "confidence": req.confidence,
            "ts": time.time(),
        }
        self.responses[(req.worker_id, req.review_id)] = record
        self._append(record)
        return len(hit.reviews) - len(self._answered(req.worker_id, hit))

    def results(self) -> dict:
        from .study import Response as StudyResponse

        responses = [StudyResponse(
            worker_id=r["worker_id"], review_id=r["review_id"],
            method=r["method"], length_level=int(r["length_level"]),
            label=r["label"], confidence=int(r["confidence"]),
            timestamp=float(r["ts"])) for r in self.responses.values()]
        gold = {rid: self.docs[rid].label for rid in self.docs}
        summary = analyze(responses, gold, self.dataset.label_space.names)
        summary["n_workers"] = len(self.groups_of)
        return summary


def create_app(plan: StudyPlan, dataset: Dataset,
               rationale_index: dict[tuple[str, str, int], Rationale],
               log_path: str | Path) -> FastAPI:
    state = StudyState(plan, dataset, rationale_index, log_path)
    app = FastAPI(title="rationale study server")
    app.state.study = state

    @app.post("/api/qualify", response_model=QualifyReply)
    def qualify(req: QualifyRequest):
        worker_id = req.worker_id.strip()
        if not worker_id:
            return _error(400, "worker_id must be non-empty")
        with state.lock:
            group, registered = state.qualify(worker_id)
        if group is None:
            return _error(409, f"study is full ({N_WORKERS} workers)")
        return QualifyReply(worker_id=worker_id, group=group, registered=registered)

    @app.get("/api/hit")
    def get_hit(worker_id: str):
        with state.lock:
            if worker_id not in state.groups_of:
                return _error(403, "unknown worker; qualify first")
            hit = state.current_hit(worker_id)
            if hit is None:
                return HttpResponse(status_code=204)
            group_hits = state.plan.hits_for_group(state.groups_of[worker_id])
            done = sum(1 for h in group_hits
                       if len(state._answered(worker_id, h)) == len(h.reviews))
            items = [HitItem(review_id=rid,
                             text=state.render_item(hit, rid),
                             answered=(worker_id, rid) in state.responses)
                     for rid in hit.reviews]
        return HitPayload(hit_id=public_hit_id(plan.seed, hit.hit_id),
                          items=items,
                          labels=list(dataset.label_space.names),
                          completed_hits=done, total_hits=len(group_hits))

    @app.post("/api/response", response_model=SubmitReply)
    def submit(req: SubmitRequest):
        with state.lock:
            if req.worker_id not in state.groups_of:
                return _error(403, "unknown worker; qualify first")
            if req.label not in dataset.label_space:
                return _error(400, f"unknown label {req.label!r}")
            lo, hi = CONFIDENCE_RANGE
            if not lo <= req.confidence <= hi:
                return _error(400, f"confidence must be {lo}..{hi}")
            if (req.worker_id, req.review_id) in state.responses:
                return _error(409, "duplicate response for this review")
            hit = state.current_hit(req.worker_id)
            if hit is None or req.review_id not in hit.reviews:
                return _error(403, "review is not part of your current HIT")
            remaining = state.record_response(hit, req)
        return SubmitReply(accepted=True, remaining_in_hit=remaining)

    @app.get("/api/results")
    def results():
        with state.lock:
            return state.results()

    return app


def load_app(plan_path: str | Path, data_path: str | Path,
             rationales_path: str | Path, log_path: str | Path,
             label_names: list[str]) -> FastAPI:
    """Build the app from files on disk (CLI + tests entry point)."""
    from .corpus import LabelSpace, load_jsonl
    from .rationale import index_rationales, load_rationales
    from .study import load_plan

    plan = load_plan(plan_path)
    dataset = load_jsonl(data_path, LabelSpace(label_names))
    rationales = index_rationales(load_rationales(rationales_path))
    return create_app(plan, dataset, rationales, log_path)
