"""HTTP study server: qualification, HIT delivery, submission, replay."""

import json

import pytest
from fastapi.testclient import TestClient

from inkwell.corpus import Dataset, Document, LabelSpace
from inkwell.rationale import ELLIPSIS, Rationale
from inkwell.server import StudyState, create_app, public_hit_id
from inkwell.study import LEVELS, N_WORKERS, build_plan

REVIEWS = [f"r{i:03d}" for i in range(100)]
WORKERS = [f"w{i:03d}" for i in range(200)]
LABELS = ["positive", "negative"]


def study_dataset():
    docs = []
    for i, rid in enumerate(REVIEWS):
        label = LABELS[i % 2]
        marker = "goodword" if label == "positive" else "badword"
        words = [marker] + [f"filler{j}" for j in range(9)]
        docs.append(Document(doc_id=rid, words=words, subtokens=list(words),
                             alignment=list(range(10)), label=label,
                             evidence=[(0, 1)]))
    return Dataset(label_space=LabelSpace(LABELS), test=docs)


def rationale_index():
    index = {}
    for rid in REVIEWS:
        for pct in LEVELS:
            k = -(-pct * 10 // 100)
            index[(rid, "limitedink", pct)] = Rationale(
                rid, "limitedink", pct / 100, [1] * k + [0] * (10 - k))
            index[(rid, "random", pct)] = Rationale(
                rid, "random", pct / 100, [0] * (10 - k) + [1] * k)
    return index


@pytest.fixture(scope="module")
def plan():
    return build_plan(REVIEWS, WORKERS, seed=13)


@pytest.fixture
def world(plan, tmp_path):
    log_path = tmp_path / "events.jsonl"
    app = create_app(plan, study_dataset(), rationale_index(), log_path)
    return TestClient(app), app.state.study, log_path


def qualify(client, worker):
    return client.post("/api/qualify", json={"worker_id": worker})


def submit(client, worker, review, label="positive", confidence=3):
    return client.post("/api/response", json={
        "worker_id": worker, "review_id": review,
        "label": label, "confidence": confidence})


# ---------------------------------------------------------------- qualify

def test_qualify_round_robin(world):
    client, _, _ = world
    for i in range(12):
        reply = qualify(client, f"p{i}").json()
        assert reply["group"] == i % 10
        assert reply["registered"] is True


def test_qualify_is_idempotent(world):
    client, _, _ = world
    first = qualify(client, "alice").json()
    again = qualify(client, "alice").json()
    assert again["group"] == first["group"]
    assert again["registered"] is False


def test_qualify_rejects_blank(world):
    client, _, _ = world
    assert qualify(client, "   ").status_code == 400


def test_qualify_caps_enrollment(world):
    client, _, _ = world
    for i in range(N_WORKERS):
        assert qualify(client, f"p{i}").status_code == 200
    full = qualify(client, "late-arrival")
    assert full.status_code == 409
    assert "full" in full.json()["detail"]
    # an existing worker still gets their group back
    assert qualify(client, "p5").status_code == 200


# -------------------------------------------------------------------- hit

def test_hit_requires_qualification(world):
    client, _, _ = world
    assert client.get("/api/hit", params={"worker_id": "ghost"}).status_code == 403


def test_hit_payload_shape(world):
    client, state, _ = world
    qualify(client, "alice")
    payload = client.get("/api/hit", params={"worker_id": "alice"}).json()
    expected_hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    assert payload["hit_id"] == public_hit_id(state.plan.seed, expected_hit.hit_id)
    assert [item["review_id"] for item in payload["items"]] == \
           list(expected_hit.reviews)
    assert all(item["answered"] is False for item in payload["items"])
    assert payload["labels"] == LABELS
    assert (payload["confidence_min"], payload["confidence_max"]) == (1, 5)
    assert payload["completed_hits"] == 0
    assert payload["total_hits"] == 20


def test_hit_payload_hides_the_condition(world):
    client, _, _ = world
    qualify(client, "alice")
    raw = client.get("/api/hit", params={"worker_id": "alice"}).text
    payload = json.loads(raw)

    def keys_of(node):
        if isinstance(node, dict):
            for key, value in node.items():
                yield key
                yield from keys_of(value)
        elif isinstance(node, list):
            for value in node:
                yield from keys_of(value)

    keys = set(keys_of(payload))
    assert "method" not in keys
    assert "length_level" not in keys
    assert "level" not in keys
    assert "limitedink" not in raw and "random" not in raw


def test_hit_rendering_is_stable_and_masked(world):
    client, _, _ = world
    qualify(client, "alice")
    first = client.get("/api/hit", params={"worker_id": "alice"}).json()
    second = client.get("/api/hit", params={"worker_id": "alice"}).json()
    assert [i["text"] for i in first["items"]] == \
           [i["text"] for i in second["items"]]
    for item in first["items"]:
        assert ELLIPSIS in item["text"]  # no level shows everything


# ----------------------------------------------------------------- submit

def test_submit_validation_chain(world):
    client, state, _ = world
    qualify(client, "alice")
    hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    review = hit.reviews[0]

    assert submit(client, "ghost", review).status_code == 403
    assert submit(client, "alice", review, label="shrug").status_code == 400
    assert submit(client, "alice", review, confidence=0).status_code == 400
    assert submit(client, "alice", review, confidence=6).status_code == 400

    foreign = next(r for r in REVIEWS if r not in hit.reviews)
    wrong = submit(client, "alice", foreign)
    assert wrong.status_code == 403
    assert "current HIT" in wrong.json()["detail"]

    ok = submit(client, "alice", review)
    assert ok.status_code == 200
    assert ok.json() == {"accepted": True, "remaining_in_hit": 4}
    assert submit(client, "alice", review).status_code == 409


def test_completing_a_hit_advances(world):
    client, state, _ = world
    qualify(client, "alice")
    hits = state.plan.hits_for_group(state.groups_of["alice"])
    for n, review in enumerate(hits[0].reviews):
        reply = submit(client, "alice", review).json()
        assert reply["remaining_in_hit"] == 4 - n
    payload = client.get("/api/hit", params={"worker_id": "alice"}).json()
    assert payload["hit_id"] == public_hit_id(state.plan.seed, hits[1].hit_id)
    assert payload["completed_hits"] == 1
    assert all(item["answered"] is False for item in payload["items"])


def test_partial_hit_marks_answered(world):
    client, state, _ = world
    qualify(client, "alice")
    hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    submit(client, "alice", hit.reviews[2])
    payload = client.get("/api/hit", params={"worker_id": "alice"}).json()
    assert payload["hit_id"] == public_hit_id(state.plan.seed, hit.hit_id)
    answered = {i["review_id"] for i in payload["items"] if i["answered"]}
    assert answered == {hit.reviews[2]}


def test_worker_finishing_everything_gets_204(world):
    client, state, _ = world
    qualify(client, "alice")
    for hit in state.plan.hits_for_group(state.groups_of["alice"]):
        for review in hit.reviews:
            assert submit(client, "alice", review).status_code == 200
    assert client.get("/api/hit", params={"worker_id": "alice"}).status_code == 204


# ------------------------------------------------------------ log + replay

def test_log_is_append_only_jsonl(world):
    client, _, log_path = world
    qualify(client, "alice")
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert records[0]["type"] == "qualify"
    n_before = len(records)
    state = world[1]
    hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    submit(client, "alice", hit.reviews[0], label="negative", confidence=2)
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert len(records) == n_before + 1
    last = records[-1]
    assert last["type"] == "response"
    assert last["label"] == "negative"
    assert last["method"] == hit.method  # the log keeps what the client never sees
    assert last["length_level"] == hit.levels[hit.reviews[0]]


def test_replay_reconstructs_state(plan, world):
    client, state, log_path = world
    qualify(client, "alice")
    qualify(client, "bob")
    hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    submit(client, "alice", hit.reviews[0])
    submit(client, "alice", hit.reviews[1])

    reborn = StudyState(plan, study_dataset(), rationale_index(), log_path)
    assert reborn.groups_of == state.groups_of
    assert reborn.responses.keys() == state.responses.keys()

    client2 = TestClient(create_app(plan, study_dataset(), rationale_index(),
                                    log_path))
    payload = client2.get("/api/hit", params={"worker_id": "alice"}).json()
    answered = {i["review_id"] for i in payload["items"] if i["answered"]}
    assert answered == {hit.reviews[0], hit.reviews[1]}
    again = qualify(client2, "alice").json()
    assert again["registered"] is False


# ----------------------------------------------------------------- results

def test_results_summary(world):
    client, state, _ = world
    qualify(client, "alice")
    hit = state.plan.hits_for_group(state.groups_of["alice"])[0]
    for review in hit.reviews:
        submit(client, "alice", review, label="positive", confidence=4)
    out = client.get("/api/results").json()
    assert out["n_workers"] == 1
    assert out["n_responses"] == 5
    assert sum(c["n_responses"] for c in out["cells"]) == 5
    for cell in out["cells"]:
        assert cell["method"] in ("limitedink", "random")
        assert cell["length_level"] in LEVELS
