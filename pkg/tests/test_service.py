import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefrank import dataset, face, imaging, ranking, service


@pytest.fixture()
def pool_dir(tmp_path, tiny_pool):
    out = tmp_path / "subset"
    out.mkdir()
    entries = []
    for e in tiny_pool.entries[:8]:
        rel = f"pool/{e.entry_id:04d}.png"
        imaging.write_image(out / rel, face.render(e.actuators))
        entries.append(dataset.PoolEntry(e.entry_id, e.actuators, rel))
    dataset.save_pool(dataset.CandidatePool(entries), out / "subset.jsonl")
    return out


@pytest.fixture()
def client(pool_dir, tmp_path):
    app = service.create_app(pool_dir / "subset.jsonl", tmp_path / "sessions")
    with TestClient(app) as c:
        yield c


def _create(client, annotator="alice", emotion="happiness", seed=3):
    r = client.post("/api/sessions", json={
        "annotator_id": annotator, "emotion": emotion, "seed": seed})
    assert r.status_code == 200
    return r.json()["session_id"]


def test_health(client):
    assert client.get("/api/health").json() == {"status": "ok"}


def test_create_and_fresh_progress(client):
    sid = _create(client)
    progress = client.get(f"/api/sessions/{sid}/progress").json()
    assert progress["answered_count"] == 0
    assert progress["total_items"] == 8
    assert not progress["completed"]
    assert progress["estimated_remaining"] == ranking.worst_case_comparisons(8)


def test_next_is_idempotent_until_answered(client):
    sid = _create(client)
    first = client.get(f"/api/sessions/{sid}/next").json()
    second = client.get(f"/api/sessions/{sid}/next").json()
    assert first == second
    assert first["progress"]["answered"] == 0
    assert first["left"].startswith("/api/images/")


def test_answer_flow_and_counts(client):
    sid = _create(client)
    q = client.get(f"/api/sessions/{sid}/next").json()
    r = client.post(f"/api/sessions/{sid}/answer",
                    json={"query_id": q["query_id"], "winner": q["left_id"]})
    assert r.status_code == 200
    assert r.json()["progress"]["answered"] == 1
    q2 = client.get(f"/api/sessions/{sid}/next").json()
    assert q2["query_id"] == q["query_id"] + 1


def test_replayed_answer_is_idempotent(client):
    sid = _create(client)
    q = client.get(f"/api/sessions/{sid}/next").json()
    body = {"query_id": q["query_id"], "winner": q["left_id"]}
    first = client.post(f"/api/sessions/{sid}/answer", json=body)
    replay = client.post(f"/api/sessions/{sid}/answer", json=body)
    assert first.status_code == 200 and replay.status_code == 200
    assert replay.json()["progress"]["answered"] == 1


def test_stale_and_invalid_answers(client):
    sid = _create(client)
    q = client.get(f"/api/sessions/{sid}/next").json()
    stale = client.post(f"/api/sessions/{sid}/answer",
                        json={"query_id": q["query_id"] + 5, "winner": q["left_id"]})
    assert stale.status_code == 409
    bad = client.post(f"/api/sessions/{sid}/answer",
                      json={"query_id": q["query_id"], "winner": 424242})
    assert bad.status_code == 400


def test_unknown_session_404(client):
    assert client.get("/api/sessions/nope/next").status_code == 404
    assert client.get("/api/sessions/nope/progress").status_code == 404
    assert client.post("/api/sessions/nope/answer",
                       json={"query_id": 0, "winner": 0}).status_code == 404


def test_images_served_immutably(client):
    sid = _create(client)
    q = client.get(f"/api/sessions/{sid}/next").json()
    r1 = client.get(q["left"])
    r2 = client.get(q["left"])
    assert r1.status_code == 200
    assert r1.headers["content-type"] == "image/png"
    assert r1.content == r2.content
    assert r1.headers["etag"] == r2.headers["etag"]
    assert client.get("/api/images/999.png").status_code == 404


def test_ranking_available_only_after_completion(client, pool_dir):
    sid = _create(client, emotion="anger")
    assert client.get(f"/api/sessions/{sid}/ranking").status_code == 409
    pool = dataset.load_pool(pool_dir / "subset.jsonl")
    oracle = ranking.latent_oracle(pool, "anger")
    while True:
        payload = client.get(f"/api/sessions/{sid}/next").json()
        if payload.get("completed"):
            break
        winner = oracle(payload["left_id"], payload["right_id"])
        r = client.post(f"/api/sessions/{sid}/answer",
                        json={"query_id": payload["query_id"], "winner": winner})
        assert r.status_code == 200
    result = client.get(f"/api/sessions/{sid}/ranking").json()
    assert result["consistency"] == 1.0
    want = ranking.latent_order(pool, "anger")
    assert result["ranking"] == list(want.order)
    n = len(pool.ids())
    answered = client.get(f"/api/sessions/{sid}/progress").json()["answered_count"]
    assert answered <= ranking.worst_case_comparisons(n)


def test_restart_resumes_at_pending_query(pool_dir, tmp_path):
    data_dir = tmp_path / "sessions"
    app = service.create_app(pool_dir / "subset.jsonl", data_dir)
    with TestClient(app) as client:
        sid = _create(client, annotator="bob", emotion="fear")
        for _ in range(4):
            q = client.get(f"/api/sessions/{sid}/next").json()
            client.post(f"/api/sessions/{sid}/answer",
                        json={"query_id": q["query_id"], "winner": q["left_id"]})
        pending_before = client.get(f"/api/sessions/{sid}/next").json()

    fresh = service.create_app(pool_dir / "subset.jsonl", data_dir)
    with TestClient(fresh) as client:
        resumed = client.post("/api/sessions", json={
            "annotator_id": "bob", "emotion": "fear", "seed": 0})
        assert resumed.json()["resumed"] is True
        pending_after = client.get(f"/api/sessions/{sid}/next").json()
        assert pending_after == pending_before
        progress = client.get(f"/api/sessions/{sid}/progress").json()
        assert progress["answered_count"] == 4


def test_sessions_are_isolated(client):
    a = _create(client, annotator="u1", emotion="anger")
    b = _create(client, annotator="u2", emotion="anger")
    qa = client.get(f"/api/sessions/{a}/next").json()
    client.post(f"/api/sessions/{a}/answer",
                json={"query_id": qa["query_id"], "winner": qa["left_id"]})
    assert client.get(f"/api/sessions/{b}/progress").json()["answered_count"] == 0


def test_single_item_pool_session_is_born_complete(tmp_path, tiny_pool):
    out = tmp_path / "one"
    out.mkdir()
    dataset.save_pool(dataset.CandidatePool(tiny_pool.entries[:1]), out / "subset.jsonl")
    app = service.create_app(out / "subset.jsonl", tmp_path / "s2")
    with TestClient(app) as client:
        r = client.post("/api/sessions", json={
            "annotator_id": "solo", "emotion": "anger", "seed": 0})
        assert r.json()["completed"] is True
        sid = r.json()["session_id"]
        nxt = client.get(f"/api/sessions/{sid}/next").json()
        assert nxt["completed"] is True
        result = client.get(f"/api/sessions/{sid}/ranking").json()
        assert result["ranking"] == [tiny_pool.entries[0].entry_id]
