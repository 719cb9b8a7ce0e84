"""HTTP backend for the pairwise annotation UI.

Wraps the ranking scheduler: serves the pending pair, records choices to a
durable append-only session log (fsync before ack), and publishes the
final ranking. One session per (annotator, emotion); answers to a session
are serialized by a per-session lock, and a restarted server resumes every
session by replaying its log.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from . import dataset, ranking
from .face import Emotion

_ID_SAFE = re.compile(r"[^a-z0-9_-]+")


def _slug(text: str) -> str:
    slug = _ID_SAFE.sub("-", str(text).lower()).strip("-")
    if not slug:
        raise ValueError(f"cannot derive an identifier from {text!r}")
    return slug


class SessionState:
    __slots__ = ("session", "path", "lock", "fh")

    def __init__(self, session: ranking.SortSession, path: Path, fh):
        self.session = session
        self.path = path
        self.lock = threading.Lock()
        self.fh = fh


class SessionStore:
    """Owns the sessions of one data directory and their durable logs."""

    def __init__(self, pool: dataset.CandidatePool, data_dir):
        self.pool = pool
        self.pool_ids = set(pool.ids())
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._registry_lock = threading.Lock()
        self.sessions: dict[str, SessionState] = {}
        for path in sorted(self.data_dir.glob("session-*.jsonl")):
            session = ranking.load_session(path)
            sid = f"{session.annotator_id}-{session.emotion}"
            self.sessions[sid] = SessionState(session, path, None)

    def _open_append(self, state: SessionState):
        if state.fh is None:
            state.fh = state.path.open("a", encoding="utf-8")
        return state.fh

    def create_or_resume(self, annotator_id: str, emotion: str, seed: int) -> tuple[str, SessionState, bool]:
        annotator = _slug(annotator_id)
        emotion = Emotion.parse(emotion).value
        sid = f"{annotator}-{emotion}"
        with self._registry_lock:
            state = self.sessions.get(sid)
            if state is not None:
                return sid, state, True
            session = ranking.SortSession(self.pool.ids(), emotion, annotator, seed)
            path = self.data_dir / ranking.session_filename(annotator, emotion)
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps(ranking.session_header(session), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            state = SessionState(session, path, None)
            if session.completed:  # single-item sessions finish immediately
                self._append_durable(state, ranking.ranking_record(session))
            self.sessions[sid] = state
            return sid, state, False

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return state

    def _append_durable(self, state: SessionState, record: dict):
        fh = self._open_append(state)
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())

    def record_answer(self, state: SessionState, query_id: int, winner: int):
        """Apply one answer: validate, advance, durably append, then return."""
        session = state.session
        pending = session.next_query()
        if pending is None:
            raise HTTPException(status_code=409, detail="session already complete")
        if query_id != pending.query_id:
            # replay of the directly preceding answer is acknowledged idempotently
            if (query_id == pending.query_id - 1 and session.log
                    and session.log[-1][2] == winner):
                return False
            raise HTTPException(
                status_code=409,
                detail=f"stale answer: pending query is {pending.query_id}")
        if winner not in (pending.left_id, pending.right_id):
            raise HTTPException(
                status_code=400,
                detail=f"winner {winner} not in pair ({pending.left_id}, {pending.right_id})")
        # durable append happens before the in-memory advance; a torn final
        # line (crash mid-write) is dropped at replay as never-acked
        record = {
            "query_id": query_id,
            "left_id": pending.left_id,
            "right_id": pending.right_id,
            "winner": winner,
            "timestamp": time.time(),
        }
        self._append_durable(state, record)
        session.submit(query_id, winner, record["timestamp"])
        if session.completed:
            self._append_durable(state, ranking.ranking_record(session))
        return True


class CreateSessionRequest(BaseModel):
    annotator_id: str
    emotion: str
    pool_ref: str | None = None
    seed: int = 0


class AnswerRequest(BaseModel):
    query_id: int
    winner: int


def _progress(session: ranking.SortSession) -> dict:
    n = len(session.items)
    bound = ranking.worst_case_comparisons(n)
    answered = session.answered_count()
    return {
        "answered": answered,
        "worst_case": bound,
        "fraction": answered / bound if bound else 1.0,
    }


def _descriptor(session_id: str, session: ranking.SortSession) -> dict:
    bound = ranking.worst_case_comparisons(len(session.items))
    return {
        "session_id": session_id,
        "annotator_id": session.annotator_id,
        "emotion": session.emotion,
        "total_items": len(session.items),
        "answered_count": session.answered_count(),
        "estimated_remaining": max(0, bound - session.answered_count()),
        "completed": session.completed,
    }


def create_app(pool_path, data_dir, static_dir=None) -> FastAPI:
    """Build the annotation service over a pool manifest and a data directory."""
    pool_path = Path(pool_path)
    pool = dataset.load_pool(pool_path)
    store = SessionStore(pool, data_dir)
    app = FastAPI(title="prefrank annotation service")
    app.state.store = store

    image_bytes: dict[int, bytes] = {}
    image_etag: dict[int, str] = {}

    def _image(image_id: int) -> tuple[bytes, str]:
        if image_id not in store.pool_ids:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id}")
        if image_id not in image_bytes:
            entry = pool.entry(image_id)
            if entry.image_path:
                candidate = pool_path.parent / entry.image_path
                if candidate.is_file():
                    data = candidate.read_bytes()
                else:
                    raise HTTPException(status_code=404,
                                        detail=f"image file missing for {image_id}")
            else:
                from . import face, imaging
                data = imaging.encode_png(imaging.to_uint8(face.render(entry.actuators)))
            image_bytes[image_id] = data
            image_etag[image_id] = hashlib.sha256(data).hexdigest()
        return image_bytes[image_id], image_etag[image_id]

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/sessions")
    def create_session(body: CreateSessionRequest):
        sid, state, resumed = store.create_or_resume(
            body.annotator_id, body.emotion, body.seed)
        return {
            "session_id": sid,
            "resumed": resumed,
            "completed": state.session.completed,
        }

    @app.get("/api/sessions/{session_id}/next")
    def next_pair(session_id: str):
        state = store.get(session_id)
        with state.lock:
            session = state.session
            query = session.next_query()
            if query is None:
                return {
                    "completed": True,
                    "ranking_url": f"/api/sessions/{session_id}/ranking",
                }
            return {
                "completed": False,
                "query_id": query.query_id,
                "left_id": query.left_id,
                "right_id": query.right_id,
                "left": f"/api/images/{query.left_id}.png",
                "right": f"/api/images/{query.right_id}.png",
                "emotion": session.emotion,
                "progress": _progress(session),
            }

    @app.post("/api/sessions/{session_id}/answer")
    def answer(session_id: str, body: AnswerRequest):
        state = store.get(session_id)
        with state.lock:
            store.record_answer(state, body.query_id, body.winner)
            session = state.session
            return {
                "accepted": True,
                "completed": session.completed,
                "progress": _progress(session),
            }

    @app.get("/api/sessions/{session_id}/progress")
    def progress(session_id: str):
        state = store.get(session_id)
        with state.lock:
            return _descriptor(session_id, state.session)

    @app.get("/api/sessions/{session_id}/ranking")
    def final_ranking(session_id: str):
        state = store.get(session_id)
        with state.lock:
            session = state.session
            if not session.completed:
                raise HTTPException(status_code=409, detail="session not complete")
            return {
                "session_id": session_id,
                "emotion": session.emotion,
                "ranking": list(session.result.order),
                "consistency": ranking.consistency_check(session.result, session.log),
            }

    @app.get("/api/images/{image_id}.png")
    def image(image_id: int, response: Response):
        data, etag = _image(image_id)
        response.headers["ETag"] = etag
        return Response(content=data, media_type="image/png",
                        headers={"ETag": etag, "Cache-Control": "public, max-age=31536000"})

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
