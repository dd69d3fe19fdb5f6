"""HTTP API binding the agent to human clients.

Persona/patient discovery, session lifecycle, streaming chat over
server-sent events, and a session-scoped resource view that resolves
provenance references to the raw FHIR bodies retrieved for that session.

Durability is an append-only JSON-lines log (session-created and
turn-committed events) replayed into the agent's session registry on
startup; no database. Every SSE event's data line is compact JSON.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .agent import (
    Agent,
    ContextFetchError,
    PatientNotFound,
    ProviderError,
    Session,
    SessionBusy,
    SessionUnknown,
    Turn,
)
from .mcp_client import McpError
from .personas import PERSONAS

ABSENT_FIELD = "—"  # em dash placeholder for missing demographics
DEFAULT_PATIENT_COUNT = 20


def _error_body(code: str, message: str) -> dict[str, Any]:
    return {"error": {"code": code, "message": message}}


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content=_error_body(code, message))


def session_view(session: Session) -> dict[str, Any]:
    return {
        "sessionId": session.id,
        "personaId": session.persona_id,
        "patientId": session.patient_id,
        "turns": [
            {"question": turn.question, "answer": turn.answer, "provenance": sorted(turn.provenance)}
            for turn in session.turns
        ],
    }


def sse_event(event: str, data: Any) -> str:
    return f"event: {event}\ndata: {json.dumps(data, separators=(',', ':'), ensure_ascii=False)}\n\n"


class SessionLog:
    """Append-only JSONL event log with startup replay."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _append(self, event: dict[str, Any]) -> None:
        line = json.dumps(event, separators=(",", ":"), ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
                os.fsync(handle.fileno())

    def record_session(self, session: Session) -> None:
        self._append(
            {
                "event": "session-created",
                "sessionId": session.id,
                "personaId": session.persona_id,
                "patientId": session.patient_id,
                "createdAt": session.created_at,
            }
        )

    def record_turn(self, session_id: str, turn_index: int, turn: Turn) -> None:
        self._append(
            {
                "event": "turn-committed",
                "sessionId": session_id,
                "turnIndex": turn_index,
                "question": turn.question,
                "answer": turn.answer,
                "provenance": list(turn.provenance),
                "timestamp": turn.timestamp,
            }
        )

    def replay_into(self, agent: Agent) -> int:
        """Rebuild the agent's session registry from the log. Returns the
        number of sessions restored."""
        if not self.path.exists():
            return 0
        restored = 0
        with self.path.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event.get("event")
                if kind == "session-created":
                    agent.create_session(
                        event["personaId"],
                        event["patientId"],
                        session_id=event["sessionId"],
                        created_at=event["createdAt"],
                    )
                    restored += 1
                elif kind == "turn-committed":
                    session = agent.get_session(event["sessionId"])
                    session.turns.append(
                        Turn(
                            question=event["question"],
                            answer=event["answer"],
                            provenance=tuple(event["provenance"]),
                            timestamp=event["timestamp"],
                        )
                    )
        return restored


class SessionCreate(BaseModel):
    personaId: str
    patientId: str


class MessageCreate(BaseModel):
    question: str


def create_app(
    agent: Agent,
    session_log: str | Path | None = None,
    ui_origin: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="clinmcp", version="0.1.0")
    log = SessionLog(session_log) if session_log else None
    if log is not None:
        log.replay_into(agent)
    if ui_origin:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=[ui_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )
    # Defense in depth next to the agent's own per-session turn lock.
    busy_sessions: set[str] = set()
    busy_lock = threading.Lock()

    @app.get("/api/personas")
    def list_personas() -> list[dict[str, Any]]:
        return [
            {
                "id": persona.id,
                "displayName": persona.display_name,
                "predefinedQuestions": list(persona.predefined_questions),
            }
            for persona in PERSONAS.values()
        ]

    @app.get("/api/patients")
    def list_patients(name: str | None = None, count: int = DEFAULT_PATIENT_COUNT):
        if count < 1:
            return _error(400, "bad_count", "count must be >= 1")
        try:
            patients = agent.search_patients(name)
        except (ContextFetchError, McpError, ConnectionError, TimeoutError) as exc:
            return _error(502, "upstream_unavailable", str(exc))
        items = [
            {
                "id": patient.id,
                "name": patient.name,
                "birthDate": patient.birth_date or ABSENT_FIELD,
                "gender": patient.gender or ABSENT_FIELD,
            }
            for patient in patients
        ]
        items.sort(key=lambda item: (item["name"], item["id"]))
        return items[:count]

    @app.post("/api/sessions", status_code=201)
    def create_session(body: SessionCreate):
        if body.personaId not in PERSONAS:
            return _error(400, "unknown_persona", f"no persona {body.personaId!r}")
        try:
            context = agent.fetch_patient_context(body.patientId)
        except PatientNotFound as exc:
            return _error(404, "unknown_patient", str(exc))
        except (ContextFetchError, McpError, ConnectionError, TimeoutError) as exc:
            return _error(502, "upstream_unavailable", str(exc))
        session = agent.create_session(body.personaId, body.patientId)
        agent.cache_context(session.id, context)
        if log is not None:
            log.record_session(session)
        return {"sessionId": session.id}

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            session = agent.get_session(session_id)
        except SessionUnknown as exc:
            return _error(404, "unknown_session", str(exc))
        return session_view(session)

    @app.get("/api/sessions/{session_id}/resources/{resource_type}/{resource_id}")
    def get_session_resource(session_id: str, resource_type: str, resource_id: str):
        try:
            session = agent.get_session(session_id)
        except SessionUnknown as exc:
            return _error(404, "unknown_session", str(exc))
        try:
            context = agent.session_context(session)
        except (PatientNotFound, ContextFetchError, McpError, ConnectionError, TimeoutError) as exc:
            return _error(502, "upstream_unavailable", str(exc))
        resource = context.raw_resources.get(f"{resource_type}/{resource_id}")
        if resource is None:
            return _error(404, "unknown_resource", f"{resource_type}/{resource_id} was not retrieved in this session")
        return resource

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageCreate):
        if not body.question.strip():
            return _error(400, "empty_question", "question must be non-empty")
        try:
            agent.get_session(session_id)
        except SessionUnknown as exc:
            return _error(404, "unknown_session", str(exc))
        with busy_lock:
            if session_id in busy_sessions:
                return _error(409, "session_busy", "a turn is already in flight for this session")
            busy_sessions.add(session_id)
        try:
            stream = agent.run_turn(session_id, body.question)
        except SessionBusy:
            with busy_lock:
                busy_sessions.discard(session_id)
            return _error(409, "session_busy", "a turn is already in flight for this session")
        except (PatientNotFound, ContextFetchError, McpError, ConnectionError, TimeoutError) as exc:
            with busy_lock:
                busy_sessions.discard(session_id)
            return _error(502, "upstream_unavailable", str(exc))

        def event_stream() -> Iterator[str]:
            try:
                yield sse_event("meta", {"sessionId": session_id, "turnIndex": stream.turn_index})
                try:
                    for piece in stream:
                        yield sse_event("token", {"text": piece})
                except ProviderError as exc:
                    yield sse_event("error", {"code": "provider_error", "message": str(exc)})
                    return
                # Persist before announcing completion.
                if log is not None and stream.committed_turn is not None:
                    log.record_turn(session_id, stream.turn_index, stream.committed_turn)
                yield sse_event("provenance", list(stream.provenance))
                yield sse_event("done", {})
            finally:
                stream.close()
                with busy_lock:
                    busy_sessions.discard(session_id)

        return StreamingResponse(event_stream(), media_type="text/event-stream")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
