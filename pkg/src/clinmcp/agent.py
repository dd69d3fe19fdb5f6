"""The MCP agent: connect, retrieve patient context, compose persona-aware
prompts with provenance, stream LLM answers, and keep session history.

Retrieval is a fixed plan so prompts and provenance are reproducible:
read the patient, then search conditions, medications, observations, and
procedures for that patient, in that order. A failed search degrades its
segment to empty-with-warning; only a failed patient read aborts.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Iterator

from . import llm
from .fhir import (
    ConditionRecord,
    MedicationRecord,
    ObservationRecord,
    PatientRecord,
    ProcedureRecord,
    parse_resource,
    render_fact,
)
from .llm import ChatProvider, ChatRequest
from .mcp_client import McpClient, McpError
from .mcp_server import McpServer
from .personas import get_persona
from .prompt import ContextPrompt, DEFAULT_HISTORY_WINDOW, compose_prompt
from .transport import LineChannel, TransportClosed, channel_pair


class AgentError(Exception):
    pass


class HandshakeFailure(AgentError):
    """The MCP handshake with the gateway could not complete."""


class NoToolsAvailable(AgentError):
    """tools/list came back empty; the gateway is misconfigured."""


class PatientNotFound(AgentError):
    """The patient read reported the id unknown."""


class ContextFetchError(AgentError):
    """The patient read itself failed for a non-404 reason."""


class SessionBusy(AgentError):
    """Another turn is already in flight for this session."""


class SessionUnknown(AgentError):
    pass


class ProviderError(AgentError):
    """The LLM provider failed; the session is unchanged."""


# The fixed retrieval plan: segment name, search tool, record type.
_SEGMENT_PLAN = (
    ("conditions", "search_condition", ConditionRecord),
    ("medications", "search_medicationrequest", MedicationRecord),
    ("observations", "search_observation", ObservationRecord),
    ("procedures", "search_procedure", ProcedureRecord),
)


@dataclass(frozen=True)
class PatientContext:
    patient: PatientRecord
    conditions: tuple[ConditionRecord, ...]
    medications: tuple[MedicationRecord, ...]
    observations: tuple[ObservationRecord, ...]
    procedures: tuple[ProcedureRecord, ...]
    provenance: dict[str, tuple[str, ...]]
    raw_resources: dict[str, dict[str, Any]]
    warnings: tuple[str, ...] = ()

    def _facts(self, records) -> tuple[str, ...]:
        # Duplicate display strings collapse to one fact; provenance keeps
        # every contributing reference.
        seen: list[str] = []
        for record in records:
            fact = render_fact(record)
            if fact not in seen:
                seen.append(fact)
        return tuple(seen)

    @property
    def condition_facts(self) -> tuple[str, ...]:
        return self._facts(self.conditions)

    @property
    def medication_facts(self) -> tuple[str, ...]:
        return self._facts(self.medications)

    @property
    def observation_facts(self) -> tuple[str, ...]:
        return self._facts(self.observations)

    @property
    def procedure_facts(self) -> tuple[str, ...]:
        return self._facts(self.procedures)


@dataclass(frozen=True)
class Turn:
    question: str
    answer: str
    provenance: tuple[str, ...]
    timestamp: float


@dataclass
class Session:
    id: str
    persona_id: str
    patient_id: str
    created_at: float
    turns: list[Turn] = field(default_factory=list)

    def history(self) -> tuple[tuple[str, str], ...]:
        return tuple((turn.question, turn.answer) for turn in self.turns)


class GatewayEndpoint:
    """Anything that can open a byte channel to an MCP gateway."""

    def connect(self) -> LineChannel:  # pragma: no cover - interface
        raise NotImplementedError


class InProcessGateway(GatewayEndpoint):
    """Runs an McpServer on a background thread and hands out channels."""

    def __init__(self, server: McpServer):
        self.server = server

    def connect(self) -> LineChannel:
        client_end, server_end = channel_pair()
        self.server.serve_in_thread(server_end)
        return client_end


class ChannelEndpoint(GatewayEndpoint):
    """Wraps an already-open channel (e.g. a spawned stdio subprocess)."""

    def __init__(self, channel: LineChannel):
        self._channel = channel

    def connect(self) -> LineChannel:
        return self._channel


class Agent:
    """Holds the MCP connection, the provider, and the session registry.

    Safe to use from several threads; turns on one session are mutually
    exclusive while distinct sessions proceed concurrently.
    """

    def __init__(self, client: McpClient, provider: ChatProvider, tools: list[dict[str, Any]],
                 max_history: int = DEFAULT_HISTORY_WINDOW):
        self._client = client
        self.provider = provider
        self.tools = {tool["name"]: tool for tool in tools}
        self.max_history = max_history
        self._sessions: dict[str, Session] = {}
        self._contexts: dict[str, PatientContext] = {}
        self._turn_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- wiring ---------------------------------------------------------------

    @classmethod
    def connect(cls, endpoint: GatewayEndpoint, provider: ChatProvider,
                max_history: int = DEFAULT_HISTORY_WINDOW) -> "Agent":
        """Open the MCP channel, run the handshake, cache the tool list."""
        try:
            channel = endpoint.connect()
        except (OSError, TransportClosed) as exc:
            raise HandshakeFailure(f"cannot reach gateway: {exc}") from exc
        client = McpClient(channel)
        try:
            client.initialize()
            tools = client.list_tools()
        except (McpError, ConnectionError, TimeoutError) as exc:
            client.close()
            raise HandshakeFailure(f"MCP handshake failed: {exc}") from exc
        if not tools:
            client.close()
            raise NoToolsAvailable("gateway exposes no tools")
        return cls(client, provider, tools, max_history=max_history)

    def close(self) -> None:
        self._client.close()

    # -- retrieval --------------------------------------------------------------

    def _call_search(self, tool: str, patient_id: str) -> list[dict[str, Any]]:
        result = self._client.call_tool(tool, {"patient": patient_id})
        if result.is_error:
            raise ContextFetchError(result.first_text)
        return json.loads(result.first_text)

    def search_patients(self, name: str | None = None) -> list[PatientRecord]:
        """Proxy the patient search tool; used for patient discovery."""
        if "search_patient" not in self.tools:
            raise ContextFetchError("gateway does not expose search_patient")
        arguments = {"name": name} if name else {}
        result = self._client.call_tool("search_patient", arguments)
        if result.is_error:
            raise ContextFetchError(result.first_text)
        records = []
        for raw in json.loads(result.first_text):
            record = parse_resource(raw)
            if isinstance(record, PatientRecord):
                records.append(record)
        return records

    def fetch_patient_context(self, patient_id: str) -> PatientContext:
        """Run the fixed retrieval plan and build the provenance index."""
        if "read_patient" not in self.tools:
            raise ContextFetchError("gateway does not expose read_patient")
        try:
            read_result = self._client.call_tool("read_patient", {"id": patient_id})
        except (McpError, ConnectionError, TimeoutError) as exc:
            raise ContextFetchError(f"patient read failed: {exc}") from exc
        if read_result.is_error:
            if "not found" in read_result.first_text.lower():
                raise PatientNotFound(f"no patient with id {patient_id!r}")
            raise ContextFetchError(read_result.first_text)
        raw_patient = json.loads(read_result.first_text)
        patient = parse_resource(raw_patient)
        if not isinstance(patient, PatientRecord):
            raise ContextFetchError(f"read_patient returned a {type(patient).__name__}, not a Patient")

        provenance: dict[str, tuple[str, ...]] = {}
        raw_resources: dict[str, dict[str, Any]] = {patient.ref: raw_patient}
        warnings: list[str] = []
        segments: dict[str, tuple] = {}
        for segment_name, tool_name, record_type in _SEGMENT_PLAN:
            records = []
            if tool_name not in self.tools:
                warnings.append(f"{segment_name}: gateway does not expose {tool_name}")
            else:
                try:
                    raw_list = self._call_search(tool_name, patient_id)
                except (McpError, ConnectionError, TimeoutError, ContextFetchError, ValueError) as exc:
                    warnings.append(f"{segment_name}: retrieval failed ({exc})")
                    raw_list = []
                for raw in raw_list:
                    record = parse_resource(raw)
                    if not isinstance(record, record_type):
                        warnings.append(f"{segment_name}: skipped a non-{record_type.__name__} entry")
                        continue
                    records.append(record)
                    fact = render_fact(record)
                    existing = provenance.get(fact, ())
                    if record.ref not in existing:
                        provenance[fact] = existing + (record.ref,)
                    raw_resources[record.ref] = raw
            segments[segment_name] = tuple(records)

        return PatientContext(
            patient=patient,
            conditions=segments["conditions"],
            medications=segments["medications"],
            observations=segments["observations"],
            procedures=segments["procedures"],
            provenance=provenance,
            raw_resources=raw_resources,
            warnings=tuple(warnings),
        )

    # -- sessions ---------------------------------------------------------------

    def create_session(self, persona_id: str, patient_id: str, session_id: str | None = None,
                       created_at: float | None = None) -> Session:
        get_persona(persona_id)
        session = Session(
            id=session_id or uuid.uuid4().hex,
            persona_id=persona_id,
            patient_id=patient_id,
            created_at=created_at if created_at is not None else time.time(),
        )
        with self._registry_lock:
            if session.id in self._sessions:
                raise ValueError(f"session id {session.id!r} already exists")
            self._sessions[session.id] = session
            self._turn_locks[session.id] = threading.Lock()
        return session

    def get_session(self, session_id: str) -> Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise SessionUnknown(f"unknown session {session_id!r}")
        return session

    def cache_context(self, session_id: str, context: PatientContext) -> None:
        with self._registry_lock:
            self._contexts[session_id] = context

    def session_context(self, session: Session) -> PatientContext:
        """The session's retrieved context, fetched on first use."""
        with self._registry_lock:
            context = self._contexts.get(session.id)
        if context is None:
            context = self.fetch_patient_context(session.patient_id)
            with self._registry_lock:
                self._contexts[session.id] = context
        return context

    def compose_for_session(self, session: Session, question: str) -> ContextPrompt:
        persona = get_persona(session.persona_id)
        context = self.session_context(session)
        return compose_prompt(persona, context, question, history=session.history(), max_history=self.max_history)

    def run_turn(self, session_id: str, question: str) -> "TurnStream":
        """Start a streaming turn. The returned stream yields answer chunks;
        the turn is appended to the session only after the stream completes."""
        session = self.get_session(session_id)
        with self._registry_lock:
            lock = self._turn_locks[session.id]
        if not lock.acquire(blocking=False):
            raise SessionBusy(f"a turn is already in flight for session {session.id}")
        try:
            prompt = self.compose_for_session(session, question)
            request = ChatRequest(system_text=prompt.instruction, user_text=prompt.user_text(), stream=True)
            return TurnStream(session, question, prompt, self.provider, request, lock)
        except BaseException:
            lock.release()
            raise


class TurnStream:
    """Iterator over one turn's answer chunks.

    Commits the turn on successful exhaustion; any failure or early close
    leaves the session unchanged. turn_index is fixed at start so callers
    can announce it before streaming.
    """

    def __init__(self, session: Session, question: str, prompt: ContextPrompt,
                 provider: ChatProvider, request: ChatRequest, lock: threading.Lock):
        self.session = session
        self.question = question
        self.prompt = prompt
        self.turn_index = len(session.turns)
        self.provenance = prompt.provenance_set()
        self.committed_turn: Turn | None = None
        self._provider = provider
        self._request = request
        self._lock = lock
        self._done = False

    def __iter__(self) -> Iterator[str]:
        if self._done:
            raise RuntimeError("turn stream already consumed")
        pieces: list[str] = []
        try:
            try:
                for chunk in self._provider.complete(self._request):
                    if chunk.text:
                        pieces.append(chunk.text)
                        yield chunk.text
            except llm.ProviderFault as exc:
                raise ProviderError(str(exc)) from exc
            turn = Turn(
                question=self.question,
                answer="".join(pieces),
                provenance=self.provenance,
                timestamp=time.time(),
            )
            self.session.turns.append(turn)
            self.committed_turn = turn
        finally:
            self._finish()

    def _finish(self) -> None:
        if not self._done:
            self._done = True
            self._lock.release()

    def close(self) -> None:
        """Abandon the turn without committing (idempotent)."""
        self._finish()
