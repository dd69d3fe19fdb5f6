"""Service API tests: discovery, sessions, SSE streaming, persistence."""

import json
import re

import pytest
from fastapi.testclient import TestClient

from clinmcp.agent import Agent, InProcessGateway
from clinmcp.fixtures import FixtureStore, serve_fixture
from clinmcp.gateway import build_gateway_server
from clinmcp.llm import MockChatProvider
from clinmcp.service import create_app
from tests.test_agent import FaultyProvider
from tests.test_gateway import canonical_config

MOCK_P1_ANSWER = (
    "For clinical review: conditions are Asthma; Hypertension. "
    "Medications are Metoprolol; Albuterol."
)
P1_PROVENANCE = ["Condition/c1", "Condition/c2", "MedicationRequest/m1", "MedicationRequest/m2"]


@pytest.fixture(scope="module")
def fixture_server():
    with serve_fixture(FixtureStore.bundled(page_size=2)) as server:
        yield server


def build_agent(fixture_server, provider=None):
    config = canonical_config(fixture_server.base_url)
    return Agent.connect(InProcessGateway(build_gateway_server(config)), provider or MockChatProvider(chunk_size=16))


@pytest.fixture
def client(fixture_server, tmp_path):
    agent = build_agent(fixture_server)
    app = create_app(agent, session_log=tmp_path / "sessions.jsonl")
    with TestClient(app) as test_client:
        yield test_client
    agent.close()


def parse_sse(text: str) -> list[tuple[str, object]]:
    events = []
    for block in text.split("\n\n"):
        if not block.strip():
            continue
        event_match = re.match(r"event: (.+)\ndata: (.+)", block)
        assert event_match, f"malformed SSE block: {block!r}"
        events.append((event_match.group(1), json.loads(event_match.group(2))))
    return events


def create_session(client, persona="clinician", patient="p1") -> str:
    reply = client.post("/api/sessions", json={"personaId": persona, "patientId": patient})
    assert reply.status_code == 201, reply.text
    return reply.json()["sessionId"]


def post_question(client, session_id, question="Summarize."):
    with client.stream("POST", f"/api/sessions/{session_id}/messages", json={"question": question}) as reply:
        status = reply.status_code
        body = "".join(reply.iter_text())
    return status, body


# --- discovery -----------------------------------------------------------------


def test_personas_fixed_order_and_content(client):
    reply = client.get("/api/personas")
    assert reply.status_code == 200
    personas = reply.json()
    assert [p["id"] for p in personas] == ["clinician", "caregiver", "patient"]
    clinician = personas[0]
    assert clinician["displayName"] == "Clinician"
    assert "What treatment options are available for this patient's conditions?" in clinician["predefinedQuestions"]
    for persona in personas:
        assert len(persona["predefinedQuestions"]) >= 3
    assert client.get("/api/personas").json() == personas


def test_patients_sorted_by_name(client):
    reply = client.get("/api/patients")
    assert reply.status_code == 200
    items = reply.json()
    assert [i["id"] for i in items] == ["p3", "p1", "p2"]  # Alex, John, Maria
    assert [i["name"] for i in items] == sorted(i["name"] for i in items)
    alex = items[0]
    assert alex["birthDate"] == "—"
    assert alex["gender"] == "—"
    john = items[1]
    assert john["birthDate"] == "1980-07-15"


def test_patients_name_filter_and_count(client):
    assert client.get("/api/patients", params={"name": "zzz-no-match"}).json() == []
    capped = client.get("/api/patients", params={"count": 2}).json()
    assert len(capped) == 2


def test_patients_upstream_down_is_502(fixture_server, tmp_path):
    agent = build_agent(fixture_server)
    app = create_app(agent, session_log=tmp_path / "s.jsonl")
    client = TestClient(app)
    agent.close()  # sever the MCP channel
    reply = client.get("/api/patients")
    assert reply.status_code == 502
    assert reply.json()["error"]["code"] == "upstream_unavailable"


# --- sessions --------------------------------------------------------------------


def test_create_session(client):
    session_id = create_session(client)
    assert session_id
    view = client.get(f"/api/sessions/{session_id}").json()
    assert view == {"sessionId": session_id, "personaId": "clinician", "patientId": "p1", "turns": []}


def test_create_session_unknown_patient_404(client):
    reply = client.post("/api/sessions", json={"personaId": "clinician", "patientId": "missing"})
    assert reply.status_code == 404
    assert reply.json()["error"]["code"] == "unknown_patient"


def test_create_session_unknown_persona_400(client):
    reply = client.post("/api/sessions", json={"personaId": "nurse", "patientId": "p1"})
    assert reply.status_code == 400
    assert reply.json()["error"]["code"] == "unknown_persona"


def test_sessions_get_distinct_ids(client):
    assert create_session(client) != create_session(client)


def test_get_unknown_session_404(client):
    assert client.get("/api/sessions/nope").status_code == 404


# --- streaming ---------------------------------------------------------------------


def test_message_stream_grammar_and_content(client):
    session_id = create_session(client)
    status, body = post_question(client, session_id)
    assert status == 200
    events = parse_sse(body)
    names = [name for name, _ in events]
    assert names[0] == "meta"
    assert names[-2:] == ["provenance", "done"]
    assert set(names[1:-2]) == {"token"}
    meta = events[0][1]
    assert meta == {"sessionId": session_id, "turnIndex": 0}
    tokens = "".join(data["text"] for name, data in events if name == "token")
    assert tokens == MOCK_P1_ANSWER
    provenance = events[-2][1]
    assert provenance == P1_PROVENANCE

    view = client.get(f"/api/sessions/{session_id}").json()
    assert view["turns"] == [{"question": "Summarize.", "answer": MOCK_P1_ANSWER, "provenance": P1_PROVENANCE}]


def test_second_turn_meta_index_advances(client):
    session_id = create_session(client)
    post_question(client, session_id, "first")
    status, body = post_question(client, session_id, "second")
    events = parse_sse(body)
    assert events[0][1]["turnIndex"] == 1
    view = client.get(f"/api/sessions/{session_id}").json()
    assert [t["question"] for t in view["turns"]] == ["first", "second"]


def test_message_unknown_session_404(client):
    reply = client.post("/api/sessions/nope/messages", json={"question": "q"})
    assert reply.status_code == 404


def test_empty_question_400(client):
    session_id = create_session(client)
    reply = client.post(f"/api/sessions/{session_id}/messages", json={"question": "   "})
    assert reply.status_code == 400


def test_provider_fault_emits_error_event_and_persists_nothing(fixture_server, tmp_path):
    agent = build_agent(fixture_server, provider=FaultyProvider())
    app = create_app(agent, session_log=tmp_path / "s.jsonl")
    with TestClient(app) as client:
        session_id = create_session(client)
        status, body = post_question(client, session_id)
        assert status == 200
        events = parse_sse(body)
        names = [name for name, _ in events]
        assert names[0] == "meta"
        assert names[-1] == "error"
        assert "done" not in names and "provenance" not in names
        view = client.get(f"/api/sessions/{session_id}").json()
        assert view["turns"] == []
        # Session is usable again after the failure.
        assert client.post(f"/api/sessions/{session_id}/messages", json={"question": "q"}).status_code == 200
    agent.close()


def test_concurrent_message_409(fixture_server, tmp_path):
    import threading
    import time

    class SlowProvider(MockChatProvider):
        def complete(self, request):
            for chunk in super().complete(request):
                time.sleep(0.05)
                yield chunk

    agent = build_agent(fixture_server, provider=SlowProvider(chunk_size=4))
    app = create_app(agent, session_log=tmp_path / "s.jsonl")
    with TestClient(app) as client:
        session_id = create_session(client)
        first_status = {}

        def long_poll():
            status, _ = post_question(client, session_id, "slow one")
            first_status["status"] = status

        thread = threading.Thread(target=long_poll)
        thread.start()
        time.sleep(0.2)
        reply = client.post(f"/api/sessions/{session_id}/messages", json={"question": "overlap"})
        thread.join()
        assert first_status["status"] == 200
        assert reply.status_code == 409
        assert reply.json()["error"]["code"] == "session_busy"
    agent.close()


# --- provenance resources ------------------------------------------------------------


def test_session_resource_lookup(client, fixture_server):
    session_id = create_session(client)
    reply = client.get(f"/api/sessions/{session_id}/resources/Condition/c1")
    assert reply.status_code == 200
    assert reply.json() == fixture_server.store.read("Condition", "c1")
    missing = client.get(f"/api/sessions/{session_id}/resources/Condition/zzz")
    assert missing.status_code == 404


# --- persistence -----------------------------------------------------------------------


def test_persistence_round_trip(fixture_server, tmp_path):
    log_path = tmp_path / "sessions.jsonl"
    agent = build_agent(fixture_server)
    app = create_app(agent, session_log=log_path)
    with TestClient(app) as client:
        session_id = create_session(client)
        post_question(client, session_id, "first")
        post_question(client, session_id, "second")
        before = client.get(f"/api/sessions/{session_id}").content
    agent.close()

    # Fresh process equivalent: new agent, new app, same log.
    agent2 = build_agent(fixture_server)
    app2 = create_app(agent2, session_log=log_path)
    with TestClient(app2) as client2:
        after = client2.get(f"/api/sessions/{session_id}").content
    agent2.close()
    assert after == before


def test_replayed_session_accepts_new_turns(fixture_server, tmp_path):
    log_path = tmp_path / "sessions.jsonl"
    agent = build_agent(fixture_server)
    with TestClient(create_app(agent, session_log=log_path)) as client:
        session_id = create_session(client)
        post_question(client, session_id, "first")
    agent.close()

    agent2 = build_agent(fixture_server)
    with TestClient(create_app(agent2, session_log=log_path)) as client2:
        status, body = post_question(client2, session_id, "after restart")
        assert status == 200
        events = parse_sse(body)
        assert events[0][1]["turnIndex"] == 1
        assert events[-1][0] == "done"
        view = client2.get(f"/api/sessions/{session_id}").json()
        assert [t["question"] for t in view["turns"]] == ["first", "after restart"]
    agent2.close()
