"""In-process FHIR fixture store and HTTP server.

A hermetic stand-in for a live FHIR R4 sandbox: serves the read/search
subset the gateway uses, paginates searchsets with correct total and
next links, and answers 404 with an OperationOutcome.

Search semantics are the minimal set the workflow needs: `patient`
matches the subject reference's id, `name` is a case-insensitive
substring over the rendered patient name, `_count` caps the page size,
and other parameters are ignored (FHIR's lenient default).

Pagination links use opaque continuation paths (/_page/{token}) rather
than query strings, so every parameterized URL a gateway issues is one it
built itself from whitelisted parameters.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qsl, urlsplit

from .fhir import render_name
from .gateway import canonical_json


class BindError(OSError):
    """The fixture server could not bind its address."""


def operation_outcome(diagnostics: str, code: str = "not-found") -> dict[str, Any]:
    return {
        "resourceType": "OperationOutcome",
        "issue": [{"severity": "error", "code": code, "diagnostics": diagnostics}],
    }


@dataclass
class FixtureStore:
    resources: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    page_size: int = 10

    def add(self, resource: dict[str, Any]) -> None:
        resource_type = resource.get("resourceType")
        if not isinstance(resource_type, str) or not resource_type:
            raise ValueError("fixture resource must carry resourceType")
        id = resource.get("id")
        if not isinstance(id, str) or not id:
            raise ValueError("fixture resource must carry a string id")
        bucket = self.resources.setdefault(resource_type, [])
        if any(existing["id"] == id for existing in bucket):
            raise ValueError(f"duplicate fixture id {resource_type}/{id}")
        bucket.append(resource)

    def read(self, resource_type: str, id: str) -> dict[str, Any] | None:
        for resource in self.resources.get(resource_type, []):
            if resource.get("id") == id:
                return resource
        return None

    def matches(self, resource: dict[str, Any], key: str, value: str) -> bool:
        if key == "patient":
            ref = resource.get("subject", {}).get("reference", "")
            return ref == value or ref.endswith(f"/{value}")
        if key == "name":
            return value.lower() in render_name(resource).lower()
        if key == "_count":
            return True
        return True

    def search(self, resource_type: str, params: dict[str, str]) -> list[dict[str, Any]]:
        """All matches in document (insertion) order."""
        results = []
        for resource in self.resources.get(resource_type, []):
            if all(self.matches(resource, key, value) for key, value in params.items()):
                results.append(resource)
        return results

    def effective_page_size(self, params: dict[str, str]) -> int:
        size = self.page_size
        count = params.get("_count")
        if count is not None:
            try:
                requested = int(count)
            except ValueError:
                return size
            if requested >= 1:
                size = min(size, requested)
        return size

    @classmethod
    def load_dir(cls, directory: str | Path, page_size: int = 10) -> "FixtureStore":
        store = cls(page_size=page_size)
        for path in sorted(Path(directory).glob("*.json")):
            if path.name == "manifest.json":
                continue
            with path.open("rb") as handle:
                store.add(json.load(handle))
        return store

    @classmethod
    def bundled(cls, page_size: int = 10) -> "FixtureStore":
        store = cls(page_size=page_size)
        for resource in BUNDLED_RESOURCES:
            store.add(json.loads(canonical_json(resource)))
        return store


class _FixtureHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: Any) -> None:
        pass

    def _reply(self, status: int, payload: Any) -> None:
        body = canonical_json(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/fhir+json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        fixture: FixtureHttpServer = self.server.fixture  # type: ignore[attr-defined]
        parts = urlsplit(self.path)
        segments = [s for s in parts.path.split("/") if s]
        params = dict(parse_qsl(parts.query, keep_blank_values=True))

        if len(segments) == 2 and segments[0] == "_page":
            page = fixture.continuation(segments[1])
            if page is None:
                self._reply(404, operation_outcome("unknown page token"))
                return
            resource_type, search_params, offset = page
            self._reply(200, fixture.bundle(resource_type, search_params, offset))
            return
        if len(segments) == 1:
            self._reply(200, fixture.bundle(segments[0], params, 0))
            return
        if len(segments) == 2:
            resource_type, id = segments
            resource = fixture.store.read(resource_type, id)
            if resource is None:
                self._reply(404, operation_outcome(f"{resource_type}/{id} is not known to this server"))
                return
            self._reply(200, resource)
            return
        self._reply(404, operation_outcome(f"no route for {parts.path}"))


class FixtureHttpServer:
    """Threaded HTTP server over a FixtureStore, bound to an ephemeral port."""

    def __init__(self, store: FixtureStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        try:
            self._httpd = ThreadingHTTPServer((host, port), _FixtureHandler)
        except OSError as exc:
            raise BindError(f"cannot bind fixture server at {host}:{port}: {exc}") from exc
        self._httpd.fixture = self  # type: ignore[attr-defined]
        self._cursors: dict[str, tuple[str, dict[str, str], int]] = {}
        self._lock = threading.Lock()
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def continuation(self, token: str) -> tuple[str, dict[str, str], int] | None:
        with self._lock:
            return self._cursors.get(token)

    def _issue_token(self, resource_type: str, params: dict[str, str], offset: int) -> str:
        token = uuid.uuid4().hex
        with self._lock:
            self._cursors[token] = (resource_type, params, offset)
        return token

    def bundle(self, resource_type: str, params: dict[str, str], offset: int) -> dict[str, Any]:
        matches = self.store.search(resource_type, params)
        size = self.store.effective_page_size(params)
        page = matches[offset : offset + size]
        bundle: dict[str, Any] = {
            "resourceType": "Bundle",
            "type": "searchset",
            "total": len(matches),
            "link": [{"relation": "self", "url": f"{self.base_url}/{resource_type}"}],
            "entry": [{"resource": resource} for resource in page],
        }
        if offset + size < len(matches):
            token = self._issue_token(resource_type, params, offset + size)
            bundle["link"].append({"relation": "next", "url": f"{self.base_url}/_page/{token}"})
        return bundle

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "FixtureHttpServer":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def serve_fixture(store: FixtureStore, host: str = "127.0.0.1", port: int = 0) -> FixtureHttpServer:
    return FixtureHttpServer(store, host=host, port=port)


# --- bundled synthetic corpus ----------------------------------------------
# Three patients: p1 carries the demo facts used across docs and tests,
# p2 exercises observations/procedures, p3 is deliberately sparse.

BUNDLED_RESOURCES: list[dict[str, Any]] = [
    {
        "resourceType": "Patient",
        "id": "p1",
        "name": [{"given": ["John"], "family": "Doe"}],
        "birthDate": "1980-07-15",
        "gender": "male",
    },
    {
        "resourceType": "Condition",
        "id": "c1",
        "subject": {"reference": "Patient/p1"},
        "code": {"text": "Asthma"},
        "clinicalStatus": {"coding": [{"code": "active"}]},
    },
    {
        "resourceType": "Condition",
        "id": "c2",
        "subject": {"reference": "Patient/p1"},
        "code": {"text": "Hypertension"},
        "clinicalStatus": {"coding": [{"code": "active"}]},
    },
    {
        "resourceType": "MedicationRequest",
        "id": "m1",
        "subject": {"reference": "Patient/p1"},
        "medicationCodeableConcept": {"text": "Metoprolol"},
        "status": "active",
        "authoredOn": "2024-02-18T09:30:00Z",
    },
    {
        "resourceType": "MedicationRequest",
        "id": "m2",
        "subject": {"reference": "Patient/p1"},
        "medicationCodeableConcept": {"text": "Albuterol"},
        "status": "active",
        "authoredOn": "2024-03-02T14:05:00Z",
    },
    {
        "resourceType": "Patient",
        "id": "p2",
        "name": [{"given": ["Maria", "Luisa"], "family": "Santos"}],
        "birthDate": "1969-11-02",
        "gender": "female",
    },
    {
        "resourceType": "Condition",
        "id": "c3",
        "subject": {"reference": "Patient/p2"},
        "code": {"text": "Type 2 Diabetes"},
        "clinicalStatus": {"coding": [{"code": "active"}]},
    },
    {
        "resourceType": "Condition",
        "id": "c4",
        "subject": {"reference": "Patient/p2"},
        "code": {"coding": [{"display": "Hypertension", "code": "38341003"}]},
        "clinicalStatus": {"coding": [{"code": "active"}]},
    },
    {
        "resourceType": "MedicationRequest",
        "id": "m3",
        "subject": {"reference": "Patient/p2"},
        "medicationCodeableConcept": {"text": "Metformin"},
        "status": "active",
        "authoredOn": "2023-12-05T10:00:00Z",
    },
    {
        "resourceType": "MedicationRequest",
        "id": "m4",
        "subject": {"reference": "Patient/p2"},
        "medicationCodeableConcept": {"text": "Lisinopril"},
        "status": "active",
        "authoredOn": "2024-01-20T08:45:00Z",
    },
    {
        "resourceType": "Observation",
        "id": "o1",
        "subject": {"reference": "Patient/p2"},
        "code": {"text": "HbA1c"},
        "status": "final",
        "valueQuantity": {"value": 8.2, "unit": "%"},
        "effectiveDateTime": "2024-05-01T08:00:00Z",
    },
    {
        "resourceType": "Observation",
        "id": "o2",
        "subject": {"reference": "Patient/p2"},
        "code": {"text": "Systolic blood pressure"},
        "status": "final",
        "valueQuantity": {"value": 142, "unit": "mmHg"},
        "effectiveDateTime": "2024-05-01T08:10:00Z",
    },
    {
        "resourceType": "Procedure",
        "id": "pr1",
        "subject": {"reference": "Patient/p2"},
        "code": {"text": "Colonoscopy"},
        "status": "completed",
        "performedDateTime": "2023-09-12T10:00:00Z",
    },
    {
        "resourceType": "Patient",
        "id": "p3",
        "name": [{"given": ["Alex"], "family": "Quist"}],
    },
]

BUNDLED_MANIFEST = {"patients": ["p1", "p2", "p3"]}


def seed_fixture_dir(directory: str | Path) -> list[Path]:
    """Write the bundled corpus: one resource per file plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for resource in BUNDLED_RESOURCES:
        path = directory / f"{resource['resourceType']}-{resource['id']}.json"
        path.write_text(json.dumps(resource, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        written.append(path)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(BUNDLED_MANIFEST, indent=2) + "\n", encoding="utf-8")
    written.append(manifest)
    return written
