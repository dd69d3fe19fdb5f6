"""MCP-FHIR gateway.

Loads a declarative config (JSON or YAML), derives one MCP tool per
configured operation, and executes tool calls as FHIR REST requests:
read_<type> does GET {base}/{Type}/{id}, search_<type> does
GET {base}/{Type}?params and follows next links.

The bearer token, when configured, goes into the Authorization header and
nowhere else: never into logs, error messages, or tool results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable
from urllib.parse import urlencode, urlsplit

import requests
import yaml

from .fhir import FhirBundle, merge_pages, operation_outcome_text, TotalMismatch
from .mcp_server import McpServer, ToolArgumentError, ToolDescriptor, ToolResult

OPERATIONS = ("read", "search")
DEFAULT_TIMEOUT_MS = 10000

FHIR_JSON = "application/fhir+json"


class ConfigParseError(ValueError):
    """Source bytes do not decode in the stated format."""


class ConfigValidationError(ValueError):
    """Decoded config violates the schema; path names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class GatewayError(Exception):
    pass


class NotFound(GatewayError):
    """Upstream answered 404/410; message carries OperationOutcome text when present."""


class UpstreamError(GatewayError):
    """Upstream answered outside 2xx (and outside the not-found cases)."""


class Timeout(GatewayError):
    """No upstream response within the configured budget (after one retry)."""


class TransportError(GatewayError):
    """Connection-level failure before any HTTP status was received."""


class DisallowedParam(GatewayError):
    """A search parameter outside the configured whitelist was requested."""


@dataclass(frozen=True)
class ResourceConfig:
    type: str
    operations: tuple[str, ...]
    search_params: tuple[str, ...] = ()

    @property
    def read_enabled(self) -> bool:
        return "read" in self.operations

    @property
    def search_enabled(self) -> bool:
        return "search" in self.operations


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    resources: tuple[ResourceConfig, ...]
    auth_token: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def resource(self, type: str) -> ResourceConfig | None:
        for entry in self.resources:
            if entry.type == type:
                return entry
        return None

    def with_base_url(self, base_url: str) -> "GatewayConfig":
        return GatewayConfig(base_url, self.resources, self.auth_token, self.timeout_ms)


def _validate_config(doc: Any) -> GatewayConfig:
    if not isinstance(doc, dict):
        raise ConfigValidationError("", "config must be an object")
    fhir_section = doc.get("fhir")
    if not isinstance(fhir_section, dict):
        raise ConfigValidationError("/fhir", "required object")
    base_url = fhir_section.get("baseUrl")
    if not isinstance(base_url, str):
        raise ConfigValidationError("/fhir/baseUrl", "required string")
    parts = urlsplit(base_url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ConfigValidationError("/fhir/baseUrl", f"must be an absolute http(s) URL, got {base_url!r}")
    auth_token = fhir_section.get("authToken")
    if auth_token is not None and not isinstance(auth_token, str):
        raise ConfigValidationError("/fhir/authToken", "must be a string or null")
    timeout_ms = fhir_section.get("timeoutMs", DEFAULT_TIMEOUT_MS)
    if isinstance(timeout_ms, bool) or not isinstance(timeout_ms, int) or timeout_ms <= 0:
        raise ConfigValidationError("/fhir/timeoutMs", "must be a positive integer")

    raw_resources = doc.get("resources")
    if not isinstance(raw_resources, list) or not raw_resources:
        raise ConfigValidationError("/resources", "at least one resource entry is required")
    resources: list[ResourceConfig] = []
    seen_types: set[str] = set()
    for i, entry in enumerate(raw_resources):
        path = f"/resources/{i}"
        if not isinstance(entry, dict):
            raise ConfigValidationError(path, "must be an object")
        type_name = entry.get("type")
        if not isinstance(type_name, str) or not type_name:
            raise ConfigValidationError(f"{path}/type", "required string")
        if type_name in seen_types:
            raise ConfigValidationError(f"{path}/type", f"duplicate resource type {type_name!r}")
        seen_types.add(type_name)
        operations = entry.get("operations")
        if not isinstance(operations, list) or not operations:
            raise ConfigValidationError(f"{path}/operations", "at least one of read, search")
        for op in operations:
            if op not in OPERATIONS:
                raise ConfigValidationError(f"{path}/operations", f"unknown operation {op!r}")
        if len(set(operations)) != len(operations):
            raise ConfigValidationError(f"{path}/operations", "duplicate operation")
        search_params: tuple[str, ...] = ()
        if "search" in operations:
            raw_params = entry.get("searchParams")
            if not isinstance(raw_params, list) or not raw_params:
                raise ConfigValidationError(f"{path}/searchParams", "required non-empty list when search is enabled")
            if not all(isinstance(p, str) and p for p in raw_params):
                raise ConfigValidationError(f"{path}/searchParams", "parameter names must be non-empty strings")
            search_params = tuple(raw_params)
        resources.append(ResourceConfig(type=type_name, operations=tuple(operations), search_params=search_params))
    return GatewayConfig(
        base_url=base_url.rstrip("/"),
        resources=tuple(resources),
        auth_token=auth_token,
        timeout_ms=timeout_ms,
    )


def load_config(source: bytes | str, format: str = "json") -> GatewayConfig:
    """Decode and validate a gateway config from JSON or YAML bytes."""
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigParseError(f"config is not valid UTF-8: {exc}") from None
    if format == "json":
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"invalid JSON config: {exc}") from None
    elif format == "yaml":
        try:
            doc = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise ConfigParseError(f"invalid YAML config: {exc}") from None
    else:
        raise ValueError(f"unknown config format {format!r}")
    return _validate_config(doc)


def load_config_file(path: str) -> GatewayConfig:
    format = "yaml" if path.endswith((".yaml", ".yml")) else "json"
    with open(path, "rb") as handle:
        return load_config(handle.read(), format=format)


def derive_tools(config: GatewayConfig) -> list[ToolDescriptor]:
    """One tool per configured operation, config order, read before search."""
    tools: list[ToolDescriptor] = []
    for resource in config.resources:
        lower = resource.type.lower()
        if resource.read_enabled:
            tools.append(
                ToolDescriptor(
                    name=f"read_{lower}",
                    description=f"Read a single {resource.type} resource by id.",
                    input_schema={
                        "type": "object",
                        "properties": {"id": {"type": "string", "description": f"{resource.type} logical id"}},
                        "required": ["id"],
                    },
                )
            )
        if resource.search_enabled:
            tools.append(
                ToolDescriptor(
                    name=f"search_{lower}",
                    description=f"Search {resource.type} resources by {', '.join(resource.search_params)}.",
                    input_schema={
                        "type": "object",
                        "properties": {p: {"type": "string"} for p in resource.search_params},
                    },
                )
            )
    return tools


def canonical_json(value: Any) -> str:
    """The one serialization used for FHIR payloads in tool results and fixtures."""
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


# status, headers, body
HttpResponse = tuple[int, dict[str, str], bytes]
HttpGet = Callable[[str, dict[str, str], float], HttpResponse]


def _requests_get(url: str, headers: dict[str, str], timeout_s: float) -> HttpResponse:
    reply = requests.get(url, headers=headers, timeout=timeout_s)
    return reply.status_code, dict(reply.headers), reply.content


class FhirGateway:
    """Executes configured read/search operations against the FHIR base URL.

    The HTTP layer is injectable so tests can record or fault individual
    requests; the default uses requests.
    """

    def __init__(self, config: GatewayConfig, http_get: HttpGet | None = None):
        self.config = config
        self._http_get = http_get or _requests_get

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": FHIR_JSON}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        return headers

    def _get(self, url: str) -> HttpResponse:
        timeout_s = self.config.timeout_ms / 1000.0
        headers = self._headers()
        # One retry on idempotent GET timeout, then fail.
        for attempt in (1, 2):
            try:
                return self._http_get(url, headers, timeout_s)
            except requests.Timeout:
                if attempt == 2:
                    raise Timeout(f"no response from upstream within {self.config.timeout_ms} ms (after retry)") from None
            except requests.RequestException as exc:
                raise TransportError(f"upstream connection failed: {exc.__class__.__name__}") from None
        raise AssertionError("unreachable")

    def _decode_body(self, body: bytes, url: str) -> Any:
        try:
            return json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise UpstreamError(f"upstream returned a non-FHIR body for {url}") from None

    def read(self, type: str, id: str) -> dict[str, Any]:
        """GET {base}/{Type}/{id}; returns the resource JSON on HTTP 200."""
        resource = self.config.resource(type)
        if resource is None or not resource.read_enabled:
            raise DisallowedParam(f"read is not configured for resource type {type!r}")
        url = f"{self.config.base_url}/{type}/{id}"
        status, _, body = self._get(url)
        if status in (404, 410):
            outcome = None
            try:
                outcome = operation_outcome_text(json.loads(body.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError):
                pass
            raise NotFound(outcome or f"{type}/{id} not found")
        if not 200 <= status < 300:
            raise UpstreamError(f"GET {type}/{id} answered HTTP {status}")
        return self._decode_body(body, url)

    def search(self, type: str, params: dict[str, str]) -> list[dict[str, Any]]:
        """GET {base}/{Type}?{params}, following next links; merged entries."""
        resource = self.config.resource(type)
        if resource is None or not resource.search_enabled:
            raise DisallowedParam(f"search is not configured for resource type {type!r}")
        for key in params:
            if key not in resource.search_params:
                raise DisallowedParam(f"search parameter {key!r} is not whitelisted for {type}")
        url = f"{self.config.base_url}/{type}"
        if params:
            url = f"{url}?{urlencode(params)}"
        pages: list[FhirBundle] = []
        next_url: str | None = url
        while next_url is not None:
            status, _, body = self._get(next_url)
            if not 200 <= status < 300:
                raise UpstreamError(f"search {type} answered HTTP {status}")
            page = FhirBundle.parse(self._decode_body(body, next_url))
            pages.append(page)
            next_url = page.next_url
        try:
            return merge_pages(pages)
        except TotalMismatch as exc:
            raise UpstreamError(str(exc)) from None


def build_gateway_server(
    config: GatewayConfig,
    http_get: HttpGet | None = None,
    server_name: str = "clinmcp-fhir-gateway",
    server_version: str = "0.1.0",
) -> McpServer:
    """An MCP server exposing the config's derived tools over a gateway.

    Execution failures (upstream 404, timeouts) become isError tool results;
    contract violations (bad arguments) become protocol errors.
    """
    gateway = FhirGateway(config, http_get=http_get)
    server = McpServer(server_name, server_version)

    def read_handler(resource_type: str):
        def handle(arguments: dict[str, Any]) -> ToolResult:
            id = arguments.get("id")
            if not isinstance(id, str) or not id:
                raise ToolArgumentError("argument 'id' must be a non-empty string")
            try:
                return ToolResult.text(canonical_json(gateway.read(resource_type, id)))
            except NotFound as exc:
                return ToolResult.failure(f"not found: {exc}")
            except GatewayError as exc:
                return ToolResult.failure(f"upstream failure: {exc}")

        return handle

    def search_handler(resource_type: str, whitelist: tuple[str, ...]):
        def handle(arguments: dict[str, Any]) -> ToolResult:
            params: dict[str, str] = {}
            for key, value in arguments.items():
                if key not in whitelist:
                    raise ToolArgumentError(f"search parameter {key!r} is not whitelisted for {resource_type}")
                if not isinstance(value, str):
                    raise ToolArgumentError(f"search parameter {key!r} must be a string")
                params[key] = value
            try:
                return ToolResult.text(canonical_json(gateway.search(resource_type, params)))
            except GatewayError as exc:
                return ToolResult.failure(f"upstream failure: {exc}")

        return handle

    descriptors = {d.name: d for d in derive_tools(config)}
    for resource in config.resources:
        lower = resource.type.lower()
        if resource.read_enabled:
            server.register_tool(descriptors[f"read_{lower}"], read_handler(resource.type))
        if resource.search_enabled:
            server.register_tool(descriptors[f"search_{lower}"], search_handler(resource.type, resource.search_params))
    return server
