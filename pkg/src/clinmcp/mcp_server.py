"""MCP server: lifecycle handshake, tool listing, tool invocation.

Speaks JSON-RPC 2.0 over a LineChannel. Methods: initialize,
notifications/initialized, tools/list, tools/call. Only the tools
capability is exposed.

Ordering rules per connection: the first initialize must complete before
tools/list or tools/call are accepted; a second initialize is rejected.
Violations answer with application code -32002.
"""

from __future__ import annotations

import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

from . import jsonrpc
from .jsonrpc import MessageKind, RpcMessage
from .transport import LineChannel, TransportClosed

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "2024-11-05"

_TOOL_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")


class ToolArgumentError(ValueError):
    """Tool arguments violate the tool's declared contract (maps to -32602)."""


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    input_schema: dict[str, Any]

    def __post_init__(self):
        if not _TOOL_NAME_RE.match(self.name):
            raise ValueError(f"tool name {self.name!r} must match [a-z][a-z0-9_]*")
        if self.input_schema.get("type") != "object":
            raise ValueError(f"tool {self.name!r} inputSchema must declare type object")

    def to_wire(self) -> dict[str, Any]:
        return {"name": self.name, "description": self.description, "inputSchema": self.input_schema}


@dataclass(frozen=True)
class ToolResult:
    content: tuple[dict[str, Any], ...]
    is_error: bool = False

    def __post_init__(self):
        if not self.content:
            raise ValueError("tool result content must be non-empty")

    @classmethod
    def text(cls, text: str) -> "ToolResult":
        return cls(content=({"type": "text", "text": text},))

    @classmethod
    def failure(cls, diagnostic: str) -> "ToolResult":
        return cls(content=({"type": "text", "text": diagnostic},), is_error=True)

    @property
    def first_text(self) -> str:
        return self.content[0]["text"]

    def to_wire(self) -> dict[str, Any]:
        return {"content": [dict(block) for block in self.content], "isError": self.is_error}

    @classmethod
    def from_wire(cls, wire: dict[str, Any]) -> "ToolResult":
        return cls(content=tuple(wire["content"]), is_error=bool(wire.get("isError", False)))


ToolHandler = Callable[[dict[str, Any]], ToolResult]


@dataclass
class _Tool:
    descriptor: ToolDescriptor
    handler: ToolHandler


class McpServer:
    """Tool registry plus per-connection protocol servicing.

    The registry is fixed before serving; connections may run concurrently
    and each gets its own lifecycle state.
    """

    def __init__(self, name: str, version: str, max_workers: int = 8):
        self.name = name
        self.version = version
        self._tools: dict[str, _Tool] = {}
        self._max_workers = max_workers

    def register_tool(self, descriptor: ToolDescriptor, handler: ToolHandler) -> None:
        if descriptor.name in self._tools:
            raise ValueError(f"duplicate tool name {descriptor.name!r}")
        self._tools[descriptor.name] = _Tool(descriptor, handler)

    @property
    def tool_names(self) -> list[str]:
        return list(self._tools)

    def serve_connection(self, channel: LineChannel) -> None:
        """Service one connection until EOF. Blocks the calling thread."""
        _Connection(self, channel).run()

    def serve_in_thread(self, channel: LineChannel) -> threading.Thread:
        thread = threading.Thread(target=self.serve_connection, args=(channel,), daemon=True)
        thread.start()
        return thread


class _Connection:
    def __init__(self, server: McpServer, channel: LineChannel):
        self.server = server
        self.channel = channel
        self.initialized = False
        self.client_ready = False
        self.pool = ThreadPoolExecutor(max_workers=server._max_workers)

    def run(self) -> None:
        try:
            while True:
                try:
                    frame = self.channel.read_line()
                except TransportClosed:
                    break
                self._handle_frame(frame)
        finally:
            self.pool.shutdown(wait=True)
            self.channel.close()

    def _send(self, msg: RpcMessage) -> None:
        try:
            self.channel.write_line(jsonrpc.encode_message(msg))
        except TransportClosed:
            log.debug("connection closed while writing response")

    def _handle_frame(self, frame: bytes) -> None:
        try:
            msg = jsonrpc.decode_message(frame)
        except jsonrpc.ProtocolError as exc:
            self._send(jsonrpc.error_response(None, exc.code, exc.message))
            return

        if msg.kind is MessageKind.NOTIFICATION:
            if msg.method == "notifications/initialized":
                self.client_ready = True
            return
        if msg.kind is MessageKind.RESPONSE:
            log.debug("ignoring unexpected response frame with id %r", msg.id)
            return

        # The ordering gate runs here, in arrival order; only the tool body
        # itself is allowed off-thread.
        method = msg.method
        if method == "initialize":
            self._send(self._handle_initialize(msg))
        elif method == "tools/list":
            self._send(self._handle_tools_list(msg))
        elif method == "tools/call":
            self._handle_tools_call(msg)
        else:
            self._send(jsonrpc.error_response(msg.id, jsonrpc.METHOD_NOT_FOUND, f"method not found: {method}"))

    def _handle_initialize(self, msg: RpcMessage) -> RpcMessage:
        if self.initialized:
            return jsonrpc.error_response(msg.id, jsonrpc.PROTOCOL_ORDER_ERROR, "already initialized")
        params = msg.params if msg.has_params and isinstance(msg.params, dict) else {}
        version = params.get("protocolVersion")
        if version != PROTOCOL_VERSION:
            return jsonrpc.error_response(
                msg.id,
                jsonrpc.INVALID_REQUEST,
                f"unsupported protocol version {version!r}; this server speaks {PROTOCOL_VERSION}",
            )
        self.initialized = True
        return jsonrpc.response(
            msg.id,
            result={
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {}},
                "serverInfo": {"name": self.server.name, "version": self.server.version},
            },
        )

    def _require_initialized(self, msg: RpcMessage) -> RpcMessage | None:
        if not self.initialized:
            return jsonrpc.error_response(
                msg.id, jsonrpc.PROTOCOL_ORDER_ERROR, f"{msg.method} received before initialize"
            )
        return None

    def _handle_tools_list(self, msg: RpcMessage) -> RpcMessage:
        rejection = self._require_initialized(msg)
        if rejection is not None:
            return rejection
        tools = [tool.descriptor.to_wire() for tool in self.server._tools.values()]
        return jsonrpc.response(msg.id, result={"tools": tools})

    def _handle_tools_call(self, msg: RpcMessage) -> None:
        rejection = self._require_initialized(msg)
        if rejection is not None:
            self._send(rejection)
            return
        params = msg.params if msg.has_params and isinstance(msg.params, dict) else {}
        name = params.get("name")
        arguments = params.get("arguments", {})
        if not isinstance(name, str):
            self._send(jsonrpc.error_response(msg.id, jsonrpc.INVALID_PARAMS, "tools/call requires a string name"))
            return
        if not isinstance(arguments, dict):
            self._send(jsonrpc.error_response(msg.id, jsonrpc.INVALID_PARAMS, "arguments must be an object"))
            return
        tool = self.server._tools.get(name)
        if tool is None:
            self._send(jsonrpc.error_response(msg.id, jsonrpc.METHOD_NOT_FOUND, f"unknown tool: {name}"))
            return
        self.pool.submit(self._run_tool, msg.id, tool, arguments)

    def _run_tool(self, id: int | str, tool: _Tool, arguments: dict[str, Any]) -> None:
        try:
            result = tool.handler(arguments)
        except ToolArgumentError as exc:
            self._send(jsonrpc.error_response(id, jsonrpc.INVALID_PARAMS, str(exc)))
            return
        except Exception:
            log.exception("tool %s raised", tool.descriptor.name)
            self._send(jsonrpc.error_response(id, jsonrpc.INTERNAL_ERROR, f"tool {tool.descriptor.name} failed internally"))
            return
        self._send(jsonrpc.response(id, result=result.to_wire()))
