"""MCP client: handshake, tool discovery, tool invocation.

A background reader correlates responses to in-flight requests by id, so
several threads can call tools over one connection and out-of-order
replies are matched correctly.
"""

from __future__ import annotations

import itertools
import threading
from typing import Any

from . import jsonrpc
from .jsonrpc import MessageKind
from .mcp_server import PROTOCOL_VERSION, ToolResult
from .transport import LineChannel, TransportClosed


class McpError(Exception):
    """Server answered a request with a JSON-RPC error."""

    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message
        self.data = data


class UnknownTool(McpError):
    """tools/call named a tool the server does not expose."""


class _Waiter:
    __slots__ = ("event", "reply")

    def __init__(self):
        self.event = threading.Event()
        self.reply: jsonrpc.RpcMessage | None = None


class McpClient:
    def __init__(self, channel: LineChannel, client_name: str = "clinmcp-agent", client_version: str = "0.1.0"):
        self.channel = channel
        self.client_name = client_name
        self.client_version = client_version
        self.server_info: dict[str, Any] | None = None
        self.capabilities: dict[str, Any] | None = None
        self._ids = itertools.count(1)
        self._pending: dict[int | str, _Waiter] = {}
        self._lock = threading.Lock()
        self._dead: Exception | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                frame = self.channel.read_line()
            except TransportClosed as exc:
                self._fail_all(exc)
                return
            try:
                msg = jsonrpc.decode_message(frame)
            except jsonrpc.ProtocolError:
                continue
            if msg.kind is not MessageKind.RESPONSE or msg.id is None:
                # Server-initiated traffic is outside this client's scope.
                continue
            with self._lock:
                waiter = self._pending.pop(msg.id, None)
            if waiter is not None:
                waiter.reply = msg
                waiter.event.set()

    def _fail_all(self, exc: Exception) -> None:
        with self._lock:
            self._dead = exc
            pending = list(self._pending.values())
            self._pending.clear()
        for waiter in pending:
            waiter.event.set()

    def request(self, method: str, params: Any = jsonrpc._ABSENT, timeout: float = 30.0) -> Any:
        """Send one request and return its result, raising McpError on error replies."""
        waiter = _Waiter()
        with self._lock:
            if self._dead is not None:
                raise ConnectionError(f"connection lost: {self._dead}")
            id = next(self._ids)
            self._pending[id] = waiter
        try:
            self.channel.write_line(jsonrpc.encode_message(jsonrpc.request(id, method, params)))
        except TransportClosed as exc:
            with self._lock:
                self._pending.pop(id, None)
            raise ConnectionError(f"connection lost: {exc}") from exc
        if not waiter.event.wait(timeout):
            with self._lock:
                self._pending.pop(id, None)
            raise TimeoutError(f"no response to {method} within {timeout}s")
        if waiter.reply is None:
            raise ConnectionError(f"connection lost: {self._dead}")
        reply = waiter.reply
        if reply.error is not None:
            if reply.error.code == jsonrpc.METHOD_NOT_FOUND and method == "tools/call":
                raise UnknownTool(reply.error.code, reply.error.message, reply.error.data)
            raise McpError(reply.error.code, reply.error.message, reply.error.data)
        return reply.result

    def notify(self, method: str, params: Any = jsonrpc._ABSENT) -> None:
        self.channel.write_line(jsonrpc.encode_message(jsonrpc.notification(method, params)))

    def initialize(self, timeout: float = 30.0) -> dict[str, Any]:
        result = self.request(
            "initialize",
            {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {},
                "clientInfo": {"name": self.client_name, "version": self.client_version},
            },
            timeout=timeout,
        )
        self.server_info = result.get("serverInfo")
        self.capabilities = result.get("capabilities")
        self.notify("notifications/initialized")
        return result

    def list_tools(self, timeout: float = 30.0) -> list[dict[str, Any]]:
        return self.request("tools/list", {}, timeout=timeout)["tools"]

    def call_tool(self, name: str, arguments: dict[str, Any], timeout: float = 60.0) -> ToolResult:
        result = self.request("tools/call", {"name": name, "arguments": arguments}, timeout=timeout)
        return ToolResult.from_wire(result)

    def close(self) -> None:
        self.channel.close()
