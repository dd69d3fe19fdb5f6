"""JSON-RPC 2.0 message codec.

One message per line, UTF-8, LF terminator. Ids are kept with their JSON
type (integer 1 and string "1" are different ids). Batch arrays are not
supported and decode to InvalidRequest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Any

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

RESERVED_CODES = frozenset({PARSE_ERROR, INVALID_REQUEST, METHOD_NOT_FOUND, INVALID_PARAMS, INTERNAL_ERROR})

# Application codes live in -32000..-32099 per JSON-RPC 2.0.
APP_CODE_MAX = -32000
APP_CODE_MIN = -32099

# Request ordering violations on the MCP channel (tools/* before initialize,
# repeated initialize).
PROTOCOL_ORDER_ERROR = -32002

_ABSENT = object()


class InvalidMessage(ValueError):
    """An RpcMessage that violates the envelope invariants."""


class ProtocolError(Exception):
    """A wire-level fault, carrying the JSON-RPC error code it maps to."""

    code: int = INTERNAL_ERROR

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ParseError(ProtocolError):
    code = PARSE_ERROR


class InvalidRequest(ProtocolError):
    code = INVALID_REQUEST


class MessageKind(Enum):
    REQUEST = "request"
    RESPONSE = "response"
    NOTIFICATION = "notification"


def _valid_error_code(code: Any) -> bool:
    if type(code) is not int:
        return False
    return code in RESERVED_CODES or APP_CODE_MIN <= code <= APP_CODE_MAX


@dataclass(frozen=True)
class RpcError:
    code: int
    message: str
    data: Any = None

    def to_wire(self) -> dict[str, Any]:
        wire: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.data is not None:
            wire["data"] = self.data
        return wire


@dataclass(frozen=True)
class RpcMessage:
    kind: MessageKind
    id: int | str | None = None
    method: str | None = None
    params: Any = _ABSENT
    result: Any = _ABSENT
    error: RpcError | None = None

    @property
    def has_params(self) -> bool:
        return self.params is not _ABSENT

    @property
    def has_result(self) -> bool:
        return self.result is not _ABSENT


def request(id: int | str, method: str, params: Any = _ABSENT) -> RpcMessage:
    return RpcMessage(MessageKind.REQUEST, id=id, method=method, params=params)


def notification(method: str, params: Any = _ABSENT) -> RpcMessage:
    return RpcMessage(MessageKind.NOTIFICATION, method=method, params=params)


def response(id: int | str | None, result: Any = _ABSENT, error: RpcError | None = None) -> RpcMessage:
    return RpcMessage(MessageKind.RESPONSE, id=id, result=result, error=error)


def error_response(id: int | str | None, code: int, message: str, data: Any = None) -> RpcMessage:
    return response(id, error=RpcError(code, message, data))


def _valid_id(value: Any) -> bool:
    # bool is an int subclass; exclude it explicitly.
    return (type(value) is int) or isinstance(value, str)


def check_invariants(msg: RpcMessage) -> None:
    """Raise InvalidMessage unless msg satisfies the envelope invariants.

    - Request: id (int or str) and method; no result/error.
    - Response: id member (null allowed only alongside error, for replies to
      undecodable requests) and exactly one of result/error.
    - Notification: method; no id, no result/error.
    - params, when present, is an object or array.
    - error codes are reserved JSON-RPC codes or in the application range.
    """
    if msg.kind is MessageKind.REQUEST:
        if not _valid_id(msg.id):
            raise InvalidMessage("request id must be an integer or string")
        if not isinstance(msg.method, str) or not msg.method:
            raise InvalidMessage("request method must be a non-empty string")
        if msg.has_result or msg.error is not None:
            raise InvalidMessage("request cannot carry result or error")
    elif msg.kind is MessageKind.NOTIFICATION:
        if msg.id is not None:
            raise InvalidMessage("notification cannot carry an id")
        if not isinstance(msg.method, str) or not msg.method:
            raise InvalidMessage("notification method must be a non-empty string")
        if msg.has_result or msg.error is not None:
            raise InvalidMessage("notification cannot carry result or error")
    elif msg.kind is MessageKind.RESPONSE:
        if msg.method is not None or msg.has_params:
            raise InvalidMessage("response cannot carry method or params")
        if msg.has_result == (msg.error is not None):
            raise InvalidMessage("response must carry exactly one of result or error")
        if msg.id is None:
            if msg.error is None:
                raise InvalidMessage("null response id is only valid on error responses")
        elif not _valid_id(msg.id):
            raise InvalidMessage("response id must be an integer, string, or null")
        if msg.error is not None:
            if not isinstance(msg.error.message, str):
                raise InvalidMessage("error message must be a string")
            if not _valid_error_code(msg.error.code):
                raise InvalidMessage(f"error code {msg.error.code!r} outside reserved/application ranges")
    else:  # pragma: no cover - enum is closed
        raise InvalidMessage(f"unknown message kind {msg.kind!r}")
    if msg.has_params and not isinstance(msg.params, (dict, list)):
        raise InvalidMessage("params must be an object or array")


def encode_message(msg: RpcMessage) -> bytes:
    """Serialize one message as a single LF-terminated JSON line.

    json.dumps escapes all control characters, so the encoded line never
    contains an interior newline byte.
    """
    check_invariants(msg)
    wire: dict[str, Any] = {"jsonrpc": "2.0"}
    if msg.kind is MessageKind.RESPONSE or msg.kind is MessageKind.REQUEST:
        wire["id"] = msg.id
    if msg.method is not None:
        wire["method"] = msg.method
    if msg.has_params:
        wire["params"] = msg.params
    if msg.has_result:
        wire["result"] = msg.result
    if msg.error is not None:
        wire["error"] = msg.error.to_wire()
    return json.dumps(wire, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"


_ENVELOPE_MEMBERS = {"jsonrpc", "id", "method", "params", "result", "error"}
_ERROR_MEMBERS = {"code", "message", "data"}


def decode_message(line: bytes | str) -> RpcMessage:
    """Parse one newline-stripped transport frame into an RpcMessage.

    Raises ParseError (-32700) on malformed JSON, InvalidRequest (-32600)
    on a structurally invalid envelope (including batch arrays).
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"frame is not valid UTF-8: {exc}") from None
    try:
        wire = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}") from None
    if isinstance(wire, list):
        raise InvalidRequest("batch messages are not supported")
    if not isinstance(wire, dict):
        raise InvalidRequest("message must be a JSON object")

    unknown = set(wire) - _ENVELOPE_MEMBERS
    if unknown:
        raise InvalidRequest(f"unknown envelope members: {sorted(unknown)}")
    if wire.get("jsonrpc") != "2.0":
        raise InvalidRequest('message must carry "jsonrpc": "2.0"')

    has_id = "id" in wire
    has_method = "method" in wire
    has_params = "params" in wire
    has_result = "result" in wire
    has_error = "error" in wire

    if has_method:
        if has_result or has_error:
            raise InvalidRequest("request cannot carry result or error")
        method = wire["method"]
        if not isinstance(method, str) or not method:
            raise InvalidRequest("method must be a non-empty string")
        params = wire["params"] if has_params else _ABSENT
        if has_params and not isinstance(params, (dict, list)):
            raise InvalidRequest("params must be an object or array")
        if has_id:
            if not _valid_id(wire["id"]):
                raise InvalidRequest("request id must be an integer or string")
            msg = RpcMessage(MessageKind.REQUEST, id=wire["id"], method=method, params=params)
        else:
            msg = RpcMessage(MessageKind.NOTIFICATION, method=method, params=params)
    else:
        if not has_id:
            raise InvalidRequest("message carries neither method nor id")
        if has_params:
            raise InvalidRequest("response cannot carry params")
        if has_result == has_error:
            raise InvalidRequest("response must carry exactly one of result or error")
        id_value = wire["id"]
        if id_value is not None and not _valid_id(id_value):
            raise InvalidRequest("response id must be an integer, string, or null")
        error = None
        if has_error:
            raw_error = wire["error"]
            if not isinstance(raw_error, dict):
                raise InvalidRequest("error member must be an object")
            if set(raw_error) - _ERROR_MEMBERS:
                raise InvalidRequest("error object carries unknown members")
            if not isinstance(raw_error.get("message"), str):
                raise InvalidRequest("error message must be a string")
            if not _valid_error_code(raw_error.get("code")):
                raise InvalidRequest("error code outside reserved/application ranges")
            error = RpcError(raw_error["code"], raw_error["message"], raw_error.get("data"))
        msg = RpcMessage(
            MessageKind.RESPONSE,
            id=id_value,
            result=wire["result"] if has_result else _ABSENT,
            error=error,
        )
    try:
        check_invariants(msg)
    except InvalidMessage as exc:
        raise InvalidRequest(str(exc)) from None
    return msg
