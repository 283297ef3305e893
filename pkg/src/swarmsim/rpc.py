"""Framed request/response protocol over TCP.

Wire format: each frame is a 4-byte big-endian unsigned length N followed by
N bytes of canonical UTF-8 JSON. A request body is
{"request_id", "kind", "payload"}; a response body is
{"request_id", "ok", "payload" | "error"}.

Clients keep one persistent connection per server address and pipeline
requests on it, matching responses to callers by request_id, so thousands of
agent calls can share a single socket.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

from .messages import MalformedPayload, canonical_json

_HEADER = struct.Struct(">I")

MAX_FRAME = 2**32 - 1

REQUEST_KINDS = (
    "create_agent",
    "call_agent",
    "resolve_task",
    "stop_agent",
    "list_agents",
    "server_status",
)

# Machine-readable error codes carried in failed responses.
ERROR_CODES = (
    "AGENT_NOT_FOUND",
    "TASK_NOT_FOUND",
    "TIMEOUT",
    "BAD_FRAME",
    "CAPACITY_EXCEEDED",
    "INTERNAL",
)

# Generation work may be slow; control operations must fail fast.
CALL_TIMEOUT = 30.0
CONTROL_TIMEOUT = 5.0


class FrameTooLarge(ValueError):
    """Body does not fit in a 32-bit length prefix."""


class TruncatedFrame(ConnectionError):
    """Stream ended in the middle of a frame: peer crash or network fault."""


class RpcTimeout(TimeoutError):
    """No response arrived within the caller's deadline."""


class RpcError(RuntimeError):
    """A response carrying one of the fixed error codes."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


def encode_frame(body: bytes) -> bytes:
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"body of {len(body)} bytes exceeds frame limit")
    return _HEADER.pack(len(body)) + body


def decode_frame(stream) -> bytes:
    """Read one frame from a stream exposing read(n); returns the body.

    Leaves the stream positioned at the start of the next frame.
    """
    header = _read_exact(stream, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    return _read_exact(stream, length)


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedFrame(f"stream ended with {remaining} of {n} bytes unread")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


@dataclass
class RpcRequest:
    kind: str
    payload: dict = field(default_factory=dict)
    request_id: str = field(default_factory=lambda: str(uuid.uuid4()))

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise ValueError(f"unknown request kind: {self.kind!r}")

    def to_bytes(self) -> bytes:
        return canonical_json(
            {"request_id": self.request_id, "kind": self.kind, "payload": self.payload}
        )

    @classmethod
    def from_bytes(cls, body: bytes) -> "RpcRequest":
        obj = _load_json(body)
        for key in ("request_id", "kind", "payload"):
            if key not in obj:
                raise MalformedPayload(f"request missing field: {key}")
        if obj["kind"] not in REQUEST_KINDS:
            raise MalformedPayload(f"unknown request kind: {obj['kind']!r}")
        if not isinstance(obj["payload"], dict):
            raise MalformedPayload("request payload must be an object")
        return cls(kind=obj["kind"], payload=obj["payload"], request_id=obj["request_id"])


@dataclass
class RpcResponse:
    request_id: str
    ok: bool
    payload: Optional[dict] = None
    error: Optional[dict] = None

    def __post_init__(self):
        if self.ok and (self.payload is None or self.error is not None):
            raise ValueError("ok response must carry payload and no error")
        if not self.ok and (self.error is None or self.payload is not None):
            raise ValueError("failed response must carry error and no payload")

    @classmethod
    def success(cls, request_id: str, payload: dict) -> "RpcResponse":
        return cls(request_id=request_id, ok=True, payload=payload)

    @classmethod
    def failure(cls, request_id: str, code: str, message: str = "") -> "RpcResponse":
        return cls(request_id=request_id, ok=False, error={"code": code, "message": message})

    def to_bytes(self) -> bytes:
        obj: dict[str, Any] = {"request_id": self.request_id, "ok": self.ok}
        if self.ok:
            obj["payload"] = self.payload
        else:
            obj["error"] = self.error
        return canonical_json(obj)

    @classmethod
    def from_bytes(cls, body: bytes) -> "RpcResponse":
        obj = _load_json(body)
        for key in ("request_id", "ok"):
            if key not in obj:
                raise MalformedPayload(f"response missing field: {key}")
        ok = obj["ok"]
        if not isinstance(ok, bool):
            raise MalformedPayload("ok must be a boolean")
        if ok:
            if "payload" not in obj or "error" in obj:
                raise MalformedPayload("ok response must carry payload only")
            return cls(request_id=obj["request_id"], ok=True, payload=obj["payload"])
        if "error" not in obj or "payload" in obj:
            raise MalformedPayload("failed response must carry error only")
        error = obj["error"]
        if not isinstance(error, dict) or "code" not in error:
            raise MalformedPayload("error must be an object with a code")
        return cls(request_id=obj["request_id"], ok=False, error=error)

    def raise_for_error(self) -> dict:
        """Return the payload of a successful response, raise RpcError otherwise."""
        if self.ok:
            return self.payload or {}
        assert self.error is not None
        raise RpcError(self.error.get("code", "INTERNAL"), self.error.get("message", ""))


def _load_json(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedPayload("frame body must be a JSON object")
    return obj


class _Pending:
    __slots__ = ("event", "response", "failure")

    def __init__(self):
        self.event = threading.Event()
        self.response: Optional[RpcResponse] = None
        self.failure: Optional[BaseException] = None


class RpcClient:
    """Persistent pipelined connection to one server address.

    Many threads may call concurrently; responses are matched to callers by
    request_id. A response with an id nobody is waiting for means the peer is
    confused, so the connection is poisoned and every waiter gets
    MalformedPayload.
    """

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self.host = host
        self.port = port
        self.connect_timeout = connect_timeout
        self.request_count = 0
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._rfile = None
        self._pending: dict[str, _Pending] = {}

    def call(self, req: RpcRequest, timeout: float = CALL_TIMEOUT) -> RpcResponse:
        slot = _Pending()
        with self._lock:
            self._ensure_connected()
            self._pending[req.request_id] = slot
            self.request_count += 1
            try:
                self._sock.sendall(encode_frame(req.to_bytes()))
            except OSError:
                self._pending.pop(req.request_id, None)
                self._teardown()
                raise
        if not slot.event.wait(timeout):
            with self._lock:
                self._pending.pop(req.request_id, None)
            raise RpcTimeout(f"no response from {self.host}:{self.port} within {timeout}s")
        if slot.failure is not None:
            raise slot.failure
        assert slot.response is not None
        return slot.response

    def close(self):
        with self._lock:
            self._teardown()

    # -- internals ---------------------------------------------------------

    def _ensure_connected(self):
        if self._sock is not None:
            return
        sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout)
        sock.settimeout(None)
        self._sock = sock
        self._rfile = sock.makefile("rb")
        reader = threading.Thread(target=self._read_loop, args=(self._rfile,), daemon=True)
        reader.start()

    def _read_loop(self, rfile):
        try:
            while True:
                body = decode_frame(rfile)
                resp = RpcResponse.from_bytes(body)
                with self._lock:
                    slot = self._pending.pop(resp.request_id, None)
                    if slot is None:
                        # Nobody asked for this id: poison the connection.
                        self._fail_all(
                            MalformedPayload(
                                f"response for unknown request_id {resp.request_id!r}"
                            )
                        )
                        self._teardown()
                        return
                slot.response = resp
                slot.event.set()
        except (TruncatedFrame, MalformedPayload, OSError) as exc:
            with self._lock:
                if self._rfile is rfile:  # ignore stale readers after reconnect
                    self._fail_all(exc)
                    self._teardown()

    def _fail_all(self, exc: BaseException):
        for slot in self._pending.values():
            slot.failure = exc
            slot.event.set()
        self._pending.clear()

    def _teardown(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._rfile = None


class ClientPool:
    """Process-wide cache of RpcClients keyed by address."""

    def __init__(self):
        self._lock = threading.Lock()
        self._clients: dict[tuple[str, int], RpcClient] = {}

    def get(self, host: str, port: int) -> RpcClient:
        with self._lock:
            key = (host, port)
            client = self._clients.get(key)
            if client is None:
                client = RpcClient(host, port)
                self._clients[key] = client
            return client

    def request_count(self, host: str, port: int) -> int:
        with self._lock:
            client = self._clients.get((host, port))
            return client.request_count if client else 0

    def close_all(self):
        with self._lock:
            for client in self._clients.values():
                client.close()
            self._clients.clear()


pool = ClientPool()


def rpc_call(addr: tuple[str, int], req: RpcRequest, timeout: float = CALL_TIMEOUT) -> RpcResponse:
    """Send one request to addr and return the matching response.

    The request is transmitted exactly once; Timeout / ConnectionRefused /
    MalformedPayload all mean the target should be treated as unavailable.
    """
    host, port = addr
    return pool.get(host, port).call(req, timeout)
