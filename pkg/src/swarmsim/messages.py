"""Message and placeholder value types plus their canonical JSON encoding.

Everything that crosses an agent boundary is either a Message (a finished
piece of content) or a Placeholder (a claim ticket for a result that is
still being computed somewhere else). Both are encoded as canonical JSON:
UTF-8, sorted keys, compact separators, so two equal payloads always
serialize to identical bytes.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional, Union

ROLES = ("system", "user", "assistant")

_SCALAR_TYPES = (str, int, float, bool)


class MalformedPayload(ValueError):
    """Bytes that do not decode into a valid Message or Placeholder."""


def _new_id() -> str:
    return str(uuid.uuid4())


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class Message:
    """Immutable unit of inter-agent communication."""

    sender: str
    role: str
    content: str
    metadata: dict = field(default_factory=dict)
    id: str = field(default_factory=_new_id)
    timestamp: int = field(default_factory=now_ms)

    def __post_init__(self):
        if not self.id:
            raise ValueError("message id must be non-empty")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        for key, value in self.metadata.items():
            if not isinstance(key, str):
                raise ValueError(f"metadata key {key!r} is not a string")
            if not isinstance(value, _SCALAR_TYPES):
                raise ValueError(
                    f"metadata value for {key!r} must be a scalar, got {type(value).__name__}"
                )


@dataclass
class Placeholder:
    """Claim ticket for a pending remote computation.

    ``cached`` starts empty and is filled exactly once by the first
    successful resolution; it must never be overwritten afterwards.
    """

    task_id: str
    host: str
    port: int
    cached: Optional[Message] = None

    def __post_init__(self):
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port!r}")


Payload = Union[Message, Placeholder]


def payload_to_jsonable(p: Payload) -> dict:
    """Plain-dict form of a payload, embeddable in larger JSON documents."""
    if isinstance(p, Message):
        return {
            "id": p.id,
            "sender": p.sender,
            "role": p.role,
            "content": p.content,
            "metadata": dict(p.metadata),
            "timestamp": p.timestamp,
        }
    if isinstance(p, Placeholder):
        obj: dict = {
            "__placeholder__": True,
            "task_id": p.task_id,
            "host": p.host,
            "port": p.port,
        }
        if p.cached is not None:
            obj["cached"] = payload_to_jsonable(p.cached)
        return obj
    raise TypeError(f"not a payload: {type(p).__name__}")


def payload_from_jsonable(obj: Any) -> Payload:
    """Inverse of payload_to_jsonable. Raises MalformedPayload on bad input."""
    if not isinstance(obj, dict):
        raise MalformedPayload(f"payload must be a JSON object, got {type(obj).__name__}")
    if obj.get("__placeholder__"):
        return _placeholder_from(obj)
    return _message_from(obj)


def _message_from(obj: dict) -> Message:
    required = {"id", "sender", "role", "content", "metadata", "timestamp"}
    missing = required - obj.keys()
    if missing:
        raise MalformedPayload(f"message missing fields: {sorted(missing)}")
    extra = obj.keys() - required
    if extra:
        raise MalformedPayload(f"message has unknown fields: {sorted(extra)}")
    if not isinstance(obj["metadata"], dict):
        raise MalformedPayload("metadata must be an object")
    for key in ("id", "sender", "role", "content"):
        if not isinstance(obj[key], str):
            raise MalformedPayload(f"{key} must be a string")
    if not isinstance(obj["timestamp"], int) or isinstance(obj["timestamp"], bool):
        raise MalformedPayload("timestamp must be an integer")
    try:
        return Message(
            id=obj["id"],
            sender=obj["sender"],
            role=obj["role"],
            content=obj["content"],
            metadata=obj["metadata"],
            timestamp=obj["timestamp"],
        )
    except ValueError as exc:
        raise MalformedPayload(str(exc)) from exc


def _placeholder_from(obj: dict) -> Placeholder:
    allowed = {"__placeholder__", "task_id", "host", "port", "cached"}
    extra = obj.keys() - allowed
    if extra:
        raise MalformedPayload(f"placeholder has unknown fields: {sorted(extra)}")
    for key in ("task_id", "host", "port"):
        if key not in obj:
            raise MalformedPayload(f"placeholder missing field: {key}")
    if not isinstance(obj["task_id"], str) or not isinstance(obj["host"], str):
        raise MalformedPayload("task_id and host must be strings")
    if not isinstance(obj["port"], int) or isinstance(obj["port"], bool):
        raise MalformedPayload("port must be an integer")
    cached = None
    if "cached" in obj:
        cached = payload_from_jsonable(obj["cached"])
        if not isinstance(cached, Message):
            raise MalformedPayload("cached value must be a message")
    try:
        return Placeholder(
            task_id=obj["task_id"], host=obj["host"], port=obj["port"], cached=cached
        )
    except ValueError as exc:
        raise MalformedPayload(str(exc)) from exc


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, compact separators, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )


def serialize(p: Payload) -> bytes:
    return canonical_json(payload_to_jsonable(p))


def deserialize(b: bytes) -> Payload:
    try:
        obj = json.loads(b.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(f"not valid JSON: {exc}") from exc
    return payload_from_jsonable(obj)
