"""swarmsim: distributed actor-based multi-agent simulation runtime.

Core pieces: immutable messages and placeholders (messages), a framed RPC
protocol (rpc), mailbox-serialized agents with local and remote execution
(runtime), shared-state environments with listeners (environment),
population sampling and background generation (population), pluggable
generation backends (backends), the guess-the-fraction-of-the-average game
harness (game), and the fleet lifecycle hub (hub).
"""

from .messages import MalformedPayload, Message, Payload, Placeholder, deserialize, serialize
from .runtime import (
    AgentDef,
    AgentRef,
    AgentServer,
    ServerConfig,
    call,
    register_agent_kind,
    resolve,
    spawn_local,
    stop,
    to_dist,
)

__all__ = [
    "AgentDef",
    "AgentRef",
    "AgentServer",
    "MalformedPayload",
    "Message",
    "Payload",
    "Placeholder",
    "ServerConfig",
    "call",
    "deserialize",
    "register_agent_kind",
    "resolve",
    "serialize",
    "spawn_local",
    "stop",
    "to_dist",
]

__version__ = "0.1.0"
