import random
import re
import subprocess
import sys
import threading

import pytest

from swarmsim import runtime
from swarmsim.messages import Message
from swarmsim.runtime import Agent, AgentServer, ServerConfig, register_agent_kind

_LISTEN_RE = re.compile(r"listening on [\w.\-]+:(\d+)")


def spawn_agent_server_process(capacity=256, workers=64, mode="many-to-one", hub=None):
    """Start an agent-server subprocess on an ephemeral port.

    Binding :0 and parsing the reported port avoids the probe-then-rebind
    race of picking a "free" port up front. Returns (process, port).
    """
    cmd = [
        sys.executable, "-m", "swarmsim.cli", "agent-server",
        "--listen", "127.0.0.1:0",
        "--mode", mode,
        "--capacity", str(capacity),
        "--workers", str(workers),
    ]
    if hub:
        cmd += ["--hub", hub]
    proc = subprocess.Popen(
        cmd, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True
    )
    while True:
        line = proc.stderr.readline()
        if not line:
            raise RuntimeError(f"agent-server exited early with {proc.poll()}")
        match = _LISTEN_RE.search(line)
        if match:
            return proc, int(match.group(1))


@register_agent_kind("recorder")
class RecorderAgent(Agent):
    """Stores every received message; used to observe notification delivery."""

    def __init__(self, name, params):
        super().__init__(name, params)
        self.received = []
        self._lock = threading.Lock()

    def reply(self, inputs):
        with self._lock:
            self.received.extend(inputs)
        return Message(sender=self.name, role="assistant", content="", metadata={"ack": True})


@register_agent_kind("reentrancy_probe")
class ReentrancyProbe(Agent):
    """Asserts that no two replies ever overlap; counts processed calls."""

    def __init__(self, name, params):
        super().__init__(name, params)
        self.active = 0
        self.max_active = 0
        self.processed = 0
        self._lock = threading.Lock()

    def reply(self, inputs):
        with self._lock:
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        # A tiny pause widens the race window if serialization were broken.
        import time

        time.sleep(0.001)
        with self._lock:
            self.active -= 1
            self.processed += 1
        return Message(sender=self.name, role="assistant", content=str(self.processed))


@register_agent_kind("transform")
class TransformAgent(Agent):
    """Pure function on inputs: deterministic tag over sorted input contents."""

    def reply(self, inputs):
        parts = ",".join(sorted(m.content for m in inputs))
        return Message(sender=self.name, role="assistant", content=f"{self.name}({parts})")


@pytest.fixture
def server_factory():
    """Start AgentServers on ephemeral ports; shuts them all down afterwards."""
    servers = []

    def start(mode="many_to_one", capacity=1024, workers=32) -> AgentServer:
        server = AgentServer(
            ServerConfig(host="127.0.0.1", port=0, mode=mode, capacity=capacity, workers=workers)
        )
        server.start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.shutdown()


@pytest.fixture
def rng():
    return random.Random(20240817)
