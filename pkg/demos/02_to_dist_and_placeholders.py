"""Converting a centralized workflow into a distributed one with to_dist.

Four agents run in a pipeline. The centralized version computes everything
in-process. Adding to_dist ships each agent to a server and leaves a proxy
behind; the workflow code is unchanged, but every call now returns a
placeholder immediately, so independent agents overlap in time.
"""

import time

from swarmsim import runtime
from swarmsim.messages import Message, Placeholder
from swarmsim.runtime import AgentDef, AgentServer, ServerConfig

DELAY = 0.5


def build_agents():
    return [
        runtime.spawn_local(AgentDef(name=n, kind="sleeper", params={"delay": DELAY}))
        for n in ("A", "B", "C", "D")
    ]


def pipeline(a, b, c, d):
    """B and C both consume A's output; D consumes C's."""
    msg_a = runtime.call(a, Message(sender="main", role="user", content="seed"))
    msg_b = runtime.call(b, msg_a)
    msg_c = runtime.call(c, msg_a)
    msg_d = runtime.call(d, msg_c)
    outs = [m if isinstance(m, Message) else runtime.resolve(m) for m in (msg_b, msg_d)]
    return [m.content for m in outs]


print("centralized run (everything sequential in this process):")
agents = build_agents()
t0 = time.monotonic()
central = pipeline(*agents)
central_elapsed = time.monotonic() - t0
print(f"  results {central} in {central_elapsed:.2f}s")

server = AgentServer(ServerConfig(port=0, workers=8))
server.start()
addr = ("127.0.0.1", server.port)

print("\ndistributed run (same workflow, agents moved with to_dist):")
agents = [runtime.to_dist(ref, addr) for ref in build_agents()]
t0 = time.monotonic()
distributed = pipeline(*agents)
dist_elapsed = time.monotonic() - t0
print(f"  results {distributed} in {dist_elapsed:.2f}s")

assert central == distributed, "distribution must not change results"
print(
    f"\nidentical outputs; B and C overlapped, saving {central_elapsed - dist_elapsed:.2f}s "
    f"of the {central_elapsed:.2f}s centralized time"
)
server.shutdown()
