"""Desk-scale version of the dummy-agent scaling measurement.

Each dummy agent sleeps one second per generation call instead of hitting a
real model server. Serial execution pays the full sum of sleeps; the
many-to-one server overlaps them, so a whole round costs about one agent's
latency regardless of the count.
"""

import time

from swarmsim import runtime
from swarmsim.environment import Environment
from swarmsim.game import GameRule, build_prompt, make_player_def, run_game
from swarmsim.messages import Message
from swarmsim.runtime import AgentServer, ServerConfig

N_PARALLEL = 40
N_SERIAL = 5
rule = GameRule()
prompt = build_prompt("P1", rule)


def dummy_def(name, seed):
    return make_player_def(name, prompt, rule, {"kind": "dummy", "delay": 1.0, "seed": seed})


print(f"serial baseline: {N_SERIAL} agents, one at a time")
refs = [runtime.spawn_local(dummy_def(f"serial-{i}", i)) for i in range(N_SERIAL)]
t0 = time.monotonic()
for ref in refs:
    runtime.call(ref, Message(sender="main", role="user", content="", metadata={"command": "report"}))
serial = time.monotonic() - t0
print(f"  {serial:.2f}s ({serial / N_SERIAL:.2f}s per agent; two calls per report)")

server = AgentServer(ServerConfig(port=0, mode="many_to_one", workers=N_PARALLEL + 8))
server.start()
addr = ("127.0.0.1", server.port)
refs = [
    runtime.to_dist(runtime.spawn_local(dummy_def(f"par-{i}", i)), addr) for i in range(N_PARALLEL)
]
print(f"\nparallel round: {N_PARALLEL} agents on one many-to-one server")
t0 = time.monotonic()
results = run_game(refs, rule, 1, Environment("bench"))
parallel = time.monotonic() - t0
print(f"  {parallel:.2f}s for all {len(results[0].reports)} reports")
print(f"\nextrapolation: serial would need ~{N_PARALLEL * serial / N_SERIAL:.0f}s for the same round")
server.shutdown()
