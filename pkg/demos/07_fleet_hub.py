"""The lifecycle hub: registration, heartbeats, and remote agent control.

Two agent servers register with a hub and push heartbeats carrying resource
metrics. The hub's HTTP API creates and stops agents on them and serves the
same endpoints the browser dashboard polls.
"""

import time

from swarmsim.hub import HeartbeatReporter, HubServer, hub_request
from swarmsim.runtime import AgentDef, AgentServer, ServerConfig

hub = HubServer(host="127.0.0.1", port=0)
hub.start()
print("hub at", hub.url)

servers, reporters = [], []
for i in range(2):
    server = AgentServer(ServerConfig(port=0, capacity=32, workers=8))
    server.start()
    reporter = HeartbeatReporter(hub.url, server, "127.0.0.1", interval=0.5)
    reporter.start()
    servers.append(server)
    reporters.append(reporter)

time.sleep(1.2)
records = hub_request(hub.url, "GET", "/api/servers")["data"]
for r in records:
    print(
        f"  {r['addr']}  status={r['status']}  agents={r['agent_count']}  "
        f"cpu={r['metrics'].get('cpu_percent', 0):.1f}%  mem={r['metrics'].get('mem_bytes', 0) // 1024} KiB"
    )

server_id = records[0]["server_id"]
created = hub_request(
    hub.url, "POST", f"/api/servers/{server_id}/agents", AgentDef(name="worker", kind="echo").to_jsonable()
)
agent_id = created["data"]["agent_id"]
print("\ncreated agent", agent_id)
print("listed:", hub_request(hub.url, "GET", f"/api/servers/{server_id}/agents")["data"])

hub_request(hub.url, "DELETE", f"/api/servers/{server_id}/agents/{agent_id}")
print("stopped; listed:", hub_request(hub.url, "GET", f"/api/servers/{server_id}/agents")["data"])

sim = hub_request(hub.url, "POST", "/api/simulations", {"agents": 50, "rounds": 4, "seed": 3})
sim_id = sim["data"]["sim_id"]
while hub.hub.simulation_status(sim_id) == "running":
    time.sleep(0.1)
rounds = hub_request(hub.url, "GET", f"/api/simulations/{sim_id}/rounds")["data"]
print("\nhub-run simulation rounds:")
for r in rounds:
    print(f"  round {r['round_index']}: avg={r['avg']:.3f} target={r['target']:.3f}")

for reporter in reporters:
    reporter.stop()
for server in servers:
    server.shutdown()
hub.shutdown()
