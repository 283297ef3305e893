import time

import pytest

from swarmsim import runtime
from swarmsim.hub import HeartbeatReporter, HubServer, hub_request
from swarmsim.messages import Message
from swarmsim.runtime import AgentDef, AgentNotFound, AgentRef


@pytest.fixture
def hub():
    server = HubServer(host="127.0.0.1", port=0)
    server.start()
    yield server
    server.shutdown()


def _register(hub, addr="127.0.0.1:7001", mode="many_to_one", capacity=8):
    result = hub_request(hub.url, "POST", "/api/register", {"addr": addr, "mode": mode, "capacity": capacity})
    assert result["ok"], result
    return result["data"]["server_id"]


def test_register_then_listed_alive(hub):
    server_id = _register(hub)
    servers = hub_request(hub.url, "GET", "/api/servers")["data"]
    assert len(servers) == 1
    record = servers[0]
    assert record["server_id"] == server_id
    assert record["addr"] == "127.0.0.1:7001"
    assert record["status"] == "alive"
    assert record["capacity"] == 8


def test_duplicate_address_rejected(hub):
    _register(hub)
    result = hub_request(hub.url, "POST", "/api/register", {"addr": "127.0.0.1:7001", "mode": "many_to_one", "capacity": 8})
    assert not result["ok"]
    assert result["error"]["code"] == "DUPLICATE_ADDRESS"


def test_heartbeat_updates_record(hub):
    server_id = _register(hub)
    result = hub_request(
        hub.url,
        "POST",
        "/api/heartbeat",
        {"server_id": server_id, "agent_count": 5, "metrics": {"cpu_percent": 12.5, "mem_bytes": 1000, "uptime_s": 3}},
    )
    assert result["ok"]
    record = hub_request(hub.url, "GET", "/api/servers")["data"][0]
    assert record["agent_count"] == 5
    assert record["metrics"]["cpu_percent"] == 12.5


def test_heartbeat_for_unknown_server(hub):
    result = hub_request(hub.url, "POST", "/api/heartbeat", {"server_id": "ghost", "agent_count": 0, "metrics": {}})
    assert not result["ok"]
    assert result["error"]["code"] == "UNKNOWN_SERVER"


def test_status_derives_from_heartbeat_age_and_is_reversible(hub):
    server_id = _register(hub)
    record = hub.hub._servers[server_id]

    record.last_heartbeat = time.time() - 15
    assert hub.hub.servers()[0]["status"] == "stale"
    record.last_heartbeat = time.time() - 31
    assert hub.hub.servers()[0]["status"] == "dead"
    # A resumed heartbeat brings it straight back.
    hub.hub.heartbeat(server_id, 0, {})
    assert hub.hub.servers()[0]["status"] == "alive"


def test_dead_server_address_can_reregister(hub):
    old_id = _register(hub)
    hub.hub._servers[old_id].last_heartbeat = time.time() - 100
    new_id = _register(hub)
    assert new_id != old_id
    servers = hub.hub.servers()
    assert len(servers) == 1 and servers[0]["server_id"] == new_id


def test_metric_history_is_bounded(hub):
    server_id = _register(hub)
    for i in range(1005):
        hub.hub.heartbeat(server_id, 0, {"cpu_percent": float(i)})
    assert len(hub.hub._metric_history[server_id]) == 1000


# -- remote agent control over the API ----------------------------------------------


def test_create_list_call_stop_agent_through_hub(hub, server_factory):
    agent_server = server_factory()
    server_id = _register(hub, addr=f"127.0.0.1:{agent_server.port}")

    created = hub_request(
        hub.url,
        "POST",
        f"/api/servers/{server_id}/agents",
        AgentDef(name="worker", kind="echo").to_jsonable(),
    )
    assert created["ok"], created
    agent_id = created["data"]["agent_id"]

    listed = hub_request(hub.url, "GET", f"/api/servers/{server_id}/agents")["data"]
    assert [a["agent_id"] for a in listed] == [agent_id]
    assert listed[0]["kind"] == "echo"

    ref = AgentRef(agent_id=agent_id, host="127.0.0.1", port=agent_server.port)
    reply = runtime.resolve(runtime.call(ref, Message(sender="t", role="user", content="ping")))
    assert reply.content == "ping"

    deleted = hub_request(hub.url, "DELETE", f"/api/servers/{server_id}/agents/{agent_id}")
    assert deleted["ok"]
    with pytest.raises(AgentNotFound):
        runtime.call(ref, Message(sender="t", role="user", content="again"))

    second = hub_request(hub.url, "DELETE", f"/api/servers/{server_id}/agents/{agent_id}")
    assert not second["ok"]
    assert second["error"]["code"] == "AGENT_NOT_FOUND"


def test_create_agent_on_dead_server(hub):
    server_id = _register(hub, addr="127.0.0.1:7999")
    hub.hub._servers[server_id].last_heartbeat = time.time() - 100
    result = hub_request(
        hub.url, "POST", f"/api/servers/{server_id}/agents", AgentDef(name="x", kind="echo").to_jsonable()
    )
    assert not result["ok"]
    assert result["error"]["code"] == "SERVER_DEAD"


def test_create_agent_past_capacity_surfaces_code(hub, server_factory):
    agent_server = server_factory(capacity=1)
    server_id = _register(hub, addr=f"127.0.0.1:{agent_server.port}", capacity=1)
    first = hub_request(
        hub.url, "POST", f"/api/servers/{server_id}/agents", AgentDef(name="a", kind="echo").to_jsonable()
    )
    assert first["ok"]
    second = hub_request(
        hub.url, "POST", f"/api/servers/{server_id}/agents", AgentDef(name="b", kind="echo").to_jsonable()
    )
    assert not second["ok"]
    assert second["error"]["code"] == "CAPACITY_EXCEEDED"


# -- heartbeat reporter ---------------------------------------------------------------


def test_reporter_registers_and_pushes_metrics(hub, server_factory):
    agent_server = server_factory()
    reporter = HeartbeatReporter(hub.url, agent_server, "127.0.0.1", interval=0.1)
    reporter.start()
    try:
        time.sleep(0.4)
        record = hub_request(hub.url, "GET", "/api/servers")["data"][0]
        assert record["status"] == "alive"
        assert record["metrics"]["uptime_s"] >= 0
        assert record["metrics"]["mem_bytes"] > 0
    finally:
        reporter.stop()


def test_reporter_reregisters_after_hub_restart(server_factory):
    first_hub = HubServer(host="127.0.0.1", port=0)
    first_hub.start()
    port = first_hub.port
    agent_server = server_factory()
    reporter = HeartbeatReporter(first_hub.url, agent_server, "127.0.0.1", interval=0.1)
    reporter.start()
    try:
        time.sleep(0.3)
        assert len(hub_request(first_hub.url, "GET", "/api/servers")["data"]) == 1
        first_hub.shutdown()
        second_hub = HubServer(host="127.0.0.1", port=port)
        second_hub.start()
        deadline = time.time() + 3.0
        while time.time() < deadline:
            servers = hub_request(second_hub.url, "GET", "/api/servers")["data"]
            if servers:
                break
            time.sleep(0.05)
        assert servers, "server did not re-register after hub restart"
        second_hub.shutdown()
    finally:
        reporter.stop()


# -- simulations ------------------------------------------------------------------------


def test_simulation_runs_and_reports_rounds(hub):
    started = hub_request(
        hub.url,
        "POST",
        "/api/simulations",
        {"agents": 30, "rounds": 4, "ratio": [2, 3], "seed": 11},
    )
    assert started["ok"]
    sim_id = started["data"]["sim_id"]
    deadline = time.time() + 30
    rounds = []
    while time.time() < deadline:
        if hub.hub.simulation_status(sim_id) == "done":
            rounds = hub_request(hub.url, "GET", f"/api/simulations/{sim_id}/rounds")["data"]
            break
        time.sleep(0.1)
    assert len(rounds) == 4
    averages = [r["avg"] for r in rounds]
    assert averages == sorted(averages, reverse=True)
    assert all("target" in r and "round_index" in r for r in rounds)


def test_external_round_push(hub):
    push = hub_request(
        hub.url, "POST", "/api/simulations/ext-1/rounds", {"round_index": 1, "avg": 25.0, "target": 16.7}
    )
    assert push["ok"]
    rounds = hub_request(hub.url, "GET", "/api/simulations/ext-1/rounds")["data"]
    assert rounds == [{"round_index": 1, "avg": 25.0, "target": 16.7}]


def test_unknown_simulation_rounds(hub):
    result = hub_request(hub.url, "GET", "/api/simulations/nope/rounds")
    assert not result["ok"]


# -- static ui ---------------------------------------------------------------------------


def test_ui_404_without_directory(hub):
    result = hub_request(hub.url, "GET", "/ui/")
    assert not result["ok"]


def test_ui_serves_static_files(tmp_path):
    (tmp_path / "index.html").write_text("<html><body>dash</body></html>")
    server = HubServer(host="127.0.0.1", port=0, ui_dir=str(tmp_path))
    server.start()
    try:
        import urllib.request

        with urllib.request.urlopen(f"{server.url}/ui/") as resp:
            assert b"dash" in resp.read()
        with urllib.request.urlopen(f"{server.url}/ui/index.html") as resp:
            assert resp.status == 200
    finally:
        server.shutdown()
