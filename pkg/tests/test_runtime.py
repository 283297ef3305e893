import random
import threading
import time

import pytest

from swarmsim import rpc, runtime
from swarmsim.messages import Message, Placeholder
from swarmsim.runtime import (
    AgentDef,
    AgentNotFound,
    AgentServer,
    CapacityExceeded,
    ServerConfig,
    TaskNotFound,
    UnknownAgentKind,
)


def _msg(content, **metadata):
    return Message(sender="test", role="user", content=content, metadata=metadata)


# -- local spawning -----------------------------------------------------------


def test_spawn_echo_and_call():
    ref = runtime.spawn_local(AgentDef(name="e", kind="echo"))
    out = runtime.call(ref, _msg("x"))
    assert isinstance(out, Message)
    assert out.content == "x"
    runtime.stop(ref)


def test_same_name_gets_distinct_ids():
    a = runtime.spawn_local(AgentDef(name="twin", kind="echo"))
    b = runtime.spawn_local(AgentDef(name="twin", kind="echo"))
    assert a.agent_id != b.agent_id
    runtime.stop(a)
    runtime.stop(b)


def test_unknown_kind():
    with pytest.raises(UnknownAgentKind):
        runtime.spawn_local(AgentDef(name="x", kind="definitely-not-registered"))


def test_call_after_stop_raises():
    ref = runtime.spawn_local(AgentDef(name="e", kind="echo"))
    runtime.stop(ref)
    with pytest.raises(AgentNotFound):
        runtime.call(ref, _msg("x"))


def test_per_agent_serialization_under_100_concurrent_calls():
    ref = runtime.spawn_local(AgentDef(name="probe", kind="reentrancy_probe"))
    probe = runtime.local_agent(ref)
    errors = []

    def worker():
        try:
            runtime.call(ref, _msg("go"))
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert probe.processed == 100
    assert probe.max_active == 1, "agent processed two inputs concurrently"
    runtime.stop(ref)


# -- to_dist and proxies ----------------------------------------------------------


def test_to_dist_transparency(server_factory):
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    local = runtime.spawn_local(AgentDef(name="e", kind="echo"))
    local_reply = runtime.call(local, _msg("hello"))

    moved = runtime.spawn_local(AgentDef(name="e", kind="echo"))
    proxy = runtime.to_dist(moved, addr)
    assert proxy.is_proxy
    out = runtime.call(proxy, _msg("hello"))
    assert isinstance(out, Placeholder)
    remote_reply = runtime.resolve(out)
    assert remote_reply.content == local_reply.content
    runtime.stop(local)


def test_to_dist_capacity_exceeded(server_factory):
    server = server_factory(capacity=1)
    addr = ("127.0.0.1", server.port)
    first = runtime.spawn_local(AgentDef(name="a", kind="echo"))
    runtime.to_dist(first, addr)
    second = runtime.spawn_local(AgentDef(name="b", kind="echo"))
    with pytest.raises(CapacityExceeded):
        runtime.to_dist(second, addr)
    runtime.stop(second)


def test_proxy_call_is_nonblocking_and_resolve_waits(server_factory):
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    ref = runtime.to_dist(
        runtime.spawn_local(AgentDef(name="s", kind="sleeper", params={"delay": 1.0})), addr
    )
    t0 = time.monotonic()
    placeholder = runtime.call(ref, _msg("z"))
    call_elapsed = time.monotonic() - t0
    assert isinstance(placeholder, Placeholder)
    assert call_elapsed < 0.05, f"proxy call blocked for {call_elapsed:.3f}s"
    reply = runtime.resolve(placeholder)
    total = time.monotonic() - t0
    assert reply.content == "z"
    assert 0.8 <= total <= 1.2, f"resolve took {total:.3f}s"


def test_double_resolve_uses_cache_and_no_rpc(server_factory):
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    ref = runtime.to_dist(runtime.spawn_local(AgentDef(name="e", kind="echo")), addr)
    placeholder = runtime.call(ref, _msg("once"))
    first = runtime.resolve(placeholder)
    count_before = rpc.pool.request_count(*addr)
    second = runtime.resolve(placeholder)
    assert second == first
    assert rpc.pool.request_count(*addr) == count_before


def test_resolve_from_stopped_server_fails():
    server = AgentServer(ServerConfig(port=0, workers=4))
    server.start()
    addr = ("127.0.0.1", server.port)
    ref = runtime.to_dist(runtime.spawn_local(AgentDef(name="e", kind="echo")), addr)
    placeholder = runtime.call(ref, _msg("x"))
    runtime.resolve(placeholder)
    stale = Placeholder(task_id="no-such-task", host=addr[0], port=addr[1])
    with pytest.raises(TaskNotFound):
        runtime.resolve(stale)
    server.shutdown()
    gone = Placeholder(task_id="whatever", host=addr[0], port=addr[1])
    with pytest.raises((TaskNotFound, ConnectionError, OSError, rpc.RpcTimeout)):
        runtime.resolve(gone, timeout=2.0)


def test_placeholder_chain_through_two_remote_agents(server_factory):
    """A placeholder can be forwarded as input before it resolves."""
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    b = runtime.to_dist(runtime.spawn_local(AgentDef(name="B", kind="transform")), addr)
    c = runtime.to_dist(runtime.spawn_local(AgentDef(name="C", kind="transform")), addr)

    # Single-process reference run.
    b_local = runtime.spawn_local(AgentDef(name="B", kind="transform"))
    c_local = runtime.spawn_local(AgentDef(name="C", kind="transform"))
    expected = runtime.call(c_local, runtime.call(b_local, _msg("seed")))

    intermediate = runtime.call(b, _msg("seed"))
    final = runtime.resolve(runtime.call(c, intermediate))
    assert final.content == expected.content


# -- server behaviors --------------------------------------------------------------


def test_parallel_execution_of_independent_agents(server_factory):
    server = server_factory(workers=16)
    addr = ("127.0.0.1", server.port)
    refs = [
        runtime.to_dist(
            runtime.spawn_local(AgentDef(name=f"s{i}", kind="sleeper", params={"delay": 1.0})),
            addr,
        )
        for i in range(10)
    ]
    t0 = time.monotonic()
    placeholders = [runtime.call(ref, _msg(str(i))) for i, ref in enumerate(refs)]
    replies = [runtime.resolve(p) for p in placeholders]
    elapsed = time.monotonic() - t0
    assert [r.content for r in replies] == [str(i) for i in range(10)]
    # 10 one-second agents in parallel finish in about one task time, not ten.
    assert elapsed < 3.0, f"took {elapsed:.2f}s"


def test_stop_agent_then_call(server_factory):
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    ref = runtime.to_dist(runtime.spawn_local(AgentDef(name="e", kind="echo")), addr)
    runtime.stop(ref)
    with pytest.raises(AgentNotFound):
        runtime.call(ref, _msg("x"))
    with pytest.raises(AgentNotFound):
        runtime.stop(ref)


def test_server_status_reports_config(server_factory):
    server = server_factory(capacity=77, workers=5)
    addr = ("127.0.0.1", server.port)
    runtime.to_dist(runtime.spawn_local(AgentDef(name="e", kind="echo")), addr)
    resp = rpc.rpc_call(addr, rpc.RpcRequest(kind="server_status"), timeout=5.0)
    status = resp.raise_for_error()
    assert status["mode"] == "many_to_one"
    assert status["agent_count"] == 1
    assert status["capacity"] == 77


def test_list_agents(server_factory):
    server = server_factory()
    addr = ("127.0.0.1", server.port)
    runtime.to_dist(runtime.spawn_local(AgentDef(name="listed", kind="echo")), addr)
    resp = rpc.rpc_call(addr, rpc.RpcRequest(kind="list_agents"), timeout=5.0)
    agents = resp.raise_for_error()["agents"]
    assert len(agents) == 1
    assert agents[0]["kind"] == "echo"
    assert agents[0]["name"] == "listed"


def test_one_to_one_mode_runs_agents_in_child_processes(server_factory):
    server = server_factory(mode="one_to_one", capacity=4)
    addr = ("127.0.0.1", server.port)
    refs = [
        runtime.to_dist(runtime.spawn_local(AgentDef(name=f"p{i}", kind="echo")), addr)
        for i in range(2)
    ]
    placeholders = [runtime.call(ref, _msg(f"m{i}")) for i, ref in enumerate(refs)]
    contents = [runtime.resolve(p).content for p in placeholders]
    assert contents == ["m0", "m1"]
    runtime.stop(refs[0])
    with pytest.raises(AgentNotFound):
        runtime.call(refs[0], _msg("again"))
    # The sibling child is unaffected.
    assert runtime.resolve(runtime.call(refs[1], _msg("still"))).content == "still"


def test_one_to_one_stop_during_inflight_task_never_hangs(server_factory):
    server = server_factory(mode="one_to_one", capacity=2)
    addr = ("127.0.0.1", server.port)
    ref = runtime.to_dist(
        runtime.spawn_local(AgentDef(name="slow", kind="sleeper", params={"delay": 5.0})), addr
    )
    placeholder = runtime.call(ref, _msg("x"))
    time.sleep(0.2)
    runtime.stop(ref)
    t0 = time.monotonic()
    with pytest.raises((TaskNotFound, rpc.RpcTimeout, ConnectionError)):
        runtime.resolve(placeholder, timeout=3.0)
    assert time.monotonic() - t0 < 9.0


def test_bind_failure():
    server = AgentServer(ServerConfig(port=0, workers=2))
    server.start()
    clash = AgentServer(ServerConfig(port=server.port, workers=2))
    with pytest.raises(runtime.BindFailure):
        clash.start()
    server.shutdown()


# -- dataflow equivalence ------------------------------------------------------------


def _run_dag_local(edges, n):
    refs = [runtime.spawn_local(AgentDef(name=f"n{i}", kind="transform")) for i in range(n)]
    outputs = {}
    for i in range(n):
        parents = [outputs[j] for j in range(n) if (j, i) in edges]
        inputs = parents if parents else [_msg(f"src{i}")]
        outputs[i] = runtime.call(refs[i], inputs)
    for ref in refs:
        runtime.stop(ref)
    return [outputs[i].content for i in range(n)]


def _run_dag_distributed(edges, n, addr):
    refs = [
        runtime.to_dist(runtime.spawn_local(AgentDef(name=f"n{i}", kind="transform")), addr)
        for i in range(n)
    ]
    outputs = {}
    for i in range(n):
        parents = [outputs[j] for j in range(n) if (j, i) in edges]
        inputs = parents if parents else [_msg(f"src{i}")]
        outputs[i] = runtime.call(refs[i], inputs)  # placeholders flow downstream
    finals = [runtime.resolve(outputs[i]) for i in range(n)]
    for ref in refs:
        runtime.stop(ref)
    return [m.content for m in finals]


def test_dataflow_equivalence_on_random_dags(server_factory, rng):
    server = server_factory(workers=32)
    addr = ("127.0.0.1", server.port)
    for _ in range(10):  # the acceptance suite runs the full 100
        n = rng.randrange(2, 11)
        edges = {
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if rng.random() < 0.35
        }
        assert _run_dag_local(edges, n) == _run_dag_distributed(edges, n, addr)
