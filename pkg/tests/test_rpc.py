import io
import random
import socket
import threading

import pytest

from swarmsim import rpc
from swarmsim.messages import MalformedPayload
from swarmsim.rpc import (
    FrameTooLarge,
    RpcClient,
    RpcRequest,
    RpcResponse,
    TruncatedFrame,
    decode_frame,
    encode_frame,
)


def test_empty_frame_reference_vector():
    assert encode_frame(b"") == bytes([0, 0, 0, 0])


def test_256_byte_frame_reference_vector():
    body = bytes(256)
    framed = encode_frame(body)
    assert framed[:4] == bytes([0, 0, 1, 0])
    assert framed[4:] == body


def test_decode_known_frame():
    assert decode_frame(io.BytesIO(bytes([0, 0, 0, 2, 0x68, 0x69]))) == b"hi"


def test_truncated_frame():
    with pytest.raises(TruncatedFrame):
        decode_frame(io.BytesIO(bytes([0, 0, 0, 5, 0x68])))
    with pytest.raises(TruncatedFrame):
        decode_frame(io.BytesIO(b"\x00\x00"))


def test_two_concatenated_frames_stream_in_order():
    stream = io.BytesIO(encode_frame(b"first") + encode_frame(b"second"))
    assert decode_frame(stream) == b"first"
    assert decode_frame(stream) == b"second"


def test_frame_roundtrip_randomized(rng):
    for _ in range(1000):
        body = rng.randbytes(rng.randrange(0, 2000))
        assert decode_frame(io.BytesIO(encode_frame(body))) == body


def test_frame_too_large():
    class HugeBody(bytes):
        def __len__(self):
            return 2**32

    with pytest.raises(FrameTooLarge):
        encode_frame(HugeBody())


def test_request_response_roundtrip_randomized(rng):
    for i in range(1000):
        req = RpcRequest(
            kind=rng.choice(rpc.REQUEST_KINDS),
            payload={"n": rng.random(), "s": f"x{i}"},
        )
        assert RpcRequest.from_bytes(req.to_bytes()).to_bytes() == req.to_bytes()
        if i % 2:
            resp = RpcResponse.success(req.request_id, {"v": rng.randrange(100)})
        else:
            resp = RpcResponse.failure(req.request_id, rng.choice(rpc.ERROR_CODES), "boom")
        assert RpcResponse.from_bytes(resp.to_bytes()).to_bytes() == resp.to_bytes()


def test_response_exactly_one_of_payload_error():
    with pytest.raises(ValueError):
        RpcResponse(request_id="r", ok=True, payload=None)
    with pytest.raises(ValueError):
        RpcResponse(request_id="r", ok=False, payload={}, error={"code": "INTERNAL"})
    with pytest.raises(MalformedPayload):
        RpcResponse.from_bytes(b'{"request_id": "r", "ok": true}')


class _EchoServer:
    """Minimal frame server for transport tests; echoes via a handler."""

    def __init__(self, handler):
        self.handler = handler
        self.listener = socket.create_server(("127.0.0.1", 0))
        self.port = self.listener.getsockname()[1]
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        while True:
            try:
                conn, _ = self.listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn):
        rfile = conn.makefile("rb")
        try:
            while True:
                body = decode_frame(rfile)
                out = self.handler(body)
                if out is None:
                    continue
                bodies = out if isinstance(out, list) else [out]
                conn.sendall(b"".join(encode_frame(b) for b in bodies))
        except (TruncatedFrame, OSError):
            conn.close()

    def close(self):
        self.listener.close()


def test_rpc_call_matches_request_id():
    def handler(body):
        req = RpcRequest.from_bytes(body)
        return RpcResponse.success(req.request_id, {"pong": True}).to_bytes()

    server = _EchoServer(handler)
    try:
        client = RpcClient("127.0.0.1", server.port)
        req = RpcRequest(kind="server_status")
        resp = client.call(req, timeout=5.0)
        assert resp.ok and resp.request_id == req.request_id
        client.close()
    finally:
        server.close()


def test_mismatched_request_id_is_malformed():
    def handler(body):
        req = RpcRequest.from_bytes(body)
        return RpcResponse.success("not-" + req.request_id, {}).to_bytes()

    server = _EchoServer(handler)
    try:
        client = RpcClient("127.0.0.1", server.port)
        with pytest.raises(MalformedPayload):
            client.call(RpcRequest(kind="server_status"), timeout=5.0)
        client.close()
    finally:
        server.close()


def test_connection_refused():
    sock = socket.create_server(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    with pytest.raises(ConnectionRefusedError):
        RpcClient("127.0.0.1", port).call(RpcRequest(kind="server_status"), timeout=2.0)


def test_timeout_when_server_never_answers():
    server = _EchoServer(lambda body: None)
    try:
        client = RpcClient("127.0.0.1", server.port)
        with pytest.raises(rpc.RpcTimeout):
            client.call(RpcRequest(kind="server_status"), timeout=0.3)
        client.close()
    finally:
        server.close()


def test_no_crosstalk_with_64_concurrent_clients():
    def handler(body):
        req = RpcRequest.from_bytes(body)
        return RpcResponse.success(req.request_id, {"echo": req.payload["n"]}).to_bytes()

    server = _EchoServer(handler)
    errors = []

    def worker(n):
        try:
            client = RpcClient("127.0.0.1", server.port)
            for i in range(10):
                req = RpcRequest(kind="call_agent", payload={"n": n * 1000 + i})
                resp = client.call(req, timeout=10.0)
                assert resp.request_id == req.request_id
                assert resp.payload["echo"] == n * 1000 + i
            client.close()
        except Exception as exc:  # pragma: no cover - surfaced via errors list
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(64)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.close()
    assert not errors


def test_pipelined_out_of_order_responses():
    """Responses may come back in any order; matching is by request_id."""
    random_state = random.Random(3)
    pending_bodies = []

    def handler(body):
        req = RpcRequest.from_bytes(body)
        pending_bodies.append(req)
        if len(pending_bodies) < 8:
            return None
        batch = list(pending_bodies)
        pending_bodies.clear()
        random_state.shuffle(batch)
        return [
            RpcResponse.success(r.request_id, {"i": r.payload["i"]}).to_bytes() for r in batch
        ]

    server = _EchoServer(handler)
    try:
        client = RpcClient("127.0.0.1", server.port)
        results = {}

        def one(i):
            resp = client.call(RpcRequest(kind="call_agent", payload={"i": i}), timeout=10.0)
            results[i] = resp.payload["i"]

        threads = [threading.Thread(target=one, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {i: i for i in range(8)}
        client.close()
    finally:
        server.close()
