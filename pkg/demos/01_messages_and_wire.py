"""Canonical payload encoding and the length-prefixed frame format.

Every value crossing an agent boundary is a Message or a Placeholder, and
both serialize to canonical JSON (sorted keys, compact, UTF-8) so equal
payloads are byte-identical. Frames on the wire are a 4-byte big-endian
length followed by that JSON.
"""

import io

from swarmsim.messages import Message, Placeholder, deserialize, serialize
from swarmsim.rpc import decode_frame, encode_frame

msg = Message(sender="agent-A", role="assistant", content="I report 33.33", metadata={"round": 1})
raw = serialize(msg)
print("message bytes:", raw.decode())
assert deserialize(raw) == msg
assert serialize(deserialize(raw)) == raw
print("round-trip is byte-exact")

ticket = Placeholder(task_id="task-123", host="127.0.0.1", port=9000)
print("\nplaceholder bytes:", serialize(ticket).decode())
print("the __placeholder__ discriminator keeps the two variants unambiguous")

framed = encode_frame(raw)
print(f"\nframed: {len(framed)} bytes, header {framed[:4].hex()} = body length {len(raw)}")
stream = io.BytesIO(encode_frame(b"first") + encode_frame(b"second"))
print("two frames stream in order:", decode_frame(stream), decode_frame(stream))
