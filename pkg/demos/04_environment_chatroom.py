"""Environments: shared state, condition-triggered listeners, and nesting.

A chatroom environment keeps the conversation as state and notifies exactly
the participant whose name is mentioned. Group environments under a global
one give each group private keys while everyone can read the shared scope.
"""

from swarmsim import runtime
from swarmsim.environment import Environment, KeyNotFound, Listener, Recipient
from swarmsim.messages import Message
from swarmsim.runtime import Agent, AgentDef, register_agent_kind


@register_agent_kind("inbox")
class InboxAgent(Agent):
    def __init__(self, name, params):
        super().__init__(name, params)
        self.received = []

    def reply(self, inputs):
        self.received.extend(inputs)
        return Message(sender=self.name, role="assistant", content="noted")


chat = Environment("chatroom")
people = {}
for name in ("ada", "bob", "cleo"):
    ref = runtime.spawn_local(AgentDef(name=name, kind="inbox"))
    people[name] = (ref, runtime.local_agent(ref))


def speak(state, speaker="", text=""):
    state["history"] = state.get("history", []) + [f"{speaker}: {text}"]
    return len(state["history"])


chat.register_fn("speak", speak)
chat.add_listener(
    Listener(
        fn_name="speak",
        predicate={"mentions_arg": "text"},
        recipients=[Recipient(name=n, ref=ref) for n, (ref, _) in people.items()],
    )
)

chat.invoke("speak", {"speaker": "ada", "text": "bob, did you see round 3?"})
chat.invoke("speak", {"speaker": "bob", "text": "yes! cleo called it early."})
chat.invoke("speak", {"speaker": "cleo", "text": "just luck."})

for name, (_, recorder) in people.items():
    print(f"{name} was notified {len(recorder.received)} time(s)")

print("\nnested environments:")
top = Environment("global")
g1 = Environment("group-1", parent=top)
g2 = Environment("group-2", parent=top)
top.set("winner", 12.77)
g1.set("plan", "undercut slightly")
print("group-1 reads the global winner:", g1.lookup("winner"))
try:
    g2.lookup("plan")
except KeyNotFound:
    print("group-2 cannot see group-1's private plan")
