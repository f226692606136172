"""Shared helpers: a response-collecting client and query driving."""

import pytest

from qpusim.core import AttrValue, HyperRegion, Interval
from qpusim.qpunet import QueryMsg
from qpusim.simkernel import Actor


class Client(Actor):
    """Collects query responses addressed to it."""

    def __init__(self, actor_id="client"):
        self.actor_id = actor_id
        self.responses = {}
        self._n = 0

    def on_message(self, k, msg):
        if hasattr(msg, "qid"):
            self.responses[msg.qid] = msg

    def next_qid(self):
        self._n += 1
        return f"{self.actor_id}-q{self._n}"


def run_query(k, client, qpu_id, query, *, drain=True):
    """Sends a query from next to the target QPU and runs until the response
    arrives (or, with drain, until full quiescence)."""
    k.rebind(client.actor_id, k.host_of(qpu_id))
    qid = client.next_qid()
    k.schedule(k.now, qpu_id, QueryMsg(qid, query, client.actor_id))
    if drain:
        k.run_until_empty()
    else:
        for _ in range(1_000_000):
            if qid in client.responses or not k.step():
                break
    return client.responses[qid]


def make_region(**bounds):
    out = {}
    for name, (lo, hi) in bounds.items():
        out[name] = Interval(
            None if lo is None else AttrValue.of(lo),
            None if hi is None else AttrValue.of(hi),
        )
    return HyperRegion.of(out)


@pytest.fixture
def client():
    return Client()
