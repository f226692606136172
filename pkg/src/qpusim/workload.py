"""Seeded workload generation: phase-structured write/query streams scheduled
up front, issued through per-origin client actors, and journalled for the
oracle replay in validation mode."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from random import Random
from typing import Any

from .build import Network
from .config import DistSpec, PhaseSpec, WorkloadSpec
from .core import AttrValue, Kind, Predicate, Query
from .qpunet import QueryMsg, ResponseMsg
from .simkernel import Actor, Kernel
from .store import ClientDelete, ClientWrite


class Sampler:
    """Draws attribute values from a phase's configured distribution."""

    def __init__(self, name: str, kind: Kind, spec: DistSpec, rng: Random) -> None:
        self.name = name
        self.kind = kind
        self.spec = spec
        self.rng = rng
        if spec.dist == "zipf":
            s = float(spec.params["s"])
            n = int(spec.params["n"])
            weights = [1.0 / (rank**s) for rank in range(1, n + 1)]
            total = sum(weights)
            acc, cum = 0.0, []
            for w in weights:
                acc += w / total
                cum.append(acc)
            self._zipf_cdf = cum

    def domain_width(self) -> float:
        if self.spec.dist == "uniform":
            return float(self.spec.params["hi"]) - float(self.spec.params["lo"])
        if self.spec.dist == "zipf":
            return float(self.spec.params["n"])
        return 0.0  # choice distributions query as points

    def sample(self) -> AttrValue:
        p = self.spec.params
        if self.spec.dist == "uniform":
            if self.kind is Kind.INT:
                return AttrValue.of(self.rng.randrange(int(p["lo"]), int(p["hi"])))
            if self.kind is Kind.FLOAT:
                return AttrValue.of(self.rng.uniform(float(p["lo"]), float(p["hi"])))
            raise ValueError(f"uniform distribution needs a numeric attribute, not {self.name!r}")
        if self.spec.dist == "zipf":
            rank = bisect_left(self._zipf_cdf, self.rng.random())
            base = int(p.get("lo", 0))
            if self.kind is not Kind.INT:
                raise ValueError(f"zipf distribution needs an integer attribute, not {self.name!r}")
            return AttrValue.of(base + rank)
        value = self.rng.choice(list(p["values"]))
        return AttrValue.of(value)


@dataclass(frozen=True)
class IssueQuery:
    query: Query


@dataclass(frozen=True)
class Heartbeat:
    pass


@dataclass
class Journal:
    """Everything the validation replay needs: each issued query with its
    origin, plus simple counters."""

    queries: list[tuple[Query, str]] = field(default_factory=list)
    writes: int = 0
    deletes: int = 0
    written_keys: set[str] = field(default_factory=set)


class Pulse(Actor):
    """Emits the periodic heartbeat record; every run has one regardless of
    traffic, so an empty workload still produces a well-formed metrics file."""

    actor_id = "wl-pulse"

    def on_message(self, k: Kernel, msg: Any) -> None:
        k.probes.emit({"type": "heartbeat"})


class QueryIssuer(Actor):
    """Client access point co-located with one entry QPU; measures the round
    trip through the network from that point."""

    def __init__(self, issuer_id: str, target_qpu: str, journal: Journal) -> None:
        self.actor_id = issuer_id
        self.target = target_qpu
        self.journal = journal
        self._n = 0
        self._issued_at: dict[str, int] = {}

    def on_message(self, k: Kernel, msg: Any) -> None:
        if isinstance(msg, IssueQuery):
            self._n += 1
            qid = f"{self.actor_id}-{self._n}"
            self._issued_at[qid] = k.now
            self.journal.queries.append((msg.query, self.target))
            k.send(self.actor_id, self.target, QueryMsg(qid, msg.query, self.actor_id))
        elif isinstance(msg, ResponseMsg):
            issued = self._issued_at.pop(msg.qid, None)
            if issued is None:
                return
            k.probes.emit(
                {
                    "type": "query",
                    "origin": self.target,
                    "latency": k.now - issued,
                    "results": len(msg.entries),
                    "complete": msg.complete,
                }
            )
        else:
            raise TypeError(f"issuer {self.actor_id} got {type(msg).__name__}")


def _op_times(start: int, duration: int, rate: float) -> list[int]:
    """Evenly spaced op times; the count is exactly duration*rate/1000."""
    n = int(round(duration * rate / 1000.0))
    return [start + int(round(i * 1000.0 / rate)) for i in range(n)]


class WorkloadDriver:
    """Schedules every phase's writes, queries and heartbeats up front, so a
    finished workload leaves no self-rescheduling events behind."""

    def __init__(self, net: Network, spec: WorkloadSpec, seed: int | str) -> None:
        self.net = net
        self.spec = spec
        self.journal = Journal()
        self.issuers: dict[str, QueryIssuer] = {}
        k = net.kernel
        effective = spec.seed if spec.seed is not None else seed
        self._write_rng = Random(f"{effective}|workload|writes")
        self._query_rng = Random(f"{effective}|workload|queries")
        origins = sorted({origin for p in spec.phases for origin in p.query_origin})
        for origin in origins:
            issuer = QueryIssuer(f"wl@{origin}", origin, self.journal)
            k.register(issuer, k.host_of(origin))
            self.issuers[origin] = issuer
        self.pulse = Pulse()
        k.register(self.pulse, k.nodes()[0])

    def schedule_all(self) -> int:
        """Returns the virtual end time of the last phase."""
        k = self.net.kernel
        start = 0
        for phase in self.spec.phases:
            self._schedule_phase(k, phase, start)
            start += phase.duration
        return start

    # -- one phase -----------------------------------------------------------

    def _schedule_phase(self, k: Kernel, phase: PhaseSpec, start: int) -> None:
        schema = self.net.schema
        samplers = {
            name: Sampler(name, schema[name], dist, self._write_rng)
            for name, dist in sorted(phase.attributes.items())
        }
        qsamplers = {
            name: Sampler(name, schema[name], dist, self._query_rng)
            for name, dist in sorted(phase.attributes.items())
        }
        if phase.write_rate > 0:
            for i, t in enumerate(_op_times(start, phase.duration, phase.write_rate)):
                self._schedule_write(k, phase, samplers, t, i)
        if phase.query_rate > 0:
            origins = list(phase.query_origin)
            for i, t in enumerate(_op_times(start, phase.duration, phase.query_rate)):
                origin = origins[i % len(origins)]
                query = self._make_query(phase, qsamplers)
                k.schedule(t, self.issuers[origin].actor_id, IssueQuery(query))
        for t in range(start, start + phase.duration, 1000):
            k.schedule(t, Pulse.actor_id, Heartbeat())

    def _pick_key(self, phase: PhaseSpec, i: int) -> str:
        if phase.key_mode == "sequential":
            return f"k{i % phase.key_space}"
        return f"k{self._write_rng.randrange(phase.key_space)}"

    def _schedule_write(self, k: Kernel, phase: PhaseSpec, samplers, t: int, i: int) -> None:
        key = self._pick_key(phase, i)
        is_delete = (
            self._write_rng.random() < phase.delete_fraction and key in self.journal.written_keys
        )
        if is_delete:
            dc = self._route_write(phase, None, i)
            k.schedule(t, dc, ClientDelete(key))
            self.journal.deletes += 1
            return
        attrs = {name: s.sample() for name, s in samplers.items()}
        dc = self._route_write(phase, attrs, i)
        k.schedule(t, dc, ClientWrite(key, attrs))
        self.journal.writes += 1
        self.journal.written_keys.add(key)

    def _route_write(self, phase: PhaseSpec, attrs, i: int) -> str:
        dcs = list(phase.write_origin_dcs)
        if phase.write_origin_mode == "fixed":
            return dcs[0]
        if phase.write_origin_mode == "by_placement" and attrs is not None:
            for dc in dcs:
                placement = self.net.replicas[dc].placement
                if placement is None or placement.contains(attrs):
                    return dc
        return dcs[i % len(dcs)]

    def _make_query(self, phase: PhaseSpec, samplers) -> Query:
        shapes = phase.query_shapes
        weights = [s.weight for s in shapes]
        shape = self._query_rng.choices(shapes, weights=weights)[0]
        preds = []
        for name in shape.attrs:
            sampler = samplers[name]
            center = sampler.sample()
            width = sampler.domain_width() * shape.selectivity
            if width <= 0 or center.kind is Kind.TEXT:
                preds.append(Predicate(name, center, center))
                continue
            if center.kind is Kind.INT:
                half = int(width // 2)
                lo = AttrValue.of(center.value - half)
                hi = AttrValue.of(center.value + max(half, 0))
            else:
                lo = AttrValue.of(center.value - width / 2)
                hi = AttrValue.of(center.value + width / 2)
            preds.append(Predicate(name, lo, hi))
        return Query.of(preds, phase.limit)
