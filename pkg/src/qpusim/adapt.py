"""Load-driven re-partitioning: windowed query-load tracking per QPU, split of
hot leaf regions, merge of cold sibling regions, and greedy QPU placement."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Any, Iterable

from .core import AttrValue, HyperRegion, Interval, Kind
from .indexing import ControlDone, IndexQpu, MergeCmd, SplitCmd
from .simkernel import Actor, Kernel, Tick


def interval_midpoint(iv: Interval) -> AttrValue | None:
    """Midpoint of a fully bounded interval; text intervals fall back to the
    lower bound since strings cannot be averaged."""
    if not iv.bounded:
        return None
    lo, hi = iv.lo, iv.hi
    assert lo is not None and hi is not None
    if lo.kind is Kind.INT:
        return AttrValue(Kind.INT, (lo.value + hi.value) // 2)
    if lo.kind is Kind.FLOAT:
        return AttrValue(Kind.FLOAT, (lo.value + hi.value) / 2)
    return lo


@dataclass
class _Bucket:
    index: int
    count: int = 0
    samples: dict[str, list[AttrValue]] = field(default_factory=dict)


class LoadWindow:
    """Ring of per-bucket query counts plus, per dimension, the queried-region
    midpoints observed in that bucket. Buckets rotate with virtual time."""

    def __init__(self, window_buckets: int, bucket_ms: int) -> None:
        if window_buckets < 1 or bucket_ms < 1:
            raise ValueError("window needs at least one bucket of positive length")
        self.window_buckets = window_buckets
        self.bucket_ms = bucket_ms
        self._buckets: dict[int, _Bucket] = {}

    def _prune(self, now: int) -> None:
        floor = now // self.bucket_ms - self.window_buckets + 1
        for idx in [i for i in self._buckets if i < floor]:
            del self._buckets[idx]

    def record(self, now: int, region: HyperRegion | None) -> None:
        self._prune(now)
        idx = now // self.bucket_ms
        bucket = self._buckets.get(idx)
        if bucket is None:
            bucket = self._buckets[idx] = _Bucket(idx)
        bucket.count += 1
        if region is not None:
            for name, iv in region:
                mid = interval_midpoint(iv)
                if mid is not None:
                    bucket.samples.setdefault(name, []).append(mid)

    def load(self, now: int) -> int:
        self._prune(now)
        return sum(b.count for b in self._buckets.values())

    def samples(self, now: int, attr: str) -> list[AttrValue]:
        self._prune(now)
        out: list[AttrValue] = []
        for idx in sorted(self._buckets):
            out.extend(self._buckets[idx].samples.get(attr, ()))
        return out


class LoadTracker:
    """Per-QPU load windows; installed as the kernel's load hook."""

    def __init__(self, window_buckets: int, bucket_ms: int) -> None:
        self.window_buckets = window_buckets
        self.bucket_ms = bucket_ms
        self.windows: dict[str, LoadWindow] = {}

    def record(self, qpu_id: str, region: HyperRegion | None, now: int) -> None:
        window = self.windows.get(qpu_id)
        if window is None:
            window = self.windows[qpu_id] = LoadWindow(self.window_buckets, self.bucket_ms)
        window.record(now, region)

    def load(self, qpu_id: str, now: int) -> int:
        window = self.windows.get(qpu_id)
        return 0 if window is None else window.load(now)

    def samples(self, qpu_id: str, now: int, attr: str) -> list[AttrValue]:
        window = self.windows.get(qpu_id)
        return [] if window is None else window.samples(now, attr)


@dataclass
class RegionNode:
    """Vertex of one index tree: a QPU, the region it owns, and its children."""

    qpu_id: str
    region: HyperRegion
    children: list["RegionNode"] = field(default_factory=list)
    parent: "RegionNode | None" = None

    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list["RegionNode"]:
        if self.is_leaf():
            return [self]
        out: list[RegionNode] = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def internal(self) -> list["RegionNode"]:
        if self.is_leaf():
            return []
        out = [self]
        for child in self.children:
            out.extend(child.internal())
        return out

    def find(self, qpu_id: str) -> "RegionNode | None":
        if self.qpu_id == qpu_id:
            return self
        for child in self.children:
            hit = child.find(qpu_id)
            if hit is not None:
                return hit
        return None


@dataclass(frozen=True)
class SplitPlan:
    qpu_id: str
    dim: str
    plane: AttrValue


@dataclass(frozen=True)
class MergePlan:
    qpu_id: str
    children: tuple[str, ...]


@dataclass(frozen=True)
class Rebind:
    qpu: str
    node: str


def choose_split(
    leaf: IndexQpu, load: int, samples_by_dim: dict[str, list[AttrValue]], t_split: int
) -> SplitPlan | None:
    """Split decision for one leaf: gate on windowed load, pick the dimension
    with the widest queried-point spread (distinct sample count; tie-break by
    name), and cut at the sample median snapped to an indexed value boundary.
    Planes keep at least one distinct value on each side, so both children can
    own objects."""
    if load < t_split or leaf.mode != IndexQpu.LEAF:
        return None
    divisible: list[tuple[int, str]] = []
    for dim in leaf.indexed_attrs:
        values = leaf.index.distinct_values(dim)
        if len(values) >= 2:
            spread = len(set(samples_by_dim.get(dim, ())))
            divisible.append((-spread, dim))
    if not divisible:
        return None
    _, dim = min(divisible)
    eligible = leaf.index.distinct_values(dim)[1:]
    samples = sorted(samples_by_dim.get(dim, ()), key=lambda v: v.value)
    if samples:
        target = samples[len(samples) // 2]
    else:
        target = interval_midpoint(leaf.region.interval(dim))
    if target is None:
        plane = eligible[len(eligible) // 2]
    else:
        idx = bisect_left(eligible, target)
        plane = eligible[idx] if idx < len(eligible) else eligible[-1]
    return SplitPlan(leaf.qpu_id, dim, plane)


def rebalance_placement(
    loads: dict[str, float], capacities: dict[str, float]
) -> tuple[dict[str, str], bool]:
    """Greedy bin-pack: heaviest QPU first onto the node with the most
    remaining capacity. Returns (assignment, over_capacity)."""
    remaining = dict(capacities)
    assignment: dict[str, str] = {}
    for qpu in sorted(loads, key=lambda q: (-loads[q], q)):
        node = max(sorted(remaining), key=lambda n: remaining[n])
        assignment[qpu] = node
        remaining[node] -= loads[qpu]
    over = any(r < 0 for r in remaining.values())
    return assignment, over


class AdaptiveController(Actor):
    """Sequential control loop over the index trees it manages.

    Each period it inspects leaf load windows and issues at most one split or
    merge per tree, waiting for the owner QPU to acknowledge completion before
    planning the next action. It never mutates QPU state directly.
    """

    def __init__(
        self,
        controller_id: str,
        tracker: LoadTracker,
        roots: list[RegionNode],
        *,
        t_split: int = 100,
        t_merge: int = 20,
        period_ms: int = 1000,
        rebalance: bool = False,
        capacities: dict[str, float] | None = None,
    ) -> None:
        self.actor_id = controller_id
        self.tracker = tracker
        self.roots = {r.qpu_id: r for r in roots}
        self.t_split = t_split
        self.t_merge = t_merge
        self.period_ms = period_ms
        self.rebalance = rebalance
        self.capacities = capacities or {}
        self.active = True
        self.busy: set[str] = set()
        self._owner: dict[str, str] = {}

    def on_start(self, k: Kernel) -> None:
        k.schedule_in(self.period_ms, self.actor_id, Tick("control"))

    def stop(self) -> None:
        self.active = False

    def on_message(self, k: Kernel, msg: Any) -> None:
        if isinstance(msg, Tick) and msg.label == "control":
            if self.active:
                self.control_step(k)
                k.schedule_in(self.period_ms, self.actor_id, Tick("control"))
        elif isinstance(msg, ControlDone):
            self._done(k, msg)
        else:
            raise TypeError(f"controller got {type(msg).__name__}")

    # -- planning -------------------------------------------------------------

    def control_step(self, k: Kernel) -> None:
        for root_id in sorted(self.roots):
            if root_id in self.busy:
                continue
            root = self.roots[root_id]
            self._emit_loads(k, root)
            plan = self._plan_split(k, root) or self._plan_merge(k, root)
            if plan is None:
                continue
            self.busy.add(root_id)
            if isinstance(plan, SplitPlan):
                self._owner[plan.qpu_id] = root_id
                k.probes.record_control(
                    {"action": "split_requested", "qpu": plan.qpu_id, "dim": plan.dim, "plane": plan.plane.value}
                )
                k.send(self.actor_id, plan.qpu_id, SplitCmd(plan.qpu_id, (plan.dim, plan.plane)))
            else:
                self._owner[plan.qpu_id] = root_id
                k.probes.record_control({"action": "merge_requested", "qpu": plan.qpu_id})
                k.send(self.actor_id, plan.qpu_id, MergeCmd(plan.children))
        if self.rebalance:
            self._rebalance(k)

    def _emit_loads(self, k: Kernel, root: RegionNode) -> None:
        for leaf in root.leaves():
            k.probes.emit({"type": "load", "qpu": leaf.qpu_id, "window": self.tracker.load(leaf.qpu_id, k.now)})

    def _plan_split(self, k: Kernel, root: RegionNode) -> SplitPlan | None:
        candidates: list[tuple[int, str, RegionNode]] = []
        for leaf in root.leaves():
            load = self.tracker.load(leaf.qpu_id, k.now)
            if load >= self.t_split:
                candidates.append((-load, leaf.qpu_id, leaf))
        for _, qpu_id, leaf in sorted(candidates, key=lambda c: (c[0], c[1])):
            actor = k.actor(qpu_id)
            if not isinstance(actor, IndexQpu):
                continue
            samples = {dim: self.tracker.samples(qpu_id, k.now, dim) for dim in actor.indexed_attrs}
            plan = choose_split(actor, self.tracker.load(qpu_id, k.now), samples, self.t_split)
            if plan is not None:
                return plan
            k.probes.emit({"type": "control_skipped", "qpu": qpu_id, "reason": "indivisible"})
        return None

    def _plan_merge(self, k: Kernel, root: RegionNode) -> MergePlan | None:
        for node in sorted(root.internal(), key=lambda n: n.qpu_id):
            if not all(child.is_leaf() for child in node.children):
                continue
            if any(self.tracker.load(c.qpu_id, k.now) > self.t_merge for c in node.children):
                continue
            actor = k.actor(node.qpu_id)
            if isinstance(actor, IndexQpu) and actor.mode == IndexQpu.INTERNAL:
                return MergePlan(node.qpu_id, tuple(c.qpu_id for c in node.children))
        return None

    def _done(self, k: Kernel, msg: ControlDone) -> None:
        root_id = self._owner.pop(msg.qpu, None)
        if root_id is not None:
            self.busy.discard(root_id)
        node = None
        for root in self.roots.values():
            node = root.find(msg.qpu)
            if node is not None:
                break
        if node is None:
            return
        if msg.action == "split":
            node.children = [RegionNode(cid, region, parent=node) for cid, region in msg.children]
            k.probes.record_control(
                {"action": "split", "qpu": msg.qpu, "children": [cid for cid, _ in msg.children]}
            )
        elif msg.action == "merge":
            retired = [c.qpu_id for c in node.children]
            node.children = []
            k.probes.record_control({"action": "merge", "qpu": msg.qpu, "retired": retired})

    # -- placement ---------------------------------------------------------------

    def _rebalance(self, k: Kernel) -> None:
        qpus = sorted({leaf.qpu_id for root in self.roots.values() for leaf in root.leaves()})
        if not qpus or not self.capacities:
            return
        loads = {q: float(self.tracker.load(q, k.now)) for q in qpus}
        assignment, over = rebalance_placement(loads, self.capacities)
        for qpu, node in sorted(assignment.items()):
            if k.host_of(qpu) != node:
                k.rebind(qpu, node)
                k.probes.record_control({"action": "rebind", "qpu": qpu, "node": node, "over_capacity": over})
