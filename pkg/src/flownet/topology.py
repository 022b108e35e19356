"""Directed acyclic multigraph topologies, cuts, and min-cut capacity.

Networks have a unique origin (no incoming links), a unique destination
(no outgoing links), and every node can reach the destination.  Parallel
links are allowed and always kept as distinct link ids.

Min-cut capacity is computed by two independent routes: exhaustive cut
enumeration (exact, small graphs) and augmenting-path max-flow (any size).
Both are arithmetic-agnostic, so they run exactly on ``fractions.Fraction``
capacities as well as on floats.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations

__all__ = [
    "Link",
    "NetworkTopology",
    "Cut",
    "ValidationResult",
    "TopologyError",
    "validate_topology",
    "topological_order",
    "canonical_relabel",
    "enumerate_od_cuts",
    "min_cut_capacity",
    "max_flow_value",
]

DEFAULT_ENUMERATION_LIMIT = 20


class TopologyError(ValueError):
    """Raised when an operation is applied to an invalid topology."""


@dataclass(frozen=True)
class Link:
    """A directed link of the multigraph. Parallel links differ only by id."""

    id: int
    tail: int
    head: int


@dataclass(frozen=True)
class Cut:
    """An origin/destination cut: the origin-side node set and its crossing links."""

    origin_side: frozenset
    cut_links: frozenset


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


class NetworkTopology:
    """Immutable multigraph over nodes ``0..num_nodes-1``.

    Links are normalized to ascending-id order at construction; the
    per-node outgoing/incoming lists preserve that order, which fixes the
    local link ordering used everywhere else (routing simplices, density
    vectors, CSV columns).
    """

    def __init__(self, num_nodes: int, links):
        if num_nodes < 2:
            raise TopologyError("a flow network needs at least an origin and a destination")
        links = tuple(sorted((Link(*l) if isinstance(l, tuple) else l for l in links), key=lambda l: l.id))
        ids = [l.id for l in links]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate link ids")
        for l in links:
            if not (0 <= l.tail < num_nodes and 0 <= l.head < num_nodes):
                raise TopologyError(f"link {l.id} endpoint out of range")
            if l.tail == l.head:
                raise TopologyError(f"link {l.id} is a self-loop")
        self.num_nodes = num_nodes
        self.links = links
        self._by_id = {l.id: l for l in links}
        out = {v: [] for v in range(num_nodes)}
        inc = {v: [] for v in range(num_nodes)}
        for l in links:
            out[l.tail].append(l.id)
            inc[l.head].append(l.id)
        self.outgoing = {v: tuple(out[v]) for v in range(num_nodes)}
        self.incoming = {v: tuple(inc[v]) for v in range(num_nodes)}

    def link(self, link_id: int) -> Link:
        return self._by_id[link_id]

    @property
    def link_ids(self):
        return tuple(l.id for l in self.links)

    def sources(self):
        return [v for v in range(self.num_nodes) if not self.incoming[v]]

    def sinks(self):
        return [v for v in range(self.num_nodes) if not self.outgoing[v]]

    @property
    def origin(self) -> int:
        (v,) = self.sources()
        return v

    @property
    def destination(self) -> int:
        (v,) = self.sinks()
        return v

    def to_dict(self) -> dict:
        """Canonical JSON-ready form: node count plus id-sorted link records."""
        return {
            "nodes": self.num_nodes,
            "links": [{"id": l.id, "tail": l.tail, "head": l.head} for l in self.links],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkTopology":
        links = [Link(int(r["id"]), int(r["tail"]), int(r["head"])) for r in doc["links"]]
        return cls(int(doc["nodes"]), links)

    def __repr__(self):
        return f"NetworkTopology(num_nodes={self.num_nodes}, links={len(self.links)})"


def _find_cycle(topo: NetworkTopology):
    """Return the node set of some directed cycle, or None if acyclic (Kahn)."""
    indeg = {v: len(topo.incoming[v]) for v in range(topo.num_nodes)}
    queue = deque(v for v, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        v = queue.popleft()
        seen += 1
        for lid in topo.outgoing[v]:
            h = topo.link(lid).head
            indeg[h] -= 1
            if indeg[h] == 0:
                queue.append(h)
    if seen == topo.num_nodes:
        return None
    return sorted(v for v, d in indeg.items() if d > 0)


def _reaches(topo: NetworkTopology, target: int):
    """Set of nodes with a directed path to ``target`` (reverse BFS)."""
    seen = {target}
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for lid in topo.incoming[v]:
            t = topo.link(lid).tail
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen


def validate_topology(topo: NetworkTopology) -> ValidationResult:
    """Check acyclicity, unique origin/destination, and destination reachability.

    Violations are returned as data (human-readable strings), not raised.
    """
    violations = []
    cycle = _find_cycle(topo)
    if cycle is not None:
        violations.append(f"cycle through nodes {cycle}")
    sources = topo.sources()
    if len(sources) != 1:
        violations.append(f"expected exactly one origin (no incoming links), found {sources}")
    sinks = topo.sinks()
    if len(sinks) != 1:
        violations.append(f"expected exactly one destination (no outgoing links), found {sinks}")
    if cycle is None and sinks:
        # with several sinks, judge reachability against the best-connected one
        dest = max(sinks, key=lambda s: (len(_reaches(topo, s)), s))
        unreachable = sorted(set(range(topo.num_nodes)) - _reaches(topo, dest))
        if unreachable:
            violations.append(f"nodes {unreachable} have no path to the destination ({dest})")
    return ValidationResult(not violations, tuple(violations))


def _require_valid(topo: NetworkTopology):
    res = validate_topology(topo)
    if not res.ok:
        raise TopologyError("; ".join(res.violations))


def topological_order(topo: NetworkTopology):
    """Deterministic topological order of the nodes.

    Returns ``order`` with ``order[new_label] = old_node``; the origin maps
    to label 0, the destination to the last label, and every link points
    from a lower to a higher label.  Among all valid orders the
    lexicographically smallest (by original node index) is returned, via
    Kahn's algorithm with a min-heap.
    """
    import heapq

    _require_valid(topo)
    indeg = {v: len(topo.incoming[v]) for v in range(topo.num_nodes)}
    heap = [v for v, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for lid in topo.outgoing[v]:
            h = topo.link(lid).head
            indeg[h] -= 1
            if indeg[h] == 0:
                heapq.heappush(heap, h)
    return order


def canonical_relabel(topo: NetworkTopology):
    """Relabel nodes along ``topological_order``.

    Returns ``(new_topo, mapping)`` where ``mapping[old_node] = new_label``.
    Link ids are preserved.
    """
    order = topological_order(topo)
    mapping = {old: new for new, old in enumerate(order)}
    links = [Link(l.id, mapping[l.tail], mapping[l.head]) for l in topo.links]
    return NetworkTopology(topo.num_nodes, links), mapping


def enumerate_od_cuts(topo: NetworkTopology, limit: int = DEFAULT_ENUMERATION_LIMIT):
    """All 2^(n-1) origin/destination cuts, n+1 being the node count.

    Refuses graphs larger than ``limit`` nodes (the count is exponential).
    Cuts are listed with origin sides in lexicographic order.
    """
    _require_valid(topo)
    if topo.num_nodes > limit:
        raise TopologyError(
            f"{topo.num_nodes} nodes exceeds the cut-enumeration limit of {limit}"
        )
    origin, dest = topo.origin, topo.destination
    middle = sorted(set(range(topo.num_nodes)) - {origin, dest})
    cuts = []
    for r in range(len(middle) + 1):
        for extra in combinations(middle, r):
            side = frozenset((origin,) + extra)
            cut_links = frozenset(
                l.id for l in topo.links if l.tail in side and l.head not in side
            )
            cuts.append(Cut(side, cut_links))
    cuts.sort(key=lambda c: tuple(sorted(c.origin_side)))
    return cuts


def _check_capacities(topo: NetworkTopology, capacities):
    for lid in topo.link_ids:
        if lid not in capacities:
            raise TopologyError(f"missing capacity for link {lid}")
        c = capacities[lid]
        if not (c > 0) or (isinstance(c, float) and not c < float("inf")):
            raise TopologyError(f"capacity of link {lid} must be finite and positive")


def min_cut_capacity(topo: NetworkTopology, capacities, limit: int = DEFAULT_ENUMERATION_LIMIT):
    """Minimum cut capacity and one minimizing cut.

    For graphs within the enumeration limit every cut is inspected and the
    minimizer with lexicographically smallest origin side is returned, and
    the value is cross-checked against max-flow; beyond the limit the value
    comes from max-flow with the residual-reachable witness cut.
    """
    _require_valid(topo)
    _check_capacities(topo, capacities)
    flow_value, reachable = _max_flow(topo, capacities)
    if topo.num_nodes <= limit:
        best = None
        best_val = None
        for cut in enumerate_od_cuts(topo, limit):
            val = sum(capacities[lid] for lid in sorted(cut.cut_links))
            if best_val is None or val < best_val:
                best, best_val = cut, val
        if not _agrees(best_val, flow_value):
            raise AssertionError(
                f"min-cut enumeration ({best_val}) disagrees with max-flow ({flow_value})"
            )
        return best_val, best
    side = frozenset(reachable)
    cut_links = frozenset(l.id for l in topo.links if l.tail in side and l.head not in side)
    return flow_value, Cut(side, cut_links)


def max_flow_value(topo: NetworkTopology, capacities):
    """Maximum feasible origin-to-destination flow (Edmonds-Karp)."""
    _require_valid(topo)
    _check_capacities(topo, capacities)
    value, _ = _max_flow(topo, capacities)
    return value


def _agrees(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))
    return a == b


def _max_flow(topo: NetworkTopology, capacities):
    """BFS augmenting paths on the multigraph's residual network.

    Works with any ordered numeric type (float, Fraction, int).  Returns
    the flow value and the set of nodes reachable from the origin in the
    final residual network (the canonical minimal source-side cut).
    """
    source, sink = topo.origin, topo.destination
    first = topo.link_ids[0]
    zero = capacities[first] - capacities[first]  # zero of the capacity type
    residual = {lid: capacities[lid] for lid in topo.link_ids}  # forward slack
    backflow = {lid: zero for lid in topo.link_ids}

    def bfs():
        # parent[node] = (link_id, forward?) on a shortest augmenting path
        parent = {source: None}
        queue = deque([source])
        while queue:
            v = queue.popleft()
            if v == sink:
                break
            for lid in topo.outgoing[v]:
                h = topo.link(lid).head
                if h not in parent and residual[lid] > 0:
                    parent[h] = (lid, True)
                    queue.append(h)
            for lid in topo.incoming[v]:
                t = topo.link(lid).tail
                if t not in parent and backflow[lid] > 0:
                    parent[t] = (lid, False)
                    queue.append(t)
        return parent

    total = zero
    while True:
        parent = bfs()
        if sink not in parent:
            return total, set(parent)
        # walk back from the sink collecting the path and its bottleneck
        path = []
        v = sink
        while v != source:
            lid, forward = parent[v]
            path.append((lid, forward))
            v = topo.link(lid).tail if forward else topo.link(lid).head
        bottleneck = min(residual[lid] if fwd else backflow[lid] for lid, fwd in path)
        for lid, fwd in path:
            if fwd:
                residual[lid] -= bottleneck
                backflow[lid] += bottleneck
            else:
                residual[lid] += bottleneck
                backflow[lid] -= bottleneck
        total = total + bottleneck
