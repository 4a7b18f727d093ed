"""Port-numbered strongly connected digraphs: construction, enumeration,
validation, fixtures and a diffable text format.

Nodes are identified with 1..n for bookkeeping only; parties never see node
identities.  Every edge carries the pair (out-port of its source, in-port of
its destination), and per node the out-ports and in-ports are bijections onto
1..d_out and 1..d_in.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

from .errors import CapacityError, DomainError, FixtureLookupError, ValidationError


@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    out_port: int
    in_port: int


@dataclass(frozen=True)
class PortDigraph:
    n: int
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        validate_ports(self)

    # -- structure helpers --------------------------------------------------

    def out_edges(self, v: int) -> list[Edge]:
        return sorted((e for e in self.edges if e.src == v), key=lambda e: e.out_port)

    def in_edges(self, v: int) -> list[Edge]:
        return sorted((e for e in self.edges if e.dst == v), key=lambda e: e.in_port)

    def d_out(self, v: int) -> int:
        return sum(1 for e in self.edges if e.src == v)

    def d_in(self, v: int) -> int:
        return sum(1 for e in self.edges if e.dst == v)

    def delivery_map(self) -> dict[tuple[int, int], tuple[int, int]]:
        """(src node, out-port) -> (dst node, in-port)."""
        return {(e.src, e.out_port): (e.dst, e.in_port) for e in self.edges}

    def key(self) -> str:
        return serialize(self)


def validate_ports(g: PortDigraph) -> None:
    if g.n < 1:
        raise ValidationError("node count must be >= 1")
    for e in g.edges:
        if not (1 <= e.src <= g.n and 1 <= e.dst <= g.n):
            raise ValidationError(f"edge endpoint out of range: {e}")
    for v in range(1, g.n + 1):
        outs = sorted(e.out_port for e in g.edges if e.src == v)
        ins = sorted(e.in_port for e in g.edges if e.dst == v)
        if outs != list(range(1, len(outs) + 1)):
            raise ValidationError(f"out-ports of node {v} are not a bijection onto 1..d: {outs}")
        if ins != list(range(1, len(ins) + 1)):
            raise ValidationError(f"in-ports of node {v} are not a bijection onto 1..d: {ins}")


def _adjacency(g: PortDigraph) -> list[set[int]]:
    adj: list[set[int]] = [set() for _ in range(g.n + 1)]
    for e in g.edges:
        adj[e.src].add(e.dst)
    return adj


def _reachable(adj: Sequence[set[int]], start: int, n: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_strongly_connected(g: PortDigraph) -> bool:
    """True iff every node reaches every other node via directed paths."""
    if g.n == 1:
        return True
    adj = _adjacency(g)
    if len(_reachable(adj, 1, g.n)) != g.n:
        return False
    radj: list[set[int]] = [set() for _ in range(g.n + 1)]
    for e in g.edges:
        radj[e.dst].add(e.src)
    return len(_reachable(radj, 1, g.n)) == g.n


def diameter(g: PortDigraph) -> int:
    """Maximum over node pairs of the shortest directed path length."""
    if not is_strongly_connected(g):
        raise DomainError("diameter is defined only for strongly connected digraphs")
    adj = _adjacency(g)
    best = 0
    for s in range(1, g.n + 1):
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        best = max(best, max(dist.values()))
    return best


def canonical_numbering(n: int, arcs: Sequence[tuple[int, int]]) -> PortDigraph:
    """Equip a bare arc list with the canonical port numbering: each node's
    incident edges sorted by (neighbor id, edge index) and numbered 1..d."""
    out_seen: dict[int, int] = {}
    in_seen: dict[int, int] = {}
    out_ports: dict[int, int] = {}
    in_ports: dict[int, int] = {}
    for v in range(1, n + 1):
        for i, (src, dst) in sorted(enumerate(arcs), key=lambda t: (t[1][1], t[0])):
            if src == v:
                out_seen[v] = out_seen.get(v, 0) + 1
                out_ports[i] = out_seen[v]
        for i, (src, dst) in sorted(enumerate(arcs), key=lambda t: (t[1][0], t[0])):
            if dst == v:
                in_seen[v] = in_seen.get(v, 0) + 1
                in_ports[i] = in_seen[v]
    edges = tuple(
        Edge(src, dst, out_ports[i], in_ports[i]) for i, (src, dst) in enumerate(arcs)
    )
    return PortDigraph(n, edges)


def enumerate_graphs(
    n: int,
    max_multiplicity: int = 1,
    allow_self_loops: bool = False,
    cap: int = 2_000_000,
) -> Iterator[PortDigraph]:
    """Yield every strongly connected digraph on n nodes (up to the parallel
    edge multiplicity cap), each with its canonical port numbering, in a
    deterministic order."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if max_multiplicity < 1:
        raise ValidationError("max_multiplicity must be >= 1")
    pairs = [(u, v) for u in range(1, n + 1) for v in range(1, n + 1) if u != v]
    if allow_self_loops:
        pairs += [(u, u) for u in range(1, n + 1)]
    total = (max_multiplicity + 1) ** len(pairs)
    if total > cap:
        raise CapacityError(
            f"{total} candidate digraphs exceed the enumeration cap {cap}"
        )
    for mults in itertools.product(range(max_multiplicity + 1), repeat=len(pairs)):
        arcs: list[tuple[int, int]] = []
        for (u, v), m in zip(pairs, mults):
            arcs.extend([(u, v)] * m)
        if n > 1 and not arcs:
            continue
        g_ok = _fast_strongly_connected(n, arcs)
        if not g_ok:
            continue
        yield canonical_numbering(n, arcs)


def _fast_strongly_connected(n: int, arcs: Sequence[tuple[int, int]]) -> bool:
    if n == 1:
        return True
    adj = [0] * (n + 1)
    radj = [0] * (n + 1)
    for u, v in arcs:
        adj[u] |= 1 << v
        radj[v] |= 1 << u
    full = 0
    for v in range(1, n + 1):
        full |= 1 << v
    for nb in (adj, radj):
        seen = 1 << 1
        frontier = 1 << 1
        while frontier:
            nxt = 0
            v = 0
            f = frontier
            while f:
                if f & 1:
                    nxt |= nb[v]
                f >>= 1
                v += 1
            frontier = nxt & ~seen
            seen |= nxt
        if seen & full != full:
            return False
    return True


def count_port_numberings(g: PortDigraph) -> int:
    c = 1
    for v in range(1, g.n + 1):
        c *= math.factorial(g.d_in(v)) * math.factorial(g.d_out(v))
    return c


def enumerate_port_numberings(g: PortDigraph, cap: int = 100_000) -> Iterator[PortDigraph]:
    """Yield g with every distinct assignment of per-node port bijections."""
    total = count_port_numberings(g)
    if total > cap:
        raise CapacityError(
            f"{total} port numberings exceed the cap {cap}; use sample_port_numberings"
        )
    arcs = [(e.src, e.dst) for e in g.edges]
    per_node: list[list[list[tuple[int, int]]]] = []
    for v in range(1, g.n + 1):
        out_idx = [i for i, (s, _) in enumerate(arcs) if s == v]
        in_idx = [i for i, (_, d) in enumerate(arcs) if d == v]
        choices = []
        for operm in itertools.permutations(range(1, len(out_idx) + 1)):
            for iperm in itertools.permutations(range(1, len(in_idx) + 1)):
                choices.append(
                    [(i, p) for i, p in zip(out_idx, operm)]
                    + [(~i, p) for i, p in zip(in_idx, iperm)]
                )
        per_node.append(choices)
    for combo in itertools.product(*per_node):
        out_ports: dict[int, int] = {}
        in_ports: dict[int, int] = {}
        for assignment in combo:
            for key, port in assignment:
                if key >= 0:
                    out_ports[key] = port
                else:
                    in_ports[~key] = port
        edges = tuple(
            Edge(s, d, out_ports[i], in_ports[i]) for i, (s, d) in enumerate(arcs)
        )
        yield PortDigraph(g.n, edges)


def sample_port_numberings(
    g: PortDigraph, count: int, seed: int
) -> list[PortDigraph]:
    """Uniform seeded samples from the port-numbering space of g."""
    rng = random.Random(seed)
    arcs = [(e.src, e.dst) for e in g.edges]
    out: list[PortDigraph] = []
    for _ in range(count):
        out_ports: dict[int, int] = {}
        in_ports: dict[int, int] = {}
        for v in range(1, g.n + 1):
            out_idx = [i for i, (s, _) in enumerate(arcs) if s == v]
            in_idx = [i for i, (_, d) in enumerate(arcs) if d == v]
            operm = list(range(1, len(out_idx) + 1))
            iperm = list(range(1, len(in_idx) + 1))
            rng.shuffle(operm)
            rng.shuffle(iperm)
            for i, p in zip(out_idx, operm):
                out_ports[i] = p
            for i, p in zip(in_idx, iperm):
                in_ports[i] = p
        edges = tuple(
            Edge(s, d, out_ports[i], in_ports[i]) for i, (s, d) in enumerate(arcs)
        )
        out.append(PortDigraph(g.n, edges))
    return out


def is_port_automorphism(g: PortDigraph, perm: dict[int, int]) -> bool:
    """Does the node permutation preserve edges together with port labels?"""
    if sorted(perm) != list(range(1, g.n + 1)) or sorted(perm.values()) != list(
        range(1, g.n + 1)
    ):
        return False
    labelled = {(e.src, e.dst, e.out_port, e.in_port) for e in g.edges}
    mapped = {(perm[e.src], perm[e.dst], e.out_port, e.in_port) for e in g.edges}
    return labelled == mapped


def incoming_label_scores(g: PortDigraph) -> dict[int, int]:
    """The Example-1 scoring game: +1 per incoming edge with out-port > in-port,
    -1 if out-port < in-port, 0 on ties; summed per node."""
    scores = {v: 0 for v in range(1, g.n + 1)}
    for e in g.edges:
        scores[e.dst] += (e.out_port > e.in_port) - (e.out_port < e.in_port)
    return scores


# -- serialization ----------------------------------------------------------


def serialize(g: PortDigraph) -> str:
    lines = [f"{g.n} {len(g.edges)}"]
    for e in sorted(g.edges):
        lines.append(f"{e.src} {e.dst} {e.out_port} {e.in_port}")
    return "\n".join(lines) + "\n"


def parse(text: str) -> PortDigraph:
    rows = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not rows:
        raise ValidationError("empty graph text")
    head = rows[0].split()
    if len(head) != 2:
        raise ValidationError(f"bad header line: {rows[0]!r}")
    n, m = int(head[0]), int(head[1])
    if len(rows) - 1 != m:
        raise ValidationError(f"expected {m} edge lines, found {len(rows) - 1}")
    edges = []
    for ln in rows[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise ValidationError(f"bad edge line: {ln!r}")
        edges.append(Edge(*(int(p) for p in parts)))
    return PortDigraph(n, tuple(edges))


# -- fixtures ---------------------------------------------------------------

# Both Example-1 networks live on the same 4-node regular digraph (every node
# has two in-ports and two out-ports): arcs u -> u+1 and u -> u+2 (mod 4).
_EXAMPLE1_ARCS = [
    (1, 2), (1, 3),
    (2, 3), (2, 4),
    (3, 4), (3, 1),
    (4, 1), (4, 2),
]

# Numbering (a): the scoring game has a unique winner (node 1, +1 point;
# the others score 0 or -1).
_EXAMPLE1A_PORTS = {
    (1, 2): (2, 2),
    (1, 3): (1, 2),
    (2, 3): (1, 1),
    (2, 4): (2, 2),
    (3, 4): (1, 1),
    (3, 1): (2, 1),
    (4, 1): (2, 2),
    (4, 2): (1, 1),
}

# Numbering (b): rotationally symmetric, every node scores 0.
_EXAMPLE1B_PORTS = {
    (1, 2): (1, 1), (2, 3): (1, 1), (3, 4): (1, 1), (4, 1): (1, 1),
    (1, 3): (2, 2), (2, 4): (2, 2), (3, 1): (2, 2), (4, 2): (2, 2),
}


def _example1(ports: dict[tuple[int, int], tuple[int, int]]) -> PortDigraph:
    edges = tuple(
        Edge(u, v, ports[(u, v)][0], ports[(u, v)][1]) for (u, v) in _EXAMPLE1_ARCS
    )
    return PortDigraph(4, edges)


def ring(n: int) -> PortDigraph:
    """Directed n-cycle; all port maps are trivially 1."""
    if n < 1:
        raise ValidationError("ring size must be >= 1")
    if n == 1:
        return PortDigraph(1, (Edge(1, 1, 1, 1),))
    edges = tuple(Edge(v, v % n + 1, 1, 1) for v in range(1, n + 1))
    return PortDigraph(n, edges)


def complete(n: int) -> PortDigraph:
    arcs = [(u, v) for u in range(1, n + 1) for v in range(1, n + 1) if u != v]
    return canonical_numbering(n, arcs)


_RING_RE = re.compile(r"^ring\((\d+)\)$")
_COMPLETE_RE = re.compile(r"^complete\((\d+)\)$")


def fixture(name: str) -> PortDigraph:
    """Named graphs: example1a, example1b, ring(n), complete(n)."""
    if name == "example1a":
        return _example1(_EXAMPLE1A_PORTS)
    if name == "example1b":
        return _example1(_EXAMPLE1B_PORTS)
    m = _RING_RE.match(name)
    if m:
        return ring(int(m.group(1)))
    m = _COMPLETE_RE.match(name)
    if m:
        return complete(int(m.group(1)))
    raise FixtureLookupError(f"unknown fixture {name!r}")
