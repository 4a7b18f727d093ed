"""Rooted labeled view trees with hash-consing.

The depth-k view of a node is the tree of all directed walks of length <= k
into it: the root carries the node's label and each child subtree hangs under
the label of the edge it arrived on (out-port of the sender, in-port of the
receiver).  Structurally equal trees are interned to the same object, so
equality is identity and deep trees shared across parties cost O(1) to
compare, hash and store.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Any, Hashable, Iterable, Sequence

_POOL: dict[tuple, "ViewNode"] = {}


class ViewNode:
    """Immutable interned view tree node.

    ``children`` is a tuple of ((out_port, in_port), ViewNode) ordered by the
    receiver's in-port; ``depth`` is the uniform depth of the subtree (a node
    whose children are depth-(k-1) views has depth k).
    """

    __slots__ = ("label", "children", "depth", "_hash")

    def __new__(cls, label: Hashable, children: tuple = ()):
        key = (label, children)
        node = _POOL.get(key)
        if node is None:
            node = object.__new__(cls)
            node.label = label
            node.children = children
            node.depth = 1 + children[0][1].depth if children else 0
            node._hash = hash(key)
            _POOL[key] = node
        return node

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        if not self.children:
            return f"({self.label})"
        kids = ",".join(f"{el}:{c!r}" for el, c in self.children)
        return f"({self.label}|{kids})"

    # Interning makes structural equality identity; the default object
    # __eq__ is therefore exactly right.

    def uncompressed_bits(self) -> int:
        """Size of the tree written out without sharing (label bits plus two
        8-bit port labels per edge); memoized per node."""
        bits = _BITS.get(self)
        if bits is None:
            bits = _label_bits(self.label) + sum(
                16 + c.uncompressed_bits() for _, c in self.children
            )
            _BITS[self] = bits
        return bits

    def as_json(self) -> Any:
        return {
            "label": str(self.label),
            "children": [
                {"edge": list(el), "view": c.as_json()} for el, c in self.children
            ],
        }


_BITS: dict[ViewNode, int] = {}


def _label_bits(label: Any) -> int:
    if isinstance(label, bool):
        return 1
    if isinstance(label, int):
        return max(1, label.bit_length())
    if isinstance(label, Fraction):
        return _label_bits(label.numerator) + _label_bits(label.denominator)
    return 8 * len(str(label))


def leaf(label: Hashable) -> ViewNode:
    return ViewNode(label)


def attach(label: Hashable, children: Iterable[tuple[tuple[int, int], ViewNode]]) -> ViewNode:
    """Build a view from received child views; children sorted by in-port."""
    kids = tuple(sorted(children, key=lambda t: t[0][1]))
    if kids:
        d = kids[0][1].depth
        if any(c.depth != d for _, c in kids):
            raise ValueError("children of one view must share their depth")
    return ViewNode(label, kids)


def truncate(view: ViewNode, depth: int) -> ViewNode:
    """The view cut down to the given depth."""
    if view.depth <= depth:
        return view
    key = (view, depth)
    out = _TRUNC.get(key)
    if out is None:
        if depth == 0:
            out = ViewNode(view.label)
        else:
            out = ViewNode(
                view.label,
                tuple((el, truncate(c, depth - 1)) for el, c in view.children),
            )
        _TRUNC[key] = out
    return out


_TRUNC: dict[tuple[ViewNode, int], ViewNode] = {}


def build_views(graph, labels: Sequence[Hashable], depth: int) -> dict[int, ViewNode]:
    """Direct construction of every node's depth-k view from the graph.

    This is the reference oracle mirroring the message-passing build: node v's
    depth-j view attaches the in-neighbors' depth-(j-1) views under the edge
    labels.
    """
    cur = {v: leaf(labels[v - 1]) for v in range(1, graph.n + 1)}
    in_edges = {v: graph.in_edges(v) for v in range(1, graph.n + 1)}
    for _ in range(depth):
        cur = {
            v: attach(
                labels[v - 1],
                (((e.out_port, e.in_port), cur[e.src]) for e in in_edges[v]),
            )
            for v in range(1, graph.n + 1)
        }
    return cur


def collect_guess_stats(own_view: ViewNode, m: int) -> tuple[int, int]:
    """(q, q1): the number of distinct depth-(m-1) views occurring as subtrees
    rooted at depth <= m of ``own_view``, and how many of those have root
    label 1."""
    seen: set[tuple[ViewNode, int]] = set()
    found: set[ViewNode] = set()
    stack = [(own_view, 0)]
    while stack:
        node, d = stack.pop()
        if (node, d) in seen:
            continue
        seen.add((node, d))
        found.add(truncate(node, m - 1))
        if d < m:
            stack.extend((c, d + 1) for _, c in node.children)
    q = len(found)
    q1 = sum(1 for v in found if v.label == 1)
    return q, q1


def hamming_guess(own_view: ViewNode, m: int) -> Fraction:
    """chi = m * q1 / q as an exact rational; equals the Hamming weight of the
    distributed labels whenever m is the true party count."""
    q, q1 = collect_guess_stats(own_view, m)
    return Fraction(m * q1, q)


def refinement_classes(graph, labels: Sequence[Hashable]) -> list[int]:
    """Iterated port-labeled partition refinement; node classes after
    stabilization coincide with equality classes of depth-(n-1) views.

    Returns a class index per node (1-based nodes -> list offset by 1).
    """
    n = graph.n
    in_edges = {v: graph.in_edges(v) for v in range(1, n + 1)}
    cls = {}
    seenc: dict[Hashable, int] = {}
    for v in range(1, n + 1):
        key = labels[v - 1]
        if key not in seenc:
            seenc[key] = len(seenc)
        cls[v] = seenc[key]
    for _ in range(n - 1):
        seen: dict[tuple, int] = {}
        nxt = {}
        for v in range(1, n + 1):
            sig = (
                cls[v],
                tuple(((e.out_port, e.in_port), cls[e.src]) for e in in_edges[v]),
            )
            if sig not in seen:
                seen[sig] = len(seen)
            nxt[v] = seen[sig]
        if nxt == cls:
            break
        cls = nxt
    return [cls[v] for v in range(1, n + 1)]


def refinement_guess(graph, labels: Sequence[Hashable], m: int) -> Fraction:
    """chi computed from the refinement classes (fast path used by large
    verification sweeps; agrees with hamming_guess at m = n)."""
    cls = refinement_classes(graph, labels)
    q = len(set(cls))
    ones = {c for c, lab in zip(cls, labels) if lab == 1}
    return Fraction(m * len(ones), q)
