"""Deterministic spanning trees over roster indices, plus swap-forest labels.

The tree is laid out breadth-first from the well-known roster order with the
leader at the root, so every participant derives an identical topology with
no communication. Pruning removes failed nodes and re-attaches their
children to the nearest live ancestor.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable


class TopologyError(ValueError):
    pass


class LeaderFailedError(TopologyError):
    """The failure set includes the root: signal for a view change."""


@dataclass(frozen=True)
class TreeTopology:
    size: int
    branching: int
    root: int
    parent: tuple  # parent[i] is None for the root and for absent nodes
    children: tuple  # children[i] is a tuple of roster indices
    absent: frozenset[int]

    @property
    def members(self) -> frozenset[int]:
        return frozenset(range(self.size)) - self.absent

    def node_depth(self, index: int) -> int:
        d = 0
        while self.parent[index] is not None:
            index = self.parent[index]
            d += 1
        return d

    @property
    def depth(self) -> int:
        return max(self.node_depth(i) for i in self.members)

    def descendants(self, index: int) -> frozenset[int]:
        """Transitive descendants of `index`, including itself."""
        out = []
        stack = [index]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.children[n])
        return frozenset(out)

    def descendant_count(self, index: int) -> int:
        return len(self.descendants(index))

    def digest(self) -> bytes:
        body = b"".join(
            i.to_bytes(4, "big")
            + (0xFFFFFFFF if self.parent[i] is None else self.parent[i]).to_bytes(4, "big")
            for i in sorted(self.members)
        )
        head = self.size.to_bytes(4, "big") + self.branching.to_bytes(4, "big") \
            + self.root.to_bytes(4, "big")
        return hashlib.sha256(b"cosi/topology/v1" + head + body).digest()

    def dump(self) -> str:
        """Indented text rendering for debugging."""
        lines = []

        def walk(node: int, depth: int) -> None:
            lines.append("  " * depth + f"{node}" + (" (leader)" if node == self.root else ""))
            for child in self.children[node]:
                walk(child, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines)


def build_bary_tree(size, branching: int, leader_index: int = 0) -> TreeTopology:
    """Regular B-ary tree over roster indices, breadth-first, leader at the root.

    `size` may be a roster (its length and leader are used) or an int.
    """
    if hasattr(size, "entries"):
        leader_index = size.leader_index
        size = len(size)
    if branching < 1:
        raise TopologyError("branching factor must be >= 1")
    if size < 1:
        raise TopologyError("tree needs at least one node")
    if not 0 <= leader_index < size:
        raise TopologyError("leader index out of range")

    # position k in BFS order maps to roster index order[k]
    order = [leader_index] + [i for i in range(size) if i != leader_index]
    parent = [None] * size
    children = [[] for _ in range(size)]
    for pos in range(1, size):
        ppos = (pos - 1) // branching
        parent[order[pos]] = order[ppos]
        children[order[ppos]].append(order[pos])
    return TreeTopology(
        size=size,
        branching=branching,
        root=leader_index,
        parent=tuple(parent),
        children=tuple(tuple(c) for c in children),
        absent=frozenset(),
    )


def prune_and_reconnect(topology: TreeTopology, failed: Iterable[int]) -> TreeTopology:
    """Drop failed nodes; orphans re-attach to their nearest live ancestor."""
    failed = frozenset(failed)
    if topology.root in failed:
        raise LeaderFailedError("leader is in the failure set")
    out_of_range = [i for i in failed if not 0 <= i < topology.size]
    if out_of_range:
        raise TopologyError(f"failed indices out of range: {sorted(out_of_range)}")
    absent = topology.absent | failed
    orig_parent = list(topology.parent)
    parent = list(topology.parent)
    children = [list(c) for c in topology.children]

    def live_ancestor(i: int) -> int:
        # original pointers: a chain of failures resolves past every dead hop
        p = orig_parent[i]
        while p is not None and p in absent:
            p = orig_parent[p]
        if p is None:
            raise TopologyError("orphan has no live ancestor")
        return p

    for f in sorted(failed):
        p = orig_parent[f]
        if p is not None and f in children[p]:
            children[p].remove(f)
    for f in sorted(failed):
        anchor = None
        for child in list(children[f]):
            if child in absent:
                continue
            anchor = anchor if anchor is not None else live_ancestor(f)
            parent[child] = anchor
            children[anchor].append(child)
        parent[f] = None
        children[f] = []
    for f in absent:
        parent[f] = None
        children[f] = []
    # keep child lists index-sorted so every party derives identical orderings
    children = [sorted(c) for c in children]
    return TreeTopology(
        size=topology.size,
        branching=topology.branching,
        root=topology.root,
        parent=tuple(parent),
        children=tuple(tuple(c) for c in children),
        absent=absent,
    )


def tree_for(size, branching: int, leader_index: int = 0,
             failed: Iterable[int] = ()) -> TreeTopology:
    """The deterministic topology every node derives from (roster, B, failed set)."""
    topo = build_bary_tree(size, branching, leader_index)
    failed = frozenset(failed)
    if failed:
        topo = prune_and_reconnect(topo, failed)
    return topo


# ---------------------------------------------------------------------------
# Binomial swap forest schedule
# ---------------------------------------------------------------------------

def label_bits(n: int) -> int:
    """Label width b = ceil(log2 n), at least 1."""
    if n < 1:
        raise TopologyError("need at least one node")
    return max(1, (n - 1).bit_length())


def swap_partners(label: int, step: int, bits: int) -> list[int]:
    """Labels a node may swap with at `step`: bit `step` differs, all
    more-significant bits match, lower bits are free. Sorted ascending."""
    if not 0 <= step < bits:
        raise TopologyError("swap step out of range")
    if not 0 <= label < (1 << bits):
        raise TopologyError("label out of range")
    prefix = label >> (step + 1)
    flipped = 1 - ((label >> step) & 1)
    base = (prefix << (step + 1)) | (flipped << step)
    return [base | low for low in range(1 << step)]


def run_swap_aggregation(values: list) -> list:
    """Simulate b swap steps over len(values) nodes with addition as the
    aggregation; returns each node's final aggregate.

    Nodes whose canonical partner is missing (labels >= n) pull from their
    first live alternative candidate in label order, or skip the step when
    no candidate is live.
    """
    n = len(values)
    bits = label_bits(n)
    agg = list(values)
    for step in range(bits):
        nxt = list(agg)
        for j in range(n):
            canonical = j ^ (1 << step)
            if canonical < n:
                nxt[j] = agg[j] + agg[canonical]
                continue
            for cand in swap_partners(j, step, bits):
                if cand < n:
                    nxt[j] = agg[j] + agg[cand]
                    break
        agg = nxt
    return agg
