import random

import pytest
from hypothesis import given, settings, strategies as st

from cosikit.topology import (
    LeaderFailedError,
    TopologyError,
    build_bary_tree,
    label_bits,
    prune_and_reconnect,
    run_swap_aggregation,
    swap_partners,
    tree_for,
)


def test_single_node():
    topo = build_bary_tree(1, 4)
    assert topo.depth == 0
    assert topo.root == 0
    assert topo.children[0] == ()


def test_complete_binary_seven():
    topo = build_bary_tree(7, 2)
    assert topo.depth == 2
    assert topo.children[0] == (1, 2)
    assert topo.children[1] == (3, 4)
    assert topo.children[2] == (5, 6)
    assert all(topo.children[i] == () for i in (3, 4, 5, 6))
    assert topo.parent[3] == 1 and topo.parent[6] == 2


def test_branching_validation():
    with pytest.raises(TopologyError):
        build_bary_tree(4, 0)
    with pytest.raises(TopologyError):
        build_bary_tree(0, 2)


def test_nonzero_leader_layout():
    topo = build_bary_tree(5, 2, leader_index=3)
    assert topo.root == 3
    assert topo.parent[3] is None
    # BFS order over roster order with the leader first: [3, 0, 1, 2, 4]
    assert topo.children[3] == (0, 1)
    assert topo.children[0] == (2, 4)


def test_determinism():
    a = build_bary_tree(33, 4, leader_index=5)
    b = build_bary_tree(33, 4, leader_index=5)
    assert a.digest() == b.digest()
    assert a == b
    c = build_bary_tree(33, 5, leader_index=5)
    assert c.digest() != a.digest()


def test_descendant_counts_consistent():
    topo = build_bary_tree(23, 3)
    for i in range(23):
        expect = 1 + sum(topo.descendant_count(c) for c in topo.children[i])
        assert topo.descendant_count(i) == expect
    assert topo.descendant_count(0) == 23


def test_dump_renders_every_member():
    topo = tree_for(7, 2, 0, failed={3})
    text = topo.dump()
    lines = text.splitlines()
    assert len(lines) == 6
    assert "(leader)" in lines[0]


# -- pruning ---------------------------------------------------------------------

def test_prune_empty_is_identity():
    topo = build_bary_tree(7, 2)
    assert prune_and_reconnect(topo, set()) == topo


def test_prune_depth_one_node():
    topo = build_bary_tree(7, 2)
    pruned = prune_and_reconnect(topo, {1})
    # node 1's children re-attach to the root, which now has three children
    assert pruned.children[0] == (2, 3, 4)
    assert pruned.parent[3] == 0 and pruned.parent[4] == 0
    assert pruned.parent[1] is None
    assert pruned.members == frozenset({0, 2, 3, 4, 5, 6})


def test_prune_all_leaves():
    topo = build_bary_tree(7, 2)
    pruned = prune_and_reconnect(topo, {3, 4, 5, 6})
    assert pruned.members == frozenset({0, 1, 2})
    assert pruned.depth == 1


def test_prune_chain_of_failures():
    topo = build_bary_tree(15, 2)
    # both 1 and its child 3 fail: 3's children hop all the way to the root
    pruned = prune_and_reconnect(topo, {1, 3})
    assert pruned.parent[7] == 0 and pruned.parent[8] == 0
    assert pruned.parent[4] == 0
    assert set(pruned.children[0]) == {2, 4, 7, 8}


def test_prune_leader_fails():
    topo = build_bary_tree(7, 2)
    with pytest.raises(LeaderFailedError):
        prune_and_reconnect(topo, {0})


def test_prune_out_of_range():
    topo = build_bary_tree(3, 2)
    with pytest.raises(TopologyError):
        prune_and_reconnect(topo, {9})


@settings(max_examples=60, deadline=None)
@given(n=st.integers(min_value=2, max_value=64),
       branching=st.integers(min_value=1, max_value=5),
       seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_prune_preserves_survivors(n, branching, seed):
    rng = random.Random(seed)
    failed = {i for i in range(1, n) if rng.random() < 0.3}
    topo = tree_for(n, branching, 0, failed)
    assert topo.members == frozenset(range(n)) - failed
    # exactly one root, acyclic, every member reachable
    seen = set()
    stack = [0]
    while stack:
        cur = stack.pop()
        assert cur not in seen
        seen.add(cur)
        stack.extend(topo.children[cur])
    assert seen == topo.members
    for m in topo.members - {0}:
        assert topo.parent[m] in topo.members


# -- swap forest -------------------------------------------------------------------

def test_label_bits():
    assert label_bits(1) == 1
    assert label_bits(2) == 1
    assert label_bits(3) == 2
    assert label_bits(64) == 6
    assert label_bits(65) == 7


def test_swap_partner_examples():
    # a node labeled xx00 may swap with either xx10 or xx11 at step 1
    assert swap_partners(0b0000, 1, 4) == [0b0010, 0b0011]
    assert swap_partners(0, 0, 1) == [1]
    assert swap_partners(0b101, 2, 3) == [0b000, 0b001, 0b010, 0b011]


def test_swap_partners_brute_force_oracle():
    for bits in range(1, 5):
        for label in range(1 << bits):
            for step in range(bits):
                oracle = [k for k in range(1 << bits)
                          if (k >> (step + 1)) == (label >> (step + 1))
                          and ((k >> step) & 1) != ((label >> step) & 1)]
                assert swap_partners(label, step, bits) == oracle


def test_swap_step_zero_is_singleton():
    for bits in range(1, 5):
        for label in range(1 << bits):
            assert len(swap_partners(label, 0, bits)) == 1


@settings(max_examples=60, deadline=None)
@given(n=st.integers(min_value=1, max_value=64))
def test_swap_aggregation_completeness(n):
    values = list(range(1, n + 1))
    final = run_swap_aggregation(values)
    assert final == [sum(values)] * n
