import pytest
from hypothesis import given, settings, strategies as st

from cosikit import merkle
from cosikit.merkle import (
    AuditStep,
    DigestTree,
    InclusionProof,
    MerkleTree,
    empty_tree_root,
    fold_proof,
    leaf_hash,
    verify_inclusion,
)


def test_single_leaf_root_is_leaf_hash():
    tree = MerkleTree([b"only"])
    assert tree.root == leaf_hash(b"only")
    proof = tree.prove(0)
    assert proof.path == ()
    assert verify_inclusion(tree.root, b"only", proof)


def test_empty_tree_sentinel():
    tree = MerkleTree([])
    assert tree.root == empty_tree_root()
    with pytest.raises(IndexError):
        tree.prove(0)


def test_five_leaves_all_verify():
    leaves = [bytes([i]) * 3 for i in range(5)]
    tree = MerkleTree(leaves)
    for i, leaf in enumerate(leaves):
        proof = tree.prove(i)
        assert verify_inclusion(tree.root, leaf, proof, index=i)
        assert proof.leaf_index == i


def test_wrong_index_rejected():
    leaves = [bytes([i]) for i in range(5)]
    tree = MerkleTree(leaves)
    proof = tree.prove(2)
    assert not verify_inclusion(tree.root, leaves[2], proof, index=3)
    # replaying some other leaf's data under this proof fails too
    assert not verify_inclusion(tree.root, leaves[3], proof)


def test_perturbed_leaf_rejected():
    leaves = [bytes([i]) for i in range(7)]
    tree = MerkleTree(leaves)
    for i in range(7):
        proof = tree.prove(i)
        assert not verify_inclusion(tree.root, leaves[i] + b"x", proof)


def test_root_changes_with_any_leaf():
    leaves = [bytes([i]) for i in range(6)]
    base = MerkleTree(leaves).root
    for i in range(6):
        mutated = list(leaves)
        mutated[i] = b"\xff" + leaves[i]
        assert MerkleTree(mutated).root != base


def test_proof_encoding_roundtrip():
    tree = MerkleTree([bytes([i]) for i in range(9)])
    for i in range(9):
        proof = tree.prove(i)
        again = InclusionProof.decode(proof.encode())
        assert again == proof
    with pytest.raises(ValueError):
        InclusionProof.decode(tree.prove(1).encode()[:-1])


def test_audit_step_validation():
    with pytest.raises(ValueError):
        AuditStep(2, b"\x00" * 32)
    with pytest.raises(ValueError):
        AuditStep(0, b"\x00" * 31)


def test_digest_tree_composition():
    inner_leaves = [b"a", b"b", b"c"]
    inner = MerkleTree(inner_leaves)
    other = MerkleTree([b"x"]).root
    outer = DigestTree([inner.root, other])
    composed = inner.prove(1).compose(outer.prove(0))
    assert fold_proof(leaf_hash(b"b"), composed) == outer.root
    # single-digest tree is the digest itself
    solo = DigestTree([inner.root])
    assert solo.root == inner.root
    assert solo.prove(0).path == ()


def test_compose_is_associative():
    t1 = MerkleTree([b"p", b"q"])
    t2 = DigestTree([t1.root, b"\x01" * 32])
    t3 = DigestTree([t2.root, b"\x02" * 32, b"\x03" * 32])
    p1, p2, p3 = t1.prove(0), t2.prove(0), t3.prove(0)
    assert p1.compose(p2).compose(p3) == p1.compose(p2.compose(p3))
    assert fold_proof(leaf_hash(b"p"), p1.compose(p2).compose(p3)) == t3.root


@settings(max_examples=60, deadline=None)
@given(leaves=st.lists(st.binary(min_size=0, max_size=24), min_size=1, max_size=40),
       pick=st.integers(min_value=0, max_value=10**6))
def test_every_proof_verifies(leaves, pick):
    tree = MerkleTree(leaves)
    i = pick % len(leaves)
    proof = tree.prove(i)
    assert verify_inclusion(tree.root, leaves[i], proof)
    assert proof.leaf_index == i


@settings(max_examples=40, deadline=None)
@given(digests=st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=16),
       pick=st.integers(min_value=0, max_value=10**6))
def test_digest_tree_proofs(digests, pick):
    tree = DigestTree(digests)
    i = pick % len(digests)
    assert merkle.fold_proof(digests[i], tree.prove(i)) == tree.root
