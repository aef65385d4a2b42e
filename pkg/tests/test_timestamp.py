import hashlib
import random

import pytest

from conftest import make_toy_roster, manual_round

from cosikit import merkle
from cosikit.merkle import empty_tree_root, leaf_hash
from cosikit.participation import Threshold
from cosikit.timestamp import (
    GENESIS_HASH,
    StampReceipt,
    TimestampAuthority,
    TimestampError,
    TimestampRecord,
    scalable_collect,
    time_check,
    unpack_record,
    verify_receipt,
    verify_record_chain,
)
from cosikit.topology import tree_for


def h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@pytest.fixture
def authority_env():
    secrets = [3, 4, 5]
    roster = make_toy_roster(secrets)
    calls = {"n": 0}

    def signer(statement: bytes):
        calls["n"] += 1
        return manual_round(roster, secrets, statement,
                            rng=random.Random(1000 + calls["n"]))

    return roster, TimestampAuthority(signer, round_period=10.0)


def test_record_pack_roundtrip():
    rec = TimestampRecord(7, 123456, b"\x01" * 32, b"\x02" * 32)
    assert unpack_record(rec.pack()) == rec
    assert len(rec.pack()) == 80
    with pytest.raises(TimestampError):
        unpack_record(rec.pack() + b"\x00")


def test_single_hash_round(authority_env):
    roster, authority = authority_env
    digest = h(b"doc")
    authority.submit(digest)
    record, receipts = authority.round_close(clock=500.0)
    assert record.merkle_root == leaf_hash(digest)
    assert record.prev_record_hash == GENESIS_HASH
    receipt = receipts[digest]
    assert receipt.proof.path == ()
    assert verify_receipt(roster, digest, receipt, Threshold(2)).ok


def test_four_hash_round(authority_env):
    roster, authority = authority_env
    digests = [h(bytes([i])) for i in range(4)]
    for d in digests:
        authority.submit(d)
    record, receipts = authority.round_close(clock=501.0)
    assert len(receipts) == 4
    for d in digests:
        assert verify_receipt(roster, d, receipts[d], Threshold(2)).ok
    # a tampered leaf fails
    bogus = h(b"not submitted")
    assert not verify_receipt(roster, bogus, receipts[digests[0]], Threshold(2)).ok


def test_empty_round(authority_env):
    roster, authority = authority_env
    record, receipts = authority.round_close(clock=502.0)
    assert receipts == {}
    assert record.merkle_root == empty_tree_root()


def test_round_numbers_and_chaining(authority_env):
    roster, authority = authority_env
    records = []
    for i in range(3):
        authority.submit(h(bytes([i])))
        record, _ = authority.round_close(clock=503.0 + i)
        records.append(record)
    assert [r.round_number for r in records] == [1, 2, 3]
    assert verify_record_chain(records)
    mutated = list(records)
    mutated[1] = TimestampRecord(records[1].round_number, records[1].wall_time + 1,
                                 records[1].merkle_root, records[1].prev_record_hash)
    assert not verify_record_chain(mutated)


def test_completeness_every_hash_in_one_receipt(authority_env):
    roster, authority = authority_env
    digests = [h(bytes([i, i])) for i in range(9)]
    for d in digests:
        authority.submit(d)
    _, receipts = authority.round_close(clock=504.0)
    assert sorted(receipts) == sorted(digests)
    indices = {receipts[d].proof.leaf_index for d in digests}
    assert indices == set(range(9))


def test_failed_round_retains_queue():
    secrets = [3, 4, 5]
    roster = make_toy_roster(secrets)
    state = {"fail": True}

    def flaky(statement: bytes):
        if state["fail"]:
            return None
        return manual_round(roster, secrets, statement, rng=random.Random(7))

    authority = TimestampAuthority(flaky)
    first = h(b"queued")
    authority.submit(first)
    with pytest.raises(TimestampError):
        authority.round_close(clock=505.0)
    state["fail"] = False
    second = h(b"later")
    authority.submit(second)
    record, receipts = authority.round_close(clock=506.0)
    assert record.round_number == 1  # the failed attempt consumed no round number
    assert set(receipts) == {first, second}
    assert verify_receipt(roster, first, receipts[first], Threshold(2)).ok


def test_receipt_rejected_against_wrong_round(authority_env):
    roster, authority = authority_env
    d1, d2 = h(b"a"), h(b"b")
    authority.submit(d1)
    _, first = authority.round_close(clock=507.0)
    authority.submit(d2)
    _, second = authority.round_close(clock=508.0)
    swapped = StampReceipt(record=second[d2].record, signature=second[d2].signature,
                           proof=first[d1].proof)
    assert not verify_receipt(roster, d1, swapped, Threshold(2)).ok


def test_receipt_predicate_diagnostic(authority_env):
    roster, authority = authority_env
    d = h(b"strict")
    authority.submit(d)
    _, receipts = authority.round_close(clock=509.0)
    res = verify_receipt(roster, d, receipts[d], Threshold(4))
    assert not res.ok and res.crypto_ok and not res.predicate_ok


def test_receipt_chain_linkage(authority_env):
    roster, authority = authority_env
    d1, d2 = h(b"r1"), h(b"r2")
    authority.submit(d1)
    rec1, _ = authority.round_close(clock=510.0)
    authority.submit(d2)
    rec2, receipts2 = authority.round_close(clock=511.0)
    ok = verify_receipt(roster, d2, receipts2[d2], Threshold(2), prev_record=rec1)
    assert ok.ok
    bad = verify_receipt(roster, d2, receipts2[d2], Threshold(2), prev_record=rec2)
    assert not bad.ok


def test_receipt_file_roundtrip(authority_env):
    roster, authority = authority_env
    d = h(b"file")
    authority.submit(d)
    _, receipts = authority.round_close(clock=512.0)
    blob = receipts[d].to_bytes()
    assert blob[:4] == b"TSR1"
    back = StampReceipt.from_bytes(blob, len(roster))
    assert back.record == receipts[d].record
    assert verify_receipt(roster, d, back, Threshold(2)).ok
    with pytest.raises(TimestampError):
        StampReceipt.from_bytes(blob + b"\x00", len(roster))


def test_time_check(authority_env):
    roster, authority = authority_env
    nonce = h(b"fresh nonce")
    authority.submit(nonce)
    record, receipts = authority.round_close(clock=1000.0)
    receipt = receipts[nonce]
    assert time_check(nonce, receipt, roster, Threshold(2),
                      local_clock=1030.0, tolerance=60.0)
    # boundary: exactly delta is accepted, delta+1 is not
    assert time_check(nonce, receipt, roster, Threshold(2),
                      local_clock=1060.0, tolerance=60.0)
    assert not time_check(nonce, receipt, roster, Threshold(2),
                          local_clock=1061.0, tolerance=60.0)
    # a replayed receipt cannot vouch for a nonce it never committed
    other_nonce = h(b"new nonce")
    assert not time_check(other_nonce, receipt, roster, Threshold(2),
                          local_clock=1030.0, tolerance=60.0)


# -- scalable mode ----------------------------------------------------------------

def test_scalable_single_node_reduces_to_local_tree():
    topo = tree_for(1, 2, 0)
    hashes = [h(b"x"), h(b"y")]
    tree = scalable_collect({0: hashes}, topo)
    local = merkle.MerkleTree(hashes)
    assert tree.root == local.root
    for i in range(2):
        assert merkle.verify_inclusion(tree.root, hashes[i], tree.prove_request(0, i))


def test_scalable_seven_witnesses():
    topo = tree_for(7, 2, 0)
    queues = {i: [h(bytes([i]))] for i in range(7)}
    tree = scalable_collect(queues, topo)
    for i in range(7):
        proof = tree.prove_request(i, 0)
        assert merkle.verify_inclusion(tree.root, queues[i][0], proof)
    # composition associativity: local proof + witness path == direct proof
    for i in range(7):
        local = tree.local_trees[i].prove(0)
        up = tree.witness_to_root_proof(i)
        assert local.compose(up) == tree.prove_request(i, 0)
        folded = merkle.fold_proof(merkle.leaf_hash(queues[i][0]), local.compose(up))
        assert folded == tree.root


def test_scalable_empty_witness_queues():
    topo = tree_for(3, 2, 0)
    queues = {0: [h(b"only")], 1: [], 2: []}
    tree = scalable_collect(queues, topo)
    assert merkle.verify_inclusion(tree.root, queues[0][0], tree.prove_request(0, 0))


def test_scalable_rebuild_after_topology_change():
    # a parent crash mid-round reshapes the tree; rebuilding from the same
    # queues keeps every request provable (the service re-queues and retries)
    queues = {i: [h(bytes([i, 7]))] for i in range(7)}
    before = scalable_collect(queues, tree_for(7, 2, 0))
    after = scalable_collect(queues, tree_for(7, 2, 0, failed={1}))
    assert before.root != after.root
    for i in range(7):
        if i == 1:
            continue
        proof = after.prove_request(i, 0)
        assert merkle.verify_inclusion(after.root, queues[i][0], proof)
