"""Shared fixtures: toy-group rosters with known secrets and a manual
(protocol-level) signing-round helper used to build signatures without the
engine, so library behavior is testable in isolation."""

from __future__ import annotations

import random

import pytest

from cosikit import multisig
from cosikit.group import TOY, KeyPair, prove_possession
from cosikit.multisig import MODE_NO_RESTART, MODE_RESTART, CollectiveSignature
from cosikit.participation import ParticipationSet
from cosikit.roster import RosterEntry, WitnessRoster, build_roster
from cosikit.topology import tree_for


def make_toy_roster(secrets, leader_index: int = 0, version: int = 0,
                    weights=None, rng=None) -> WitnessRoster:
    rng = rng or random.Random(1234)
    entries = []
    for i, x in enumerate(secrets):
        kp = KeyPair.from_secret(TOY, x)
        entries.append(RosterEntry(
            witness_id=f"w{i}".encode(),
            key=prove_possession(kp, rng),
            weight=1 if weights is None else weights[i],
        ))
    return build_roster(entries, leader_index=leader_index, version=version)


def manual_round(roster: WitnessRoster, secrets, statement: bytes,
                 absent=frozenset(), response_absent=frozenset(),
                 mode: int = MODE_RESTART, branching: int = 2,
                 rng=None) -> CollectiveSignature:
    """Run the signing math directly (no engine): `absent` witnesses never
    commit, `response_absent` witnesses commit but never respond (no-restart
    mode only, they become commit exceptions)."""
    rng = rng or random.Random(99)
    n = len(roster)
    absent = frozenset(absent)
    response_absent = frozenset(response_absent)
    commit_present = frozenset(range(n)) - absent
    responders = commit_present - response_absent

    nonces = {i: TOY.random_scalar(rng) for i in sorted(commit_present)}
    commits = {i: TOY.generator ** v for i, v in nonces.items()}
    aggregate = multisig.aggregate_elements(TOY, commits.values())

    commit_root = None
    exceptions = ()
    if mode == MODE_NO_RESTART:
        topo = tree_for(n, branching, roster.leader_index, absent)
        tree = multisig.build_commit_tree(topo, commits)
        commit_root = tree.root
        challenge = multisig.collective_challenge(aggregate, statement, commit_root)
        exceptions = tuple(
            multisig.CommitException(i, commits[i], tree.prove(i))
            for i in sorted(response_absent)
        )
    else:
        if response_absent:
            raise ValueError("response-phase dropouts need no-restart mode")
        challenge = multisig.collective_challenge(aggregate, statement)

    total = TOY.scalar(0)
    for i in sorted(responders):
        secret = TOY.scalar(secrets[i])
        total = total + multisig.response_share(nonces[i], challenge, secret)
    pset = ParticipationSet(count=n, response_present=responders,
                            commit_present=commit_present)
    return CollectiveSignature(group=TOY, mode=mode, challenge=challenge,
                               response=total, participation=pset,
                               commit_root=commit_root, exceptions=exceptions)


@pytest.fixture
def toy_rng():
    return random.Random(42)


@pytest.fixture
def toy_roster3():
    return make_toy_roster([3, 4, 5])


@pytest.fixture
def toy_secrets3():
    return [3, 4, 5]
