"""Message-driven state machines for collective signing rounds.

One `SigningNode` per roster member. The node whose index matches the
current view's leader drives rounds (announce, collect commits, challenge,
collect responses, emit the signature); every node aggregates its subtree.
Failure handling is mode-dependent: restart mode prunes failed witnesses and
replays the round from phase 1, no-restart mode documents commit-phase
dropouts in the participation set and response-phase dropouts as commit
exceptions, bridging past dead interior nodes to their children.

Nodes are purely reactive: they consume one message or timer event at a time
and return effects (messages to send, timers to arm, round results). The
hosting runtime (the simulator, or the TCP runner in the CLI) owns delivery
and clocks and must serialize events per node.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from . import multisig, participation
from .group import GroupElement, KeyPair, Scalar, Signature, schnorr_sign, schnorr_verify
from .multisig import (
    MODE_NO_RESTART,
    MODE_RESTART,
    CollectiveSignature,
    CommitException,
    CommitStep,
    CommitTreeProof,
    commit_leaf_digest,
    commit_node_digest,
    fold_commit_proof,
)
from .participation import ParticipationSet
from .roster import WitnessRoster
from .topology import LeaderFailedError, TreeTopology, tree_for

logger = logging.getLogger("cosikit.engine")

STATEMENT_AT_ANNOUNCE = 0
STATEMENT_AT_CHALLENGE = 1

PHASE_COMMIT = "commit"
PHASE_RESPONSE = "response"
PHASE_DONE = "done"
PHASE_REFUSED = "refused"

DIGEST = 32


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RoundConfig:
    round_number: int
    mode: int = MODE_RESTART
    statement_timing: int = STATEMENT_AT_ANNOUNCE
    branching: int = 3
    max_restarts: int = 2
    min_participants: int = 1
    rtt_hint: float = 0.2
    phase_timeout: float | None = None  # per-level wait; default 4 x rtt_hint
    validation_policy: str = "accept-all"

    def __post_init__(self):
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")
        if self.phase_timeout is not None and self.phase_timeout <= 0:
            raise ValueError("phase timeout must be positive")

    @property
    def timeout_base(self) -> float:
        return self.phase_timeout if self.phase_timeout is not None else 4.0 * self.rtt_hint


# ---------------------------------------------------------------------------
# Statement validation hooks
# ---------------------------------------------------------------------------

@dataclass
class ValidationContext:
    now: float
    node_index: int
    store: dict


def accept_all(statement: bytes, ctx: ValidationContext) -> bool:
    return True


def make_timestamp_window_hook(skew: float = 60.0):
    """Reject records whose wall-time strays more than `skew` seconds from
    this witness's clock."""

    def hook(statement: bytes, ctx: ValidationContext) -> bool:
        from .timestamp import unpack_record

        try:
            record = unpack_record(statement)
        except ValueError:
            return False
        return abs(record.wall_time - ctx.now) <= skew

    return hook


def make_hash_chain_hook():
    """Accept sequence-numbered, hash-chained log records: the sequence must
    advance by exactly one and the previous-record hash must match this
    witness's head. Layout: seq (8, big-endian) | prev-hash (32) | payload."""

    def hook(statement: bytes, ctx: ValidationContext) -> bool:
        if len(statement) < 40:
            return False
        seq = int.from_bytes(statement[:8], "big")
        prev = statement[8:40]
        head = ctx.store.setdefault("chain_head", b"\x00" * 32)
        last_seq = ctx.store.setdefault("chain_seq", 0)
        if seq != last_seq + 1 or prev != head:
            return False
        ctx.store["chain_seq"] = seq
        ctx.store["chain_head"] = hashlib.sha256(statement).digest()
        return True

    return hook


def chain_record(seq: int, prev_hash: bytes, payload: bytes) -> bytes:
    return seq.to_bytes(8, "big") + prev_hash + payload


HOOKS: dict[str, Callable[[], Callable]] = {
    "accept-all": lambda: accept_all,
    "timestamp-window": make_timestamp_window_hook,
    "hash-chain": make_hash_chain_hook,
}


# ---------------------------------------------------------------------------
# Wire encoding helpers
# ---------------------------------------------------------------------------

def _u16(v: int) -> bytes:
    return v.to_bytes(2, "big")


def _u32(v: int) -> bytes:
    return v.to_bytes(4, "big")


def _u64(v: int) -> bytes:
    return v.to_bytes(8, "big")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ValueError("truncated message")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def done(self) -> None:
        if self.off != len(self.data):
            raise ValueError("trailing bytes in message")


def _enc_idxset(indices: Iterable[int]) -> bytes:
    idx = sorted(indices)
    return _u16(len(idx)) + b"".join(_u32(i) for i in idx)


def _dec_idxset(r: _Reader) -> frozenset[int]:
    n = r.u16()
    return frozenset(r.u32() for _ in range(n))


def _enc_opt_bytes(data: Optional[bytes]) -> bytes:
    if data is None:
        return b"\x00"
    return b"\x01" + _u32(len(data)) + data


def _dec_opt_bytes(r: _Reader) -> Optional[bytes]:
    if r.u8() == 0:
        return None
    return r.take(r.u32())


def _enc_steps(steps: tuple[CommitStep, ...]) -> bytes:
    out = [_u16(len(steps))]
    for s in steps:
        out.append(_u16(s.position))
        out.append(_u16(len(s.others)))
        out.extend(s.others)
    return b"".join(out)


def _dec_steps(r: _Reader) -> tuple[CommitStep, ...]:
    n = r.u16()
    steps = []
    for _ in range(n):
        pos = r.u16()
        k = r.u16()
        others = tuple(r.take(DIGEST) for _ in range(k))
        steps.append(CommitStep(pos, others))
    return tuple(steps)


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

TAG_ANNOUNCE = 1
TAG_COMMIT = 2
TAG_CHALLENGE = 3
TAG_RESPONSE = 4
TAG_REFUSE = 5
TAG_VIEWCHANGE = 6
TAG_STAMP_REQUEST = 7
TAG_STAMP_REPLY = 8


@dataclass(frozen=True)
class Announce:
    view: int
    round: int
    attempt: int
    mode: int
    timing: int
    branching: int
    timeout_ms: int
    topology_digest: bytes
    failed: frozenset[int]
    sender: int
    statement: Optional[bytes] = None

    tag = TAG_ANNOUNCE

    def encode_body(self, group) -> bytes:
        return (_u32(self.view) + _u32(self.round) + _u16(self.attempt)
                + bytes([self.mode, self.timing]) + _u16(self.branching)
                + _u32(self.timeout_ms) + self.topology_digest
                + _enc_idxset(self.failed) + _u32(self.sender)
                + _enc_opt_bytes(self.statement))

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "Announce":
        return cls(view=r.u32(), round=r.u32(), attempt=r.u16(), mode=r.u8(),
                   timing=r.u8(), branching=r.u16(), timeout_ms=r.u32(),
                   topology_digest=r.take(DIGEST), failed=_dec_idxset(r),
                   sender=r.u32(), statement=_dec_opt_bytes(r))


@dataclass(frozen=True)
class SubtreeSummary:
    """What a node reports about one direct contributor: enough for the
    recipient to build exception records and bridge one level down."""

    index: int
    commit: GroupElement  # the contributor's individual commit
    aggregate: GroupElement  # its subtree aggregate commit
    tree_hash: bytes
    contributors: tuple[tuple[int, bytes], ...]  # (index, tree hash) of its contributors
    absent: frozenset[int]

    def encode(self) -> bytes:
        out = [_u32(self.index), self.commit.encode(), self.aggregate.encode(),
               self.tree_hash, _u16(len(self.contributors))]
        for idx, digest in self.contributors:
            out.append(_u32(idx))
            out.append(digest)
        out.append(_enc_idxset(self.absent))
        return b"".join(out)

    @classmethod
    def decode(cls, r: _Reader, group) -> "SubtreeSummary":
        index = r.u32()
        commit = group.decode_element(r.take(group.element_size))
        aggregate = group.decode_element(r.take(group.element_size))
        tree_hash = r.take(DIGEST)
        n = r.u16()
        contribs = tuple((r.u32(), r.take(DIGEST)) for _ in range(n))
        absent = _dec_idxset(r)
        return cls(index, commit, aggregate, tree_hash, contribs, absent)


@dataclass(frozen=True)
class Commit:
    view: int
    round: int
    attempt: int
    sender: int
    aggregate: GroupElement  # subtree aggregate commit
    commit: GroupElement  # sender's individual commit
    tree_hash: bytes
    absent: frozenset[int]  # commit-phase absences within the sender's subtree
    failed: frozenset[int]
    refused: frozenset[int]
    summaries: tuple[SubtreeSummary, ...]

    tag = TAG_COMMIT

    def encode_body(self, group) -> bytes:
        out = [_u32(self.view), _u32(self.round), _u16(self.attempt), _u32(self.sender),
               self.aggregate.encode(), self.commit.encode(), self.tree_hash,
               _enc_idxset(self.absent), _enc_idxset(self.failed),
               _enc_idxset(self.refused), _u16(len(self.summaries))]
        out.extend(s.encode() for s in self.summaries)
        return b"".join(out)

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "Commit":
        view, rnd, attempt, sender = r.u32(), r.u32(), r.u16(), r.u32()
        aggregate = group.decode_element(r.take(group.element_size))
        commit = group.decode_element(r.take(group.element_size))
        tree_hash = r.take(DIGEST)
        absent = _dec_idxset(r)
        failed = _dec_idxset(r)
        refused = _dec_idxset(r)
        n = r.u16()
        summaries = tuple(SubtreeSummary.decode(r, group) for _ in range(n))
        return cls(view, rnd, attempt, sender, aggregate, commit, tree_hash,
                   absent, failed, refused, summaries)


@dataclass(frozen=True)
class Challenge:
    view: int
    round: int
    attempt: int
    sender: int
    challenge: Scalar
    aggregate_commit: GroupElement
    commit_root: Optional[bytes]
    statement: Optional[bytes]
    steps: tuple[CommitStep, ...]  # path from the root's level down to the recipient

    tag = TAG_CHALLENGE

    def encode_body(self, group) -> bytes:
        return (_u32(self.view) + _u32(self.round) + _u16(self.attempt)
                + _u32(self.sender) + self.challenge.encode()
                + self.aggregate_commit.encode()
                + _enc_opt_bytes(self.commit_root) + _enc_opt_bytes(self.statement)
                + _enc_steps(self.steps))

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "Challenge":
        view, rnd, attempt, sender = r.u32(), r.u32(), r.u16(), r.u32()
        challenge = group.decode_scalar(r.take(group.scalar_size))
        aggregate = group.decode_element(r.take(group.element_size))
        root = _dec_opt_bytes(r)
        statement = _dec_opt_bytes(r)
        steps = _dec_steps(r)
        return cls(view, rnd, attempt, sender, challenge, aggregate, root,
                   statement, steps)


@dataclass(frozen=True)
class WireException:
    index: int
    commit: GroupElement
    steps: tuple[CommitStep, ...]

    def encode(self) -> bytes:
        return _u32(self.index) + self.commit.encode() + _enc_steps(self.steps)

    @classmethod
    def decode(cls, r: _Reader, group) -> "WireException":
        index = r.u32()
        commit = group.decode_element(r.take(group.element_size))
        steps = _dec_steps(r)
        return cls(index, commit, steps)


@dataclass(frozen=True)
class Response:
    view: int
    round: int
    attempt: int
    sender: int
    aggregate_response: Scalar
    absent: frozenset[int]  # response-phase dropouts within the sender's subtree
    failed: frozenset[int]
    refused: frozenset[int]
    exceptions: tuple[WireException, ...]

    tag = TAG_RESPONSE

    def encode_body(self, group) -> bytes:
        out = [_u32(self.view), _u32(self.round), _u16(self.attempt), _u32(self.sender),
               self.aggregate_response.encode(), _enc_idxset(self.absent),
               _enc_idxset(self.failed), _enc_idxset(self.refused),
               _u16(len(self.exceptions))]
        out.extend(e.encode() for e in self.exceptions)
        return b"".join(out)

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "Response":
        view, rnd, attempt, sender = r.u32(), r.u32(), r.u16(), r.u32()
        agg = group.decode_scalar(r.take(group.scalar_size))
        absent = _dec_idxset(r)
        failed = _dec_idxset(r)
        refused = _dec_idxset(r)
        n = r.u16()
        exceptions = tuple(WireException.decode(r, group) for _ in range(n))
        return cls(view, rnd, attempt, sender, agg, absent, failed, refused, exceptions)


REFUSE_STATEMENT = 0
REFUSE_STALE = 1
REFUSE_PROOF = 2

@dataclass(frozen=True)
class Refuse:
    view: int
    round: int
    attempt: int
    sender: int
    reason: int

    tag = TAG_REFUSE

    def encode_body(self, group) -> bytes:
        return (_u32(self.view) + _u32(self.round) + _u16(self.attempt)
                + _u32(self.sender) + bytes([self.reason]))

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "Refuse":
        return cls(view=r.u32(), round=r.u32(), attempt=r.u16(), sender=r.u32(),
                   reason=r.u8())


@dataclass(frozen=True)
class ViewChange:
    proposed_view: int
    signer: int
    signature: Signature

    tag = TAG_VIEWCHANGE

    def encode_body(self, group) -> bytes:
        return _u32(self.proposed_view) + _u32(self.signer) + self.signature.encode()

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "ViewChange":
        proposed, signer = r.u32(), r.u32()
        sig = Signature.decode(group, r.take(2 * group.scalar_size))
        return cls(proposed, signer, sig)


@dataclass(frozen=True)
class StampRequest:
    digest: bytes

    tag = TAG_STAMP_REQUEST

    def encode_body(self, group) -> bytes:
        return self.digest

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "StampRequest":
        return cls(digest=r.take(DIGEST))


@dataclass(frozen=True)
class StampReply:
    ok: bool
    payload: bytes

    tag = TAG_STAMP_REPLY

    def encode_body(self, group) -> bytes:
        return bytes([1 if self.ok else 0]) + _u32(len(self.payload)) + self.payload

    @classmethod
    def decode_body(cls, r: _Reader, group) -> "StampReply":
        ok = r.u8() == 1
        return cls(ok=ok, payload=r.take(r.u32()))


_MESSAGE_TYPES = {
    TAG_ANNOUNCE: Announce,
    TAG_COMMIT: Commit,
    TAG_CHALLENGE: Challenge,
    TAG_RESPONSE: Response,
    TAG_REFUSE: Refuse,
    TAG_VIEWCHANGE: ViewChange,
    TAG_STAMP_REQUEST: StampRequest,
    TAG_STAMP_REPLY: StampReply,
}

Message = (Announce | Commit | Challenge | Response | Refuse | ViewChange
           | StampRequest | StampReply)


def encode_message(msg, group) -> bytes:
    """Length-prefixed frame: length (4, big-endian) | tag (1) | body."""
    body = msg.encode_body(group)
    return _u32(1 + len(body)) + bytes([msg.tag]) + body


def decode_frame_body(data: bytes, group):
    """Decode the tag+body part of a frame (without the length prefix)."""
    if not data:
        raise ValueError("empty frame")
    cls = _MESSAGE_TYPES.get(data[0])
    if cls is None:
        raise ValueError(f"unknown message tag {data[0]}")
    r = _Reader(data[1:])
    msg = cls.decode_body(r, group)
    r.done()
    return msg


# ---------------------------------------------------------------------------
# Effects returned by the state machines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Send:
    dest: int
    msg: Message


@dataclass(frozen=True)
class SetTimer:
    key: tuple
    delay: float


@dataclass(frozen=True)
class RoundDone:
    result: "RoundResult"


@dataclass(frozen=True)
class ViewActivated:
    view: int
    leader: int


@dataclass(frozen=True)
class RoundResult:
    ok: bool
    round: int
    view: int
    attempts: int
    statement: Optional[bytes] = None
    signature: Optional[CollectiveSignature] = None
    reason: str = ""
    failed: frozenset[int] = frozenset()
    refused: frozenset[int] = frozenset()


# ---------------------------------------------------------------------------
# Per-round mutable state
# ---------------------------------------------------------------------------

@dataclass
class _CommitRecord:
    index: int
    commit: GroupElement
    aggregate: GroupElement
    tree_hash: bytes
    participants: frozenset[int]
    absent: frozenset[int]
    summaries: dict[int, SubtreeSummary]


@dataclass
class _RoundState:
    key: tuple  # (view, round, attempt)
    config: RoundConfig
    topology: TreeTopology
    mode: int
    timing: int
    timeout_base: float
    parent: Optional[int]  # None at the leader
    statement: Optional[bytes] = None
    phase: str = PHASE_COMMIT

    nonce: Optional[Scalar] = None
    own_commit: Optional[GroupElement] = None

    pending_commit: set = field(default_factory=set)
    records: dict = field(default_factory=dict)  # index -> _CommitRecord
    absent: set = field(default_factory=set)
    failed: set = field(default_factory=set)
    refused: set = field(default_factory=set)
    bridge_rounds: int = 0

    contributors: list = field(default_factory=list)  # sorted indices
    inputs: list = field(default_factory=list)  # commit-tree inputs at this node
    tree_hash: Optional[bytes] = None
    aggregate_commit: Optional[GroupElement] = None
    participants: frozenset = frozenset()

    challenge: Optional[Scalar] = None
    commit_root: Optional[bytes] = None
    global_commit: Optional[GroupElement] = None
    proof_steps: tuple = ()
    return_to: Optional[int] = None  # where the response goes (may be a bridger)

    pending_resp: set = field(default_factory=set)
    resp_shares: dict = field(default_factory=dict)  # index -> Scalar aggregate
    resp_absent: set = field(default_factory=set)
    exceptions: list = field(default_factory=list)  # WireException, anchored at this node
    unresolvable: Optional[str] = None
    sent_response: Optional[Response] = None

    def live_summary_sources(self) -> dict[int, SubtreeSummary]:
        out = {}
        for rec in self.records.values():
            out.update(rec.summaries)
        return out


# ---------------------------------------------------------------------------
# The signing node
# ---------------------------------------------------------------------------

def view_leader(roster: WitnessRoster, view: int) -> int:
    """Deterministic leader schedule: the roster index view mod N."""
    return view % len(roster)


def view_change_threshold(n: int) -> int:
    """2f+1 of 3f+1: the supermajority needed to activate a new view."""
    f = (n - 1) // 3
    return 2 * f + 1


def view_vote_statement(roster: WitnessRoster, view: int) -> bytes:
    return b"cosi/view-change/v1" + view.to_bytes(8, "big") + roster.digest()


class SigningNode:
    """State machine for one roster member (leader and witness roles)."""

    def __init__(self, index: int, roster: WitnessRoster, keypair: KeyPair, rng,
                 validation_hook: Callable[[bytes, ValidationContext], bool] | None = None,
                 allow_minority_views: bool = False):
        if roster.public_key(index) != keypair.public:
            raise EngineError("keypair does not match the roster entry")
        self.index = index
        self.roster = roster
        self.group = roster.group
        self.keypair = keypair
        self.rng = rng
        self.hook = validation_hook or accept_all
        self.hook_store: dict = {}
        self.allow_minority_views = allow_minority_views

        self.current_view = 0
        self.view_votes: dict[int, dict[int, Signature]] = {}
        self.rounds: dict[tuple, _RoundState] = {}
        self.round_logs: list[RoundResult] = []
        # (view, round, attempt, nonce value, challenge value) for audits
        self.nonce_log: list[tuple] = []

    # -- plumbing --

    def _ctx(self, now: float) -> ValidationContext:
        return ValidationContext(now=now, node_index=self.index, store=self.hook_store)

    def is_leader(self, view: Optional[int] = None) -> bool:
        return view_leader(self.roster, self.current_view if view is None else view) == self.index

    def _state(self, key: tuple) -> Optional[_RoundState]:
        return self.rounds.get(key)

    def _trim_round_state(self, keep: int = 16) -> None:
        while len(self.rounds) > keep:
            del self.rounds[min(self.rounds)]

    def _wait_budget(self, st: _RoundState) -> float:
        height = _subtree_height(st.topology, self.index)
        return st.timeout_base * (height + 1)

    # ------------------------------------------------------------------
    # Leader entry point
    # ------------------------------------------------------------------

    def start_round(self, config: RoundConfig, statement, now: float,
                    known_failed: Iterable[int] = ()) -> list:
        """Begin a signing round in the current view. `statement` is bytes, or
        a zero-argument callable for challenge-phase (late-bound) statements."""
        if not self.is_leader():
            raise EngineError(f"node {self.index} does not lead view {self.current_view}")
        self._round_failed_base = frozenset(known_failed)
        self._round_refused: frozenset = frozenset()
        self._round_config = config
        self._round_statement_src = statement
        return self._start_attempt(config, 0, self._round_failed_base, now)

    def _start_attempt(self, config: RoundConfig, attempt: int,
                       failed: frozenset, now: float) -> list:
        key = (self.current_view, config.round_number, attempt)
        try:
            topo = tree_for(len(self.roster), config.branching, self.index, failed)
        except LeaderFailedError:
            raise EngineError("leader cannot be in its own failure set")
        if len(topo.members) < config.min_participants:
            return [RoundDone(self._failure(config, attempt,
                                            "below minimum participation before start",
                                            failed, self._round_refused))]
        statement = None
        if config.statement_timing == STATEMENT_AT_ANNOUNCE:
            statement = self._materialize_statement()
        st = _RoundState(
            key=key, config=config, topology=topo, mode=config.mode,
            timing=config.statement_timing, timeout_base=config.timeout_base,
            parent=None, statement=statement,
        )
        self.rounds[key] = st
        self._trim_round_state()
        effects = self._begin_participation(st, now)
        announce = Announce(
            view=key[0], round=key[1], attempt=key[2], mode=st.mode,
            timing=st.timing, branching=config.branching,
            timeout_ms=int(st.timeout_base * 1000), topology_digest=topo.digest(),
            failed=frozenset(failed), sender=self.index, statement=statement,
        )
        for child in st.topology.children[self.index]:
            effects.append(Send(child, announce))
        return effects

    def _materialize_statement(self) -> bytes:
        src = self._round_statement_src
        return src() if callable(src) else src

    def _failure(self, config: RoundConfig, attempts: int, reason: str,
                 failed: frozenset, refused: frozenset = frozenset()) -> RoundResult:
        result = RoundResult(ok=False, round=config.round_number, view=self.current_view,
                             attempts=attempts + 1, reason=reason,
                             failed=failed, refused=refused)
        self.round_logs.append(result)
        return result

    # ------------------------------------------------------------------
    # Shared participation logic
    # ------------------------------------------------------------------

    def _begin_participation(self, st: _RoundState, now: float) -> list:
        """Draw a fresh nonce and either send the commit up (leaf) or start
        collecting children commits."""
        st.nonce = self.group.random_scalar(self.rng)
        st.own_commit = self.group.generator ** st.nonce
        st.pending_commit = set(st.topology.children[self.index])
        effects: list = []
        if not st.pending_commit:
            effects.extend(self._finalize_commit(st, now))
        else:
            effects.append(SetTimer(("commit",) + st.key, self._wait_budget(st)))
        return effects

    def _finalize_commit(self, st: _RoundState, now: float) -> list:
        contributors = sorted(st.records)
        st.contributors = contributors
        leaf = commit_leaf_digest(st.own_commit)
        if contributors:
            st.inputs = [leaf] + [st.records[c].tree_hash for c in contributors]
            st.tree_hash = commit_node_digest(st.inputs)
        else:
            st.inputs = [leaf]
            st.tree_hash = leaf
        agg = st.own_commit
        participants = {self.index}
        for c in contributors:
            agg = agg * st.records[c].aggregate
            participants |= st.records[c].participants
        st.aggregate_commit = agg
        st.participants = frozenset(participants)
        st.absent |= st.topology.descendants(self.index) - st.participants
        st.phase = PHASE_RESPONSE

        if st.parent is None:
            return self._leader_after_commit(st, now)
        summaries = tuple(self._summary_of(st, c) for c in contributors)
        msg = Commit(
            view=st.key[0], round=st.key[1], attempt=st.key[2], sender=self.index,
            aggregate=st.aggregate_commit, commit=st.own_commit,
            tree_hash=st.tree_hash, absent=frozenset(st.absent),
            failed=frozenset(st.failed), refused=frozenset(st.refused),
            summaries=summaries,
        )
        return [Send(st.parent, msg)]

    def _summary_of(self, st: _RoundState, c: int) -> SubtreeSummary:
        rec = st.records[c]
        contribs = tuple(sorted((i, s.tree_hash) for i, s in rec.summaries.items()))
        return SubtreeSummary(index=c, commit=rec.commit, aggregate=rec.aggregate,
                              tree_hash=rec.tree_hash, contributors=contribs,
                              absent=rec.absent)

    def _step_for(self, st: _RoundState, child: int) -> CommitStep:
        """Audit step placing `child`'s subtree hash within this node's inputs."""
        pos = 1 + st.contributors.index(child)
        others = tuple(st.inputs[:pos] + st.inputs[pos + 1:])
        return CommitStep(pos, others)

    # ------------------------------------------------------------------
    # Message handling
    # ------------------------------------------------------------------

    def handle_message(self, msg: Message, now: float) -> list:
        if isinstance(msg, ViewChange):
            return self._on_view_change(msg, now)
        if isinstance(msg, Announce):
            return self._on_announce(msg, now)
        key = (msg.view, msg.round, msg.attempt)
        if msg.view != self.current_view:
            logger.debug("node %d drops stale message for view %d", self.index, msg.view)
            return []
        st = self._state(key)
        if st is None:
            logger.debug("node %d has no state for round %s", self.index, key)
            return []
        if isinstance(msg, Commit):
            return self._on_commit(st, msg, now)
        if isinstance(msg, Challenge):
            return self._on_challenge(st, msg, now)
        if isinstance(msg, Response):
            return self._on_response(st, msg, now)
        if isinstance(msg, Refuse):
            return self._on_refuse(st, msg, now)
        return []

    # -- announce --

    def _on_announce(self, msg: Announce, now: float) -> list:
        if msg.view != self.current_view:
            return []
        key = (msg.view, msg.round, msg.attempt)
        st = self._state(key)
        if st is not None:
            # Re-announce, possibly from a bridging ancestor: adopt it as the
            # new parent and resend our commit (or refusal) if we already
            # produced one.
            if st.phase == PHASE_REFUSED:
                return [Send(msg.sender, Refuse(view=key[0], round=key[1],
                                                attempt=key[2], sender=self.index,
                                                reason=REFUSE_STATEMENT))]
            st.parent = msg.sender
            if st.phase != PHASE_COMMIT and st.tree_hash is not None:
                return self._finalize_commit_resend(st)
            return []
        leader = view_leader(self.roster, msg.view)
        topo = tree_for(len(self.roster), msg.branching, leader, msg.failed)
        if topo.digest() != msg.topology_digest:
            logger.warning("node %d: announce topology digest mismatch", self.index)
            return []
        if self.index in msg.failed or self.index not in topo.members:
            return []
        st = _RoundState(
            key=key, config=RoundConfig(round_number=msg.round, mode=msg.mode,
                                        statement_timing=msg.timing,
                                        branching=msg.branching),
            topology=topo, mode=msg.mode, timing=msg.timing,
            timeout_base=msg.timeout_ms / 1000.0,
            parent=msg.sender, statement=msg.statement,
        )
        self.rounds[key] = st
        self._trim_round_state()
        if msg.statement is not None and msg.timing == STATEMENT_AT_ANNOUNCE:
            if not self.hook(msg.statement, self._ctx(now)):
                st.phase = PHASE_REFUSED
                return [Send(st.parent, Refuse(view=key[0], round=key[1], attempt=key[2],
                                               sender=self.index,
                                               reason=REFUSE_STATEMENT))]
        effects = []
        announce_down = replace(msg, sender=self.index)
        for child in topo.children[self.index]:
            effects.append(Send(child, announce_down))
        effects.extend(self._begin_participation(st, now))
        return effects

    def _finalize_commit_resend(self, st: _RoundState) -> list:
        summaries = tuple(self._summary_of(st, c) for c in st.contributors)
        msg = Commit(
            view=st.key[0], round=st.key[1], attempt=st.key[2], sender=self.index,
            aggregate=st.aggregate_commit, commit=st.own_commit,
            tree_hash=st.tree_hash, absent=frozenset(st.absent),
            failed=frozenset(st.failed), refused=frozenset(st.refused),
            summaries=summaries,
        )
        return [Send(st.parent, msg)]

    # -- commit collection --

    def _on_commit(self, st: _RoundState, msg: Commit, now: float) -> list:
        if st.phase != PHASE_COMMIT or msg.sender not in st.pending_commit:
            return []
        subtree = st.topology.descendants(msg.sender)
        participants = subtree - msg.absent
        if msg.sender not in participants:
            logger.warning("node %d: commit from %d excludes itself", self.index, msg.sender)
            return []
        st.records[msg.sender] = _CommitRecord(
            index=msg.sender, commit=msg.commit, aggregate=msg.aggregate,
            tree_hash=msg.tree_hash, participants=frozenset(participants),
            absent=msg.absent, summaries={s.index: s for s in msg.summaries},
        )
        st.failed |= msg.failed
        st.refused |= msg.refused
        st.pending_commit.discard(msg.sender)
        if not st.pending_commit:
            return self._finalize_commit(st, now)
        return []

    def _on_refuse(self, st: _RoundState, msg: Refuse, now: float) -> list:
        if st.phase == PHASE_COMMIT and msg.sender in st.pending_commit:
            st.refused.add(msg.sender)
            return self._commit_child_gone(st, msg.sender, now, crashed=False)
        if st.phase == PHASE_RESPONSE and msg.sender in st.pending_resp:
            st.refused.add(msg.sender)
            return self._response_child_gone(st, msg.sender, now, crashed=False)
        return []

    def _commit_child_gone(self, st: _RoundState, child: int, now: float,
                           crashed: bool = True) -> list:
        """A child is dead or refused during the commit phase."""
        if st.phase != PHASE_COMMIT:
            return []
        st.pending_commit.discard(child)
        if crashed:
            st.failed.add(child)
        st.absent.add(child)
        effects: list = []
        grandchildren = st.topology.children[child]
        if st.mode == MODE_NO_RESTART and grandchildren:
            # Bridge the gap: announce directly to the dead child's children.
            announce = Announce(
                view=st.key[0], round=st.key[1], attempt=st.key[2], mode=st.mode,
                timing=st.timing, branching=st.config.branching,
                timeout_ms=int(st.timeout_base * 1000),
                topology_digest=st.topology.digest(),
                failed=st.topology.absent, sender=self.index,
                statement=st.statement if st.timing == STATEMENT_AT_ANNOUNCE else None,
            )
            for g in grandchildren:
                st.pending_commit.add(g)
                effects.append(Send(g, announce))
            st.bridge_rounds += 1
            effects.append(SetTimer(("commit",) + st.key, st.timeout_base))
        elif st.mode == MODE_RESTART and grandchildren:
            # The subtree is lost for this attempt; the restart will re-attach it.
            st.absent |= st.topology.descendants(child)
        if not st.pending_commit:
            effects.extend(self._finalize_commit(st, now))
        return effects

    # -- challenge --

    def _on_challenge(self, st: _RoundState, msg: Challenge, now: float) -> list:
        if st.phase == PHASE_REFUSED:
            return []
        if st.phase == PHASE_COMMIT:
            # Our commit never made it into the aggregate; contributing a
            # response now would be unsound.
            logger.warning("node %d: challenge before commit completion", self.index)
            return []
        if st.challenge is not None:
            if msg.challenge.value != st.challenge.value:
                # A second, different challenge for the same (round, attempt):
                # answering would reuse our nonce. Refuse.
                return [Send(msg.sender, Refuse(view=st.key[0], round=st.key[1],
                                                attempt=st.key[2], sender=self.index,
                                                reason=REFUSE_STALE))]
            st.return_to = msg.sender
            if st.sent_response is not None:
                return [Send(st.return_to, st.sent_response)]
            return []

        statement = st.statement
        if st.timing == STATEMENT_AT_CHALLENGE:
            if msg.statement is None:
                return []
            statement = msg.statement
            if not self.hook(statement, self._ctx(now)):
                st.phase = PHASE_REFUSED
                return [Send(msg.sender, Refuse(view=st.key[0], round=st.key[1],
                                                attempt=st.key[2], sender=self.index,
                                                reason=REFUSE_STATEMENT))]
            st.statement = statement

        if st.mode == MODE_NO_RESTART:
            if msg.commit_root is None:
                return []
            # Verify our own commit's inclusion before releasing a response.
            anchored = fold_commit_proof(st.tree_hash, CommitTreeProof(msg.steps))
            expect = multisig.collective_challenge(msg.aggregate_commit, statement,
                                                   msg.commit_root)
            if anchored != msg.commit_root or expect.value != msg.challenge.value:
                st.phase = PHASE_REFUSED
                return [Send(msg.sender, Refuse(view=st.key[0], round=st.key[1],
                                                attempt=st.key[2], sender=self.index,
                                                reason=REFUSE_PROOF))]

        st.challenge = msg.challenge
        st.commit_root = msg.commit_root
        st.global_commit = msg.aggregate_commit
        st.proof_steps = msg.steps
        st.return_to = msg.sender
        self.nonce_log.append(st.key + (st.nonce.value, msg.challenge.value))
        return self._challenge_descend(st, statement, now)

    def _challenge_descend(self, st: _RoundState, statement, now: float) -> list:
        st.pending_resp = set(st.contributors)
        if not st.pending_resp:
            return self._finalize_response(st, now)
        effects = []
        for child in st.contributors:
            effects.append(Send(child, self._challenge_msg_for(st, child, statement)))
        effects.append(SetTimer(("response",) + st.key, self._wait_budget(st)))
        return effects

    def _challenge_msg_for(self, st: _RoundState, child: int, statement) -> Challenge:
        # Audit paths fold bottom-up: the recipient's first step places it
        # within this node's inputs, then our own received path continues.
        steps = (self._step_for(st, child),) + st.proof_steps
        return Challenge(
            view=st.key[0], round=st.key[1], attempt=st.key[2], sender=self.index,
            challenge=st.challenge, aggregate_commit=st.global_commit,
            commit_root=st.commit_root,
            statement=statement if st.timing == STATEMENT_AT_CHALLENGE else None,
            steps=steps,
        )

    # -- response collection --

    def _on_response(self, st: _RoundState, msg: Response, now: float) -> list:
        if st.phase != PHASE_RESPONSE or msg.sender not in st.pending_resp:
            return []
        if st.mode == MODE_RESTART and (msg.absent or msg.failed):
            # The attempt is already doomed; a partial missing subtree shares
            # cannot check out against the full subtree commit, so just record
            # the failure report and let the leader restart.
            st.pending_resp.discard(msg.sender)
            st.resp_absent |= msg.absent
            st.failed |= msg.failed
            st.refused |= msg.refused
            if not st.pending_resp:
                return self._finalize_response(st, now)
            return []
        rec = st.records.get(msg.sender)
        if rec is None:
            summary = st.live_summary_sources().get(msg.sender)
            if summary is None:
                return []
            subtree = st.topology.descendants(msg.sender)
            rec = _CommitRecord(
                index=msg.sender, commit=summary.commit, aggregate=summary.aggregate,
                tree_hash=summary.tree_hash,
                participants=frozenset(subtree - summary.absent),
                absent=summary.absent,
                summaries={},
            )
        if not self._check_partial(st, rec, msg):
            logger.warning("node %d: invalid partial response from %d",
                           self.index, msg.sender)
            st.failed.add(msg.sender)
            return self._response_child_gone(st, msg.sender, now)
        st.pending_resp.discard(msg.sender)
        st.resp_shares[msg.sender] = msg.aggregate_response
        st.resp_absent |= msg.absent
        st.failed |= msg.failed
        st.refused |= msg.refused
        anchor = self._anchor_steps_for(st, msg.sender)
        for exc in msg.exceptions:
            st.exceptions.append(WireException(exc.index, exc.commit,
                                               exc.steps + anchor))
        if not st.pending_resp:
            return self._finalize_response(st, now)
        return []

    def _anchor_steps_for(self, st: _RoundState, child: int) -> tuple[CommitStep, ...]:
        """Steps that lift a digest anchored at `child` up to this node's hash."""
        if child in st.contributors:
            return (self._step_for(st, child),)
        holder = self._record_holding_summary(st, child)
        return (self._summary_step(holder, child), self._step_for(st, holder.index))

    def _check_partial(self, st: _RoundState, rec: _CommitRecord, msg: Response) -> bool:
        """A child's (c, r̂) must verify against its subtree commit and key,
        adjusted for the response dropouts it reports."""
        exc_indices = [e.index for e in msg.exceptions]
        if len(set(exc_indices)) != len(exc_indices):
            return False
        if frozenset(exc_indices) != msg.absent:
            return False
        if not msg.absent <= rec.participants - {msg.sender}:
            return False
        present = rec.participants - msg.absent
        for exc in msg.exceptions:
            if fold_commit_proof(commit_leaf_digest(exc.commit),
                                 CommitTreeProof(exc.steps)) != rec.tree_hash:
                return False
        key = multisig.aggregate_public_key(self.roster, present)
        expected = rec.aggregate
        for exc in msg.exceptions:
            expected = expected * exc.commit.inverse()
        lhs = (self.group.generator ** msg.aggregate_response) * (key ** st.challenge)
        return lhs == expected

    def _response_child_gone(self, st: _RoundState, child: int, now: float,
                             crashed: bool = True) -> list:
        """A contributor died, lied, or refused between commit and response."""
        if st.phase != PHASE_RESPONSE:
            return []
        st.pending_resp.discard(child)
        effects: list = []
        if st.mode == MODE_RESTART:
            if crashed:
                st.failed.add(child)
            st.resp_absent |= st.topology.descendants(child) & st.participants
            if not st.pending_resp:
                effects.extend(self._finalize_response(st, now))
            return effects

        rec = st.records.get(child)
        if rec is not None:
            own_contribs = sorted(rec.summaries)
            exc_steps: tuple[CommitStep, ...] = ()
            if own_contribs:
                exc_steps = (CommitStep(0, tuple(rec.summaries[i].tree_hash
                                                 for i in own_contribs)),)
            exc_steps = exc_steps + (self._step_for(st, child),)
            st.exceptions.append(WireException(child, rec.commit, exc_steps))
            st.resp_absent.add(child)
            if crashed:
                st.failed.add(child)
            # Bridge the gap: ask the dead child's own contributors directly.
            for s in own_contribs:
                st.pending_resp.add(s)
                effects.append(Send(s, self._bridged_challenge(
                    st, self._summary_step(rec, s), self._step_for(st, child))))
            if own_contribs:
                st.bridge_rounds += 1
                effects.append(SetTimer(("response",) + st.key, st.timeout_base))
        else:
            # A bridged grandchild we only know through a summary.
            summary = st.live_summary_sources().get(child)
            if summary is None:
                st.unresolvable = f"no commit data for unresponsive witness {child}"
            elif summary.contributors:
                # Its own contributors' commits are in the aggregate but nobody
                # reachable holds the data to prove or replace them.
                st.unresolvable = f"witness {child} and its subtree data are unreachable"
            else:
                holder = self._record_holding_summary(st, child)
                exc_steps = (self._summary_step(holder, child),
                             self._step_for(st, holder.index))
                st.exceptions.append(WireException(child, summary.commit, exc_steps))
                st.resp_absent.add(child)
                if crashed:
                    st.failed.add(child)
        if not st.pending_resp:
            effects.extend(self._finalize_response(st, now))
        return effects

    def _record_holding_summary(self, st: _RoundState, index: int) -> _CommitRecord:
        for rec in st.records.values():
            if index in rec.summaries:
                return rec
        raise EngineError(f"no record holds a summary for {index}")

    def _summary_step(self, rec: _CommitRecord, child: int) -> CommitStep:
        """Audit step placing `child`'s hash within `rec`'s node inputs."""
        contribs = sorted(rec.summaries)
        pos = 1 + contribs.index(child)
        inputs = [commit_leaf_digest(rec.commit)] + [rec.summaries[i].tree_hash
                                                     for i in contribs]
        others = tuple(inputs[:pos] + inputs[pos + 1:])
        return CommitStep(pos, others)

    def _bridged_challenge(self, st: _RoundState, step_in_child: CommitStep,
                           step_here: CommitStep) -> Challenge:
        return Challenge(
            view=st.key[0], round=st.key[1], attempt=st.key[2], sender=self.index,
            challenge=st.challenge, aggregate_commit=st.global_commit,
            commit_root=st.commit_root,
            statement=st.statement if st.timing == STATEMENT_AT_CHALLENGE else None,
            steps=(step_in_child, step_here) + st.proof_steps,
        )

    def _finalize_response(self, st: _RoundState, now: float) -> list:
        st.phase = PHASE_DONE
        own_share = multisig.response_share(st.nonce, st.challenge, self.keypair.secret)
        total = own_share
        for share in st.resp_shares.values():
            total = total + share
        if st.parent is None:
            return self._leader_after_response(st, total, now)
        msg = Response(
            view=st.key[0], round=st.key[1], attempt=st.key[2], sender=self.index,
            aggregate_response=total, absent=frozenset(st.resp_absent),
            failed=frozenset(st.failed), refused=frozenset(st.refused),
            exceptions=tuple(st.exceptions),
        )
        st.sent_response = msg
        return [Send(st.return_to if st.return_to is not None else st.parent, msg)]

    # ------------------------------------------------------------------
    # Timers
    # ------------------------------------------------------------------

    def on_timer(self, key: tuple, now: float) -> list:
        kind, rest = key[0], key[1:]
        st = self._state(rest)
        if st is None:
            return []
        if kind == "commit" and st.phase == PHASE_COMMIT:
            effects: list = []
            for child in sorted(st.pending_commit):
                effects.extend(self._commit_child_gone(st, child, now))
            return effects
        if kind == "response" and st.phase == PHASE_RESPONSE and st.challenge is not None:
            effects = []
            for child in sorted(st.pending_resp):
                effects.extend(self._response_child_gone(st, child, now))
            return effects
        return []

    # ------------------------------------------------------------------
    # Leader transitions
    # ------------------------------------------------------------------

    def _leader_after_commit(self, st: _RoundState, now: float) -> list:
        config = st.config
        if st.mode == MODE_RESTART and (st.failed or st.refused):
            return self._restart_or_fail(st, now, "witness failure during commit phase")
        if len(st.participants) < config.min_participants:
            return [RoundDone(self._failure(config, st.key[2],
                                            "participation below leader threshold",
                                            frozenset(st.failed), frozenset(st.refused)))]
        if st.timing == STATEMENT_AT_CHALLENGE and st.statement is None:
            st.statement = self._materialize_statement()
        root = st.tree_hash if st.mode == MODE_NO_RESTART else None
        st.challenge = multisig.collective_challenge(st.aggregate_commit, st.statement,
                                                     root)
        st.commit_root = root
        st.global_commit = st.aggregate_commit
        st.proof_steps = ()
        self.nonce_log.append(st.key + (st.nonce.value, st.challenge.value))
        return self._challenge_descend(st, st.statement, now)

    def _restart_or_fail(self, st: _RoundState, now: float, reason: str) -> list:
        config = st.config
        attempt = st.key[2]
        all_failed = self._round_failed_base | frozenset(st.failed) | frozenset(st.refused)
        self._round_failed_base = all_failed
        self._round_refused = self._round_refused | frozenset(st.refused)
        if attempt >= config.max_restarts:
            return [RoundDone(self._failure(config, attempt,
                                            f"{reason}; restart budget exhausted",
                                            all_failed, self._round_refused))]
        logger.info("leader %d restarting round %d (attempt %d): %s",
                    self.index, config.round_number, attempt + 1, reason)
        return self._start_attempt(config, attempt + 1, all_failed, now)

    def _leader_after_response(self, st: _RoundState, total: Scalar, now: float) -> list:
        config = st.config
        if st.mode == MODE_RESTART and (st.resp_absent or st.failed or st.refused):
            return self._restart_or_fail(st, now, "witness failure during response phase")
        if st.unresolvable:
            if st.mode == MODE_RESTART:
                return self._restart_or_fail(st, now, st.unresolvable)
            return [RoundDone(self._failure(config, st.key[2], st.unresolvable,
                                            frozenset(st.failed), frozenset(st.refused)))]
        response_present = st.participants - st.resp_absent
        if len(response_present) < config.min_participants:
            return [RoundDone(self._failure(config, st.key[2],
                                            "participation below leader threshold",
                                            frozenset(st.failed), frozenset(st.refused)))]
        pset = ParticipationSet(count=len(self.roster),
                                response_present=frozenset(response_present),
                                commit_present=st.participants)
        exceptions = tuple(
            CommitException(e.index, e.commit, CommitTreeProof(e.steps))
            for e in sorted(st.exceptions, key=lambda e: e.index)
        )
        sig = CollectiveSignature(
            group=self.group, mode=st.mode, challenge=st.challenge, response=total,
            participation=pset, commit_root=st.commit_root, exceptions=exceptions,
        )
        check = multisig.verify_collective(self.roster, st.statement, sig,
                                           participation.Threshold(0))
        if not check.crypto_ok:
            return [RoundDone(self._failure(config, st.key[2],
                                            f"assembled signature failed self-check: "
                                            f"{check.reason}",
                                            frozenset(st.failed), frozenset(st.refused)))]
        result = RoundResult(
            ok=True, round=config.round_number, view=self.current_view,
            attempts=st.key[2] + 1, statement=st.statement, signature=sig,
            failed=(self._round_failed_base - self._round_refused) | frozenset(st.failed),
            refused=self._round_refused | frozenset(st.refused),
        )
        self.round_logs.append(result)
        if st.refused:
            logger.info("leader %d: refusals (distinct from crashes) from %s",
                        self.index, sorted(st.refused))
        return [RoundDone(result)]

    # ------------------------------------------------------------------
    # View changes
    # ------------------------------------------------------------------

    def vote_view_change(self, reason: str, now: float) -> list:
        """Propose the next view; the vote is individually signed and
        broadcast to the whole roster."""
        proposed = self.current_view + 1
        sig = schnorr_sign(self.keypair, view_vote_statement(self.roster, proposed),
                           self.rng)
        msg = ViewChange(proposed_view=proposed, signer=self.index, signature=sig)
        logger.info("node %d votes for view %d (%s)", self.index, proposed, reason)
        effects = [Send(i, msg) for i in range(len(self.roster)) if i != self.index]
        effects.extend(self._on_view_change(msg, now))
        return effects

    def _on_view_change(self, msg: ViewChange, now: float) -> list:
        if msg.proposed_view <= self.current_view:
            return []
        if not 0 <= msg.signer < len(self.roster):
            return []
        statement = view_vote_statement(self.roster, msg.proposed_view)
        if not schnorr_verify(self.roster.public_key(msg.signer), statement,
                              msg.signature):
            logger.warning("node %d: invalid view-change vote from %d",
                           self.index, msg.signer)
            return []
        votes = self.view_votes.setdefault(msg.proposed_view, {})
        votes[msg.signer] = msg.signature
        threshold = 1 if self.allow_minority_views else view_change_threshold(len(self.roster))
        if len(votes) >= threshold:
            best = max(v for v, vs in self.view_votes.items() if len(vs) >= threshold)
            if best > self.current_view:
                self.current_view = best
                leader = view_leader(self.roster, best)
                logger.info("node %d activates view %d (leader %d)",
                            self.index, best, leader)
                return [ViewActivated(view=best, leader=leader)]
        return []


def _subtree_height(topology: TreeTopology, index: int) -> int:
    kids = topology.children[index]
    if not kids:
        return 0
    return 1 + max(_subtree_height(topology, c) for c in kids)
