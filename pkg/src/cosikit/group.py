"""Prime-order group arithmetic, Schnorr signatures, and key possession proofs.

Two groups are registered: the production group (the prime-order subgroup of
Ed25519, 32-byte encodings) and a brute-forceable toy group (the order-11
subgroup of Z_23* generated by 2, 2-byte encodings) used by oracle tests.
All protocol arithmetic in the rest of the package goes through this module.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

# Domain separation tags. Each hash use in the protocol gets its own tag so
# a digest computed in one context can never be replayed in another.
TAG_SIGN = b"cosi/sig/v1"
TAG_POSSESSION = b"cosi/possess/v1"
TAG_CHALLENGE_PLAIN = b"cosi/challenge/plain/v1"
TAG_CHALLENGE_TREE = b"cosi/challenge/tree/v1"
TAG_MERKLE_LEAF = b"cosi/merkle/leaf/v1"
TAG_MERKLE_NODE = b"cosi/merkle/node/v1"
TAG_EMPTY_TREE = b"cosi/merkle/empty/v1"


class DecodeError(ValueError):
    """Raised when a byte string is not a canonical scalar/element encoding."""


class Group:
    """A group of prime order q with hard discrete log, in multiplicative notation.

    Subclasses provide the raw representation ops; callers use the Scalar /
    GroupElement wrappers.
    """

    group_id: int
    name: str
    order: int
    scalar_size: int
    element_size: int

    # -- raw element ops (subclass responsibility) --

    def _mul(self, a, b):
        raise NotImplementedError

    def _pow(self, a, k: int):
        raise NotImplementedError

    def _inv(self, a):
        raise NotImplementedError

    def _eq(self, a, b) -> bool:
        raise NotImplementedError

    def _encode(self, a) -> bytes:
        raise NotImplementedError

    def _decode(self, data: bytes):
        raise NotImplementedError

    def _generator_raw(self):
        raise NotImplementedError

    def _identity_raw(self):
        raise NotImplementedError

    # -- public surface --

    @property
    def generator(self) -> "GroupElement":
        return GroupElement(self, self._generator_raw())

    @property
    def identity(self) -> "GroupElement":
        return GroupElement(self, self._identity_raw())

    def scalar(self, value: int) -> "Scalar":
        return Scalar(self, value % self.order)

    def decode_scalar(self, data: bytes) -> "Scalar":
        if len(data) != self.scalar_size:
            raise DecodeError(f"scalar must be {self.scalar_size} bytes, got {len(data)}")
        value = int.from_bytes(data, "little")
        if value >= self.order:
            raise DecodeError("non-canonical scalar encoding (not reduced mod q)")
        return Scalar(self, value)

    def decode_element(self, data: bytes) -> "GroupElement":
        if len(data) != self.element_size:
            raise DecodeError(f"element must be {self.element_size} bytes, got {len(data)}")
        return GroupElement(self, self._decode(data))

    def random_scalar(self, rng, nonzero: bool = True) -> "Scalar":
        """Uniform scalar via unbiased modular rejection sampling.

        rng is any source with getrandbits (random.Random, SystemRandom).
        """
        bits = 8 * self.scalar_size
        bound = 1 << bits
        limit = (bound // self.order) * self.order
        while True:
            x = rng.getrandbits(bits)
            if x >= limit:
                continue
            x %= self.order
            if nonzero and x == 0:
                continue
            return Scalar(self, x)

    def __repr__(self) -> str:
        return f"<Group {self.name} q={self.order if self.order < 1 << 64 else hex(self.order)}>"


@dataclass(frozen=True)
class Scalar:
    """Field element modulo the group order q."""

    group: Group
    value: int

    def __post_init__(self):
        if not 0 <= self.value < self.group.order:
            raise ValueError("scalar out of range [0, q)")

    def __add__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.group, (self.value + other.value) % self.group.order)

    def __sub__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.group, (self.value - other.value) % self.group.order)

    def __mul__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.group, (self.value * other.value) % self.group.order)

    def __neg__(self) -> "Scalar":
        return Scalar(self.group, (-self.value) % self.group.order)

    def encode(self) -> bytes:
        return self.value.to_bytes(self.group.scalar_size, "little")


class GroupElement:
    """Element of the prime-order group. Immutable; equality is value equality."""

    __slots__ = ("group", "raw", "_enc")

    def __init__(self, group: Group, raw):
        self.group = group
        self.raw = raw
        self._enc = None

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.group, self.group._mul(self.raw, other.raw))

    def __pow__(self, k) -> "GroupElement":
        exp = k.value if isinstance(k, Scalar) else int(k)
        return GroupElement(self.group, self.group._pow(self.raw, exp % self.group.order))

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, self.group._inv(self.raw))

    def encode(self) -> bytes:
        if self._enc is None:
            self._enc = self.group._encode(self.raw)
        return self._enc

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupElement) or other.group is not self.group:
            return NotImplemented
        return self.group._eq(self.raw, other.raw)

    def __hash__(self) -> int:
        return hash((self.group.group_id, self.encode()))

    def __repr__(self) -> str:
        return f"<{self.group.name} element {self.encode().hex()}>"


# ---------------------------------------------------------------------------
# Toy group: order-11 subgroup of Z_23*, generator 2. Small enough that every
# discrete log can be brute forced, which is what the oracle tests rely on.
# ---------------------------------------------------------------------------

class ToyGroup(Group):
    group_id = 2
    name = "toy"
    order = 11
    scalar_size = 2
    element_size = 2
    modulus = 23

    def _mul(self, a, b):
        return (a * b) % self.modulus

    def _pow(self, a, k):
        return pow(a, k, self.modulus)

    def _inv(self, a):
        return pow(a, self.modulus - 2, self.modulus)

    def _eq(self, a, b):
        return a == b

    def _encode(self, a):
        return int(a).to_bytes(2, "little")

    def _decode(self, data):
        v = int.from_bytes(data, "little")
        if not 0 < v < self.modulus:
            raise DecodeError("toy element out of range")
        if pow(v, self.order, self.modulus) != 1:
            raise DecodeError("value not in the order-11 subgroup")
        return v

    def _generator_raw(self):
        return 2

    def _identity_raw(self):
        return 1


# ---------------------------------------------------------------------------
# Production group: prime-order subgroup of Ed25519. Points are kept in
# extended homogeneous coordinates (X, Y, Z, T) with x*y = T/Z.
# ---------------------------------------------------------------------------

_P = 2**255 - 19
_L = 2**252 + 27742317777372353535851937790883648493
_D = (-121665 * pow(121666, _P - 2, _P)) % _P
_I = pow(2, (_P - 1) // 4, _P)  # sqrt(-1)


def _recover_x(y: int, sign: int) -> int:
    xx = (y * y - 1) * pow(_D * y * y + 1, _P - 2, _P) % _P
    x = pow(xx, (_P + 3) // 8, _P)
    if (x * x - xx) % _P != 0:
        x = x * _I % _P
    if (x * x - xx) % _P != 0:
        raise DecodeError("not a point on the curve")
    if x == 0 and sign == 1:
        raise DecodeError("non-canonical sign bit for x=0")
    if x & 1 != sign:
        x = _P - x
    return x


class Ed25519Group(Group):
    group_id = 1
    name = "prod"
    order = _L
    scalar_size = 32
    element_size = 32

    _IDENT = (0, 1, 1, 0)

    def _add(self, p, q):
        x1, y1, z1, t1 = p
        x2, y2, z2, t2 = q
        a = (y1 - x1) * (y2 - x2) % _P
        b = (y1 + x1) * (y2 + x2) % _P
        c = 2 * t1 * t2 * _D % _P
        dd = 2 * z1 * z2 % _P
        e, f, g, h = b - a, dd - c, dd + c, b + a
        return (e * f % _P, g * h % _P, f * g % _P, e * h % _P)

    def _mul(self, a, b):
        return self._add(a, b)

    def _pow(self, a, k):
        r = self._IDENT
        q = a
        while k > 0:
            if k & 1:
                r = self._add(r, q)
            q = self._add(q, q)
            k >>= 1
        return r

    def _inv(self, a):
        x, y, z, t = a
        return ((-x) % _P, y, z, (-t) % _P)

    def _affine(self, a):
        x, y, z, _ = a
        zi = pow(z, _P - 2, _P)
        return x * zi % _P, y * zi % _P

    def _eq(self, a, b):
        x1, y1, z1, _ = a
        x2, y2, z2, _ = b
        return (x1 * z2 - x2 * z1) % _P == 0 and (y1 * z2 - y2 * z1) % _P == 0

    def _encode(self, a):
        x, y = self._affine(a)
        return (y | ((x & 1) << 255)).to_bytes(32, "little")

    def _decode(self, data):
        v = int.from_bytes(data, "little")
        sign = v >> 255
        y = v & ((1 << 255) - 1)
        if y >= _P:
            raise DecodeError("non-canonical y coordinate")
        x = _recover_x(y, sign)
        pt = (x, y, 1, x * y % _P)
        if not self._eq(self._pow(pt, self.order), self._IDENT):
            raise DecodeError("point not in the prime-order subgroup")
        return pt

    def _generator_raw(self):
        gy = 4 * pow(5, _P - 2, _P) % _P
        gx = _recover_x(gy, 0)
        return (gx, gy, 1, gx * gy % _P)

    def _identity_raw(self):
        return self._IDENT


TOY = ToyGroup()
ED25519 = Ed25519Group()

GROUPS_BY_ID = {TOY.group_id: TOY, ED25519.group_id: ED25519}
GROUPS_BY_NAME = {TOY.name: TOY, ED25519.name: ED25519}


def group_by_id(group_id: int) -> Group:
    try:
        return GROUPS_BY_ID[group_id]
    except KeyError:
        raise DecodeError(f"unknown group id {group_id}") from None


def group_by_name(name: str) -> Group:
    try:
        return GROUPS_BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown group {name!r} (expected one of {sorted(GROUPS_BY_NAME)})") from None


# ---------------------------------------------------------------------------
# Schnorr keys and signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    secret: Scalar
    public: GroupElement

    @classmethod
    def from_secret(cls, group: Group, secret: int) -> "KeyPair":
        s = group.scalar(secret)
        if s.value == 0:
            raise ValueError("secret key must be nonzero")
        return cls(secret=s, public=group.generator ** s)


@dataclass(frozen=True)
class Signature:
    """Schnorr challenge-response pair (c, r)."""

    c: Scalar
    r: Scalar

    def encode(self) -> bytes:
        return self.c.encode() + self.r.encode()

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "Signature":
        n = group.scalar_size
        if len(data) != 2 * n:
            raise DecodeError("bad signature length")
        return cls(group.decode_scalar(data[:n]), group.decode_scalar(data[n:]))


@dataclass(frozen=True)
class SelfSignedKey:
    """Public key plus a possession proof signed with its own secret."""

    public: GroupElement
    proof: Signature


HashFn = Callable[[bytes], "hashlib._Hash"]


def challenge_hash(commit: GroupElement, statement: bytes, tag: bytes,
                   hasher: HashFn = hashlib.sha512) -> Scalar:
    """Fiat-Shamir challenge: wide hash of (tag, commit, statement) reduced mod q.

    The digest must be at least twice the scalar width so the reduction bias
    is negligible.
    """
    group = commit.group
    digest = hasher(tag + commit.encode() + statement).digest()
    if len(digest) < 2 * group.scalar_size:
        raise ValueError("hash output too narrow for unbiased reduction")
    return group.scalar(int.from_bytes(digest, "little"))


def keygen(group: Group, rng) -> KeyPair:
    secret = group.random_scalar(rng, nonzero=True)
    return KeyPair(secret=secret, public=group.generator ** secret)


def schnorr_sign(keypair: KeyPair, statement: bytes, rng,
                 tag: bytes = TAG_SIGN, hasher: HashFn = hashlib.sha512) -> Signature:
    group = keypair.secret.group
    v = group.random_scalar(rng, nonzero=True)
    commit = group.generator ** v
    c = challenge_hash(commit, statement, tag, hasher)
    r = v - c * keypair.secret
    return Signature(c=c, r=r)


def schnorr_verify(public: GroupElement, statement: bytes, sig: Signature,
                   tag: bytes = TAG_SIGN, hasher: HashFn = hashlib.sha512) -> bool:
    group = public.group
    commit = (group.generator ** sig.r) * (public ** sig.c)
    return challenge_hash(commit, statement, tag, hasher).value == sig.c.value


def prove_possession(keypair: KeyPair, rng) -> SelfSignedKey:
    proof = schnorr_sign(keypair, keypair.public.encode(), rng, tag=TAG_POSSESSION)
    return SelfSignedKey(public=keypair.public, proof=proof)


def verify_possession(ssk: SelfSignedKey) -> bool:
    return schnorr_verify(ssk.public, ssk.public.encode(), ssk.proof, tag=TAG_POSSESSION)
