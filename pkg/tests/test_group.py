import random

import pytest
from hypothesis import given, settings, strategies as st

from cosikit.group import (
    ED25519,
    TOY,
    TAG_POSSESSION,
    DecodeError,
    KeyPair,
    SelfSignedKey,
    Signature,
    challenge_hash,
    keygen,
    prove_possession,
    schnorr_sign,
    schnorr_verify,
    verify_possession,
)


def test_toy_group_constants():
    assert TOY.order == 11
    assert TOY.modulus == 23
    assert int.from_bytes(TOY.generator.encode(), "little") == 2


def test_keygen_forced_secrets_toy():
    # 2^3 mod 23 = 8; x=1 gives the generator itself
    assert int.from_bytes(KeyPair.from_secret(TOY, 3).public.encode(), "little") == 8
    assert KeyPair.from_secret(TOY, 1).public == TOY.generator


def test_keygen_roundtrip_production(toy_rng):
    kp = keygen(ED25519, toy_rng)
    assert ED25519.generator ** kp.secret == kp.public
    assert kp.secret.value != 0


def test_keygen_secret_range(toy_rng):
    for _ in range(200):
        kp = keygen(TOY, toy_rng)
        assert 1 <= kp.secret.value < TOY.order


def test_toy_brute_force_discrete_log(toy_rng):
    # every generated keypair's public has the secret as its discrete log
    for _ in range(25):
        kp = keygen(TOY, toy_rng)
        logs = [k for k in range(TOY.order)
                if pow(2, k, 23) == int.from_bytes(kp.public.encode(), "little")]
        assert logs == [kp.secret.value]


def test_schnorr_roundtrip(toy_rng):
    for group in (TOY, ED25519):
        kp = keygen(group, toy_rng)
        sig = schnorr_sign(kp, b"a statement", toy_rng)
        assert schnorr_verify(kp.public, b"a statement", sig)
        assert not schnorr_verify(kp.public, b"a statemenu", sig)


def test_schnorr_mutations_reject(toy_rng):
    # negative checks run in the production group: the toy group's order-11
    # challenges collide by chance one time in eleven
    kp = keygen(ED25519, toy_rng)
    sig = schnorr_sign(kp, b"m", toy_rng)
    bumped = Signature(c=sig.c, r=sig.r + ED25519.scalar(1))
    assert not schnorr_verify(kp.public, b"m", bumped)
    other = keygen(ED25519, toy_rng)
    assert not schnorr_verify(other.public, b"m", sig)


def test_response_formula_forced():
    # r = v - c*x mod q with v=5, c=2, x=3 in q=11
    v, c, x = TOY.scalar(5), TOY.scalar(2), TOY.scalar(3)
    assert (v - c * x).value == 10


def test_challenge_hash_deterministic(toy_rng):
    kp = keygen(TOY, toy_rng)
    a = challenge_hash(kp.public, b"s", b"tag")
    b = challenge_hash(kp.public, b"s", b"tag")
    assert a.value == b.value


def test_challenge_hash_stub():
    # with a stubbed wide hash the reduction is predictable
    digest = bytes(range(64))

    class Stub:
        def __init__(self, data):
            pass

        def digest(self):
            return digest

    expected = int.from_bytes(digest, "little") % TOY.order
    got = challenge_hash(TOY.generator, b"s", b"t", hasher=Stub)
    assert got.value == expected


def test_challenge_hash_statement_sensitivity(toy_rng):
    kp = keygen(ED25519, toy_rng)
    seen = set()
    for i in range(256):
        stmt = bytes([i]) + b"fixed"
        seen.add(challenge_hash(kp.public, stmt, b"t").value)
    assert len(seen) == 256


def test_challenge_hash_no_repeats_large_sample(toy_rng):
    commit = keygen(ED25519, toy_rng).public
    values = {challenge_hash(commit, i.to_bytes(4, "big"), b"t").value
              for i in range(10_000)}
    assert len(values) == 10_000


def test_possession_roundtrip(toy_rng):
    kp = keygen(TOY, toy_rng)
    assert verify_possession(prove_possession(kp, toy_rng))


def test_possession_swapped_key_rejects(toy_rng):
    a = keygen(TOY, toy_rng)
    b = keygen(TOY, toy_rng)
    proof_a = prove_possession(a, toy_rng).proof
    assert not verify_possession(SelfSignedKey(public=b.public, proof=proof_a))


def test_related_key_attack_rejected(toy_rng):
    # attacker picks X_i = G^{x_i} * X_j^{-1}; without knowing x_i - x_j it
    # cannot produce a possession proof for X_i
    victim = keygen(ED25519, toy_rng)
    x_i = ED25519.scalar(7)
    forged_public = (ED25519.generator ** x_i) * victim.public.inverse()
    attacker_kp = KeyPair.from_secret(ED25519, x_i.value)
    bogus_proof = schnorr_sign(attacker_kp, forged_public.encode(), toy_rng,
                               tag=TAG_POSSESSION)
    assert not verify_possession(SelfSignedKey(public=forged_public,
                                               proof=bogus_proof))


# -- canonical encodings ----------------------------------------------------

def test_toy_decode_rejects_noncanonical():
    with pytest.raises(DecodeError):
        TOY.decode_element(b"\x00\x00")  # zero
    with pytest.raises(DecodeError):
        TOY.decode_element((23).to_bytes(2, "little"))  # >= modulus
    with pytest.raises(DecodeError):
        TOY.decode_element((5).to_bytes(2, "little"))  # not in the subgroup
    with pytest.raises(DecodeError):
        TOY.decode_element(b"\x01")  # wrong length
    with pytest.raises(DecodeError):
        TOY.decode_scalar((11).to_bytes(2, "little"))  # non-reduced scalar


def test_ed25519_decode_rejects_noncanonical():
    p = 2**255 - 19
    with pytest.raises(DecodeError):
        ED25519.decode_element(p.to_bytes(32, "little"))  # y >= p
    # (0, -1) has order 2: on the curve but outside the prime-order subgroup
    with pytest.raises(DecodeError):
        ED25519.decode_element((p - 1).to_bytes(32, "little"))
    with pytest.raises(DecodeError):
        ED25519.decode_element(b"\x00" * 31)
    with pytest.raises(DecodeError):
        ED25519.decode_scalar((ED25519.order).to_bytes(32, "little"))


@settings(max_examples=60, deadline=None)
@given(x=st.integers(min_value=1, max_value=10))
def test_toy_encode_roundtrip(x):
    kp = KeyPair.from_secret(TOY, x)
    enc = kp.public.encode()
    assert len(enc) == 2
    assert TOY.decode_element(enc) == kp.public
    s = TOY.scalar(x)
    assert TOY.decode_scalar(s.encode()).value == x


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_ed25519_encode_roundtrip(seed):
    rng = random.Random(seed)
    kp = keygen(ED25519, rng)
    enc = kp.public.encode()
    assert len(enc) == 32
    assert ED25519.decode_element(enc) == kp.public
    assert ED25519.decode_scalar(kp.secret.encode()).value == kp.secret.value


@settings(max_examples=100, deadline=None)
@given(a=st.integers(min_value=0, max_value=10), b=st.integers(min_value=0, max_value=10))
def test_scalar_arithmetic_matches_int_oracle(a, b):
    q = TOY.order
    sa, sb = TOY.scalar(a), TOY.scalar(b)
    assert (sa + sb).value == (a + b) % q
    assert (sa - sb).value == (a - b) % q
    assert (sa * sb).value == (a * b) % q
    assert (-sa).value == (-a) % q


def test_group_element_algebra(toy_rng):
    g = TOY.generator
    a = g ** 3
    b = g ** 4
    assert a * b == g ** 7
    assert (a * a.inverse()) == TOY.identity
    assert a ** TOY.order == TOY.identity
    ge = keygen(ED25519, toy_rng).public
    assert ge * ge.inverse() == ED25519.identity
