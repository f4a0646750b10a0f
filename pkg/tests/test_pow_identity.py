import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from peercensus.pow_identity import (
    HASH_BITS,
    H,
    PowPuzzle,
    adjust_difficulty,
    gen_identity,
    leading_zero_bits,
    pow_check,
    pow_search,
    pow_solve,
    sign,
    verify,
)


def test_gen_identity_is_deterministic_per_seed():
    a = gen_identity(random.Random(5))
    b = gen_identity(random.Random(5))
    c = gen_identity(random.Random(6))
    assert a.public_key == b.public_key and a.secret_key == b.secret_key
    assert a.public_key != c.public_key
    assert len(a.public_key) == 32


def test_signatures_verify_only_under_the_signing_key(rng):
    me, other = gen_identity(rng), gen_identity(rng)
    sig = me.sign(b"hello")
    assert sig == sign(b"hello", me.secret_key)
    assert verify(sig, b"hello", me.public_key)
    assert not verify(sig, b"hello", other.public_key)
    assert not verify(sig, b"hellp", me.public_key)
    assert not verify(b"\0" * 64, b"hello", me.public_key)
    assert not verify(sig, b"hello", b"short")


def test_leading_zero_bits():
    assert leading_zero_bits(bytes(32)) == 256
    assert leading_zero_bits(b"\x80" + bytes(31)) == 0
    assert leading_zero_bits(b"\x00\x01" + bytes(30)) == 15


def test_pow_check_matches_hash_prefix(rng):
    c = b"challenge"
    for _ in range(200):
        x = rng.randbytes(8)
        assert pow_check(3, c, x) == (H(x + c)[0] >> 5 == 0)


def test_pow_check_acceptance_rate_at_d8():
    # Bernoulli(2^-8) over 10^5 uniform inputs: mean 390.6, sd 19.7
    r = random.Random(11)
    n, p = 100_000, 2.0 ** -8
    hits = sum(pow_check(8, b"c", r.randbytes(16)) for _ in range(n))
    sd = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sd


def test_pow_solve_low_difficulty_always_succeeds(rng):
    for _ in range(50):
        x = pow_solve(1, b"c", 64, rng)
        assert x is not None and pow_check(1, b"c", x)


def test_pow_solve_full_difficulty_gives_up(rng):
    assert pow_solve(HASH_BITS, b"c", 10, rng) is None


def test_pow_search_mean_attempts_at_d8():
    r = random.Random(3)
    counts = []
    for i in range(400):
        x, used = pow_search(8, i.to_bytes(4, "big"), 1 << 16, r)
        assert x is not None
        counts.append(used)
    mean = sum(counts) / len(counts)
    assert abs(mean - 256) <= 25.6


def test_puzzle_domain():
    with pytest.raises(ValueError):
        PowPuzzle(0, b"c")
    with pytest.raises(ValueError):
        PowPuzzle(HASH_BITS + 1, b"c")
    with pytest.raises(ValueError):
        pow_search(4, b"c", 0, random.Random(0))


def test_adjust_difficulty_examples():
    assert adjust_difficulty([600.0] * 5, 600.0, 10) == 10
    assert adjust_difficulty([300.0] * 5, 600.0, 10) == 11
    assert adjust_difficulty([2400.0] * 5, 600.0, 10) == 8
    with pytest.raises(ValueError):
        adjust_difficulty([], 600.0, 10)
    assert adjust_difficulty([1.0], 600.0, 250) == HASH_BITS
    assert adjust_difficulty([1e9], 600.0, 3) == 1


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1e4), st.integers(2, 200))
def test_adjust_difficulty_is_monotone_in_observed_interval(observed, d):
    faster = adjust_difficulty([observed], 600.0, d)
    slower = adjust_difficulty([observed * 2], 600.0, d)
    assert slower <= faster
    assert 1 <= slower <= faster <= HASH_BITS
