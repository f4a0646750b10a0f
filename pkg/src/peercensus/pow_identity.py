"""Peer identities, signatures, hashing and the Proof-of-Work predicate.

Hash: SHA-256 (256-bit output).  Signatures: Ed25519 via ``cryptography``.
Everything above this module treats keys, digests and signatures as opaque
byte strings.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

HASH_BITS = 256
NONCE_BYTES = 8


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _random_bytes(rng, n: int) -> bytes:
    # random.Random and numpy Generators both supported
    if hasattr(rng, "randbytes"):
        return rng.randbytes(n)
    return rng.bytes(n)


@dataclass(frozen=True)
class Identity:
    """A peer identity: the public key *is* the peer ID."""

    public_key: bytes
    secret_key: bytes = field(repr=False)

    def sign(self, message: bytes) -> bytes:
        return sign(message, self.secret_key)

    @property
    def short(self) -> str:
        return self.public_key[:4].hex()


def gen_identity(rng) -> Identity:
    seed = _random_bytes(rng, 32)
    key = Ed25519PrivateKey.from_private_bytes(seed)
    return Identity(public_key=key.public_key().public_bytes_raw(), secret_key=seed)


@lru_cache(maxsize=4096)
def _private_key(secret_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret_key)


def sign(message: bytes, secret_key: bytes) -> bytes:
    return _private_key(secret_key).sign(message)


@lru_cache(maxsize=1 << 16)
def verify(signature: bytes, message: bytes, public_key: bytes) -> bool:
    # Cached: multicast messages are verified once per receiver otherwise.
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class PowPuzzle:
    difficulty: int
    challenge: bytes

    def __post_init__(self):
        if not 1 <= self.difficulty <= HASH_BITS:
            raise ValueError(f"difficulty must be in [1, {HASH_BITS}], got {self.difficulty}")


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return len(digest) * 8 - value.bit_length()


def pow_check(d: int, c: bytes, x: bytes) -> bool:
    """True iff H(x || c) starts with at least ``d`` zero bits."""
    return leading_zero_bits(H(x + c)) >= d


def pow_search(d: int, c: bytes, max_attempts: int, rng) -> tuple[Optional[bytes], int]:
    """Scan nonces from a random 64-bit offset; return (nonce or None, attempts used)."""
    if max_attempts <= 0:
        raise ValueError("max_attempts must be positive")
    PowPuzzle(d, c)
    start = int.from_bytes(_random_bytes(rng, NONCE_BYTES), "big")
    for i in range(max_attempts):
        x = ((start + i) % (1 << 64)).to_bytes(NONCE_BYTES, "big")
        if pow_check(d, c, x):
            return x, i + 1
    return None, max_attempts


def pow_solve(d: int, c: bytes, max_attempts: int, rng) -> Optional[bytes]:
    return pow_search(d, c, max_attempts, rng)[0]


def adjust_difficulty(
    recent_block_intervals: Sequence[float],
    target: float,
    current_d: int,
    min_d: int = 1,
    max_d: int = HASH_BITS,
) -> int:
    """Log2 retarget: each halving of the observed interval adds one bit of work."""
    if not recent_block_intervals:
        raise ValueError("need at least one block interval")
    if target <= 0:
        raise ValueError("target interval must be positive")
    observed = sum(recent_block_intervals) / len(recent_block_intervals)
    if observed <= 0:
        return max_d
    step = math.floor(math.log2(target / observed) + 0.5)
    return max(min_d, min(max_d, current_d + step))
