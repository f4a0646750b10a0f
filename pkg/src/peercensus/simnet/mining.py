"""Analytic block arrivals: exponential inter-block time, uniform winner."""

from __future__ import annotations

from typing import Optional, Sequence, TypeVar

T = TypeVar("T")


def sample_block_event(online_resources: Sequence[T], tau: float, rng) -> Optional[tuple[float, T]]:
    """(delay, winning resource), or None when nothing is online.

    ``rng`` is a ``random.Random`` or a numpy Generator.
    """
    if tau <= 0:
        raise ValueError("expected inter-block time must be positive")
    if not online_resources:
        return None
    if hasattr(rng, "expovariate"):
        delay = rng.expovariate(1.0 / tau)
        idx = rng.randrange(len(online_resources))
    else:
        delay = float(rng.exponential(tau))
        idx = int(rng.integers(len(online_resources)))
    return delay, online_resources[idx]


def block_share_trial(ell: int, attacker_resources: int, total_resources: int, tau: float, rng) -> int:
    """Mine ``ell`` blocks over a static, fully online resource pool.

    Resources 0..attacker_resources-1 belong to the attacker.  Returns the
    attacker's block count.
    """
    pool = range(total_resources)
    wins = 0
    for _ in range(ell):
        _, r = sample_block_event(pool, tau, rng)
        wins += r < attacker_resources
    return wins
