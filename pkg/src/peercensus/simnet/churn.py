"""Two-state on/off Markov churn for resources and peers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChurnParams:
    """Per-tick failure probability ``p`` and recovery probability ``q``."""

    p: float
    q: float

    def __post_init__(self):
        for name in ("p", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"churn {name} must be in [0, 1], got {v}")

    @property
    def stationary(self) -> float:
        return stationary_rho(self.p, self.q)

    @classmethod
    def from_rates(cls, p: float, q: float, rate_unit: float, tick: float) -> "ChurnParams":
        """Rescale per-``rate_unit`` probabilities to one tick of length ``tick``.

        Rates are treated as Poisson intensities, so the per-tick probability
        is rate * tick / rate_unit, capped at 1.  This keeps q/(p+q) fixed.
        """
        if rate_unit <= 0 or tick <= 0:
            raise ValueError("rate unit and tick length must be positive")
        f = tick / rate_unit
        return cls(min(1.0, p * f), min(1.0, q * f))

    def k_step(self, k: int) -> tuple[float, float]:
        """(P[on after k | on], P[on after k | off])."""
        s = self.p + self.q
        if s == 0:
            return 1.0, 0.0
        rho = self.q / s
        lam = (1.0 - s) ** k
        return rho + (1.0 - rho) * lam, rho - rho * lam


def stationary_rho(p: float, q: float) -> float:
    if p < 0 or q < 0:
        raise ValueError("churn probabilities must be nonnegative")
    if p + q == 0:
        raise ValueError("stationary fraction undefined when p = q = 0")
    return q / (p + q)


def churn_step(online: bool, params: ChurnParams, rng) -> bool:
    u = rng.random()
    if online:
        return u >= params.p
    return u < params.q


def churn_counts(on: int, total: int, params: ChurnParams, rng: np.random.Generator, k: int = 1) -> int:
    """Exact online count after ``k`` ticks for ``total`` independent units."""
    stay, recover = params.k_step(k)
    return int(rng.binomial(on, stay)) + int(rng.binomial(total - on, recover))


def online_fraction_trace(params: ChurnParams, ticks: int, rng, start_online: bool = True) -> float:
    """Long-run fraction of ticks a single unit spends online."""
    state = start_online
    up = 0
    for _ in range(ticks):
        state = churn_step(state, params, rng)
        up += state
    return up / ticks
