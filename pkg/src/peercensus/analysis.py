"""Closed-form safety calculus.

Chernoff tail kernels, the three deviation bounds (resource churn, miner's
luck, membership churn) and their union-bound composition into a failure
probability per time step.  Everything is evaluated in log space with
mpmath so that masses near 10^6 and probabilities far below the double
range stay exact enough to compare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import mpmath as mp

DPS = 50
SECONDS_PER_YEAR = 365.25 * 24 * 3600
SPLIT_READINGS = ("direct", "halved", "inflation")


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# -- kernels -----------------------------------------------------------------


def log_chernoff_upper(a, m) -> mp.mpf:
    """ln of (e^a / (1+a)^(1+a))^m."""
    _need(a > 0, f"upper-tail deviation must be positive, got {a}")
    _need(m > 0, f"exponent mass must be positive, got {m}")
    with mp.workdps(DPS):
        a, m = mp.mpf(a), mp.mpf(m)
        return m * (a - (1 + a) * mp.log1p(a))


def log_chernoff_lower(g, m) -> mp.mpf:
    """ln of (e^-g / (1-g)^(1-g))^m."""
    _need(0 < g < 1, f"lower-tail deviation must be in (0, 1), got {g}")
    _need(m > 0, f"exponent mass must be positive, got {m}")
    with mp.workdps(DPS):
        g, m = mp.mpf(g), mp.mpf(m)
        return m * (-g - (1 - g) * mp.log1p(-g))


def chernoff_upper(a, m) -> float:
    return float(mp.exp(log_chernoff_upper(a, m)))


def chernoff_lower(g, m) -> float:
    return float(mp.exp(log_chernoff_lower(g, m)))


@dataclass(frozen=True)
class Term:
    """One bound, kept as a natural log so tiny values survive."""

    log: mp.mpf
    flags: tuple = ()

    @property
    def value(self) -> float:
        return float(mp.exp(self.log))

    @property
    def log10(self) -> float:
        return float(self.log / mp.log(10)) if self.log != -mp.inf else -math.inf


ZERO = Term(mp.mpf("-inf"), ("impossible-event",))
ONE = Term(mp.mpf(0), ("vacuous-mass",))


def _log_add(*xs) -> mp.mpf:
    with mp.workdps(DPS):
        xs = [x for x in xs if x != -mp.inf]
        if not xs:
            return mp.mpf("-inf")
        top = max(xs)
        return top + mp.log(mp.fsum(mp.exp(x - top) for x in xs))


# -- the three deviation bounds ---------------------------------------------


def _ratio_term(alpha, n, ratio, online) -> Term:
    _need(0 < alpha < 0.5, f"alpha must be in (0, 1/2), got {alpha}")
    _need(n >= 0 and ratio >= 0, "n and ratio must be nonnegative")
    _need(0 <= online <= 1, "online fraction must be in [0, 1]")
    _need(not math.isinf(ratio), "ratio must be finite")
    with mp.workdps(DPS):
        m_up = mp.mpf(online) * n * ratio / (1 + mp.mpf(ratio))
        m_lo = mp.mpf(online) * n / (1 + mp.mpf(ratio))
        flags = []
        if m_up > 0:
            up = log_chernoff_upper(alpha, m_up)
        else:
            up = mp.mpf(0)
            flags.append("vacuous-mass")
        if m_lo > 0:
            lo = log_chernoff_lower(alpha, m_lo)
        else:
            lo = mp.mpf(0)
            flags.append("vacuous-mass")
        return Term(_log_add(up, lo), tuple(dict.fromkeys(flags)))


def lemma1_term(alpha, n, r, rho) -> Term:
    return _ratio_term(alpha, n, r, rho)


def lemma2_term(alpha, n, s, sigma) -> Term:
    return _ratio_term(alpha, n, s, sigma)


def lemma1_bound(alpha, n, r, rho) -> float:
    """Bound on Pr[phi_R >= (1 + 2a/(1-a)) r] for ``n`` resources, each
    online with probability ``rho``; ``r`` is the attacker/defender ratio."""
    return lemma1_term(alpha, n, r, rho).value


def lemma2_bound(alpha, n, s, sigma) -> float:
    """Same shape for online voters: ``n`` voters, ratio ``s``, online
    probability ``sigma``."""
    return lemma2_term(alpha, n, s, sigma).value


def lemma3_term(alpha, ell, t) -> Term:
    _need(alpha > 0, f"alpha must be positive, got {alpha}")
    _need(ell >= 0, "chain length must be nonnegative")
    _need(0 <= t <= 1, "attacker resource fraction must be in [0, 1]")
    if t == 0:
        return ZERO
    if ell == 0:
        return ONE
    return Term(log_chernoff_upper(alpha, mp.mpf(ell) * t))


def lemma3_bound(alpha, ell, t) -> float:
    """Bound on Pr[phi_B >= (1+a) t] after ``ell`` blocks, attacker share ``t``.

    With t = 0 the attacker never finds a block and the bound is 0.
    """
    return lemma3_term(alpha, ell, t).value


def corollary_alpha(alpha_prime, t, u) -> float:
    _need(t > 0, "attacker resource fraction must be positive")
    return (u * alpha_prime - t + u) / t


def corollary_term(alpha_prime, ell, t, u) -> Term:
    _need(alpha_prime > 0, f"alpha' must be positive, got {alpha_prime}")
    if t == 0:
        return ZERO
    a = corollary_alpha(alpha_prime, t, u)
    _need(a > 0, f"derived deviation {a:.6g} is not positive; expected block ratio {u} is too small for t={t}")
    return lemma3_term(a, ell, t)


def corollary_bound(alpha_prime, ell, t, u) -> float:
    """Bound on Pr[phi_B >= (1+a') u] where u is the expected block ratio."""
    return corollary_term(alpha_prime, ell, t, u).value


# -- composition ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    n_resources: int
    n_voters: int
    chain_length: int
    attacker_resource_fraction: float
    rho: float
    sigma: float
    epsilon: float
    split: tuple
    attacker_resource_ratio: Optional[float] = None
    attacker_peer_ratio: Optional[float] = None
    expected_block_ratio: Optional[float] = None
    tick_seconds: float = 1.0
    split_reading: str = "direct"

    def __post_init__(self):
        t = self.attacker_resource_fraction
        _need(0 <= t < 1, "attacker_resource_fraction must be in [0, 1)")
        r = t / (1 - t)
        if self.attacker_resource_ratio is None:
            object.__setattr__(self, "attacker_resource_ratio", r)
        else:
            _need(math.isclose(self.attacker_resource_ratio, r, rel_tol=1e-9, abs_tol=1e-12),
                  f"attacker_resource_ratio {self.attacker_resource_ratio} disagrees with t/(1-t) = {r}")
        if self.attacker_peer_ratio is None:
            object.__setattr__(self, "attacker_peer_ratio", self.attacker_resource_ratio)
        if self.expected_block_ratio is None:
            object.__setattr__(self, "expected_block_ratio", self.attacker_resource_ratio)
        split = tuple(float(x) for x in self.split)
        object.__setattr__(self, "split", split)
        _need(len(split) == 3, "split must have three parts")
        _need(all(x > 0 for x in split), "every part of the split must be positive")
        _need(0 < self.epsilon < 0.5, "epsilon must be in (0, 1/2)")
        _need(math.isclose(sum(split), self.epsilon, rel_tol=1e-9, abs_tol=1e-15),
              f"split sums to {sum(split)}, not epsilon = {self.epsilon}")
        for name in ("rho", "sigma"):
            _need(0 <= getattr(self, name) <= 1, f"{name} must be in [0, 1]")
        _need(self.n_resources >= 0 and self.n_voters >= 0 and self.chain_length >= 0, "counts must be nonnegative")
        _need(self.tick_seconds > 0, "tick_seconds must be positive")
        _need(self.split_reading in SPLIT_READINGS, f"split_reading must be one of {SPLIT_READINGS}")

    @classmethod
    def from_shares(cls, epsilon: float, shares, **kw) -> "BoundParams":
        """Split ``epsilon`` by fractional shares, e.g. (0.14, 0.11, 0.75)."""
        shares = tuple(float(s) for s in shares)
        _need(math.isclose(sum(shares), 1.0, rel_tol=1e-9), "shares must sum to 1")
        return cls(epsilon=epsilon, split=tuple(s * epsilon for s in shares), **kw)

    @classmethod
    def from_dict(cls, raw: dict) -> "BoundParams":
        raw = dict(raw)
        if "shares" in raw:
            return cls.from_shares(raw.pop("epsilon"), raw.pop("shares"), **raw)
        return cls(**raw)

    def lemma_deviations(self) -> tuple[float, float, float]:
        """Map the split to the (resource, block, membership) arguments."""
        a, b, g = self.split
        if self.split_reading == "halved":
            return a / 2, b, g / 2
        if self.split_reading == "inflation":
            # the ratio lemmas bound a deviation of 2x/(1-x); solve for x
            return a / (2 + a), b, g / (2 + g)
        return a, b, g


@dataclass
class BoundReport:
    params: BoundParams
    terms: dict
    log10_terms: dict
    total: float
    log10_total: float
    secure: float
    mtbf_seconds: float
    mtbf_years: float
    informative: bool
    in_regime: bool
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {
                "n_resources": p.n_resources, "n_voters": p.n_voters, "chain_length": p.chain_length,
                "attacker_resource_fraction": p.attacker_resource_fraction,
                "attacker_resource_ratio": p.attacker_resource_ratio,
                "attacker_peer_ratio": p.attacker_peer_ratio, "expected_block_ratio": p.expected_block_ratio,
                "rho": p.rho, "sigma": p.sigma, "epsilon": p.epsilon, "split": list(p.split),
                "split_reading": p.split_reading, "tick_seconds": p.tick_seconds,
            },
            "terms": self.terms,
            "log10_terms": self.log10_terms,
            "total": self.total,
            "log10_total": self.log10_total,
            "secure": self.secure,
            "mtbf_seconds": self.mtbf_seconds,
            "mtbf_years": self.mtbf_years,
            "informative": self.informative,
            "in_regime": self.in_regime,
            "flags": list(self.flags),
        }

    def table(self) -> str:
        rows = [("term", "probability", "log10")]
        for k in self.terms:
            rows.append((k, f"{self.terms[k]:.6e}", f"{self.log10_terms[k]:.4f}"))
        rows.append(("total", f"{self.total:.6e}", f"{self.log10_total:.4f}"))
        w = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w[i]) for i, c in enumerate(r)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * x for x in w))
        lines.append("")
        lines.append(f"secure probability per step >= 1 - {self.total:.6e}")
        lines.append(f"mean time between failures: {self.mtbf_seconds:.6e} s = {self.mtbf_years:.6e} years")
        if self.flags:
            lines.append("flags: " + ", ".join(self.flags))
        return "\n".join(lines) + "\n"


def theorem_bound(params: BoundParams) -> BoundReport:
    """Union bound over the resource, block and membership deviations."""
    a, b, g = params.lemma_deviations()
    t = params.attacker_resource_fraction
    parts = {
        "resource_churn": lemma1_term(a, params.n_resources, params.attacker_resource_ratio, params.rho),
        "miners_luck": corollary_term(b, params.chain_length, t, params.expected_block_ratio),
        "membership_churn": lemma2_term(g, params.n_voters, params.attacker_peer_ratio, params.sigma),
    }
    flags = []
    for name, term in parts.items():
        flags += [f"{f}:{name}" for f in term.flags]
    with mp.workdps(DPS):
        log_total = _log_add(*(p.log for p in parts.values()))
        total = float(mp.exp(log_total))
        log10_total = float(log_total / mp.log(10)) if log_total != -mp.inf else -math.inf
        mtbf = math.inf if total == 0 else float(mp.mpf(params.tick_seconds) / mp.exp(log_total))
    informative = total < 1
    if not informative:
        flags.append("non-informative")
    limit = 0.5 - params.epsilon
    r = params.attacker_resource_ratio
    if math.isclose(r, limit, rel_tol=1e-9, abs_tol=1e-12):
        flags.append("regime-boundary")
    in_regime = r < limit and not math.isclose(r, limit, rel_tol=1e-9, abs_tol=1e-12)
    if not in_regime and "regime-boundary" not in flags:
        flags.append("outside-regime")
    return BoundReport(
        params=params,
        terms={k: p.value for k, p in parts.items()},
        log10_terms={k: p.log10 for k, p in parts.items()},
        total=total,
        log10_total=log10_total,
        secure=1.0 - total,
        mtbf_seconds=mtbf,
        mtbf_years=mtbf / SECONDS_PER_YEAR,
        informative=informative,
        in_regime=in_regime,
        flags=flags,
    )


def golden_params(split_reading: str = "direct") -> BoundParams:
    """The real-world instance: 10^6 resources, 25,000 online voters,
    350,000 blocks, a 25% attacker, 99% availability, margin 1/2 - 1/3."""
    return BoundParams.from_shares(
        0.5 - 1 / 3, (0.14, 0.11, 0.75),
        n_resources=1_000_000, n_voters=25_000, chain_length=350_000,
        attacker_resource_fraction=0.25, rho=0.99, sigma=0.99, split_reading=split_reading,
    )


GOLDEN = golden_params()
