"""Acceptance suite: one test per criterion, each run at its stated
tolerance and runtime budget.  A PASS/FAIL line per criterion is printed
in the terminal summary."""

import hashlib
import json
import math
import random
from pathlib import Path

import numpy as np
from scipy.stats import binom

from conftest import CONFIGS, criterion
from peercensus import cli
from peercensus.analysis import lemma1_bound, lemma2_bound, lemma3_bound
from peercensus.simnet.churn import ChurnParams, churn_counts, online_fraction_trace
from peercensus.simnet.mining import block_share_trial
from peercensus.simnet.scripted import bft_fuzz_run, bootstrap_run, double_spend_run, fork_run, takeover_run

GOLDEN_FAILURE = 4.26e-15


def _ratio_tail_exact(n_a: int, n_d: int, online: float, threshold: float) -> float:
    """Pr[X/Y >= threshold] for X ~ Bin(n_a, online), Y ~ Bin(n_d, online).

    Y = 0 counts as an infinite ratio, so it is always inside the event.
    """
    px = binom.pmf(np.arange(n_a + 1), n_a, online)
    total = 0.0
    for y in range(n_d + 1):
        py = binom.pmf(y, n_d, online)
        if py == 0:
            continue
        if y == 0:
            total += py
            continue
        # smallest x with x / y >= threshold, guarding float rounding at the edge
        x_min = max(0, math.ceil(threshold * y - 1e-9))
        total += py * px[x_min:].sum()
    return float(min(1.0, total))


def test_criterion_01_golden_bound(tmp_path):
    with criterion(1, "real-world bound within 10x of 4.26e-15, MTBF in [3.5e6, 1.5e7] years", 1.0):
        assert cli.main(["analyze", "--config", str(CONFIGS / "golden.yaml"), "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "bound_report.json").read_text())
        total, years = report["total"], report["mtbf_years"]
        assert GOLDEN_FAILURE / 10 <= total <= GOLDEN_FAILURE * 10, (
            f"failure probability {total:.4e} is not within one order of magnitude of {GOLDEN_FAILURE:.2e}"
        )
        assert 3.5e6 <= years <= 1.5e7, f"MTBF {years:.4e} years outside [3.5e6, 1.5e7]"


def test_criterion_02_bound_dominates_exact():
    alphas = (0.01, 0.1, 0.25, 0.4, 0.49)
    onlines = (0.0, 0.2, 0.5, 0.9, 0.99, 1.0)
    with criterion(2, "ratio bounds dominate exact tails for every n <= 20", 60.0):
        checked = 0
        for n in range(1, 21):
            for n_a in range(0, n):
                n_d = n - n_a
                r = n_a / n_d
                for alpha in alphas:
                    thr = (1 + 2 * alpha / (1 - alpha)) * r
                    for online in onlines:
                        exact = _ratio_tail_exact(n_a, n_d, online, thr)
                        b1 = lemma1_bound(alpha, n, r, online)
                        b2 = lemma2_bound(alpha, n, r, online)
                        assert b1 >= exact - 1e-12, f"resource bound {b1} < exact {exact} at n={n} r={r} a={alpha} p={online}"
                        assert b2 >= exact - 1e-12, f"voter bound {b2} < exact {exact} at n={n} s={r} a={alpha} p={online}"
                        checked += 1
        assert checked == 210 * len(alphas) * len(onlines)


def test_criterion_03_block_ratio_frequency_vs_bound():
    ell, t, alpha, runs = 200, 0.25, 0.5, 2000
    total_res, att_res = 1000, 250
    bound = lemma3_bound(alpha, ell, t)
    margin = 2.5758293035489 * math.sqrt(bound * (1 - bound) / runs)
    with criterion(3, f"block-ratio event frequency <= bound {bound:.3e} + 99% margin over 2000 runs", 300.0):
        hits = 0
        for seed in range(runs):
            a = block_share_trial(ell, att_res, total_res, 600.0, random.Random(seed))
            d = ell - a
            if d == 0 or a / d >= (1 + alpha) * t:
                hits += 1
        freq = hits / runs
        assert freq <= bound + margin, (
            f"empirical frequency {freq:.4f} of A/D >= {(1 + alpha) * t} exceeds bound {bound:.4e} + margin {margin:.4e}"
        )


def test_criterion_04_bft_fuzz_prefix_safety():
    with criterion(4, "honest logs prefix-comparable in every one of 500 fuzz runs", 300.0):
        bad = []
        equivocations = 0
        for seed in range(500):
            r = bft_fuzz_run(seed)
            equivocations += r.equivocations
            if not (r.prefix_ok and r.unique_ts):
                bad.append(seed)
        assert not bad, f"safety violated in seeds {bad[:10]}"
        # the campaign must actually exercise equivocation
        assert equivocations > 500


def test_criterion_05_fork_resolution():
    with criterion(5, "exactly one sibling commits and the loser re-mines on the winner, 200 runs", 60.0):
        for seed in range(200):
            r = fork_run(seed)
            assert r.committed_siblings == 1, f"seed {seed}: {r.committed_siblings} siblings committed"
            assert r.loser_restarted and r.loser_chain_head_is_winner, f"seed {seed}: loser did not restart on the winner"


def test_criterion_06_double_spend_exclusion():
    with criterion(6, "exactly one of each conflicting pair commits and coins are conserved, 500 runs", 120.0):
        for seed in range(500):
            r = double_spend_run(seed)
            assert r.committed == 1, f"seed {seed}: {r.committed} of the pair committed"
            assert r.conserved, f"seed {seed}: ledger total differs from snapshot + reward x blocks"
            assert r.ledgers_agree and r.nonnegative, f"seed {seed}: replicas disagree or a balance went negative"
            assert r.blocks_rewarded >= 1


def test_criterion_07_churn_stationarity():
    day = 86400.0
    with criterion(7, "long-run online fraction within 0.005 of 0.99 over 1e5 ticks", 60.0):
        # daily ticks: one unit, p = 1/99 and q = 1 per tick
        daily = ChurnParams.from_rates(1 / 99, 1.0, day, day)
        frac = online_fraction_trace(daily, 100_000, random.Random(7))
        assert abs(frac - 0.99) <= 0.005, f"daily-tick fraction {frac:.5f}"
        # one-second ticks: per-day rates scaled down, 10^4 units started stationary
        sec = ChurnParams.from_rates(1 / 99, 1.0, day, 1.0)
        g = np.random.Generator(np.random.PCG64(7))
        units = 10_000
        on = int(g.binomial(units, sec.stationary))
        acc = 0
        for _ in range(100_000):
            on = churn_counts(on, units, sec, g)
            acc += on
        frac_s = acc / (100_000 * units)
        assert abs(frac_s - 0.99) <= 0.005, f"one-second-tick fraction {frac_s:.5f}"


def test_criterion_08_takeover_semantics():
    with criterion(8, "withholding above 1/3 stops Block/Join commits, old prefixes stay byte-identical", 60.0):
        for seed in range(10):
            r = takeover_run(seed)
            assert r.attacker_share_at_takeover > 1 / 3, f"seed {seed}: share {r.attacker_share_at_takeover}"
            assert r.defender_commits_after == 0, f"seed {seed}: {r.defender_commits_after} defender commits after takeover"
            assert r.prefixes_identical, f"seed {seed}: a pre-takeover prefix changed"
            assert r.honest_logs_comparable
            assert r.withheld_messages > 0


def test_criterion_09_bootstrap():
    with criterion(9, "94 voters, 10 online, blocks 95..100 re-committed in order, deterministic", 10.0):
        r = bootstrap_run(seed=0)
        assert len(r.plan.voters) == 94
        assert len(r.plan.online) == 10
        assert r.plan.to_record()["recommit_heights"] == list(range(95, 101))
        assert r.recommitted == r.expected, "re-committed blocks differ from heights 95..100"
        assert r.final_chain_length == 100
        again = bootstrap_run(seed=0)
        assert again.plan.to_record() == r.plan.to_record()
        assert again.recommitted == r.recommitted


def _digest_dir(d: Path) -> str:
    h = hashlib.sha256()
    for f in sorted(d.iterdir()):
        h.update(f.name.encode() + b"\0" + f.read_bytes())
    return h.hexdigest()


def test_criterion_10_simulate_determinism(tmp_path):
    cases = [
        ("baseline.yaml", ["--seed", "7"]),
        ("protocol.yaml", ["--seed", "7", "--duration", "200"]),
    ]
    with criterion(10, "20 repeated simulate runs are byte-identical", 60.0):
        for name, extra in cases:
            digests = set()
            for trial in range(20):
                out = tmp_path / f"{name}-{trial}"
                argv = ["simulate", "--config", str(CONFIGS / name), "--out", str(out)] + extra
                assert cli.main(argv) == 0
                assert sorted(p.name for p in out.iterdir()) == ["metrics.csv", "summary.json"]
                digests.add(_digest_dir(out))
            assert len(digests) == 1, f"{name}: {len(digests)} distinct outputs over 20 trials"
