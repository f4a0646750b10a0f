import random
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

from peercensus.blockchain import Chain, make_genesis, mine_block
from peercensus.chain_agreement import SharedState
from peercensus.pow_identity import gen_identity

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# criterion number -> (passed, detail); filled by the acceptance suite
RESULTS: dict = {}


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    """Time one acceptance criterion and record a PASS/FAIL line for it.

    The body raises AssertionError on failure; the runtime budget is checked
    afterwards so a slow pass is still reported as a failure.
    """
    t0 = time.perf_counter()
    try:
        yield
    except AssertionError as e:
        dt = time.perf_counter() - t0
        RESULTS[number] = (False, f"{title} ({dt:.2f}s): {str(e).splitlines()[0] if str(e) else 'assertion failed'}")
        raise
    dt = time.perf_counter() - t0
    ok = dt < budget_s
    RESULTS[number] = (ok, f"{title} ({dt:.2f}s, budget {budget_s:g}s)")
    assert ok, f"criterion {number} took {dt:.2f}s, budget {budget_s:g}s"


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


@pytest.fixture
def rng():
    return random.Random(1234)


def build_chain(n: int, rng: random.Random, difficulty: int = 1):
    ids = [gen_identity(rng) for _ in range(n)]
    chain = Chain(make_genesis(difficulty), min_difficulty=difficulty)
    for i in ids:
        chain.append(mine_block(chain.head, i.public_key, difficulty, rng))
    return chain, ids


@pytest.fixture
def four_voters(rng):
    """A 4-block chain whose four finders are all online voters."""
    chain, ids = build_chain(4, rng)
    return chain, ids, SharedState.initial(chain, [i.public_key for i in ids])
