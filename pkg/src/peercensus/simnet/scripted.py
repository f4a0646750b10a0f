"""Scripted protocol scenarios used by the property suites and the demos.

Each function builds a small cluster from one seed, drives a specific
situation (equivocating primary, sibling blocks, conflicting transfers,
vote withholding, bootstrap) and returns the facts a check needs.
"""

from __future__ import annotations

import io
import random
from dataclasses import dataclass, field
from typing import Optional

from ..blockchain import Chain, Found, ProposeBlock, Start, StartMining, make_genesis, mine_block
from ..chain_agreement.records import dump_log
from ..chain_agreement.state import OpKind, SharedState, block_op
from ..discoin import bootstrap_balances, make_tx
from ..pow_identity import Identity, gen_identity
from .attacks import ByzantineFuzz, Withholding
from .bootstrap import BootstrapPlan, bootstrap_from_chain
from .cluster import Cluster, NodeConfig, logs_prefix_comparable, one_op_per_timestamp
from .entities import Ownership, Role
from .network import DelaySpec

FUZZ_DELAY = DelaySpec("uniform", low=1, high=4)


def synthetic_chain(n: int, rng: random.Random, difficulty: int = 1) -> tuple[Chain, list[Identity]]:
    """A legal chain of ``n`` blocks, one fresh identity per block."""
    ids = [gen_identity(rng) for _ in range(n)]
    chain = Chain(make_genesis(difficulty), min_difficulty=difficulty)
    for i in ids:
        chain.append(mine_block(chain.head, i.public_key, difficulty, rng))
    return chain, ids


def log_bytes(entries) -> bytes:
    buf = io.StringIO()
    dump_log(entries, buf)
    return buf.getvalue().encode()


def _ownership(ids, attacker: set) -> tuple[Ownership, object, object]:
    own = Ownership()
    a = own.add_entity(Role.ATTACKER)
    d = own.add_entity(Role.DEFENDER)
    for i in ids:
        own.add_peer(a if i.public_key in attacker else d, i.public_key)
    return own, a, d


# -- byzantine fuzzing -------------------------------------------------------


@dataclass
class FuzzResult:
    seed: int
    prefix_ok: bool
    unique_ts: bool
    log_lengths: list
    equivocations: int
    view_changes: list


def bft_fuzz_run(seed: int, rounds: int = 3, round_ticks: int = 150) -> FuzzResult:
    """Four replicas, one running ByzantineFuzz and holding the newest block
    (so it is primary in view 0).  Each round two clients propose sibling
    blocks; the winning finder starts an honest replica, so I grows by one
    per round while the byzantine replica stays the only faulty one."""
    rng = random.Random(seed)
    chain, ids = synthetic_chain(4, rng)
    byz = ids[-1]
    init = SharedState.initial(chain, [i.public_key for i in ids])
    own, _, ent_d = _ownership(ids, {byz.public_key})
    strat = ByzantineFuzz(seed, p_drop=rng.uniform(0, 0.5), p_dup=rng.uniform(0, 0.5),
                          p_equivocate=rng.uniform(0.5, 1.0))
    cl = Cluster(init, ids, seed=seed, delay=FUZZ_DELAY, owner=own, strategies={byz.public_key: strat})
    for _ in range(rounds):
        ref = cl.reference()
        if ref is None:
            break
        for _ in range(2):
            m = gen_identity(rng)
            own.add_peer(ent_d, m.public_key)
            cl.add_identity(m)
            b = mine_block(ref.ca.chain.head, m.public_key, 1, rng)
            cl.propose_as_client(m, block_op(b, m))
        # spurious timeouts at two honest replicas drag everyone into the
        # next view, rotating the byzantine replica back into the primary seat
        kick = rng.randrange(round_ticks)
        for t in range(round_ticks):
            if t == kick:
                honest = [n for n in cl.honest_nodes() if n.online and n.ca.is_member]
                for n in rng.sample(honest, min(2, len(honest))):
                    cl._send(n, n.ca.on_primary_timeout(cl.time))
            cl.step()
    honest = cl.honest_nodes()
    logs = [n.ca.log for n in honest]
    return FuzzResult(
        seed=seed,
        prefix_ok=logs_prefix_comparable(logs),
        unique_ts=one_op_per_timestamp(logs),
        log_lengths=[len(l) for l in logs],
        equivocations=strat.equivocations,
        view_changes=[n.ca.engine.stats.view_changes for n in honest],
    )


# -- fork resolution -------------------------------------------------------------


@dataclass
class ForkResult:
    seed: int
    committed_siblings: int
    winner: Optional[bytes]
    loser_restarted: bool
    loser_chain_head_is_winner: bool
    pending: bool


def fork_run(seed: int, max_ticks: int = 200) -> ForkResult:
    """Two miners find legal children of the same head at the same tick."""
    rng = random.Random(seed)
    chain, ids = synthetic_chain(4, rng)
    init = SharedState.initial(chain, [i.public_key for i in ids])
    delay = DelaySpec("uniform", low=1, high=3)
    cl = Cluster(init, ids, seed=seed, delay=delay)
    miners = [gen_identity(rng), gen_identity(rng)]
    blocks = []
    for m in miners:
        cl.add_miner(m)
        cl.miner_event(m.public_key, Start())
        b = mine_block(chain.head, m.public_key, 1, rng)
        blocks.append(b)
    for m, b in zip(miners, blocks):
        for act in cl.miner_event(m.public_key, Found(b)):
            if isinstance(act, ProposeBlock):
                cl.propose_as_client(m, block_op(act.block, m))
    height = len(chain) + 1
    cl.run_until(lambda c: len(c.reference().ca.chain) >= height, max_ticks)
    ref = cl.reference()
    on_chain = [b for b in blocks if ref.ca.chain.height_of(b.peer) == height]
    winner = on_chain[0] if len(on_chain) == 1 else None
    restarted = head_ok = False
    if winner is not None:
        loser = next(m for m, b in zip(miners, blocks) if b is not winner)
        acts = cl.miner_actions[loser.public_key]
        restarted = any(isinstance(a, StartMining) and a.target == winner for a in acts)
        head_ok = cl.miners[loser.public_key].current_chain.head == winner
    return ForkResult(seed, len(on_chain), winner.peer if winner else None, restarted, head_ok,
                      pending=len(ref.ca.chain) < height)


# -- double spend ------------------------------------------------------------------


@dataclass
class DoubleSpendResult:
    seed: int
    committed: int
    conserved: bool
    ledgers_agree: bool
    nonnegative: bool
    blocks_rewarded: int


def double_spend_run(seed: int, reward: int = 50, max_ticks: int = 120) -> DoubleSpendResult:
    """A voter sends its whole balance twice with the same sequence number,
    to two different recipients, through two different replicas.  A block
    commit in the middle mints a reward so conservation covers minting."""
    rng = random.Random(seed)
    chain, ids = synthetic_chain(4, rng)
    init = SharedState.initial(chain, [i.public_key for i in ids])
    balances = {i.public_key: 100 for i in ids}
    cl = Cluster(init, ids, seed=seed, delay=DelaySpec("uniform", low=1, high=4),
                 ledger=bootstrap_balances(balances), reward=reward)
    order = list(ids)
    rng.shuffle(order)
    spender, x, y = order[0], order[1], order[2]
    m = gen_identity(rng)
    cl.propose_as_client(m, block_op(mine_block(chain.head, m.public_key, 1, rng), m))
    cl.run_until(lambda c: len(c.reference().ca.chain) > len(chain), max_ticks)
    cl.run(rng.randint(0, 8))
    v = 100
    t1 = make_tx(spender, x.public_key, v, 1)
    t2 = make_tx(spender, y.public_key, v, 1)
    cl.submit(x.public_key, t1)
    cl.submit(y.public_key, t2)

    def settled(c):
        return all(n.app.log for n in c.honest_nodes() if n.pk in balances)

    cl.run_until(settled, max_ticks)
    cl.run(20)
    nodes = [n for n in cl.honest_nodes() if n.pk in balances]
    ref = nodes[0]
    done = {e.op.digest for e in ref.app.log}
    committed = (t1.digest in done) + (t2.digest in done)
    # rewards are folded in lazily, so compare the settled ledgers against
    # every block the CA committed since the snapshot
    ledgers = [n.app.settled() for n in nodes]
    blocks = ref.app.machine.blocks_since_start()
    return DoubleSpendResult(
        seed=seed,
        committed=committed,
        conserved=all(B.total() == B.snapshot_total + reward * blocks and B.conserved(reward) for B in ledgers),
        ledgers_agree=all(B.balances == ledgers[0].balances for B in ledgers),
        nonnegative=all(v >= 0 for B in ledgers for v in B.balances.values()),
        blocks_rewarded=blocks,
    )


# -- takeover ----------------------------------------------------------------------


@dataclass
class TakeoverResult:
    seed: int
    attacker_share_at_takeover: float
    defender_commits_after: int
    attacker_blocks_after: int
    prefixes_identical: bool
    withheld_messages: int
    pre_takeover_length: int
    honest_logs_comparable: bool
    log: list = field(default_factory=list, repr=False)


def takeover_run(seed: int, settle_ticks: int = 300) -> TakeoverResult:
    """Four defender voters and one withholding attacker voter; the attacker
    then gets two blocks committed, reaching 3/7 of I, and defender Block
    and Join operations stall while the old log stays untouched."""
    rng = random.Random(seed)
    chain, ids = synthetic_chain(5, rng)
    att = ids[rng.randrange(5)]
    own, ent_a, ent_d = _ownership(ids, {att.public_key})
    init = SharedState.initial(chain, [i.public_key for i in ids])
    strat = {att.public_key: Withholding()}
    cl = Cluster(init, ids, seed=seed, delay=DelaySpec("uniform", low=1, high=3), owner=own, strategies=strat)

    def commit_block(identity: Identity, entity, strategy=None) -> None:
        own.add_peer(entity, identity.public_key)
        cl.add_identity(identity, strategy)
        ref = cl.reference()
        want = len(ref.ca.chain) + 1
        cl.propose_as_client(identity, block_op(mine_block(ref.ca.chain.head, identity.public_key, 1, rng), identity))
        cl.run_until(lambda c: len(c.reference().ca.chain) >= want, settle_ticks)

    # one defender block while secure: liveness is intact
    commit_block(gen_identity(rng), ent_d)
    # the attacker's own blocks are never withheld
    for _ in range(2):
        w = Withholding()
        a = gen_identity(rng)
        strat[a.public_key] = w
        commit_block(a, ent_a, w)
    cl.run(20)
    honest = cl.honest_nodes()
    ref = cl.reference()
    I = ref.ca.online_voters
    share = sum(1 for p in I if own.is_attacker_peer(p)) / len(I)
    snap = {n.pk: log_bytes(n.ca.log) for n in honest}
    base = {n.pk: len(n.ca.log) for n in honest}
    # defender tries a block ...
    d_new = gen_identity(rng)
    own.add_peer(ent_d, d_new.public_key)
    cl.propose_as_client(d_new, block_op(mine_block(ref.ca.chain.head, d_new.public_key, 1, rng), d_new))
    # ... and a defender that dropped out (its Leave is not withheld) tries to rejoin
    gone = next(n for n in honest if n.pk in I)
    cl.set_online(gone.pk, False)
    cl.run_until(lambda c: gone.pk not in c.reference().ca.online_voters, settle_ticks)
    cl.set_online(gone.pk, True)
    cl.run(settle_ticks)
    after = [e for n in honest for e in n.ca.log[base[n.pk]:]]
    d_commits = sum(1 for e in after if e.op.kind in (OpKind.BLOCK, OpKind.JOIN)
                    and not own.is_attacker_peer(e.op.subject))
    a_after = sum(1 for e in after if e.op.kind is OpKind.BLOCK and own.is_attacker_peer(e.op.subject))
    same = all(log_bytes(n.ca.log[:base[n.pk]]) == snap[n.pk] for n in honest)
    return TakeoverResult(
        seed=seed,
        attacker_share_at_takeover=share,
        defender_commits_after=d_commits,
        attacker_blocks_after=a_after,
        prefixes_identical=same,
        withheld_messages=sum(s.withheld for s in strat.values()),
        pre_takeover_length=min(base.values()),
        honest_logs_comparable=logs_prefix_comparable([n.ca.log for n in honest]),
        log=list(ref.ca.log),
    )


# -- bootstrap ---------------------------------------------------------------------


@dataclass
class BootstrapResult:
    plan: BootstrapPlan
    recommitted: list
    expected: list
    final_chain_length: int
    online_after: int


def bootstrap_run(seed: int = 0, length: int = 100, l_m: int = 100, k: int = 6, j: int = 10,
                  max_ticks: int = 200) -> BootstrapResult:
    """Cut a synthetic chain, start the CA on its prefix and re-commit the
    tail one block at a time through the real protocol."""
    rng = random.Random(seed)
    chain, ids = synthetic_chain(length, rng)
    plan = bootstrap_from_chain(chain, l_m, k, j)
    by_pk = {i.public_key: i for i in ids}
    running = [by_pk[p] for p in plan.online]
    cl = Cluster(plan.state, running, seed=seed, delay=DelaySpec("uniform", low=1, high=3),
                 node_config=NodeConfig())
    for b in plan.recommit:
        finder = by_pk[b.peer]
        cl.add_identity(finder)
        want = len(cl.reference().ca.chain) + 1
        cl.propose_as_client(finder, block_op(b, finder))
        cl.run_until(lambda c: len(c.reference().ca.chain) >= want, max_ticks)
    ref = cl.reference()
    recommitted = [e.op.block for e in ref.ca.log if e.op.kind is OpKind.BLOCK]
    return BootstrapResult(plan, recommitted, list(plan.recommit), len(ref.ca.chain), len(ref.ca.online_voters))
