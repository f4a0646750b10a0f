"""Scenario runner.

Two engines share one config format:

* ``analytic`` tracks counts only.  Resources and voters churn by exact
  k-step binomials, blocks arrive as a Poisson stream with a uniform winner
  among online resources, and the CA is reduced to its membership effect:
  a block adds its finder to I, failed members leave, recovered voters
  rejoin.  With the withholding strategy the attacker blocks every defender
  Block/Join commit while it holds at least a third of I.  This scales to
  hundreds of thousands of ticks.
* ``protocol`` runs real replicas (CA and Discoin) on the simulated network,
  with analytic block arrivals driving real mined blocks, per-peer churn,
  optional Discoin traffic and attacker strategies on the wire.  It is meant
  for tens of peers and a few thousand ticks.

Both are pure functions of the config, seed included.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from ..blockchain import Chain, hash_block, make_genesis, mine_block
from ..chain_agreement.state import SharedState, block_op
from ..discoin import bootstrap_balances, make_tx
from ..pow_identity import gen_identity
from .attacks import make_strategy
from .churn import ChurnParams, churn_counts, churn_step
from .cluster import Cluster, NodeConfig
from .config import ConfigError, ScenarioConfig
from .entities import Ownership, Role
from .metrics import Metrics, is_secure, ratio

NEVER_FAIL = ChurnParams(0.0, 1.0)


def check_genesis(config: ScenarioConfig):
    g = make_genesis(config.min_difficulty)
    if config.genesis_digest is not None and hash_block(g).hex() != config.genesis_digest.lower():
        raise ConfigError("genesis_digest does not match the genesis block for min_difficulty")
    return g


def initial_ownership(config: ScenarioConfig, rng_shuffle) -> list[bool]:
    """Attacker flag per initial block, oldest first (height 1 .. length)."""
    n = config.initial_chain_length
    n_a = round(config.attacker_block_fraction * n)
    flags = [True] * n_a + [False] * (n - n_a)
    rng_shuffle(flags)
    return flags


def run_scenario(config: ScenarioConfig) -> Metrics:
    config.validate()
    check_genesis(config)
    if config.engine == "analytic":
        return _run_analytic(config)
    return _run_protocol(config)


# -- analytic engine --------------------------------------------------------


@dataclass
class _Group:
    """Voter counts of one side: in I, online awaiting Join, offline."""

    in_I: int = 0
    waiting: int = 0
    off: int = 0
    dormant: int = 0
    blocks: int = 0

    @property
    def voters(self) -> int:
        return self.in_I + self.waiting + self.off


def _churn_group(g: _Group, params: ChurnParams, rng, k: int) -> int:
    """Advance the group's voters by k ticks; returns how many left I."""
    stay, recover = params.k_step(k)
    kept = int(rng.binomial(g.in_I, stay))
    waiting = int(rng.binomial(g.waiting, stay)) + int(rng.binomial(g.off, recover))
    left = g.in_I - kept
    g.off = g.voters - kept - waiting
    g.in_I, g.waiting = kept, waiting
    return left


def _run_analytic(config: ScenarioConfig) -> Metrics:
    rng = np.random.Generator(np.random.PCG64(config.seed))
    rp = config.resource_params()
    pp = config.peer_params()
    ap = NEVER_FAIL if config.attacker_peers_never_fail else pp
    withholding = config.strategy == "withholding"

    n_a_res = round(config.attacker_resource_fraction * config.n_resources)
    n_d_res = config.n_resources - n_a_res
    rho = rp.stationary if rp.p + rp.q > 0 else 1.0
    a_on = int(rng.binomial(n_a_res, rho))
    d_on = int(rng.binomial(n_d_res, rho))

    flags = initial_ownership(config, lambda xs: rng.shuffle(xs))
    j = config.initial_online_voters
    A, D = _Group(), _Group()
    sigma = pp.stationary if pp.p + pp.q > 0 else 1.0
    for h, attacker in enumerate(flags):
        g = A if attacker else D
        g.blocks += 1
        if h >= len(flags) - j:
            g.in_I += 1
        else:
            up = rng.random() < (1.0 if attacker and config.attacker_peers_never_fail else sigma)
            if up:
                g.waiting += 1
            else:
                g.off += 1

    rate = config.tick_seconds / config.tau  # blocks per tick
    m = Metrics()
    committed = 0
    withheld = 0
    t = 0

    def blocked() -> bool:
        return withholding and not is_secure(A.in_I, A.in_I + D.in_I)

    while t < config.duration:
        k = min(config.sample_every, config.duration - t)
        a_on = churn_counts(a_on, n_a_res, rp, rng, k)
        d_on = churn_counts(d_on, n_d_res, rp, rng, k)
        committed += _churn_group(A, ap, rng, k)
        committed += _churn_group(D, pp, rng, k)
        # recovered voters rejoin in random order; the attacker's own Joins
        # always pass, a defender's only while the attacker cannot block it
        while A.waiting or D.waiting:
            if rng.random() * (A.waiting + D.waiting) < A.waiting:
                A.waiting -= 1
                A.in_I += 1
            elif blocked():
                if not A.waiting:
                    break
                continue
            else:
                D.waiting -= 1
                D.in_I += 1
            committed += 1
        online = a_on + d_on
        events = int(rng.poisson(rate * k)) if online else 0
        for _ in range(events):
            if rng.random() * online < a_on:
                A.blocks += 1
                committed += 1
                if config.fresh_attacker_identities:
                    A.in_I += 1
                else:
                    A.dormant += 1
            elif blocked():
                withheld += 1
            else:
                D.blocks += 1
                D.in_I += 1
                committed += 1
        t += k
        m.record(t, ratio(a_on, d_on), ratio(A.in_I, D.in_I), ratio(A.blocks, D.blocks),
                 is_secure(A.in_I, A.in_I + D.in_I), A.blocks + D.blocks, committed)

    m.blocks_attacker = A.blocks
    m.blocks_defender = D.blocks
    m.info = {"engine": "analytic", "seed": config.seed, "duration": config.duration,
              "withheld_blocks": withheld, "config_digest": config.digest()}
    return m


# -- protocol engine ----------------------------------------------------------


@dataclass
class _Traffic:
    next_seq: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)
    sent: int = 0


def _seq(tr: _Traffic, ledger, pk: bytes) -> int:
    s = max(tr.next_seq.get(pk, 0), ledger.last_seq.get(pk, 0)) + 1
    tr.next_seq[pk] = s
    return s


def _run_protocol(config: ScenarioConfig) -> Metrics:
    rng = random.Random(config.seed)
    nrng = np.random.Generator(np.random.PCG64(config.seed))
    d = config.min_difficulty
    genesis = check_genesis(config)
    rp = config.resource_params()
    pp = config.peer_params()
    ap = NEVER_FAIL if config.attacker_peers_never_fail else pp

    owner = Ownership()
    ent_a = owner.add_entity(Role.ATTACKER)
    ent_d = owner.add_entity(Role.DEFENDER)
    flags = initial_ownership(config, rng.shuffle)
    chain = Chain(genesis, min_difficulty=d)
    ids = []
    for attacker in flags:
        ident = gen_identity(rng)
        chain.append(mine_block(chain.head, ident.public_key, d, rng))
        owner.add_peer(ent_a if attacker else ent_d, ident.public_key)
        ids.append(ident)
    j = config.initial_online_voters
    online = [i.public_key for i in ids[-j:]]
    init = SharedState.initial(chain, online)
    ledger = bootstrap_balances({i.public_key: config.initial_balance for i in ids})

    def strategy_for(pk: bytes, n: int):
        if owner.is_attacker_peer(pk) and config.strategy != "honest":
            return make_strategy(config.strategy, config.seed * 7919 + n)
        return None

    strategies = {}
    for n, ident in enumerate(ids):
        s = strategy_for(ident.public_key, n)
        if s is not None:
            strategies[ident.public_key] = s
    node_cfg = NodeConfig(ping_interval=config.ping_interval, suspicion_threshold=config.suspicion_threshold,
                          base_timeout=config.base_timeout)
    cl = Cluster(init, ids, seed=rng.randrange(1 << 32), delay=config.delay, node_config=node_cfg,
                 ledger=ledger, reward=config.reward, owner=owner, strategies=strategies)
    sigma = pp.stationary if pp.p + pp.q > 0 else 1.0
    in_I = set(online)
    for pk in sorted(cl.nodes):
        if pk not in in_I:
            cl.set_online(pk, rng.random() < sigma)

    n_a_res = round(config.attacker_resource_fraction * config.n_resources)
    n_d_res = config.n_resources - n_a_res
    rho = rp.stationary if rp.p + rp.q > 0 else 1.0
    a_on = int(nrng.binomial(n_a_res, rho))
    d_on = int(nrng.binomial(n_d_res, rho))
    tau_ticks = config.tau / config.tick_seconds
    next_block = max(1, math.ceil(rng.expovariate(1.0 / tau_ticks)))
    dormant: set[bytes] = set()
    blocks_a = sum(flags)
    blocks_d = len(flags) - blocks_a
    seen_blocks = 0
    tr = _Traffic()
    m = Metrics()
    mined = 0

    while cl.time < config.duration:
        t = cl.time + 1
        a_on = churn_counts(a_on, n_a_res, rp, nrng)
        d_on = churn_counts(d_on, n_d_res, rp, nrng)
        for pk in sorted(cl.nodes):
            node = cl.nodes[pk]
            if pk in dormant:
                continue
            params = ap if owner.is_attacker_peer(pk) else pp
            cl.set_online(pk, churn_step(node.online, params, rng))
        ref = cl.reference()
        if t >= next_block:
            next_block = t + max(1, math.ceil(rng.expovariate(1.0 / tau_ticks)))
            if a_on + d_on > 0 and ref is not None:
                attacker = rng.random() * (a_on + d_on) < a_on
                ident = gen_identity(rng)
                owner.add_peer(ent_a if attacker else ent_d, ident.public_key)
                cl.add_identity(ident, strategy_for(ident.public_key, len(ids) + mined))
                if attacker and not config.fresh_attacker_identities:
                    dormant.add(ident.public_key)
                mined += 1
                b = mine_block(ref.ca.chain.head, ident.public_key, d, rng)
                cl.propose_as_client(ident, block_op(b, ident))
        if config.tx_every and t % config.tx_every == 0 and ref is not None:
            _inject_traffic(cl, ref, config, rng, tr)
        cl.step()
        for pk in dormant:
            if pk in cl.nodes:
                cl.set_online(pk, False)
        ref = cl.reference()
        if ref is None:
            continue
        while seen_blocks < len(cl.block_commits):
            _, b = cl.block_commits[seen_blocks]
            seen_blocks += 1
            if owner.is_attacker_peer(b.peer):
                blocks_a += 1
            else:
                blocks_d += 1
        if t % config.sample_every == 0 or t == config.duration:
            I = ref.ca.online_voters
            ia = sum(1 for p in I if owner.is_attacker_peer(p))
            ops = len(ref.ca.log) + (len(ref.app.log) if ref.app is not None else 0)
            m.record(t, ratio(a_on, d_on), ratio(ia, len(I) - ia), ratio(blocks_a, blocks_d),
                     is_secure(ia, len(I)), len(ref.ca.chain), ops)

    ref = cl.reference()
    honest = cl.honest_nodes()
    m.blocks_attacker = blocks_a
    m.blocks_defender = blocks_d
    if ref is not None:
        m.view_changes = ref.ca.engine.stats.view_changes
        m.commit_latencies = list(ref.ca.engine.stats.commit_latency)
    committed_pairs = both_pairs = 0
    if ref is not None and ref.app is not None:
        done = {e.op.digest for e in ref.app.log}
        committed_pairs = sum(1 for a, b in tr.pairs if (a.digest in done) != (b.digest in done))
        both_pairs = sum(1 for a, b in tr.pairs if a.digest in done and b.digest in done)
    m.info = {
        "engine": "protocol",
        "seed": config.seed,
        "duration": config.duration,
        "config_digest": config.digest(),
        "nodes": len(cl.nodes),
        "honest_nodes": len(honest),
        "blocks_mined": mined,
        "transactions_sent": tr.sent,
        "double_spend_pairs": len(tr.pairs),
        "double_spend_pairs_resolved": committed_pairs,
        "double_spend_pairs_both_committed": both_pairs,
        "ledger_conserved": bool(ref is not None and ref.app is not None and _settled_ok(ref.app, config.reward)),
        "messages_dropped": cl.net.dropped,
    }
    return m


def _settled_ok(app, reward: int) -> bool:
    B = app.settled()
    return B.total() == B.snapshot_total + reward * app.machine.blocks_since_start()


def _inject_traffic(cl: Cluster, ref, config: ScenarioConfig, rng: random.Random, tr: _Traffic) -> None:
    B = ref.app.ledger
    honest = [n for n in cl.honest_nodes() if n.online and n.ca.is_member]
    if len(honest) < 2:
        return
    senders = [n for n in honest if B.balance(n.pk) > 0]
    if senders:
        src = senders[rng.randrange(len(senders))]
        dst = honest[rng.randrange(len(honest))]
        if dst is not src:
            v = rng.randint(1, min(10, B.balance(src.pk)))
            cl.submit(src.pk, make_tx(src.identity, dst.pk, v, _seq(tr, B, src.pk)))
            tr.sent += 1
    if config.strategy != "double_spend":
        return
    cheats = [n for pk, n in sorted(cl.nodes.items())
              if n.online and n.ca.is_member and cl.owner.is_attacker_peer(pk) and B.balance(pk) > 0]
    if not cheats:
        return
    c = cheats[rng.randrange(len(cheats))]
    x, y = rng.sample(honest, 2)
    seq = _seq(tr, B, c.pk)
    v = B.balance(c.pk)
    t1 = make_tx(c.identity, x.pk, v, seq)
    t2 = make_tx(c.identity, y.pk, v, seq)
    cl.submit(x.pk, t1)
    cl.submit(y.pk, t2)
    tr.pairs.append((t1, t2))
    tr.sent += 2
