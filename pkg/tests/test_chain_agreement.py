import random
from collections import deque
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from conftest import build_chain
from peercensus.blockchain import mine_block
from peercensus.chain_agreement import (
    COMMIT,
    PRE_PREPARE,
    PREPARE,
    CaReplica,
    LogicalTimestamp,
    OpKind,
    SharedState,
    SyncError,
    Vote,
    apply_commit,
    block_op,
    current_primary,
    dump_log,
    join_op,
    leave_op,
    load_log,
    max_faulty,
    quorum_size,
    sign_message,
    sync_new_peer,
    ts_less,
    validate,
)
from peercensus.chain_agreement.engine import PhaseMessage
from peercensus.pow_identity import gen_identity
from peercensus.simnet.metrics import is_secure, is_secure_phi


class Harness:
    """Zero-fuss message pump over CaReplicas: every message takes one tick."""

    def __init__(self, chain, ids, online=None, running=None, **kw):
        online = [i.public_key for i in ids] if online is None else online
        self.init = SharedState.initial(chain, online)
        self.up = set(i.public_key for i in ids) if running is None else set(running)
        self.ids = {i.public_key: i for i in ids}
        self.reps = {pk: CaReplica(self.ids[pk], self.init, self.reachable, **kw) for pk in sorted(self.up)}
        self.q = deque()
        self.t = 0

    def reachable(self, p):
        return p in self.up

    def route(self, src, out):
        for dst, msg in out:
            targets = sorted(self.reps[src].online_voters) if dst is None else [dst]
            for p in targets:
                if p != src:
                    self.q.append((p, msg))

    def client(self, identity, op):
        msg = sign_message(identity, "ca", "propose", None, 0, None, op)
        for p in sorted(self.init.online_voters):
            self.q.append((p, msg))

    def run(self, ticks):
        for _ in range(ticks):
            batch, self.q = self.q, deque()
            for dst, msg in batch:
                if dst in self.up and dst in self.reps:
                    self.route(dst, self.reps[dst].handle_message(msg, self.t))
            self.t += 1
            for p in sorted(self.up):
                if p in self.reps:
                    self.route(p, self.reps[p].tick(self.t))

    def spawn(self, identity, **kw):
        """Start a replica for a new block finder, synced from a live log."""
        src = self.live()[0]
        rep = CaReplica(identity, self.init, self.reachable, **kw)
        rep.engine.clock = self.t
        rep.catch_up(src.log)
        self.reps[identity.public_key] = rep
        self.up.add(identity.public_key)
        return rep

    def live(self):
        return [self.reps[p] for p in sorted(self.up) if p in self.reps]


# -- timestamps, primaries, quorums -----------------------------------------------


def test_ts_less_examples():
    T = LogicalTimestamp
    assert ts_less(T(2, 0, 5), T(3, 0, 0))
    assert ts_less(T(3, 0, 9), T(3, 1, 0))
    assert not ts_less(T(3, 1, 2), T(3, 1, 2))


@given(st.tuples(*[st.integers(0, 5)] * 3), st.tuples(*[st.integers(0, 5)] * 3))
def test_ts_less_is_a_strict_total_order(a, b):
    a, b = LogicalTimestamp(*a), LogicalTimestamp(*b)
    assert not (ts_less(a, b) and ts_less(b, a))
    assert ts_less(a, b) or ts_less(b, a) or a == b


def test_current_primary_follows_rank(rng):
    chain, ids = build_chain(5, rng)
    assert current_primary(chain, 0) == ids[-1].public_key
    assert current_primary(chain, 1) == ids[-2].public_key
    assert current_primary(chain, 5) == current_primary(chain, 0)


def test_quorum_examples():
    assert quorum_size(4) == 3
    assert quorum_size(1) == 1
    assert quorum_size(10) == 7
    with pytest.raises(ValueError):
        quorum_size(0)


@given(st.integers(1, 400))
def test_any_two_quorums_share_an_honest_member(n):
    q, f = quorum_size(n), max_faulty(n)
    assert 2 * q - n >= f + 1
    # and a quorum is reachable with f members silent
    assert q <= n - f


@given(st.integers(0, 300), st.integers(0, 300))
def test_secure_predicates_agree(a, d):
    n = a + d
    if n == 0:
        return
    assert is_secure(a, n) == is_secure_phi(a, d)


# -- validation and commits --------------------------------------------------------


def test_validate_examples(rng):
    chain, ids = build_chain(5, rng)
    online = {i.public_key for i in ids[1:]}
    state = SharedState.initial(chain, online)
    me = ids[1]
    stale = mine_block(chain.block_at(3), gen_identity(rng).public_key, 1, rng)
    assert not validate(block_op(stale, me), state, lambda p: True)
    good = mine_block(chain.head, gen_identity(rng).public_key, 1, rng)
    assert validate(block_op(good, me), state, lambda p: True)
    stranger = gen_identity(rng).public_key
    assert not validate(join_op(stranger, me), state, lambda p: True)
    assert validate(join_op(ids[0].public_key, me), state, lambda p: True)
    assert not validate(leave_op(ids[2].public_key, me), state, lambda p: True)
    assert validate(leave_op(ids[2].public_key, me), state, lambda p: False)
    assert not validate(leave_op(ids[0].public_key, me), state, lambda p: False)


def test_tampered_operation_is_not_well_formed(rng):
    chain, ids = build_chain(4, rng)
    state = SharedState.initial(chain, [i.public_key for i in ids[1:]])
    op = join_op(ids[0].public_key, ids[1])
    forged = replace(op, proposer=ids[2].public_key)
    assert not validate(forged, state, lambda p: True)


def test_apply_commit_block_advances_chain_length(rng):
    chain, ids = build_chain(7, rng)
    state = SharedState.initial(chain, [i.public_key for i in ids])
    finder = gen_identity(rng)
    b = mine_block(chain.head, finder.public_key, 1, rng)
    out = apply_commit(block_op(b, finder), state)
    assert tuple(out.now) == (8, 0, 0)
    assert finder.public_key in out.online_voters
    assert tuple(state.now) == (7, 0, 0) and len(state.chain) == 7


def test_join_then_leave_leaves_I_unchanged(rng):
    chain, ids = build_chain(5, rng)
    online = {i.public_key for i in ids[1:]}
    state = SharedState.initial(chain, online)
    p = ids[0].public_key
    s1 = apply_commit(join_op(p, ids[1]), state)
    s2 = apply_commit(leave_op(p, ids[1]), s1)
    assert s2.online_voters == online
    assert len(s2.log) == len(state.log) + 2
    assert tuple(s2.now) == (5, 0, 2)
    assert s2.check()


# -- message handling --------------------------------------------------------------


def test_join_commits_everywhere_with_one_timestamp(rng):
    chain, ids = build_chain(5, rng)
    h = Harness(chain, ids, online=[i.public_key for i in ids[1:]], running=[i.public_key for i in ids])
    h.reps.pop(ids[0].public_key)
    joiner = ids[0]
    h.client(joiner, join_op(joiner.public_key, joiner))
    h.run(20)
    logs = [r.log for r in h.live()]
    assert all(len(log) == 1 for log in logs)
    assert len({tuple(log[0].ts) for log in logs}) == 1
    assert all(log[0].op.kind is OpKind.JOIN for log in logs)
    assert all(joiner.public_key in r.online_voters for r in h.live())


def _pre_prepare_for(h, ids, rng):
    new = gen_identity(rng)
    op = block_op(mine_block(h.init.chain.head, new.public_key, 1, rng), new)
    ts = (4, 0, 1)
    return op, ts


def test_pre_prepare_from_non_primary_is_ignored(four_voters, rng):
    chain, ids, _ = four_voters
    h = Harness(chain, ids)
    op, ts = _pre_prepare_for(h, ids, rng)
    backup = ids[0]
    assert current_primary(chain, 0) != backup.public_key
    msg = sign_message(backup, "ca", PRE_PREPARE, 4, 0, ts, op)
    target = h.reps[ids[1].public_key]
    out = target.handle_message(msg, 0)
    assert not any(m.phase == PREPARE for _, m in out if isinstance(m, PhaseMessage))
    assert target.engine.stats.suspicion == 1


def test_duplicate_prepares_count_once(four_voters, rng):
    chain, ids, _ = four_voters
    h = Harness(chain, ids)
    op, ts = _pre_prepare_for(h, ids, rng)
    primary = ids[-1]
    x, y = h.reps[ids[0].public_key], ids[1]
    out = x.handle_message(sign_message(primary, "ca", PRE_PREPARE, 4, 0, ts, op), 0)
    assert any(m.phase == PREPARE for _, m in out)
    dup = sign_message(y, "ca", PREPARE, 4, 0, ts, op)
    commits = []
    for _ in range(5):
        commits += [m for _, m in x.handle_message(dup, 0) if m.phase == COMMIT]
    _, votes = x.engine._tally(PREPARE, 0, ts, op.digest)
    assert sorted(v.sender for v in votes) == sorted([ids[0].public_key, y.public_key])
    # two distinct prepares (x, y) are below the quorum of three, so no commit vote yet
    assert commits == []
    z = sign_message(ids[2], "ca", PREPARE, 4, 0, ts, op)
    assert any(m.phase == COMMIT for _, m in x.handle_message(z, 0))


def test_prompt_primary_means_no_view_change(four_voters, rng):
    chain, ids, _ = four_voters
    h = Harness(chain, ids, base_timeout=5, suspicion_threshold=10_000)
    new = gen_identity(rng)
    h.client(new, block_op(mine_block(chain.head, new.public_key, 1, rng), new))
    h.run(40)
    assert all(len(r.log) == 1 for r in h.live())
    assert all(r.engine.stats.view_changes == 0 for r in h.live())


# -- view changes and failure detection ------------------------------------------


def test_primary_crash_triggers_view_change_and_liveness_resumes(four_voters, rng):
    chain, ids, _ = four_voters
    h = Harness(chain, ids, suspicion_threshold=10_000)
    h.up.discard(ids[-1].public_key)
    new = gen_identity(rng)
    h.client(new, block_op(mine_block(chain.head, new.public_key, 1, rng), new))
    h.run(200)
    logs = [r.log for r in h.live()]
    assert all(len(log) == 1 and log[0].op.kind is OpKind.BLOCK for log in logs)
    assert logs[0][0].view == 1
    assert all(r.engine.stats.view_changes >= 1 for r in h.live())


def test_two_crashed_primaries_advance_view_by_two(rng):
    chain, ids = build_chain(7, rng)
    h = Harness(chain, ids, suspicion_threshold=10_000)
    h.up.discard(ids[-1].public_key)
    h.up.discard(ids[-2].public_key)
    new = gen_identity(rng)
    h.client(new, block_op(mine_block(chain.head, new.public_key, 1, rng), new))
    h.run(400)
    logs = [r.log for r in h.live()]
    assert all(len(log) == 1 for log in logs)
    assert logs[0][0].view == 2
    assert len({tuple(log[0].ts) for log in logs}) == 1


def test_responsive_peers_are_never_suspected(four_voters):
    chain, ids, _ = four_voters
    h = Harness(chain, ids, ping_interval=5, suspicion_threshold=15)
    h.run(300)
    assert all(r.leave_proposals == 0 and not r.log for r in h.live())


def test_crashed_peer_gets_one_leave_per_detector_and_one_commit(rng):
    chain, ids = build_chain(6, rng)
    h = Harness(chain, ids, ping_interval=5, suspicion_threshold=15)
    gone = ids[2].public_key
    h.run(10)
    h.up.discard(gone)
    h.run(400)
    detectors = h.live()
    assert len(detectors) == 5
    assert all(r.leave_proposals <= 1 for r in detectors)
    assert 1 <= sum(r.leave_proposals for r in detectors) <= 5
    for r in detectors:
        leaves = [e for e in r.log if e.op.kind is OpKind.LEAVE]
        assert len(leaves) == 1 and leaves[0].op.peer == gone
        assert gone not in r.online_voters


# -- syncing a new peer ------------------------------------------------------------


def _honest_run(rng, blocks=3):
    chain, ids = build_chain(4, rng)
    h = Harness(chain, ids)
    for _ in range(blocks):
        ref = h.live()[0]
        new = gen_identity(rng)
        op = block_op(mine_block(ref.chain.head, new.public_key, 1, rng), new)
        msg = sign_message(new, "ca", "propose", None, 0, None, op)
        for p in sorted(ref.online_voters):
            h.q.append((p, msg))
        h.run(10)
        h.spawn(new)
    return h


def test_sync_from_empty_log_is_the_initial_state(four_voters):
    _, _, init = four_voters
    s = sync_new_peer([], init)
    assert s.now == init.now and s.online_voters == init.online_voters and s.chain.blocks == init.chain.blocks


def test_sync_replays_an_honest_log(rng):
    h = _honest_run(rng)
    live = h.live()[0]
    assert len(live.log) == 3
    # certificates carry each replica's own quorum, so compare what was ordered
    keyed = lambda log: [(tuple(e.ts), e.op.digest) for e in log]  # noqa: E731
    assert all(keyed(r.log) == keyed(live.log) for r in h.live())
    s = sync_new_peer(live.log, h.init)
    assert s.now == live.state.now
    assert s.online_voters == live.online_voters
    assert s.chain.blocks == live.chain.blocks


def test_sync_rejects_a_forged_quorum(rng):
    h = _honest_run(rng)
    log = list(h.live()[0].log)
    bad = log[1]
    forged_votes = tuple(Vote(v.sender, bytes(64)) for v in bad.votes)
    log[1] = replace(bad, votes=forged_votes)
    with pytest.raises(SyncError, match="entry 1"):
        sync_new_peer(log, h.init)


def test_log_records_roundtrip(rng):
    import io

    h = _honest_run(rng, blocks=2)
    buf = io.StringIO()
    dump_log(h.live()[0].log, buf)
    back = load_log(io.StringIO(buf.getvalue()))
    assert [e.op.digest for e in back] == [e.op.digest for e in h.live()[0].log]
    assert sync_new_peer(back, h.init).now == h.live()[0].state.now


def test_new_replica_catches_up(rng):
    h = _honest_run(rng, blocks=2)
    src = h.live()[0]
    fresh = CaReplica(gen_identity(random.Random(99)), h.init, h.reachable)
    assert fresh.catch_up(src.log) == 2
    assert fresh.state.now == src.state.now
