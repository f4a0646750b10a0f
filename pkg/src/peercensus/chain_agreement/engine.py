"""PBFT-style ordering engine shared by the CA and the ledger application.

The engine handles phases, vote tallies, certificates and view changes.  A
*machine* object supplies everything operation-specific: the current epoch,
the membership and primary for a slot, timestamp arithmetic, validation and
how to apply a committed certificate.  Required machine attributes:

    instance                     name mixed into every signature
    epoch()                      hashable id; views restart at 0 when it changes
    position()                   local log position (the last committed ts)
    base_position()              lowest position any replica of this epoch can hold
    classify(ts)                 "past" | "next" | "ahead" relative to position()
    members_for(ts)              voter set for slot ts, None if not yet known
    current_members()            voter set for the next slot
    primary(view)                primary of ``view`` in the current epoch
    next_ts(view)                timestamp the primary assigns to the next slot
    position_after(cert)         log position once ``cert`` is applied
    validate(op, ts=None)        local validity of an op for the next slot
    apply(cert)                  commit a certificate at the next slot
    last_entry()                 newest committed certificate or None
    op_key(op)                   dedup key for pending proposals

Each replica keeps at most one operation per (view, slot).  Only one slot
is in flight at a time, which keeps the view-change carry rule simple: a
new view carries the prepared certificate with the highest view for the
slot right after the highest commit reported in the view-change quorum.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..pow_identity import H, Identity, verify
from .state import Certificate, Vote, max_faulty, quorum_size
from .wire import canonical, vote_bytes

PROPOSE = "propose"
PRE_PREPARE = "pre-prepare"
PREPARE = "prepare"
COMMIT = "commit"
VIEW_CHANGE = "view-change"
NEW_VIEW = "new-view"
PHASES = (PROPOSE, PRE_PREPARE, PREPARE, COMMIT, VIEW_CHANGE, NEW_VIEW)

BUFFER_LIMIT = 4096


@dataclass(frozen=True)
class PhaseMessage:
    instance: str
    phase: str
    sender: bytes
    epoch: object
    view: int
    ts: Optional[tuple]
    op: object
    signature: bytes
    payload: tuple = ()

    def signed_bytes(self) -> bytes:
        digest = self.op.digest if self.op is not None else b""
        return vote_bytes(self.instance, self.phase, self.epoch, self.view, self.ts, digest,
                          payload_digest(self.phase, self.payload))

    def verify(self) -> bool:
        return verify(self.signature, self.signed_bytes(), self.sender)


def payload_digest(phase: str, payload: tuple) -> bytes:
    if phase == VIEW_CHANGE:
        last, prepared = payload
        return H(canonical(last.summary() if last else None, prepared.summary() if prepared else None))
    if phase == NEW_VIEW:
        return H(canonical([(vc.sender, vc.signature) for vc in payload]))
    return b""


def sign_message(identity: Identity, instance: str, phase: str, epoch, view: int, ts, op, payload: tuple = ()) -> PhaseMessage:
    unsigned = PhaseMessage(instance, phase, identity.public_key, epoch, view,
                            tuple(ts) if ts is not None else None, op, b"", payload)
    return PhaseMessage(unsigned.instance, phase, unsigned.sender, epoch, view, unsigned.ts, op,
                        identity.sign(unsigned.signed_bytes()), payload)


@dataclass
class EngineStats:
    commits: int = 0
    view_changes: int = 0
    new_views: int = 0
    suspicion: int = 0
    rejected: int = 0
    commit_latency: list = field(default_factory=list)


class AgreementEngine:
    def __init__(self, identity: Identity, machine, *, base_timeout: int = 30, max_backoff: int = 6,
                 on_commit: Optional[Callable[[Certificate], None]] = None):
        self.identity = identity
        self.me = identity.public_key
        self.m = machine
        self.base_timeout = base_timeout
        self.max_backoff = max_backoff
        self.on_commit = on_commit
        self.clock = 0
        self.stats = EngineStats()
        self.pending: dict = {}  # op key -> (op, first seen)
        self.buffer: list[PhaseMessage] = []
        self._out: list = []
        self._selfq: deque = deque()
        self._reset_epoch()

    # -- bookkeeping -------------------------------------------------------

    def _reset_epoch(self):
        self.epoch = self.m.epoch()
        self.view = 0
        self.in_view_change = False
        self.vc_streak = 0
        self.accepted: dict = {}  # (view, position) -> (ts, op)
        self.votes: dict = {}  # (phase, view, ts, digest) -> {sender: signature}
        self.ops: dict = {}  # digest -> op
        self.sent: set = set()  # (phase, view, position)
        self.prepared: Optional[Certificate] = None
        self.vcs: dict[int, dict[bytes, PhaseMessage]] = {}
        self.nv_seen: set[int] = set()
        self.deadline: Optional[int] = None
        self._arm_timer()

    def resync(self):
        """Call after the machine state was replaced wholesale (state transfer)."""
        self._reset_epoch()
        self._prune_pending()
        self._wake()

    def timeout(self) -> int:
        return self.base_timeout * (2 ** min(self.vc_streak, self.max_backoff))

    def _arm_timer(self):
        if self.in_view_change or self.pending:
            self.deadline = self.clock + self.timeout()
        else:
            self.deadline = None

    def _prune_pending(self):
        for key in [k for k, (op, _) in self.pending.items() if not self.m.validate(op)]:
            del self.pending[key]

    def _emit(self, dst, msg: PhaseMessage):
        self._out.append((dst, msg))
        if dst is None or dst == self.me:
            self._selfq.append(msg)

    def _multicast(self, phase: str, view: int, ts, op, payload: tuple = ()):
        msg = sign_message(self.identity, self.m.instance, phase, self.epoch, view, ts, op, payload)
        self._emit(None, msg)
        return msg

    def _flush(self) -> list:
        while self._selfq:
            self._dispatch(self._selfq.popleft())
        out, self._out = self._out, []
        return [(dst, msg) for dst, msg in out if dst != self.me]

    # -- public entry points ----------------------------------------------

    def propose_message(self, op) -> PhaseMessage:
        return sign_message(self.identity, self.m.instance, PROPOSE, None, 0, None, op)

    def submit(self, op, now: int) -> list:
        """Propose ``op`` from this replica: multicast it and handle it locally."""
        self.clock = now
        self._emit(None, self.propose_message(op))
        return self._flush()

    def receive(self, msg: PhaseMessage, now: int) -> list:
        self.clock = now
        self._dispatch(msg)
        return self._flush()

    def tick(self, now: int) -> list:
        self.clock = now
        if self.deadline is not None and now >= self.deadline:
            self._prune_pending()
            # with nothing left to order, a replica stuck in a view change
            # waits for the others instead of running its view up alone
            if self.pending:
                self._start_view_change(self.view + 1)
            else:
                self.deadline = None
        return self._flush()

    def force_view_change(self, now: int) -> list:
        self.clock = now
        self._start_view_change(self.view + 1)
        return self._flush()

    def flush(self) -> list:
        return self._flush()

    # -- dispatch ------------------------------------------------------------

    def _dispatch(self, msg: PhaseMessage):
        if msg.instance != self.m.instance or msg.phase not in PHASES or not msg.verify():
            self.stats.rejected += 1
            return
        if msg.phase == PROPOSE:
            self._on_propose(msg)
            return
        try:
            if msg.epoch != self.epoch:
                if msg.epoch > self.epoch:
                    self._hold(msg)
                return
        except TypeError:
            return
        if msg.op is not None and not msg.op.well_formed():
            self.stats.rejected += 1
            return
        handler = {
            PRE_PREPARE: self._on_pre_prepare,
            PREPARE: self._on_vote,
            COMMIT: self._on_vote,
            VIEW_CHANGE: self._on_view_change,
            NEW_VIEW: self._on_new_view,
        }[msg.phase]
        handler(msg)

    def _hold(self, msg: PhaseMessage):
        self.buffer.append(msg)
        if len(self.buffer) > BUFFER_LIMIT:
            del self.buffer[: len(self.buffer) - BUFFER_LIMIT]

    def _wake(self):
        held, self.buffer = self.buffer, []
        for msg in held:
            self._dispatch(msg)

    # -- normal case --------------------------------------------------------

    def _on_propose(self, msg: PhaseMessage):
        op = msg.op
        if op is None or not op.well_formed():
            return
        key = self.m.op_key(op)
        if key in self.pending or not self.m.validate(op):
            return
        self.pending[key] = (op, self.clock)
        if self.deadline is None:
            self._arm_timer()
        self._try_propose()

    def _slot(self):
        return (self.view, self.m.position())

    def _try_propose(self):
        if self.in_view_change or self.m.primary(self.view) != self.me:
            return
        if self._slot() in self.accepted:
            return
        for key in list(self.pending):
            op, _ = self.pending[key]
            if not self.m.validate(op):
                del self.pending[key]
                continue
            self._multicast(PRE_PREPARE, self.view, self.m.next_ts(self.view), op)
            return

    def _on_pre_prepare(self, msg: PhaseMessage):
        if msg.sender != self.m.primary(msg.view):
            self.stats.suspicion += 1
            return
        if msg.view > self.view or (msg.view == self.view and self.in_view_change):
            self._hold(msg)
            return
        if msg.view < self.view:
            return
        where = self.m.classify(msg.ts)
        if where == "ahead":
            self._hold(msg)
        elif where == "next":
            self._accept(msg.view, msg.ts, msg.op, check=True)

    def _accept(self, view: int, ts, op, check: bool):
        slot = (view, self.m.position())
        if slot in self.accepted:
            return
        if check and not self.m.validate(op, ts):
            return
        self.accepted[slot] = (tuple(ts), op)
        self.ops[op.digest] = op
        self._arm_timer()
        self._send_vote(PREPARE, view, ts, op)
        self._check_prepared(view, tuple(ts), op.digest)

    def _send_vote(self, phase: str, view: int, ts, op):
        mark = (phase, view, self.m.position())
        if mark in self.sent:
            return
        self.sent.add(mark)
        self._multicast(phase, view, ts, op)

    def _on_vote(self, msg: PhaseMessage):
        ts = msg.ts
        where = self.m.classify(ts)
        if where == "past":
            return
        self.ops.setdefault(msg.op.digest, msg.op)
        key = (msg.phase, msg.view, ts, msg.op.digest)
        self.votes.setdefault(key, {})[msg.sender] = msg.signature
        if where == "next":
            if msg.phase == PREPARE:
                self._check_prepared(msg.view, ts, msg.op.digest)
            else:
                self._try_commit()

    def _tally(self, phase: str, view: int, ts, digest: bytes):
        members = self.m.members_for(ts)
        if members is None:
            return None, []
        senders = self.votes.get((phase, view, ts, digest), {})
        votes = [Vote(s, senders[s]) for s in sorted(senders) if s in members]
        return members, votes

    def _check_prepared(self, view: int, ts: tuple, digest: bytes):
        if view != self.view or self.in_view_change:
            return
        slot = self._slot()
        got = self.accepted.get(slot)
        if got is None or got[0] != ts or got[1].digest != digest:
            return
        members, votes = self._tally(PREPARE, view, ts, digest)
        if members is None or len(votes) < quorum_size(len(members)):
            return
        op = got[1]
        if self.prepared is None or self.prepared.view < view or self.m.classify(self.prepared.ts) != "next":
            self.prepared = Certificate(PREPARE, self.m.instance, self.epoch, view, ts, op, tuple(votes))
        self._send_vote(COMMIT, view, ts, op)
        self._try_commit()

    def _try_commit(self):
        while True:
            for (phase, view, ts, digest) in list(self.votes):
                if phase != COMMIT or self.m.classify(ts) != "next" or digest not in self.ops:
                    continue
                members, votes = self._tally(COMMIT, view, ts, digest)
                if members is not None and len(votes) >= quorum_size(len(members)):
                    cert = Certificate(COMMIT, self.m.instance, self.epoch, view, ts, self.ops[digest], tuple(votes))
                    self._commit(cert)
                    break
            else:
                return

    def apply_certificate(self, cert: Certificate) -> bool:
        """Commit a verified certificate for the next slot received out of band."""
        if cert.phase != COMMIT or cert.instance != self.m.instance or self.m.classify(cert.ts) != "next":
            return False
        members = self.m.members_for(cert.ts)
        if members is None or not cert.verify(members):
            return False
        self._commit(cert)
        self._try_commit()
        return True

    def _commit(self, cert: Certificate):
        first_seen = self.pending.pop(self.m.op_key(cert.op), (None, None))[1]
        self.m.apply(cert)
        self.stats.commits += 1
        if first_seen is not None:
            self.stats.commit_latency.append(self.clock - first_seen)
        self.vc_streak = 0
        if self.m.epoch() != self.epoch:
            self._reset_epoch()
        else:
            for key in [k for k in self.votes if self.m.classify(k[2]) == "past"]:
                del self.votes[key]
            pos = self.m.position()
            self.accepted = {k: v for k, v in self.accepted.items() if k[1] == pos}
            if self.prepared is not None and self.m.classify(self.prepared.ts) != "next":
                self.prepared = None
        self._prune_pending()
        self._arm_timer()
        if self.on_commit is not None:
            self.on_commit(cert)
        self._try_propose()
        self._wake()
        self._retry_new_views()

    # -- view change ---------------------------------------------------------

    def _start_view_change(self, new_view: int):
        if new_view <= self.view and self.in_view_change:
            return
        self.view = new_view
        self.in_view_change = True
        self.vc_streak += 1
        self.stats.view_changes += 1
        self.deadline = self.clock + self.timeout()
        self._multicast(VIEW_CHANGE, new_view, None, None, (self.m.last_entry(), self.prepared))

    def _on_view_change(self, msg: PhaseMessage):
        members = self.m.current_members()
        if msg.sender not in members or len(msg.payload) != 2:
            return
        self.vcs.setdefault(msg.view, {})[msg.sender] = msg
        # f+1 replicas already moved past our view: join the smallest such view
        ahead = {}
        for v, by_sender in self.vcs.items():
            if v > self.view:
                for s in by_sender:
                    if s in members:
                        ahead[s] = min(ahead.get(s, v), v)
        if len(ahead) > max_faulty(len(members)):
            target = min(ahead.values())
            if target > self.view:
                self._start_view_change(target)
        if self.m.primary(msg.view) == self.me:
            self._try_new_view(msg.view)

    def _check_vc(self, vc: PhaseMessage) -> Optional[bool]:
        """True if usable, False if malformed, None if not yet verifiable."""
        last, prepared = vc.payload
        if last is not None:
            if not isinstance(last, Certificate) or last.phase != COMMIT or last.instance != self.m.instance:
                return False
            where = self.m.classify(last.ts)
            if where != "past":
                return None
            members = self.m.members_for(last.ts)
            if members is None:
                return None
            if not last.verify(members):
                return False
        if prepared is not None:
            if (not isinstance(prepared, Certificate) or prepared.phase != PREPARE
                    or prepared.instance != self.m.instance or prepared.epoch != self.epoch
                    or prepared.view >= vc.view):
                return False
            if self.m.classify(prepared.ts) == "ahead":
                return None
            members = self.m.members_for(prepared.ts)
            if members is None:
                return None
            if not prepared.verify(members):
                return False
        return True

    def _high_position(self, vcs):
        positions = [self.m.position_after(vc.payload[0]) for vc in vcs if vc.payload[0] is not None]
        positions.append(self.m.base_position())
        return max(positions)

    def _carry(self, vcs, high):
        best = None
        for vc in vcs:
            p = vc.payload[1]
            if p is not None and self.m.is_successor(high, p.ts) and (best is None or p.view > best.view):
                best = p
        return best

    def _retry_new_views(self):
        for view in sorted(self.vcs):
            if view >= self.view and view not in self.nv_seen and self.m.primary(view) == self.me:
                self._try_new_view(view)

    def _try_new_view(self, view: int):
        if view in self.nv_seen or view < self.view:
            return
        epoch = self.epoch
        members = self.m.current_members()
        usable = []
        for sender in sorted(self.vcs.get(view, {})):
            if sender not in members:
                continue
            vc = self.vcs[view][sender]
            ok = self._check_vc(vc)
            if ok is None and vc.payload[0] is not None and self.m.classify(vc.payload[0].ts) == "next":
                # someone is one commit ahead of us; their certificate lets us catch up
                if self.apply_certificate(vc.payload[0]):
                    if self.epoch == epoch:
                        self._try_new_view(view)
                    return
            if ok:
                usable.append(vc)
        q = quorum_size(len(members))
        if len(usable) < q:
            return
        self.nv_seen.add(view)
        self.stats.new_views += 1
        self._multicast(NEW_VIEW, view, None, None, tuple(usable[:q]))

    def _on_new_view(self, msg: PhaseMessage):
        view = msg.view
        if msg.sender != self.m.primary(view):
            self.stats.suspicion += 1
            return
        if view < self.view or (view == self.view and not self.in_view_change):
            return
        members = self.m.current_members()
        vcs = msg.payload
        senders = set()
        for vc in vcs:
            if (not isinstance(vc, PhaseMessage) or vc.phase != VIEW_CHANGE or vc.view != view
                    or vc.epoch != self.epoch or vc.instance != self.m.instance or not vc.verify()
                    or vc.sender not in members or len(vc.payload) != 2):
                return
            senders.add(vc.sender)
        if len(senders) < quorum_size(len(members)):
            return
        for vc in vcs:
            ok = self._check_vc(vc)
            if ok is None:
                last = vc.payload[0]
                if last is not None and self.m.classify(last.ts) == "next" and self.apply_certificate(last):
                    if self.epoch == msg.epoch:
                        self._on_new_view(msg)
                    return
                self._hold(msg)
                return
            if not ok:
                return
        high = self._high_position(vcs)
        carry = self._carry(vcs, high)
        self.view = view
        self.in_view_change = False
        self.nv_seen.add(view)
        self.accepted = {k: v for k, v in self.accepted.items() if k[0] >= view}
        self._arm_timer()
        if carry is not None and self.m.classify(carry.ts) == "next":
            self._accept(view, carry.ts, carry.op, check=False)
        self._try_propose()
        self._wake()
