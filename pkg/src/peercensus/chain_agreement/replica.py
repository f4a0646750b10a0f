"""A CA replica: the agreement engine bound to (O, I, C) plus the ping detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from ..pow_identity import Identity
from .engine import AgreementEngine, PhaseMessage
from .state import (
    CA_INSTANCE,
    CaOperation,
    LogEntry,
    LogicalTimestamp,
    OpKind,
    SharedState,
    apply_entry,
    current_primary,
    is_successor,
    join_op,
    leave_op,
    next_timestamp,
    now_after,
    validate,
)


class CaMachine:
    """Adapter exposing a SharedState to the generic engine."""

    instance = CA_INSTANCE

    def __init__(self, state: SharedState, reachable: Callable[[bytes], bool]):
        self.state = state
        self.reachable = reachable

    def epoch(self) -> int:
        return self.state.now.chain_length

    def position(self) -> LogicalTimestamp:
        return self.state.now

    def base_position(self) -> LogicalTimestamp:
        return LogicalTimestamp(len(self.state.chain), 0, 0)

    def classify(self, ts) -> str:
        ts = LogicalTimestamp(*ts)
        if is_successor(self.state.now, ts):
            return "next"
        return "past" if ts <= self.state.now else "ahead"

    def is_successor(self, pos, ts) -> bool:
        return is_successor(LogicalTimestamp(*pos), LogicalTimestamp(*ts))

    def members_for(self, ts):
        return self.state.members_for(LogicalTimestamp(*ts))

    def current_members(self) -> frozenset:
        return frozenset(self.state.online_voters)

    def primary(self, view: int) -> bytes:
        return current_primary(self.state.chain, view)

    def next_ts(self, view: int) -> LogicalTimestamp:
        return next_timestamp(self.state.now, view)

    def position_after(self, cert: LogEntry) -> LogicalTimestamp:
        return now_after(cert)

    def validate(self, op, ts=None) -> bool:
        return isinstance(op, CaOperation) and validate(op, self.state, self.reachable)

    def apply(self, cert: LogEntry) -> None:
        apply_entry(self.state, cert)

    def last_entry(self) -> Optional[LogEntry]:
        return self.state.log[-1] if self.state.log else None

    def op_key(self, op: CaOperation):
        return op.key


@dataclass(frozen=True)
class Ping:
    sender: bytes
    reply: bool = False


@dataclass(frozen=True)
class SyncRequest:
    sender: bytes


@dataclass(frozen=True)
class SyncReply:
    sender: bytes
    entries: tuple
    app_entries: tuple = ()


class CaReplica:
    """One peer's CA endpoint.

    Outbound traffic is returned as ``(destination, message)`` pairs; a
    destination of None means "every member of the current I".
    """

    def __init__(
        self,
        identity: Identity,
        initial: SharedState,
        reachable: Callable[[bytes], bool],
        *,
        ping_interval: int = 10,
        suspicion_threshold: int = 30,
        sync_interval: int = 20,
        base_timeout: int = 30,
    ):
        self.identity = identity
        self.me = identity.public_key
        self.initial = initial.copy()
        self.state = initial.copy()
        self.machine = CaMachine(self.state, reachable)
        self.engine = AgreementEngine(identity, self.machine, base_timeout=base_timeout, on_commit=self._committed)
        self.ping_interval = ping_interval
        self.suspicion_threshold = suspicion_threshold
        self.sync_interval = sync_interval
        self.last_heard: dict[bytes, int] = {}
        self.suspected: set[bytes] = set()
        self.next_ping = 0
        self.next_sync = 0
        self._sync_turn = 0
        self.listeners: list[Callable[[LogEntry], None]] = []
        self.leave_proposals = 0

    # -- views of the replicated state ------------------------------------

    @property
    def log(self) -> list[LogEntry]:
        return self.state.log

    @property
    def chain(self):
        return self.state.chain

    @property
    def online_voters(self) -> set[bytes]:
        return self.state.online_voters

    @property
    def is_member(self) -> bool:
        return self.me in self.state.online_voters

    @property
    def clock(self) -> int:
        return self.engine.clock

    def _committed(self, entry: LogEntry):
        for p in self.state.online_voters:
            self.last_heard.setdefault(p, self.engine.clock)
        if entry.op.kind is OpKind.LEAVE:
            self.suspected.discard(entry.op.peer)
            self.last_heard.pop(entry.op.peer, None)
        for fn in self.listeners:
            fn(entry)

    # -- protocol traffic --------------------------------------------------

    def propose(self, op: CaOperation, now: int) -> list:
        return self.engine.submit(op, now)

    def handle_message(self, msg, now: int) -> list:
        sender = getattr(msg, "sender", None)
        if sender is not None:
            self.last_heard[sender] = now
            self.suspected.discard(sender)
        if isinstance(msg, PhaseMessage):
            return self.engine.receive(msg, now)
        if isinstance(msg, Ping):
            return [] if msg.reply else [(msg.sender, Ping(self.me, reply=True))]
        if isinstance(msg, SyncRequest):
            return [(msg.sender, SyncReply(self.me, tuple(self.state.log)))]
        if isinstance(msg, SyncReply):
            self.engine.clock = now
            self.catch_up(msg.entries)
            return self.engine.flush()
        return []

    def catch_up(self, entries: Sequence[LogEntry]) -> int:
        """Apply the verified suffix of someone else's log; returns entries applied."""
        mine = len(self.state.log)
        if len(entries) <= mine:
            return 0
        if any(a.op.digest != b.op.digest or tuple(a.ts) != tuple(b.ts) for a, b in zip(entries, self.state.log)):
            return 0
        applied = 0
        for entry in entries[mine:]:
            if not self.engine.apply_certificate(entry):
                break
            applied += 1
        return applied

    def on_primary_timeout(self, now: int) -> list:
        """Act as if the primary timer expired: move to the next view."""
        return self.engine.force_view_change(now)

    def tick(self, now: int) -> list:
        return self.engine.tick(now) + self.fd_step(now)

    # -- failure detector and catch-up --------------------------------------

    def fd_step(self, now: int) -> list:
        out: list = []
        if not self.is_member:
            if now >= self.next_sync:
                self.next_sync = now + self.sync_interval
                out += self._sync_request()
            return out
        if now >= self.next_ping:
            self.next_ping = now + self.ping_interval
            for p in sorted(self.state.online_voters):
                if p != self.me:
                    self.last_heard.setdefault(p, now)
                    out.append((p, Ping(self.me)))
        for p in sorted(self.state.online_voters):
            if p == self.me or p in self.suspected:
                continue
            if now - self.last_heard.get(p, now) > self.suspicion_threshold:
                self.suspected.add(p)
                self.leave_proposals += 1
                out += self.engine.submit(leave_op(p, self.identity), now)
        if self.engine.buffer and now >= self.next_sync:
            self.next_sync = now + self.sync_interval
            out += self._sync_request()
        return out

    def _sync_request(self) -> list:
        peers = sorted(p for p in self.state.online_voters if p != self.me)
        if not peers:
            peers = sorted(p for p in self.state.chain.peers() if p != self.me)
        if not peers:
            return []
        self._sync_turn += 1
        return [(peers[self._sync_turn % len(peers)], SyncRequest(self.me))]

    def rejoin(self, now: int) -> list:
        """A voter outside I asks to be re-admitted: route Join(self) to the known voters."""
        if self.is_member or self.me not in self.state.chain:
            return []
        msg = self.engine.propose_message(join_op(self.me, self.identity))
        return [(p, msg) for p in sorted(self.state.chain.peers()) if p != self.me]
