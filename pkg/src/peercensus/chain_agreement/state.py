"""Replicated CA state: the operation log, the online voters and the chain.

Timestamps are triples (chain_length, view, sequence) compared
lexicographically.  A slot at timestamp ``ts`` is the *successor* of the
local position ``now`` when it keeps the chain length and either stays in
the same view with the next sequence number or moves to a later view with
sequence 1.  Exactly one operation is committed per slot.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from ..blockchain import Block, Chain, hash_block
from ..pow_identity import H, Identity, verify
from .wire import canonical, vote_bytes

CA_INSTANCE = "ca"


class LogicalTimestamp(NamedTuple):
    chain_length: int
    view: int
    sequence: int


def ts_less(a: LogicalTimestamp, b: LogicalTimestamp) -> bool:
    return tuple(a) < tuple(b)


def is_successor(now: LogicalTimestamp, ts: LogicalTimestamp) -> bool:
    if ts.chain_length != now.chain_length:
        return False
    if ts.view == now.view:
        return ts.sequence == now.sequence + 1
    return ts.view > now.view and ts.sequence == 1


def next_timestamp(now: LogicalTimestamp, view: int) -> LogicalTimestamp:
    if view == now.view:
        return LogicalTimestamp(now.chain_length, view, now.sequence + 1)
    if view < now.view:
        raise ValueError(f"view {view} is behind the committed view {now.view}")
    return LogicalTimestamp(now.chain_length, view, 1)


class OpKind(str, Enum):
    BLOCK = "block"
    JOIN = "join"
    LEAVE = "leave"


@dataclass(frozen=True)
class CaOperation:
    """A proposed change to (O, I, C), signed by whoever proposes it.

    For Block the subject is the block itself; for Join/Leave it is a peer.
    """

    kind: OpKind
    proposer: bytes
    signature: bytes
    block: Optional[Block] = None
    peer: Optional[bytes] = None

    @staticmethod
    def payload_bytes(kind: OpKind, block: Optional[Block], peer: Optional[bytes], proposer: bytes) -> bytes:
        body = block.encode() if block is not None else None
        return canonical("ca-op", kind.value, body, peer, proposer)

    def signed_bytes(self) -> bytes:
        return self.payload_bytes(self.kind, self.block, self.peer, self.proposer)

    @cached_property
    def digest(self) -> bytes:
        return H(self.signed_bytes() + self.signature)

    def well_formed(self) -> bool:
        if self.kind is OpKind.BLOCK:
            shape = self.block is not None and self.peer is None
        else:
            shape = self.block is None and self.peer is not None
        return shape and verify(self.signature, self.signed_bytes(), self.proposer)

    @property
    def key(self) -> tuple:
        """Dedup key: proposals with the same key are the same request."""
        if self.kind is OpKind.BLOCK:
            return (self.kind.value, hash_block(self.block))
        return (self.kind.value, self.peer)

    @property
    def subject(self) -> bytes:
        return self.block.peer if self.kind is OpKind.BLOCK else self.peer

    def to_record(self) -> dict:
        rec = {"kind": self.kind.value, "proposer": self.proposer.hex(), "signature": self.signature.hex()}
        if self.block is not None:
            rec["block"] = self.block.to_record()
        if self.peer is not None:
            rec["peer"] = self.peer.hex()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CaOperation":
        return cls(
            kind=OpKind(rec["kind"]),
            proposer=bytes.fromhex(rec["proposer"]),
            signature=bytes.fromhex(rec["signature"]),
            block=Block.from_record(rec["block"]) if "block" in rec else None,
            peer=bytes.fromhex(rec["peer"]) if "peer" in rec else None,
        )


def make_op(kind: OpKind, proposer: Identity, *, block: Optional[Block] = None, peer: Optional[bytes] = None) -> CaOperation:
    kind = OpKind(kind)
    msg = CaOperation.payload_bytes(kind, block, peer, proposer.public_key)
    return CaOperation(kind, proposer.public_key, proposer.sign(msg), block, peer)


def block_op(b: Block, proposer: Identity) -> CaOperation:
    return make_op(OpKind.BLOCK, proposer, block=b)


def join_op(p: bytes, proposer: Identity) -> CaOperation:
    return make_op(OpKind.JOIN, proposer, peer=p)


def leave_op(p: bytes, proposer: Identity) -> CaOperation:
    return make_op(OpKind.LEAVE, proposer, peer=p)


@dataclass(frozen=True)
class Vote:
    sender: bytes
    signature: bytes


@dataclass(frozen=True)
class Certificate:
    """A quorum of signed votes for one (epoch, view, ts, op).

    With phase "commit" this is a log entry: the op plus the commit
    signatures that justify it.  With phase "prepare" it is the prepared
    certificate carried through view changes.
    """

    phase: str
    instance: str
    epoch: object
    view: int
    ts: tuple
    op: object
    votes: tuple[Vote, ...]

    def signed_bytes(self) -> bytes:
        return vote_bytes(self.instance, self.phase, self.epoch, self.view, self.ts, self.op.digest)

    def valid_senders(self, members: Iterable[bytes]) -> set[bytes]:
        members = set(members)
        msg = self.signed_bytes()
        ok = set()
        for v in self.votes:
            if v.sender in members and v.sender not in ok and verify(v.signature, msg, v.sender):
                ok.add(v.sender)
        return ok

    def verify(self, members: Iterable[bytes]) -> bool:
        members = frozenset(members)
        if not members or not self.op.well_formed():
            return False
        return len(self.valid_senders(members)) >= quorum_size(len(members))

    def summary(self) -> list:
        return [self.phase, self.instance, self.epoch, self.view, self.ts, self.op.digest,
                sorted((v.sender, v.signature) for v in self.votes)]


LogEntry = Certificate


def quorum_size(n: int) -> int:
    """Smallest vote count such that any two quorums share f+1 members.

    With f = floor((n-1)/3) this is floor((n+f)/2)+1, which equals 2f+1
    whenever n = 3f+1.
    """
    if n < 1:
        raise ValueError("need at least one member")
    f = (n - 1) // 3
    return (n + f) // 2 + 1


def max_faulty(n: int) -> int:
    return (n - 1) // 3


def current_primary(C: Chain, v: int) -> bytes:
    """The voter whose rank equals v mod len(C)."""
    ell = len(C)
    if ell == 0:
        raise ValueError("no voters: the chain holds no blocks")
    return C.block_at(ell - (v % ell)).peer


@dataclass
class SharedState:
    log: list[LogEntry]
    online_voters: set[bytes]
    chain: Chain
    now: LogicalTimestamp
    # (now, I) after every commit, for membership lookups by timestamp
    history: list[tuple[LogicalTimestamp, frozenset]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.history:
            self.history = [(self.now, frozenset(self.online_voters))]

    @classmethod
    def initial(cls, chain: Chain, online: Iterable[bytes]) -> "SharedState":
        online = set(online)
        stray = [p for p in online if p not in chain]
        if stray:
            raise ValueError("online voters must all appear in the chain")
        return cls([], online, chain.copy(), LogicalTimestamp(len(chain), 0, 0))

    @property
    def voters(self) -> set[bytes]:
        return set(self.chain.peers())

    def copy(self) -> "SharedState":
        return SharedState(list(self.log), set(self.online_voters), self.chain.copy(), self.now, list(self.history))

    def members_for(self, ts: LogicalTimestamp) -> Optional[frozenset]:
        """The set I that votes on slot ``ts``, or None if ``ts`` is beyond the next slot."""
        ts = LogicalTimestamp(*ts)
        if ts > self.now and not is_successor(self.now, ts):
            return None
        i = bisect.bisect_left(self.history, ts, key=_stamp) - 1
        return self.history[i][1] if i >= 0 else None

    def membership_after(self, now: LogicalTimestamp) -> Optional[frozenset]:
        """The set I as it stood once the log had reached position ``now``."""
        now = LogicalTimestamp(*now)
        if now > self.now:
            return None
        i = bisect.bisect_right(self.history, now, key=_stamp) - 1
        return self.history[i][1] if i >= 0 else None

    def reached(self, now) -> bool:
        """True when ``now`` is a position this log actually passed through."""
        now = LogicalTimestamp(*now)
        i = bisect.bisect_left(self.history, now, key=_stamp)
        return i < len(self.history) and self.history[i][0] == now

    def check(self) -> bool:
        if self.now.chain_length != len(self.chain):
            return False
        if any(p not in self.chain for p in self.online_voters):
            return False
        stamps = [tuple(e.ts) for e in self.log]
        return all(a < b for a, b in zip(stamps, stamps[1:]))


def _stamp(item):
    return item[0]


Reachability = Callable[[bytes], bool]


def validate(op: CaOperation, state: SharedState, reachable: Reachability) -> bool:
    if not op.well_formed():
        return False
    if op.kind is OpKind.BLOCK:
        return state.chain.can_append(op.block)
    p = op.peer
    if op.kind is OpKind.JOIN:
        return p in state.chain and p not in state.online_voters and reachable(p)
    return p in state.online_voters and not reachable(p)


def now_after(entry: LogEntry) -> LogicalTimestamp:
    if entry.op.kind is OpKind.BLOCK:
        return LogicalTimestamp(entry.ts[0] + 1, 0, 0)
    return LogicalTimestamp(*entry.ts)


def apply_entry(state: SharedState, entry: LogEntry) -> None:
    """In-place commit of a log entry at the next slot."""
    ts = LogicalTimestamp(*entry.ts)
    if not is_successor(state.now, ts):
        raise ValueError(f"timestamp {tuple(ts)} does not follow {tuple(state.now)}")
    op = entry.op
    if op.kind is OpKind.BLOCK:
        state.chain.append(op.block)
        state.online_voters.add(op.block.peer)
    elif op.kind is OpKind.JOIN:
        state.online_voters.add(op.peer)
    else:
        state.online_voters.discard(op.peer)
    state.log.append(entry)
    state.now = now_after(entry)
    state.history.append((state.now, frozenset(state.online_voters)))


def apply_commit(
    op: CaOperation,
    state: SharedState,
    ts: Optional[LogicalTimestamp] = None,
    *,
    view: Optional[int] = None,
    votes: Sequence[Vote] = (),
) -> SharedState:
    """Pure commit: returns a new state with ``op`` appended at ``ts``.

    ``ts`` defaults to the next slot in the current view.
    """
    if ts is None:
        ts = next_timestamp(state.now, state.now.view)
    ts = LogicalTimestamp(*ts)
    entry = Certificate("commit", CA_INSTANCE, state.now.chain_length, ts.view if view is None else view,
                        tuple(ts), op, tuple(votes))
    out = state.copy()
    apply_entry(out, entry)
    return out


class SyncError(ValueError):
    pass


def sync_new_peer(log: Sequence[LogEntry], initial: SharedState) -> SharedState:
    """Replay a log from the bootstrap state, checking every commit quorum."""
    state = initial.copy()
    for i, entry in enumerate(log):
        if entry.phase != "commit" or entry.instance != CA_INSTANCE:
            raise SyncError(f"entry {i} is not a CA commit certificate")
        if entry.epoch != state.now.chain_length:
            raise SyncError(f"entry {i} belongs to another epoch")
        ts = LogicalTimestamp(*entry.ts)
        if not is_successor(state.now, ts):
            raise SyncError(f"entry {i} timestamp {tuple(ts)} does not follow {tuple(state.now)}")
        if not entry.verify(state.online_voters):
            raise SyncError(f"entry {i} lacks a valid commit quorum")
        if entry.op.kind is OpKind.BLOCK and not state.chain.can_append(entry.op.block):
            raise SyncError(f"entry {i} carries a block that does not extend the chain")
        apply_entry(state, entry)
    return state
