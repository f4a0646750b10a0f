"""Discoin: an account ledger ordered by its own agreement instance.

Balances are integer coin units.  Every signed transfer carries a
per-account sequence number so that a committed transaction cannot be
replayed.  Each committed CA block mints ``reward`` coins split evenly over
the online voters right after that block; the remainder goes to the block
finder.  Rewards are folded in lazily: before a ledger operation with
timestamp (t, o) is applied, every block committed in the CA before t is
paid out, in chain order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, TextIO

from .chain_agreement.engine import AgreementEngine
from .chain_agreement.state import Certificate, LogicalTimestamp, OpKind, SharedState, now_after
from .chain_agreement.wire import canonical
from .pow_identity import H, Identity, verify

APP_INSTANCE = "discoin"


@dataclass(frozen=True)
class Account:
    public_key: bytes
    balance: int = 0


@dataclass(frozen=True)
class Transaction:
    source: bytes
    destination: bytes
    value: int
    seq: int
    signature: bytes

    @staticmethod
    def payload_bytes(source: bytes, destination: bytes, value: int, seq: int) -> bytes:
        return canonical("discoin-tx", source, destination, value, seq)

    def signed_bytes(self) -> bytes:
        return self.payload_bytes(self.source, self.destination, self.value, self.seq)

    @cached_property
    def digest(self) -> bytes:
        return H(self.signed_bytes() + self.signature)

    def well_formed(self) -> bool:
        if not isinstance(self.value, int) or self.value <= 0 or self.seq < 1:
            return False
        return verify(self.signature, self.signed_bytes(), self.source)

    def to_record(self) -> dict:
        return {
            "source": self.source.hex(),
            "destination": self.destination.hex(),
            "value": str(self.value),
            "seq": self.seq,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Transaction":
        return cls(
            source=bytes.fromhex(rec["source"]),
            destination=bytes.fromhex(rec["destination"]),
            value=int(rec["value"]),
            seq=int(rec["seq"]),
            signature=bytes.fromhex(rec["signature"]),
        )


def make_tx(source: Identity, destination: bytes, value: int, seq: int) -> Transaction:
    msg = Transaction.payload_bytes(source.public_key, destination, value, seq)
    return Transaction(source.public_key, destination, value, seq, source.sign(msg))


class AppTimestamp(NamedTuple):
    ca_ts: LogicalTimestamp
    op_seq: int


@dataclass
class Ledger:
    balances: dict[bytes, int] = field(default_factory=dict)
    op_counter: int = 0
    last_seq: dict[bytes, int] = field(default_factory=dict)
    snapshot_total: int = 0
    rewarded_blocks: int = 0
    minted: int = 0

    def balance(self, a: bytes) -> int:
        return self.balances.get(a, 0)

    def total(self) -> int:
        return sum(self.balances.values())

    def copy(self) -> "Ledger":
        return Ledger(dict(self.balances), self.op_counter, dict(self.last_seq), self.snapshot_total,
                      self.rewarded_blocks, self.minted)

    def accounts(self) -> list[Account]:
        return [Account(k, v) for k, v in sorted(self.balances.items())]

    def conserved(self, reward: int) -> bool:
        return self.total() == self.snapshot_total + reward * self.rewarded_blocks

    def _credit(self, a: bytes, v: int):
        self.balances[a] = self.balances.get(a, 0) + v


def validate_tx(B: Ledger, tx: Transaction, extra: Optional[Mapping[bytes, int]] = None) -> bool:
    """``extra`` holds rewards already earned but not yet folded into B."""
    if not tx.well_formed():
        return False
    if tx.seq <= B.last_seq.get(tx.source, 0):
        return False
    available = B.balance(tx.source) + (extra.get(tx.source, 0) if extra else 0)
    return available >= tx.value


def _apply_tx_in_place(B: Ledger, tx: Transaction) -> None:
    B.balances[tx.source] = B.balance(tx.source) - tx.value
    B._credit(tx.destination, tx.value)
    B.last_seq[tx.source] = tx.seq


def apply_tx(B: Ledger, tx: Transaction) -> Ledger:
    out = B.copy()
    _apply_tx_in_place(out, tx)
    out.op_counter += 1
    return out


def reward_shares(voters: Iterable[bytes], r: int, finder: bytes) -> dict[bytes, int]:
    voters = sorted(set(voters))
    if not voters:
        raise ValueError("reward needs at least one online voter")
    if r < 0:
        raise ValueError("reward must be nonnegative")
    share, rest = divmod(r, len(voters))
    out = {v: share for v in voters} if share else {}
    if rest:
        out[finder] = out.get(finder, 0) + rest
    return out


def _reward_in_place(B: Ledger, voters, r: int, finder: bytes) -> None:
    for a, v in reward_shares(voters, r, finder).items():
        B._credit(a, v)
    B.rewarded_blocks += 1
    B.minted += r


def distribute_reward(B: Ledger, I: Iterable[bytes], r: int, finder: bytes) -> Ledger:
    out = B.copy()
    _reward_in_place(out, I, r, finder)
    return out


def bootstrap_balances(snapshot: Mapping[bytes, int]) -> Ledger:
    for a, v in snapshot.items():
        if int(v) != v or v < 0:
            raise ValueError(f"balance for {a.hex()[:8]} must be a nonnegative integer, got {v}")
    balances = {a: int(v) for a, v in snapshot.items() if v}
    return Ledger(balances=balances, snapshot_total=sum(balances.values()))


def dump_ledger(B: Ledger, fp: TextIO) -> None:
    for a in B.accounts():
        fp.write(json.dumps({"account": a.public_key.hex(), "balance": str(a.balance)}, sort_keys=True) + "\n")


def load_snapshot(lines: Iterable[str]) -> dict[bytes, int]:
    out = {}
    for line in lines:
        if line.strip():
            rec = json.loads(line)
            out[bytes.fromhex(rec["account"])] = int(rec["balance"])
    return out


# -- agreement instance -----------------------------------------------------


class LedgerMachine:
    """Adapter running the ledger on the shared engine.

    The epoch is the CA position recorded by the last ledger entry; both the
    voter set and the primary for the next ledger slot are read off the CA
    state at that position, so every replica at the same ledger position
    agrees on them.
    """

    instance = APP_INSTANCE

    def __init__(self, ca: SharedState, ledger: Ledger, reward: int, start: Optional[LogicalTimestamp] = None):
        self.ca = ca
        self.ledger = ledger
        self.reward = reward
        self.log: list[Certificate] = []
        start = ca.now if start is None else LogicalTimestamp(*start)
        self.start = AppTimestamp(start, 0)
        self.positions: list[AppTimestamp] = [self.start]
        # CA log index of the next block to reward; earlier blocks are in the snapshot
        self._ca_cursor = sum(1 for e in ca.log if now_after(e) <= start)

    def epoch(self) -> LogicalTimestamp:
        return self.positions[-1].ca_ts

    def position(self) -> AppTimestamp:
        return self.positions[-1]

    def base_position(self) -> AppTimestamp:
        return self.start

    def classify(self, ts) -> str:
        ts = AppTimestamp(LogicalTimestamp(*ts[0]), ts[1])
        pos = self.position()
        if ts.op_seq <= pos.op_seq:
            return "past"
        if ts.op_seq > pos.op_seq + 1:
            return "ahead"
        if ts.ca_ts > self.ca.now:
            return "ahead"
        if ts.ca_ts >= pos.ca_ts and self.ca.reached(ts.ca_ts):
            return "next"
        return "past"

    def is_successor(self, pos, ts) -> bool:
        return ts[1] == pos[1] + 1 and tuple(ts[0]) >= tuple(pos[0])

    def members_for(self, ts):
        o = ts[1]
        if not 1 <= o <= len(self.positions):
            return None
        return self.ca.membership_after(self.positions[o - 1].ca_ts)

    def current_members(self) -> frozenset:
        return self.ca.membership_after(self.epoch()) or frozenset()

    def primary(self, view: int) -> bytes:
        L = self.epoch().chain_length
        if L == 0:
            raise ValueError("no voters: the chain holds no blocks")
        return self.ca.chain.block_at(L - (view % L)).peer

    def next_ts(self, view: int) -> AppTimestamp:
        return AppTimestamp(self.ca.now, self.position().op_seq + 1)

    def position_after(self, cert: Certificate) -> AppTimestamp:
        return AppTimestamp(LogicalTimestamp(*cert.ts[0]), cert.ts[1])

    def _pending_rewards(self, upto: LogicalTimestamp) -> tuple[dict[bytes, int], list]:
        extra: dict[bytes, int] = {}
        due = []
        for i in range(self._ca_cursor, len(self.ca.log)):
            e = self.ca.log[i]
            if e.op.kind is not OpKind.BLOCK:
                continue
            after = now_after(e)
            if after > upto:
                break
            voters = self.ca.membership_after(after)
            due.append((i, voters, e.op.block.peer))
            for a, v in reward_shares(voters, self.reward, e.op.block.peer).items():
                extra[a] = extra.get(a, 0) + v
        return extra, due

    def validate(self, op, ts=None) -> bool:
        if not isinstance(op, Transaction):
            return False
        upto = self.ca.now if ts is None else LogicalTimestamp(*ts[0])
        extra, _ = self._pending_rewards(upto)
        return validate_tx(self.ledger, op, extra)

    def apply(self, cert: Certificate) -> None:
        ts = self.position_after(cert)
        _, due = self._pending_rewards(ts.ca_ts)
        for i, voters, finder in due:
            _reward_in_place(self.ledger, voters, self.reward, finder)
            self._ca_cursor = i + 1
        tx = cert.op
        # A certificate is only formed for validated ops; the check keeps the
        # ledger nonnegative even if that ever failed.
        if validate_tx(self.ledger, tx):
            _apply_tx_in_place(self.ledger, tx)
        self.ledger.op_counter += 1
        self.log.append(cert)
        self.positions.append(ts)

    def settled(self) -> Ledger:
        """A copy of the ledger with the rewards of every CA block committed
        so far folded in, including blocks no transaction has followed yet."""
        out = self.ledger.copy()
        _, due = self._pending_rewards(self.ca.now)
        for _, voters, finder in due:
            _reward_in_place(out, voters, self.reward, finder)
        return out

    def blocks_since_start(self) -> int:
        return sum(1 for e in self.ca.log if e.op.kind is OpKind.BLOCK and now_after(e) > self.start.ca_ts)

    def last_entry(self) -> Optional[Certificate]:
        return self.log[-1] if self.log else None

    def op_key(self, op: Transaction):
        return op.digest


class LedgerReplica:
    def __init__(self, identity: Identity, ca: SharedState, ledger: Ledger, reward: int, *,
                 start: Optional[LogicalTimestamp] = None, base_timeout: int = 30):
        self.identity = identity
        self.machine = LedgerMachine(ca, ledger.copy(), reward, start)
        self.engine = AgreementEngine(identity, self.machine, base_timeout=base_timeout)

    @property
    def ledger(self) -> Ledger:
        return self.machine.ledger

    @property
    def log(self) -> list[Certificate]:
        return self.machine.log

    def settled(self) -> Ledger:
        return self.machine.settled()

    def submit(self, tx: Transaction, now: int) -> list:
        return self.engine.submit(tx, now)

    def handle_message(self, msg, now: int) -> list:
        return self.engine.receive(msg, now)

    def tick(self, now: int) -> list:
        return self.engine.tick(now)

    def poke(self, now: int) -> list:
        """Re-examine held messages after the CA advanced."""
        self.engine.clock = now
        self.engine._wake()
        return self.engine.flush()

    def catch_up(self, entries: Sequence[Certificate]) -> int:
        mine = len(self.log)
        applied = 0
        for entry in entries[mine:]:
            if not self.engine.apply_certificate(entry):
                break
            applied += 1
        return applied


def replay_ledger(entries: Sequence[Certificate], ca: SharedState, snapshot: Mapping[bytes, int], reward: int,
                  start: LogicalTimestamp) -> Ledger:
    """Rebuild a ledger from its committed entries, checking every quorum.

    ``ca`` is any CA state that has reached the last entry; ``start`` is the
    CA position at which the snapshot was taken.
    """
    m = LedgerMachine(ca, bootstrap_balances(snapshot), reward, start)
    for i, entry in enumerate(entries):
        if m.classify(entry.ts) != "next":
            raise ValueError(f"entry {i} does not follow the previous one")
        members = m.members_for(entry.ts)
        if members is None or not entry.verify(members):
            raise ValueError(f"entry {i} lacks a valid commit quorum")
        m.apply(entry)
    return m.ledger
