"""Protocol-level harness: real CA (and optional ledger) replicas on a simulated network."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from ..blockchain import Block, Committed, MinerState, miner_step
from ..chain_agreement.engine import PROPOSE, PhaseMessage, sign_message
from ..chain_agreement.replica import CaReplica, SyncReply, SyncRequest
from ..chain_agreement.state import CA_INSTANCE, LogEntry, OpKind, SharedState
from ..discoin import APP_INSTANCE, Ledger, LedgerReplica, Transaction
from ..pow_identity import Identity
from .attacks import Honest, Strategy
from .entities import Ownership
from .network import DelaySpec, Network


@dataclass
class NodeConfig:
    ping_interval: int = 10
    suspicion_threshold: int = 30
    sync_interval: int = 20
    resync_interval: int = 60
    rejoin_interval: int = 40
    base_timeout: int = 30


class Node:
    """One running peer: its CA replica, its ledger replica and its behaviour."""

    def __init__(self, identity: Identity, initial: SharedState, cluster: "Cluster", cfg: NodeConfig,
                 ledger: Optional[Ledger] = None, reward: int = 0, app_start=None, strategy: Optional[Strategy] = None):
        self.identity = identity
        self.pk = identity.public_key
        self.cfg = cfg
        self.online = True
        self.ca = CaReplica(identity, initial, cluster.reachable, ping_interval=cfg.ping_interval,
                            suspicion_threshold=cfg.suspicion_threshold, sync_interval=cfg.sync_interval,
                            base_timeout=cfg.base_timeout)
        self.app = None
        if ledger is not None:
            self.app = LedgerReplica(identity, self.ca.state, ledger, reward, start=app_start, base_timeout=cfg.base_timeout)
        self.strategy = strategy or Honest()
        self.ca.listeners.append(self._on_ca_commit)
        self._ca_moved = False
        self.next_resync = cfg.resync_interval
        self.next_rejoin = 0
        self._turn = 0

    def _on_ca_commit(self, entry: LogEntry):
        self._ca_moved = True

    def _after(self, out: list, now: int) -> list:
        if self._ca_moved and self.app is not None:
            self._ca_moved = False
            out = out + self.app.poke(now)
        self._ca_moved = False
        return out

    def handle(self, msg, now: int) -> list:
        if isinstance(msg, PhaseMessage) and msg.instance == APP_INSTANCE:
            out = self.app.handle_message(msg, now) if self.app is not None else []
        elif isinstance(msg, SyncRequest):
            self.ca.last_heard[msg.sender] = now
            app_entries = tuple(self.app.log) if self.app is not None else ()
            out = [(msg.sender, SyncReply(self.pk, tuple(self.ca.log), app_entries))]
        elif isinstance(msg, SyncReply):
            out = self.ca.handle_message(msg, now)
            out = self._after(out, now)
            if self.app is not None and msg.app_entries:
                self.app.engine.clock = now
                self.app.catch_up(msg.app_entries)
                out = out + self.app.engine.flush()
            return out
        else:
            out = self.ca.handle_message(msg, now)
        return self._after(out, now)

    def tick(self, now: int) -> list:
        out = self.ca.tick(now)
        if self.app is not None:
            out += self.app.tick(now)
        if not self.ca.is_member and self.pk in self.ca.chain and now >= self.next_rejoin:
            self.next_rejoin = now + self.cfg.rejoin_interval
            out += self.ca.rejoin(now)
        if now >= self.next_resync:
            self.next_resync = now + self.cfg.resync_interval
            peers = sorted(p for p in self.ca.online_voters if p != self.pk)
            if peers:
                self._turn += 1
                out.append((peers[self._turn % len(peers)], SyncRequest(self.pk)))
        return self._after(out, now)


class Cluster:
    def __init__(
        self,
        initial: SharedState,
        identities: Iterable[Identity],
        *,
        seed: int = 0,
        delay: DelaySpec = DelaySpec(),
        node_config: NodeConfig = NodeConfig(),
        ledger: Optional[Ledger] = None,
        reward: int = 0,
        owner: Optional[Ownership] = None,
        strategies: Optional[dict] = None,
        running: Optional[Iterable[bytes]] = None,
    ):
        self.initial = initial.copy()
        self.rng = random.Random(seed)
        self.time = 0
        self.cfg = node_config
        self.identities: dict[bytes, Identity] = {i.public_key: i for i in identities}
        self.owner = owner or Ownership()
        self.strategies = dict(strategies or {})
        self.ledger0 = ledger
        self.reward = reward
        self.app_start = initial.now
        self.net = Network(delay, self.rng, self.is_online)
        self.nodes: dict[bytes, Node] = {}
        self.miners: dict[bytes, MinerState] = {}
        self.miner_actions: dict[bytes, list] = {}
        self.block_commits: list[tuple[int, Block]] = []
        self._ca_seen = 0
        run = set(self.identities) if running is None else set(running)
        for pk in sorted(run):
            self.nodes[pk] = self._make_node(self.identities[pk], self.initial)

    # -- membership of the simulation ---------------------------------------

    def _make_node(self, identity: Identity, state: SharedState) -> Node:
        return Node(identity, state, self, self.cfg, self.ledger0, self.reward, self.app_start,
                    self.strategies.get(identity.public_key))

    def is_online(self, pk: bytes) -> bool:
        n = self.nodes.get(pk)
        return n is not None and n.online

    reachable = is_online

    def set_online(self, pk: bytes, up: bool) -> None:
        self.nodes[pk].online = up

    def add_identity(self, identity: Identity, strategy: Optional[Strategy] = None) -> None:
        self.identities[identity.public_key] = identity
        if strategy is not None:
            self.strategies[identity.public_key] = strategy

    def spawn(self, pk: bytes, source: Optional[Node] = None) -> Node:
        """Start a node for a known identity and sync it from ``source``'s logs."""
        node = self._make_node(self.identities[pk], self.initial)
        self.nodes[pk] = node
        source = source or self.reference()
        if source is not None:
            node.ca.engine.clock = self.time
            node.ca.catch_up(source.ca.log)
            node.ca.engine.flush()
            if node.app is not None and source.app is not None:
                node.app.engine.clock = self.time
                node.app.catch_up(source.app.log)
                node.app.engine.flush()
        return node

    def honest_nodes(self) -> list[Node]:
        return [n for pk, n in sorted(self.nodes.items())
                if not self.owner.is_attacker_peer(pk) and n.strategy.name == "honest"]

    def reference(self) -> Optional[Node]:
        """The online honest node with the longest CA log."""
        best = None
        for n in self.honest_nodes():
            if n.online and (best is None or len(n.ca.log) > len(best.ca.log)):
                best = n
        return best

    # -- traffic ------------------------------------------------------------------

    def _send(self, src: Node, out: list) -> None:
        for dst, msg in out:
            if dst is None:
                if isinstance(msg, PhaseMessage) and msg.instance == APP_INSTANCE:
                    members = src.app.machine.current_members()
                else:
                    members = src.ca.online_voters
                recipients = sorted(p for p in members if p != src.pk)
            else:
                recipients = [dst]
            for d, m in src.strategy.transform(src, recipients, msg, self):
                self.net.deliver(self.time, src.pk, d, m)

    def client_send(self, recipients: Iterable[bytes], msg) -> None:
        for d in recipients:
            self.net.deliver(self.time, None, d, msg)

    def propose_as_client(self, identity: Identity, op, recipients: Optional[Iterable[bytes]] = None,
                          instance: str = CA_INSTANCE) -> None:
        """Send a signed propose message from a peer that may not run a replica."""
        msg = sign_message(identity, instance, PROPOSE, None, 0, None, op)
        if recipients is None:
            ref = self.reference()
            recipients = sorted(ref.ca.online_voters) if ref is not None else []
        self.client_send(recipients, msg)

    def submit(self, pk: bytes, op) -> None:
        node = self.nodes[pk]
        if isinstance(op, Transaction):
            self._send(node, node.app.submit(op, self.time))
        else:
            self._send(node, node.ca.propose(op, self.time))

    def step(self) -> None:
        self.time += 1
        for _, dst, msg in self.net.pop_due(self.time):
            node = self.nodes[dst]
            self._send(node, node.handle(msg, self.time))
        for pk in sorted(self.nodes):
            node = self.nodes[pk]
            if node.online:
                node.strategy.on_tick(node, self)
                self._send(node, node.tick(self.time))
        self._observe()

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.step()

    def run_until(self, pred: Callable[["Cluster"], bool], max_ticks: int) -> bool:
        for _ in range(max_ticks):
            if pred(self):
                return True
            self.step()
        return pred(self)

    # -- miners and new voters ---------------------------------------------

    def add_miner(self, identity: Identity, chain=None) -> MinerState:
        self.add_identity(identity, self.strategies.get(identity.public_key))
        ref = self.reference()
        st = MinerState(identity.public_key, (chain or ref.ca.chain).copy())
        self.miners[identity.public_key] = st
        self.miner_actions[identity.public_key] = []
        return st

    def miner_event(self, pk: bytes, event) -> list:
        st, actions = miner_step(self.miners[pk], event)
        self.miners[pk] = st
        self.miner_actions[pk].extend(actions)
        return actions

    def _observe(self) -> None:
        ref = self.reference()
        if ref is None:
            return
        log = ref.ca.log
        while self._ca_seen < len(log):
            entry = log[self._ca_seen]
            self._ca_seen += 1
            if entry.op.kind is not OpKind.BLOCK:
                continue
            b = entry.op.block
            self.block_commits.append((self.time, b))
            height = ref.ca.chain.height_of(b.peer)
            chain_then = ref.ca.chain.prefix(height)
            for pk in sorted(self.miners):
                if len(self.miners[pk].current_chain) < height:
                    self.miner_event(pk, Committed(b, chain_then))
            if b.peer not in self.nodes and b.peer in self.identities:
                self.spawn(b.peer, ref)


def logs_prefix_comparable(logs: Iterable[list[LogEntry]]) -> bool:
    keyed = [[(tuple(e.ts), e.op.digest) for e in log] for log in logs]
    for i in range(len(keyed)):
        for j in range(i + 1, len(keyed)):
            a, b = keyed[i], keyed[j]
            n = min(len(a), len(b))
            if a[:n] != b[:n]:
                return False
    return True


def one_op_per_timestamp(logs: Iterable[list[LogEntry]]) -> bool:
    seen: dict = {}
    for log in logs:
        for e in log:
            d = seen.setdefault(tuple(e.ts), e.op.digest)
            if d != e.op.digest:
                return False
    return True
