"""Pluggable attacker behaviour, applied to the outbound traffic of attacker peers."""

from __future__ import annotations

import random
from typing import TYPE_CHECKING

from ..blockchain import mine_block
from ..chain_agreement.engine import COMMIT, PRE_PREPARE, PREPARE, PhaseMessage, sign_message
from ..chain_agreement.state import CA_INSTANCE, OpKind, block_op
from ..pow_identity import gen_identity

if TYPE_CHECKING:  # pragma: no cover
    from .cluster import Cluster, Node


class Strategy:
    name = "honest"

    def transform(self, node: "Node", recipients: list, msg, cluster: "Cluster") -> list:
        return [(d, msg) for d in recipients]

    def on_tick(self, node: "Node", cluster: "Cluster") -> None:
        pass


class Honest(Strategy):
    pass


class Withholding(Strategy):
    """Stop voting on other entities' Block and Join ops once the attacker
    holds at least ``threshold`` of I."""

    name = "withholding"

    def __init__(self, threshold: float = 1 / 3):
        self.threshold = threshold
        self.withheld = 0

    def active(self, node: "Node", cluster: "Cluster") -> bool:
        I = node.ca.online_voters
        if not I:
            return False
        mine = sum(1 for p in I if cluster.owner.is_attacker_peer(p))
        return mine / len(I) >= self.threshold

    def transform(self, node, recipients, msg, cluster):
        if (
            isinstance(msg, PhaseMessage)
            and msg.instance == CA_INSTANCE
            and msg.phase in (PRE_PREPARE, PREPARE, COMMIT)
            and msg.op.kind in (OpKind.BLOCK, OpKind.JOIN)
            and not cluster.owner.is_attacker_peer(msg.op.subject)
            and self.active(node, cluster)
        ):
            self.withheld += 1
            return []
        return [(d, msg) for d in recipients]


class ByzantineFuzz(Strategy):
    """Random drops and duplicates, plus equivocation: as primary it sends a
    sibling block to half the replicas, and it votes for both versions."""

    name = "byzantine"

    def __init__(self, seed: int, p_drop: float = 0.2, p_dup: float = 0.2, p_equivocate: float = 0.5):
        self.rng = random.Random(seed)
        self.p_drop = p_drop
        self.p_dup = p_dup
        self.p_equivocate = p_equivocate
        self.alternates: dict = {}  # (epoch, view, ts) -> alternate op
        self.equivocations = 0

    def _sibling(self, node, op):
        parent = node.ca.chain.head
        ident = gen_identity(self.rng)
        b = mine_block(parent, ident.public_key, max(1, node.ca.chain.min_difficulty), self.rng)
        return block_op(b, ident)

    def transform(self, node, recipients, msg, cluster):
        out = []
        extra = []
        if isinstance(msg, PhaseMessage) and msg.instance == CA_INSTANCE and msg.phase in (PRE_PREPARE, PREPARE, COMMIT):
            slot = (msg.epoch, msg.view, msg.ts)
            if msg.phase == PRE_PREPARE and self.rng.random() < self.p_equivocate:
                alt = self._sibling(node, msg.op)
                self.alternates[slot] = alt
                self.equivocations += 1
                alt_msg = sign_message(node.identity, msg.instance, PRE_PREPARE, msg.epoch, msg.view, msg.ts, alt)
                half = len(recipients) // 2
                order = list(recipients)
                self.rng.shuffle(order)
                for i, d in enumerate(order):
                    out.append((d, alt_msg if i < half else msg))
                vote = sign_message(node.identity, msg.instance, PREPARE, msg.epoch, msg.view, msg.ts, alt)
                extra = [(d, vote) for d in recipients]
            else:
                out = [(d, msg) for d in recipients]
                alt = self.alternates.get(slot)
                if alt is not None and msg.phase in (PREPARE, COMMIT) and self.rng.random() < self.p_equivocate:
                    vote = sign_message(node.identity, msg.instance, msg.phase, msg.epoch, msg.view, msg.ts, alt)
                    extra = [(d, vote) for d in recipients]
        else:
            out = [(d, msg) for d in recipients]
        result = []
        for d, m in out + extra:
            u = self.rng.random()
            if u < self.p_drop:
                continue
            result.append((d, m))
            if u > 1 - self.p_dup:
                result.append((d, m))
        return result


class DoubleSpender(Strategy):
    """Honest on the wire; the cluster drives its conflicting submissions."""

    name = "double_spend"


def make_strategy(name: str, seed: int = 0) -> Strategy:
    if name == "honest":
        return Honest()
    if name == "withholding":
        return Withholding()
    if name == "byzantine":
        return ByzantineFuzz(seed)
    if name == "double_spend":
        return DoubleSpender()
    raise ValueError(f"unknown attacker strategy {name!r}")
