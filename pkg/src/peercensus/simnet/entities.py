"""Entities, resources and peer ownership."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class Role(str, Enum):
    ATTACKER = "A"
    DEFENDER = "D"


@dataclass
class Resource:
    id: int
    owner: int
    online: bool = True


@dataclass
class Entity:
    id: int
    role: Role
    resources: list[int] = field(default_factory=list)
    peers: list[bytes] = field(default_factory=list)

    @property
    def is_attacker(self) -> bool:
        return self.role is Role.ATTACKER


@dataclass
class Ownership:
    """Who controls what; every peer and resource maps to exactly one entity."""

    entities: dict[int, Entity] = field(default_factory=dict)
    peer_owner: dict[bytes, int] = field(default_factory=dict)
    resource_owner: dict[int, int] = field(default_factory=dict)

    def add_entity(self, role: Role) -> Entity:
        e = Entity(len(self.entities), Role(role))
        self.entities[e.id] = e
        return e

    def add_resource(self, entity: Entity, rid: int) -> None:
        if rid in self.resource_owner:
            raise ValueError(f"resource {rid} already owned")
        self.resource_owner[rid] = entity.id
        entity.resources.append(rid)

    def add_peer(self, entity: Entity, peer: bytes) -> None:
        if peer in self.peer_owner:
            raise ValueError("peer already owned")
        self.peer_owner[peer] = entity.id
        entity.peers.append(peer)

    def is_attacker_peer(self, peer: bytes) -> bool:
        e = self.peer_owner.get(peer)
        return e is not None and self.entities[e].is_attacker

    def attacker_peers(self) -> set[bytes]:
        return {p for p, e in self.peer_owner.items() if self.entities[e].is_attacker}


def split_ratio(attacker: int, defender: int) -> float:
    if defender == 0:
        return math.inf if attacker else 0.0
    return attacker / defender
