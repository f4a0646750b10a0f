"""Identity-bearing blocks, the agreed chain, and the miner's event loop.

Canonical block encoding (input to ``hash_block``): the four fields in the
order parent_hash, difficulty, peer, nonce, each written as a 4-byte
big-endian length followed by the field bytes.  ``difficulty`` is encoded as
a 4-byte big-endian unsigned integer before length-prefixing.

The PoW challenge of a block is ``lp(parent_hash) || lp(peer)`` with the same
length-prefix scheme, and the block is sealed when ``pow_check(d, challenge,
nonce)`` holds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, TextIO, Union

from .pow_identity import H, pow_check, pow_solve

DIGEST_BYTES = 32
GENESIS_PEER = bytes(32)
GENESIS_PARENT = bytes(DIGEST_BYTES)


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


@dataclass(frozen=True)
class Block:
    parent_hash: bytes
    difficulty: int
    peer: bytes
    nonce: bytes

    def encode(self) -> bytes:
        return (
            _lp(self.parent_hash)
            + _lp(struct.pack(">I", self.difficulty))
            + _lp(self.peer)
            + _lp(self.nonce)
        )

    @property
    def challenge(self) -> bytes:
        return pow_challenge(self.parent_hash, self.peer)

    def to_record(self) -> dict:
        return {
            "parent_hash": self.parent_hash.hex(),
            "difficulty": self.difficulty,
            "peer": self.peer.hex(),
            "nonce": self.nonce.hex(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Block":
        return cls(
            parent_hash=bytes.fromhex(rec["parent_hash"]),
            difficulty=int(rec["difficulty"]),
            peer=bytes.fromhex(rec["peer"]),
            nonce=bytes.fromhex(rec["nonce"]),
        )


def pow_challenge(parent_hash: bytes, peer: bytes) -> bytes:
    return _lp(parent_hash) + _lp(peer)


def hash_block(b: Block) -> bytes:
    return H(b.encode())


def make_genesis(difficulty: int = 1) -> Block:
    return Block(GENESIS_PARENT, difficulty, GENESIS_PEER, b"")


def is_legal_block(parent: Block, b: Block, min_difficulty: int = 1) -> bool:
    if b.parent_hash != hash_block(parent):
        return False
    if b.difficulty < min_difficulty:
        return False
    return pow_check(b.difficulty, b.challenge, b.nonce)


def mine_block(parent: Block, peer: bytes, difficulty: int, rng, max_attempts: int = 1 << 22) -> Block:
    """Real hash search; only sensible at desk-scale difficulties."""
    h = hash_block(parent)
    nonce = pow_solve(difficulty, pow_challenge(h, peer), max_attempts, rng)
    if nonce is None:
        raise RuntimeError(f"no nonce found within {max_attempts} attempts at d={difficulty}")
    return Block(h, difficulty, peer, nonce)


class ChainError(ValueError):
    pass


@dataclass
class Chain:
    """Genesis plus the agreed blocks b_1..b_l."""

    genesis: Block
    blocks: list[Block] = field(default_factory=list)
    min_difficulty: int = 1
    _index: dict[bytes, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        blocks, self.blocks = self.blocks, []
        self._index = {}
        for b in blocks:
            self.append(b)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    @property
    def head(self) -> Block:
        return self.blocks[-1] if self.blocks else self.genesis

    def block_at(self, height: int) -> Block:
        """Height 0 is genesis."""
        return self.genesis if height == 0 else self.blocks[height - 1]

    def can_append(self, b: Block) -> bool:
        return (
            is_legal_block(self.head, b, self.min_difficulty)
            and b.peer not in self._index
            and b.peer != GENESIS_PEER
        )

    def append(self, b: Block) -> None:
        if not is_legal_block(self.head, b, self.min_difficulty):
            raise ChainError("block is not a legal child of the chain head")
        if b.peer in self._index or b.peer == GENESIS_PEER:
            raise ChainError("peer already holds a block in this chain")
        self.blocks.append(b)
        self._index[b.peer] = len(self.blocks)

    def copy(self) -> "Chain":
        c = Chain(self.genesis, [], self.min_difficulty)
        c.blocks = list(self.blocks)
        c._index = dict(self._index)
        return c

    def prefix(self, length: int) -> "Chain":
        c = Chain(self.genesis, [], self.min_difficulty)
        c.blocks = self.blocks[:length]
        c._index = {b.peer: i + 1 for i, b in enumerate(c.blocks)}
        return c

    def height_of(self, peer: bytes) -> Optional[int]:
        return self._index.get(peer)

    def peers(self) -> list[bytes]:
        return [b.peer for b in self.blocks]

    def __contains__(self, peer: bytes) -> bool:
        return peer in self._index

    def is_prefix_of(self, other: "Chain") -> bool:
        return self.genesis == other.genesis and other.blocks[: len(self.blocks)] == self.blocks

    def validate(self) -> bool:
        parent = self.genesis
        seen = set()
        for b in self.blocks:
            if not is_legal_block(parent, b, self.min_difficulty) or b.peer in seen:
                return False
            seen.add(b.peer)
            parent = b
        return True


def rank(C: Chain, p: bytes) -> Optional[int]:
    """l - i for the peer found in block i; None if p holds no block."""
    i = C.height_of(p)
    return None if i is None else len(C) - i


class BlockTree:
    """All legal blocks seen, rooted at genesis."""

    def __init__(self, genesis: Block, min_difficulty: int = 1):
        self.genesis = genesis
        self.min_difficulty = min_difficulty
        root = hash_block(genesis)
        self.root = root
        self.nodes: dict[bytes, Block] = {root: genesis}
        self.children: dict[bytes, list[bytes]] = {root: []}

    def add(self, b: Block) -> bool:
        parent = self.nodes.get(b.parent_hash)
        if parent is None or not is_legal_block(parent, b, self.min_difficulty):
            return False
        h = hash_block(b)
        if h not in self.nodes:
            self.nodes[h] = b
            self.children[h] = []
            self.children[b.parent_hash].append(h)
        return True

    def path_to(self, h: bytes) -> list[Block]:
        path = []
        while h != self.root:
            b = self.nodes[h]
            path.append(b)
            h = b.parent_hash
        return path[::-1]

    def siblings(self, b: Block) -> list[Block]:
        h = hash_block(b)
        return [self.nodes[c] for c in self.children.get(b.parent_hash, []) if c != h]


# -- miner protocol -------------------------------------------------------


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class Found:
    block: Block


@dataclass(frozen=True)
class Committed:
    block: Block
    chain: Chain


MinerEvent = Union[Start, Found, Committed]


@dataclass(frozen=True)
class StartMining:
    target: Block


@dataclass(frozen=True)
class StopMining:
    pass


@dataclass(frozen=True)
class ProposeBlock:
    block: Block


@dataclass(frozen=True)
class MinerState:
    peer: bytes
    current_chain: Chain
    mining_target: Optional[Block] = None
    proposed: Optional[Block] = None
    mining: bool = False
    voting: bool = False


def miner_step(state: MinerState, event: MinerEvent) -> tuple[MinerState, list]:
    """One transition of the per-peer blockchain protocol."""
    if isinstance(event, Start):
        head = state.current_chain.head
        return replace(state, mining_target=head, mining=True), [StartMining(head)]

    if isinstance(event, Found):
        b = event.block
        if not state.mining or b.parent_hash != hash_block(state.current_chain.head):
            # mined on a superseded parent
            return state, []
        return replace(state, proposed=b), [ProposeBlock(b)]

    if isinstance(event, Committed):
        new_chain = event.chain
        actions: list = [StopMining()]
        if state.proposed is not None and event.block == state.proposed:
            return (
                replace(state, current_chain=new_chain, mining_target=None, mining=False, voting=True),
                actions,
            )
        head = new_chain.head
        actions.append(StartMining(head))
        return (
            replace(state, current_chain=new_chain, mining_target=head, proposed=None, mining=True),
            actions,
        )

    raise TypeError(f"unknown miner event {event!r}")


# -- line-delimited chain records ----------------------------------------


def dump_chain(chain: Chain, fp: TextIO) -> None:
    for height in range(len(chain) + 1):
        rec = {"height": height, **chain.block_at(height).to_record()}
        fp.write(json.dumps(rec, sort_keys=True) + "\n")


def load_chain(lines: Iterable[str], min_difficulty: int = 1) -> Chain:
    records = [json.loads(line) for line in lines if line.strip()]
    if not records or records[0].get("height") != 0:
        raise ChainError("chain records must start with the genesis block at height 0")
    blocks = []
    for expect, rec in enumerate(records):
        if rec["height"] != expect:
            raise ChainError(f"record {expect} has height {rec['height']}")
        blocks.append(Block.from_record(rec))
    return Chain(blocks[0], blocks[1:], min_difficulty)
