"""Start a PeerCensus deployment from the prefix of an existing chain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

from ..blockchain import Block, Chain
from ..chain_agreement.state import SharedState


class BootstrapError(ValueError):
    pass


@dataclass
class BootstrapPlan:
    state: SharedState
    voters: list[bytes]
    online: list[bytes]
    recommit: list[Block]
    l_m: int
    k: int
    j: int

    def to_record(self) -> dict:
        return {
            "l_m": self.l_m,
            "k": self.k,
            "j": self.j,
            "voters": [p.hex() for p in self.voters],
            "online": [p.hex() for p in self.online],
            "recommit_heights": list(range(self.l_m - self.k + 1, self.l_m + 1)),
            "recommit": [b.to_record() for b in self.recommit],
            "now": list(self.state.now),
        }


def liveness_threshold(j: int) -> int:
    return math.ceil(2 * j / 3) + 1


def bootstrap_from_chain(
    chain: Chain,
    l_m: int,
    k: int,
    j: int,
    online: Optional[Union[Iterable[bytes], Callable[[bytes], bool]]] = None,
) -> BootstrapPlan:
    """Voters come from heights 1..l_m-k; I is the j newest of them.

    Blocks l_m-k+1..l_m are returned for re-commitment through the CA.
    """
    if len(chain) < l_m:
        raise BootstrapError(f"chain has {len(chain)} blocks, need at least l_m={l_m}")
    if not 0 <= k < l_m:
        raise BootstrapError("need 0 <= k < l_m")
    cut = l_m - k
    if not 1 <= j <= cut:
        raise BootstrapError(f"need 1 <= j <= l_m - k = {cut}")
    prefix = chain.prefix(cut)
    voters = prefix.peers()
    chosen = voters[cut - j:]
    if online is None:
        is_on = lambda p: True  # noqa: E731
    elif callable(online):
        is_on = online
    else:
        up = set(online)
        is_on = up.__contains__
    need = liveness_threshold(j)
    alive = sum(1 for p in chosen if is_on(p))
    if alive < need:
        raise BootstrapError(f"only {alive} of the {j} initial online voters are reachable; need {need}")
    state = SharedState.initial(prefix, chosen)
    recommit = [chain.block_at(h) for h in range(cut + 1, l_m + 1)]
    return BootstrapPlan(state, voters, chosen, recommit, l_m, k, j)
