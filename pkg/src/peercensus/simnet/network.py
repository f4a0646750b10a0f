"""Discrete-event message delivery with integer ticks."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional


@dataclass(frozen=True)
class DelaySpec:
    """Message delay in ticks: fixed, uniform on [low, high] or exponential(mean)."""

    kind: str = "fixed"
    value: float = 1.0
    low: float = 1.0
    high: float = 1.0
    mean: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform", "exponential"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if min(self.value, self.low, self.mean) < 0 or self.high < self.low:
            raise ValueError("delays must be nonnegative with low <= high")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "DelaySpec":
        return cls(**(d or {}))

    def sample(self, rng) -> int:
        if self.kind == "fixed":
            return int(self.value)
        if self.kind == "uniform":
            return rng.randint(int(self.low), int(self.high))
        return int(math.ceil(rng.expovariate(1.0 / self.mean))) if self.mean > 0 else 0


class Network:
    """Pending deliveries ordered by (delivery tick, send order).

    Messages addressed to a peer that is offline at delivery time are
    dropped and counted; nothing else is ever lost.
    """

    def __init__(self, delay: DelaySpec, rng, is_online: Callable[[Any], bool] = lambda p: True):
        self.delay = delay
        self.rng = rng
        self.is_online = is_online
        self._heap: list = []
        self._seq = 0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def __len__(self) -> int:
        return len(self._heap)

    def deliver(self, now: int, src, dst, msg, delay: Optional[int] = None) -> int:
        """Schedule ``msg``; returns the delivery tick."""
        d = self.delay.sample(self.rng) if delay is None else int(delay)
        at = now + max(0, d)
        heapq.heappush(self._heap, (at, self._seq, src, dst, msg))
        self._seq += 1
        self.sent += 1
        return at

    def next_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: int):
        """Yield (src, dst, msg) for every delivery due at or before ``now``."""
        while self._heap and self._heap[0][0] <= now:
            _, _, src, dst, msg = heapq.heappop(self._heap)
            if self.is_online(dst):
                self.delivered += 1
                yield src, dst, msg
            else:
                self.dropped += 1
