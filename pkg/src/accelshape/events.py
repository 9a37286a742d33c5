"""Deterministic integer-nanosecond event loop.

Events fire in (timestamp, insertion sequence) order, so identical inputs
replay identically regardless of platform or hash seeds.
"""
from __future__ import annotations

import heapq
from fractions import Fraction
from typing import Callable


def ceil_ns(t: Fraction | int) -> int:
    """Smallest integer nanosecond not before the exact time `t`."""
    if isinstance(t, int):
        return t
    return -((-t.numerator) // t.denominator)


class EventLoop:
    def __init__(self):
        self.now: int = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.events_run = 0

    def at(self, when: int | Fraction, fn: Callable[[], None]) -> None:
        when = ceil_ns(when)
        if when < self.now:
            raise ValueError(f"cannot schedule at {when} before now={self.now}")
        heapq.heappush(self._heap, (when, self._seq, fn))
        self._seq += 1

    def after(self, delay: int | Fraction, fn: Callable[[], None]) -> None:
        self.at(self.now + ceil_ns(delay), fn)

    def run_until(self, end_ns: int) -> None:
        """Run every event with timestamp strictly below `end_ns`."""
        heap = self._heap
        while heap and heap[0][0] < end_ns:
            when, _, fn = heapq.heappop(heap)
            self.now = when
            self.events_run += 1
            fn()
        if self.now < end_ns:
            self.now = end_ns

    @property
    def pending(self) -> int:
        return len(self._heap)


class SplitMix64:
    """Tiny counter-based generator; stable across platforms and runs."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self._state = seed & self.MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & self.MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def randrange(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        # rejection sampling keeps the draw unbiased
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]


def tenant_rng(seed: int, tenant_id: str) -> SplitMix64:
    """Independent stream per (seed, tenant): adding tenants never perturbs others."""
    h = 0xCBF29CE484222325  # FNV-1a over the tenant id
    for b in tenant_id.encode():
        h = ((h ^ b) * 0x100000001B3) & SplitMix64.MASK
    return SplitMix64(seed ^ h)
