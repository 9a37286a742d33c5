"""Ring-buffer producer/consumer state between host and interface.

One submission/completion ring pair per hardware QP. The host posts
descriptors and rings a doorbell; the interface fetches descriptors by DMA
(immediately in push mode, on the shaper's schedule in pull mode), moves the
payload, and posts a completion record. Occupancy frees at descriptor fetch;
a full completion ring stalls the device until the host drains it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

DEFAULT_SQ_DEPTH = 128
DEFAULT_CQ_DEPTH = 1024
DEFAULT_DESCRIPTOR_BYTES = 64
DEFAULT_COMPLETION_BYTES = 16
DEFAULT_FETCH_BATCH = 8


class ProtocolMode(Enum):
    PUSH = "push"  # doorbell-driven: fetch as soon as work is announced
    PULL = "pull"  # shaper-driven: doorbells only update counters


class SqFull(Exception):
    """Submission ring at capacity; the producer must wait for fetches."""


class CqFull(Exception):
    """Completion ring at capacity; the device must wait for the host."""


@dataclass(frozen=True)
class RingConfig:
    sq_depth: int = DEFAULT_SQ_DEPTH
    cq_depth: int = DEFAULT_CQ_DEPTH
    descriptor_bytes: int = DEFAULT_DESCRIPTOR_BYTES  # 0 = register interface
    completion_bytes: int = DEFAULT_COMPLETION_BYTES  # 0 = register interface
    fetch_batch: int = DEFAULT_FETCH_BATCH
    qp_window: int = 16  # wire messages in flight per QP before launch stalls

    def __post_init__(self):
        if self.sq_depth < 1 or self.cq_depth < 1:
            raise ValueError("ring depths must be >= 1")
        if self.descriptor_bytes < 0 or self.completion_bytes < 0:
            raise ValueError("record sizes must be >= 0")
        if self.fetch_batch < 1:
            raise ValueError("fetch_batch must be >= 1")
        if self.qp_window < 1:
            raise ValueError("qp_window must be >= 1")


@dataclass
class Descriptor:
    tenant_id: str
    qp_id: int
    msg_id: int
    msg_bytes: int
    submitted_ns: int
    fetched_ns: int = -1
    completed_ns: int = -1
    policed: bool = False
    wire_fetched: bool = False  # descriptor record DMA has been issued


@dataclass
class RingPair:
    """Counters and FIFOs for one QP's submission and completion rings."""

    qp_id: int
    config: RingConfig = field(default_factory=RingConfig)
    sq: deque = field(default_factory=deque)
    cq_occupancy: int = 0
    doorbell: int = 0  # descriptors announced but not yet fetched

    @property
    def sq_occupancy(self) -> int:
        return len(self.sq)

    @property
    def sq_space(self) -> int:
        return self.config.sq_depth - len(self.sq)

    def submit(self, desc: Descriptor) -> None:
        """Post one descriptor and ring the doorbell."""
        if len(self.sq) >= self.config.sq_depth:
            raise SqFull(f"qp {self.qp_id}: depth {self.config.sq_depth}")
        self.sq.append(desc)
        self.doorbell += 1

    def fetch(self, count: int, now: int) -> list[Descriptor]:
        """Consume up to `count` announced descriptors, freeing their slots."""
        take = min(count, self.doorbell, len(self.sq))
        out = []
        for _ in range(take):
            desc = self.sq.popleft()
            desc.fetched_ns = now
            out.append(desc)
        self.doorbell -= take
        return out

    def post_completion(self) -> None:
        if self.cq_occupancy >= self.config.cq_depth:
            raise CqFull(f"qp {self.qp_id}: depth {self.config.cq_depth}")
        self.cq_occupancy += 1

    def host_drain_cq(self, count: int = -1) -> int:
        """Host consumes completion records; -1 drains everything."""
        take = self.cq_occupancy if count < 0 else min(count, self.cq_occupancy)
        self.cq_occupancy -= take
        return take
