"""Accelerator compute engine behind a bounded staging buffer.

Inputs queue FIFO across tenants in a shared byte-capacity buffer. Service
frees the buffer slot at service start (the engine pulls the next input
before the current one finishes), so the buffer bounds queued inputs, not
pipeline depth. Completion lags by the profile's fixed latency; occupancy
advances by compute time only, so sustained throughput converges to the
profile curve regardless of that latency.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from .events import EventLoop
from .model import AcceleratorProfile, egress_size, interpolate_throughput

DEFAULT_BUFFER_BYTES = 262144  # 256 KiB staging buffer


@dataclass
class EngineItem:
    tenant_id: str
    ingress_bytes: int
    token: object = None  # opaque caller context, returned on completion
    avail_ns: Optional[Fraction] = None  # filled at admission; service chains
    # from the exact end of the previous computation, not the event tick


class AccelEngine:
    """One accelerator instance; tenants sharing a profile share the instance."""

    def __init__(
        self,
        profile: AcceleratorProfile,
        loop: EventLoop,
        on_complete: Callable[[EngineItem, int, int], None],
        buffer_bytes: int = DEFAULT_BUFFER_BYTES,
    ):
        if buffer_bytes < 1:
            raise ValueError("buffer_bytes must be >= 1")
        self.profile = profile
        self.loop = loop
        self.on_complete = on_complete  # (item, egress_bytes, now)
        self.buffer_bytes = buffer_bytes
        self.buffer_used = 0
        self.queue: deque[EngineItem] = deque()
        self.busy_until: Fraction = Fraction(0)
        self._service_scheduled = False
        self.on_space_freed: Optional[Callable[[int], None]] = None
        self.serviced_bytes = 0
        self.serviced_ops = 0

    def compute_ns(self, size_bytes: int) -> Fraction:
        gbps = Fraction(str(interpolate_throughput(self.profile, size_bytes)))
        return Fraction(size_bytes * 8) / gbps

    def service_ns(self, size_bytes: int) -> Fraction:
        return Fraction(self.profile.fixed_latency_ns) + self.compute_ns(size_bytes)

    def try_enqueue(self, item: EngineItem) -> bool:
        """Admit one input if the staging buffer has room. False = caller retries
        after the next space-freed notification."""
        if item.ingress_bytes > self.buffer_bytes:
            raise ValueError(
                f"input of {item.ingress_bytes}B exceeds the {self.buffer_bytes}B buffer"
            )
        if self.buffer_used + item.ingress_bytes > self.buffer_bytes:
            return False
        if item.avail_ns is None:
            item.avail_ns = Fraction(self.loop.now)
        self.buffer_used += item.ingress_bytes
        self.queue.append(item)
        self._pump()
        return True

    def _pump(self) -> None:
        if self._service_scheduled or not self.queue:
            return
        now = Fraction(self.loop.now)
        start = max(now, self.busy_until)
        self._service_scheduled = True
        self.loop.at(start, self._service_next)

    def _service_next(self) -> None:
        self._service_scheduled = False
        if not self.queue:
            return
        now = Fraction(self.loop.now)
        if self.busy_until > now:
            self._pump()
            return
        item = self.queue.popleft()
        # space frees as service starts: the pipeline pulls ahead
        self.buffer_used -= item.ingress_bytes
        avail = item.avail_ns if item.avail_ns is not None else now
        start = max(avail, self.busy_until)  # exact back-to-back chaining
        self.busy_until = start + self.compute_ns(item.ingress_bytes)
        done = start + self.service_ns(item.ingress_bytes)
        out = egress_size(self.profile.egress, item.ingress_bytes)
        self.serviced_bytes += item.ingress_bytes
        self.serviced_ops += 1
        self.loop.at(done, lambda: self.on_complete(item, out, self.loop.now))
        if self.on_space_freed is not None:
            self.on_space_freed(self.loop.now)
        self._pump()

    @property
    def queued_ops(self) -> int:
        return len(self.queue)
