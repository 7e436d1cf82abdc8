"""Discrete-event engine: integer-microsecond clock, ordered event heap, named RNG streams."""
from __future__ import annotations

import hashlib
import heapq
from typing import Any, Callable

import numpy as np

US_PER_MS = 1000
US_PER_S = 1_000_000


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class EventHandle:
    __slots__ = ("time", "seq", "fn", "args", "cancelled")

    def __init__(self, time: int, seq: int, fn: Callable, args: tuple):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __repr__(self) -> str:
        name = getattr(self.fn, "__qualname__", repr(self.fn))
        return f"EventHandle(t={self.time}, seq={self.seq}, {name})"


class Simulator:
    """Single-threaded event loop.

    Events fire in ``(time, seq)`` order, where ``seq`` is a per-run counter
    assigned at scheduling time, so same-time events fire in the order they
    were scheduled.
    """

    def __init__(self, record_transcript: bool = False):
        self.now = 0
        self._heap: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self.fired = 0
        self.transcript: list[tuple[int, int, str]] | None = [] if record_transcript else None

    def schedule(self, time: int, fn: Callable, *args: Any) -> EventHandle:
        if time < self.now:
            raise SchedulingError(f"event at t={time} is before clock t={self.now}")
        h = EventHandle(time, self._seq, fn, args)
        heapq.heappush(self._heap, (time, self._seq, h))
        self._seq += 1
        return h

    def schedule_in(self, delay: int, fn: Callable, *args: Any) -> EventHandle:
        return self.schedule(self.now + delay, fn, *args)

    def pending(self) -> int:
        return sum(1 for _, _, h in self._heap if not h.cancelled)

    def run_until(self, t_end: int) -> int:
        """Fire every event with ``time <= t_end``; leave the clock at ``t_end``."""
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before clock t={self.now}")
        heap = self._heap
        pop = heapq.heappop
        transcript = self.transcript
        count = 0
        while heap and heap[0][0] <= t_end:
            time, seq, h = pop(heap)
            if h.cancelled:
                continue
            self.now = time
            if transcript is not None:
                transcript.append((time, seq, h.fn.__qualname__))
            h.fn(*h.args)
            count += 1
        self.now = t_end
        self.fired += count
        return count


def stream_seed(master_seed: int, name: str) -> int:
    """64-bit seed for stream ``name``; hashing keeps streams independent of each other."""
    digest = hashlib.sha256(f"{int(master_seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(master_seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_seed(master_seed, name)))
