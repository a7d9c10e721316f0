"""Discrete-event kernel: logical millisecond clock, event queue, trace log.

Every simulation instance owns one EventLoop and one Trace. Instances are
single-threaded; sweeps parallelize across instances with independent seeds.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Iterable


@dataclass
class TraceEvent:
    """One timestamped record: {t, actor, event, fields}."""

    t: int
    actor: str
    event: str
    fields: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"t": self.t, "actor": self.actor, "event": self.event, "fields": self.fields}


class Trace:
    """Append-only event log, serializable to JSON Lines."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, t: int, actor: str, event: str, **fields: Any) -> TraceEvent:
        ev = TraceEvent(int(t), actor, event, _jsonable(fields))
        self.events.append(ev)
        return ev

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def select(self, event: str) -> list[TraceEvent]:
        return [e for e in self.events if e.event == event]

    def to_jsonl(self) -> str:
        ordered = sorted(self.events, key=lambda e: e.t)
        return "\n".join(json.dumps(e.to_json(), sort_keys=True) for e in ordered)

    @staticmethod
    def from_jsonl(text: str) -> "Trace":
        trace = Trace()
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            trace.events.append(
                TraceEvent(obj["t"], obj["actor"], obj["event"], obj.get("fields", {}))
            )
        return trace


def _jsonable(fields: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in fields.items():
        if isinstance(v, bytes):
            out[k] = v.hex()
        elif isinstance(v, (str, int, float, bool)) or v is None:
            out[k] = v
        elif isinstance(v, (list, tuple)):
            out[k] = [x.hex() if isinstance(x, bytes) else x for x in v]
        else:
            out[k] = str(v)
    return out


class Future:
    """Single-assignment result a process can wait on."""

    __slots__ = ("_loop", "value", "resolved", "_waiters")

    def __init__(self, loop: "EventLoop") -> None:
        self._loop = loop
        self.value: Any = None
        self.resolved = False
        self._waiters: list[Callable[[Any], None]] = []

    def resolve(self, value: Any = None) -> None:
        if self.resolved:
            raise RuntimeError("future resolved twice")
        self.resolved = True
        self.value = value
        for cb in self._waiters:
            self._loop.after(0, lambda cb=cb: cb(value))
        self._waiters.clear()

    def add_done_callback(self, cb: Callable[[Any], None]) -> None:
        if self.resolved:
            self._loop.after(0, lambda: cb(self.value))
        else:
            self._waiters.append(cb)


Process = Generator[Any, Any, None]


class EventLoop:
    """Heap-ordered scheduler over a logical integer-millisecond clock.

    Ties at equal timestamps run in scheduling order, which gives the
    deterministic replica-index ordering that barrier experiments rely on.
    Processes are generators that yield either an int delay (ms) or a Future.
    """

    def __init__(self) -> None:
        self.now: int = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.time_hooks: list[Callable[[int], None]] = []

    def at(self, t: int, fn: Callable[[], None]) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule into the past: {t} < {self.now}")
        heapq.heappush(self._heap, (int(t), self._seq, fn))
        self._seq += 1

    def after(self, delay: int, fn: Callable[[], None]) -> None:
        if delay < 0:
            raise ValueError("negative delay")
        self.at(self.now + int(delay), fn)

    def spawn(self, gen: Process) -> Future:
        """Run a generator process; the returned future resolves with its return value."""
        done = Future(self)

        def step(send_value: Any = None) -> None:
            try:
                yielded = gen.send(send_value)
            except StopIteration as stop:
                done.resolve(stop.value)
                return
            if isinstance(yielded, Future):
                yielded.add_done_callback(step)
            else:
                self.after(int(yielded), lambda: step(None))

        self.after(0, lambda: step(None))
        return done

    def run(self, until: int | None = None) -> None:
        while self._heap:
            t, _, fn = self._heap[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._heap)
            if t > self.now:
                self.now = t
                for hook in self.time_hooks:
                    hook(t)
            fn()
        if until is not None and until > self.now:
            self.now = until
            for hook in self.time_hooks:
                hook(until)


def derive_seed(base_seed: int, index: int) -> int:
    """Per-instance seed: base XOR index, folded to 64 bits."""
    return (int(base_seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def stable_ordinal(parts: Iterable[Any]) -> int:
    """Deterministic 64-bit ordinal for a tuple of config coordinates."""
    acc = 0xCBF29CE484222325
    for part in parts:
        for b in str(part).encode():
            acc ^= b
            acc = (acc * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return acc
