"""Event categories and the cycle-cost table that prices them."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .errors import ConfigurationError

L1_HIT = "L1_hit"
L2_HIT = "L2_hit"
L3_HIT = "L3_hit"
DRAM_FETCH = "dram_fetch"
REMOTE_SNOOP = "remote_snoop"
C2C = "cache_to_cache_transfer"
DIRECTORY_LOOKUP = "directory_lookup"
INVALIDATION = "invalidation_broadcast"
WRITEBACK = "writeback"
FLUSH_LINE = "flush_line"
BASE = "base_op_overhead"

EVENT_CATEGORIES = (L1_HIT, L2_HIT, L3_HIT, DRAM_FETCH, REMOTE_SNOOP, C2C,
                    DIRECTORY_LOOKUP, INVALIDATION, WRITEBACK, FLUSH_LINE)
PRICED = EVENT_CATEGORIES + (BASE,)
HIT_EVENT = {1: L1_HIT, 2: L2_HIT, 3: L3_HIT}

LOCAL, REMOTE = "local", "remote"


class Event(NamedTuple):
    category: str
    level: int          # 1..3 for caches, 0 for DRAM / directory
    locality: str | None
    addr: int


class EventTrace:
    """Ordered events produced by one memory operation."""

    __slots__ = ("events", "value")

    def __init__(self, events: Iterable[Event] = ()):
        self.events: list[Event] = list(events)
        self.value: int | None = None

    def add(self, category: str, level: int, locality: str | None, addr: int) -> None:
        self.events.append(Event(category, level, locality, addr))

    def extend(self, other: "EventTrace") -> None:
        self.events.extend(other.events)

    def categories(self) -> list[str]:
        return [e.category for e in self.events]

    def count(self, category: str) -> int:
        return sum(1 for e in self.events if e.category == category)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def __repr__(self):
        return f"EventTrace({self.categories()})"


@dataclass(frozen=True)
class LatencyTable:
    """Cycles charged per event category, plus per-operation jitter.

    ``jitter`` is the half-width of uniform integer noise added to every
    costed operation; 0 makes costing deterministic.
    """

    cycles: Mapping[str, int] = field(default_factory=dict)
    jitter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cycles", dict(self.cycles))

    def __getitem__(self, category: str) -> int:
        try:
            return self.cycles[category]
        except KeyError:
            raise ConfigurationError(f"latency table does not price {category!r}") from None

    def validate(self, has_l3: bool = True) -> None:
        missing = [c for c in PRICED if c not in self.cycles]
        if missing:
            raise ConfigurationError(f"latency table does not price {', '.join(missing)}")
        for cat, v in self.cycles.items():
            if cat not in PRICED:
                raise ConfigurationError(f"unknown latency category {cat!r}")
            if not isinstance(v, int) or v < 0:
                raise ConfigurationError(f"{cat} must be a non-negative integer")
        path = [L1_HIT, L2_HIT] + ([L3_HIT] if has_l3 else []) + [DRAM_FETCH]
        vals = [self.cycles[c] for c in path]
        if any(a >= b for a, b in zip(vals, vals[1:])):
            raise ConfigurationError(
                "read path must be strictly increasing: " + " < ".join(path))
        if self.cycles[WRITEBACK] <= 0:
            raise ConfigurationError("writeback must cost > 0 cycles")
        if not isinstance(self.jitter, int) or self.jitter < 0:
            raise ConfigurationError("jitter must be a non-negative integer")

    def with_jitter(self, jitter: int) -> "LatencyTable":
        return LatencyTable(self.cycles, jitter)


def cost(trace: EventTrace, table: LatencyTable, rng: random.Random | None = None) -> int:
    """Cycles for one operation: base overhead + priced events + jitter draw."""
    total = table[BASE]
    cycles = table.cycles
    for ev in trace.events:
        try:
            total += cycles[ev.category]
        except KeyError:
            raise ConfigurationError(
                f"latency table does not price {ev.category!r}") from None
    if table.jitter and rng is not None:
        total += rng.randint(-table.jitter, table.jitter)
    return total
