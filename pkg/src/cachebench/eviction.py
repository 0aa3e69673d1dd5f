"""Flush-free eviction: congruent addresses and a sliding-window access sweep.

The sweep is the usual parameterised sliding-window pattern: walk a list of
congruent addresses in overlapping windows, repeat each window, and repeat
the whole walk a number of rounds. Results are always verified through the
machine's placement snapshot, never assumed.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from typing import Iterable

from .cache import CacheGeometry, Policy
from .coherence import SimMachine
from .errors import InputError
from .latency import EventTrace

# Sweep addresses use tags far above anything the benchmarks allocate.
SWEEP_TAG = 1 << 14
SWEEP_SPAN = 1 << 10


@dataclass(frozen=True)
class EvictionParams:
    addresses: int
    accesses_per_address: int = 1
    window: int = 1
    rounds: int = 1

    def __post_init__(self):
        for name in ("addresses", "accesses_per_address", "window", "rounds"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise InputError(f"eviction {name} must be a positive integer, got {v!r}")
        if self.window > self.addresses:
            raise InputError("eviction window cannot exceed the address count")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.addresses, self.accesses_per_address, self.window, self.rounds)

    def __str__(self):
        return "{}/{}/{}/{}".format(*self.as_tuple())


@dataclass(frozen=True)
class EvictionResult:
    trace: EventTrace
    evicted: bool
    attempts: int = 1


def congruent_addresses(geometry: CacheGeometry, base_addr: int, count: int,
                        start_tag: int = SWEEP_TAG, avoid: CacheGeometry | None = None) -> list[int]:
    """``count`` addresses in ``base_addr``'s set, each with a different tag.

    Tags are taken upward from ``start_tag``, skipping the base tag. With
    ``avoid`` set, addresses that would also share the base's set in that
    (lower) geometry are skipped, so an L1 sweep leaves the L2 set alone.
    """
    if count < 1:
        raise InputError("count must be >= 1")
    s = geometry.set_index(base_addr)
    btag = geometry.tag(base_addr)
    avoid_set = avoid.set_index(base_addr) if avoid is not None else None
    out = []
    tag = start_tag
    while len(out) < count:
        if tag != btag:
            addr = geometry.address(tag, s)
            if avoid is None or avoid.set_index(addr) != avoid_set:
                out.append(addr)
        tag += 1
    return out


def sweep_order(addrs: list[int], params: EvictionParams) -> list[int]:
    """Access order of the sliding-window pattern over ``addrs``."""
    n = min(len(addrs), params.addresses)
    w = params.window
    order = []
    for _ in range(params.rounds):
        for i in range(n - w + 1):
            for _ in range(params.accesses_per_address):
                order.extend(addrs[i:i + w])
    return order


def involved_policies(machine_or_spec, level: int) -> list[Policy]:
    spec = getattr(machine_or_spec, "spec", machine_or_spec)
    return [lv.policy for lv in spec.levels if lv.level <= level]


def policy_defaults(policies: Iterable[Policy], n_total: int) -> EvictionParams:
    """Default sweep for a chain of levels with ``n_total`` ways in all."""
    policies = set(policies)
    if Policy.RANDOM in policies:
        return EvictionParams(2 * n_total, 2, 2, 4)
    if Policy.TREE_PLRU in policies:
        return EvictionParams(n_total, 1, 1, 2)
    return EvictionParams(n_total, 1, 1, 1)


def default_params(machine_or_spec, level: int) -> EvictionParams:
    """Shipped default parameters for evicting from ``level``.

    ``N`` is the total associativity the sweep has to push through
    (L1 ways plus the ways of every shared level down to ``level``).
    """
    spec = getattr(machine_or_spec, "spec", machine_or_spec)
    n_total = sum(lv.ways for lv in spec.levels if lv.level <= level)
    return policy_defaults(involved_policies(spec, level), n_total)


def _lower_geometry(machine: SimMachine, level: int) -> CacheGeometry | None:
    for lvl in machine.shared:
        if lvl.level > level:
            return lvl.geometry
    return None


def present(machine: SimMachine, core: int, addr: int, level: int) -> bool:
    lvl = machine.l1[core] if level == 1 else machine.level(level)
    return lvl.lookup(machine.block(addr)) is not None


def evict(machine: SimMachine, core: int, target_addr: int, level: int = 1,
          params: EvictionParams | None = None, max_attempts: int = 1) -> EvictionResult:
    """Displace ``target_addr`` from ``level`` with reads issued by ``core``.

    Each attempt uses fresh sweep addresses so that lines left behind by an
    earlier sweep do not turn into hits. Costs are charged to the machine.
    """
    params = params or default_params(machine, level)
    geometry = machine.l1[core].geometry if level == 1 else machine.level(level).geometry
    avoid = _lower_geometry(machine, level)
    trace = EventTrace()
    attempts = 0
    while True:
        attempts += 1
        epoch = getattr(machine, "_sweep_epoch", 0)
        machine._sweep_epoch = epoch + 1
        addrs = congruent_addresses(geometry, target_addr, params.addresses,
                                    start_tag=SWEEP_TAG + epoch * SWEEP_SPAN, avoid=avoid)
        for a in sweep_order(addrs, params):
            t = machine.read(core, a)
            machine.charge(t)
            trace.extend(t)
        done = not present(machine, core, target_addr, level)
        if done or attempts >= max_attempts:
            return EvictionResult(trace, done, attempts)


def eviction_rate(spec, level: int, params: EvictionParams, seeds: Iterable[int],
                  core: int = 0, addr: int = 0x40000) -> tuple[float, float]:
    """Fraction of seeds where one sweep evicts a freshly read block, plus mean sweep cycles."""
    hits = 0
    cycles = []
    seeds = list(seeds)
    for seed in seeds:
        m = SimMachine(spec.with_seed(seed))
        m.read(core, addr)
        for lv in range(1, level):
            # push the block down to the level under test first
            evict(m, core, addr, lv, max_attempts=16)
        before = m.cycles
        res = evict(m, core, addr, level, params)
        hits += res.evicted
        cycles.append(m.cycles - before)
    return hits / len(seeds), statistics.fmean(cycles)


def parameter_sweep(spec, level: int, grid: Iterable[EvictionParams], seeds: Iterable[int]) -> list[dict]:
    seeds = list(seeds)
    rows = []
    policy = "+".join(p.value for p in involved_policies(spec, level))
    for params in grid:
        rate, mean = eviction_rate(spec, level, params, seeds)
        rows.append({"policy": policy, "params": str(params), "eviction_rate": rate,
                     "mean_cycles": round(mean, 3)})
    return rows


def default_grid(spec, level: int) -> list[EvictionParams]:
    n = sum(lv.ways for lv in spec.levels if lv.level <= level)
    grid = []
    for mult in (1, 2):
        for acc in (1, 2):
            for win in (1, 2):
                for rounds in (1, 2, 4):
                    grid.append(EvictionParams(mult * n, acc, win, rounds))
    return grid


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["policy", "params", "eviction_rate", "mean_cycles"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
