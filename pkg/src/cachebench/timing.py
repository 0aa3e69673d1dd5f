"""Timing types, state preparation and latency histograms.

A timing type is an operation (read, write, flush) applied to a block whose
placement is one of: a single cache location (level x local/remote x
clean/dirty), a clean copy in both a local and a remote level, or DRAM only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .cache import Policy
from .coherence import MemOp, OpKind, SimMachine
from .errors import FeatureUnavailable, InputError, InvalidTimingType
from .eviction import evict
from .latency import LOCAL, REMOTE, LatencyTable, cost  # noqa: F401  (re-exported)
from .targets import TargetSpec

OPS = (OpKind.READ, OpKind.WRITE, OpKind.FLUSH)
DEFAULT_TRIALS = 10000
DEFAULT_ADDR = 0x100000
EVICT_ATTEMPTS = 16


@dataclass(frozen=True)
class TimingType:
    """``placement`` is a tuple of (level, locality, dirty) locations; empty means DRAM only."""

    op: OpKind
    placement: tuple

    @property
    def label(self) -> str:
        if not self.placement:
            return "DRAM"
        if len(self.placement) == 2:
            (ll, _, _), (rl, _, _) = self.placement
            return f"L{ll}_REMOTE_L{rl}_CLEAN"
        level, loc, dirty = self.placement[0]
        prefix = "REMOTE_" if loc == REMOTE else ""
        return f"{prefix}L{level}_{'DIRTY' if dirty else 'CLEAN'}"

    @property
    def key(self) -> str:
        return f"{self.op.value}:{self.label}"

    @property
    def levels(self) -> set[int]:
        return {loc[0] for loc in self.placement}

    @property
    def dram_only(self) -> bool:
        return not self.placement

    def __str__(self):
        return self.key


def placements(levels: Iterable[int]) -> list[tuple]:
    """12 single + 9 dual + 1 DRAM placements for three levels (fewer without L3)."""
    levels = list(levels)
    out = []
    for lv in levels:
        for loc in (LOCAL, REMOTE):
            for dirty in (False, True):
                out.append(((lv, loc, dirty),))
    for ll in levels:
        for rl in levels:
            out.append(((ll, LOCAL, False), (rl, REMOTE, False)))
    out.append(())
    return out


def enumerate_timing_types(has_l3: bool = True, has_flush: bool = True) -> list[TimingType]:
    levels = (1, 2, 3) if has_l3 else (1, 2)
    ops = OPS if has_flush else OPS[:2]
    return [TimingType(op, p) for op in ops for p in placements(levels)]


def timing_types_for(spec: TargetSpec) -> list[TimingType]:
    return enumerate_timing_types(spec.has_l3, spec.flush_user_mode)


def parse_timing_type(key: str) -> TimingType:
    """Inverse of ``TimingType.key`` (e.g. ``"read:REMOTE_L2_DIRTY"``)."""
    for tt in enumerate_timing_types(True, True):
        if tt.key == key:
            return tt
    raise InputError(f"unknown timing type {key!r}")


# -- state preparation --------------------------------------------------------

def _place(machine: SimMachine, addr: int, level: int, core: int, dirty: bool) -> None:
    if dirty:
        machine.write(core, addr)
    else:
        machine.read(core, addr)
    for lv in range(1, level):
        res = evict(machine, core, addr, lv, max_attempts=EVICT_ATTEMPTS)
        if not res.evicted:
            raise InvalidTimingType(f"could not evict block from L{lv} on {machine.spec.name}")


def _to_dram(machine: SimMachine, addr: int, core: int) -> None:
    if machine.flush_enabled:
        machine.flush(core, addr)
        return
    # no user-mode flush: evict level by level instead
    for lv in [1] + [lvl.level for lvl in machine.shared]:
        res = evict(machine, core, addr, lv, max_attempts=EVICT_ATTEMPTS)
        if not res.evicted:
            raise InvalidTimingType(f"could not evict block from L{lv} on {machine.spec.name}")


def prepare_state(machine: SimMachine, tt: TimingType, addr: int = DEFAULT_ADDR,
                  local: int = 0, remote: int = 1) -> None:
    """Bring ``addr`` into ``tt``'s placement, then verify it.

    Locations are prepared deepest level first and, on equal levels, the
    remote copy before the local one.
    """
    spec = machine.spec
    have = {1} | {lv.level for lv in spec.shared_levels}
    missing = tt.levels - have
    if missing:
        raise InvalidTimingType(f"{tt.label} needs L{min(missing)}, absent on {spec.name}")
    if any(loc[1] == REMOTE for loc in tt.placement) and spec.cores < 2:
        raise InvalidTimingType(f"{tt.label} needs a second core")
    if tt.op is OpKind.FLUSH and not spec.flush_user_mode:
        raise InvalidTimingType(f"{spec.name} has no user-mode flush")
    if tt.dram_only:
        machine.read(local, addr)
        _to_dram(machine, addr, local)
    else:
        order = sorted(tt.placement, key=lambda p: (-p[0], p[1] != REMOTE))
        for level, loc, dirty in order:
            _place(machine, addr, level, remote if loc == REMOTE else local, dirty)
    got = machine.snapshot_placement(addr).locations(local, remote)
    if got != frozenset(tt.placement):
        raise InvalidTimingType(
            f"{tt.label} not reached on {spec.name}: got {sorted(got, key=str)}")


def measure_once(machine: SimMachine, tt: TimingType, addr: int = DEFAULT_ADDR,
                 local: int = 0, remote: int = 1) -> int:
    prepare_state(machine, tt, addr, local, remote)
    try:
        trace = machine.apply(MemOp(tt.op, local, addr))
    except FeatureUnavailable as exc:
        raise InvalidTimingType(str(exc)) from exc
    return machine.charge(trace)


# -- histograms -----------------------------------------------------------------

class Histogram:
    """Latency counts with the mode / central 95% statistics.

    Mode ties go to the smaller latency. The 95% interval uses nearest-rank
    2.5% and 97.5% quantiles and is widened if needed so it contains the mode.
    """

    def __init__(self, counts: Mapping[int, int] | None = None):
        self.counts: Counter = Counter()
        for k, v in (counts or {}).items():
            if v < 0:
                raise InputError("histogram counts must be non-negative")
            if v:
                self.counts[int(k)] += int(v)

    @classmethod
    def from_samples(cls, samples: Iterable[int]) -> "Histogram":
        return cls(Counter(samples))

    @property
    def trials(self) -> int:
        return sum(self.counts.values())

    def __len__(self):
        return self.trials

    def __eq__(self, other):
        return isinstance(other, Histogram) and self.counts == other.counts

    def __repr__(self):
        return f"Histogram(trials={self.trials}, mode={self.mode if self.trials else None})"

    def merge(self, other: "Histogram") -> "Histogram":
        out = Histogram(self.counts)
        out.counts.update(other.counts)
        return out

    def scaled(self, factor: int) -> "Histogram":
        return Histogram({k: v * factor for k, v in self.counts.items()})

    def _require(self):
        if not self.counts:
            raise InputError("empty histogram")

    @property
    def mode(self) -> int:
        self._require()
        best = max(self.counts.values())
        return min(k for k, v in self.counts.items() if v == best)

    def quantile(self, q: float) -> int:
        """Nearest-rank quantile."""
        self._require()
        rank = max(1, math.ceil(q * self.trials))
        seen = 0
        for k in sorted(self.counts):
            seen += self.counts[k]
            if seen >= rank:
                return k
        return max(self.counts)

    @property
    def p95(self) -> tuple[int, int]:
        lo, hi = self.quantile(0.025), self.quantile(0.975)
        m = self.mode
        return min(lo, m), max(hi, m)

    def summary(self) -> dict:
        lo, hi = self.p95
        return {"mode": self.mode, "p95_low": lo, "p95_high": hi, "trials": self.trials}

    def to_dict(self) -> dict:
        return {"counts": {str(k): v for k, v in sorted(self.counts.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls({int(k): v for k, v in d["counts"].items()})


# -- measurement ------------------------------------------------------------------

class MachineFactory:
    """Picklable ``trial -> SimMachine`` callable."""

    def __init__(self, spec: TargetSpec):
        self.spec = spec

    def __call__(self, trial: int) -> SimMachine:
        return SimMachine(self.spec, trial)


def random_choices(machine: SimMachine) -> int:
    """Victim choices made by Random-policy levels; the only source of divergence between trials."""
    n = 0
    for lvl in machine.l1 + machine.shared:
        if lvl.policy.kind is Policy.RANDOM:
            n += lvl.victim_choices
    return n


def _trial_batch(args) -> Counter:
    factory, tt, addr, start, stop = args
    c = Counter()
    for t in range(start, stop):
        c[measure_once(factory(t), tt, addr)] += 1
    return c


def measure(machine_factory: Callable[[int], SimMachine] | TargetSpec, tt: TimingType,
            trials: int = DEFAULT_TRIALS, addr: int = DEFAULT_ADDR, jobs: int = 1) -> Histogram:
    """Histogram of ``tt``'s latency over ``trials`` fresh machines.

    If the first trial involved no jitter and no random victim choice, every
    other trial would replay it exactly, so its count is scaled instead.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    factory = MachineFactory(machine_factory) if isinstance(machine_factory, TargetSpec) \
        else machine_factory
    first = factory(0)
    c0 = measure_once(first, tt, addr)
    if first.spec.latency.jitter == 0 and random_choices(first) == 0:
        return Histogram({c0: trials})
    counts = Counter({c0: 1})
    if trials > 1:
        if jobs > 1:
            step = math.ceil((trials - 1) / jobs)
            chunks = [(factory, tt, addr, s, min(s + step, trials)) for s in range(1, trials, step)]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for part in pool.map(_trial_batch, chunks):
                    counts.update(part)
        else:
            counts.update(_trial_batch((factory, tt, addr, 1, trials)))
    return Histogram(counts)


def measure_all(spec: TargetSpec, trials: int = DEFAULT_TRIALS, addr: int = DEFAULT_ADDR,
                jobs: int = 1, types: Iterable[TimingType] | None = None) -> dict[TimingType, Histogram]:
    types = list(types) if types is not None else timing_types_for(spec)
    return {tt: measure(MachineFactory(spec), tt, trials, addr, jobs) for tt in types}


# -- export -------------------------------------------------------------------------

def histograms_csv(hists: Mapping[TimingType, Histogram]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "op", "cycles", "count"])
    for tt, h in hists.items():
        for cycles in sorted(h.counts):
            w.writerow([tt.label, tt.op.value, cycles, h.counts[cycles]])
    return buf.getvalue()


def summary_rows(hists: Mapping[TimingType, Histogram]) -> list[dict]:
    return [{"label": tt.label, "op": tt.op.value, **h.summary()} for tt, h in hists.items()]


def summary_json(hists: Mapping[TimingType, Histogram], extra: dict | None = None) -> str:
    doc = dict(extra or {})
    doc["timing_types"] = summary_rows(hists)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_histograms_csv(text: str) -> dict[tuple[str, str], Histogram]:
    rows = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
    acc: dict[tuple[str, str], Counter] = {}
    for r in rows:
        acc.setdefault((r["op"], r["label"]), Counter())[int(r["cycles"])] += int(r["count"])
    return {k: Histogram(v) for k, v in acc.items()}
