"""Test configurations, plan compilation, execution and the detection matrix.

Each triple has 16 test configurations: for every step, a natural
realization (read for an access, flush for an invalidation; label ``RF``)
or a write realization (``W``), times a time-slicing (``TS``) or SMT
schedule.

Role mapping: under TS the attacker runs on core 0 and the victim on
core 1; under SMT both run on core 0 and so share its L1. A
write-realized invalidation is a write from a helper core (core 2 under
TS, core 1 under SMT), which invalidates the actor's copy through
coherence. Without a spare core it falls back to evicting the block from
the actor's L1.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .cache import CacheGeometry
from .coherence import MemOp, OpKind, SimMachine
from .errors import ConfigurationError, InputError, PlanError
from .eviction import evict
from .targets import TargetSpec
from .threestep import (NTRIPLES, Action, Actor, StepState, Verdict, VulnTriple, classify,
                        unrank)
from .timing import Histogram, random_choices

NATURAL, WRITE = "RF", "W"
TS, SMT = "TS", "SMT"
DETECTED, NOT_DETECTED, INVALID = "Detected", "NotDetected", "InvalidConfig"
STATUSES = (DETECTED, NOT_DETECTED, INVALID)
DEFAULT_DELTA_MIN = 2
MIN_TRIALS = 100
MONITORED_LINES = 8


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this class

    realization: tuple[str, str, str]
    schedule: str

    @property
    def label(self) -> str:
        return "_".join(self.realization + (self.schedule,))

    def __str__(self):
        return self.label


def gen_configs(t: VulnTriple | None = None) -> list[TestConfig]:
    """The 16 configurations, TS block first, in a stable order."""
    return [TestConfig(r, sched) for sched in (TS, SMT)
            for r in itertools.product((NATURAL, WRITE), repeat=3)]


ALL_CONFIGS = tuple(gen_configs())
CONFIG_LABELS = tuple(c.label for c in ALL_CONFIGS)


def parse_config(label: str) -> TestConfig:
    parts = label.split("_")
    if (len(parts) != 4 or any(p not in (NATURAL, WRITE) for p in parts[:3])
            or parts[3] not in (TS, SMT)):
        raise InputError(f"bad test configuration label {label!r}")
    return TestConfig(tuple(parts[:3]), parts[3])


def invalid_reason(config: TestConfig, t: VulnTriple, target: TargetSpec) -> str:
    """Empty string when ``config`` can run ``t`` on ``target``."""
    if config.schedule == SMT and not target.smt:
        return "SMT unavailable"
    if not target.flush_user_mode:
        for k, (st, real) in enumerate(zip(t.steps, config.realization), start=1):
            if real == NATURAL and st.is_invalidation:
                return f"step {k} needs a user-mode flush"
    if config.schedule == TS and target.cores < 2:
        return "time-slicing needs two cores"
    return ""


def validity(config: TestConfig, t: VulnTriple, target: TargetSpec) -> bool:
    return not invalid_reason(config, t, target)


class Roles(NamedTuple):
    attacker: int
    victim: int
    helper: int | None


def roles(config: TestConfig, target: TargetSpec) -> Roles:
    if config.schedule == TS:
        return Roles(0, 1, 2 if target.cores > 2 else None)
    return Roles(0, 0, 1 if target.cores > 1 else None)


@dataclass(frozen=True)
class Layout:
    """Concrete addresses for the monitored lines (one L1 set each)."""

    geometry: CacheGeometry
    lines: int = MONITORED_LINES
    base_tag: int = 1
    d_offset: int = 1
    decoy_offset: int = 2

    @classmethod
    def for_target(cls, target: TargetSpec, decoy_offset: int = 2, lines: int = MONITORED_LINES):
        lay = cls(target.l1.geometry, lines=lines, decoy_offset=decoy_offset)
        if lay.spacing <= max(lay.d_offset, lay.decoy_offset) or decoy_offset == lay.d_offset:
            raise ConfigurationError(
                f"L1 of {target.name} has too few sets for {lines} monitored lines "
                f"with decoy offset {decoy_offset}")
        return lay

    @property
    def spacing(self) -> int:
        return self.geometry.sets // self.lines

    def monitored_set(self, i: int) -> int:
        return i * self.spacing

    def addresses(self, i: int, hypothesis: str) -> dict[str, tuple[int, ...]]:
        g = self.geometry
        s = self.monitored_set(i)
        a = g.address(self.base_tag, s)
        decoy = g.address(self.base_tag, s + self.decoy_offset)
        aliases = tuple(g.address(self.base_tag + 1 + k, s) for k in range(g.ways))
        u = a if hypothesis == "A" else decoy
        return {"u": (u,), "a": (a,), "a_alias": aliases,
                "d": (g.address(self.base_tag, s + self.d_offset),)}

    def line_sets(self, i: int) -> frozenset:
        s = self.monitored_set(i)
        return frozenset((s, s + self.d_offset, s + self.decoy_offset))


class Act(NamedTuple):
    """One abstract action: ``kind`` issued by ``core`` on ``addrs`` on behalf of ``actor``."""

    kind: str       # read | write | flush | evict | flush_all | evict_all
    core: int
    addrs: tuple
    actor: int
    purpose: str    # access | invalidate | whole


@dataclass(frozen=True)
class ExecutionPlan:
    triple: VulnTriple
    config: TestConfig
    target: str
    hypothesis: str
    roles: Roles
    monitored: tuple
    steps: tuple          # 3 x lines x tuple[Act]
    line_sets: tuple = field(default=())

    def describe(self, line: int = 0) -> list[tuple[int, str, int, tuple]]:
        """(step, kind, core, addrs) rows for one monitored line; step 3 is the timed one."""
        return [(k + 1, act.kind, act.core, act.addrs)
                for k in range(3) for act in self.steps[k][line]]


def _step_actions(st: StepState, real: str, r: Roles, addrs: dict, line_addrs: tuple) -> tuple:
    if st.is_wildcard:
        return ()
    core = r.attacker if st.actor is Actor.ATTACKER else r.victim
    if st.whole_cache:
        kind = "flush_all" if real == NATURAL else "evict_all"
        return (Act(kind, core, line_addrs, core, "whole"),)
    xs = addrs[st.address_class]
    if st.action is Action.ACCESS:
        return (Act("read" if real == NATURAL else "write", core, xs, core, "access"),)
    if real == NATURAL:
        return (Act("flush", core, xs, core, "invalidate"),)
    if r.helper is not None:
        return (Act("write", r.helper, xs, core, "invalidate"),)
    return (Act("evict", core, xs, core, "invalidate"),)


def compile_plan(t: VulnTriple, config: TestConfig, target: TargetSpec, hypothesis: str = "A",
                 layout: Layout | None = None, dry_run: bool = True) -> ExecutionPlan:
    """Concrete plan for one hypothesis; a dry run checks every step's effect."""
    if hypothesis not in ("A", "B"):
        raise InputError("hypothesis must be 'A' or 'B'")
    if not validity(config, t, target):
        raise ConfigurationError(f"{config.label} invalid for {t} on {target.name}: "
                                 + invalid_reason(config, t, target))
    layout = layout or Layout.for_target(target)
    r = roles(config, target)
    steps = []
    for st, real in zip(t.steps, config.realization):
        per_line = []
        for i in range(layout.lines):
            addrs = layout.addresses(i, hypothesis)
            # whole-cache targets cover both hypotheses so they never depend on the secret
            line_addrs = tuple(sorted({x for h in ("A", "B")
                                       for xs in layout.addresses(i, h).values() for x in xs}))
            per_line.append(_step_actions(st, real, r, addrs, line_addrs))
        steps.append(tuple(per_line))
    plan = ExecutionPlan(
        t, config, target.name, hypothesis, r,
        tuple(layout.addresses(i, "A")["a"][0] for i in range(layout.lines)), tuple(steps),
        tuple(layout.line_sets(i) for i in range(layout.lines)))
    if dry_run:
        execute(plan, SimMachine(target, 0), check=True)
    return plan


# -- execution --------------------------------------------------------------------

def _l1_blocks_in(machine: SimMachine, core: int, sets: frozenset) -> list[int]:
    l1 = machine.l1[core]
    return [l1.geometry.address(line.tag, s) for s, _, line in l1.valid_lines() if s in sets]


def _run_act(machine: SimMachine, act: Act, sets: frozenset, check: bool) -> int:
    before = machine.cycles
    kind = act.kind
    if kind in ("read", "write", "flush"):
        op = OpKind(kind)
        for x in act.addrs:
            machine.run(MemOp(op, act.core, x))
    elif kind == "evict":
        for x in act.addrs:
            if not evict(machine, act.core, x, 1, max_attempts=16).evicted:
                raise PlanError(f"could not evict {x:#x} from core {act.core}'s L1")
    elif kind == "flush_all":
        for x in _l1_blocks_in(machine, act.core, sets):
            machine.run(MemOp(OpKind.FLUSH, act.core, x))
    elif kind == "evict_all":
        for x in act.addrs:
            if machine.l1[act.core].lookup(x) is not None:
                if not evict(machine, act.core, x, 1, max_attempts=16).evicted:
                    raise PlanError(f"could not evict {x:#x} from core {act.core}'s L1")
    else:
        raise PlanError(f"unknown action {kind!r}")
    if check:
        _postcondition(machine, act, sets)
    return machine.cycles - before


def _postcondition(machine: SimMachine, act: Act, sets: frozenset) -> None:
    l1 = machine.l1[act.actor]
    if act.purpose == "access":
        if l1.lookup(act.addrs[-1]) is None:
            raise PlanError(f"access left {act.addrs[-1]:#x} outside core {act.actor}'s L1")
    elif act.purpose == "invalidate":
        for x in act.addrs:
            if act.kind == "flush":
                if not machine.snapshot_placement(x).dram_only:
                    raise PlanError(f"flush left {x:#x} cached")
            elif l1.lookup(x) is not None:
                raise PlanError(f"invalidation left {x:#x} in core {act.actor}'s L1")
    else:
        left = [x for x in act.addrs if l1.lookup(x) is not None]
        if act.kind == "flush_all":
            left = _l1_blocks_in(machine, act.actor, sets)
        if left:
            raise PlanError(f"whole-cache invalidation left {len(left)} block(s) in core {act.actor}'s L1")


def execute(plan: ExecutionPlan, machine: SimMachine, check: bool = False) -> list[int]:
    """Run steps 1..3 over all monitored lines; return step-3 cycles per line."""
    timed = []
    for k in range(3):
        for i, acts in enumerate(plan.steps[k]):
            sets = plan.line_sets[i] if plan.line_sets else frozenset()
            c = 0
            for act in acts:
                c += _run_act(machine, act, sets, check)
            if k == 2:
                timed.append(c)
    return timed


def run_plan(plan: ExecutionPlan, target: TargetSpec, trials: int) -> tuple[Histogram, int]:
    """Pooled step-3 histogram over ``trials`` fresh machines and all lines.

    Returns the histogram and the number of L2 victim choices made. The
    first trial is checked step by step. When it made no random choice and
    jitter is off, the remaining trials would replay it exactly and are
    not simulated.
    """
    m0 = SimMachine(target, 0)
    samples = execute(plan, m0, check=True)
    l2 = m0.replacement_count(2) if target.shared_levels else 0
    if target.latency.jitter == 0 and random_choices(m0) == 0:
        return Histogram(Counter(samples)).scaled(trials), l2 * trials
    counts = Counter(samples)
    for trial in range(1, trials):
        m = SimMachine(target, trial)
        counts.update(execute(plan, m))
        if target.shared_levels:
            l2 += m.replacement_count(2)
    return Histogram(counts), l2


def decide_detection(hist_a: Histogram, hist_b: Histogram, delta_min: int = DEFAULT_DELTA_MIN) -> bool:
    """Modes at least ``delta_min`` apart and disjoint 95% intervals."""
    if not hist_a.trials or not hist_b.trials:
        raise InputError("decide_detection needs two non-empty histograms")
    if abs(hist_a.mode - hist_b.mode) < delta_min:
        return False
    (alo, ahi), (blo, bhi) = hist_a.p95, hist_b.p95
    return ahi < blo or bhi < alo


# -- detection matrix ----------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    status: str
    delta: int | None = None
    mode_a: int | None = None
    mode_b: int | None = None
    reason: str = ""
    l2_replacements: int = 0


@dataclass
class DetectionMatrix:
    target: str
    cells: dict = field(default_factory=dict)    # (triple id, config label) -> Cell
    trials: int = 0
    delta_min: int = DEFAULT_DELTA_MIN
    manifest: dict | None = None

    def triples(self) -> list[int]:
        return sorted({tid for tid, _ in self.cells})

    def labels(self) -> list[str]:
        present = {lab for _, lab in self.cells}
        return [lab for lab in CONFIG_LABELS if lab in present] + sorted(present - set(CONFIG_LABELS))

    def status(self, tid: int, label: str) -> str:
        return self.cells[(tid, label)].status

    def valid_keys(self) -> set:
        return {k for k, c in self.cells.items() if c.status != INVALID}

    def detected_keys(self) -> set:
        return {k for k, c in self.cells.items() if c.status == DETECTED}

    def counts(self) -> dict[str, int]:
        c = Counter(cell.status for cell in self.cells.values())
        return {s: c.get(s, 0) for s in STATUSES}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["triple_id", "config_label", "status", "delta", "mode_a", "mode_b"])
        for (tid, lab) in sorted(self.cells, key=lambda k: (k[0], CONFIG_LABELS.index(k[1])
                                                             if k[1] in CONFIG_LABELS else 99)):
            c = self.cells[(tid, lab)]
            w.writerow([tid, lab, c.status, "" if c.delta is None else c.delta,
                        "" if c.mode_a is None else c.mode_a, "" if c.mode_b is None else c.mode_b])
        return buf.getvalue()

    def to_dict(self) -> dict:
        doc = {
            "target": self.target,
            "trials": self.trials,
            "delta_min": self.delta_min,
            "configs": self.labels(),
            "triples": self.triples(),
            "summary": self.counts(),
            "cells": [
                {"triple_id": tid, "config_label": lab, "status": c.status, "delta": c.delta,
                 "mode_a": c.mode_a, "mode_b": c.mode_b, "reason": c.reason,
                 "l2_replacements": c.l2_replacements}
                for (tid, lab), c in sorted(self.cells.items(),
                                            key=lambda kv: (kv[0][0], self._order(kv[0][1])))
            ],
        }
        if self.manifest is not None:
            doc["manifest"] = self.manifest
        return doc

    @staticmethod
    def _order(label: str) -> int:
        return CONFIG_LABELS.index(label) if label in CONFIG_LABELS else len(CONFIG_LABELS)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectionMatrix":
        try:
            cells = {}
            for row in doc["cells"]:
                if row["status"] not in STATUSES:
                    raise InputError(f"unknown cell status {row['status']!r}")
                cells[(int(row["triple_id"]), row["config_label"])] = Cell(
                    row["status"], row.get("delta"), row.get("mode_a"), row.get("mode_b"),
                    row.get("reason", ""), row.get("l2_replacements", 0))
            return cls(doc["target"], cells, doc.get("trials", 0),
                       doc.get("delta_min", DEFAULT_DELTA_MIN), doc.get("manifest"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed detection matrix: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DetectionMatrix":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"detection matrix is not JSON: {exc}") from exc


def _bench_triple(args) -> list[tuple[tuple[int, str], Cell]]:
    target, tid, configs, trials, delta_min, decoy_offset = args
    t = unrank(tid)
    out = []
    for cfg in configs:
        key = (tid, cfg.label)
        why = invalid_reason(cfg, t, target)
        if why:
            out.append((key, Cell(INVALID, reason=why)))
            continue
        if not t.involves_u:
            out.append((key, Cell(NOT_DETECTED, reason="secret-independent")))
            continue
        try:
            v: Verdict = classify(t, target, cfg, trials, delta_min, decoy_offset)
        except PlanError as exc:
            out.append((key, Cell(NOT_DETECTED, reason=f"plan error: {exc}")))
            continue
        out.append((key, Cell(DETECTED if v.distinguishable else NOT_DETECTED, v.delta,
                              v.mode_a, v.mode_b, v.reason, v.l2_replacements)))
    return out


def run_benchmark(target: TargetSpec, triples: Iterable[int | VulnTriple], trials: int = MIN_TRIALS,
                  delta_min: int = DEFAULT_DELTA_MIN, jobs: int = 1,
                  configs: Iterable[TestConfig] | None = None,
                  decoy_offset: int = 2) -> DetectionMatrix:
    """Fill every (triple, configuration) cell for ``target``."""
    if trials < MIN_TRIALS:
        raise InputError(f"trials must be >= {MIN_TRIALS}")
    ids = []
    for t in triples:
        tid = t.id if isinstance(t, VulnTriple) else int(t)
        if not 0 <= tid < NTRIPLES:
            raise InputError(f"unknown triple id {tid}")
        ids.append(tid)
    ids = sorted(set(ids))
    configs = list(configs) if configs is not None else list(ALL_CONFIGS)
    jobs_args = [(target, tid, configs, trials, delta_min, decoy_offset) for tid in ids]
    cells = {}
    if jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_bench_triple, jobs_args, chunksize=max(1, len(ids) // (4 * jobs))):
                cells.update(part)
    else:
        for a in jobs_args:
            cells.update(_bench_triple(a))
    return DetectionMatrix(target.name, cells, trials, delta_min)
