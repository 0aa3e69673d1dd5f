"""Multicore hierarchy engine: private L1s, shared L2/L3, DRAM.

Every memory operation goes through :meth:`SimMachine.apply` and returns an
:class:`~cachebench.latency.EventTrace` describing what the hierarchy did.
Costs are attached later by the timing layer.

Hierarchy model
---------------
* L1s are private and kept coherent with MESI (directory targets) or
  MOESI (snooping targets; a dirty supplier moves to O instead of writing
  back). Remote L1 hits are served cache-to-cache.
* Shared levels are non-inclusive by default and behave as victim caches:
  DRAM fills go straight to L1, L1 evictions (clean or dirty) land in L2,
  L2 evictions land in L3. A hit in a shared level copies the block up and
  leaves the shared copy in place. Writes drop shared copies, which the
  new L1 owner supersedes.
* Shared lines remember which cores' evictions placed them there. This is
  what distinguishes ``L2_CLEAN`` from ``REMOTE_L2_CLEAN`` on a physically
  shared L2.
* Each block carries one data word so that a functional oracle can check
  coherence; timing never looks at values.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import NamedTuple

from .cache import (DIRTY_STATES, CacheLevel, E, I, M, O, ReplacementPolicy, S,
                    mix_seed)
from .errors import FeatureUnavailable, InvariantViolation
from .latency import (C2C, DIRECTORY_LOOKUP, DRAM_FETCH, FLUSH_LINE, HIT_EVENT,
                      INVALIDATION, L1_HIT, LOCAL, REMOTE, REMOTE_SNOOP, WRITEBACK,
                      EventTrace, cost)
from .targets import DIRECTORY, SNOOPING, TargetSpec


class OpKind(str, enum.Enum):
    READ = "read"
    WRITE = "write"
    FLUSH = "flush"


class MemOp(NamedTuple):
    kind: OpKind
    core: int
    addr: int


CoherenceKind = (DIRECTORY, SNOOPING)


@dataclass(slots=True)
class DirEntry:
    sharers: set = field(default_factory=set)
    owner: int | None = None


@dataclass(frozen=True)
class Placement:
    """Where one block lives, per core L1 and per shared level."""

    addr: int
    l1: tuple          # per core: None | "clean" | "dirty"
    l1_states: tuple   # per core coherence state
    shared: tuple      # per shared level: None | (level, dirty, cores)

    @property
    def dram_only(self) -> bool:
        return all(x is None for x in self.l1) and all(x is None for x in self.shared)

    def locations(self, local: int = 0, remote: int = 1) -> frozenset:
        """(level, locality, dirty) triples as seen from a local/remote core pair.

        L1 copies of other cores and shared lines placed by neither core are
        reported with locality ``"other"``.
        """
        out = set()
        for core, st in enumerate(self.l1):
            if st is None:
                continue
            loc = LOCAL if core == local else REMOTE if core == remote else "other"
            out.add((1, loc, st == "dirty"))
        for entry in self.shared:
            if entry is None:
                continue
            level, dirty, cores = entry
            placed = False
            if local in cores:
                out.add((level, LOCAL, dirty))
                placed = True
            if remote in cores:
                out.add((level, REMOTE, dirty))
                placed = True
            if not placed:
                out.add((level, "other", dirty))
        return frozenset(out)


class SimMachine:
    """Simulated multicore cache hierarchy built from a :class:`TargetSpec`."""

    def __init__(self, spec: TargetSpec, trial: int = 0):
        self.spec = spec
        self.trial = trial
        self.ncores = spec.cores
        self.directory_based = spec.coherence == DIRECTORY
        self.flush_enabled = spec.flush_user_mode
        self.block_bytes = spec.block_bytes
        base = mix_seed(spec.seed, trial)
        l1 = spec.l1
        self.l1 = [
            CacheLevel(l1.geometry, ReplacementPolicy(l1.policy, mix_seed(l1.policy_seed, base, 1, c)),
                       level=1)
            for c in range(spec.cores)
        ]
        self.shared = [
            CacheLevel(lv.geometry, ReplacementPolicy(lv.policy, mix_seed(lv.policy_seed, base, lv.level)),
                       level=lv.level, shared=True, inclusive=lv.inclusive)
            for lv in spec.shared_levels
        ]
        self.memory: dict[int, int] = {}
        self.directory: dict[int, DirEntry] = {}
        self.rng = random.Random(mix_seed(base, 0x6A17))
        self.cycles = 0
        self._write_serial = 0

    def __repr__(self):
        return f"SimMachine({self.spec.name!r}, trial={self.trial})"

    @property
    def deterministic(self) -> bool:
        return self.spec.deterministic

    def level(self, n: int, core: int = 0) -> CacheLevel:
        if n == 1:
            return self.l1[core]
        for lvl in self.shared:
            if lvl.level == n:
                return lvl
        raise KeyError(f"{self.spec.name} has no L{n}")

    def block(self, addr: int) -> int:
        return addr - addr % self.block_bytes

    def replacement_count(self, level: int) -> int:
        """Number of victim choices made so far at ``level`` (all cores for L1)."""
        if level == 1:
            return sum(c.victim_choices for c in self.l1)
        return self.level(level).victim_choices

    # -- costing -------------------------------------------------------

    def charge(self, trace: EventTrace) -> int:
        cycles = cost(trace, self.spec.latency, self.rng)
        self.cycles += cycles
        return cycles

    def run(self, op: MemOp) -> int:
        """Apply ``op`` and return its cycle cost."""
        return self.charge(self.apply(op))

    # -- operations ----------------------------------------------------

    def apply(self, op: MemOp) -> EventTrace:
        kind = OpKind(op.kind)
        if not 0 <= op.core < self.ncores:
            raise ValueError(f"core {op.core} out of range for {self.spec.name}")
        if kind is OpKind.READ:
            return self.read(op.core, op.addr)
        if kind is OpKind.WRITE:
            return self.write(op.core, op.addr)
        return self.flush(op.core, op.addr)

    def read(self, core: int, addr: int) -> EventTrace:
        blk = self.block(addr)
        tr = EventTrace()
        l1 = self.l1[core]
        s = l1.geometry.set_index(blk)
        w = l1.lookup(blk)
        if w is not None:
            l1.touch(s, w)
            tr.add(L1_HIT, 1, LOCAL, blk)
            tr.value = l1.ways_of(s)[w].value
            return tr

        holders = self._remote_holders(core, blk)
        if holders:
            tr.add(DIRECTORY_LOOKUP if self.directory_based else REMOTE_SNOOP, 1, REMOTE, blk)
            value = holders[0][1].value
            for r, line in holders:
                if line.state == M:
                    if self.directory_based:
                        # MESI has no owned state: the supplier cleans itself
                        line.state = S
                        line.dirty = False
                        self._dir_downgrade(r, blk)
                        self._push_down(0, blk, True, line.value, frozenset((r,)), tr)
                    else:
                        line.state = O
                elif line.state == E:
                    line.state = S
                    self._dir_downgrade(r, blk)
            tr.add(C2C, 1, REMOTE, blk)
            self._install_l1(core, blk, S, False, value, tr)
            tr.value = value
            return tr

        src = len(self.shared)
        value = None
        for k, lvl in enumerate(self.shared):
            sw = lvl.lookup(blk)
            if sw is not None:
                ls = lvl.geometry.set_index(blk)
                lvl.touch(ls, sw)
                tr.add(HIT_EVENT[lvl.level], lvl.level, None, blk)
                value = lvl.ways_of(ls)[sw].value
                src = k
                break
        else:
            tr.add(DRAM_FETCH, 0, None, blk)
            value = self.memory.get(blk, 0)
        self._install_l1(core, blk, E, False, value, tr)
        self._fill_inclusive(core, blk, src, value, tr)
        tr.value = value
        return tr

    def write(self, core: int, addr: int) -> EventTrace:
        blk = self.block(addr)
        tr = EventTrace()
        self._write_serial += 1
        value = self._write_serial
        l1 = self.l1[core]
        s = l1.geometry.set_index(blk)
        w = l1.lookup(blk)
        if w is not None:
            line = l1.ways_of(s)[w]
            l1.touch(s, w)
            tr.add(L1_HIT, 1, LOCAL, blk)
            if line.state in (S, O):
                if self.directory_based:
                    tr.add(DIRECTORY_LOOKUP, 0, None, blk)
                tr.add(INVALIDATION, 1, REMOTE, blk)
                for r, _ in self._remote_holders(core, blk):
                    self._drop_l1(r, blk)
            line.state = M
            line.dirty = True
            line.value = value
            self._dir_set(core, blk, M)
            self._drop_shared_copies(blk)
            tr.value = value
            return tr

        if self.directory_based:
            tr.add(DIRECTORY_LOOKUP, 0, None, blk)
        holders = self._remote_holders(core, blk)
        src = len(self.shared)
        old_value = 0
        if holders:
            if not self.directory_based:
                tr.add(REMOTE_SNOOP, 1, REMOTE, blk)
            tr.add(INVALIDATION, 1, REMOTE, blk)
            tr.add(C2C, 1, REMOTE, blk)
            old_value = holders[0][1].value
            for r, _ in holders:
                self._drop_l1(r, blk)
            src = -1
        else:
            for k, lvl in enumerate(self.shared):
                sw = lvl.lookup(blk)
                if sw is not None:
                    ls = lvl.geometry.set_index(blk)
                    lvl.touch(ls, sw)
                    tr.add(HIT_EVENT[lvl.level], lvl.level, None, blk)
                    old_value = lvl.ways_of(ls)[sw].value
                    src = k
                    break
            else:
                tr.add(DRAM_FETCH, 0, None, blk)
                old_value = self.memory.get(blk, 0)
        self._drop_shared_copies(blk)
        self._install_l1(core, blk, M, True, value, tr)
        if src >= 0:
            self._fill_inclusive(core, blk, src, old_value, tr)
        tr.value = value
        return tr

    def flush(self, core: int, addr: int) -> EventTrace:
        if not self.flush_enabled:
            raise FeatureUnavailable(f"{self.spec.name} has no user-mode flush")
        blk = self.block(addr)
        tr = EventTrace()
        tr.add(FLUSH_LINE, 0, None, blk)
        copies = []      # (kind, ref, line) from the top of the hierarchy down
        for c in [core] + [r for r in range(self.ncores) if r != core]:
            line = self.l1[c].find(blk)
            if line is not None:
                copies.append((1, c, line))
        for lvl in self.shared:
            line = lvl.find(blk)
            if line is not None:
                copies.append((lvl.level, None, line))
        if any(kind == 1 and c != core for kind, c, _ in copies):
            tr.add(DIRECTORY_LOOKUP if self.directory_based else REMOTE_SNOOP, 1, REMOTE, blk)
        if any(line.dirty for _, _, line in copies):
            # upper copies are never older than lower ones
            self.memory[blk] = copies[0][2].value
            tr.add(WRITEBACK, 0, None, blk)
        for kind, c, _ in copies:
            if kind == 1:
                tr.add(FLUSH_LINE, 1, LOCAL if c == core else REMOTE, blk)
                self._drop_l1(c, blk)
            else:
                tr.add(FLUSH_LINE, kind, None, blk)
                self.level(kind).invalidate(blk)
        return tr

    # -- helpers -------------------------------------------------------

    def _remote_holders(self, core: int, blk: int):
        out = []
        for r in range(self.ncores):
            if r == core:
                continue
            line = self.l1[r].find(blk)
            if line is not None:
                out.append((r, line))
        return out

    def _install_l1(self, core: int, blk: int, state: str, dirty: bool, value: int,
                    tr: EventTrace) -> None:
        l1 = self.l1[core]
        g = l1.geometry
        s = g.set_index(blk)
        way = l1._slot(s)
        old = l1.evict(s, way)
        if old is not None:
            self._dir_remove(core, old.addr)
            self._push_down(0, old.addr, old.dirty, old.value, frozenset((core,)), tr)
        l1.fill(s, way, g.tag(blk), state=state, dirty=dirty, value=value)
        self._dir_set(core, blk, state)

    def _drop_l1(self, core: int, blk: int) -> None:
        if self.l1[core].invalidate(blk) is not None:
            self._dir_remove(core, blk)

    def _drop_shared_copies(self, blk: int) -> None:
        for lvl in self.shared:
            if not lvl.inclusive:
                lvl.invalidate(blk)

    def _push_down(self, k: int, blk: int, dirty: bool, value: int, cores: frozenset,
                   tr: EventTrace) -> None:
        """Hand a block evicted from above to shared level ``k`` (or DRAM)."""
        if k >= len(self.shared):
            if dirty:
                self.memory[blk] = value
                tr.add(WRITEBACK, 0, None, blk)
            return
        lvl = self.shared[k]
        if dirty:
            tr.add(WRITEBACK, lvl.level, None, blk)
        s = lvl.geometry.set_index(blk)
        w = lvl.lookup(blk)
        if w is not None:
            line = lvl.ways_of(s)[w]
            lvl.touch(s, w)
            line.value = value
            if dirty:
                line.dirty = True
                line.state = M
            line.cores = line.cores | cores
            return
        old = lvl.insert(blk, state=M if dirty else E, dirty=dirty, value=value, cores=cores)
        if old is not None:
            self._shared_evicted(k, old, tr)

    def _shared_evicted(self, k: int, old, tr: EventTrace) -> None:
        lvl = self.shared[k]
        dirty, value = old.dirty, old.value
        if lvl.inclusive:
            # back-invalidate everything above; upper copies are fresher
            for j in reversed(range(k)):
                line = self.shared[j].invalidate(old.addr)
                if line is not None:
                    value = line.value
                    dirty = dirty or line.dirty
            for c in range(self.ncores):
                line = self.l1[c].invalidate(old.addr)
                if line is not None:
                    self._dir_remove(c, old.addr)
                    tr.add(INVALIDATION, 1, None, old.addr)
                    value = line.value
                    dirty = dirty or line.dirty
        self._push_down(k + 1, old.addr, dirty, value, old.cores, tr)

    def _fill_inclusive(self, core: int, blk: int, src: int, value: int, tr: EventTrace) -> None:
        for k in range(min(src, len(self.shared))):
            lvl = self.shared[k]
            if lvl.inclusive and lvl.lookup(blk) is None:
                old = lvl.insert(blk, state=E, dirty=False, value=value,
                                 cores=frozenset((core,)))
                if old is not None:
                    self._shared_evicted(k, old, tr)

    # -- directory bookkeeping ----------------------------------------

    def _dir_set(self, core: int, blk: int, state: str) -> None:
        if not self.directory_based:
            return
        entry = self.directory.get(blk)
        if entry is None:
            entry = self.directory[blk] = DirEntry()
        entry.sharers.add(core)
        if state in (M, E):
            entry.owner = core
        elif entry.owner == core:
            entry.owner = None

    def _dir_downgrade(self, core: int, blk: int) -> None:
        if self.directory_based:
            entry = self.directory[blk]
            if entry.owner == core:
                entry.owner = None

    def _dir_remove(self, core: int, blk: int) -> None:
        if not self.directory_based:
            return
        entry = self.directory.get(blk)
        if entry is None:
            return
        entry.sharers.discard(core)
        if entry.owner == core:
            entry.owner = None
        if not entry.sharers:
            del self.directory[blk]

    # -- inspection ----------------------------------------------------

    def snapshot_placement(self, addr: int) -> Placement:
        blk = self.block(addr)
        l1, states = [], []
        for c in range(self.ncores):
            line = self.l1[c].find(blk)
            if line is None:
                l1.append(None)
                states.append(I)
            else:
                l1.append("dirty" if line.dirty else "clean")
                states.append(line.state)
        shared = []
        for lvl in self.shared:
            line = lvl.find(blk)
            shared.append(None if line is None else (lvl.level, line.dirty, line.cores))
        return Placement(blk, tuple(l1), tuple(states), tuple(shared))

    def cached_blocks(self) -> set[int]:
        out = set()
        for lvl in self.l1 + self.shared:
            for s, _, line in lvl.valid_lines():
                out.add(lvl.geometry.address(line.tag, s))
        return out

    def check_invariants(self, blocks=None) -> None:
        """Raise InvariantViolation if coherence bookkeeping is inconsistent."""
        try:
            for lvl in self.l1 + self.shared:
                lvl.check()
        except AssertionError as exc:
            raise InvariantViolation(str(exc)) from exc
        if blocks is None:
            blocks = self.cached_blocks() | set(self.directory)
        for blk in blocks:
            lines = [(c, self.l1[c].find(blk)) for c in range(self.ncores)]
            lines = [(c, ln) for c, ln in lines if ln is not None]
            owners = [c for c, ln in lines if ln.state in (M, O, E)]
            if len(owners) > 1:
                raise InvariantViolation(f"block {blk:#x}: several owners {owners}")
            if any(ln.state in (M, E) for _, ln in lines) and len(lines) > 1:
                raise InvariantViolation(f"block {blk:#x}: exclusive copy is not alone")
            if self.directory_based:
                if any(ln.state == O for _, ln in lines):
                    raise InvariantViolation(f"block {blk:#x}: O state under MESI directory")
                sharers = {c for c, _ in lines}
                owner = next((c for c, ln in lines if ln.state in (M, E)), None)
                entry = self.directory.get(blk)
                got = (set(entry.sharers), entry.owner) if entry else (set(), None)
                if got != (sharers, owner):
                    raise InvariantViolation(
                        f"block {blk:#x}: directory {got} != caches {(sharers, owner)}")
            for k, lvl in enumerate(self.shared):
                if lvl.inclusive and lvl.lookup(blk) is None:
                    above = [c for c, _ in lines] + [
                        j for j in range(k) if self.shared[j].lookup(blk) is not None]
                    if above:
                        raise InvariantViolation(
                            f"block {blk:#x}: inclusive L{lvl.level} misses a copy held above")
            for _, ln in lines:
                if ln.dirty and ln.state not in DIRTY_STATES:
                    raise InvariantViolation(f"block {blk:#x}: dirty line in state {ln.state}")


def apply(machine: SimMachine, op: MemOp) -> EventTrace:
    return machine.apply(op)


def remote_invalidate_via_write(machine: SimMachine, attacker_core: int, addr: int) -> EventTrace:
    """Invalidate every other core's copy of ``addr`` by writing it from ``attacker_core``."""
    return machine.write(attacker_core, addr)


def snapshot_placement(machine: SimMachine, addr: int) -> Placement:
    return machine.snapshot_placement(addr)
