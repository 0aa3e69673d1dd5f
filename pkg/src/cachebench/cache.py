"""Set-associative cache level with pluggable replacement policies.

A :class:`CacheLevel` only knows about tags, ways and replacement
bookkeeping. Coherence and hierarchy routing live in
:mod:`cachebench.coherence`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .errors import GeometryError

MASK64 = (1 << 64) - 1

# Coherence states. Shared (L2/L3) levels only use M (dirty) and E (clean).
M, O, E, S, I = "M", "O", "E", "S", "I"
DIRTY_STATES = frozenset((M, O))


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed. Order matters."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = splitmix64(h ^ (int(p) & MASK64))
    return h


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


class Policy(str, enum.Enum):
    LRU = "LRU"
    TREE_PLRU = "TreePLRU"
    FIFO = "FIFO"
    RANDOM = "Random"

    @classmethod
    def parse(cls, name: str) -> "Policy":
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {"lru": cls.LRU, "treeplru": cls.TREE_PLRU, "plru": cls.TREE_PLRU,
                   "fifo": cls.FIFO, "random": cls.RANDOM, "rand": cls.RANDOM}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown replacement policy {name!r}") from None

    @property
    def deterministic(self) -> bool:
        return self is not Policy.RANDOM


@dataclass(frozen=True)
class CacheGeometry:
    capacity_bytes: int
    block_bytes: int
    ways: int

    def __post_init__(self):
        for name in ("capacity_bytes", "block_bytes", "ways"):
            value = getattr(self, name)
            if not isinstance(value, int) or not _is_pow2(value):
                raise GeometryError(f"{name} must be a power of two, got {value!r}")
        if self.capacity_bytes % self.block_bytes:
            raise GeometryError("capacity_bytes is not a multiple of block_bytes")
        if not 1 <= self.ways <= self.blocks:
            raise GeometryError(f"ways must be in [1, {self.blocks}], got {self.ways}")

    @property
    def blocks(self) -> int:
        return self.capacity_bytes // self.block_bytes

    @property
    def sets(self) -> int:
        return self.blocks // self.ways

    @property
    def set_stride(self) -> int:
        """Distance in bytes between two addresses mapping to the same set."""
        return self.sets * self.block_bytes

    def set_index(self, addr: int) -> int:
        return (addr // self.block_bytes) % self.sets

    def tag(self, addr: int) -> int:
        return addr // self.set_stride

    def address(self, tag: int, set_index: int) -> int:
        """Block address reconstructed from (tag, set)."""
        return tag * self.set_stride + set_index * self.block_bytes


def set_index(addr: int, geometry: CacheGeometry) -> int:
    if addr < 0:
        raise ValueError("addresses are non-negative")
    return geometry.set_index(addr)


@dataclass(frozen=True)
class ReplacementPolicy:
    kind: Policy
    seed: int = 0


@dataclass(slots=True)
class BlockLine:
    valid: bool = False
    tag: int = 0
    dirty: bool = False
    state: str = I
    value: int = 0
    # FIFO insertion stamp or LRU recency stamp; unused by PLRU/Random
    stamp: int = 0
    # shared levels: cores whose L1 evictions placed the block here
    cores: frozenset = frozenset()

    def clear(self) -> None:
        self.valid = False
        self.tag = 0
        self.dirty = False
        self.state = I
        self.value = 0
        self.cores = frozenset()


class Evicted(NamedTuple):
    """Contents of a line removed by replacement.

    ``writeback`` is true when the line was dirty, i.e. the caller must
    push its data further down the hierarchy.
    """

    addr: int
    dirty: bool
    value: int
    state: str
    cores: frozenset

    @property
    def writeback(self) -> bool:
        return self.dirty


class CacheLevel:
    """One cache (one per core for private levels, one overall for shared ones).

    Sets are materialised lazily so that building a machine with a 2MB L2
    costs nothing until the sets are touched.
    """

    def __init__(self, geometry: CacheGeometry, policy: ReplacementPolicy,
                 level: int = 1, shared: bool = False, inclusive: bool = False):
        self.geometry = geometry
        self.policy = policy
        self.level = level
        self.shared = shared
        self.inclusive = inclusive
        self._sets: dict[int, list[BlockLine]] = {}
        self._plru: dict[int, list[int]] = {}
        self._rand_ctr: dict[int, int] = {}
        self._clock = 0
        self.victim_choices = 0

    def __repr__(self):
        g = self.geometry
        return (f"CacheLevel(L{self.level}, {g.capacity_bytes}B, {g.ways}-way, "
                f"{self.policy.kind.value}, shared={self.shared})")

    # -- structure -----------------------------------------------------

    def ways_of(self, s: int) -> list[BlockLine]:
        lines = self._sets.get(s)
        if lines is None:
            lines = [BlockLine() for _ in range(self.geometry.ways)]
            self._sets[s] = lines
        return lines

    def valid_lines(self) -> Iterator[tuple[int, int, BlockLine]]:
        for s in sorted(self._sets):
            for w, line in enumerate(self._sets[s]):
                if line.valid:
                    yield s, w, line

    def address_of(self, s: int, way: int) -> int:
        return self.geometry.address(self._sets[s][way].tag, s)

    # -- queries -------------------------------------------------------

    def lookup(self, addr: int) -> int | None:
        """Way index holding ``addr``, or None on a miss. Never mutates."""
        g = self.geometry
        lines = self._sets.get(g.set_index(addr))
        if lines is None:
            return None
        tag = g.tag(addr)
        for w, line in enumerate(lines):
            if line.valid and line.tag == tag:
                return w
        return None

    def find(self, addr: int) -> BlockLine | None:
        g = self.geometry
        lines = self._sets.get(g.set_index(addr))
        if lines is None:
            return None
        tag = g.tag(addr)
        for line in lines:
            if line.valid and line.tag == tag:
                return line
        return None

    # -- replacement ---------------------------------------------------

    def choose_victim(self, s: int) -> int:
        """Way to replace in a full set."""
        self.victim_choices += 1
        kind = self.policy.kind
        lines = self.ways_of(s)
        n = len(lines)
        if kind is Policy.LRU or kind is Policy.FIFO:
            best = 0
            for w in range(1, n):
                if lines[w].stamp < lines[best].stamp:
                    best = w
            return best
        if kind is Policy.TREE_PLRU:
            bits = self._plru.get(s)
            node = 0
            while node < n - 1:
                node = 2 * node + 1 if not bits or bits[node] == 0 else 2 * node + 2
            return node - (n - 1)
        ctr = self._rand_ctr.get(s, 0)
        self._rand_ctr[s] = ctr + 1
        return mix_seed(self.policy.seed, s, ctr) % n

    def _slot(self, s: int) -> int:
        for w, line in enumerate(self.ways_of(s)):
            if not line.valid:
                return w
        return self.choose_victim(s)

    def _note_use(self, s: int, way: int, filled: bool) -> None:
        kind = self.policy.kind
        if kind is Policy.LRU or (kind is Policy.FIFO and filled):
            self._clock += 1
            self._sets[s][way].stamp = self._clock
        elif kind is Policy.TREE_PLRU:
            n = self.geometry.ways
            if n == 1:
                return
            bits = self._plru.setdefault(s, [0] * (n - 1))
            node = way + n - 1
            while node:
                parent = (node - 1) // 2
                # point the parent away from the child just used
                bits[parent] = 1 if node == 2 * parent + 1 else 0
                node = parent

    # -- mutations -----------------------------------------------------

    def touch(self, s: int, way: int) -> None:
        self._note_use(s, way, filled=False)

    def evict(self, s: int, way: int) -> Evicted | None:
        line = self.ways_of(s)[way]
        if not line.valid:
            return None
        out = Evicted(self.geometry.address(line.tag, s), line.dirty, line.value,
                      line.state, line.cores)
        line.clear()
        return out

    def fill(self, s: int, way: int, tag: int, *, state: str = E, dirty: bool = False,
             value: int = 0, cores: frozenset = frozenset()) -> Evicted | None:
        """Install a block in ``way``; returns the displaced line, if any."""
        out = self.evict(s, way)
        line = self._sets[s][way]
        line.valid = True
        line.tag = tag
        line.state = state
        line.dirty = dirty
        line.value = value
        line.cores = cores
        self._note_use(s, way, filled=True)
        return out

    def mark_dirty(self, s: int, way: int, state: str = M) -> None:
        line = self.ways_of(s)[way]
        line.dirty = True
        line.state = state

    def invalidate_line(self, s: int, way: int) -> None:
        line = self.ways_of(s)[way]
        if line.valid:
            line.clear()

    def invalidate(self, addr: int) -> BlockLine | None:
        """Drop ``addr`` if present; returns a detached copy of the old line."""
        g = self.geometry
        s = g.set_index(addr)
        w = self.lookup(addr)
        if w is None:
            return None
        line = self._sets[s][w]
        old = BlockLine(True, line.tag, line.dirty, line.state, line.value, line.stamp,
                        line.cores)
        line.clear()
        return old

    def insert(self, addr: int, **kw) -> Evicted | None:
        """Allocate ``addr`` (first invalid way, else the policy's victim)."""
        g = self.geometry
        s = g.set_index(addr)
        return self.fill(s, self._slot(s), g.tag(addr), **kw)

    def access(self, addr: int) -> tuple[bool, Evicted | None]:
        """Stand-alone read access: touch on hit, allocate on miss."""
        g = self.geometry
        s = g.set_index(addr)
        w = self.lookup(addr)
        if w is not None:
            self.touch(s, w)
            return True, None
        return False, self.insert(addr)

    def check(self) -> None:
        for s, lines in self._sets.items():
            tags = [ln.tag for ln in lines if ln.valid]
            assert len(tags) == len(set(tags)), f"duplicate tag in set {s} of {self!r}"
            for ln in lines:
                assert ln.valid == (ln.state != I)
                assert not ln.dirty or ln.state in DIRTY_STATES


__all__ = [
    "BlockLine", "CacheGeometry", "CacheLevel", "Evicted", "Policy",
    "ReplacementPolicy", "mix_seed", "set_index", "splitmix64",
]
