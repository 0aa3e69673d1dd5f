"""CTVS, success ratios and cross-target presence classes.

Only valid cells count. A cell is "shared" when its (triple, configuration)
key is valid on every compared target, "exclusive" otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .benchgen import DETECTED, INVALID, DetectionMatrix, parse_config
from .errors import InputError

PRESENT_ALL, ABSENT_ALL, MIXED = "present-in-all", "absent-from-all", "mixed"


@dataclass(frozen=True)
class Ratio:
    """A ratio kept with its numerator and denominator."""

    count: int
    total: int

    @property
    def value(self) -> float:
        return self.count / self.total

    def __float__(self):
        return self.value

    def to_dict(self) -> dict:
        return {"count": self.count, "total": self.total, "ratio": round(self.value, 6)}


def _require(matrix: DetectionMatrix):
    if not matrix.cells:
        raise InputError("empty detection matrix")


def detected_triples(matrix: DetectionMatrix) -> set[int]:
    return {tid for (tid, _), c in matrix.cells.items() if c.status == DETECTED}


def ctvs_ratio(matrix: DetectionMatrix) -> Ratio:
    _require(matrix)
    return Ratio(len(detected_triples(matrix)), len(matrix.triples()))


def ctvs(matrix: DetectionMatrix) -> float:
    """Fraction of evaluated triples with at least one Detected cell."""
    return ctvs_ratio(matrix).value


CellFilter = Callable[[int, str], bool]


def success_ratio_counts(matrix: DetectionMatrix, category_filter: CellFilter | None = None) -> Ratio:
    _require(matrix)
    keep = category_filter or (lambda tid, label: True)
    cells = [c for (tid, lab), c in matrix.cells.items()
             if c.status != INVALID and keep(tid, lab)]
    if not cells:
        raise InputError("category selects no valid cell")
    return Ratio(sum(c.status == DETECTED for c in cells), len(cells))


def success_ratio(matrix: DetectionMatrix, category_filter: CellFilter | None = None) -> float:
    return success_ratio_counts(matrix, category_filter).value


# Ready-made filters.
def schedule_is(schedule: str) -> CellFilter:
    return lambda tid, label: parse_config(label).schedule == schedule


def prefix_is(prefix: str) -> CellFilter:
    return lambda tid, label: label.startswith(prefix)


def in_keys(keys: set) -> CellFilter:
    return lambda tid, label: (tid, label) in keys


def not_in_keys(keys: set) -> CellFilter:
    return lambda tid, label: (tid, label) not in keys


def _check_same_triples(matrices: Mapping[str, DetectionMatrix]) -> list[int]:
    if not matrices:
        raise InputError("no matrices given")
    sets = {name: set(m.triples()) for name, m in matrices.items()}
    first = next(iter(sets.values()))
    for name, s in sets.items():
        if s != first:
            raise InputError(f"matrix for {name} covers a different triple set")
    if not first:
        raise InputError("empty detection matrix")
    return sorted(first)


def shared_keys(matrices: Mapping[str, DetectionMatrix]) -> set:
    """(triple, config) keys valid on every target."""
    keys = None
    for m in matrices.values():
        keys = m.valid_keys() if keys is None else keys & m.valid_keys()
    return keys or set()


@dataclass
class Presence:
    classes: dict[str, list[int]]
    shared_detected: list[int]     # triples detected under one same config label on every target
    total: int

    def ratio(self, cls: str) -> Ratio:
        return Ratio(len(self.classes[cls]), self.total)

    @property
    def shared_ratio(self) -> Ratio:
        return Ratio(len(self.shared_detected), self.total)


def presence_classes(matrices: Mapping[str, DetectionMatrix]) -> Presence:
    triples = _check_same_triples(matrices)
    detected = {name: detected_triples(m) for name, m in matrices.items()}
    classes = {PRESENT_ALL: [], ABSENT_ALL: [], MIXED: []}
    for tid in triples:
        hits = sum(tid in d for d in detected.values())
        if hits == len(detected):
            classes[PRESENT_ALL].append(tid)
        elif hits == 0:
            classes[ABSENT_ALL].append(tid)
        else:
            classes[MIXED].append(tid)
    common = None
    for m in matrices.values():
        keys = m.detected_keys()
        common = keys if common is None else common & keys
    shared = sorted({tid for tid, _ in common or ()})
    return Presence(classes, shared, len(triples))


@dataclass
class ScoreReport:
    targets: list[str]
    ctvs: dict[str, Ratio] = field(default_factory=dict)
    success: dict[str, dict[str, Ratio | None]] = field(default_factory=dict)
    presence: Presence | None = None

    def to_dict(self) -> dict:
        doc = {
            "targets": self.targets,
            "ctvs": {k: v.to_dict() for k, v in self.ctvs.items()},
            "success_ratios": {t: {cat: (r.to_dict() if r else None) for cat, r in cats.items()}
                               for t, cats in self.success.items()},
        }
        if self.presence is not None:
            p = self.presence
            doc["presence"] = {
                "total": p.total,
                "classes": {k: {"triples": v, **p.ratio(k).to_dict()} for k, v in p.classes.items()},
                "shared_config_detected": {"triples": p.shared_detected, **p.shared_ratio.to_dict()},
            }
        return doc

    def to_json(self, manifest: dict | None = None) -> str:
        doc = self.to_dict()
        if manifest is not None:
            doc["manifest"] = manifest
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def text(self) -> str:
        lines = ["CTVS", f"  {'target':<12} {'detected':>8} {'total':>6} {'ctvs':>7}"]
        for t in self.targets:
            r = self.ctvs[t]
            lines.append(f"  {t:<12} {r.count:>8} {r.total:>6} {r.value:>7.3f}")
        cats = []
        for v in self.success.values():
            cats += [c for c in v if c not in cats]
        lines += ["", "Success ratios (detected / valid cells)",
                  "  " + f"{'category':<12}" + "".join(f"{t:>18}" for t in self.targets)]
        for cat in cats:
            row = f"  {cat:<12}"
            for t in self.targets:
                r = self.success[t].get(cat)
                row += f"{'n/a':>18}" if r is None else f"{f'{r.count}/{r.total} {r.value:.3f}':>18}"
            lines.append(row)
        if self.presence is not None:
            p = self.presence
            lines += ["", f"Presence across targets ({p.total} triples)"]
            for k in (PRESENT_ALL, ABSENT_ALL, MIXED):
                r = p.ratio(k)
                lines.append(f"  {k:<28} {r.count:>5}/{r.total:<5} {r.value:.3f}")
            r = p.shared_ratio
            lines.append(f"  {'detected on a shared config':<28} {r.count:>5}/{r.total:<5} {r.value:.3f}")
        return "\n".join(lines) + "\n"


def _maybe(matrix: DetectionMatrix, flt: CellFilter | None) -> Ratio | None:
    try:
        return success_ratio_counts(matrix, flt)
    except InputError:
        return None


def score(matrices: Mapping[str, DetectionMatrix]) -> ScoreReport:
    """CTVS, success ratios (all/shared/exclusive/TS/SMT) and presence classes."""
    _check_same_triples(matrices)
    names = list(matrices)
    shared = shared_keys(matrices)
    rep = ScoreReport(names)
    for name in names:
        m = matrices[name]
        rep.ctvs[name] = ctvs_ratio(m)
        rep.success[name] = {
            "all": _maybe(m, None),
            "shared": _maybe(m, in_keys(shared)),
            "exclusive": _maybe(m, not_in_keys(shared)),
            "TS": _maybe(m, schedule_is("TS")),
            "SMT": _maybe(m, schedule_is("SMT")),
        }
    rep.presence = presence_classes(matrices)
    return rep
