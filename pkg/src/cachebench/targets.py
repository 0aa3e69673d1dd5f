"""Target machine descriptions: schema, loading, shipped specs."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .cache import CacheGeometry, Policy
from .errors import CacheBenchError, SpecError
from .latency import LatencyTable

DIRECTORY = "DirectoryBased"
SNOOPING = "Snooping"

SHIPPED = ("c910", "u54", "u74")
SPEC_NAMES = SHIPPED + ("reference", "l3-demo", "smt-demo")


@dataclass(frozen=True)
class LevelSpec:
    level: int
    shared: bool
    capacity_bytes: int
    block_bytes: int
    ways: int
    policy: Policy
    policy_seed: int = 0
    inclusive: bool = False

    @property
    def geometry(self) -> CacheGeometry:
        return CacheGeometry(self.capacity_bytes, self.block_bytes, self.ways)


@dataclass(frozen=True)
class TargetSpec:
    name: str
    cores: int
    smt: bool
    flush_user_mode: bool
    levels: tuple[LevelSpec, ...]
    coherence: str
    latency: LatencyTable
    seed: int = 0
    description: str = ""

    @property
    def l1(self) -> LevelSpec:
        return self.levels[0]

    @property
    def shared_levels(self) -> tuple[LevelSpec, ...]:
        return self.levels[1:]

    @property
    def has_l3(self) -> bool:
        return any(lv.level == 3 for lv in self.levels)

    @property
    def jitter(self) -> int:
        return self.latency.jitter

    @property
    def block_bytes(self) -> int:
        return self.levels[0].block_bytes

    @property
    def deterministic(self) -> bool:
        """True when two fresh machines always behave identically."""
        return self.latency.jitter == 0 and all(lv.policy.deterministic for lv in self.levels)

    def level(self, n: int) -> LevelSpec:
        for lv in self.levels:
            if lv.level == n:
                return lv
        raise KeyError(f"{self.name} has no L{n}")

    def with_seed(self, seed: int) -> "TargetSpec":
        return replace(self, seed=seed)

    def with_jitter(self, jitter: int) -> "TargetSpec":
        return replace(self, latency=self.latency.with_jitter(jitter))


def schema() -> dict:
    return json.loads(resources.files("cachebench.specs").joinpath(
        "target.schema.json").read_text())


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<document>"


def load_spec(document: dict | str | Path) -> TargetSpec:
    """Validate a spec document (dict, JSON text or path) into a TargetSpec."""
    if isinstance(document, Path) or (isinstance(document, str)
                                      and not document.lstrip().startswith("{")):
        try:
            document = json.loads(Path(document).read_text())
        except OSError as exc:
            raise SpecError(f"cannot read spec: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc}") from exc
    elif isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc}") from exc

    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SpecError(err.message, field=_path(err))

    levels = []
    for i, raw in enumerate(document["levels"]):
        try:
            lv = LevelSpec(
                level=raw["level"], shared=raw["shared"],
                capacity_bytes=raw["capacity_bytes"], block_bytes=raw["block_bytes"],
                ways=raw["ways"], policy=Policy.parse(raw["policy"]),
                policy_seed=raw.get("policy_seed", 0), inclusive=raw.get("inclusive", False))
            lv.geometry
        except (ValueError, CacheBenchError) as exc:
            raise SpecError(str(exc), field=f"levels.{i}") from exc
        levels.append(lv)

    latency = LatencyTable(document["latency"], document.get("jitter", 0))
    spec = TargetSpec(
        name=document["name"], cores=document["cores"], smt=document["smt"],
        flush_user_mode=document["flush_user_mode"], levels=tuple(levels),
        coherence=document["coherence"], latency=latency, seed=document.get("seed", 0),
        description=document.get("description", ""))
    validate(spec)
    return spec


def validate(spec: TargetSpec) -> None:
    levels = spec.levels
    nums = [lv.level for lv in levels]
    if nums != sorted(nums) or len(set(nums)) != len(nums):
        raise SpecError("levels must be strictly ascending", field="levels")
    if nums[0] != 1:
        raise SpecError("the first level must be L1", field="levels.0.level")
    if levels[0].shared:
        raise SpecError("L1 is private to each core", field="levels.0.shared")
    for i, lv in enumerate(levels[1:], start=1):
        if not lv.shared:
            raise SpecError("only shared L2/L3 levels are supported", field=f"levels.{i}.shared")
        if lv.block_bytes != levels[0].block_bytes:
            raise SpecError("all levels must use the same block size",
                            field=f"levels.{i}.block_bytes")
        if lv.geometry.sets < levels[i - 1].geometry.sets:
            raise SpecError("a lower level cannot have fewer sets than the level above",
                            field=f"levels.{i}.capacity_bytes")
    if spec.cores < 1:
        raise SpecError("at least one core is required", field="cores")
    if spec.coherence not in (DIRECTORY, SNOOPING):
        raise SpecError(f"unknown coherence kind {spec.coherence!r}", field="coherence")
    try:
        spec.latency.validate(has_l3=spec.has_l3)
    except CacheBenchError as exc:
        raise SpecError(str(exc), field="latency") from exc


def to_document(spec: TargetSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "name": spec.name,
        "cores": spec.cores,
        "smt": spec.smt,
        "flush_user_mode": spec.flush_user_mode,
        "coherence": spec.coherence,
        "seed": spec.seed,
        "levels": [
            {"level": lv.level, "shared": lv.shared, "capacity_bytes": lv.capacity_bytes,
             "block_bytes": lv.block_bytes, "ways": lv.ways, "policy": lv.policy.value,
             "policy_seed": lv.policy_seed, "inclusive": lv.inclusive}
            for lv in spec.levels
        ],
        "latency": dict(spec.latency.cycles),
        "jitter": spec.latency.jitter,
    }
    if spec.description:
        doc["description"] = spec.description
    return doc


def serialize(spec: TargetSpec) -> str:
    return json.dumps(to_document(spec), indent=2) + "\n"


def shipped_spec_path(name: str) -> Path:
    if name not in SPEC_NAMES:
        raise SpecError(f"no shipped spec called {name!r}; choose from {', '.join(SPEC_NAMES)}")
    return Path(str(resources.files("cachebench.specs").joinpath(f"{name}.json")))


def shipped(name: str) -> TargetSpec:
    return load_spec(shipped_spec_path(name))


def resolve(name_or_path: str | Path) -> TargetSpec:
    """Load a spec by shipped name ("c910") or by file path."""
    if isinstance(name_or_path, str) and name_or_path in SPEC_NAMES:
        return shipped(name_or_path)
    return load_spec(Path(name_or_path))


def reference_target() -> TargetSpec:
    """Idealised target used to define the strong-vulnerability set."""
    return shipped("reference")


def build_machine(spec: TargetSpec, trial: int = 0):
    """Cold machine for ``spec``; ``trial`` perturbs every random stream."""
    from .coherence import SimMachine

    return SimMachine(spec, trial=trial)


__all__ = [
    "DIRECTORY", "SNOOPING", "LevelSpec", "TargetSpec", "build_machine",
    "load_spec", "reference_target", "resolve", "serialize", "shipped", "to_document",
]
