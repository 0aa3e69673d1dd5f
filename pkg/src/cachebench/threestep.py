"""Three-step vulnerability model: 17 step states, 4913 triples, oracle classifier.

A step state is (actor, address class, action). Address classes:

* ``u``       the victim's secret address
* ``a``       an attacker-known address in the monitored set
* ``a_alias`` a set-filling group of addresses congruent with ``a``
* ``d``       a known address in a different set

The classifier runs a compiled plan twice: hypothesis A puts ``u`` on the
monitored address ``a``, hypothesis B on a decoy in another set. The triple
leaks if the step-3 latencies of the two runs can be told apart.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigurationError, InputError


class Actor(str, enum.Enum):
    VICTIM = "V"
    ATTACKER = "A"
    ANY = "*"


class Action(str, enum.Enum):
    ACCESS = "access"
    INVALIDATE = "invalidate"
    WILDCARD = "wildcard"


ADDRESS_CLASSES = ("u", "a", "a_alias", "d")


@dataclass(frozen=True)
class StepState:
    actor: Actor
    address_class: str | None
    action: Action

    @property
    def label(self) -> str:
        if self.action is Action.WILDCARD:
            return "*"
        if self.address_class is None:
            return f"{self.actor.value}_inv"
        suffix = "^inv" if self.action is Action.INVALIDATE else ""
        return f"{self.actor.value}_{self.address_class}{suffix}"

    @property
    def whole_cache(self) -> bool:
        return self.action is Action.INVALIDATE and self.address_class is None

    @property
    def is_wildcard(self) -> bool:
        return self.action is Action.WILDCARD

    @property
    def is_invalidation(self) -> bool:
        return self.action is Action.INVALIDATE

    def __str__(self):
        return self.label


def enumerate_states() -> list[StepState]:
    """Canonical order: 7 accesses, the 7 matching invalidations, V_inv, A_inv, then the wildcard."""
    V, A = Actor.VICTIM, Actor.ATTACKER
    pairs = [(V, "u"), (V, "a"), (V, "a_alias"), (A, "a"), (A, "a_alias"), (V, "d"), (A, "d")]
    out = [StepState(actor, cls, Action.ACCESS) for actor, cls in pairs]
    out += [StepState(actor, cls, Action.INVALIDATE) for actor, cls in pairs]
    out += [StepState(V, None, Action.INVALIDATE), StepState(A, None, Action.INVALIDATE)]
    out.append(StepState(Actor.ANY, None, Action.WILDCARD))
    return out


STATES = tuple(enumerate_states())
NSTATES = len(STATES)
STATE_INDEX = {s: i for i, s in enumerate(STATES)}
STATE_BY_LABEL = {s.label: s for s in STATES}
NTRIPLES = NSTATES ** 3


def state(label: str) -> StepState:
    try:
        return STATE_BY_LABEL[label]
    except KeyError:
        raise InputError(f"unknown step state {label!r}") from None


@dataclass(frozen=True)
class VulnTriple:
    id: int
    s1: StepState
    s2: StepState
    s3: StepState

    @property
    def steps(self) -> tuple[StepState, StepState, StepState]:
        return (self.s1, self.s2, self.s3)

    @property
    def involves_u(self) -> bool:
        return any(s.address_class == "u" for s in self.steps)

    @property
    def labels(self) -> tuple[str, str, str]:
        return tuple(s.label for s in self.steps)

    def __str__(self):
        return f"#{self.id} <{', '.join(self.labels)}>"


def rank(s1: StepState, s2: StepState, s3: StepState) -> int:
    return (STATE_INDEX[s1] * NSTATES + STATE_INDEX[s2]) * NSTATES + STATE_INDEX[s3]


def unrank(tid: int) -> VulnTriple:
    if not 0 <= tid < NTRIPLES:
        raise InputError(f"triple id {tid} out of range 0..{NTRIPLES - 1}")
    i1, rest = divmod(tid, NSTATES * NSTATES)
    i2, i3 = divmod(rest, NSTATES)
    return VulnTriple(tid, STATES[i1], STATES[i2], STATES[i3])


def triple(*labels: str) -> VulnTriple:
    """Triple from three state labels, e.g. ``triple("A_a^inv", "V_u", "A_a")``."""
    if len(labels) != 3:
        raise InputError("a triple has exactly three steps")
    s = [state(x) for x in labels]
    return unrank(rank(*s))


def enumerate_triples() -> list[VulnTriple]:
    return [unrank(i) for i in range(NTRIPLES)]


# The four attacks from the literature, in three-step form.
CLASSIC = {
    "Flush+Reload": ("A_a^inv", "V_u", "A_a"),
    "Flush+Flush": ("A_a^inv", "V_u", "A_a^inv"),
    "Prime+Probe": ("A_a_alias", "V_u", "A_a_alias"),
    "Evict+Time": ("V_u", "A_a_alias", "V_u"),
}


def classic_triples() -> dict[str, VulnTriple]:
    return {name: triple(*labels) for name, labels in CLASSIC.items()}


def catalog_jsonl(triples: Iterable[VulnTriple] | None = None) -> str:
    rows = triples if triples is not None else enumerate_triples()
    return "".join(json.dumps({"id": t.id, "s1": t.s1.label, "s2": t.s2.label,
                               "s3": t.s3.label}) + "\n" for t in rows)


def states_jsonl() -> str:
    return "".join(json.dumps({"index": i, "label": s.label, "actor": s.actor.value,
                               "address_class": s.address_class, "action": s.action.value}) + "\n"
                   for i, s in enumerate(STATES))


def parse_catalog(text: str) -> list[VulnTriple]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        t = triple(row["s1"], row["s2"], row["s3"])
        if t.id != row["id"]:
            raise InputError(f"catalog id {row['id']} does not match its states (rank {t.id})")
        out.append(t)
    return out


# -- classification ---------------------------------------------------------------

@dataclass
class Verdict:
    distinguishable: bool
    delta: int = 0
    hist_a: object = None
    hist_b: object = None
    reason: str = ""
    l2_replacements: int = 0

    @property
    def mode_a(self):
        return self.hist_a.mode if self.hist_a is not None and self.hist_a.trials else None

    @property
    def mode_b(self):
        return self.hist_b.mode if self.hist_b is not None and self.hist_b.trials else None


def classify(t: VulnTriple, target, realization, trials: int = 100, delta_min: int = 2,
             decoy_offset: int = 2, short_circuit: bool = True) -> Verdict:
    """Run ``t`` under both hypotheses on ``target`` and compare step-3 latency.

    u-free triples cannot depend on the secret and return False at once
    unless ``short_circuit`` is off, in which case they are simulated too.
    """
    from . import benchgen

    if short_circuit and not t.involves_u:
        return Verdict(False, reason="secret-independent")
    if not benchgen.validity(realization, t, target):
        raise ConfigurationError(
            f"{realization.label} is not valid for {t} on {target.name}: "
            + benchgen.invalid_reason(realization, t, target))
    layout = benchgen.Layout.for_target(target, decoy_offset=decoy_offset)
    plan_a = benchgen.compile_plan(t, realization, target, "A", layout=layout, dry_run=False)
    plan_b = benchgen.compile_plan(t, realization, target, "B", layout=layout, dry_run=False)
    hist_a, rep_a = benchgen.run_plan(plan_a, target, trials)
    hist_b, rep_b = benchgen.run_plan(plan_b, target, trials)
    delta = abs(hist_a.mode - hist_b.mode)
    return Verdict(benchgen.decide_detection(hist_a, hist_b, delta_min), delta, hist_a, hist_b,
                   l2_replacements=rep_a + rep_b)


def strong_set(target=None, config_set=None, trials: int = 100, delta_min: int = 2,
               triples: Iterable[VulnTriple] | None = None) -> list[int]:
    """Ids of triples distinguishable under at least one valid configuration.

    Defaults to the idealised reference target and all 16 configurations.
    Stops at the first detecting configuration of each triple.
    """
    from . import benchgen
    from .errors import PlanError
    from .targets import reference_target

    target = target or reference_target()
    configs = list(config_set) if config_set is not None else benchgen.gen_configs()
    out = []
    for t in (triples if triples is not None else enumerate_triples()):
        if not t.involves_u:
            continue
        for cfg in configs:
            if not benchgen.validity(cfg, t, target):
                continue
            try:
                v = classify(t, target, cfg, trials, delta_min)
            except PlanError:
                continue
            if v.distinguishable:
                out.append(t.id)
                break
    return out


def reference_strong_ids() -> list[int]:
    """Shipped result of :func:`strong_set` on the reference target."""
    from importlib import resources

    doc = json.loads(resources.files("cachebench.data").joinpath("reference_strong.json").read_text())
    return list(doc["ids"])
