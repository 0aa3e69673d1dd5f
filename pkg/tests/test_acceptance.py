"""Acceptance criteria 1-10. The terminal summary prints one PASS/FAIL line per criterion."""

import filecmp
import random

import pytest

from cachebench.benchgen import (ALL_CONFIGS, CONFIG_LABELS, INVALID, NATURAL, SMT, Layout,
                                 compile_plan, invalid_reason, run_benchmark)
from cachebench.cache import CacheGeometry, CacheLevel, Policy, ReplacementPolicy
from cachebench.cli import main
from cachebench.eviction import congruent_addresses, default_params, eviction_rate, policy_defaults, sweep_order
from cachebench.scoring import ABSENT_ALL, PRESENT_ALL, ctvs, presence_classes
from cachebench.targets import SHIPPED, reference_target, shipped
from cachebench.threestep import (NSTATES, NTRIPLES, classic_triples, classify, enumerate_triples,
                                  reference_strong_ids, strong_set)
from cachebench.timing import enumerate_timing_types, measure, timing_types_for

from fuzz import run_fuzz
from helpers import fixture_matrices, tiny_spec
from oracles import RefCache

acceptance = pytest.mark.acceptance
REF = reference_target()


@acceptance(1, "taxonomy counts")
def test_c1_taxonomy_counts():
    assert len(enumerate_timing_types(True, True)) == 66
    assert len(enumerate_timing_types(False, True)) == 39
    assert len(enumerate_timing_types(True, False)) == 44
    assert len(enumerate_timing_types(False, False)) == 26
    for op in ("read", "write", "flush"):
        assert sum(tt.op.value == op for tt in enumerate_timing_types(True, True)) == 22
    assert NSTATES == 17 and NTRIPLES == 4913 == len(enumerate_triples())
    assert len(ALL_CONFIGS) == 16 == len(set(CONFIG_LABELS))


# ways must be a power of two in this model
GEOMETRIES = [(s, n) for s in (1, 2, 4) for n in (1, 2, 4)]


@acceptance(2, "policy oracle equivalence")
@pytest.mark.parametrize("policy", ["LRU", "FIFO", "TreePLRU"])
def test_c2_policy_oracle(policy):
    for seed in range(20):
        sets, ways = GEOMETRIES[seed % len(GEOMETRIES)]
        g = CacheGeometry(sets * ways * 64, 64, ways)
        lvl = CacheLevel(g, ReplacementPolicy(Policy(policy), seed))
        ref = RefCache(policy, sets, ways, seed=seed)
        rng = random.Random(seed)
        universe = sets * (ways + 2)
        for i in range(10_000):
            addr = rng.randrange(universe) * 64
            hit, _ = lvl.access(addr)
            assert hit == ref.access(addr), (policy, sets, ways, seed, i)


@acceptance(3, "coherence soundness")
@pytest.mark.parametrize("coherence", ["DirectoryBased", "Snooping"])
@pytest.mark.parametrize("cores", [2, 3, 4])
def test_c3_coherence_fuzz(coherence, cores):
    m, _, _ = run_fuzz(tiny_spec(coherence=coherence, cores=cores), 100_000, seed=cores,
                       full_check_every=1)
    m.check_invariants()


@acceptance(4, "classic attacks detected")
def test_c4_classic_attacks():
    classic = classic_triples()
    detected = {}
    for name, t in classic.items():
        detected[name] = [c.label for c in ALL_CONFIGS if classify(t, REF, c).distinguishable]
        assert detected[name], name
    ids = {t.id for t in classic.values()}
    assert set(strong_set(triples=classic.values())) == ids
    assert ids <= set(reference_strong_ids())


@acceptance(5, "u-free triples never distinguishable")
def test_c5_soundness():
    lay = Layout.for_target(REF, lines=1)
    free = [t for t in enumerate_triples() if not t.involves_u]
    assert len(free) == 3375
    for t in free:
        assert not classify(t, REF, ALL_CONFIGS[0]).distinguishable
        for c in ALL_CONFIGS:
            # hypothesis A and B run the very same actions
            assert (compile_plan(t, c, REF, "A", lay, dry_run=False).steps
                    == compile_plan(t, c, REF, "B", lay, dry_run=False).steps)
    rng = random.Random(2024)
    for t in rng.sample(free, 60):
        for c in ALL_CONFIGS:
            assert not classify(t, REF, c, short_circuit=False).distinguishable
    m = run_benchmark(REF, [t.id for t in free[::25]])
    assert not m.detected_keys()
    assert set(strong_set(triples=free)) == set()


def _modes(spec, trials):
    return {tt.key: measure(spec, tt, trials).mode for tt in timing_types_for(spec)}


@acceptance(6, "latency orderings on shipped tables")
@pytest.mark.parametrize("name", SHIPPED)
def test_c6_orderings(name):
    spec = shipped(name)
    assert spec.jitter == 0
    md = _modes(spec, 1 if spec.deterministic else 30)
    assert md["read:L1_CLEAN"] < md["read:L2_CLEAN"] < md["read:DRAM"]
    if spec.flush_user_mode:
        fl = {k[6:]: v for k, v in md.items() if k.startswith("flush:")}
        for pre in ("", "REMOTE_"):
            for lv in (1, 2):
                assert fl[f"{pre}L{lv}_DIRTY"] > fl[f"{pre}L{lv}_CLEAN"]
        assert fl["DRAM"] < min(v for k, v in fl.items() if k != "DRAM")
    if spec.coherence == "DirectoryBased":
        assert md["write:REMOTE_L1_CLEAN"] == md["write:REMOTE_L2_CLEAN"]


@acceptance(7, "validity filtering")
def test_c7_validity():
    triples = enumerate_triples()
    for name in SHIPPED:
        spec = shipped(name)
        for t in triples:
            for c in ALL_CONFIGS:
                why = invalid_reason(c, t, spec)
                needs_flush = any(r == NATURAL and s.is_invalidation
                                  for s, r in zip(t.steps, c.realization))
                if c.schedule == SMT:
                    assert why
                elif name == "c910":
                    assert not why
                else:
                    assert bool(why) == needs_flush
    sample = reference_strong_ids()[::50]
    for name in ("c910", "u54"):
        m = run_benchmark(shipped(name), sample)
        for (tid, label), cell in m.cells.items():
            if label.endswith("SMT"):
                assert cell.status == INVALID
            if name == "c910" and label.endswith("TS"):
                assert cell.status != INVALID


@acceptance(8, "eviction guarantees")
def test_c8_eviction():
    for policy in (Policy.LRU, Policy.FIFO, Policy.TREE_PLRU):
        for ways in (1, 2, 4):
            g = CacheGeometry(2 * ways * 64, 64, ways)
            params = policy_defaults([policy], ways)
            sweep = sweep_order(congruent_addresses(g, 0, params.addresses), params)
            rng = random.Random(ways)
            for _ in range(400):
                lvl = CacheLevel(g, ReplacementPolicy(policy))
                for _ in range(rng.randrange(12)):
                    lvl.access(g.address(rng.randrange(1, ways + 2), 0))
                lvl.access(g.address(1, 0))
                for a in sweep:
                    lvl.access(a)
                assert lvl.lookup(g.address(1, 0)) is None
    spec = shipped("u54")
    assert spec.l1.policy is Policy.RANDOM and spec.l1.ways == 8
    rate, _ = eviction_rate(spec, 1, default_params(spec, 1), range(1000))
    assert rate >= 0.99


@acceptance(9, "scoring fixtures")
def test_c9_scoring():
    ms = fixture_matrices()
    p = presence_classes(ms)
    assert abs(p.ratio(PRESENT_ALL).value - 0.659) <= 1e-3
    assert abs(p.ratio(ABSENT_ALL).value - 0.068) <= 1e-3
    assert abs(p.shared_ratio.value - 0.375) <= 1e-3
    assert abs(ctvs(ms["y"]) - 0.659) <= 1e-3


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    stack = [cmp]
    while stack:
        c = stack.pop()
        assert not c.left_only and not c.right_only
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        assert not mismatch and not errors, mismatch
        stack.extend(c.subdirs.values())


@acceptance(10, "byte-identical reruns")
def test_c10_reproducibility(tmp_path):
    ts = ["--timestamp", "20260101T000000Z", "--jobs", "1"]
    cmds = [
        ["timing-types", "--target", "c910"],
        ["timing-types", "--target", "u74", "--trials", "10"],
        ["enumerate"],
        ["bench", "--target", "c910", "--triples", "classic"],
        ["bench", "--target", "u54", "--triples", "2893,2900"],
        ["sweep", "--target", "u54", "--seeds", "3"],
    ]
    for root in ("a", "b"):
        for argv in cmds:
            assert main(argv + ts + ["--out", str(tmp_path / root)]) == 0
        matrix = tmp_path / root / "c910/bench/20260101T000000Z/matrix.json"
        # report manifests record matrix paths, so both runs use the same one
        assert main(["report", "--matrices", str(tmp_path / "a/c910/bench/20260101T000000Z/matrix.json")]
                    + ts + ["--out", str(tmp_path / root)]) == 0
        assert matrix.exists()
    _same_tree(tmp_path / "a", tmp_path / "b")
