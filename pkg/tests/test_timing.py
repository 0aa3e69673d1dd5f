import re

import pytest
from hypothesis import given, strategies as st

from cachebench.coherence import OpKind
from cachebench.errors import ConfigurationError, InputError, InvalidTimingType
from cachebench.latency import (DIRECTORY_LOOKUP, DRAM_FETCH, INVALIDATION, EventTrace,
                                LatencyTable, cost)
from cachebench.targets import build_machine, shipped
from cachebench.timing import (Histogram, MachineFactory, TimingType, enumerate_timing_types,
                               histograms_csv, measure, parse_timing_type, prepare_state,
                               read_histograms_csv, timing_types_for)

from helpers import table, tiny_spec

LABEL = re.compile(r"^(DRAM|(REMOTE_)?L[123]_(CLEAN|DIRTY)|L[123]_REMOTE_L[123]_CLEAN)$")


def modes(spec, trials=1):
    return {tt.key: measure(spec, tt, trials).mode for tt in timing_types_for(spec)}


@pytest.mark.parametrize("l3,flush,n", [(True, True, 66), (False, True, 39), (False, False, 26),
                                        (True, False, 44)])
def test_counts(l3, flush, n):
    tts = enumerate_timing_types(l3, flush)
    assert len(tts) == n
    assert len({tt.key for tt in tts}) == n


def test_22_per_operation_and_grammar():
    tts = enumerate_timing_types(True, True)
    for op in OpKind:
        sel = [tt for tt in tts if tt.op is op]
        assert len(sel) == 22
        assert sum(len(tt.placement) == 1 for tt in sel) == 12
        assert sum(len(tt.placement) == 2 for tt in sel) == 9
        assert sum(tt.dram_only for tt in sel) == 1
    assert all(LABEL.match(tt.label) for tt in tts)
    assert parse_timing_type("read:REMOTE_L2_DIRTY").label == "REMOTE_L2_DIRTY"
    with pytest.raises(InputError):
        parse_timing_type("read:L4_CLEAN")


def test_cost_examples():
    t = LatencyTable({"base_op_overhead": 10, "dram_fetch": 100})
    assert cost(EventTrace(), t) == 10
    tr = EventTrace()
    tr.add(DRAM_FETCH, 0, None, 0)
    assert cost(tr, t) == 110
    tr.add("L1_hit", 1, None, 0)
    with pytest.raises(ConfigurationError):
        cost(tr, t)


def test_directory_write_invalidate_cost():
    spec = tiny_spec()
    m = build_machine(spec)
    m.read(1, 0x40)
    tr = m.write(0, 0x40)
    lat = spec.latency
    cats = tr.categories()
    assert DIRECTORY_LOOKUP in cats and INVALIDATION in cats
    expected = lat["base_op_overhead"] + sum(lat[c] for c in cats)
    assert cost(tr, lat) == expected


def test_latency_table_validation():
    with pytest.raises(ConfigurationError):
        table(L2_hit=1).validate()
    with pytest.raises(ConfigurationError):
        table(writeback=0).validate()
    with pytest.raises(ConfigurationError):
        LatencyTable({"L1_hit": 1}).validate()
    table(L3_hit=500).validate(has_l3=False)


@pytest.mark.parametrize("name", ["c910", "u54", "u74", "reference", "l3-demo", "smt-demo"])
def test_every_valid_type_is_preparable(name):
    spec = shipped(name)
    for trial in range(3):
        for tt in timing_types_for(spec):
            m = build_machine(spec, trial)
            prepare_state(m, tt)   # verifies the placement itself
            assert m.snapshot_placement(0x100000).locations(0, 1) == frozenset(tt.placement)


def test_unpreparable_l3_type():
    m = build_machine(shipped("c910"))
    with pytest.raises(InvalidTimingType):
        prepare_state(m, TimingType(OpKind.READ, ((3, "local", False),)))
    m = build_machine(shipped("u54"))
    with pytest.raises(InvalidTimingType):
        prepare_state(m, TimingType(OpKind.FLUSH, ()))


def test_dram_only_without_flush_uses_eviction():
    spec = shipped("u74")
    m = build_machine(spec)
    prepare_state(m, TimingType(OpKind.READ, ()))
    assert m.snapshot_placement(0x100000).dram_only


def test_deterministic_target_single_bin():
    h = measure(shipped("c910"), TimingType(OpKind.READ, ((1, "local", False),)), 500)
    assert len(h.counts) == 1 and h.trials == 500
    lo, hi = h.p95
    assert lo == hi == h.mode


def test_read_orderings_on_default_tables():
    for name in ("c910", "u54", "u74"):
        md = modes(shipped(name), trials=20)
        assert md["read:L1_CLEAN"] < md["read:L2_CLEAN"] < md["read:DRAM"]
    md = modes(shipped("l3-demo"))
    assert md["read:L1_CLEAN"] < md["read:L2_CLEAN"] < md["read:L3_CLEAN"] < md["read:DRAM"]


def test_c910_flush_orderings():
    md = modes(shipped("c910"))
    flush = {k.split(":")[1]: v for k, v in md.items() if k.startswith("flush:")}
    for pre in ("", "REMOTE_"):
        for lv in (1, 2):
            assert flush[f"{pre}L{lv}_DIRTY"] > flush[f"{pre}L{lv}_CLEAN"]
        for c in ("CLEAN", "DIRTY"):
            assert flush[f"{pre}L1_{c}"] >= flush[f"{pre}L2_{c}"]
    assert flush["DRAM"] == min(flush.values())
    assert sum(1 for v in flush.values() if v == flush["DRAM"]) == 1
    lat = shipped("c910").latency
    assert flush["DRAM"] == lat["base_op_overhead"] + lat["flush_line"]


@pytest.mark.parametrize("name", ["u54", "u74"])
def test_directory_write_equivalence(name):
    md = modes(shipped(name), trials=20)
    assert md["write:REMOTE_L1_CLEAN"] == md["write:REMOTE_L2_CLEAN"]


def test_jitter_widens_p95():
    tt = TimingType(OpKind.READ, ((2, "local", False),))
    widths = []
    for j in (0, 1, 2, 4, 8):
        h = measure(MachineFactory(shipped("reference").with_jitter(j)), tt, 800)
        lo, hi = h.p95
        widths.append(hi - lo)
    assert widths == sorted(widths) and widths[0] == 0 and widths[-1] > 0


def test_measure_parallel_matches_serial():
    spec = shipped("u54").with_jitter(3)
    tt = TimingType(OpKind.READ, ((2, "remote", True),))
    assert measure(spec, tt, 60, jobs=1) == measure(spec, tt, 60, jobs=2)


def test_histogram_mode_tie_and_quantiles():
    h = Histogram({5: 3, 3: 3, 9: 1})
    assert h.mode == 3
    h = Histogram.from_samples(list(range(1, 101)) + [50])
    assert h.mode == 50
    assert h.p95 == (3, 98)
    # interval is widened to contain the mode
    h = Histogram.from_samples([1] * 3 + [100] * 200)
    assert h.mode == 100 and h.p95 == (100, 100)
    h = Histogram.from_samples(list(range(1, 101)))
    assert h.p95 == (1, 98)
    with pytest.raises(InputError):
        Histogram().mode


@given(st.lists(st.integers(0, 400), min_size=1, max_size=400))
def test_histogram_invariants(samples):
    h = Histogram.from_samples(samples)
    assert h.trials == len(samples)
    assert h.mode in h.counts
    lo, hi = h.p95
    assert lo <= h.mode <= hi
    assert min(samples) <= lo <= hi <= max(samples)


@given(st.lists(st.integers(0, 50)), st.lists(st.integers(0, 50)), st.lists(st.integers(0, 50)))
def test_histogram_merge_is_associative_and_commutative(a, b, c):
    A, B, C = (Histogram.from_samples(x) for x in (a, b, c))
    assert A.merge(B) == B.merge(A)
    assert A.merge(B).merge(C) == A.merge(B.merge(C))


def test_histogram_csv_round_trip():
    spec = shipped("c910")
    hs = {tt: measure(spec, tt, 10) for tt in timing_types_for(spec)[:5]}
    back = read_histograms_csv(histograms_csv(hs))
    for tt, h in hs.items():
        assert back[(tt.op.value, tt.label)] == h
