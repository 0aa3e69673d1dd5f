import itertools

import pytest
from hypothesis import given, settings, strategies as st

from cachebench.benchgen import (CONFIG_LABELS, DETECTED, INVALID, NOT_DETECTED, Cell,
                                 DetectionMatrix, run_benchmark)
from cachebench.errors import InputError
from cachebench.scoring import (ABSENT_ALL, MIXED, PRESENT_ALL, ctvs, ctvs_ratio, presence_classes,
                                schedule_is, score, shared_keys, success_ratio)
from cachebench.targets import SHIPPED, shipped
from cachebench.threestep import classic_triples

from helpers import fixture_matrices


def matrix(statuses, name="t"):
    """statuses: {tid: [status per config label]}"""
    return DetectionMatrix(name, {(tid, lab): Cell(s) for tid, row in statuses.items()
                                  for lab, s in zip(CONFIG_LABELS, row)}, 100)


def test_fixture_percentages():
    ms = fixture_matrices()
    p = presence_classes(ms)
    assert round(p.ratio(PRESENT_ALL).value, 3) == 0.659
    assert p.ratio(PRESENT_ALL).count == 58
    assert p.ratio(ABSENT_ALL).count == 6 and round(p.ratio(ABSENT_ALL).value, 3) == 0.068
    assert p.shared_ratio.count == 33 and p.shared_ratio.value == 0.375
    assert ctvs_ratio(ms["y"]).count == 58 and abs(ctvs(ms["y"]) - 0.659) < 1e-3
    assert ctvs(ms["x"]) == 82 / 88


def test_trivial_ctvs():
    assert ctvs(matrix({1: [NOT_DETECTED] * 16, 2: [NOT_DETECTED] * 16})) == 0.0
    assert ctvs(matrix({1: [DETECTED] + [NOT_DETECTED] * 15, 2: [NOT_DETECTED] * 15 + [DETECTED]})) == 1.0
    with pytest.raises(InputError):
        ctvs(DetectionMatrix("empty"))


def test_success_ratio_examples():
    m = matrix({1: [DETECTED] * 8 + [INVALID] * 8})
    assert success_ratio(m) == 1.0
    with pytest.raises(InputError):
        success_ratio(m, schedule_is("SMT"))
    m = matrix({1: [DETECTED, NOT_DETECTED, NOT_DETECTED, DETECTED] + [INVALID] * 12})
    assert success_ratio(m) == 0.5


def test_smt_category_empty_on_shipped_specs():
    t = classic_triples()["Flush+Reload"].id
    for name in SHIPPED:
        m = run_benchmark(shipped(name), [t])
        with pytest.raises(InputError):
            success_ratio(m, schedule_is("SMT"))
        assert score({name: m}).success[name]["SMT"] is None


def test_shared_keys_are_the_intersection():
    ms = fixture_matrices()
    keys = shared_keys(ms)
    assert keys == ms["x"].valid_keys() & ms["y"].valid_keys() & ms["z"].valid_keys()
    assert len(keys) == 88 * 4      # the four W_* TS labels
    rep = score(ms)
    sh, ex = rep.success["x"]["shared"], rep.success["x"]["exclusive"]
    assert sh.total + ex.total == rep.success["x"]["all"].total
    assert rep.success["z"]["exclusive"] is None


def test_invalid_cells_never_change_scores():
    ms = fixture_matrices()
    base = score(ms).to_dict()
    padded = {}
    for name, m in ms.items():
        cells = dict(m.cells)
        for tid in range(88):
            cells[(tid, "extra")] = Cell(INVALID)
        padded[name] = DetectionMatrix(name, cells, 100)
    assert score(padded).to_dict() == base


def test_presence_is_permutation_invariant():
    ms = fixture_matrices()
    ref = presence_classes(ms)
    for order in itertools.permutations(ms):
        p = presence_classes({k: ms[k] for k in order})
        assert p.classes == ref.classes and p.shared_detected == ref.shared_detected


statuses = st.sampled_from([DETECTED, NOT_DETECTED, INVALID])


@settings(max_examples=40)
@given(st.lists(st.lists(st.lists(statuses, min_size=16, max_size=16), min_size=3, max_size=3),
                min_size=1, max_size=10))
def test_presence_partition(rows):
    ms = {f"t{k}": matrix({tid: row[k] for tid, row in enumerate(rows)}, f"t{k}") for k in range(3)}
    p = presence_classes(ms)
    everything = sorted(p.classes[PRESENT_ALL] + p.classes[ABSENT_ALL] + p.classes[MIXED])
    assert everything == list(range(len(rows)))
    assert set(p.shared_detected) <= set(p.classes[PRESENT_ALL])
    single = presence_classes({"t0": ms["t0"]})
    assert not single.classes[MIXED]
    rep = score(ms)
    for name in ms:
        assert 0.0 <= rep.ctvs[name].value <= 1.0
        for r in rep.success[name].values():
            assert r is None or 0.0 <= r.value <= 1.0


def test_mismatched_triples_rejected():
    a = matrix({1: [DETECTED] * 16}, "a")
    b = matrix({2: [DETECTED] * 16}, "b")
    with pytest.raises(InputError):
        presence_classes({"a": a, "b": b})
    with pytest.raises(InputError):
        presence_classes({})


def test_report_text_and_json():
    rep = score(fixture_matrices())
    text = rep.text()
    assert "CTVS" in text and "present-in-all" in text
    doc = rep.to_dict()
    assert doc["presence"]["classes"][ABSENT_ALL]["count"] == 6
    assert doc["presence"]["shared_config_detected"]["ratio"] == 0.375
