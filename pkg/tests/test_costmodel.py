import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxelbench.costmodel import (
    CycleModelInputs,
    InstructionProfile,
    effective_l2_bandwidth,
    format_tables,
    instruction_count_efficiency,
    knc_cycle_model,
    load_data,
    load_profiles,
    simd_runtime_efficiency,
    table_rows,
)

PUBLISHED_TOTALS = {"SSE": 73, "AVX": 92, "AVX2": 49, "AVX/FMA3": 82, "IMCI": 77}


def test_profiles_sum_to_published_totals():
    profiles = load_profiles()
    assert {name: p.total for name, p in profiles.items()} == PUBLISHED_TOTALS
    for p in profiles.values():
        assert p.total == sum(p.class_total(c) for c in ("memory", "shuffle", "arithmetic", "other"))


def test_profile_rejects_negative_and_unknown():
    with pytest.raises(ValueError):
        InstructionProfile("x", 4, {"part1": {"memory": -1}})
    with pytest.raises(ValueError):
        InstructionProfile("x", 4, {"part9": {"memory": 1}})
    with pytest.raises(ValueError):
        InstructionProfile("x", 4, {"part1": {"vector": 1}})


@pytest.mark.parametrize("scalar, simd, lanes, expected", [
    (57, 73, 4, 0.78), (46, 92, 8, 0.50), (41, 49, 8, 0.84), (46, 82, 8, 0.56), (41, 41, 1, 1.00),
])
def test_instruction_count_efficiency(scalar, simd, lanes, expected):
    assert instruction_count_efficiency(scalar, simd, lanes) == pytest.approx(expected, abs=0.01)


def test_instruction_count_efficiency_zero_denominator():
    with pytest.raises(ZeroDivisionError):
        instruction_count_efficiency(57, 0, 4)


def test_simd_runtime_efficiency():
    assert simd_runtime_efficiency(3.28, 4) == pytest.approx(0.82)
    assert simd_runtime_efficiency(6.56, 8) == pytest.approx(0.82)
    assert simd_runtime_efficiency(8, 8) == 1.0
    with pytest.raises(ValueError):
        simd_runtime_efficiency(0, 8)


def test_table_rows_reproduce_efficiencies():
    rows = {r["isa"]: r for r in table_rows()}
    for isa, r in rows.items():
        assert r["total"] == r["publishedTotal"] == PUBLISHED_TOTALS[isa]
        if "countEfficiency" in r:
            assert abs(r["countEfficiency"] - r["publishedCountEfficiency"]) <= 0.01
    text = format_tables(list(rows.values()))
    assert "78%" in text and "50%" in text and "84%" in text and "56%" in text


def test_published_cycle_model():
    b = knc_cycle_model(CycleModelInputs(37.5, 16, 3.7, 0.885, 64, 11.85))
    assert b.gather_cycles == pytest.approx(59.2)
    assert b.l2_penalty_cycles == pytest.approx(9.94, abs=0.01)
    assert b.total_cycles == pytest.approx(107, abs=1)
    assert b.gather_share >= 0.6
    assert b.as_dict()["totalCycles"] == b.total_cycles


def test_cycle_model_all_hits_and_no_gathers():
    all_hits = knc_cycle_model(CycleModelInputs(37.5, 16, 3.7, 1.0, 64, 11.85))
    assert all_hits.total_cycles == pytest.approx(96.7)
    assert knc_cycle_model(CycleModelInputs(37.5, 0, 3.7, 0.885)).total_cycles == 37.5


def test_shipped_inputs_are_the_published_ones():
    assert CycleModelInputs.knc_published() == CycleModelInputs(37.5, 16, 3.7, 0.885, 64, 11.85)
    ref = load_data("reference_numbers.json")["kncCycleModel"]
    assert ref["publishedTotal"] == 107 and ref["staticBaseEstimate"] == 34


def test_cycle_model_input_validation():
    with pytest.raises(ValueError):
        CycleModelInputs(37.5, 16, 3.7, 1.5)
    with pytest.raises(ValueError):
        CycleModelInputs(0, 16, 3.7, 0.5)
    with pytest.raises(ValueError):
        CycleModelInputs(37.5, -1, 3.7, 0.5)
    with pytest.raises(ValueError):
        CycleModelInputs.from_dict({"baseCyclesPerIter": 1, "bogus": 2})


def test_effective_l2_bandwidth():
    assert effective_l2_bandwidth(9.1, 3.7, 64) == pytest.approx(11.85, abs=0.01)
    assert effective_l2_bandwidth(8.6, 2.9, 64) == pytest.approx(11.23, abs=0.01)
    assert effective_l2_bandwidth(10.0, 5.0) == pytest.approx(64 / 5.0)
    with pytest.raises(ValueError):
        effective_l2_bandwidth(3.0, 3.0)


positive = st.floats(min_value=0.01, max_value=1e3)


@settings(max_examples=200)
@given(base=positive, gathers=st.floats(0, 100), lat=positive, hit=st.floats(0, 1),
       line=positive, bw=positive, bump=st.floats(min_value=0.01, max_value=10))
def test_cycle_model_direction_in_each_input(base, gathers, lat, hit, line, bw, bump):
    m = CycleModelInputs(base, gathers, lat, hit, line, bw)
    t = knc_cycle_model(m).total_cycles

    def total(**kw):
        d = {**m.__dict__, **kw}
        return knc_cycle_model(CycleModelInputs(**d)).total_cycles

    # more work or slower hardware never reduces the cycle count
    assert total(base_cycles_per_iter=base + bump) > t
    assert total(gathers_per_iter=gathers + bump) >= t
    assert total(latency_per_gather_l1=lat + bump) >= t
    assert total(bytes_per_missed_line=line + bump) >= t
    # more hits or a faster L2 never increase it
    assert total(l1_hit_fraction=min(1.0, hit + bump / 10)) <= t
    assert total(effective_l2_bandwidth=bw + bump) <= t


def test_load_profiles_from_custom_file(tmp_path):
    data = {"profiles": {"toy": {"voxelsPerLoop": 2, "parts": {"part1": {"arithmetic": 3}}}}}
    path = tmp_path / "p.json"
    path.write_text(json.dumps(data))
    prof = load_profiles(path)["toy"]
    assert prof.total == 3 and prof.part_total("part2") == 0
