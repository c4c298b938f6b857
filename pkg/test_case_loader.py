#!/usr/bin/env python3
"""
Case and scenario loading: parsing, unit conversion, validation diagnostics
"""

import logging
import os
from dataclasses import replace

import pytest

from utils.case_loader import (
    dump_case,
    load_case,
    load_scenarios,
    perturb_loads,
    quadratic_to_blocks,
    validate_case,
)
from utils.errors import CaseFormatError, CaseValidationError, DanglingReferenceError, ScenarioError

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')


def data_path(name):
    return os.path.join(DATA, name)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


with open(data_path('toy2.case')) as handle:
    TOY_TEXT = handle.read()


def test_ieee30_counts():
    case = load_case(data_path('ieee30.case'))
    assert len(case.buses) == 30
    assert len(case.lines) == 41
    assert len(case.thermal_units) == 6
    assert case.wind_farms == ()
    assert case.caes_units == ()
    assert case.horizon == 24
    assert case.reserve_resolution == pytest.approx(1.0 / 6.0)
    peak = max(sum(bus.active_load[t] for bus in case.buses) for t in range(case.horizon))
    assert peak * case.mva_base == pytest.approx(283.4, rel=1e-6)


def test_quadratic_cost_expansion():
    case = load_case(data_path('ieee30.case'))
    unit = case.thermal_units[0]
    assert unit.no_load_cost == pytest.approx(210.6)
    assert len(unit.cost_blocks) == 5
    assert unit.cost_blocks[0].width * case.mva_base == pytest.approx(18.0)
    assert unit.cost_blocks[0].slope == pytest.approx(21.444)
    slopes = [block.slope for block in unit.cost_blocks]
    assert slopes == sorted(slopes)


def test_quadratic_to_blocks_widths_cover_range():
    no_load, rows = quadratic_to_blocks(0.1, 10.0, 5.0, 20.0, 70.0, 4)
    assert no_load == pytest.approx(0.1 * 400 + 200 + 5)
    assert sum(width for width, _ in rows) == pytest.approx(50.0)
    assert rows[0][1] == pytest.approx(10.0 + 0.1 * (20.0 + 32.5))


def test_toy_case_units_are_per_unit():
    case = load_case(data_path('toy2.case'))
    bus = case.bus_by_id[2]
    assert bus.active_load == pytest.approx((0.6, 0.8))
    assert case.thermal_units[0].p_max == pytest.approx(1.0)
    assert case.lines[0].mva_max == pytest.approx(1.0)
    assert case.wind_farms[0].forecast == pytest.approx((0.1, 0.2))


def test_caes_case_accepted():
    case = load_case(data_path('ieee30_wind_caes.case'))
    assert len(case.caes_units) == 1
    caes = case.caes_units[0]
    assert caes.initial_level == pytest.approx(0.8)
    assert caes.charge_steps[0].lo == pytest.approx(0.33)
    assert caes.charge_steps[-1].hi == pytest.approx(1.0)
    assert caes.discharge_steps[-1].hi * case.mva_base == pytest.approx(40.0)
    assert validate_case(case) == []


def test_self_loop_line_rejected(tmp_path):
    text = TOY_TEXT.replace('1 1 2 0.5 -10 0.01 100', '1 2 2 0.5 -10 0.01 100')
    with pytest.raises(CaseValidationError) as info:
        load_case(write(tmp_path, 'loop.case', text))
    assert any(d.field == 'from_bus/to_bus' for d in info.value.diagnostics)


def test_block_widths_must_cover_range(tmp_path):
    text = TOY_TEXT.replace('1 45 25', '1 40 25')
    with pytest.raises(CaseValidationError) as info:
        load_case(write(tmp_path, 'short.case', text))
    assert any('p_max - p_min' in d.invariant for d in info.value.diagnostics)


def test_dangling_bus_reference(tmp_path):
    text = TOY_TEXT.replace('1 2 80', '1 7 80')
    with pytest.raises(DanglingReferenceError):
        load_case(write(tmp_path, 'dangling.case', text))


def test_malformed_number_reports_location(tmp_path):
    text = TOY_TEXT.replace('1 1 2 0.5 -10 0.01 100', '1 1 2 abc -10 0.01 100')
    with pytest.raises(CaseFormatError) as info:
        load_case(write(tmp_path, 'bad.case', text))
    assert info.value.line is not None
    assert info.value.field == 'g'


def test_missing_file():
    with pytest.raises(CaseFormatError):
        load_case(data_path('does_not_exist.case'))


def test_scenarios_renormalized():
    case = load_case(data_path('ieee30_wind_caes.case'))
    scenarios = load_scenarios(data_path('ieee30_wind_15.csv'), case)
    assert len(scenarios) == 15
    assert scenarios.raw_probability_sum == pytest.approx(1.001)
    assert scenarios.renormalization_factor == pytest.approx(1.0 / 1.001)
    assert sum(scenarios.probabilities) == pytest.approx(1.0, abs=1e-12)


def test_scenarios_out_of_tolerance(tmp_path):
    case = load_case(data_path('toy2.case'))
    text = "scenario,probability,farm,hour,mw\n1,0.45,1,1,5\n1,0.45,1,2,15\n2,0.45,1,1,15\n2,0.45,1,2,25\n"
    with pytest.raises(ScenarioError):
        load_scenarios(write(tmp_path, 'bad.csv', text), case)


def test_scenarios_missing_cell(tmp_path):
    case = load_case(data_path('toy2.case'))
    text = "scenario,probability,farm,hour,mw\n1,0.5,1,1,5\n1,0.5,1,2,15\n2,0.5,1,1,15\n"
    with pytest.raises(ScenarioError) as info:
        load_scenarios(write(tmp_path, 'gap.csv', text), case)
    assert 'missing cell' in str(info.value)


def test_scenarios_unknown_farm(tmp_path):
    case = load_case(data_path('toy2.case'))
    text = "scenario,probability,farm,hour,mw\n1,1.0,3,1,5\n1,1.0,3,2,15\n"
    with pytest.raises(ScenarioError):
        load_scenarios(write(tmp_path, 'farm.csv', text), case)


def test_scenario_values_in_per_unit():
    case = load_case(data_path('toy2.case'))
    scenarios = load_scenarios(data_path('toy2_scenarios.csv'), case)
    assert scenarios.wind(1, 2, 1) == pytest.approx(0.25)
    assert scenarios.probabilities == pytest.approx((0.5, 0.5))


def test_dump_and_reload(tmp_path):
    case = load_case(data_path('ieee30_wind_caes.case'))
    path = str(tmp_path / 'normalized.case')
    dump_case(case, path)
    reloaded = load_case(path)
    assert reloaded.horizon == case.horizon
    assert len(reloaded.lines) == len(case.lines)
    for original, copy in zip(case.buses, reloaded.buses):
        assert copy.active_load == pytest.approx(original.active_load, rel=1e-12)
    for original, copy in zip(case.thermal_units, reloaded.thermal_units):
        assert copy.no_load_cost == pytest.approx(original.no_load_cost)
        assert [b.slope for b in copy.cost_blocks] == pytest.approx([b.slope for b in original.cost_blocks])
    steps = reloaded.caes_units[0].charge_steps
    assert [s.rate for s in steps] == pytest.approx([s.rate for s in case.caes_units[0].charge_steps])


def test_perturb_loads_reproducible():
    case = load_case(data_path('ieee30.case'))
    first = perturb_loads(case, 0.05, seed=11)
    second = perturb_loads(case, 0.05, seed=11)
    other = perturb_loads(case, 0.05, seed=12)
    assert first.buses == second.buses
    assert first.buses != other.buses
    assert perturb_loads(case, 0.0, seed=11) is case
    assert all(v >= 0 for bus in first.buses for v in bus.active_load)


def test_without_caes_keeps_everything_else():
    case = load_case(data_path('ieee30_wind_caes.case'))
    stripped = case.without_caes()
    assert stripped.caes_units == ()
    assert stripped.wind_farms == case.wind_farms
    assert replace(stripped, caes_units=case.caes_units) == case
