#!/usr/bin/env python3
"""
Linearized AC network: loss blocks, thermal polygon, sign binaries and the
adaptive angle bound
"""

import logging
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from models.lacopf import (
    LinearizationConfig,
    block_slopes,
    fill_blocks,
    piecewise_square,
    polygon_coefficients,
)
from models.milp_model import SolverLimits
from models.scheduler import FirstLevelArtifacts, Variant, assemble, solve_schedule, solve_two_level
from models.solver_backends import available_backends
from utils.case_loader import load_case, load_scenarios
from utils.errors import ModelBuildError

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
LIMITS = SolverLimits(mip_gap=1e-9, time_limit=120.0, threads=1)

needs_highs = pytest.mark.skipif('highs' not in available_backends(), reason='HiGHS backend not installed')


def data_path(name):
    return os.path.join(DATA, name)


@pytest.fixture
def toy():
    case = load_case(data_path('toy2.case'))
    return case, load_scenarios(data_path('toy2_scenarios.csv'), case)


@pytest.fixture
def loop3():
    return load_case(data_path('loop3.case'))


def test_block_slopes():
    assert block_slopes(0.6, 2) == pytest.approx([0.3, 0.9])
    assert block_slopes(1.0, 4) == pytest.approx([0.25, 0.75, 1.25, 1.75])
    with pytest.raises(ValueError):
        block_slopes(0.0, 2)
    with pytest.raises(ValueError):
        block_slopes(0.6, 0)


def test_fill_blocks_is_greedy():
    assert fill_blocks(-0.4, 0.6, 2) == pytest.approx([0.3, 0.1])
    assert fill_blocks(0.1, 0.6, 3) == pytest.approx([0.1, 0.0, 0.0])
    with pytest.raises(ValueError):
        fill_blocks(0.7, 0.6, 2)


def test_piecewise_square_exact_at_breakpoints():
    rng = np.random.default_rng(5)
    for _ in range(50):
        theta_max = float(rng.uniform(0.05, 1.0))
        blocks = int(rng.integers(1, 9))
        for m in range(blocks + 1):
            theta = m * theta_max / blocks
            assert piecewise_square(theta, theta_max, blocks) == pytest.approx(theta * theta, abs=1e-12)
            assert piecewise_square(-theta, theta_max, blocks) == pytest.approx(theta * theta, abs=1e-12)


def test_piecewise_square_overestimates_between_breakpoints():
    rng = np.random.default_rng(9)
    for _ in range(200):
        theta_max = float(rng.uniform(0.05, 1.0))
        blocks = int(rng.integers(1, 9))
        theta = float(rng.uniform(-theta_max, theta_max))
        chord = piecewise_square(theta, theta_max, blocks)
        assert chord >= theta * theta - 1e-12
        # chord error is at most a quarter of the squared block width
        assert chord - theta * theta <= (theta_max / blocks) ** 2 / 4 + 1e-12


def test_polygon_vertices_on_circle():
    for segments in (4, 8, 12):
        rows = polygon_coefficients(segments)
        assert len(rows) == segments
        rating = 1.7
        for r in range(segments):
            angle = 2 * math.pi * r / segments
            p, q = rating * math.cos(angle), rating * math.sin(angle)
            for a, b, c in rows:
                assert a * p + b * q <= c * rating + 1e-12


def test_polygon_excludes_points_outside_circle():
    rows = polygon_coefficients(12)
    for angle in np.linspace(0, 2 * math.pi, 37):
        p, q = 1.01 * math.cos(angle), 1.01 * math.sin(angle)
        assert any(a * p + b * q > c + 1e-12 for a, b, c in rows)


def test_polygon_keeps_inscribed_disc():
    segments = 12
    rows = polygon_coefficients(segments)
    inner = math.cos(math.pi / segments)
    for angle in np.linspace(0, 2 * math.pi, 73):
        p, q = inner * math.cos(angle), inner * math.sin(angle)
        assert all(a * p + b * q <= c + 1e-12 for a, b, c in rows)


def test_linearization_config_validation():
    with pytest.raises(ModelBuildError):
        LinearizationConfig(loss_blocks=0)
    with pytest.raises(ModelBuildError):
        LinearizationConfig(polygon_segments=3)
    with pytest.raises(ModelBuildError):
        LinearizationConfig(sign_tolerance=0.1, theta_max_floor=0.05)
    with pytest.raises(ModelBuildError):
        LinearizationConfig(theta_max_margin=0.9)


def test_adaptive_theta_max():
    config = LinearizationConfig()
    assert config.adaptive_value(0.2) == pytest.approx(0.25)
    assert config.adaptive_value(0.01) == pytest.approx(0.05)
    adaptive = config.with_adaptive({(1, 1, None): 0.25})
    assert adaptive.theta_max_for(1, 1) == pytest.approx(0.25)
    assert config.theta_max_for(1, 1) == pytest.approx(0.6)
    with pytest.raises(ModelBuildError):
        adaptive.theta_max_for(2, 1)


def test_stage_one_only_signs_keep_global_bound_in_scenarios():
    config = LinearizationConfig(fix_scenario_signs=False).with_adaptive({(1, 1, None): 0.25})
    assert config.theta_max_for(1, 1, 2) == pytest.approx(0.6)
    assert config.theta_max_for(1, 1) == pytest.approx(0.25)


def test_sign_binary_count_full_variant(toy):
    case, scenarios = toy
    model = assemble(case, scenarios, LinearizationConfig(), Variant.LAC_FULL)
    hours, lines = case.horizon, len(case.lines)
    assert model.size_summary()['delta_binaries'] == lines * hours * (1 + len(scenarios))


@pytest.mark.parametrize('variant', [Variant.DC, Variant.LAC_LOSSLESS])
def test_lossless_variants_have_no_sign_binaries(toy, variant):
    case, scenarios = toy
    model = assemble(case, scenarios, LinearizationConfig(), variant)
    assert model.size_summary()['delta_binaries'] == 0


@pytest.mark.parametrize('variant', [Variant.DC, Variant.LAC_LOSSLESS])
def test_lossless_angles_ignore_theta_max(toy, variant):
    case, scenarios = toy
    model = assemble(case, scenarios, LinearizationConfig(theta_max=0.05), variant)
    theta = model.varsets.first_stage_network.theta[(1, 1)]
    assert (theta.lo, theta.hi) == (-math.pi, math.pi)


def test_lossy_angles_stay_within_theta_max(toy):
    case, scenarios = toy
    model = assemble(case, scenarios, LinearizationConfig(theta_max=0.3), Variant.LAC_FULL)
    theta = model.varsets.first_stage_network.theta[(1, 1)]
    assert (theta.lo, theta.hi) == (-0.3, 0.3)


def _artifacts(case, scenarios, sign, theta_hat):
    keys = [(line.id, t, w) for line in case.lines for t in case.hours
            for w in [None] + list(range(1, len(scenarios) + 1))]
    return FirstLevelArtifacts({k: sign for k in keys}, {k: theta_hat for k in keys})


def test_fixed_signs_remove_binaries(toy):
    case, scenarios = toy
    model = assemble(case, scenarios, LinearizationConfig(), Variant.TL_LAC, _artifacts(case, scenarios, 1, 0.2))
    assert model.size_summary()['delta_binaries'] == 0
    network = model.varsets.first_stage_network
    assert network.theta_max[(1, 1)] == pytest.approx(0.25)
    assert network.theta_minus[(1, 1)].hi == 0.0
    assert network.theta_plus[(1, 1)].hi == pytest.approx(0.25)


def test_ambiguous_signs_stay_binary(toy):
    case, scenarios = toy
    artifacts = _artifacts(case, scenarios, 0, 0.01)
    artifacts.signs[(1, 2, None)] = None
    model = assemble(case, scenarios, LinearizationConfig(), Variant.TL_LAC, artifacts)
    assert model.size_summary()['delta_binaries'] == 1
    network = model.varsets.first_stage_network
    assert network.theta_max[(1, 1)] == pytest.approx(0.05)
    assert network.theta_plus[(1, 1)].hi == 0.0


def test_stage_one_only_signs_leave_scenario_binaries(toy):
    case, scenarios = toy
    config = LinearizationConfig(fix_scenario_signs=False)
    model = assemble(case, scenarios, config, Variant.TL_LAC, _artifacts(case, scenarios, 1, 0.2))
    assert model.size_summary()['delta_binaries'] == len(case.lines) * case.horizon * len(scenarios)


def test_lac_equations_need_voltage_varset(loop3):
    from models.lacopf import FIRST_STAGE, NetworkVarSet, emit_flow_and_loss
    from models.milp_model import MilpModel

    model = MilpModel('dc_only')
    varset = NetworkVarSet.allocate(model, loop3, FIRST_STAGE, LinearizationConfig(), False, False)
    with pytest.raises(ModelBuildError):
        emit_flow_and_loss(model, loop3, FIRST_STAGE, LinearizationConfig(), varset)


@needs_highs
def test_dc_flows_follow_angles(loop3):
    solution = solve_schedule(assemble(loop3, None, LinearizationConfig(), Variant.DC), LIMITS, 'highs')
    assert solution.solved
    assert solution.audit.flow_residual <= 1e-6
    for line in loop3.lines:
        for t in loop3.hours:
            p_mw, _ = solution.flows[(line.id, t, None)]
            assert p_mw == pytest.approx(-line.b * solution.angles[(line.id, t, None)] * loop3.mva_base, abs=1e-4)


@needs_highs
def test_lossless_lac_reduces_to_dc_without_conductance(loop3):
    lines = tuple(replace(line, g=0.0, b0=0.0) for line in loop3.lines)
    buses = tuple(replace(bus, dv_min=-0.5, dv_max=0.5) for bus in loop3.buses)
    case = replace(loop3, lines=lines, buses=buses)
    config = LinearizationConfig()
    dc = solve_schedule(assemble(case, None, config, Variant.DC), LIMITS, 'highs')
    lac = solve_schedule(assemble(case, None, config, Variant.LAC_LOSSLESS), LIMITS, 'highs')
    assert dc.solved and lac.solved
    assert lac.objective == pytest.approx(dc.objective, rel=1e-6)


@needs_highs
def test_full_variant_losses_and_exclusivity(loop3):
    solution = solve_schedule(assemble(loop3, None, LinearizationConfig(), Variant.LAC_FULL), LIMITS, 'highs')
    assert solution.solved
    assert solution.audit.passed, solution.audit.failures
    assert solution.audit.sign_product <= 1e-9
    assert solution.audit.loss is not None
    for t in loop3.hours:
        generation = sum(solution.dispatch[(u.id, t)] for u in loop3.thermal_units)
        demand = sum(bus.active_load[t - 1] for bus in loop3.buses) * loop3.mva_base
        loss = sum(solution.losses[(line.id, t, None)][0] for line in loop3.lines)
        assert loss > 0
        assert generation == pytest.approx(demand + loss, abs=1e-4)


@needs_highs
def test_two_level_loss_error_below_full_variant(loop3):
    config = LinearizationConfig()
    full = solve_schedule(assemble(loop3, None, config, Variant.LAC_FULL), LIMITS, 'highs')
    tl, artifacts, timings = solve_two_level(loop3, None, config, limits=LIMITS, backend='highs')
    assert full.solved and tl.solved
    assert tl.delta_binaries == artifacts.free_count
    assert tl.delta_binaries < full.delta_binaries
    assert tl.audit.loss.aggregate < full.audit.loss.aggregate
    assert tl.objective >= timings['level1_objective'] - 1e-6 * abs(tl.objective)
