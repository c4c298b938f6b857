#!/usr/bin/env python3
"""
57-bus benchmark study. Slow: run with `pytest -m slow`
"""

import logging
import os

import pytest

from models.scheduler import Variant
from models.solver_backends import available_backends
from utils.case_loader import load_case, validate_case
from utils.study_runner import ExperimentConfig, run_variant_study

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

CASE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'ieee57.case')

needs_highs = pytest.mark.skipif('highs' not in available_backends(), reason='HiGHS backend not installed')


def test_57_bus_case_is_well_formed():
    case = load_case(CASE)
    assert validate_case(case) == []
    assert len(case.buses) == 57
    assert len(case.lines) == 80
    assert [u.bus for u in case.thermal_units] == [1, 2, 3, 6, 8, 9, 12]
    peak = sum(max(bus.active_load) for bus in case.buses) * case.mva_base
    assert peak == pytest.approx(1250.8)


@pytest.mark.slow
@needs_highs
def test_variant_study_on_57_bus(tmp_path):
    config = ExperimentConfig(case_path=CASE, variants=(Variant.DC, Variant.LAC_FULL, Variant.TL_LAC),
                              mip_gap=1e-3, time_limit=1200.0, backend='highs', output_dir=str(tmp_path))
    report = run_variant_study(config)
    logger.info(f"checks: {report.checks}, expectations: {report.expectations}")
    assert all(row['status'] in ('optimal', 'feasible-gap') for row in report.runs)
    assert report.checks['dc_cost_not_above_tl_lac']
    assert report.checks['tl_lac_fewer_sign_binaries']
    assert report.checks['tl_lac_error_below_lac_full']
