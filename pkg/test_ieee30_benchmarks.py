#!/usr/bin/env python3
"""
30-bus benchmark studies. Slow: run with `pytest -m slow`
"""

import logging
import os

import pytest

from models.scheduler import Variant
from models.solver_backends import available_backends
from utils.study_runner import ExperimentConfig, run_caes_study, run_variant_study

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif('highs' not in available_backends(), reason='HiGHS backend not installed'),
]


def data_path(name):
    return os.path.join(DATA, name)


def test_variant_study_on_30_bus(tmp_path):
    config = ExperimentConfig(case_path=data_path('ieee30.case'),
                              variants=(Variant.DC, Variant.LAC_FULL, Variant.TL_LAC),
                              overrides={'loss_blocks': 4}, mip_gap=1e-4, time_limit=600.0,
                              backend='highs', output_dir=str(tmp_path))
    report = run_variant_study(config)
    logger.info(f"expectations: {report.expectations}")
    assert all(row['status'] in ('optimal', 'feasible-gap') for row in report.runs)
    assert report.checks['tl_lac_fewer_sign_binaries']
    tl_row = next(r for r in report.runs if r['variant'] == 'tl_lac')
    assert tl_row['model_size']['delta_binaries'] == tl_row['first_level']['free_signs']


def test_loss_error_with_two_blocks_on_30_bus(tmp_path):
    config = ExperimentConfig(case_path=data_path('ieee30.case'),
                              variants=(Variant.LAC_FULL, Variant.TL_LAC),
                              overrides={'loss_blocks': 2, 'theta_max': 0.6}, mip_gap=1e-4, time_limit=600.0,
                              backend='highs', output_dir=str(tmp_path))
    report = run_variant_study(config)
    errors = {row['variant']: row['loss_error_pct'] for row in report.sections['variant_comparison']}
    logger.info(f"aggregate loss error: {errors}")
    assert errors['tl_lac'] <= 5.0
    assert errors['lac_full'] >= 3.0 * errors['tl_lac']
    assert report.checks['tl_lac_error_below_lac_full']


def test_storage_study_on_30_bus(tmp_path):
    config = ExperimentConfig(case_path=data_path('ieee30_wind_caes.case'),
                              scenario_path=data_path('ieee30_wind_15.csv'),
                              variants=(Variant.DC,), mip_gap=1e-4, time_limit=600.0,
                              backend='highs', output_dir=str(tmp_path))
    report = run_caes_study(config)
    logger.info(f"expectations: {report.expectations}")
    assert report.checks['case_ii_not_above_case_i']
    assert report.checks['case_iii_not_above_case_i']
    assert len(report.sections['gm_tbm_comparison']) == 24
