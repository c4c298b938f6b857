#!/usr/bin/env python3
"""
Benchmark studies, report emission and the command-line entry point
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace

import pytest

from models.caes import CaesMode
from models.scheduler import Variant
from models.solver_backends import available_backends
from run import EXIT_INPUT, EXIT_OK, main
from utils.errors import ModelBuildError
from utils.report_writer import ReportWriter, emit_report
from utils.study_runner import (
    FOOTER,
    ExperimentConfig,
    Report,
    RunOutcome,
    RunSpec,
    StudyRunner,
    run_caes_study,
    run_gm_replay,
    run_variant_study,
)

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')

needs_highs = pytest.mark.skipif('highs' not in available_backends(), reason='HiGHS backend not installed')


def data_path(name):
    return os.path.join(DATA, name)


def toy_config(tmp_path, variants=(Variant.DC, Variant.LAC_FULL)):
    return ExperimentConfig(case_path=data_path('toy2.case'), scenario_path=data_path('toy2_scenarios.csv'),
                            variants=variants, mip_gap=1e-9, backend='highs', output_dir=str(tmp_path))


def caes_config(tmp_path):
    return ExperimentConfig(case_path=data_path('caes2.case'), scenario_path=data_path('caes2_scenarios.csv'),
                            variants=(Variant.DC,), mip_gap=1e-9, backend='highs', output_dir=str(tmp_path))


def stub_outcome(label, variant, mode, cost, audit_passed=True, loss_error=None, delta_binaries=0,
                 status='optimal'):
    solved = status in ('optimal', 'feasible-gap')
    loss = SimpleNamespace(aggregate=loss_error) if loss_error is not None else None
    solution = SimpleNamespace(
        solved=solved, objective=cost if solved else None, gap=0.0, air={}, delta_binaries=delta_binaries,
        audit=SimpleNamespace(passed=audit_passed, loss=loss),
        summary=lambda: {'objective': cost, 'audit': {'passed': audit_passed}},
    )
    return RunOutcome(RunSpec(label, variant, mode), status, solution)


def test_experiment_config_validation():
    with pytest.raises(ModelBuildError):
        ExperimentConfig(case_path='x.case', variants=())
    with pytest.raises(ModelBuildError):
        ExperimentConfig(case_path='x.case', parallelism=0)
    config = ExperimentConfig(case_path='x.case', variants=('dc', 'tl_lac'), caes_mode='gm',
                              overrides={'loss_blocks': 4})
    assert config.variants == (Variant.DC, Variant.TL_LAC)
    assert config.caes_mode is CaesMode.GM
    assert config.linearization().loss_blocks == 4
    assert config.to_dict()['linearization']['loss_blocks'] == 4


def test_report_passed_requires_checks_and_audits():
    report = Report(study='variants', config={})
    assert report.passed
    report.runs = [{'status': 'optimal', 'audit': {'passed': True}}]
    report.checks = {'ordering': True}
    assert report.passed
    report.checks['ordering'] = False
    assert not report.passed
    report.checks = {}
    report.runs.append({'status': 'infeasible'})
    assert not report.passed


def test_report_omits_empty_sections():
    report = Report(study='caes', config={'case_path': 'x'}, sections={'air_trajectory': [], 'replay': [{'a': 1}]})
    data = report.to_dict()
    assert list(data['sections']) == ['replay']
    assert data['footer'] == FOOTER


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        ReportWriter().write(Report(study='solve', config={}), 'xml', str(tmp_path / 'report.xml'))


def test_csv_sections(tmp_path):
    report = Report(study='caes', config={'case_path': 'x', 'linearization': {'loss_blocks': 2}},
                    runs=[{'label': 'case_i', 'status': 'optimal', 'costs': {'total': 10.0}}],
                    checks={'case_ii_not_above_case_i': True},
                    sections={'cost_comparison': [{'label': 'case_i', 'total': 10.0}], 'gm_tbm_comparison': []},
                    notes=['2 wind scenarios'])
    path = str(tmp_path / 'caes.csv')
    emit_report(report, 'csv', path)
    with open(path) as handle:
        text = handle.read()
    lines = text.splitlines()
    assert lines[0] == '# study: caes'
    assert lines[-1] == f"# footer: {FOOTER}"
    assert '# section: cost_comparison' in lines
    assert '# section: gm_tbm_comparison' not in lines
    assert '# section: expectations' not in lines
    config_header = lines[lines.index('# section: config') + 1]
    assert 'linearization.loss_blocks' in config_header.split(',')
    runs_header = lines[lines.index('# section: runs') + 1]
    assert 'costs.total' in runs_header.split(',')
    assert os.path.exists(path + '.timings.json')


@needs_highs
def test_variant_report_is_deterministic(tmp_path):
    paths = []
    for attempt in range(2):
        report = run_variant_study(toy_config(tmp_path))
        path = str(tmp_path / f"variants_{attempt}.json")
        emit_report(report, 'json', path)
        paths.append(path)
    with open(paths[0], 'rb') as first, open(paths[1], 'rb') as second:
        assert first.read() == second.read()
    with open(paths[0]) as handle:
        data = json.load(handle)
    assert data['study'] == 'variants'
    assert [row['variant'] for row in data['sections']['variant_comparison']] == ['dc', 'lac_full']
    assert 'wall_seconds' not in json.dumps(data)


@needs_highs
def test_variant_study_checks(tmp_path):
    report = run_variant_study(toy_config(tmp_path, (Variant.DC, Variant.LAC_FULL, Variant.TL_LAC)))
    assert report.passed
    assert report.checks['tl_lac_fewer_sign_binaries']
    assert report.checks['tl_lac_error_below_lac_full']
    assert report.checks['dc_cost_not_above_tl_lac']
    assert set(report.expectations) == {'lac_full_cost_not_below_tl_lac', 'dc_cost_not_above_lac_full'}
    assert 'tl_lac_faster_than_lac_full' in report.timings
    tl_row = next(r for r in report.runs if r['variant'] == 'tl_lac')
    assert 'first_level' in tl_row


@needs_highs
def test_single_variant_note(tmp_path):
    report = run_variant_study(toy_config(tmp_path, (Variant.DC,)))
    assert 'single variant: no comparisons evaluated' in report.notes
    assert report.checks == {}
    assert report.expectations == {}


def test_storage_study_needs_storage(tmp_path):
    with pytest.raises(ModelBuildError):
        run_caes_study(toy_config(tmp_path))


@needs_highs
def test_storage_study(tmp_path):
    report = run_caes_study(caes_config(tmp_path))
    assert report.checks['case_ii_not_above_case_i']
    assert report.checks['case_iii_not_above_case_i']
    assert [row['label'] for row in report.sections['cost_comparison']] == ['case_i', 'case_ii', 'case_iii']
    assert len(report.sections['gm_tbm_comparison']) == 7
    assert {row['label'] for row in report.sections['air_trajectory']} == {'case_ii', 'case_iii'}
    assert 'zero_shedding' in report.expectations
    assert all(row['status'] == 'optimal' for row in report.runs)


@needs_highs
def test_replay_study(tmp_path):
    report = run_gm_replay(caes_config(tmp_path))
    assert [row['label'] for row in report.runs] == ['gm', 'tbm']
    summary = report.sections['replay'][0]
    assert summary['tbm_optimal'] is not None
    if summary['replay_status'] in ('optimal', 'feasible-gap'):
        assert report.checks['replay_not_below_tbm']
        assert summary['replay_excess'] >= -1e-6 * abs(summary['tbm_optimal'])
    elif summary['replay_status'] == 'infeasible':
        assert 'generic-model decisions are infeasible under the thermodynamic model' in report.notes
        assert 'gm_replayed' not in [row['label'] for row in report.runs]


def test_cli_validate(capsys):
    assert main(['validate', data_path('toy2.case')]) == EXIT_OK
    assert capsys.readouterr().out.startswith('OK toy2')


def test_cli_validate_reports_diagnostics(tmp_path, capsys):
    with open(data_path('toy2.case')) as handle:
        text = handle.read().replace('1 1 2 0.5 -10 0.01 100', '1 2 2 0.5 -10 0.01 100')
    path = tmp_path / 'broken.case'
    path.write_text(text)
    assert main(['validate', str(path)]) == EXIT_INPUT
    assert 'INVALID line 1.from_bus/to_bus' in capsys.readouterr().out


def test_cli_normalize(tmp_path):
    out = str(tmp_path / 'normalized.case')
    assert main(['validate', data_path('caes2.case'), '--normalize', out]) == EXIT_OK
    assert main(['validate', out]) == EXIT_OK


def test_cli_input_error(tmp_path):
    code = main(['study', 'caes', data_path('toy2.case'), '--scenarios', data_path('toy2_scenarios.csv'),
                 '--output-dir', str(tmp_path)])
    assert code == EXIT_INPUT


@needs_highs
def test_cli_solve_writes_report(tmp_path):
    report = str(tmp_path / 'solve.csv')
    code = main(['solve', data_path('toy2.case'), '--scenarios', data_path('toy2_scenarios.csv'),
                 '--variant', 'dc', '--mip-gap', '1e-9', '--backend', 'highs', '--format', 'csv',
                 '--output-dir', str(tmp_path), '--report', report])
    assert code == EXIT_OK
    assert os.path.exists(report)
    assert os.path.exists(report + '.timings.json')


@needs_highs
def test_cli_export_lp(tmp_path):
    out = str(tmp_path / 'toy.lp')
    code = main(['export-lp', data_path('toy2.case'), '--variant', 'lac_full', '--backend', 'highs',
                 '--out', out])
    assert code == EXIT_OK
    with open(out) as handle:
        text = handle.read()
    assert 'delta_k1_t1' in text
    assert text.rstrip().endswith('End')


def test_variant_orderings_fail_the_report(tmp_path, monkeypatch):
    config = toy_config(tmp_path, (Variant.DC, Variant.LAC_FULL, Variant.TL_LAC))
    runner = StudyRunner(config)
    outcomes = [
        stub_outcome('dc', Variant.DC, CaesMode.TBM, 120.0),
        stub_outcome('lac_full', Variant.LAC_FULL, CaesMode.TBM, 130.0, loss_error=30.0, delta_binaries=8),
        stub_outcome('tl_lac', Variant.TL_LAC, CaesMode.TBM, 100.0, loss_error=40.0, delta_binaries=2),
    ]
    monkeypatch.setattr(runner, 'run_all', lambda specs: outcomes)
    report = run_variant_study(config, runner)
    assert report.checks['dc_cost_not_above_tl_lac'] is False
    assert report.checks['tl_lac_error_below_lac_full'] is False
    assert report.checks['tl_lac_fewer_sign_binaries']
    assert not report.passed


def replay_report(tmp_path, monkeypatch, replay):
    config = caes_config(tmp_path)
    runner = StudyRunner(config)
    gm = stub_outcome('gm', Variant.DC, CaesMode.GM, 100.0)
    tbm = stub_outcome('tbm', Variant.DC, CaesMode.TBM, 95.0)
    monkeypatch.setattr(runner, 'run_all', lambda specs: [gm, tbm])
    monkeypatch.setattr(runner, 'execute', lambda spec, **kwargs: replay)
    return run_gm_replay(config, runner)


def test_replay_with_failed_audit_fails_the_report(tmp_path, monkeypatch):
    replay = stub_outcome('gm_replayed', Variant.DC, CaesMode.TBM, 97.0, audit_passed=False)
    report = replay_report(tmp_path, monkeypatch, replay)
    assert 'gm_replayed' in [row['label'] for row in report.runs]
    assert report.checks['replay_not_below_tbm']
    assert report.checks['replay_audits_passed'] is False
    assert not report.passed


def test_air_infeasible_replay_is_reported_not_failed(tmp_path, monkeypatch):
    replay = stub_outcome('gm_replayed', Variant.DC, CaesMode.TBM, None, status='infeasible')
    report = replay_report(tmp_path, monkeypatch, replay)
    assert [row['label'] for row in report.runs] == ['gm', 'tbm']
    assert report.sections['replay'][0]['replay_status'] == 'infeasible'
    assert 'generic-model decisions are infeasible under the thermodynamic model' in report.notes
    assert report.passed


def test_replay_error_stays_in_runs(tmp_path, monkeypatch):
    replay = RunOutcome(RunSpec('gm_replayed', Variant.DC, CaesMode.TBM), 'error', error='backend crashed')
    report = replay_report(tmp_path, monkeypatch, replay)
    assert 'gm_replayed' in [row['label'] for row in report.runs]
    assert not report.passed


def test_run_counters_are_thread_safe(tmp_path):
    runner = StudyRunner(toy_config(tmp_path))
    with ThreadPoolExecutor(max_workers=8) as pool:
        for _ in range(8):
            pool.submit(lambda: [runner._tally('runs_started') for _ in range(5000)])
    assert runner.stats['runs_started'] == 40000


@needs_highs
def test_parallel_runs_are_counted(tmp_path):
    config = ExperimentConfig(case_path=data_path('toy2.case'), scenario_path=data_path('toy2_scenarios.csv'),
                              variants=(Variant.DC, Variant.LAC_LOSSLESS), mip_gap=1e-9, backend='highs',
                              output_dir=str(tmp_path), parallelism=2)
    runner = StudyRunner(config)
    report = run_variant_study(config, runner)
    assert runner.stats['runs_started'] == 2
    assert runner.stats['runs_solved'] + runner.stats['runs_failed'] == 2
    assert report.timings['stats']['runs_started'] == 2
