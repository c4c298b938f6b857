import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from config import Config
from models.caes import CaesMode
from models.lacopf import LinearizationConfig
from models.milp_model import SolverLimits, SolveStatus
from models.scheduler import (
    FirstLevelArtifacts,
    ScheduleOptions,
    Variant,
    assemble,
    fix_storage_decisions,
    solve_schedule,
    solve_two_level,
)
from models.solution_decoder import ScheduleSolution
from utils.case_loader import ScenarioSet, SystemCase, load_case, load_scenarios, perturb_loads
from utils.errors import CaesBenchError, ModelBuildError, ScenarioError

REDUCTION_BAND = (3.0, 10.0)  # % cost reduction expected from storage on the wind fixture

FOOTER = ("Reference cost figures are ordering and band targets only: the hourly load and wind "
          "inputs behind them are not available as data, so dollar values are not expected to match.")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one study"""
    case_path: str
    scenario_path: Optional[str] = None
    variants: Tuple[Variant, ...] = (Variant.TL_LAC,)
    caes_mode: CaesMode = CaesMode.TBM
    overrides: Dict[str, Any] = field(default_factory=dict)  # LinearizationConfig fields
    mip_gap: float = Config.MIP_GAP
    time_limit: float = Config.TIME_LIMIT
    threads: int = Config.THREADS
    backend: str = Config.BACKEND
    output_dir: str = Config.OUTPUT_FOLDER
    seed: int = Config.DEFAULT_SEED
    load_noise: float = 0.0
    eta_ch: float = Config.GM_ETA_CH
    eta_dis: float = Config.GM_ETA_DIS
    terminal_air_fraction: Optional[float] = Config.TERMINAL_AIR_FRACTION
    parallelism: int = Config.STUDY_PARALLELISM

    def __post_init__(self):
        self.variants = tuple(Variant(v) if not isinstance(v, Variant) else v for v in self.variants)
        if not isinstance(self.caes_mode, CaesMode):
            self.caes_mode = CaesMode(self.caes_mode)
        if not self.variants:
            raise ModelBuildError("an experiment needs at least one variant")
        if self.parallelism < 1:
            raise ModelBuildError(f"parallelism must be at least 1, got {self.parallelism}")

    def linearization(self) -> LinearizationConfig:
        return LinearizationConfig.from_config(**self.overrides)

    def limits(self) -> SolverLimits:
        return SolverLimits(mip_gap=self.mip_gap, time_limit=self.time_limit, threads=self.threads)

    def options(self, caes_mode: Optional[CaesMode] = None) -> ScheduleOptions:
        return ScheduleOptions(caes_mode=caes_mode or self.caes_mode, eta_ch=self.eta_ch,
                               eta_dis=self.eta_dis, terminal_air_fraction=self.terminal_air_fraction)

    def to_dict(self) -> Dict:
        linearization = self.linearization()
        return {
            'case_path': self.case_path,
            'scenario_path': self.scenario_path,
            'variants': [v.value for v in self.variants],
            'caes_mode': self.caes_mode.value,
            'linearization': {
                'loss_blocks': linearization.loss_blocks,
                'polygon_segments': linearization.polygon_segments,
                'theta_max': linearization.theta_max,
                'sign_tolerance': linearization.sign_tolerance,
                'theta_max_margin': linearization.theta_max_margin,
                'theta_max_floor': linearization.theta_max_floor,
                'big_m_margin': linearization.big_m_margin,
                'fix_scenario_signs': linearization.fix_scenario_signs,
            },
            'mip_gap': self.mip_gap,
            'time_limit': self.time_limit,
            'threads': self.threads,
            'backend': self.backend,
            'seed': self.seed,
            'load_noise': self.load_noise,
            'eta_ch': self.eta_ch,
            'eta_dis': self.eta_dis,
            'terminal_air_fraction': self.terminal_air_fraction,
        }


@dataclass
class RunSpec:
    label: str
    variant: Variant
    caes_mode: CaesMode
    drop_caes: bool = False


@dataclass
class RunOutcome:
    spec: RunSpec
    status: str
    solution: Optional[ScheduleSolution] = None
    artifacts: Optional[FirstLevelArtifacts] = None
    linearization: Optional[LinearizationConfig] = None
    timings: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def solved(self) -> bool:
        return self.solution is not None and self.solution.solved

    @property
    def passed(self) -> bool:
        return self.solved and self.solution.audit.passed

    @property
    def cost(self) -> Optional[float]:
        return self.solution.objective if self.solved else None

    def row(self) -> Dict:
        row = {'label': self.spec.label, 'variant': self.spec.variant.value,
               'caes_mode': self.spec.caes_mode.value, 'status': self.status}
        if self.error:
            row['error'] = self.error
        if self.solution is not None:
            row.update(self.solution.summary())
            row['status'] = self.status
        if self.artifacts is not None:
            row['first_level'] = self.artifacts.to_dict()
            row['floor_retry'] = bool(self.timings.get('floor_retry', False))
        return row


@dataclass
class Report:
    study: str
    config: Dict
    runs: List[Dict] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)              # guaranteed properties
    expectations: Dict[str, Optional[bool]] = field(default_factory=dict)  # reference orderings
    sections: Dict[str, List[Dict]] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    timings: Dict[str, Any] = field(default_factory=dict)
    schema_version: str = Config.REPORT_SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        runs_ok = all(r.get('status') in ('optimal', 'feasible-gap') and r.get('audit', {}).get('passed', False)
                      for r in self.runs)
        return runs_ok and all(self.checks.values())

    def to_dict(self) -> Dict:
        data = {
            'schema_version': self.schema_version,
            'study': self.study,
            'config': self.config,
            'runs': self.runs,
            'checks': self.checks,
            'expectations': self.expectations,
            'passed': self.passed,
            'notes': self.notes,
            'footer': FOOTER,
        }
        for name, rows in self.sections.items():
            if rows:
                data.setdefault('sections', {})[name] = rows
        return data


class StudyRunner:
    """
    Runs the solves of one study, concurrently up to the configured parallelism.

    Each run is isolated: a failure is logged and recorded as a run with
    status 'error', and the remaining runs still execute.
    """

    def __init__(self, config: ExperimentConfig, case: Optional[SystemCase] = None,
                 scenarios: Optional[ScenarioSet] = None):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.case = case if case is not None else load_case(config.case_path)
        if config.load_noise > 0:
            self.case = perturb_loads(self.case, config.load_noise, config.seed)
            self.logger.info(f"Perturbed loads with sigma {config.load_noise} (seed {config.seed})")
        if scenarios is None and config.scenario_path:
            scenarios = load_scenarios(config.scenario_path, self.case, Config.SCENARIO_PROBABILITY_TOLERANCE)
        self.scenarios = scenarios
        self.stats = self._initialize_stats()
        self._stats_lock = threading.Lock()

    def _initialize_stats(self) -> Dict:
        return {
            'runs_started': 0,
            'runs_solved': 0,
            'runs_failed': 0,
            'total_solve_seconds': 0.0,
        }

    def _tally(self, key: str, amount: float = 1) -> None:
        with self._stats_lock:
            self.stats[key] += amount

    def scenario_notes(self) -> List[str]:
        if self.scenarios is None or len(self.scenarios) == 0:
            return ['deterministic: no wind scenarios, recourse stage omitted']
        notes = [f"{len(self.scenarios)} wind scenarios"]
        if self.scenarios.renormalization_factor != 1.0:
            notes.append(f"scenario probabilities summed to {self.scenarios.raw_probability_sum:.6g}; "
                         f"renormalized by factor {self.scenarios.renormalization_factor:.9g}")
        return notes

    def execute(self, spec: RunSpec, artifacts: Optional[FirstLevelArtifacts] = None,
                linearization: Optional[LinearizationConfig] = None,
                fixed_from: Optional[ScheduleSolution] = None) -> RunOutcome:
        """
        Solve one run.

        Args:
            artifacts: reuse first-level artifacts instead of solving level 1 (TL_LAC only)
            linearization: override the experiment's linearization settings
            fixed_from: pin commitment and storage decisions to this solution before solving
        """
        self._tally('runs_started')
        case = self.case.without_caes() if spec.drop_caes else self.case
        linearization = linearization or self.config.linearization()
        limits = self.config.limits()
        options = self.config.options(spec.caes_mode)
        start = time.perf_counter()
        try:
            if spec.variant is Variant.TL_LAC and artifacts is None:
                solution, artifacts, timings = solve_two_level(case, self.scenarios, linearization, options,
                                                               limits, self.config.backend)
                if timings['floor_retry']:
                    linearization = replace(linearization, theta_max_floor=2 * linearization.theta_max_floor)
            else:
                model = assemble(case, self.scenarios, linearization, spec.variant, artifacts, options)
                if fixed_from is not None:
                    fix_storage_decisions(model, fixed_from)
                solution = solve_schedule(model, limits, self.config.backend)
                timings = {}
            elapsed = time.perf_counter() - start
            timings['wall_seconds'] = elapsed
            self._tally('total_solve_seconds', elapsed)
            self._tally('runs_solved' if solution.solved else 'runs_failed')
            self.logger.info(f"Run {spec.label}: {solution.status.value} in {elapsed:.2f}s")
            return RunOutcome(spec, solution.status.value, solution, artifacts, linearization, timings)
        except CaesBenchError as e:
            self._tally('runs_failed')
            self.logger.error(f"Run {spec.label} failed: {e}")
            return RunOutcome(spec, 'error', error=str(e),
                              timings={'wall_seconds': time.perf_counter() - start})

    def run_all(self, specs: List[RunSpec]) -> List[RunOutcome]:
        if self.config.parallelism == 1 or len(specs) == 1:
            return [self.execute(spec) for spec in specs]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            return list(pool.map(self.execute, specs))

    def new_report(self, study: str, outcomes: List[RunOutcome]) -> Report:
        report = Report(study=study, config=self.config.to_dict())
        report.runs = [outcome.row() for outcome in outcomes]
        report.notes = self.scenario_notes()
        report.timings = {'runs': {o.spec.label: o.timings for o in outcomes}, 'stats': dict(self.stats)}
        for outcome in outcomes:
            if outcome.solved and outcome.solution.air:
                report.sections.setdefault('air_trajectory', []).extend(
                    dict(label=outcome.spec.label, unit=unit_id, **row)
                    for unit_id, trajectory in sorted(outcome.solution.air.items())
                    for row in trajectory.rows())
        return report


def _gap_slack(*outcomes: RunOutcome) -> float:
    """Two MIP gaps measured on the larger of the compared costs"""
    costs = [abs(o.cost) for o in outcomes if o.cost is not None]
    gap = max([o.solution.gap or 0.0 for o in outcomes if o.solved] + [1e-9])
    return 2.0 * gap * max(costs, default=0.0)


def _loss_error(outcome: RunOutcome) -> Optional[float]:
    if not outcome.solved or outcome.solution.audit.loss is None:
        return None
    return outcome.solution.audit.loss.aggregate


def solve_single(config: ExperimentConfig, runner: Optional[StudyRunner] = None) -> Report:
    """One run of the first configured variant"""
    runner = runner or StudyRunner(config)
    spec = RunSpec(config.variants[0].value, config.variants[0], config.caes_mode)
    outcome = runner.execute(spec)
    return runner.new_report('solve', [outcome])


def run_variant_study(config: ExperimentConfig, runner: Optional[StudyRunner] = None) -> Report:
    """Solve every configured network variant on identical data and compare them"""
    runner = runner or StudyRunner(config)
    specs = [RunSpec(v.value, v, config.caes_mode) for v in config.variants]
    outcomes = runner.run_all(specs)
    report = runner.new_report('variants', outcomes)
    by_variant = {o.spec.variant: o for o in outcomes}

    dc, full, tl = by_variant.get(Variant.DC), by_variant.get(Variant.LAC_FULL), by_variant.get(Variant.TL_LAC)
    if dc is not None and tl is not None and dc.solved and tl.solved:
        report.checks['dc_cost_not_above_tl_lac'] = dc.cost <= tl.cost + _gap_slack(dc, tl)
    if full is not None and tl is not None and full.solved and tl.solved:
        full_error, tl_error = _loss_error(full), _loss_error(tl)
        if full_error is not None and tl_error is not None:
            report.checks['tl_lac_error_below_lac_full'] = tl_error < full_error
        report.checks['tl_lac_fewer_sign_binaries'] = (
            tl.solution.delta_binaries < full.solution.delta_binaries
            or full.solution.delta_binaries == 0)
        report.timings['tl_lac_faster_than_lac_full'] = (
            tl.timings.get('wall_seconds', 0.0) < full.timings.get('wall_seconds', 0.0))
        report.expectations['lac_full_cost_not_below_tl_lac'] = full.cost >= tl.cost - _gap_slack(full, tl)
    if dc is not None and full is not None and dc.solved and full.solved:
        report.expectations['dc_cost_not_above_lac_full'] = dc.cost <= full.cost + _gap_slack(dc, full)

    report.sections['variant_comparison'] = [{
        'variant': o.spec.variant.value,
        'status': o.status,
        'total_cost': o.cost,
        'loss_error_pct': _loss_error(o),
        'delta_binaries': o.solution.delta_binaries if o.solution is not None else None,
    } for o in outcomes]
    if len(outcomes) == 1:
        report.notes.append('single variant: no comparisons evaluated')
    return report


def _comparison_series(gm: ScheduleSolution, tbm: ScheduleSolution) -> Tuple[List[Dict], Dict]:
    rows = []
    summary = {}
    for unit_id in sorted(set(gm.air) & set(tbm.air)):
        gm_air, tbm_air = gm.air[unit_id], tbm.air[unit_id]
        diffs = []
        horizon = len(gm_air.charge_power)
        for index, (a_gm, a_tbm) in enumerate(zip(gm_air.levels, tbm_air.levels)):
            diff = a_gm - a_tbm
            diffs.append(diff)
            row = {'unit': unit_id, 'hour': index + 1, 'gm_A': a_gm, 'tbm_A': a_tbm, 'difference': diff}
            if index < horizon:
                row.update(gm_charge_mw=gm_air.charge_power[index], tbm_charge_mw=tbm_air.charge_power[index],
                           gm_discharge_mw=gm_air.discharge_power[index],
                           tbm_discharge_mw=tbm_air.discharge_power[index])
            rows.append(row)
        summary[str(unit_id)] = {'max_positive_difference': max(max(diffs), 0.0),
                                 'max_negative_difference': min(min(diffs), 0.0)}
    return rows, summary


def run_caes_study(config: ExperimentConfig, runner: Optional[StudyRunner] = None) -> Report:
    """Case I without storage, Case II with the generic model, Case III with the thermodynamic model"""
    runner = runner or StudyRunner(config)
    if not runner.case.caes_units or not runner.case.wind_farms:
        raise ModelBuildError(f"case {runner.case.name} needs at least one CAES unit and one wind farm")
    if runner.scenarios is None or len(runner.scenarios) == 0:
        raise ScenarioError("the storage study needs a wind scenario file")

    variant = config.variants[0]
    specs = [RunSpec('case_i', variant, CaesMode.NONE, drop_caes=True),
             RunSpec('case_ii', variant, CaesMode.GM),
             RunSpec('case_iii', variant, CaesMode.TBM)]
    case_i, case_ii, case_iii = runner.run_all(specs)
    report = runner.new_report('caes', [case_i, case_ii, case_iii])

    table = []
    for outcome in (case_i, case_ii, case_iii):
        row = {'label': outcome.spec.label, 'caes_mode': outcome.spec.caes_mode.value, 'status': outcome.status}
        if outcome.solved:
            row.update(outcome.solution.costs.to_dict())
            if case_i.solved and case_i.cost:
                row['reduction_vs_case_i_pct'] = (case_i.cost - outcome.cost) / case_i.cost * 100.0
        table.append(row)
    report.sections['cost_comparison'] = table

    for outcome in (case_ii, case_iii):
        if case_i.solved and outcome.solved:
            report.checks[f"{outcome.spec.label}_not_above_case_i"] = (
                outcome.cost <= case_i.cost + _gap_slack(case_i, outcome))
            reduction = (case_i.cost - outcome.cost) / case_i.cost * 100.0
            report.expectations[f"{outcome.spec.label}_reduction_in_band"] = (
                REDUCTION_BAND[0] <= reduction <= REDUCTION_BAND[1])
    solved = [o for o in (case_i, case_ii, case_iii) if o.solved]
    if solved:
        report.expectations['zero_shedding'] = all(o.solution.costs.shed <= 1e-6 for o in solved)

    if case_ii.solved and case_iii.solved:
        rows, summary = _comparison_series(case_ii.solution, case_iii.solution)
        report.sections['gm_tbm_comparison'] = rows
        report.sections['gm_tbm_excursions'] = [dict(unit=int(k), **v) for k, v in sorted(summary.items())]
    return report


def run_gm_replay(config: ExperimentConfig, runner: Optional[StudyRunner] = None) -> Report:
    """
    Evaluate the generic-model schedule under the thermodynamic model.

    The TBM model is re-solved with commitment and storage schedule fixed to the
    GM optimum, on the same network linearization as the TBM run.
    """
    runner = runner or StudyRunner(config)
    if not runner.case.caes_units:
        raise ModelBuildError(f"case {runner.case.name} has no CAES unit to replay")

    variant = config.variants[0]
    gm, tbm = runner.run_all([RunSpec('gm', variant, CaesMode.GM), RunSpec('tbm', variant, CaesMode.TBM)])
    outcomes = [gm, tbm]
    if gm.solved and tbm.solved:
        replay = runner.execute(RunSpec('gm_replayed', variant, CaesMode.TBM), artifacts=tbm.artifacts,
                                linearization=tbm.linearization, fixed_from=gm.solution)
        outcomes.append(replay)
    else:
        replay = None
    report = runner.new_report('replay', outcomes)
    air_infeasible = replay is not None and replay.status == SolveStatus.INFEASIBLE.value
    if air_infeasible:
        # an air-infeasible replay is a finding, not a failed run
        report.runs = [r for r in report.runs if r['label'] != 'gm_replayed']

    summary = {
        'gm_nominal': gm.cost,
        'tbm_optimal': tbm.cost,
        'gm_replayed': replay.cost if replay is not None else None,
        'replay_status': replay.status if replay is not None else 'not-run',
    }
    if replay is not None and replay.solved:
        summary['replay_excess'] = replay.cost - tbm.cost
        report.checks['replay_not_below_tbm'] = replay.cost >= tbm.cost - _gap_slack(tbm, replay)
        report.checks['replay_audits_passed'] = replay.passed
        report.sections['replay_air_trajectory'] = [
            dict(unit=unit_id, **row)
            for unit_id, trajectory in sorted(replay.solution.air.items()) for row in trajectory.rows()]
    elif air_infeasible:
        runner.logger.warning(f"GM schedule is infeasible under the thermodynamic model ({replay.status})")
        report.notes.append('generic-model decisions are infeasible under the thermodynamic model')
    report.sections['replay'] = [summary]
    return report


STUDIES = {
    'solve': solve_single,
    'variants': run_variant_study,
    'caes': run_caes_study,
    'replay': run_gm_replay,
}
