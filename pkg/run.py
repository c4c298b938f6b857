import argparse
import logging
import os
import sys

from config import Config
from models.caes import CaesMode
from models.milp_model import export_lp
from models.scheduler import Variant, assemble, extract_first_level, solve_schedule
from utils.case_loader import dump_case, load_case, load_scenarios
from utils.errors import (
    BackendUnavailableError,
    CaseFormatError,
    CaseValidationError,
    DanglingReferenceError,
    ModelBuildError,
    ScenarioError,
)
from utils.report_writer import emit_report
from utils.study_runner import STUDIES, ExperimentConfig

# Setup logging
logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2

INPUT_ERRORS = (CaseFormatError, CaseValidationError, DanglingReferenceError, ScenarioError,
                ModelBuildError, BackendUnavailableError, FileNotFoundError, ValueError)

# CLI flag -> LinearizationConfig field
LINEARIZATION_FLAGS = {
    'loss_blocks': 'loss_blocks',
    'polygon_segments': 'polygon_segments',
    'theta_max': 'theta_max',
    'sign_tolerance': 'sign_tolerance',
    'theta_max_margin': 'theta_max_margin',
    'theta_max_floor': 'theta_max_floor',
    'big_m_margin': 'big_m_margin',
}


def add_experiment_arguments(parser: argparse.ArgumentParser, multi_variant: bool = True):
    parser.add_argument('case', help='case file')
    parser.add_argument('--scenarios', help='wind scenario CSV (omit for the deterministic model)')
    if multi_variant:
        parser.add_argument('--variants', nargs='+', choices=[v.value for v in Variant],
                            default=[v.value for v in (Variant.DC, Variant.LAC_FULL, Variant.TL_LAC)])
    else:
        parser.add_argument('--variant', choices=[v.value for v in Variant], default=Variant.TL_LAC.value)
    parser.add_argument('--caes-mode', choices=[m.value for m in CaesMode], default=CaesMode.TBM.value)
    parser.add_argument('--backend', choices=['highs', 'cbc'], default=Config.BACKEND)
    parser.add_argument('--mip-gap', type=float, default=Config.MIP_GAP)
    parser.add_argument('--time-limit', type=float, default=Config.TIME_LIMIT)
    parser.add_argument('--threads', type=int, default=Config.THREADS)
    parser.add_argument('--loss-blocks', type=int)
    parser.add_argument('--polygon-segments', type=int)
    parser.add_argument('--theta-max', type=float)
    parser.add_argument('--sign-tolerance', type=float)
    parser.add_argument('--theta-max-margin', type=float)
    parser.add_argument('--theta-max-floor', type=float)
    parser.add_argument('--big-m-margin', type=float)
    parser.add_argument('--stage-one-signs-only', action='store_true',
                        help='fix first-level signs in the first stage only')
    parser.add_argument('--eta-ch', type=float, default=Config.GM_ETA_CH)
    parser.add_argument('--eta-dis', type=float, default=Config.GM_ETA_DIS)
    parser.add_argument('--terminal-air', type=float, default=Config.TERMINAL_AIR_FRACTION,
                        help='require A(T+1) >= fraction * A max')
    parser.add_argument('--seed', type=int, default=Config.DEFAULT_SEED)
    parser.add_argument('--load-noise', type=float, default=0.0, help='sigma of multiplicative load noise')
    parser.add_argument('--parallelism', type=int, default=Config.STUDY_PARALLELISM)
    parser.add_argument('--output-dir', default=Config.OUTPUT_FOLDER)
    parser.add_argument('--report', help='report path (default: <output-dir>/<study>.<format>)')
    parser.add_argument('--format', choices=['json', 'csv'], default='json')


def experiment_from_args(args) -> ExperimentConfig:
    overrides = {field: getattr(args, flag) for flag, field in LINEARIZATION_FLAGS.items()
                 if getattr(args, flag, None) is not None}
    if args.stage_one_signs_only:
        overrides['fix_scenario_signs'] = False
    variants = getattr(args, 'variants', None) or [args.variant]
    return ExperimentConfig(
        case_path=args.case,
        scenario_path=args.scenarios,
        variants=tuple(Variant(v) for v in variants),
        caes_mode=CaesMode(args.caes_mode),
        overrides=overrides,
        mip_gap=args.mip_gap,
        time_limit=args.time_limit,
        threads=args.threads,
        backend=args.backend,
        output_dir=args.output_dir,
        seed=args.seed,
        load_noise=args.load_noise,
        eta_ch=args.eta_ch,
        eta_dis=args.eta_dis,
        terminal_air_fraction=args.terminal_air,
        parallelism=args.parallelism,
    )


def command_validate(args) -> int:
    try:
        case = load_case(args.case)
    except CaseValidationError as e:
        for diagnostic in e.diagnostics:
            print(f"INVALID {diagnostic}")
        return EXIT_INPUT
    if args.scenarios:
        scenarios = load_scenarios(args.scenarios, case, Config.SCENARIO_PROBABILITY_TOLERANCE)
        print(f"scenarios: {len(scenarios)} (renormalization factor {scenarios.renormalization_factor:.9g})")
    if args.normalize:
        dump_case(case, args.normalize)
        print(f"normalized case written to {args.normalize}")
    print(f"OK {case.name}: {len(case.buses)} buses, {len(case.lines)} lines, "
          f"{len(case.thermal_units)} thermal units, {len(case.wind_farms)} wind farms, "
          f"{len(case.caes_units)} CAES units, T={case.horizon}")
    return EXIT_OK


def run_study(study: str, args) -> int:
    config = experiment_from_args(args)
    Config.ensure_dirs(config.output_dir)
    report = STUDIES[study](config)
    path = args.report or os.path.join(config.output_dir, f"{study}.{args.format}")
    emit_report(report, args.format, path)
    print(f"{study}: {'PASSED' if report.passed else 'FAILED'} -> {path}")
    return EXIT_OK if report.passed else EXIT_FAILED


def command_export_lp(args) -> int:
    config = experiment_from_args(args)
    case = load_case(config.case_path)
    scenarios = load_scenarios(config.scenario_path, case) if config.scenario_path else None
    linearization = config.linearization()
    variant = config.variants[0]
    artifacts = None
    if variant is Variant.TL_LAC:
        level1 = assemble(case, scenarios, linearization, Variant.LAC_LOSSLESS, options=config.options())
        artifacts = extract_first_level(solve_schedule(level1, config.limits(), config.backend), linearization)
    model = assemble(case, scenarios, linearization, variant, artifacts, config.options())
    export_lp(model, args.out)
    print(f"exported {model.name} to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='run.py', description='Two-stage stochastic day-ahead scheduling with linearized AC flow and CAES')
    sub = parser.add_subparsers(dest='command', required=True)

    validate = sub.add_parser('validate', help='parse and validate a case file')
    validate.add_argument('case')
    validate.add_argument('--scenarios')
    validate.add_argument('--normalize', metavar='OUT', help='write the parsed case back in canonical form')

    solve = sub.add_parser('solve', help='solve one variant')
    add_experiment_arguments(solve, multi_variant=False)

    study = sub.add_parser('study', help='run a benchmark study')
    studies = study.add_subparsers(dest='study', required=True)
    add_experiment_arguments(studies.add_parser('variants', help='network variant comparison'))
    for name, text in (('caes', 'no storage vs generic vs thermodynamic CAES'),
                       ('replay', 'generic-model schedule replayed under the thermodynamic model')):
        add_experiment_arguments(studies.add_parser(name, help=text), multi_variant=False)

    export = sub.add_parser('export-lp', help='write the assembled model as an LP file')
    add_experiment_arguments(export, multi_variant=False)
    export.add_argument('--out', required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == 'validate':
            return command_validate(args)
        if args.command == 'solve':
            return run_study('solve', args)
        if args.command == 'study':
            return run_study(args.study, args)
        return command_export_lp(args)
    except INPUT_ERRORS as e:
        logger.error(f"Input error: {e}")
        print(f"ERROR {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
