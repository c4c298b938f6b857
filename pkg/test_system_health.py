#!/usr/bin/env python3
"""
Scheduling Engine Health Check
Diagnoses missing packages, solver backends and broken bundled fixtures
"""

import os
import sys
import logging
from pathlib import Path

# Setup logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

FIXTURES = [
    ('toy2.case', 'toy2_scenarios.csv'),
    ('toy2.case', 'toy2_forecast.csv'),
    ('loop3.case', None),
    ('caes2.case', 'caes2_scenarios.csv'),
    ('ieee30.case', None),
    ('ieee57.case', None),
    ('ieee30_wind_caes.case', 'ieee30_wind_15.csv'),
    ('ieee30_wind_caes.case', 'ieee30_wind_forecast.csv'),
]

DATA = Path(__file__).resolve().parent / 'data'


def check_dependencies():
    """Check if all required dependencies are installed"""
    logger.info("Checking dependencies...")

    required_packages = ['numpy', 'scipy', 'pandas', 'dotenv']

    missing_packages = []

    for package in required_packages:
        try:
            __import__(package)
            logger.info(f"✓ {package}")
        except ImportError:
            missing_packages.append(package)
            logger.error(f"✗ {package} - MISSING")

    if missing_packages:
        logger.error(f"Missing packages: {missing_packages}")
        logger.info("Install with: pip install -r requirements.txt")
        return False

    return True


def check_backends():
    """Check which MILP backends can be used"""
    logger.info("Checking solver backends...")

    from config import Config
    from models.solver_backends import available_backends

    backends = available_backends()
    for name in ('highs', 'cbc'):
        if name in backends:
            logger.info(f"✓ {name}")
        else:
            logger.warning(f"⚠ {name} - not available")

    if Config.BACKEND not in backends:
        logger.error(f"✗ configured backend '{Config.BACKEND}' is not available")
        return False
    return True


def check_directories():
    """Check that the report directory exists and is writable"""
    logger.info("Checking directories...")

    from config import Config

    path = Path(Config.OUTPUT_FOLDER)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except Exception as e:
        logger.error(f"✗ {path} - cannot create: {e}")
        return False
    if not os.access(path, os.W_OK):
        logger.error(f"✗ {path} - exists but not writable")
        return False
    logger.info(f"✓ {path} - exists and writable")
    return True


def check_config():
    """Check that the linearization settings from the environment are consistent"""
    logger.info("Checking configuration...")

    try:
        from models.lacopf import LinearizationConfig

        config = LinearizationConfig.from_config()
        logger.info(f"✓ L={config.loss_blocks}, R={config.polygon_segments}, theta max={config.theta_max}")
        return True
    except Exception as e:
        logger.error(f"✗ Configuration error: {e}")
        return False


def check_fixtures():
    """Load every bundled case and scenario file"""
    logger.info("Checking bundled fixtures...")

    from utils.case_loader import load_case, load_scenarios

    ok = True
    for case_name, scenario_name in FIXTURES:
        try:
            case = load_case(str(DATA / case_name))
            if scenario_name:
                scenarios = load_scenarios(str(DATA / scenario_name), case)
                logger.info(f"✓ {case_name} + {scenario_name} ({len(scenarios)} scenarios)")
            else:
                logger.info(f"✓ {case_name}")
        except Exception as e:
            logger.error(f"✗ {case_name}: {e}")
            ok = False
    return ok


def check_smoke_solve():
    """Solve the two-bus toy case with the configured backend"""
    logger.info("Running smoke solve...")

    try:
        from models.lacopf import LinearizationConfig
        from models.scheduler import Variant, assemble, solve_schedule
        from utils.case_loader import load_case, load_scenarios

        case = load_case(str(DATA / 'toy2.case'))
        scenarios = load_scenarios(str(DATA / 'toy2_scenarios.csv'), case)
        solution = solve_schedule(assemble(case, scenarios, LinearizationConfig(), Variant.DC))
        if solution.solved and solution.audit.passed:
            logger.info(f"✓ toy2 solved, cost {solution.objective:.2f}")
            return True
        logger.error(f"✗ toy2 status {solution.status.value}, audit failures {solution.audit.failures}")
        return False
    except Exception as e:
        logger.error(f"✗ Smoke solve failed: {e}")
        return False


def run_health_check():
    """Run complete health check"""
    logger.info("Starting Scheduling Engine Health Check...")
    logger.info("=" * 50)

    checks = [
        ("Dependencies", check_dependencies),
        ("Backends", check_backends),
        ("Directories", check_directories),
        ("Configuration", check_config),
        ("Fixtures", check_fixtures),
        ("Smoke Solve", check_smoke_solve),
    ]

    results = {}

    for check_name, check_func in checks:
        logger.info(f"\n--- {check_name} Check ---")
        try:
            results[check_name] = check_func()
        except Exception as e:
            logger.error(f"✗ {check_name} check failed with exception: {e}")
            results[check_name] = False

    # Summary
    logger.info("\n" + "=" * 50)
    logger.info("HEALTH CHECK SUMMARY")
    logger.info("=" * 50)

    for check_name, result in results.items():
        logger.info(f"{check_name}: {'PASS' if result else 'FAIL'}")
    passed, total = sum(results.values()), len(results)

    logger.info(f"\nOverall: {passed}/{total} checks passed")

    if passed == total:
        logger.info("All checks passed! Engine is healthy.")
        return True
    else:
        logger.error("Some checks failed. Please review the issues above.")
        return False


def test_dependencies_installed():
    assert check_dependencies()


def test_configuration_consistent():
    assert check_config()


def test_fixtures_load():
    assert check_fixtures()


def main():
    """Main function"""
    if len(sys.argv) > 1 and sys.argv[1] == "--verbose":
        logging.getLogger().setLevel(logging.DEBUG)

    success = run_health_check()

    if not success:
        logger.info("\nTroubleshooting tips:")
        logger.info("1. Verify all dependencies are installed: pip install -r requirements.txt")
        logger.info("2. Install python-mip for the CBC backend and LP re-import")
        logger.info("3. Run 'python run.py validate <case>' to see every case diagnostic")
        sys.exit(1)
    else:
        logger.info("\nEngine is ready for studies!")
        sys.exit(0)


if __name__ == "__main__":
    main()
