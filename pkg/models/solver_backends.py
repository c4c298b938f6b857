"""
Backend adapters: load a MilpModel, apply limits, solve, read values back.

``highs`` goes through scipy.optimize.milp; ``cbc`` through python-mip, which
can also re-import exported LP files.
"""

import logging
import math
import time
from abc import ABC, abstractmethod
from typing import Dict, List, Optional

from config import Config
from models.milp_model import MilpModel, Sense, SolveResult, SolveStatus, SolverLimits
from utils.errors import BackendUnavailableError, SolveError

try:
    from scipy.optimize import Bounds, LinearConstraint, milp
except ImportError:
    milp = None

try:
    import mip
except ImportError:
    mip = None

BINARY_TOLERANCE = 1e-6


def _round_binaries(model: MilpModel, values: Dict[str, float]) -> Dict[str, float]:
    for var in model.binaries:
        value = values[var.name]
        nearest = round(value)
        if abs(value - nearest) <= BINARY_TOLERANCE:
            values[var.name] = float(nearest)
    return values


class SolverBackend(ABC):
    name = 'abstract'

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    @classmethod
    @abstractmethod
    def available(cls) -> bool:
        ...

    @abstractmethod
    def solve(self, model: MilpModel, limits: SolverLimits) -> SolveResult:
        ...

    def _log_result(self, model: MilpModel, result: SolveResult):
        objective = f"{result.objective:.6f}" if result.objective is not None else 'n/a'
        gap = f"{result.gap:.2e}" if result.gap is not None else 'n/a'
        self.logger.info(
            f"[{self.name}] {model.name}: status={result.status.value}, objective={objective}, "
            f"gap={gap}, time={result.wall_time:.2f}s")


class HighsBackend(SolverBackend):
    """HiGHS branch-and-cut via scipy.optimize.milp"""
    name = 'highs'

    @classmethod
    def available(cls) -> bool:
        return milp is not None

    def solve(self, model: MilpModel, limits: SolverLimits) -> SolveResult:
        if not self.available():
            raise BackendUnavailableError("scipy.optimize.milp is not available; install scipy >= 1.9")
        if limits.threads != 1:
            self.logger.debug("scipy.optimize.milp ignores the thread setting")

        c, matrix, row_lo, row_hi, lb, ub, integrality = model.to_arrays()
        constraints = [LinearConstraint(matrix, row_lo, row_hi)] if model.num_constraints else None
        options = {
            'disp': False,
            'time_limit': limits.time_limit,
            'mip_rel_gap': limits.mip_gap,
        }

        start = time.perf_counter()
        try:
            res = milp(c=c, constraints=constraints, bounds=Bounds(lb, ub),
                       integrality=integrality, options=options)
        except Exception as e:
            raise SolveError(f"HiGHS failed on {model.name}: {e}")
        elapsed = time.perf_counter() - start

        has_x = res.x is not None
        if res.status == 0:
            status = SolveStatus.OPTIMAL
        elif res.status == 1:
            status = SolveStatus.FEASIBLE_GAP if has_x else SolveStatus.TIME_LIMIT
        elif res.status == 2:
            status = SolveStatus.INFEASIBLE
        elif res.status == 3:
            status = SolveStatus.UNBOUNDED
        else:
            raise SolveError(f"HiGHS returned status {res.status} on {model.name}: {res.message}")

        values: Dict[str, float] = {}
        objective = bound = gap = None
        if status.has_solution and has_x:
            values = _round_binaries(model, {v.name: float(x) for v, x in zip(model.variables, res.x)})
            objective = float(res.fun) + model.objective_constant
            dual_bound = getattr(res, 'mip_dual_bound', None)
            bound = float(dual_bound) + model.objective_constant if dual_bound is not None else objective
            mip_gap = getattr(res, 'mip_gap', None)
            gap = float(mip_gap) if mip_gap is not None and math.isfinite(mip_gap) else 0.0

        result = SolveResult(status, objective, values, bound, gap, elapsed, self.name, str(res.message))
        self._log_result(model, result)
        return result


class CbcBackend(SolverBackend):
    """COIN-OR CBC via python-mip"""
    name = 'cbc'

    STATUS = {}
    if mip is not None:
        STATUS = {
            mip.OptimizationStatus.OPTIMAL: SolveStatus.OPTIMAL,
            mip.OptimizationStatus.FEASIBLE: SolveStatus.FEASIBLE_GAP,
            mip.OptimizationStatus.INFEASIBLE: SolveStatus.INFEASIBLE,
            mip.OptimizationStatus.INT_INFEASIBLE: SolveStatus.INFEASIBLE,
            mip.OptimizationStatus.UNBOUNDED: SolveStatus.UNBOUNDED,
            mip.OptimizationStatus.NO_SOLUTION_FOUND: SolveStatus.TIME_LIMIT,
        }

    @classmethod
    def available(cls) -> bool:
        return mip is not None

    def _new_model(self, limits: SolverLimits):
        problem = mip.Model(sense=mip.MINIMIZE, solver_name=mip.CBC)
        problem.verbose = 0
        problem.max_mip_gap = limits.mip_gap
        problem.threads = limits.threads
        return problem

    def _run(self, problem, limits: SolverLimits, label: str):
        start = time.perf_counter()
        try:
            raw_status = problem.optimize(max_seconds=limits.time_limit)
        except Exception as e:
            raise SolveError(f"CBC failed on {label}: {e}")
        elapsed = time.perf_counter() - start
        if raw_status not in self.STATUS:
            raise SolveError(f"CBC returned status {raw_status} on {label}")
        return self.STATUS[raw_status], elapsed

    def _gap(self, objective: float, bound: Optional[float]) -> float:
        if bound is None:
            return 0.0
        return abs(objective - bound) / max(abs(objective), 1e-10)

    def solve(self, model: MilpModel, limits: SolverLimits) -> SolveResult:
        if not self.available():
            raise BackendUnavailableError("python-mip is not installed")

        problem = self._new_model(limits)
        handles = []
        for var in model.variables:
            handles.append(problem.add_var(
                name=var.name,
                lb=var.lo if var.lo != -math.inf else -mip.INF,
                ub=var.hi if var.hi != math.inf else mip.INF,
                var_type=mip.BINARY if var.is_binary else mip.CONTINUOUS,
            ))
        for constraint in model.constraints:
            if constraint.is_vacuous:
                continue
            lhs = mip.xsum(coef * handles[index] for index, coef in constraint.terms)
            if constraint.sense is Sense.LE:
                problem.add_constr(lhs <= constraint.rhs, name=constraint.lp_name)
            elif constraint.sense is Sense.GE:
                problem.add_constr(lhs >= constraint.rhs, name=constraint.lp_name)
            else:
                problem.add_constr(lhs == constraint.rhs, name=constraint.lp_name)
        problem.objective = mip.minimize(
            mip.xsum(coef * handles[index] for index, coef in model.objective.items()))

        status, elapsed = self._run(problem, limits, model.name)
        values: Dict[str, float] = {}
        objective = bound = gap = None
        if status.has_solution:
            values = _round_binaries(model, {v.name: float(h.x) for v, h in zip(model.variables, handles)})
            objective = float(problem.objective_value) + model.objective_constant
            bound = float(problem.objective_bound) + model.objective_constant
            gap = self._gap(objective, bound)

        result = SolveResult(status, objective, values, bound, gap, elapsed, self.name)
        self._log_result(model, result)
        return result

    def solve_file(self, path: str, limits: SolverLimits) -> SolveResult:
        if not self.available():
            raise BackendUnavailableError("python-mip is not installed")
        problem = self._new_model(limits)
        problem.read(path)
        constant = _read_objective_constant(path)
        status, elapsed = self._run(problem, limits, path)
        values: Dict[str, float] = {}
        objective = bound = gap = None
        if status.has_solution:
            values = {v.name: float(v.x) for v in problem.vars}
            objective = float(problem.objective_value) + constant
            bound = float(problem.objective_bound) + constant
            gap = self._gap(objective, bound)
        result = SolveResult(status, objective, values, bound, gap, elapsed, self.name)
        self.logger.info(f"[{self.name}] {path}: status={status.value}, objective={objective}")
        return result


def _read_objective_constant(path: str) -> float:
    with open(path, 'r', encoding='ascii') as handle:
        for line in handle:
            if line.startswith('\\ Objective constant:'):
                return float(line.split(':', 1)[1])
            if not line.startswith('\\'):
                break
    return 0.0


BACKENDS = {
    HighsBackend.name: HighsBackend,
    CbcBackend.name: CbcBackend,
}


def available_backends() -> List[str]:
    return [name for name, backend in BACKENDS.items() if backend.available()]


def get_backend(name: Optional[str] = None) -> SolverBackend:
    name = (name or Config.BACKEND).lower()
    if name not in BACKENDS:
        raise BackendUnavailableError(f"unknown backend '{name}'; choose from {sorted(BACKENDS)}")
    backend = BACKENDS[name]
    if not backend.available():
        raise BackendUnavailableError(f"backend '{name}' is not installed")
    return backend()


def solve_lp_file(path: str, limits: Optional[SolverLimits] = None) -> SolveResult:
    """Re-import an exported LP file and solve it with CBC"""
    return CbcBackend().solve_file(path, limits or SolverLimits.from_config())
