"""
Solver-agnostic mixed-integer linear program representation.

Variables are created in order and never removed; their structured names
(``P_g3_t7``, ``delta_k2_t5_w3``) are the only key the decoder relies on.
Exported LP text follows creation order so repeated builds are byte-identical.
"""

import itertools
import logging
import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ModelBuildError, SolveError

logger = logging.getLogger(__name__)

LP_NAME = re.compile(r'^[A-DF-Za-df-z_][A-Za-z0-9_]*$')
TAG_NAME = re.compile(r'^[A-Za-z0-9_]+$')
TERMS_PER_LINE = 8


class VarKind(Enum):
    CONTINUOUS = 'continuous'
    BINARY = 'binary'


class Sense(Enum):
    LE = '<='
    EQ = '='
    GE = '>='


class SolveStatus(Enum):
    OPTIMAL = 'optimal'
    FEASIBLE_GAP = 'feasible-gap'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'
    TIME_LIMIT = 'time-limit'

    @property
    def has_solution(self) -> bool:
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE_GAP)


@dataclass(frozen=True)
class VarRef:
    index: int
    kind: VarKind
    lo: float
    hi: float
    name: str

    @property
    def is_binary(self) -> bool:
        return self.kind is VarKind.BINARY


@dataclass(frozen=True)
class LinConstraint:
    id: int
    terms: Tuple[Tuple[int, float], ...]  # (variable index, coefficient)
    sense: Sense
    rhs: float
    tag: str

    @property
    def lp_name(self) -> str:
        return f"c{self.id}_{self.tag}"

    @property
    def is_vacuous(self) -> bool:
        return not self.terms


@dataclass(frozen=True)
class SolverLimits:
    mip_gap: float = 1e-4
    time_limit: float = 600.0
    threads: int = 1

    @classmethod
    def from_config(cls, config=None) -> 'SolverLimits':
        if config is None:
            from config import Config
            config = Config
        return cls(mip_gap=config.MIP_GAP, time_limit=config.TIME_LIMIT, threads=config.THREADS)


@dataclass(frozen=True)
class SolveResult:
    status: SolveStatus
    objective: Optional[float]
    values: Mapping[str, float]
    bound: Optional[float] = None
    gap: Optional[float] = None
    wall_time: float = 0.0
    backend: str = ''
    message: str = ''

    @property
    def has_solution(self) -> bool:
        return self.status.has_solution

    def value(self, var: Union[VarRef, str]) -> float:
        name = var.name if isinstance(var, VarRef) else var
        return self.values[name]

    def values_by_name(self) -> Mapping[str, float]:
        return self.values


Term = Tuple[VarRef, float]
Expression = Union[Iterable[Term], Mapping[VarRef, float]]


class MilpModel:
    """Minimisation MILP: typed variables, tagged linear constraints, linear objective"""

    def __init__(self, name: str = 'model'):
        self.name = name
        self.variables: List[VarRef] = []
        self.constraints: List[LinConstraint] = []
        self.objective: Dict[int, float] = {}
        self.objective_constant = 0.0
        self.diagnostics: List[str] = []
        self._by_name: Dict[str, VarRef] = {}

    # -- building ---------------------------------------------------------

    def add_variable(self, kind: VarKind, lo: float, hi: float, name: str) -> VarRef:
        if not LP_NAME.match(name):
            raise ModelBuildError(f"variable name '{name}' is not LP-safe")
        if name in self._by_name:
            raise ModelBuildError(f"duplicate variable name '{name}'")
        if math.isnan(lo) or math.isnan(hi):
            raise ModelBuildError(f"variable '{name}' has NaN bounds")
        if lo > hi:
            raise ModelBuildError(f"variable '{name}' has inverted bounds [{lo}, {hi}]")
        if kind is VarKind.BINARY and (lo < 0 or hi > 1):
            raise ModelBuildError(f"binary variable '{name}' bounds [{lo}, {hi}] leave [0, 1]")
        if kind is VarKind.CONTINUOUS and (lo == math.inf or hi == -math.inf):
            raise ModelBuildError(f"variable '{name}' has an empty domain")

        var = VarRef(len(self.variables), kind, float(lo), float(hi), name)
        self.variables.append(var)
        self._by_name[name] = var
        return var

    def continuous(self, name: str, lo: float = 0.0, hi: float = math.inf) -> VarRef:
        return self.add_variable(VarKind.CONTINUOUS, lo, hi, name)

    def binary(self, name: str) -> VarRef:
        return self.add_variable(VarKind.BINARY, 0.0, 1.0, name)

    def _collect(self, expr: Expression) -> Tuple[Tuple[int, float], ...]:
        items = expr.items() if isinstance(expr, Mapping) else expr
        merged: Dict[int, float] = {}
        for var, coef in items:
            if not isinstance(var, VarRef):
                raise ModelBuildError(f"expression term {var!r} is not a variable")
            if var.index >= len(self.variables) or self.variables[var.index].name != var.name:
                raise ModelBuildError(f"variable '{var.name}' is not registered in model {self.name}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelBuildError(f"non-finite coefficient on '{var.name}'")
            merged[var.index] = merged.get(var.index, 0.0) + coef
        return tuple((index, coef) for index, coef in merged.items() if coef != 0.0)

    def add_constraint(self, expr: Expression, sense: Sense, rhs: float, tag: str) -> int:
        if not TAG_NAME.match(tag):
            raise ModelBuildError(f"constraint tag '{tag}' is not LP-safe")
        terms = self._collect(expr)
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ModelBuildError(f"constraint '{tag}' has a non-finite right-hand side")
        cid = len(self.constraints)
        constraint = LinConstraint(cid, terms, sense, rhs, tag)
        if constraint.is_vacuous:
            satisfied = {Sense.LE: 0.0 <= rhs, Sense.EQ: rhs == 0.0, Sense.GE: 0.0 >= rhs}[sense]
            note = f"vacuous constraint {constraint.lp_name}: 0 {sense.value} {rhs:g}"
            if not satisfied:
                note += " (unsatisfiable)"
            self.diagnostics.append(note)
            logger.warning(note)
        self.constraints.append(constraint)
        return cid

    def add_objective(self, expr: Expression, constant: float = 0.0):
        for index, coef in self._collect(expr):
            self.objective[index] = self.objective.get(index, 0.0) + coef
        self.objective_constant += float(constant)

    def set_bounds(self, var: Union[VarRef, str], lo: float, hi: float) -> VarRef:
        current = self.var(var.name if isinstance(var, VarRef) else var)
        if lo > hi:
            raise ModelBuildError(f"variable '{current.name}' has inverted bounds [{lo}, {hi}]")
        updated = replace(current, lo=float(lo), hi=float(hi))
        self.variables[current.index] = updated
        self._by_name[current.name] = updated
        return updated

    def fix(self, var: Union[VarRef, str], value: float) -> VarRef:
        return self.set_bounds(var, value, value)

    # -- queries ----------------------------------------------------------

    def var(self, name: str) -> VarRef:
        try:
            return self._by_name[name]
        except KeyError:
            raise ModelBuildError(f"unknown variable '{name}'")

    def has_var(self, name: str) -> bool:
        return name in self._by_name

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def binaries(self) -> List[VarRef]:
        return [v for v in self.variables if v.is_binary]

    def count_binaries(self, prefix: Optional[str] = None) -> int:
        return sum(1 for v in self.variables
                   if v.is_binary and (prefix is None or v.name.startswith(prefix)))

    def size_summary(self) -> Dict[str, int]:
        return {
            'variables': self.num_variables,
            'constraints': self.num_constraints,
            'binaries': self.count_binaries(),
            'delta_binaries': self.count_binaries('delta_'),
        }

    def copy(self) -> 'MilpModel':
        clone = MilpModel(self.name)
        clone.variables = list(self.variables)
        clone.constraints = list(self.constraints)
        clone.objective = dict(self.objective)
        clone.objective_constant = self.objective_constant
        clone.diagnostics = list(self.diagnostics)
        clone._by_name = dict(self._by_name)
        return clone

    def evaluate_objective(self, values: Mapping[str, float]) -> float:
        return self.objective_constant + math.fsum(
            coef * values[self.variables[index].name] for index, coef in self.objective.items())

    def constraint_residual(self, constraint: LinConstraint, values: Mapping[str, float]) -> float:
        """Amount by which ``values`` violate ``constraint`` (0 when satisfied)"""
        lhs = math.fsum(coef * values[self.variables[i].name] for i, coef in constraint.terms)
        if constraint.sense is Sense.LE:
            return max(0.0, lhs - constraint.rhs)
        if constraint.sense is Sense.GE:
            return max(0.0, constraint.rhs - lhs)
        return abs(lhs - constraint.rhs)

    def to_arrays(self):
        """
        Dense-vector / sparse-matrix view for matrix-based backends.

        Returns:
            (c, A as csr, row_lo, row_hi, lb, ub, integrality)
        """
        from scipy.sparse import csr_array

        n = self.num_variables
        c = np.zeros(n)
        for index, coef in self.objective.items():
            c[index] = coef

        rows, cols, data = [], [], []
        row_lo = np.empty(self.num_constraints)
        row_hi = np.empty(self.num_constraints)
        for r, constraint in enumerate(self.constraints):
            for index, coef in constraint.terms:
                rows.append(r)
                cols.append(index)
                data.append(coef)
            row_lo[r] = constraint.rhs if constraint.sense in (Sense.GE, Sense.EQ) else -np.inf
            row_hi[r] = constraint.rhs if constraint.sense in (Sense.LE, Sense.EQ) else np.inf
        matrix = csr_array((data, (rows, cols)), shape=(self.num_constraints, n))

        lb = np.array([v.lo for v in self.variables])
        ub = np.array([v.hi for v in self.variables])
        integrality = np.array([1 if v.is_binary else 0 for v in self.variables], dtype=int)
        return c, matrix, row_lo, row_hi, lb, ub, integrality


# -- module-level operations --------------------------------------------------

def add_variable(model: MilpModel, kind: VarKind, bounds: Tuple[float, float], name: str) -> VarRef:
    lo, hi = bounds
    return model.add_variable(kind, lo, hi, name)


def add_constraint(model: MilpModel, expr: Expression, sense: Sense, rhs: float, tag: str) -> int:
    return model.add_constraint(expr, sense, rhs, tag)


def solve(model: MilpModel, limits: Optional[SolverLimits] = None,
          backend: Optional[str] = None) -> SolveResult:
    from models.solver_backends import get_backend

    if model.num_variables == 0:
        raise SolveError(f"model {model.name} has no variables")
    return get_backend(backend).solve(model, limits or SolverLimits.from_config())


def _format_number(value: float) -> str:
    return format(value, '.17g')


def _format_terms(model: MilpModel, terms: Sequence[Tuple[int, float]]) -> List[str]:
    pieces = []
    for position, (index, coef) in enumerate(terms):
        sign = '-' if coef < 0 else '+'
        magnitude = _format_number(abs(coef))
        name = model.variables[index].name
        if position == 0 and sign == '+':
            pieces.append(f"{magnitude} {name}")
        else:
            pieces.append(f"{sign} {magnitude} {name}")
    lines = []
    for start in range(0, len(pieces), TERMS_PER_LINE):
        lines.append(' '.join(pieces[start:start + TERMS_PER_LINE]))
    return lines


def _format_bound(var: VarRef) -> Optional[str]:
    lo, hi = var.lo, var.hi
    if var.is_binary:
        if lo == 0.0 and hi == 1.0:
            return None
    elif lo == 0.0 and hi == math.inf:
        return None
    if lo == hi:
        return f"{var.name} = {_format_number(lo)}"
    if lo == -math.inf and hi == math.inf:
        return f"{var.name} free"
    if hi == math.inf:
        return f"{var.name} >= {_format_number(lo)}"
    low = '-inf' if lo == -math.inf else _format_number(lo)
    return f"{low} <= {var.name} <= {_format_number(hi)}"


def lp_text(model: MilpModel) -> str:
    """CPLEX-LP rendering of ``model`` in creation order"""
    out = [f"\\ Model: {model.name}",
           f"\\ Objective constant: {_format_number(model.objective_constant)}",
           'Minimize']
    objective_terms = sorted(model.objective.items())
    if objective_terms:
        body = _format_terms(model, objective_terms)
        out.append(f" obj: {body[0]}")
        out.extend(f"  {line}" for line in body[1:])
    else:
        out.append(f" obj: 0 {model.variables[0].name}" if model.variables else ' obj:')

    out.append('Subject To')
    for constraint in model.constraints:
        if constraint.is_vacuous:
            out.append(f"\\ vacuous {constraint.lp_name}: 0 {constraint.sense.value} "
                       f"{_format_number(constraint.rhs)}")
            continue
        body = _format_terms(model, constraint.terms)
        body[-1] = f"{body[-1]} {constraint.sense.value} {_format_number(constraint.rhs)}"
        out.append(f" {constraint.lp_name}: {body[0]}")
        out.extend(f"  {line}" for line in body[1:])

    out.append('Bounds')
    for var in model.variables:
        bound = _format_bound(var)
        if bound:
            out.append(f" {bound}")

    binaries = [v.name for v in model.variables if v.is_binary]
    if binaries:
        out.append('Binaries')
        for start in range(0, len(binaries), TERMS_PER_LINE):
            out.append(' ' + ' '.join(binaries[start:start + TERMS_PER_LINE]))
    out.append('End')
    return '\n'.join(out) + '\n'


def export_lp(model: MilpModel, path: str):
    text = lp_text(model)
    with open(path, 'w', encoding='ascii', newline='\n') as handle:
        handle.write(text)
    logger.info(f"Exported {model.name} ({model.num_variables} variables, "
                f"{model.num_constraints} constraints) to {path}")


def enumerate_binaries(model: MilpModel, limits: Optional[SolverLimits] = None,
                       backend: Optional[str] = None, max_binaries: int = 16) -> SolveResult:
    """
    Exhaustive oracle: fix every binary assignment, solve the remaining LP, keep the best.

    Args:
        model: Model with at most ``max_binaries`` binary variables
        limits: Solver limits for each LP
        backend: Backend name; defaults to the configured backend

    Returns:
        The best SolveResult found, or an infeasible result when no assignment is feasible
    """
    binaries = model.binaries
    if len(binaries) > max_binaries:
        raise SolveError(f"{len(binaries)} binaries exceed the enumeration limit of {max_binaries}")

    best: Optional[SolveResult] = None
    evaluated = 0
    for assignment in itertools.product((0.0, 1.0), repeat=len(binaries)):
        fixed = model.copy()
        skip = False
        for var, value in zip(binaries, assignment):
            if not var.lo <= value <= var.hi:
                skip = True
                break
            fixed.fix(var, value)
        if skip:
            continue
        evaluated += 1
        result = solve(fixed, limits, backend)
        if result.status is SolveStatus.OPTIMAL and (best is None or result.objective < best.objective):
            best = result

    logger.info(f"Enumerated {evaluated} binary assignments of {model.name}")
    if best is None:
        return SolveResult(SolveStatus.INFEASIBLE, None, {}, message='no feasible assignment')
    return best


def label(symbol: str, **indices) -> str:
    """Structured LP-safe name: label('P', g=3, t=7, w=None) -> 'P_g3_t7'"""
    parts = [symbol]
    parts.extend(f"{key}{value}" for key, value in indices.items() if value is not None)
    return '_'.join(parts)
