"""
Turn a solver result into a ScheduleSolution: decisions in natural units, a
cost breakdown recomputed from the decoded values, and the residual audits.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from config import Config
from models.caes import AirTrajectory, CaesMode, decode_air_trajectory
from models.lacopf import AngleKey, LossAudit, flow_residuals, loss_error_audit, sign_products
from models.milp_model import SolveResult, SolveStatus, SolverLimits
from utils.errors import DecodeError

logger = logging.getLogger(__name__)

BALANCE_FAMILIES = ('pbal', 'qbal')
RESERVOIR_FAMILIES = ('abal',)
SHEDDING_FAMILIES = ('ils',)
ILS_TOLERANCE = 1e-8


@dataclass(frozen=True)
class CostBreakdown:
    """Operation cost in dollars, rows of the study cost table"""
    energy: float = 0.0       # no-load, fuel blocks and CAES energy offers
    startup: float = 0.0
    reserve: float = 0.0      # procured capacity, thermal and CAES
    deployment: float = 0.0   # expected cost of deployed reserve
    spill: float = 0.0        # expected wind spillage cost
    shed: float = 0.0         # expected involuntary load shedding cost

    @property
    def expected_recourse(self) -> float:
        return self.deployment + self.spill + self.shed

    @property
    def total(self) -> float:
        return math.fsum([self.energy, self.startup, self.reserve, self.deployment, self.spill, self.shed])

    def to_dict(self) -> Dict[str, float]:
        return {
            'total': self.total,
            'energy_supply': self.energy,
            'startup': self.startup,
            'reserve': self.reserve,
            'deployment': self.deployment,
            'wind_spillage': self.spill,
            'load_shedding': self.shed,
            'expected_recourse': self.expected_recourse,
        }


@dataclass
class SolutionAudit:
    reconciliation_error: float = 0.0
    balance_residual: float = 0.0
    flow_residual: float = 0.0
    reservoir_residual: float = 0.0
    conservation_residual: float = 0.0
    shedding_ratio_residual: float = 0.0
    sign_product: float = 0.0
    reserve_consistent: bool = True
    air_within_bounds: bool = True
    step_consistent: bool = True
    simultaneous_hours: Tuple[int, ...] = ()
    loss: Optional[LossAudit] = None
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict:
        data = {
            'passed': self.passed,
            'failures': list(self.failures),
            'reconciliation_error': self.reconciliation_error,
            'balance_residual_pu': self.balance_residual,
            'flow_residual_pu': self.flow_residual,
            'reservoir_residual': self.reservoir_residual,
            'conservation_residual': self.conservation_residual,
            'shedding_ratio_residual': self.shedding_ratio_residual,
            'sign_product': self.sign_product,
            'reserve_consistent': self.reserve_consistent,
            'air_within_bounds': self.air_within_bounds,
            'step_consistent': self.step_consistent,
            'simultaneous_hours': list(self.simultaneous_hours),
        }
        if self.loss is not None:
            data['loss'] = self.loss.to_dict()
        return data


@dataclass
class ScheduleSolution:
    variant: object
    caes_mode: CaesMode
    status: SolveStatus
    objective: Optional[float]
    gap: Optional[float]
    wall_time: float
    backend: str
    model_size: Dict[str, int]
    commitment: Dict[Tuple[int, int], int] = field(default_factory=dict)
    startup: Dict[Tuple[int, int], int] = field(default_factory=dict)
    shutdown: Dict[Tuple[int, int], int] = field(default_factory=dict)
    dispatch: Dict[Tuple[int, int], float] = field(default_factory=dict)           # MW
    reactive: Dict[Tuple[int, int], float] = field(default_factory=dict)           # MVAr, stage 1
    reserve_up: Dict[Tuple[int, int], float] = field(default_factory=dict)         # MW
    reserve_down: Dict[Tuple[int, int], float] = field(default_factory=dict)
    caes_commitment: Dict[Tuple[int, int], Tuple[int, int]] = field(default_factory=dict)  # (charging, discharging)
    caes_schedule: Dict[Tuple[int, int], Tuple[float, float]] = field(default_factory=dict)  # MW (charge, discharge)
    caes_reserve: Dict[Tuple[int, int], Tuple[float, float]] = field(default_factory=dict)   # MW (up, down)
    air: Dict[int, AirTrajectory] = field(default_factory=dict)
    angles: Dict[AngleKey, float] = field(default_factory=dict)                    # rad, every scope
    flows: Dict[AngleKey, Tuple[float, float]] = field(default_factory=dict)       # MW, MVAr
    losses: Dict[AngleKey, Tuple[float, float]] = field(default_factory=dict)      # MW, MVAr
    voltages: Dict[Tuple[int, int, Optional[int]], float] = field(default_factory=dict)  # p.u. deviation
    deploy_up: Dict[Tuple[int, int, int], float] = field(default_factory=dict)     # MW
    deploy_down: Dict[Tuple[int, int, int], float] = field(default_factory=dict)
    wind_used: Dict[Tuple[int, int, int], float] = field(default_factory=dict)     # MW
    wind_spilled: Dict[Tuple[int, int, int], float] = field(default_factory=dict)
    shed_active: Dict[Tuple[int, int, int], float] = field(default_factory=dict)   # MW
    shed_reactive: Dict[Tuple[int, int, int], float] = field(default_factory=dict)
    costs: CostBreakdown = field(default_factory=CostBreakdown)
    audit: SolutionAudit = field(default_factory=SolutionAudit)
    values: Mapping[str, float] = field(default_factory=dict, repr=False)

    @property
    def solved(self) -> bool:
        return self.status.has_solution

    @property
    def delta_binaries(self) -> int:
        return self.model_size.get('delta_binaries', 0)

    def summary(self) -> Dict:
        data = {
            'variant': self.variant.value,
            'caes_mode': self.caes_mode.value,
            'status': self.status.value,
            'objective': self.objective,
            'gap': self.gap,
            'backend': self.backend,
            'model_size': dict(self.model_size),
        }
        if self.solved:
            data['costs'] = self.costs.to_dict()
            data['audit'] = self.audit.to_dict()
            data['committed_unit_hours'] = sum(self.commitment.values())
            data['startups'] = sum(self.startup.values())
        return data


def _family(tag: str) -> str:
    return tag.split('_', 1)[0]


def residuals_by_family(model, values: Mapping[str, float]) -> Dict[str, float]:
    """Largest constraint violation per tag family (first underscore-separated token)"""
    worst: Dict[str, float] = {}
    for constraint in model.constraints:
        family = _family(constraint.tag)
        residual = model.constraint_residual(constraint, values)
        if residual > worst.get(family, 0.0):
            worst[family] = residual
        else:
            worst.setdefault(family, 0.0)
    return worst


def cost_breakdown(values: Mapping[str, float], schedule) -> CostBreakdown:
    """Recompute every objective component from decoded values and case prices"""
    case = schedule.case
    scenarios = schedule.scenarios
    varsets = schedule.varsets
    base = case.mva_base
    thermal = varsets.thermal
    caes_vars = varsets.caes

    def v(var):
        return values[var.name]

    energy, startup, reserve = [], [], []
    for unit in case.thermal_units:
        for t in case.hours:
            key = (unit.id, t)
            startup.append(unit.startup_cost * v(thermal.startup[key]))
            energy.append(unit.no_load_cost * v(thermal.commit[key]))
            energy.extend(block.slope * base * v(b) for b, block in zip(thermal.blocks[key], unit.cost_blocks))
            reserve.append(unit.reserve_price_up * base * v(thermal.reserve_up[key]))
            reserve.append(unit.reserve_price_down * base * v(thermal.reserve_down[key]))
    if caes_vars.enabled:
        for caes in case.caes_units:
            for t in case.hours:
                key = (caes.id, t)
                energy.append(caes.energy_price * base * v(caes_vars.p_dis_sched[key]))
                reserve.append(caes.reserve_price_up * base * v(caes_vars.reserve_up[key]))
                reserve.append(caes.reserve_price_down * base * v(caes_vars.reserve_down[key]))

    deployment, spill, shed = [], [], []
    for index, rho in enumerate(scenarios.probabilities):
        w = index + 1
        network = varsets.network[w]
        for t in case.hours:
            for unit in case.thermal_units:
                deployment.append(rho * base * (unit.deploy_price_up * v(thermal.deploy_up[(unit.id, t, w)])
                                                + unit.deploy_price_down * v(thermal.deploy_down[(unit.id, t, w)])))
            if caes_vars.enabled:
                for caes in case.caes_units:
                    deployment.append(rho * base * (caes.deploy_price_up * v(caes_vars.deploy_up[(caes.id, t, w)])
                                                    + caes.deploy_price_down * v(caes_vars.deploy_down[(caes.id, t, w)])))
            for farm in case.wind_farms:
                available = scenarios.wind(farm.id, t, index)
                spill.append(rho * base * farm.spill_price * (available - v(varsets.wind_used[(farm.id, t, w)])))
            for bus in case.buses:
                shed.append(rho * base * bus.voll_price * v(network.p_shed[(bus.id, t)]))

    return CostBreakdown(
        energy=math.fsum(energy),
        startup=math.fsum(startup),
        reserve=math.fsum(reserve),
        deployment=math.fsum(deployment),
        spill=math.fsum(spill),
        shed=math.fsum(shed),
    )


def _decode_network(solution: ScheduleSolution, values: Mapping[str, float], schedule):
    case = schedule.case
    base = case.mva_base
    for scenario, network in schedule.varsets.network.items():
        for (line_id, t), theta in network.theta.items():
            key = (line_id, t, scenario)
            solution.angles[key] = values[theta.name]
            p = values[network.p_flow[(line_id, t)].name] * base
            q = values[network.q_flow[(line_id, t)].name] * base if network.with_voltage else 0.0
            solution.flows[key] = (p, q)
            if network.with_losses:
                pl = values[network.p_loss[(line_id, t)].name] * base
                ql = values[network.q_loss[(line_id, t)].name] * base if network.with_voltage else 0.0
                solution.losses[key] = (pl, ql)
        for (bus_id, t), dv in network.voltage.items():
            solution.voltages[(bus_id, t, scenario)] = values[dv.name]
        if scenario is None:
            for (g, t), q in network.q_gen.items():
                solution.reactive[(g, t)] = values[q.name] * base
        else:
            for (bus_id, t), shed in network.p_shed.items():
                solution.shed_active[(bus_id, t, scenario)] = values[shed.name] * base
            for (bus_id, t), shed in network.q_shed.items():
                solution.shed_reactive[(bus_id, t, scenario)] = values[shed.name] * base


def _audit(solution: ScheduleSolution, values: Mapping[str, float], schedule, tolerance: float) -> SolutionAudit:
    case = schedule.case
    varsets = schedule.varsets
    audit = SolutionAudit()

    families = residuals_by_family(schedule, values)
    audit.balance_residual = max((families.get(f, 0.0) for f in BALANCE_FAMILIES), default=0.0)
    audit.reservoir_residual = max((families.get(f, 0.0) for f in RESERVOIR_FAMILIES), default=0.0)
    audit.shedding_ratio_residual = max((families.get(f, 0.0) for f in SHEDDING_FAMILIES), default=0.0)
    networks = list(varsets.network.values())
    audit.flow_residual = max(flow_residuals(values, case, n) for n in networks)
    audit.sign_product = max(sign_products(values, n) for n in networks)
    audit.loss = loss_error_audit(values, case, schedule.config, networks)

    thermal = varsets.thermal
    for key, up in thermal.deploy_up.items():
        g, t, _ = key
        if values[up.name] > values[thermal.reserve_up[(g, t)].name] + tolerance:
            audit.reserve_consistent = False
        if values[thermal.deploy_down[key].name] > values[thermal.reserve_down[(g, t)].name] + tolerance:
            audit.reserve_consistent = False
    caes_vars = varsets.caes
    for key, up in caes_vars.deploy_up.items():
        c, t, _ = key
        if values[up.name] > values[caes_vars.reserve_up[(c, t)].name] + tolerance:
            audit.reserve_consistent = False
        if values[caes_vars.deploy_down[key].name] > values[caes_vars.reserve_down[(c, t)].name] + tolerance:
            audit.reserve_consistent = False

    simultaneous = []
    for caes in case.caes_units:
        trajectory = solution.air.get(caes.id)
        if trajectory is None:
            continue
        audit.conservation_residual = max(audit.conservation_residual, trajectory.conservation_residual)
        audit.step_consistent = audit.step_consistent and trajectory.step_consistent
        simultaneous.extend(trajectory.simultaneous_hours)
        in_bounds = all(caes.a_min - tolerance <= a <= caes.a_max + tolerance for a in trajectory.levels)
        starts_right = abs(trajectory.levels[0] - caes.initial_level) <= tolerance
        audit.air_within_bounds = audit.air_within_bounds and in_bounds and starts_right
    audit.simultaneous_hours = tuple(sorted(set(simultaneous)))

    checks = [
        (audit.balance_residual <= tolerance, f"nodal balance residual {audit.balance_residual:.3e}"),
        (audit.flow_residual <= tolerance, f"flow definition residual {audit.flow_residual:.3e}"),
        (audit.reservoir_residual <= tolerance, f"reservoir balance residual {audit.reservoir_residual:.3e}"),
        (audit.conservation_residual <= tolerance, f"air conservation residual {audit.conservation_residual:.3e}"),
        (audit.shedding_ratio_residual <= ILS_TOLERANCE,
         f"shedding ratio residual {audit.shedding_ratio_residual:.3e}"),
        (audit.reserve_consistent, "deployed reserve exceeds procured reserve"),
        (audit.air_within_bounds, "air level outside its bounds or wrong initial level"),
        (audit.step_consistent, "selected charge step does not bracket the air level"),
        (not audit.simultaneous_hours, f"simultaneous charge and discharge in hours {list(audit.simultaneous_hours)}"),
    ]
    audit.failures = [message for ok, message in checks if not ok]
    return audit


def decode_solution(result: SolveResult, schedule, limits: Optional[SolverLimits] = None,
                    tolerance: Optional[float] = None,
                    reconcile_tolerance: Optional[float] = None) -> ScheduleSolution:
    """
    Decode a solved ScheduleModel.

    Args:
        result: backend result for ``schedule``
        schedule: the ScheduleModel that produced ``result``
        tolerance: residual tolerance for the audits (Config.RESIDUAL_TOLERANCE)
        reconcile_tolerance: relative tolerance between the recomputed breakdown and the objective

    Returns:
        ScheduleSolution; only status and metadata are filled when there is no solution

    Raises:
        DecodeError: when the recomputed cost breakdown does not match the solver objective
    """
    tolerance = Config.RESIDUAL_TOLERANCE if tolerance is None else tolerance
    reconcile_tolerance = Config.RECONCILE_TOLERANCE if reconcile_tolerance is None else reconcile_tolerance

    solution = ScheduleSolution(
        variant=schedule.variant,
        caes_mode=schedule.caes_mode,
        status=result.status,
        objective=result.objective,
        gap=result.gap,
        wall_time=result.wall_time,
        backend=result.backend,
        model_size=schedule.size_summary(),
    )
    if not result.has_solution:
        logger.warning(f"{schedule.name}: no solution to decode (status {result.status.value})")
        return solution

    values = result.values
    solution.values = values
    case = schedule.case
    base = case.mva_base
    varsets = schedule.varsets
    thermal = varsets.thermal

    for key, u in thermal.commit.items():
        solution.commitment[key] = int(round(values[u.name]))
        solution.startup[key] = int(round(values[thermal.startup[key].name]))
        solution.shutdown[key] = int(round(values[thermal.shutdown[key].name]))
        solution.dispatch[key] = values[thermal.power[key].name] * base
        solution.reserve_up[key] = values[thermal.reserve_up[key].name] * base
        solution.reserve_down[key] = values[thermal.reserve_down[key].name] * base
    for key, up in thermal.deploy_up.items():
        solution.deploy_up[key] = values[up.name] * base
        solution.deploy_down[key] = values[thermal.deploy_down[key].name] * base

    caes_vars = varsets.caes
    if caes_vars.enabled:
        for key, u_ch in caes_vars.u_ch.items():
            solution.caes_commitment[key] = (int(round(values[u_ch.name])),
                                             int(round(values[caes_vars.u_dis[key].name])))
            solution.caes_schedule[key] = (values[caes_vars.p_ch_sched[key].name] * base,
                                           values[caes_vars.p_dis_sched[key].name] * base)
            solution.caes_reserve[key] = (values[caes_vars.reserve_up[key].name] * base,
                                          values[caes_vars.reserve_down[key].name] * base)
        for caes in case.caes_units:
            solution.air[caes.id] = decode_air_trajectory(values, caes, caes_vars, case,
                                                          schedule.big_m.get(caes.id), tolerance)

    for (f, t, w), ws in varsets.wind_used.items():
        used = values[ws.name] * base
        solution.wind_used[(f, t, w)] = used
        solution.wind_spilled[(f, t, w)] = schedule.scenarios.wind(f, t, w - 1) * base - used

    _decode_network(solution, values, schedule)

    solution.costs = cost_breakdown(values, schedule)
    solution.audit = _audit(solution, values, schedule, tolerance)
    error = abs(solution.costs.total - result.objective) / max(1.0, abs(result.objective))
    solution.audit.reconciliation_error = error
    if error > reconcile_tolerance:
        raise DecodeError(f"{schedule.name}: cost breakdown {solution.costs.total:.6f} does not reconcile "
                          f"with objective {result.objective:.6f} (relative error {error:.2e})")

    if solution.audit.passed:
        logger.info(f"{schedule.name}: decoded, cost {solution.costs.total:.2f}, all audits passed")
    else:
        for failure in solution.audit.failures:
            logger.warning(f"{schedule.name}: audit failed: {failure}")
    return solution
