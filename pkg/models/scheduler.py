"""
Two-stage stochastic day-ahead scheduling: energy and reserve co-optimisation
with wind scenarios, CAES, and a choice of network model.

All powers are per-unit on the case base; every cost coefficient is therefore
multiplied by ``mva_base`` so the objective is in dollars.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

from config import Config
from models.caes import (
    CaesMode,
    CaesVarSet,
    default_big_m,
    emit_gm_air_dynamics,
    emit_power_capacity,
    emit_tbm_air_dynamics,
)
from models.lacopf import (
    FIRST_STAGE,
    AngleKey,
    LinearizationConfig,
    NetworkVarSet,
    Scope,
    emit_network,
)
from models.milp_model import MilpModel, Sense, SolverLimits, SolveStatus, VarRef, label, solve
from utils.case_loader import ScenarioSet, SystemCase, empty_scenarios
from utils.errors import ModelBuildError, SolveError

logger = logging.getLogger(__name__)


class Variant(Enum):
    DC = 'dc'
    LAC_LOSSLESS = 'lac_lossless'
    LAC_FULL = 'lac_full'
    TL_LAC = 'tl_lac'

    @property
    def with_voltage(self) -> bool:
        return self is not Variant.DC

    @property
    def with_losses(self) -> bool:
        return self in (Variant.LAC_FULL, Variant.TL_LAC)


@dataclass(frozen=True)
class ScheduleOptions:
    caes_mode: CaesMode = CaesMode.TBM
    eta_ch: float = 1.0
    eta_dis: float = 1.0
    terminal_air_fraction: Optional[float] = None

    @classmethod
    def from_config(cls, config=Config, **overrides) -> 'ScheduleOptions':
        values = dict(eta_ch=config.GM_ETA_CH, eta_dis=config.GM_ETA_DIS,
                      terminal_air_fraction=config.TERMINAL_AIR_FRACTION)
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True)
class FirstLevelArtifacts:
    """Flow signs and angle magnitudes from the lossless first level"""
    signs: Dict[AngleKey, Optional[int]]  # 1, 0, or None when ambiguous
    theta_hat: Dict[AngleKey, float]

    @property
    def free_count(self) -> int:
        return sum(1 for s in self.signs.values() if s is None)

    @property
    def fixed_count(self) -> int:
        return len(self.signs) - self.free_count

    def theta_max_map(self, config: LinearizationConfig) -> Dict[AngleKey, float]:
        return {key: config.adaptive_value(value) for key, value in self.theta_hat.items()}

    def to_dict(self) -> Dict:
        return {'fixed_signs': self.fixed_count, 'free_signs': self.free_count}


@dataclass
class ThermalVarSet:
    commit: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    startup: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    shutdown: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    power: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    blocks: Dict[Tuple[int, int], List[VarRef]] = field(default_factory=dict)
    reserve_up: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    reserve_down: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    deploy_up: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)
    deploy_down: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)


@dataclass
class ScheduleVarSets:
    thermal: ThermalVarSet
    caes: CaesVarSet
    network: Dict[Optional[int], NetworkVarSet] = field(default_factory=dict)
    wind_used: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)

    @property
    def first_stage_network(self) -> NetworkVarSet:
        return self.network[None]


class ScheduleModel(MilpModel):
    """MilpModel carrying the data and variable maps it was assembled from"""

    def __init__(self, name: str, case: SystemCase, scenarios: ScenarioSet, variant: Variant,
                 config: LinearizationConfig, options: ScheduleOptions):
        super().__init__(name)
        self.case = case
        self.scenarios = scenarios
        self.variant = variant
        self.config = config
        self.options = options
        self.varsets: Optional[ScheduleVarSets] = None
        self.big_m: Dict[int, float] = {}

    @property
    def caes_mode(self) -> CaesMode:
        return self.options.caes_mode if self.case.caes_units else CaesMode.NONE

    def size_summary(self) -> Dict[str, int]:
        summary = super().size_summary()
        summary['scenarios'] = len(self.scenarios)
        return summary


def _allocate_thermal(model: MilpModel, case: SystemCase) -> ThermalVarSet:
    varset = ThermalVarSet()
    for t in case.hours:
        for unit in case.thermal_units:
            g = unit.id
            key = (g, t)
            varset.commit[key] = model.binary(label('U', g=g, t=t))
            varset.startup[key] = model.binary(label('Y', g=g, t=t))
            varset.shutdown[key] = model.binary(label('Z', g=g, t=t))
            varset.power[key] = model.continuous(label('P', g=g, t=t), 0.0, unit.p_max)
            varset.blocks[key] = [model.continuous(label('Pe', g=g, t=t, n=n), 0.0, block.width)
                                  for n, block in enumerate(unit.cost_blocks, start=1)]
            varset.reserve_up[key] = model.continuous(label('SRu', g=g, t=t), 0.0, unit.p_max - unit.p_min)
            varset.reserve_down[key] = model.continuous(label('SRd', g=g, t=t), 0.0, unit.p_max - unit.p_min)
    return varset


def build_first_stage(model: MilpModel, case: SystemCase, config: LinearizationConfig, variant: Variant,
                      varsets: ScheduleVarSets, options: Optional[ScheduleOptions] = None) -> List[int]:
    """Unit commitment, dispatch, reserve, CAES and first-stage network constraints plus their costs"""
    options = options or ScheduleOptions()
    base = case.mva_base
    tau = case.reserve_resolution
    thermal = varsets.thermal
    network = varsets.first_stage_network
    ids: List[int] = []

    for unit in case.thermal_units:
        g = unit.id
        for t in case.hours:
            key = (g, t)
            u, y, z = thermal.commit[key], thermal.startup[key], thermal.shutdown[key]
            p = thermal.power[key]
            sr_up, sr_down = thermal.reserve_up[key], thermal.reserve_down[key]

            if t == 1:
                ids.append(model.add_constraint([(y, 1.0), (z, -1.0), (u, -1.0)], Sense.EQ,
                                                -float(unit.initial_status), label('uclogic', g=g, t=t)))
            else:
                ids.append(model.add_constraint(
                    [(y, 1.0), (z, -1.0), (u, -1.0), (thermal.commit[(g, t - 1)], 1.0)], Sense.EQ, 0.0,
                    label('uclogic', g=g, t=t)))
            ids.append(model.add_constraint([(y, 1.0), (z, 1.0)], Sense.LE, 1.0, label('ucexcl', g=g, t=t)))

            later = [n for n in range(1, unit.min_up) if t + n <= case.horizon]
            if later:
                ids.append(model.add_constraint(
                    [(y, 1.0)] + [(thermal.shutdown[(g, t + n)], 1.0) for n in later], Sense.LE, 1.0,
                    label('minup', g=g, t=t)))
            later = [n for n in range(1, unit.min_down) if t + n <= case.horizon]
            if later:
                ids.append(model.add_constraint(
                    [(z, 1.0)] + [(thermal.startup[(g, t + n)], 1.0) for n in later], Sense.LE, 1.0,
                    label('mindown', g=g, t=t)))

            ids.append(model.add_constraint(
                [(p, 1.0), (u, -unit.p_min)] + [(b, -1.0) for b in thermal.blocks[key]], Sense.EQ, 0.0,
                label('pblocks', g=g, t=t)))
            ids.append(model.add_constraint([(p, 1.0), (u, -unit.p_max)], Sense.LE, 0.0, label('pmax', g=g, t=t)))
            ids.append(model.add_constraint([(p, 1.0), (u, -unit.p_min)], Sense.GE, 0.0, label('pmin', g=g, t=t)))
            ids.append(model.add_constraint([(p, 1.0), (sr_up, 1.0), (u, -unit.p_max)], Sense.LE, 0.0,
                                            label('srhead', g=g, t=t)))
            ids.append(model.add_constraint([(p, 1.0), (sr_down, -1.0), (u, -unit.p_min)], Sense.GE, 0.0,
                                            label('srfoot', g=g, t=t)))
            ids.append(model.add_constraint([(sr_up, 1.0), (u, -unit.ramp_up * tau)], Sense.LE, 0.0,
                                            label('srramp_up', g=g, t=t)))
            ids.append(model.add_constraint([(sr_down, 1.0), (u, -unit.ramp_down * tau)], Sense.LE, 0.0,
                                            label('srramp_dn', g=g, t=t)))
            if variant.with_voltage:
                q = network.q_gen[key]
                ids.append(model.add_constraint([(q, 1.0), (u, -unit.q_max)], Sense.LE, 0.0,
                                                label('qmax', g=g, t=t)))
                ids.append(model.add_constraint([(q, 1.0), (u, -unit.q_min)], Sense.GE, 0.0,
                                                label('qmin', g=g, t=t)))

            if t < case.horizon:
                nxt = thermal.power[(g, t + 1)]
                ids.append(model.add_constraint([(nxt, 1.0), (p, -1.0)], Sense.LE, unit.ramp_up,
                                                label('rampup', g=g, t=t)))
                ids.append(model.add_constraint([(p, 1.0), (nxt, -1.0)], Sense.LE, unit.ramp_down,
                                                label('rampdn', g=g, t=t)))

            model.add_objective(
                [(y, unit.startup_cost), (u, unit.no_load_cost),
                 (sr_up, unit.reserve_price_up * base), (sr_down, unit.reserve_price_down * base)]
                + [(b, block.slope * base) for b, block in zip(thermal.blocks[key], unit.cost_blocks)])

    caes_vars = varsets.caes
    if caes_vars.enabled:
        for caes in case.caes_units:
            ids.extend(emit_power_capacity(model, caes, caes_vars, case.hours))
            if options.caes_mode is CaesMode.TBM:
                big_m = default_big_m(caes, base, config.big_m_margin)
                if isinstance(model, ScheduleModel):
                    model.big_m[caes.id] = big_m
                ids.extend(emit_tbm_air_dynamics(model, caes, caes_vars, big_m, base, case.horizon,
                                                 options.terminal_air_fraction))
            else:
                ids.extend(emit_gm_air_dynamics(model, caes, caes_vars, options.eta_ch, options.eta_dis,
                                                base, case.horizon, options.terminal_air_fraction))
            for t in case.hours:
                key = (caes.id, t)
                model.add_objective([
                    (caes_vars.p_dis_sched[key], caes.energy_price * base),
                    (caes_vars.reserve_up[key], caes.reserve_price_up * base),
                    (caes_vars.reserve_down[key], caes.reserve_price_down * base),
                ])

    ids.extend(emit_network(model, case, FIRST_STAGE, config, network))

    for t in case.hours:
        for bus in case.buses:
            terms = [(thermal.power[(u.id, t)], 1.0) for u in case.units_at[bus.id]]
            if caes_vars.enabled:
                for caes in case.caes_at[bus.id]:
                    terms += [(caes_vars.p_dis_sched[(caes.id, t)], 1.0), (caes_vars.p_ch_sched[(caes.id, t)], -1.0)]
            terms += network.active_terms(case, bus.id, t)
            wind = sum(farm.forecast[t - 1] for farm in case.farms_at[bus.id])
            ids.append(model.add_constraint(terms, Sense.EQ, bus.active_load[t - 1] - wind,
                                            label('pbal', b=bus.id, t=t)))
            if variant.with_voltage:
                q_terms = [(network.q_gen[(u.id, t)], 1.0) for u in case.units_at[bus.id]]
                net_terms, constant = network.reactive_terms(case, bus.id, t)
                ids.append(model.add_constraint(q_terms + net_terms, Sense.EQ,
                                                bus.reactive_load[t - 1] - constant,
                                                label('qbal', b=bus.id, t=t)))
    return ids


def build_second_stage(model: MilpModel, case: SystemCase, scenarios: ScenarioSet, config: LinearizationConfig,
                       variant: Variant, varsets: ScheduleVarSets,
                       signs: Optional[Dict[AngleKey, Optional[int]]] = None) -> List[int]:
    """Scenario recourse: reserve deployment, wind usage, load shedding and the re-emitted network"""
    if tuple(scenarios.farm_ids) != tuple(f.id for f in case.wind_farms):
        raise ModelBuildError(
            f"scenario farms {scenarios.farm_ids} do not match case farms {[f.id for f in case.wind_farms]}")

    base = case.mva_base
    thermal = varsets.thermal
    caes_vars = varsets.caes
    first = varsets.first_stage_network
    ids: List[int] = []

    for index, (scenario, rho) in enumerate(zip(scenarios.scenario_ids, scenarios.probabilities)):
        w = index + 1
        scope = Scope(w)
        network = NetworkVarSet.allocate(model, case, scope, config, variant.with_voltage,
                                         variant.with_losses, signs)
        varsets.network[w] = network
        if caes_vars.enabled:
            caes_vars.allocate_scenario(model, case, scope)

        for t in case.hours:
            for unit in case.thermal_units:
                g = unit.id
                up = model.continuous(scope.name('DRu', g=g, t=t), 0.0, unit.p_max - unit.p_min)
                down = model.continuous(scope.name('DRd', g=g, t=t), 0.0, unit.p_max - unit.p_min)
                thermal.deploy_up[(g, t, w)] = up
                thermal.deploy_down[(g, t, w)] = down
                ids.append(model.add_constraint([(up, 1.0), (thermal.reserve_up[(g, t)], -1.0)], Sense.LE, 0.0,
                                                scope.name('drup', g=g, t=t)))
                ids.append(model.add_constraint([(down, 1.0), (thermal.reserve_down[(g, t)], -1.0)], Sense.LE,
                                                0.0, scope.name('drdn', g=g, t=t)))
                model.add_objective([(up, rho * unit.deploy_price_up * base),
                                     (down, rho * unit.deploy_price_down * base)])
                if variant.with_voltage:
                    q = network.q_gen[(g, t)]
                    u = thermal.commit[(g, t)]
                    ids.append(model.add_constraint([(q, 1.0), (u, -unit.q_max)], Sense.LE, 0.0,
                                                    scope.name('qmax', g=g, t=t)))
                    ids.append(model.add_constraint([(q, 1.0), (u, -unit.q_min)], Sense.GE, 0.0,
                                                    scope.name('qmin', g=g, t=t)))

            if caes_vars.enabled:
                for caes in case.caes_units:
                    key = (caes.id, t, w)
                    ids.append(model.add_constraint(
                        [(caes_vars.deploy_up[key], 1.0), (caes_vars.reserve_up[(caes.id, t)], -1.0)],
                        Sense.LE, 0.0, scope.name('druC', c=caes.id, t=t)))
                    ids.append(model.add_constraint(
                        [(caes_vars.deploy_down[key], 1.0), (caes_vars.reserve_down[(caes.id, t)], -1.0)],
                        Sense.LE, 0.0, scope.name('drdC', c=caes.id, t=t)))
                    model.add_objective([(caes_vars.deploy_up[key], rho * caes.deploy_price_up * base),
                                         (caes_vars.deploy_down[key], rho * caes.deploy_price_down * base)])

            for farm in case.wind_farms:
                available = scenarios.wind(farm.id, t, index)
                ws = model.continuous(scope.name('ws', f=farm.id, t=t), 0.0, available)
                varsets.wind_used[(farm.id, t, w)] = ws
                # spill cost on (w - ws)
                model.add_objective([(ws, -rho * farm.spill_price * base)],
                                    constant=rho * farm.spill_price * base * available)

        ids.extend(emit_network(model, case, scope, config, network))

        for t in case.hours:
            for bus in case.buses:
                shed = network.p_shed[(bus.id, t)]
                model.add_objective([(shed, rho * bus.voll_price * base)])

                terms = [(shed, 1.0)]
                for unit in case.units_at[bus.id]:
                    terms += [(thermal.deploy_up[(unit.id, t, w)], 1.0), (thermal.deploy_down[(unit.id, t, w)], -1.0)]
                if caes_vars.enabled:
                    for caes in case.caes_at[bus.id]:
                        terms += [(caes_vars.deploy_up[(caes.id, t, w)], 1.0),
                                  (caes_vars.deploy_down[(caes.id, t, w)], -1.0)]
                forecast = 0.0
                for farm in case.farms_at[bus.id]:
                    terms.append((varsets.wind_used[(farm.id, t, w)], 1.0))
                    forecast += farm.forecast[t - 1]
                terms += network.active_terms(case, bus.id, t)
                terms += [(var, -coef) for var, coef in first.active_terms(case, bus.id, t)]
                ids.append(model.add_constraint(terms, Sense.EQ, forecast, scope.name('pbal', b=bus.id, t=t)))

                if not variant.with_voltage:
                    continue
                q_shed = network.q_shed[(bus.id, t)]
                q_terms = [(q_shed, 1.0)]
                for unit in case.units_at[bus.id]:
                    q_terms += [(network.q_gen[(unit.id, t)], 1.0), (first.q_gen[(unit.id, t)], -1.0)]
                scenario_terms, _ = network.reactive_terms(case, bus.id, t)
                stage_terms, _ = first.reactive_terms(case, bus.id, t)
                q_terms += scenario_terms + [(var, -coef) for var, coef in stage_terms]
                ids.append(model.add_constraint(q_terms, Sense.EQ, 0.0, scope.name('qbal', b=bus.id, t=t)))

                pd = bus.active_load[t - 1]
                qd = bus.reactive_load[t - 1]
                if pd > 0:
                    ids.append(model.add_constraint([(q_shed, pd), (shed, -qd)], Sense.EQ, 0.0,
                                                    scope.name('ils', b=bus.id, t=t)))

        for unit in case.thermal_units:
            g = unit.id
            for t in range(1, case.horizon):
                now = [(thermal.power[(g, t)], 1.0), (thermal.deploy_up[(g, t, w)], 1.0),
                       (thermal.deploy_down[(g, t, w)], -1.0)]
                nxt = [(thermal.power[(g, t + 1)], 1.0), (thermal.deploy_up[(g, t + 1, w)], 1.0),
                       (thermal.deploy_down[(g, t + 1, w)], -1.0)]
                ids.append(model.add_constraint(nxt + [(v, -c) for v, c in now], Sense.LE, unit.ramp_up,
                                                scope.name('rampup', g=g, t=t)))
                ids.append(model.add_constraint(now + [(v, -c) for v, c in nxt], Sense.LE, unit.ramp_down,
                                                scope.name('rampdn', g=g, t=t)))
    return ids


def assemble(case: SystemCase, scenarios: Optional[ScenarioSet], config: LinearizationConfig, variant: Variant,
             first_level: Optional[FirstLevelArtifacts] = None,
             options: Optional[ScheduleOptions] = None) -> ScheduleModel:
    """
    Build the complete two-stage model for one network variant.

    Args:
        scenarios: wind scenarios; None or an empty set gives the deterministic model
        first_level: required for TL_LAC, rejected otherwise
    """
    if variant is Variant.TL_LAC and first_level is None:
        raise ModelBuildError("TL_LAC needs first-level artifacts from a lossless solve")
    if variant is not Variant.TL_LAC and first_level is not None:
        raise ModelBuildError(f"first-level artifacts are only valid for TL_LAC, not {variant.value}")

    options = options or ScheduleOptions()
    scenarios = scenarios if scenarios is not None else empty_scenarios(case)
    signs = None
    if first_level is not None:
        config = config.with_adaptive(first_level.theta_max_map(config))
        signs = first_level.signs

    mode = options.caes_mode if case.caes_units else CaesMode.NONE
    model = ScheduleModel(f"{case.name}_{variant.value}_{mode.value}", case, scenarios, variant, config, options)
    thermal = _allocate_thermal(model, case)
    caes_vars = CaesVarSet.allocate(model, case, mode)
    network = NetworkVarSet.allocate(model, case, FIRST_STAGE, config, variant.with_voltage,
                                     variant.with_losses, signs)
    varsets = ScheduleVarSets(thermal=thermal, caes=caes_vars, network={None: network})
    model.varsets = varsets

    build_first_stage(model, case, config, variant, varsets, replace(options, caes_mode=mode))
    if len(scenarios):
        build_second_stage(model, case, scenarios, config, variant, varsets, signs)

    summary = model.size_summary()
    logger.info(f"Assembled {model.name}: {summary['variables']} variables, {summary['constraints']} constraints, "
                f"{summary['binaries']} binaries ({summary['delta_binaries']} sign binaries), "
                f"{summary['scenarios']} scenarios")
    return model


def classify_sign(theta: float, tolerance: float) -> Optional[int]:
    if theta > tolerance:
        return 1
    if theta < -tolerance:
        return 0
    return None


def extract_first_level(solution, config: LinearizationConfig) -> FirstLevelArtifacts:
    """
    Read flow signs and angle magnitudes off a solved lossless schedule.

    Args:
        solution: ScheduleSolution of a LAC_LOSSLESS assembly
    """
    if not solution.status.has_solution:
        raise SolveError(f"first level has no solution (status {solution.status.value})")
    if solution.variant is not Variant.LAC_LOSSLESS:
        logger.warning(f"Extracting first-level artifacts from a {solution.variant.value} solution")
    signs = {key: classify_sign(theta, config.sign_tolerance) for key, theta in solution.angles.items()}
    theta_hat = {key: abs(theta) for key, theta in solution.angles.items()}
    artifacts = FirstLevelArtifacts(signs, theta_hat)
    logger.info(f"First level: {artifacts.fixed_count} signs fixed, {artifacts.free_count} left free")
    return artifacts


def solve_schedule(model: ScheduleModel, limits: Optional[SolverLimits] = None, backend: Optional[str] = None):
    from models.solution_decoder import decode_solution

    result = solve(model, limits, backend)
    return decode_solution(result, model, limits)


def solve_two_level(case: SystemCase, scenarios: Optional[ScenarioSet], config: LinearizationConfig,
                    options: Optional[ScheduleOptions] = None, limits: Optional[SolverLimits] = None,
                    backend: Optional[str] = None):
    """
    Lossless first level, then the lossy second level with fixed signs and adaptive theta max.

    Returns:
        (level-2 ScheduleSolution, FirstLevelArtifacts, timings dict)
    """
    limits = limits or SolverLimits.from_config()
    start = time.perf_counter()
    level1_model = assemble(case, scenarios, config, Variant.LAC_LOSSLESS, options=options)
    level1 = solve_schedule(level1_model, limits, backend)
    level1_time = time.perf_counter() - start
    if not level1.status.has_solution:
        raise SolveError(f"level 1 is {level1.status.value}; the case is infeasible even without losses")

    artifacts = extract_first_level(level1, config)

    start = time.perf_counter()
    level2_model = assemble(case, scenarios, config, Variant.TL_LAC, artifacts, options)
    level2 = solve_schedule(level2_model, limits, backend)
    retried = False
    if level2.status is SolveStatus.INFEASIBLE:
        retried = True
        relaxed = replace(config, theta_max_floor=2 * config.theta_max_floor)
        logger.warning(f"Level 2 infeasible; retrying with theta max floor {relaxed.theta_max_floor:g} rad")
        level2_model = assemble(case, scenarios, relaxed, Variant.TL_LAC, artifacts, options)
        level2 = solve_schedule(level2_model, limits, backend)
    level2_time = time.perf_counter() - start

    timings = {
        'level1_seconds': level1_time,
        'level2_seconds': level2_time,
        'total_seconds': level1_time + level2_time,
        'floor_retry': retried,
        'level1_objective': level1.objective,
    }
    logger.info(f"Two-level solve finished: level 1 {level1_time:.2f}s, level 2 {level2_time:.2f}s"
                f"{' (after floor retry)' if retried else ''}")
    return level2, artifacts, timings


def fix_storage_decisions(model: ScheduleModel, solution) -> int:
    """
    Pin unit commitment and the CAES schedule of ``model`` to the values in ``solution``.

    Used to replay a generic-model schedule under the thermodynamic model.

    Returns:
        Number of variables fixed
    """
    if not solution.solved:
        raise SolveError(f"cannot replay an unsolved schedule (status {solution.status.value})")
    varsets = model.varsets
    fixed = 0
    for key, var in varsets.thermal.commit.items():
        model.fix(var, float(solution.commitment[key]))
        fixed += 1
    caes_vars = varsets.caes
    for key in caes_vars.u_ch:
        charging, discharging = solution.caes_commitment[key]
        charge_mw, discharge_mw = solution.caes_schedule[key]
        model.fix(caes_vars.u_ch[key], float(charging))
        model.fix(caes_vars.u_dis[key], float(discharging))
        model.fix(caes_vars.p_ch_sched[key], charge_mw / model.case.mva_base)
        model.fix(caes_vars.p_dis_sched[key], discharge_mw / model.case.mva_base)
        fixed += 4
    logger.info(f"Fixed {fixed} commitment and storage decisions on {model.name}")
    return fixed
