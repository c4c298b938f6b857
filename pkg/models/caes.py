"""
Compressed-air storage constraints.

Two flavours share the power-capacity block: the thermodynamic model (TBM)
selects an airflow step from the reservoir level (charging) and from the
output power (discharging); the generic model (GM) uses one constant rate per
direction. Reservoir level A is a fraction of the cavern capacity, defined for
hours 1..T+1; air flows are mass rates in kg/s.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from models.lacopf import Scope
from models.milp_model import MilpModel, Sense, VarRef, label
from utils.case_loader import CaesUnit, SystemCase
from utils.errors import DecodeError, ModelBuildError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0


class CaesMode(Enum):
    NONE = 'none'
    GM = 'gm'
    TBM = 'tbm'


def default_big_m(caes: CaesUnit, mva_base: float, margin: float = 1.1) -> float:
    """Smallest valid big-M for the charge-side products, scaled by ``margin`` (kg/s)"""
    return margin * caes.p_ch_max * mva_base * max(step.rate for step in caes.charge_steps)


def mean_rates(caes: CaesUnit) -> Tuple[float, float]:
    """
    Constant charge and discharge airflow rates for the generic model.

    The air-mass-weighted mean rate over the operating range is taken as the
    width-weighted mean of the step rates, not the rate at the mid-range point
    or the plain mean of the steps.
    """
    def weighted(steps):
        total = math.fsum(s.width for s in steps)
        return math.fsum(s.width * s.rate for s in steps) / total
    return weighted(caes.charge_steps), weighted(caes.discharge_steps)


@dataclass
class CaesVarSet:
    """CAES variables for every unit; keys are (unit id, hour) or (unit id, hour, step)"""
    u_ch: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    u_dis: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_ch_sched: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_dis_sched: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    reserve_up: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    reserve_down: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_ch: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_dis: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    level: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    air_ch: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    air_dis: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    step_ch: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)
    fill_ch: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)
    step_dis: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)
    fill_dis: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)
    deploy_up: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)    # (unit, hour, scenario)
    deploy_down: Dict[Tuple[int, int, int], VarRef] = field(default_factory=dict)

    @classmethod
    def allocate(cls, model: MilpModel, case: SystemCase, mode: CaesMode) -> 'CaesVarSet':
        varset = cls()
        if mode is CaesMode.NONE:
            return varset
        base = case.mva_base
        for caes in case.caes_units:
            c = caes.id
            max_ch_air = caes.p_ch_max * base * max(s.rate for s in caes.charge_steps)
            max_dis_air = caes.p_dis_max * base * max(s.rate for s in caes.discharge_steps)
            for t in case.hours:
                key = (c, t)
                varset.u_ch[key] = model.binary(label('Uch', c=c, t=t))
                varset.u_dis[key] = model.binary(label('Udis', c=c, t=t))
                varset.p_ch_sched[key] = model.continuous(label('PchC', c=c, t=t), 0.0, caes.p_ch_max)
                varset.p_dis_sched[key] = model.continuous(label('PdisC', c=c, t=t), 0.0, caes.p_dis_max)
                varset.reserve_up[key] = model.continuous(label('SRuC', c=c, t=t), 0.0, caes.p_dis_max)
                varset.reserve_down[key] = model.continuous(label('SRdC', c=c, t=t), 0.0, caes.p_ch_max)
                varset.p_ch[key] = model.continuous(label('Pch', c=c, t=t), 0.0, caes.p_ch_max)
                varset.p_dis[key] = model.continuous(label('Pdis', c=c, t=t), 0.0, caes.p_dis_max)
                varset.air_ch[key] = model.continuous(label('AirCh', c=c, t=t), 0.0, max_ch_air)
                varset.air_dis[key] = model.continuous(label('AirDis', c=c, t=t), 0.0, max_dis_air)
                if mode is CaesMode.TBM:
                    for s, step in enumerate(caes.charge_steps, start=1):
                        varset.step_ch[(c, t, s)] = model.binary(label('uch', c=c, t=t, s=s))
                        varset.fill_ch[(c, t, s)] = model.continuous(label('bch', c=c, t=t, s=s), 0.0, step.width)
                    for s, step in enumerate(caes.discharge_steps, start=1):
                        varset.step_dis[(c, t, s)] = model.binary(label('udis', c=c, t=t, s=s))
                        varset.fill_dis[(c, t, s)] = model.continuous(label('bdis', c=c, t=t, s=s), 0.0, step.width)
            for t in range(1, case.horizon + 2):
                varset.level[(c, t)] = model.continuous(label('A', c=c, t=t), caes.a_min, caes.a_max)
        return varset

    def allocate_scenario(self, model: MilpModel, case: SystemCase, scope: Scope):
        """Deployed CAES reserves for one wind scenario"""
        for caes in case.caes_units:
            for t in case.hours:
                key = (caes.id, t, scope.scenario)
                self.deploy_up[key] = model.continuous(scope.name('DRuC', c=caes.id, t=t), 0.0, caes.p_dis_max)
                self.deploy_down[key] = model.continuous(scope.name('DRdC', c=caes.id, t=t), 0.0, caes.p_ch_max)

    @property
    def enabled(self) -> bool:
        return bool(self.u_ch)


def emit_power_capacity(model: MilpModel, caes: CaesUnit, varset: CaesVarSet, hours) -> List[int]:
    ids = []
    c = caes.id
    for t in hours:
        key = (c, t)
        u_ch, u_dis = varset.u_ch[key], varset.u_dis[key]
        ids.append(model.add_constraint([(u_ch, 1.0), (u_dis, 1.0)], Sense.LE, 1.0, label('caesmode', c=c, t=t)))

        charge = [(varset.p_ch_sched[key], 1.0), (varset.reserve_down[key], 1.0)]
        ids.append(model.add_constraint(charge + [(u_ch, -caes.p_ch_min)], Sense.GE, 0.0,
                                        label('chmin', c=c, t=t)))
        ids.append(model.add_constraint(charge + [(u_ch, -caes.p_ch_max)], Sense.LE, 0.0,
                                        label('chmax', c=c, t=t)))

        discharge = [(varset.p_dis_sched[key], 1.0), (varset.reserve_up[key], 1.0)]
        ids.append(model.add_constraint(discharge + [(u_dis, -caes.p_dis_min)], Sense.GE, 0.0,
                                        label('dismin', c=c, t=t)))
        ids.append(model.add_constraint(discharge + [(u_dis, -caes.p_dis_max)], Sense.LE, 0.0,
                                        label('dismax', c=c, t=t)))

        ids.append(model.add_constraint(charge + [(varset.p_ch[key], -1.0)], Sense.EQ, 0.0,
                                        label('chtotal', c=c, t=t)))
        ids.append(model.add_constraint(discharge + [(varset.p_dis[key], -1.0)], Sense.EQ, 0.0,
                                        label('distotal', c=c, t=t)))
    return ids


def _emit_reservoir(model: MilpModel, caes: CaesUnit, varset: CaesVarSet, horizon: int,
                    terminal_fraction: Optional[float]) -> List[int]:
    ids = []
    c = caes.id
    scale = SECONDS_PER_HOUR / caes.cavern_capacity
    ids.append(model.add_constraint([(varset.level[(c, 1)], 1.0)], Sense.EQ, caes.initial_level,
                                    label('ainit', c=c)))
    for t in range(1, horizon + 1):
        ids.append(model.add_constraint(
            [(varset.level[(c, t + 1)], 1.0), (varset.level[(c, t)], -1.0),
             (varset.air_dis[(c, t)], scale), (varset.air_ch[(c, t)], -scale)],
            Sense.EQ, 0.0, label('abal', c=c, t=t)))
    if terminal_fraction is not None:
        ids.append(model.add_constraint([(varset.level[(c, horizon + 1)], 1.0)], Sense.GE,
                                        terminal_fraction * caes.a_max, label('aterm', c=c)))
    return ids


def emit_tbm_air_dynamics(model: MilpModel, caes: CaesUnit, varset: CaesVarSet, big_m: float,
                          mva_base: float, horizon: int,
                          terminal_fraction: Optional[float] = None) -> List[int]:
    """
    Step-wise airflow model.

    Charge side: the reservoir level selects exactly one step, and the big-M pair
    pins Air^Ch to rate_s * P^Ch on the selected step. Discharge side: output
    power is built from the steps, so Air^Dis is linear in the step fills.
    """
    required = caes.p_ch_max * mva_base * max(step.rate for step in caes.charge_steps)
    if big_m < required * (1 - 1e-12):
        raise ModelBuildError(f"big-M {big_m:.6g} below the required {required:.6g} for CAES {caes.id}")

    ids = []
    c = caes.id
    for t in range(1, horizon + 1):
        key = (c, t)
        level_terms = [(varset.level[key], -1.0)]
        for s, step in enumerate(caes.charge_steps, start=1):
            u, b = varset.step_ch[(c, t, s)], varset.fill_ch[(c, t, s)]
            level_terms += [(b, 1.0), (u, step.lo)]
            ids.append(model.add_constraint([(b, 1.0), (u, -step.width)], Sense.LE, 0.0,
                                            label('chstep', c=c, t=t, s=s)))
            rate = step.rate * mva_base
            # Air^Ch >= rate * P^Ch - M (1 - u)
            ids.append(model.add_constraint(
                [(varset.air_ch[key], 1.0), (varset.p_ch[key], -rate), (u, -big_m)], Sense.GE, -big_m,
                label('airlo', c=c, t=t, s=s)))
            # Air^Ch <= rate * P^Ch + M (1 - u)
            ids.append(model.add_constraint(
                [(varset.air_ch[key], 1.0), (varset.p_ch[key], -rate), (u, big_m)], Sense.LE, big_m,
                label('airhi', c=c, t=t, s=s)))
        ids.append(model.add_constraint(level_terms, Sense.EQ, 0.0, label('chlevel', c=c, t=t)))
        ids.append(model.add_constraint(
            [(varset.step_ch[(c, t, s)], 1.0) for s in range(1, len(caes.charge_steps) + 1)],
            Sense.EQ, 1.0, label('chselect', c=c, t=t)))

        power_terms = [(varset.p_dis[key], -1.0)]
        air_terms = [(varset.air_dis[key], -1.0)]
        select_terms = [(varset.u_dis[key], -1.0)]
        for s, step in enumerate(caes.discharge_steps, start=1):
            u, b = varset.step_dis[(c, t, s)], varset.fill_dis[(c, t, s)]
            power_terms += [(b, 1.0), (u, step.lo)]
            rate = step.rate * mva_base
            air_terms += [(b, rate), (u, step.lo * rate)]
            select_terms.append((u, 1.0))
            ids.append(model.add_constraint([(b, 1.0), (u, -step.width)], Sense.LE, 0.0,
                                            label('disstep', c=c, t=t, s=s)))
        ids.append(model.add_constraint(power_terms, Sense.EQ, 0.0, label('dispower', c=c, t=t)))
        ids.append(model.add_constraint(select_terms, Sense.EQ, 0.0, label('disselect', c=c, t=t)))
        ids.append(model.add_constraint(air_terms, Sense.EQ, 0.0, label('disair', c=c, t=t)))

    ids.extend(_emit_reservoir(model, caes, varset, horizon, terminal_fraction))
    return ids


def emit_gm_air_dynamics(model: MilpModel, caes: CaesUnit, varset: CaesVarSet, eta_ch: float,
                         eta_dis: float, mva_base: float, horizon: int,
                         terminal_fraction: Optional[float] = None) -> List[int]:
    """Constant-rate reservoir balance using the mean step rates and fixed efficiencies"""
    if not (0 < eta_ch <= 1 and 0 < eta_dis <= 1):
        raise ModelBuildError(f"GM efficiencies must lie in (0, 1], got {eta_ch}, {eta_dis}")
    r_ch, r_dis = mean_rates(caes)
    ids = []
    c = caes.id
    for t in range(1, horizon + 1):
        key = (c, t)
        ids.append(model.add_constraint(
            [(varset.air_ch[key], 1.0), (varset.p_ch[key], -r_ch * eta_ch * mva_base)],
            Sense.EQ, 0.0, label('gmch', c=c, t=t)))
        ids.append(model.add_constraint(
            [(varset.air_dis[key], 1.0), (varset.p_dis[key], -r_dis / eta_dis * mva_base)],
            Sense.EQ, 0.0, label('gmdis', c=c, t=t)))
    ids.extend(_emit_reservoir(model, caes, varset, horizon, terminal_fraction))
    return ids


@dataclass(frozen=True)
class AirTrajectory:
    unit_id: int
    levels: Tuple[float, ...]        # A_1 .. A_{T+1}, fraction of capacity
    air_charged: Tuple[float, ...]   # kg per hour
    air_released: Tuple[float, ...]  # kg per hour
    charge_power: Tuple[float, ...]  # MW, P^Ch
    discharge_power: Tuple[float, ...]  # MW, P^Dis
    selected_steps: Tuple[Optional[int], ...]
    balance_residual: float
    conservation_residual: float
    step_consistent: bool
    big_m_gap: float
    big_m_binding: bool
    simultaneous_hours: Tuple[int, ...]

    def rows(self) -> List[Dict]:
        hours = len(self.air_charged)
        return [{
            'hour': t + 1,
            'A': self.levels[t],
            'air_ch_kg': self.air_charged[t] if t < hours else 0.0,
            'air_dis_kg': self.air_released[t] if t < hours else 0.0,
        } for t in range(len(self.levels))]


def decode_air_trajectory(values: Mapping[str, float], caes: CaesUnit, varset: CaesVarSet,
                          case: SystemCase, big_m: Optional[float] = None,
                          tolerance: float = 1e-6, strict: bool = False) -> AirTrajectory:
    """
    Rebuild the reservoir trajectory and check it against the balance it was solved under.

    Raises:
        DecodeError: with ``strict`` when the hourly balance residual exceeds ``tolerance``
    """
    c = caes.id
    T = case.horizon
    base = case.mva_base
    scale = SECONDS_PER_HOUR / caes.cavern_capacity
    levels = tuple(values[varset.level[(c, t)].name] for t in range(1, T + 2))
    air_ch = [values[varset.air_ch[(c, t)].name] for t in case.hours]
    air_dis = [values[varset.air_dis[(c, t)].name] for t in case.hours]
    p_ch = [values[varset.p_ch[(c, t)].name] for t in case.hours]
    p_dis = [values[varset.p_dis[(c, t)].name] for t in case.hours]

    residual = max((abs(levels[t] - levels[t - 1] + (air_dis[t - 1] - air_ch[t - 1]) * scale)
                    for t in range(1, T + 1)), default=0.0)
    net = math.fsum(air_ch) - math.fsum(air_dis)
    conservation = abs(levels[-1] - levels[0] - net * scale)

    tbm = bool(varset.step_ch)
    selected: List[Optional[int]] = []
    consistent = True
    big_m_gap = 0.0
    binding = False
    for t in case.hours:
        if not tbm:
            selected.append(None)
            continue
        chosen = None
        for s, step in enumerate(caes.charge_steps, start=1):
            u = values[varset.step_ch[(c, t, s)].name]
            expected = step.rate * base * p_ch[t - 1]
            if u > 0.5:
                chosen = s
                big_m_gap = max(big_m_gap, abs(air_ch[t - 1] - expected))
                bracket_tol = 1e-6 * max(1.0, step.hi)
                if not step.lo - bracket_tol <= levels[t - 1] <= step.hi + bracket_tol:
                    consistent = False
            elif big_m is not None:
                slack = min(abs(air_ch[t - 1] - (expected - big_m)), abs(air_ch[t - 1] - (expected + big_m)))
                if slack < tolerance:
                    binding = True
        selected.append(chosen)

    simultaneous = tuple(t for t in case.hours
                         if values[varset.u_ch[(c, t)].name] > 0.5 and values[varset.u_dis[(c, t)].name] > 0.5)

    if residual > tolerance:
        message = f"CAES {c}: reservoir balance residual {residual:.3e} exceeds {tolerance:.1e}"
        if strict:
            raise DecodeError(message)
        logger.warning(message)
    if binding:
        logger.warning(f"CAES {c}: a relaxed big-M row is binding; big-M may be too small")

    return AirTrajectory(
        unit_id=c,
        levels=levels,
        air_charged=tuple(a * SECONDS_PER_HOUR for a in air_ch),
        air_released=tuple(a * SECONDS_PER_HOUR for a in air_dis),
        charge_power=tuple(p * base for p in p_ch),
        discharge_power=tuple(p * base for p in p_dis),
        selected_steps=tuple(selected),
        balance_residual=residual,
        conservation_residual=conservation,
        step_consistent=consistent,
        big_m_gap=big_m_gap,
        big_m_binding=binding,
        simultaneous_hours=simultaneous,
    )
