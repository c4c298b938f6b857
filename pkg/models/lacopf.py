"""
Linearized AC network constraints for one scope (first stage or one wind scenario).

Flows are first-order in the voltage deviation and the angle difference;
losses use L ordered angle blocks whose slopes approximate theta squared.
The DC baseline and the artificial-loss audit live here too.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from config import Config
from models.milp_model import MilpModel, Sense, VarRef, label
from utils.case_loader import Line, SystemCase
from utils.errors import ModelBuildError

logger = logging.getLogger(__name__)

LOSS_EPSILON = 1e-10

AngleKey = Tuple[int, int, Optional[int]]  # (line id, hour, scenario or None)


@dataclass(frozen=True)
class Scope:
    """First stage when ``scenario`` is None, otherwise the 1-based wind scenario"""
    scenario: Optional[int] = None

    @property
    def is_first_stage(self) -> bool:
        return self.scenario is None

    def name(self, symbol: str, **indices) -> str:
        return label(symbol, **indices, w=self.scenario)


FIRST_STAGE = Scope()


@dataclass(frozen=True)
class LinearizationConfig:
    loss_blocks: int = 2           # L
    polygon_segments: int = 12     # R
    theta_max: float = 0.6         # global theta max, rad
    sign_tolerance: float = 1e-4
    theta_max_margin: float = 1.25
    theta_max_floor: float = 0.05
    big_m_margin: float = 1.1
    fix_scenario_signs: bool = True
    adaptive_theta_max: Optional[Mapping[AngleKey, float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.loss_blocks < 1:
            raise ModelBuildError(f"loss_blocks must be >= 1, got {self.loss_blocks}")
        if self.polygon_segments < 4:
            raise ModelBuildError(f"polygon_segments must be >= 4, got {self.polygon_segments}")
        if self.theta_max <= 0:
            raise ModelBuildError("theta_max must be positive")
        if not 0 < self.sign_tolerance < self.theta_max_floor:
            raise ModelBuildError("sign_tolerance must lie in (0, theta_max_floor)")
        if self.theta_max_margin < 1:
            raise ModelBuildError("theta_max_margin must be >= 1")
        if self.big_m_margin < 1:
            raise ModelBuildError("big_m_margin must be >= 1")

    @classmethod
    def from_config(cls, config=Config, **overrides) -> 'LinearizationConfig':
        values = dict(
            loss_blocks=config.LOSS_BLOCKS,
            polygon_segments=config.POLYGON_SEGMENTS,
            theta_max=config.THETA_MAX,
            sign_tolerance=config.SIGN_TOLERANCE,
            theta_max_margin=config.THETA_MAX_MARGIN,
            theta_max_floor=config.THETA_MAX_FLOOR,
            big_m_margin=config.BIG_M_MARGIN,
            fix_scenario_signs=config.FIX_SCENARIO_SIGNS,
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    @property
    def is_adaptive(self) -> bool:
        return self.adaptive_theta_max is not None

    def with_adaptive(self, theta_max_map: Mapping[AngleKey, float]) -> 'LinearizationConfig':
        return replace(self, adaptive_theta_max=dict(theta_max_map))

    def adaptive_value(self, theta_hat: float) -> float:
        return max(self.theta_max_margin * theta_hat, self.theta_max_floor)

    def theta_max_for(self, line_id: int, t: int, scenario: Optional[int] = None) -> float:
        if not self.is_adaptive:
            return self.theta_max
        if scenario is not None and not self.fix_scenario_signs:
            return self.theta_max
        try:
            return self.adaptive_theta_max[(line_id, t, scenario)]
        except KeyError:
            raise ModelBuildError(
                f"adaptive theta max has no entry for line {line_id}, hour {t}, scenario {scenario}")


def block_slopes(theta_max: float, blocks: int) -> List[float]:
    """Slope of each loss block: (2l - 1) * theta_max / L"""
    if theta_max <= 0:
        raise ValueError("theta_max must be positive")
    if blocks < 1:
        raise ValueError("at least one block is required")
    return [(2 * l - 1) * theta_max / blocks for l in range(1, blocks + 1)]


def fill_blocks(theta: float, theta_max: float, blocks: int) -> List[float]:
    """Greedy in-order filling of |theta| into blocks of width theta_max / L"""
    magnitude = abs(theta)
    if magnitude > theta_max * (1 + 1e-12):
        raise ValueError(f"|theta| = {magnitude} exceeds theta_max = {theta_max}")
    width = theta_max / blocks
    filled = []
    remaining = min(magnitude, theta_max)
    for _ in range(blocks):
        amount = min(width, remaining)
        filled.append(amount)
        remaining -= amount
    return filled


def piecewise_square(theta: float, theta_max: float, blocks: int) -> float:
    slopes = block_slopes(theta_max, blocks)
    return math.fsum(k * d for k, d in zip(slopes, fill_blocks(theta, theta_max, blocks)))


@dataclass
class NetworkVarSet:
    """Network variables of one scope; keys are (element id, hour)"""
    scope: Scope
    with_voltage: bool
    with_losses: bool
    angle: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    voltage: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    theta: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    theta_plus: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    theta_minus: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    delta: Dict[Tuple[int, int], Union[VarRef, int]] = field(default_factory=dict)
    blocks: Dict[Tuple[int, int], List[VarRef]] = field(default_factory=dict)
    theta_max: Dict[Tuple[int, int], float] = field(default_factory=dict)
    p_flow: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    q_flow: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_loss: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    q_loss: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    q_gen: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    p_shed: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)
    q_shed: Dict[Tuple[int, int], VarRef] = field(default_factory=dict)

    @property
    def delta_binaries(self) -> int:
        return sum(1 for d in self.delta.values() if isinstance(d, VarRef))

    @classmethod
    def allocate(cls, model: MilpModel, case: SystemCase, scope: Scope, config: LinearizationConfig,
                 with_voltage: bool, with_losses: bool,
                 signs: Optional[Mapping[AngleKey, Optional[int]]] = None) -> 'NetworkVarSet':
        """
        Create the scope's network variables.

        Args:
            with_voltage: LAC variants (voltage deviation, reactive flows, thermal Q)
            with_losses: piecewise loss blocks and the sign binaries
            signs: fixed flow signs from a first-level solve; None entries stay binary
        """
        varset = cls(scope, with_voltage, with_losses)
        s = scope
        for t in case.hours:
            for bus in case.buses:
                fixed = bus.id == case.slack_bus
                varset.angle[(bus.id, t)] = model.continuous(
                    s.name('ang', b=bus.id, t=t), 0.0 if fixed else -math.inf, 0.0 if fixed else math.inf)
                if with_voltage:
                    varset.voltage[(bus.id, t)] = model.continuous(
                        s.name('dV', b=bus.id, t=t), bus.dv_min, bus.dv_max)

            for line in case.lines:
                key = (line.id, t)
                # theta max only shapes the loss blocks; lossless angles keep the physical range
                limit = config.theta_max_for(line.id, t, s.scenario) if with_losses else math.pi
                varset.theta_max[key] = limit
                varset.theta[key] = model.continuous(s.name('th', k=line.id, t=t), -limit, limit)
                varset.p_flow[key] = model.continuous(
                    s.name('Pf', k=line.id, t=t), -line.mva_max, line.mva_max)
                if with_voltage:
                    varset.q_flow[key] = model.continuous(
                        s.name('Qf', k=line.id, t=t), -line.mva_max, line.mva_max)
                if not with_losses:
                    continue

                sign = None
                if signs is not None and (s.is_first_stage or config.fix_scenario_signs):
                    sign = signs.get((line.id, t, s.scenario))
                varset.theta_plus[key] = model.continuous(
                    s.name('thp', k=line.id, t=t), 0.0, 0.0 if sign == 0 else limit)
                varset.theta_minus[key] = model.continuous(
                    s.name('thm', k=line.id, t=t), 0.0, 0.0 if sign == 1 else limit)
                varset.delta[key] = sign if sign is not None else model.binary(s.name('delta', k=line.id, t=t))
                varset.blocks[key] = [
                    model.continuous(s.name('dth', k=line.id, t=t, l=l), 0.0, limit / config.loss_blocks)
                    for l in range(1, config.loss_blocks + 1)
                ]
                varset.p_loss[key] = model.continuous(s.name('PL', k=line.id, t=t), 0.0, math.inf)
                if with_voltage:
                    varset.q_loss[key] = model.continuous(s.name('QL', k=line.id, t=t), 0.0, math.inf)

            if with_voltage:
                for unit in case.thermal_units:
                    varset.q_gen[(unit.id, t)] = model.continuous(
                        s.name('Qg', g=unit.id, t=t), min(0.0, unit.q_min), max(0.0, unit.q_max))

            if not s.is_first_stage:
                for bus in case.buses:
                    pd = bus.active_load[t - 1]
                    qd = bus.reactive_load[t - 1]
                    varset.p_shed[(bus.id, t)] = model.continuous(s.name('Pshed', b=bus.id, t=t), 0.0, pd)
                    if with_voltage:
                        varset.q_shed[(bus.id, t)] = model.continuous(
                            s.name('Qshed', b=bus.id, t=t), 0.0, qd if pd > 0 else 0.0)
        return varset

    def active_terms(self, case: SystemCase, bus_id: int, t: int) -> List[Tuple[VarRef, float]]:
        """Network contribution to the active balance: entering minus leaving minus half losses"""
        terms = []
        for line in case.lines_from[bus_id]:
            terms.append((self.p_flow[(line.id, t)], -1.0))
            if self.with_losses:
                terms.append((self.p_loss[(line.id, t)], -0.5))
        for line in case.lines_to[bus_id]:
            terms.append((self.p_flow[(line.id, t)], 1.0))
            if self.with_losses:
                terms.append((self.p_loss[(line.id, t)], -0.5))
        return terms

    def reactive_terms(self, case: SystemCase, bus_id: int, t: int) -> Tuple[List[Tuple[VarRef, float]], float]:
        """
        Network contribution to the reactive balance.

        The sending-end flow carries the sending shunt; the receiving end gets the
        series flow back plus its own shunt injection b0 * (1 + 2 dV).

        Returns:
            (terms, constant injection)
        """
        terms = []
        constant = 0.0
        for line in case.lines_from[bus_id]:
            terms.append((self.q_flow[(line.id, t)], -1.0))
            if self.with_losses:
                terms.append((self.q_loss[(line.id, t)], -0.5))
        for line in case.lines_to[bus_id]:
            terms.append((self.q_flow[(line.id, t)], 1.0))
            terms.append((self.voltage[(line.from_bus, t)], 2.0 * line.b0))
            terms.append((self.voltage[(line.to_bus, t)], 2.0 * line.b0))
            constant += 2.0 * line.b0
            if self.with_losses:
                terms.append((self.q_loss[(line.id, t)], -0.5))
        return terms, constant


def _angle_definition(model: MilpModel, line: Line, t: int, scope: Scope, varset: NetworkVarSet) -> int:
    return model.add_constraint(
        [(varset.theta[(line.id, t)], 1.0),
         (varset.angle[(line.from_bus, t)], -1.0),
         (varset.angle[(line.to_bus, t)], 1.0)],
        Sense.EQ, 0.0, scope.name('angdef', k=line.id, t=t))


def emit_flow_and_loss(model: MilpModel, case: SystemCase, scope: Scope,
                       config: LinearizationConfig, varset: NetworkVarSet) -> List[int]:
    if not varset.with_voltage:
        raise ModelBuildError("LAC flow equations need a varset allocated with voltage variables")
    ids = []
    for t in case.hours:
        for line in case.lines:
            key = (line.id, t)
            dv_i = varset.voltage[(line.from_bus, t)]
            dv_j = varset.voltage[(line.to_bus, t)]
            theta = varset.theta[key]
            ids.append(_angle_definition(model, line, t, scope, varset))

            # P = (dV_i - dV_j) g - b theta
            ids.append(model.add_constraint(
                [(varset.p_flow[key], 1.0), (dv_i, -line.g), (dv_j, line.g), (theta, line.b)],
                Sense.EQ, 0.0, scope.name('pflow', k=line.id, t=t)))
            # Q = -(1 + 2 dV_i) b0 - (dV_i - dV_j) b - g theta
            ids.append(model.add_constraint(
                [(varset.q_flow[key], 1.0), (dv_i, 2.0 * line.b0 + line.b), (dv_j, -line.b), (theta, line.g)],
                Sense.EQ, -line.b0, scope.name('qflow', k=line.id, t=t)))

            if not varset.with_losses:
                continue

            limit = varset.theta_max[key]
            plus, minus = varset.theta_plus[key], varset.theta_minus[key]
            blocks = varset.blocks[key]
            slopes = block_slopes(limit, config.loss_blocks)

            ids.append(model.add_constraint(
                [(theta, 1.0), (plus, -1.0), (minus, 1.0)], Sense.EQ, 0.0, scope.name('thsplit', k=line.id, t=t)))
            ids.append(model.add_constraint(
                [(d, 1.0) for d in blocks] + [(plus, -1.0), (minus, -1.0)],
                Sense.EQ, 0.0, scope.name('thblocks', k=line.id, t=t)))
            delta = varset.delta[key]
            if isinstance(delta, VarRef):
                ids.append(model.add_constraint(
                    [(plus, 1.0), (delta, -limit)], Sense.LE, 0.0, scope.name('thpos', k=line.id, t=t)))
                ids.append(model.add_constraint(
                    [(minus, 1.0), (delta, limit)], Sense.LE, limit, scope.name('thneg', k=line.id, t=t)))
            for l in range(1, len(blocks)):
                ids.append(model.add_constraint(
                    [(blocks[l], 1.0), (blocks[l - 1], -1.0)], Sense.LE, 0.0,
                    scope.name('thorder', k=line.id, t=t, l=l + 1)))

            ids.append(model.add_constraint(
                [(varset.p_loss[key], 1.0)] + [(d, -line.g * k) for d, k in zip(blocks, slopes)],
                Sense.EQ, 0.0, scope.name('ploss', k=line.id, t=t)))
            ids.append(model.add_constraint(
                [(varset.q_loss[key], 1.0)] + [(d, -abs(line.b) * k) for d, k in zip(blocks, slopes)],
                Sense.EQ, 0.0, scope.name('qloss', k=line.id, t=t)))
    return ids


def polygon_coefficients(segments: int) -> List[Tuple[float, float, float]]:
    """
    Half-planes a*P + b*Q <= c*S of the regular polygon inscribed in the circle of radius S.

    Each edge joins the vertices at angles 2*pi*(r-1)/R and 2*pi*r/R.
    """
    rows = []
    step = 2.0 * math.pi / segments
    for r in range(1, segments + 1):
        a0, a1 = step * (r - 1), step * r
        rows.append((math.sin(a1) - math.sin(a0), -(math.cos(a1) - math.cos(a0)), math.sin(step)))
    return rows


def emit_thermal_capacity(model: MilpModel, line: Line, scope: Scope, segments: int,
                          varset: NetworkVarSet, hours=None) -> List[int]:
    if segments < 4:
        raise ModelBuildError(f"polygon needs at least 4 segments, got {segments}")
    ids = []
    rows = polygon_coefficients(segments)
    for t in hours if hours is not None else sorted({t for (k, t) in varset.p_flow if k == line.id}):
        p = varset.p_flow[(line.id, t)]
        q = varset.q_flow[(line.id, t)]
        for r, (a, b, c) in enumerate(rows, start=1):
            ids.append(model.add_constraint(
                [(p, a), (q, b)], Sense.LE, c * line.mva_max, scope.name('mva', k=line.id, t=t, r=r)))
    return ids


def emit_dc_network(model: MilpModel, case: SystemCase, scope: Scope, varset: NetworkVarSet) -> List[int]:
    """Lossless B-theta flows P = -b * theta; |P| <= mva_max rides on the flow bounds"""
    ids = []
    for t in case.hours:
        for line in case.lines:
            ids.append(_angle_definition(model, line, t, scope, varset))
            ids.append(model.add_constraint(
                [(varset.p_flow[(line.id, t)], 1.0), (varset.theta[(line.id, t)], line.b)],
                Sense.EQ, 0.0, scope.name('pflow', k=line.id, t=t)))
    return ids


def emit_network(model: MilpModel, case: SystemCase, scope: Scope, config: LinearizationConfig,
                 varset: NetworkVarSet) -> List[int]:
    if not varset.with_voltage:
        return emit_dc_network(model, case, scope, varset)
    ids = emit_flow_and_loss(model, case, scope, config, varset)
    for line in case.lines:
        ids.extend(emit_thermal_capacity(model, line, scope, config.polygon_segments, varset, case.hours))
    return ids


@dataclass(frozen=True)
class LossAudit:
    per_line: Dict[AngleKey, float]  # % error keyed by (line, hour, scenario)
    aggregate: Optional[float]       # loss-weighted mean %
    true_loss: float                 # p.u., sum of g * theta^2
    approximate_loss: float          # p.u., sum of g * sum(k * dtheta)
    excluded: int

    def to_dict(self) -> Dict:
        return {
            'aggregate_error_pct': self.aggregate,
            'true_loss_pu': self.true_loss,
            'approximate_loss_pu': self.approximate_loss,
            'entries': len(self.per_line),
            'excluded_entries': self.excluded,
            'max_line_error_pct': max(self.per_line.values()) if self.per_line else None,
        }


def loss_error_audit(values: Mapping[str, float], case: SystemCase, config: LinearizationConfig,
                     varsets: List[NetworkVarSet]) -> Optional[LossAudit]:
    """
    Compare the piecewise loss of each line with g * theta^2 at the solved angle.

    Entries with g * theta^2 below 1e-10 are skipped. Returns None when no
    varset carries loss blocks.
    """
    lossy = [v for v in varsets if v.with_losses]
    if not lossy:
        return None

    line_by_id = {line.id: line for line in case.lines}
    per_line: Dict[AngleKey, float] = {}
    true_total = []
    approx_total = []
    excluded = 0
    for varset in lossy:
        for (line_id, t), blocks in varset.blocks.items():
            line = line_by_id[line_id]
            theta = values[varset.theta[(line_id, t)].name]
            slopes = block_slopes(varset.theta_max[(line_id, t)], config.loss_blocks)
            approximate = line.g * math.fsum(k * values[d.name] for k, d in zip(slopes, blocks))
            exact = line.g * theta * theta
            if exact < LOSS_EPSILON:
                excluded += 1
                continue
            per_line[(line_id, t, varset.scope.scenario)] = abs(exact - approximate) / exact * 100.0
            true_total.append(exact)
            approx_total.append(approximate)

    true_sum = math.fsum(true_total)
    deviation = math.fsum(abs(e - a) for e, a in zip(true_total, approx_total))
    aggregate = deviation / true_sum * 100.0 if true_sum > 0 else None
    if aggregate is not None:
        logger.info(f"Loss audit: aggregate error {aggregate:.3f}% over {len(per_line)} entries "
                    f"({excluded} excluded)")
    return LossAudit(per_line, aggregate, true_sum, math.fsum(approx_total), excluded)


def flow_residuals(values: Mapping[str, float], case: SystemCase, varset: NetworkVarSet) -> float:
    """Largest violation of the flow definitions at the solved point (p.u.)"""
    worst = 0.0
    for t in case.hours:
        for line in case.lines:
            key = (line.id, t)
            theta = values[varset.theta[key].name]
            p = values[varset.p_flow[key].name]
            if varset.with_voltage:
                dv_i = values[varset.voltage[(line.from_bus, t)].name]
                dv_j = values[varset.voltage[(line.to_bus, t)].name]
                q = values[varset.q_flow[key].name]
                worst = max(worst,
                            abs(p - ((dv_i - dv_j) * line.g - line.b * theta)),
                            abs(q - (-(1 + 2 * dv_i) * line.b0 - (dv_i - dv_j) * line.b - line.g * theta)))
            else:
                worst = max(worst, abs(p + line.b * theta))
    return worst


def sign_products(values: Mapping[str, float], varset: NetworkVarSet) -> float:
    """Largest theta_plus * theta_minus product; zero when sign exclusivity holds"""
    if not varset.theta_plus:
        return 0.0
    products = np.array([values[varset.theta_plus[k].name] * values[varset.theta_minus[k].name]
                         for k in varset.theta_plus])
    return float(products.max(initial=0.0))
