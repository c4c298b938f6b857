import logging
import math
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from utils.errors import (
    CaseFormatError,
    CaseValidationError,
    DanglingReferenceError,
    ScenarioError,
)

logger = logging.getLogger(__name__)

SCENARIO_COLUMNS = ['scenario', 'probability', 'farm', 'hour', 'mw']
RELATIVE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Bus:
    """Network bus; loads are stored in per-unit on the case MVA base"""
    id: int
    active_load: Tuple[float, ...]
    reactive_load: Tuple[float, ...]
    dv_min: float
    dv_max: float
    voll_price: float  # $/MWh


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    g: float   # series conductance, p.u.
    b: float   # series susceptance, p.u. (negative for inductive lines)
    b0: float  # shunt susceptance, p.u.
    mva_max: float  # p.u.

    def to_natural(self, mva_base: float) -> Dict[str, float]:
        """Line data with the thermal limit converted back to MVA"""
        return {
            'id': self.id, 'from_bus': self.from_bus, 'to_bus': self.to_bus,
            'g': self.g, 'b': self.b, 'b0': self.b0,
            'mva_max': self.mva_max * mva_base,
        }


@dataclass(frozen=True)
class CostBlock:
    width: float  # p.u.
    slope: float  # $/MWh


@dataclass(frozen=True)
class ThermalUnit:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_up: float    # p.u./h
    ramp_down: float  # p.u./h
    min_up: int
    min_down: int
    startup_cost: float  # $ per start
    no_load_cost: float  # $/h when committed at p_min
    cost_blocks: Tuple[CostBlock, ...]
    reserve_price_up: float    # $/MW
    reserve_price_down: float  # $/MW
    deploy_price_up: float     # $/MWh
    deploy_price_down: float   # $/MWh
    initial_status: int = 0


@dataclass(frozen=True)
class WindFarm:
    id: int
    bus: int
    forecast: Tuple[float, ...]  # p.u.
    spill_price: float  # $/MWh


@dataclass(frozen=True)
class AirflowStep:
    lo: float     # charge side: reservoir fraction; discharge side: p.u. power
    width: float
    rate: float   # kg/(MW*s)

    @property
    def hi(self) -> float:
        return self.lo + self.width


@dataclass(frozen=True)
class CaesUnit:
    id: int
    bus: int
    p_ch_min: float
    p_ch_max: float
    p_dis_min: float
    p_dis_max: float
    a_min: float
    a_max: float
    initial_fraction: float
    cavern_capacity: float  # kg
    charge_steps: Tuple[AirflowStep, ...]
    discharge_steps: Tuple[AirflowStep, ...]
    energy_price: float
    reserve_price_up: float
    reserve_price_down: float
    deploy_price_up: float
    deploy_price_down: float

    @property
    def initial_level(self) -> float:
        return self.initial_fraction * self.a_max


@dataclass(frozen=True)
class SystemCase:
    name: str
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    thermal_units: Tuple[ThermalUnit, ...]
    wind_farms: Tuple[WindFarm, ...]
    caes_units: Tuple[CaesUnit, ...]
    horizon: int
    mva_base: float
    slack_bus: int
    reserve_resolution: float  # tau, hours

    @property
    def hours(self) -> range:
        return range(1, self.horizon + 1)

    @cached_property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @cached_property
    def bus_by_id(self) -> Dict[int, Bus]:
        return {bus.id: bus for bus in self.buses}

    @cached_property
    def lines_from(self) -> Dict[int, List[Line]]:
        index = {bus.id: [] for bus in self.buses}
        for line in self.lines:
            index.setdefault(line.from_bus, []).append(line)
        return index

    @cached_property
    def lines_to(self) -> Dict[int, List[Line]]:
        index = {bus.id: [] for bus in self.buses}
        for line in self.lines:
            index.setdefault(line.to_bus, []).append(line)
        return index

    @cached_property
    def units_at(self) -> Dict[int, List[ThermalUnit]]:
        index = {bus.id: [] for bus in self.buses}
        for unit in self.thermal_units:
            index.setdefault(unit.bus, []).append(unit)
        return index

    @cached_property
    def farms_at(self) -> Dict[int, List[WindFarm]]:
        index = {bus.id: [] for bus in self.buses}
        for farm in self.wind_farms:
            index.setdefault(farm.bus, []).append(farm)
        return index

    @cached_property
    def caes_at(self) -> Dict[int, List[CaesUnit]]:
        index = {bus.id: [] for bus in self.buses}
        for unit in self.caes_units:
            index.setdefault(unit.bus, []).append(unit)
        return index

    def to_mw(self, value_pu: float) -> float:
        return value_pu * self.mva_base

    def without_caes(self) -> 'SystemCase':
        return replace(self, caes_units=())


@dataclass(frozen=True)
class ScenarioSet:
    scenario_ids: Tuple[int, ...]
    probabilities: Tuple[float, ...]
    farm_ids: Tuple[int, ...]
    realizations: np.ndarray  # p.u., shape (farms, hours, scenarios)
    raw_probability_sum: float = 1.0
    renormalization_factor: float = 1.0

    def __len__(self) -> int:
        return len(self.scenario_ids)

    def wind(self, farm_id: int, t: int, scenario_index: int) -> float:
        return float(self.realizations[self.farm_ids.index(farm_id), t - 1, scenario_index])


@dataclass(frozen=True)
class Diagnostic:
    entity: str
    field: str
    invariant: str
    message: str = ''

    def __str__(self):
        text = f"{self.entity}.{self.field}: {self.invariant}"
        return f"{text} ({self.message})" if self.message else text


def empty_scenarios(case: SystemCase) -> ScenarioSet:
    """Scenario set with no scenarios (deterministic first-stage-only model)"""
    shape = (len(case.wind_farms), case.horizon, 0)
    array = np.zeros(shape)
    array.setflags(write=False)
    return ScenarioSet((), (), tuple(f.id for f in case.wind_farms), array)


class CaseFileParser:
    """
    Reader for the sectioned case text format.

    Sections are opened with a ``[NAME]`` header. ``[META]`` holds
    ``key = value`` pairs; every other section is a whitespace-separated
    table, one row per line. ``#`` starts a comment.
    """

    def __init__(self, path: str):
        self.path = str(path)
        self.logger = logging.getLogger(__name__)

    def read_sections(self) -> Dict[str, List[Tuple[int, List[str]]]]:
        if not os.path.exists(self.path):
            raise CaseFormatError("case file not found", path=self.path)

        sections: Dict[str, List[Tuple[int, List[str]]]] = {}
        current = None
        with open(self.path, 'r', encoding='utf-8') as handle:
            for number, raw in enumerate(handle, start=1):
                text = raw.split('#', 1)[0].strip()
                if not text:
                    continue
                if text.startswith('[') and text.endswith(']'):
                    current = text[1:-1].strip().upper()
                    if current in sections:
                        raise CaseFormatError(f"duplicate section [{current}]", self.path, number)
                    sections[current] = []
                    continue
                if current is None:
                    raise CaseFormatError("data outside of any section", self.path, number)
                if current == 'META':
                    if '=' not in text:
                        raise CaseFormatError("expected 'key = value'", self.path, number)
                    key, value = (part.strip() for part in text.split('=', 1))
                    sections[current].append((number, [key.lower(), value]))
                else:
                    sections[current].append((number, text.split()))
        return sections

    def number(self, token: str, line: int, name: str) -> float:
        try:
            value = float(token)
        except ValueError:
            raise CaseFormatError(f"'{token}' is not a number", self.path, line, name)
        if not math.isfinite(value):
            raise CaseFormatError(f"'{token}' is not finite", self.path, line, name)
        return value

    def integer(self, token: str, line: int, name: str) -> int:
        value = self.number(token, line, name)
        if value != int(value):
            raise CaseFormatError(f"'{token}' is not an integer", self.path, line, name)
        return int(value)

    def row(self, tokens: List[str], line: int, columns: List[str]) -> Dict[str, str]:
        if len(tokens) != len(columns):
            raise CaseFormatError(
                f"expected {len(columns)} columns ({' '.join(columns)}), got {len(tokens)}",
                self.path, line)
        return dict(zip(columns, tokens))


BUS_COLUMNS = ['id', 'dv_min', 'dv_max', 'voll']
LINE_COLUMNS = ['id', 'from', 'to', 'g', 'b', 'b0', 'mva_max']
THERMAL_COLUMNS = ['id', 'bus', 'p_min', 'p_max', 'q_min', 'q_max', 'ramp_up', 'ramp_down',
                   'min_up', 'min_down', 'startup', 'no_load', 'c_du', 'c_dd', 'c_bu', 'c_bd',
                   'initial_status']
WIND_COLUMNS = ['id', 'bus', 'spill_price']
CAES_COLUMNS = ['id', 'bus', 'p_ch_min', 'p_ch_max', 'p_dis_min', 'p_dis_max', 'a_min', 'a_max',
                'initial_fraction', 'cavern_capacity', 'energy_price', 'c_du', 'c_dd', 'c_bu', 'c_bd']


def quadratic_to_blocks(a: float, b: float, c: float, p_min: float, p_max: float,
                        blocks: int = 5) -> Tuple[float, List[Tuple[float, float]]]:
    """
    Convert a quadratic fuel cost a*P^2 + b*P + c (P in MW) into equal-width blocks.

    Returns:
        (no_load_cost at p_min, [(width MW, slope $/MWh), ...])
    """
    width = (p_max - p_min) / blocks
    rows = []
    for n in range(blocks):
        lo = p_min + n * width
        hi = lo + width
        # secant slope == marginal cost at the block midpoint
        rows.append((width, b + a * (lo + hi)))
    return a * p_min ** 2 + b * p_min + c, rows


class CaseLoader:
    """Build a validated SystemCase from the sectioned case file"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def load(self, path: str) -> SystemCase:
        parser = CaseFileParser(path)
        sections = parser.read_sections()

        meta = {key: (value, line) for line, (key, value) in sections.get('META', [])}
        for required in ('horizon', 'mva_base', 'slack_bus'):
            if required not in meta:
                raise CaseFormatError(f"[META] is missing '{required}'", parser.path)

        horizon = parser.integer(meta['horizon'][0], meta['horizon'][1], 'horizon')
        base = parser.number(meta['mva_base'][0], meta['mva_base'][1], 'mva_base')
        slack = parser.integer(meta['slack_bus'][0], meta['slack_bus'][1], 'slack_bus')
        tau = 1.0 / 6.0
        if 'reserve_resolution' in meta:
            tau = parser.number(meta['reserve_resolution'][0], meta['reserve_resolution'][1],
                                'reserve_resolution')
        name = meta.get('name', (os.path.splitext(os.path.basename(parser.path))[0], 0))[0]
        if base <= 0:
            raise CaseFormatError("mva_base must be positive", parser.path, meta['mva_base'][1], 'mva_base')

        loads = self._read_loads(parser, sections, horizon)
        buses = []
        for line, tokens in sections.get('BUS', []):
            row = parser.row(tokens, line, BUS_COLUMNS)
            bus_id = parser.integer(row['id'], line, 'id')
            p_series, q_series = loads.get(bus_id, ((0.0,) * horizon, (0.0,) * horizon))
            buses.append(Bus(
                id=bus_id,
                active_load=tuple(v / base for v in p_series),
                reactive_load=tuple(v / base for v in q_series),
                dv_min=parser.number(row['dv_min'], line, 'dv_min'),
                dv_max=parser.number(row['dv_max'], line, 'dv_max'),
                voll_price=parser.number(row['voll'], line, 'voll'),
            ))
        unknown_load_buses = set(loads) - {b.id for b in buses}
        if unknown_load_buses:
            raise DanglingReferenceError(f"loads reference unknown buses {sorted(unknown_load_buses)}")

        lines = []
        for line, tokens in sections.get('LINE', []):
            row = parser.row(tokens, line, LINE_COLUMNS)
            lines.append(Line(
                id=parser.integer(row['id'], line, 'id'),
                from_bus=parser.integer(row['from'], line, 'from'),
                to_bus=parser.integer(row['to'], line, 'to'),
                g=parser.number(row['g'], line, 'g'),
                b=parser.number(row['b'], line, 'b'),
                b0=parser.number(row['b0'], line, 'b0'),
                mva_max=parser.number(row['mva_max'], line, 'mva_max') / base,
            ))

        thermal_units = self._read_thermal(parser, sections, base)
        wind_farms = self._read_wind(parser, sections, base, horizon)
        caes_units = self._read_caes(parser, sections, base)

        case = SystemCase(
            name=name,
            buses=tuple(buses),
            lines=tuple(lines),
            thermal_units=tuple(thermal_units),
            wind_farms=tuple(wind_farms),
            caes_units=tuple(caes_units),
            horizon=horizon,
            mva_base=base,
            slack_bus=slack,
            reserve_resolution=tau,
        )

        self._check_references(case)
        diagnostics = validate_case(case)
        if diagnostics:
            for diagnostic in diagnostics:
                self.logger.error(f"Case {case.name}: {diagnostic}")
            raise CaseValidationError(diagnostics)

        self.logger.info(
            f"Loaded case {case.name}: {len(case.buses)} buses, {len(case.lines)} lines, "
            f"{len(case.thermal_units)} thermal units, {len(case.wind_farms)} wind farms, "
            f"{len(case.caes_units)} CAES units, T={case.horizon}")
        return case

    def _read_loads(self, parser, sections, horizon) -> Dict[int, Tuple[Tuple[float, ...], Tuple[float, ...]]]:
        loads: Dict[int, List[Optional[Tuple[float, ...]]]] = {}

        for line, tokens in sections.get('BUS.LOAD', []):
            if len(tokens) != horizon + 2:
                raise CaseFormatError(
                    f"expected bus, kind and {horizon} hourly values", parser.path, line)
            bus_id = parser.integer(tokens[0], line, 'bus')
            kind = tokens[1].upper()
            if kind not in ('P', 'Q'):
                raise CaseFormatError(f"load kind must be P or Q, got '{tokens[1]}'", parser.path, line, 'kind')
            values = tuple(parser.number(v, line, f'h{h + 1}') for h, v in enumerate(tokens[2:]))
            slot = loads.setdefault(bus_id, [None, None])
            slot[0 if kind == 'P' else 1] = values

        if 'BUS.PEAK' in sections:
            profile_rows = sections.get('META.PROFILE', [])
            if len(profile_rows) != 1:
                raise CaseFormatError("[BUS.PEAK] requires exactly one [META.PROFILE] row", parser.path)
            profile_line, profile_tokens = profile_rows[0]
            if len(profile_tokens) != horizon:
                raise CaseFormatError(f"profile needs {horizon} multipliers", parser.path, profile_line)
            profile = [parser.number(v, profile_line, 'profile') for v in profile_tokens]
            for line, tokens in sections['BUS.PEAK']:
                row = parser.row(tokens, line, ['bus', 'pd', 'qd'])
                bus_id = parser.integer(row['bus'], line, 'bus')
                pd_peak = parser.number(row['pd'], line, 'pd')
                qd_peak = parser.number(row['qd'], line, 'qd')
                slot = loads.setdefault(bus_id, [None, None])
                slot[0] = tuple(pd_peak * m for m in profile)
                slot[1] = tuple(qd_peak * m for m in profile)

        zeros = (0.0,) * horizon
        return {bus: (p or zeros, q or zeros) for bus, (p, q) in loads.items()}

    def _read_thermal(self, parser, sections, base) -> List[ThermalUnit]:
        blocks: Dict[int, List[CostBlock]] = {}
        for line, tokens in sections.get('THERMAL.BLOCKS', []):
            row = parser.row(tokens, line, ['unit', 'width', 'slope'])
            unit_id = parser.integer(row['unit'], line, 'unit')
            blocks.setdefault(unit_id, []).append(CostBlock(
                width=parser.number(row['width'], line, 'width') / base,
                slope=parser.number(row['slope'], line, 'slope'),
            ))

        quadratic: Dict[int, Tuple[float, float, float, int, int]] = {}
        for line, tokens in sections.get('THERMAL.QUADRATIC', []):
            row = parser.row(tokens, line, ['unit', 'a', 'b', 'c', 'nsf'])
            unit_id = parser.integer(row['unit'], line, 'unit')
            quadratic[unit_id] = (
                parser.number(row['a'], line, 'a'),
                parser.number(row['b'], line, 'b'),
                parser.number(row['c'], line, 'c'),
                parser.integer(row['nsf'], line, 'nsf'),
                line,
            )

        units = []
        for line, tokens in sections.get('THERMAL', []):
            row = parser.row(tokens, line, THERMAL_COLUMNS)
            unit_id = parser.integer(row['id'], line, 'id')
            p_min = parser.number(row['p_min'], line, 'p_min')
            p_max = parser.number(row['p_max'], line, 'p_max')

            if unit_id in quadratic:
                a, b, c, nsf, q_line = quadratic[unit_id]
                if unit_id in blocks:
                    raise CaseFormatError(
                        f"unit {unit_id} has both explicit and quadratic cost data", parser.path, q_line)
                if nsf < 1:
                    raise CaseFormatError("nsf must be at least 1", parser.path, q_line, 'nsf')
                no_load, rows = quadratic_to_blocks(a, b, c, p_min, p_max, nsf)
                unit_blocks = tuple(CostBlock(width / base, slope) for width, slope in rows)
            else:
                if row['no_load'].lower() == 'auto':
                    raise CaseFormatError(
                        "no_load 'auto' requires a [THERMAL.QUADRATIC] row", parser.path, line, 'no_load')
                no_load = parser.number(row['no_load'], line, 'no_load')
                unit_blocks = tuple(blocks.get(unit_id, ()))

            units.append(ThermalUnit(
                id=unit_id,
                bus=parser.integer(row['bus'], line, 'bus'),
                p_min=p_min / base,
                p_max=p_max / base,
                q_min=parser.number(row['q_min'], line, 'q_min') / base,
                q_max=parser.number(row['q_max'], line, 'q_max') / base,
                ramp_up=parser.number(row['ramp_up'], line, 'ramp_up') / base,
                ramp_down=parser.number(row['ramp_down'], line, 'ramp_down') / base,
                min_up=parser.integer(row['min_up'], line, 'min_up'),
                min_down=parser.integer(row['min_down'], line, 'min_down'),
                startup_cost=parser.number(row['startup'], line, 'startup'),
                no_load_cost=no_load,
                cost_blocks=unit_blocks,
                reserve_price_up=parser.number(row['c_du'], line, 'c_du'),
                reserve_price_down=parser.number(row['c_dd'], line, 'c_dd'),
                deploy_price_up=parser.number(row['c_bu'], line, 'c_bu'),
                deploy_price_down=parser.number(row['c_bd'], line, 'c_bd'),
                initial_status=parser.integer(row['initial_status'], line, 'initial_status'),
            ))

        orphans = (set(blocks) | set(quadratic)) - {u.id for u in units}
        if orphans:
            raise DanglingReferenceError(f"cost data references unknown thermal units {sorted(orphans)}")
        return units

    def _read_wind(self, parser, sections, base, horizon) -> List[WindFarm]:
        forecasts: Dict[int, Tuple[float, ...]] = {}
        for line, tokens in sections.get('WIND.FORECAST', []):
            if len(tokens) != horizon + 1:
                raise CaseFormatError(f"expected farm and {horizon} hourly values", parser.path, line)
            farm_id = parser.integer(tokens[0], line, 'farm')
            forecasts[farm_id] = tuple(parser.number(v, line, f'h{h + 1}') / base
                                       for h, v in enumerate(tokens[1:]))

        farms = []
        for line, tokens in sections.get('WIND', []):
            row = parser.row(tokens, line, WIND_COLUMNS)
            farm_id = parser.integer(row['id'], line, 'id')
            if farm_id not in forecasts:
                raise CaseFormatError(f"wind farm {farm_id} has no forecast row", parser.path, line)
            farms.append(WindFarm(
                id=farm_id,
                bus=parser.integer(row['bus'], line, 'bus'),
                forecast=forecasts[farm_id],
                spill_price=parser.number(row['spill_price'], line, 'spill_price'),
            ))
        orphans = set(forecasts) - {f.id for f in farms}
        if orphans:
            raise DanglingReferenceError(f"forecasts reference unknown wind farms {sorted(orphans)}")
        return farms

    def _read_caes(self, parser, sections, base) -> List[CaesUnit]:
        charge: Dict[int, List[AirflowStep]] = {}
        for line, tokens in sections.get('CAES.CHARGE_STEPS', []):
            row = parser.row(tokens, line, ['unit', 'lo', 'width', 'rate'])
            charge.setdefault(parser.integer(row['unit'], line, 'unit'), []).append(AirflowStep(
                lo=parser.number(row['lo'], line, 'lo'),
                width=parser.number(row['width'], line, 'width'),
                rate=parser.number(row['rate'], line, 'rate'),
            ))
        discharge: Dict[int, List[AirflowStep]] = {}
        for line, tokens in sections.get('CAES.DISCHARGE_STEPS', []):
            row = parser.row(tokens, line, ['unit', 'lo', 'width', 'rate'])
            discharge.setdefault(parser.integer(row['unit'], line, 'unit'), []).append(AirflowStep(
                lo=parser.number(row['lo'], line, 'lo') / base,
                width=parser.number(row['width'], line, 'width') / base,
                rate=parser.number(row['rate'], line, 'rate'),
            ))

        units = []
        for line, tokens in sections.get('CAES', []):
            row = parser.row(tokens, line, CAES_COLUMNS)
            unit_id = parser.integer(row['id'], line, 'id')
            units.append(CaesUnit(
                id=unit_id,
                bus=parser.integer(row['bus'], line, 'bus'),
                p_ch_min=parser.number(row['p_ch_min'], line, 'p_ch_min') / base,
                p_ch_max=parser.number(row['p_ch_max'], line, 'p_ch_max') / base,
                p_dis_min=parser.number(row['p_dis_min'], line, 'p_dis_min') / base,
                p_dis_max=parser.number(row['p_dis_max'], line, 'p_dis_max') / base,
                a_min=parser.number(row['a_min'], line, 'a_min'),
                a_max=parser.number(row['a_max'], line, 'a_max'),
                initial_fraction=parser.number(row['initial_fraction'], line, 'initial_fraction'),
                cavern_capacity=parser.number(row['cavern_capacity'], line, 'cavern_capacity'),
                charge_steps=tuple(charge.get(unit_id, ())),
                discharge_steps=tuple(discharge.get(unit_id, ())),
                energy_price=parser.number(row['energy_price'], line, 'energy_price'),
                reserve_price_up=parser.number(row['c_du'], line, 'c_du'),
                reserve_price_down=parser.number(row['c_dd'], line, 'c_dd'),
                deploy_price_up=parser.number(row['c_bu'], line, 'c_bu'),
                deploy_price_down=parser.number(row['c_bd'], line, 'c_bd'),
            ))
        orphans = (set(charge) | set(discharge)) - {u.id for u in units}
        if orphans:
            raise DanglingReferenceError(f"airflow steps reference unknown CAES units {sorted(orphans)}")
        return units

    def _check_references(self, case: SystemCase):
        bus_ids = set(case.bus_ids)
        dangling = []
        for line in case.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in bus_ids:
                    dangling.append(f"line {line.id} -> bus {end}")
        for kind, entities in (('thermal', case.thermal_units), ('wind', case.wind_farms),
                               ('caes', case.caes_units)):
            for entity in entities:
                if entity.bus not in bus_ids:
                    dangling.append(f"{kind} {entity.id} -> bus {entity.bus}")
        if case.slack_bus not in bus_ids:
            dangling.append(f"slack -> bus {case.slack_bus}")
        if dangling:
            raise DanglingReferenceError("dangling references: " + ', '.join(dangling))


def load_case(path: str) -> SystemCase:
    return CaseLoader().load(path)


def _check_partition(steps, lo, hi, entity, field_name, diagnostics):
    if not steps:
        diagnostics.append(Diagnostic(entity, field_name, 'at least one step required'))
        return
    tolerance = RELATIVE_TOLERANCE * max(1.0, abs(hi))
    cursor = lo
    for index, step in enumerate(steps, start=1):
        if step.width <= 0:
            diagnostics.append(Diagnostic(entity, field_name, 'step widths positive', f"step {index}"))
        if abs(step.lo - cursor) > tolerance:
            kind = 'gap' if step.lo > cursor else 'overlap'
            diagnostics.append(Diagnostic(
                entity, field_name, 'steps partition the range contiguously',
                f"{kind} before step {index}: expected start {cursor:.6g}, got {step.lo:.6g}"))
        cursor = step.lo + step.width
    if abs(cursor - hi) > tolerance:
        diagnostics.append(Diagnostic(
            entity, field_name, 'steps partition the range contiguously',
            f"coverage ends at {cursor:.6g}, expected {hi:.6g}"))
    rates = [s.rate for s in steps]
    if any(r <= 0 for r in rates):
        diagnostics.append(Diagnostic(entity, field_name, 'airflow rates positive'))
    if any(later > earlier + 1e-12 for earlier, later in zip(rates, rates[1:])):
        diagnostics.append(Diagnostic(entity, field_name, 'airflow rates nonincreasing'))


def validate_case(case: SystemCase) -> List[Diagnostic]:
    """Return one diagnostic per violated invariant; an empty list means the case is well formed"""
    diagnostics: List[Diagnostic] = []
    T = case.horizon
    if T < 1:
        diagnostics.append(Diagnostic('case', 'horizon', 'T >= 1'))
    if case.mva_base <= 0:
        diagnostics.append(Diagnostic('case', 'mva_base', 'mva_base > 0'))
    if case.reserve_resolution <= 0:
        diagnostics.append(Diagnostic('case', 'reserve_resolution', 'tau > 0'))

    bus_ids = [b.id for b in case.buses]
    if len(set(bus_ids)) != len(bus_ids):
        diagnostics.append(Diagnostic('case', 'buses', 'unique bus ids'))
    if bus_ids.count(case.slack_bus) != 1:
        diagnostics.append(Diagnostic('case', 'slack_bus', 'exactly one slack bus'))
    known = set(bus_ids)

    for bus in case.buses:
        entity = f"bus {bus.id}"
        if not bus.dv_min <= 0 <= bus.dv_max:
            diagnostics.append(Diagnostic(entity, 'dv_min/dv_max', 'dv_min <= 0 <= dv_max'))
        for name, series in (('active_load', bus.active_load), ('reactive_load', bus.reactive_load)):
            if len(series) != T:
                diagnostics.append(Diagnostic(entity, name, 'series length equals horizon'))
            if any(v < 0 for v in series):
                diagnostics.append(Diagnostic(entity, name, 'loads nonnegative'))

    for line in case.lines:
        entity = f"line {line.id}"
        if line.g < 0:
            diagnostics.append(Diagnostic(entity, 'g', 'g >= 0'))
        if line.mva_max <= 0:
            diagnostics.append(Diagnostic(entity, 'mva_max', 'mva_max > 0'))
        if line.from_bus == line.to_bus:
            diagnostics.append(Diagnostic(entity, 'from_bus/to_bus', 'from_bus != to_bus'))
        for end in (line.from_bus, line.to_bus):
            if end not in known:
                diagnostics.append(Diagnostic(entity, 'bus', 'valid bus reference', str(end)))

    for unit in case.thermal_units:
        entity = f"thermal {unit.id}"
        if unit.bus not in known:
            diagnostics.append(Diagnostic(entity, 'bus', 'valid bus reference', str(unit.bus)))
        if unit.p_min > unit.p_max:
            diagnostics.append(Diagnostic(entity, 'p_min/p_max', 'p_min <= p_max'))
        if unit.q_min > unit.q_max:
            diagnostics.append(Diagnostic(entity, 'q_min/q_max', 'q_min <= q_max'))
        if unit.min_up < 1 or unit.min_down < 1:
            diagnostics.append(Diagnostic(entity, 'min_up/min_down', 'min_up, min_down >= 1'))
        if unit.ramp_up < 0 or unit.ramp_down < 0:
            diagnostics.append(Diagnostic(entity, 'ramp_up/ramp_down', 'ramps nonnegative'))
        if unit.initial_status not in (0, 1):
            diagnostics.append(Diagnostic(entity, 'initial_status', 'initial status is 0 or 1'))
        widths = sum(block.width for block in unit.cost_blocks)
        span = unit.p_max - unit.p_min
        if not unit.cost_blocks or abs(widths - span) > RELATIVE_TOLERANCE * max(1.0, span):
            diagnostics.append(Diagnostic(
                entity, 'cost_blocks', 'block widths sum to p_max - p_min',
                f"{widths * case.mva_base:.6g} MW vs {span * case.mva_base:.6g} MW"))
        slopes = [block.slope for block in unit.cost_blocks]
        if any(later < earlier for earlier, later in zip(slopes, slopes[1:])):
            diagnostics.append(Diagnostic(entity, 'cost_blocks', 'slopes nondecreasing'))

    for farm in case.wind_farms:
        entity = f"wind {farm.id}"
        if farm.bus not in known:
            diagnostics.append(Diagnostic(entity, 'bus', 'valid bus reference', str(farm.bus)))
        if len(farm.forecast) != T:
            diagnostics.append(Diagnostic(entity, 'forecast', 'series length equals horizon'))
        if any(v < 0 for v in farm.forecast):
            diagnostics.append(Diagnostic(entity, 'forecast', 'forecast nonnegative'))

    for unit in case.caes_units:
        entity = f"caes {unit.id}"
        if unit.bus not in known:
            diagnostics.append(Diagnostic(entity, 'bus', 'valid bus reference', str(unit.bus)))
        if not 0 <= unit.a_min < unit.a_max <= 1:
            diagnostics.append(Diagnostic(entity, 'a_min/a_max', '0 <= a_min < a_max <= 1'))
        if not unit.a_min <= unit.initial_level <= unit.a_max:
            diagnostics.append(Diagnostic(entity, 'initial_fraction', 'a_min <= initial level <= a_max'))
        if not 0 <= unit.p_ch_min <= unit.p_ch_max:
            diagnostics.append(Diagnostic(entity, 'p_ch_min/p_ch_max', '0 <= p_ch_min <= p_ch_max'))
        if not 0 <= unit.p_dis_min <= unit.p_dis_max:
            diagnostics.append(Diagnostic(entity, 'p_dis_min/p_dis_max', '0 <= p_dis_min <= p_dis_max'))
        if unit.cavern_capacity <= 0:
            diagnostics.append(Diagnostic(entity, 'cavern_capacity', 'cavern capacity positive'))
        _check_partition(unit.charge_steps, unit.a_min, unit.a_max, entity, 'charge_steps', diagnostics)
        _check_partition(unit.discharge_steps, unit.p_dis_min, unit.p_dis_max, entity,
                         'discharge_steps', diagnostics)

    return diagnostics


def load_scenarios(path: str, case: SystemCase,
                   tolerance: float = 0.005) -> ScenarioSet:
    """
    Read a delimited scenario file with header ``scenario,probability,farm,hour,mw``.

    Probabilities are renormalised to sum to one when the raw sum lies within
    ``tolerance`` of one; the applied factor is kept on the returned set.
    """
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        frame = pd.read_csv(path, comment='#', skipinitialspace=True)
    except Exception as e:
        raise ScenarioError(f"could not parse scenario file {path}: {e}")

    frame.columns = [str(c).strip().lower() for c in frame.columns]
    if list(frame.columns) != SCENARIO_COLUMNS:
        raise ScenarioError(f"scenario header must be {','.join(SCENARIO_COLUMNS)}, got {','.join(frame.columns)}")
    if frame.empty:
        raise ScenarioError("scenario file holds no rows; at least one scenario is required")

    probability_by_scenario = frame.groupby('scenario')['probability'].agg(['min', 'max'])
    inconsistent = probability_by_scenario[probability_by_scenario['min'] != probability_by_scenario['max']]
    if not inconsistent.empty:
        raise ScenarioError(f"scenarios {list(inconsistent.index)} carry more than one probability")

    scenario_ids = tuple(int(s) for s in sorted(probability_by_scenario.index))
    raw = [float(probability_by_scenario.loc[s, 'min']) for s in scenario_ids]
    negative = [s for s, p in zip(scenario_ids, raw) if p < 0]
    if negative:
        raise ScenarioError(f"negative probability for scenarios {negative}")
    nonpositive = [s for s, p in zip(scenario_ids, raw) if p == 0]
    if nonpositive:
        raise ScenarioError(f"zero probability for scenarios {nonpositive}")

    raw_sum = float(math.fsum(raw))
    if abs(raw_sum - 1.0) > tolerance:
        raise ScenarioError(f"probabilities sum to {raw_sum:.6g}, beyond tolerance {tolerance} of 1")
    factor = 1.0 / raw_sum
    probabilities = tuple(p * factor for p in raw)
    if factor != 1.0:
        logger.warning(f"Scenario probabilities sum to {raw_sum:.6g}; renormalised by factor {factor:.9g}")

    farm_ids = tuple(f.id for f in case.wind_farms)
    unknown = sorted(set(int(f) for f in frame['farm'].unique()) - set(farm_ids))
    if unknown:
        raise ScenarioError(f"scenario file references farms {unknown} missing from case {case.name}")
    if (frame['mw'] < 0).any():
        raise ScenarioError("wind realizations must be nonnegative")

    realizations = np.full((len(farm_ids), case.horizon, len(scenario_ids)), np.nan)
    scenario_pos = {s: i for i, s in enumerate(scenario_ids)}
    farm_pos = {f: i for i, f in enumerate(farm_ids)}
    for row in frame.itertuples(index=False):
        hour = int(row.hour)
        if not 1 <= hour <= case.horizon:
            raise ScenarioError(f"hour {hour} outside horizon 1..{case.horizon}")
        realizations[farm_pos[int(row.farm)], hour - 1, scenario_pos[int(row.scenario)]] = float(row.mw) / case.mva_base

    missing = np.argwhere(np.isnan(realizations))
    if missing.size:
        f, t, s = missing[0]
        raise ScenarioError(
            f"missing cell for farm {farm_ids[f]}, hour {t + 1}, scenario {scenario_ids[s]} "
            f"({len(missing)} missing in total)")
    realizations.setflags(write=False)

    logger.info(f"Loaded {len(scenario_ids)} scenarios for {len(farm_ids)} wind farm(s); "
                f"renormalization factor {factor:.9g}")
    return ScenarioSet(
        scenario_ids=scenario_ids,
        probabilities=probabilities,
        farm_ids=farm_ids,
        realizations=realizations,
        raw_probability_sum=raw_sum,
        renormalization_factor=factor,
    )


def perturb_loads(case: SystemCase, sigma: float, seed: int) -> SystemCase:
    """Scale every load by (1 + sigma * N(0,1)), clipped at zero, reproducibly for a seed"""
    if sigma <= 0:
        return case
    rng = np.random.default_rng(seed)
    buses = []
    for bus in case.buses:
        noise = 1.0 + sigma * rng.standard_normal(case.horizon)
        noise = np.clip(noise, 0.0, None)
        buses.append(replace(
            bus,
            active_load=tuple(float(v) for v in np.asarray(bus.active_load) * noise),
            reactive_load=tuple(float(v) for v in np.asarray(bus.reactive_load) * noise),
        ))
    return replace(case, buses=tuple(buses))


def _fmt(value: float) -> str:
    return repr(float(value))


def dump_case(case: SystemCase, path: str):
    """Write the case back in the sectioned text format (natural units)"""
    base = case.mva_base
    out = ['[META]',
           f"name = {case.name}",
           f"horizon = {case.horizon}",
           f"mva_base = {_fmt(base)}",
           f"slack_bus = {case.slack_bus}",
           f"reserve_resolution = {_fmt(case.reserve_resolution)}",
           '', '[BUS]', '# ' + ' '.join(BUS_COLUMNS)]
    for bus in case.buses:
        out.append(f"{bus.id} {_fmt(bus.dv_min)} {_fmt(bus.dv_max)} {_fmt(bus.voll_price)}")
    out += ['', '[BUS.LOAD]', '# bus kind h1..hT (MW / MVAr)']
    for bus in case.buses:
        out.append(f"{bus.id} P " + ' '.join(_fmt(v * base) for v in bus.active_load))
        out.append(f"{bus.id} Q " + ' '.join(_fmt(v * base) for v in bus.reactive_load))
    out += ['', '[LINE]', '# ' + ' '.join(LINE_COLUMNS)]
    for line in case.lines:
        out.append(f"{line.id} {line.from_bus} {line.to_bus} {_fmt(line.g)} {_fmt(line.b)} "
                   f"{_fmt(line.b0)} {_fmt(line.mva_max * base)}")
    out += ['', '[THERMAL]', '# ' + ' '.join(THERMAL_COLUMNS)]
    for u in case.thermal_units:
        out.append(' '.join([
            str(u.id), str(u.bus), _fmt(u.p_min * base), _fmt(u.p_max * base), _fmt(u.q_min * base),
            _fmt(u.q_max * base), _fmt(u.ramp_up * base), _fmt(u.ramp_down * base), str(u.min_up),
            str(u.min_down), _fmt(u.startup_cost), _fmt(u.no_load_cost), _fmt(u.reserve_price_up),
            _fmt(u.reserve_price_down), _fmt(u.deploy_price_up), _fmt(u.deploy_price_down),
            str(u.initial_status)]))
    out += ['', '[THERMAL.BLOCKS]', '# unit width slope']
    for u in case.thermal_units:
        for block in u.cost_blocks:
            out.append(f"{u.id} {_fmt(block.width * base)} {_fmt(block.slope)}")
    if case.wind_farms:
        out += ['', '[WIND]', '# ' + ' '.join(WIND_COLUMNS)]
        for farm in case.wind_farms:
            out.append(f"{farm.id} {farm.bus} {_fmt(farm.spill_price)}")
        out += ['', '[WIND.FORECAST]', '# farm h1..hT (MW)']
        for farm in case.wind_farms:
            out.append(f"{farm.id} " + ' '.join(_fmt(v * base) for v in farm.forecast))
    if case.caes_units:
        out += ['', '[CAES]', '# ' + ' '.join(CAES_COLUMNS)]
        for c in case.caes_units:
            out.append(' '.join([
                str(c.id), str(c.bus), _fmt(c.p_ch_min * base), _fmt(c.p_ch_max * base),
                _fmt(c.p_dis_min * base), _fmt(c.p_dis_max * base), _fmt(c.a_min), _fmt(c.a_max),
                _fmt(c.initial_fraction), _fmt(c.cavern_capacity), _fmt(c.energy_price),
                _fmt(c.reserve_price_up), _fmt(c.reserve_price_down), _fmt(c.deploy_price_up),
                _fmt(c.deploy_price_down)]))
        out += ['', '[CAES.CHARGE_STEPS]', '# unit lo width rate']
        for c in case.caes_units:
            for step in c.charge_steps:
                out.append(f"{c.id} {_fmt(step.lo)} {_fmt(step.width)} {_fmt(step.rate)}")
        out += ['', '[CAES.DISCHARGE_STEPS]', '# unit lo(MW) width(MW) rate']
        for c in case.caes_units:
            for step in c.discharge_steps:
                out.append(f"{c.id} {_fmt(step.lo * base)} {_fmt(step.width * base)} {_fmt(step.rate)}")

    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write('\n'.join(out) + '\n')
