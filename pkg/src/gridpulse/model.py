"""Network data model: buses, branches, generators, loads, counties.

A :class:`GridCase` is treated as immutable once it has been validated and
shared; simulation code copies it first and mutates only the copy through the
``set_*_status`` helpers.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

from .geo import haversine_km, midpoint


class ValidationError(ValueError):
    """A structurally invalid case: dangling references, bad slack, etc."""


class BusKind(Enum):
    PQ = "PQ"
    PV = "PV"
    SLACK = "SLACK"


@dataclass
class Bus:
    id: int
    kind: BusKind
    voltage_setpoint: float = 1.0
    vm: float = 1.0  # last known magnitude, per unit
    va: float = 0.0  # last known angle, radians
    base_kv: float = 0.0
    lat: float = math.nan
    lon: float = math.nan
    county_id: int | None = None
    in_service: bool = True
    gs_mw: float = 0.0  # shunt conductance, MW consumed at 1.0 pu
    bs_mvar: float = 0.0  # shunt susceptance, Mvar injected at 1.0 pu


@dataclass
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0  # total line charging susceptance, pu
    tap: float = 1.0  # off-nominal turns ratio at the from side
    shift_deg: float = 0.0
    rate_mva: float = 0.0  # 0 means unlimited
    in_service: bool = True
    county_id: int | None = None


@dataclass
class Generator:
    id: int
    bus: int
    p_mw: float
    q_mvar: float = 0.0
    q_min_mvar: float = -9999.0
    q_max_mvar: float = 9999.0
    p_min_mw: float = 0.0
    p_max_mw: float = 0.0
    voltage_setpoint: float = 1.0
    in_service: bool = True


@dataclass
class Load:
    id: int
    bus: int
    p_mw: float
    q_mvar: float = 0.0
    in_service: bool = True


@dataclass
class County:
    id: int
    name: str
    lat: float
    lon: float
    pop_density: float = 0.0


@dataclass
class GridCase:
    name: str
    base_mva: float
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    generators: list[Generator] = field(default_factory=list)
    loads: list[Load] = field(default_factory=list)
    counties: list[County] = field(default_factory=list)

    # ------------------------------------------------------------------
    # lookups

    def bus(self, bus_id: int) -> Bus:
        b = self._bus_index().get(bus_id)
        if b is None:
            raise KeyError(f"no bus with id {bus_id}")
        return b

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(f"no branch with id {branch_id}")

    def county(self, county_id: int) -> County:
        for c in self.counties:
            if c.id == county_id:
                return c
        raise KeyError(f"no county with id {county_id}")

    def _bus_index(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    def slack_bus(self) -> Bus:
        slacks = [b for b in self.buses if b.in_service and b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise ValidationError(f"expected exactly one in-service slack bus, found {len(slacks)}")
        return slacks[0]

    def generators_at(self, bus_id: int) -> list[Generator]:
        return [g for g in self.generators if g.bus == bus_id and g.in_service]

    def loads_at(self, bus_id: int) -> list[Load]:
        return [l for l in self.loads if l.bus == bus_id and l.in_service]

    def in_service_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.in_service]

    def in_service_branches(self) -> list[Branch]:
        live = {b.id for b in self.buses if b.in_service}
        return [
            br
            for br in self.branches
            if br.in_service and br.from_bus in live and br.to_bus in live
        ]

    def total_load_mw(self) -> float:
        live = {b.id for b in self.buses if b.in_service}
        return sum(l.p_mw for l in self.loads if l.in_service and l.bus in live)

    # ------------------------------------------------------------------
    # mutation helpers (used on private copies only)

    def copy(self) -> "GridCase":
        return GridCase(
            name=self.name,
            base_mva=self.base_mva,
            buses=[replace(b) for b in self.buses],
            branches=[replace(br) for br in self.branches],
            generators=[replace(g) for g in self.generators],
            loads=[replace(l) for l in self.loads],
            counties=list(self.counties),  # county rows are never mutated
        )

    def set_branch_status(self, branch_id: int, in_service: bool) -> None:
        self.branch(branch_id).in_service = in_service

    def set_bus_status(self, bus_id: int, in_service: bool) -> None:
        """Switch a bus; taking one out also drops its branches, gens and loads."""
        bus = self.bus(bus_id)
        bus.in_service = in_service
        if in_service:
            return
        bus.vm = 0.0
        bus.va = 0.0
        for br in self.branches:
            if br.from_bus == bus_id or br.to_bus == bus_id:
                br.in_service = False
        for g in self.generators:
            if g.bus == bus_id:
                g.in_service = False
        for l in self.loads:
            if l.bus == bus_id:
                l.in_service = False

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [_bus_dict(b) for b in self.buses],
            "branches": [vars(br).copy() for br in self.branches],
            "generators": [vars(g).copy() for g in self.generators],
            "loads": [vars(l).copy() for l in self.loads],
            "counties": [vars(c).copy() for c in self.counties],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridCase":
        return cls(
            name=data["name"],
            base_mva=data["base_mva"],
            buses=[_bus_from_dict(d) for d in data["buses"]],
            branches=[Branch(**d) for d in data["branches"]],
            generators=[Generator(**d) for d in data["generators"]],
            loads=[Load(**d) for d in data["loads"]],
            counties=[County(**d) for d in data["counties"]],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridCase":
        return cls.from_dict(json.loads(text))


def _bus_dict(b: Bus) -> dict:
    d = vars(b).copy()
    d["kind"] = b.kind.value
    return d


def _bus_from_dict(d: dict) -> Bus:
    d = dict(d)
    d["kind"] = BusKind(d["kind"])
    return Bus(**d)


# ----------------------------------------------------------------------
# validation and derived assignment


def validate_case(case: GridCase) -> None:
    """Check referential and structural integrity, raising ValidationError.

    Connectivity of the fully in-service network is only warned about, since
    a case with a detached island can still be simulated after pruning.
    """
    ids = [b.id for b in case.buses]
    if len(ids) != len(set(ids)):
        raise ValidationError("duplicate bus ids")
    bus_ids = set(ids)

    br_ids = [br.id for br in case.branches]
    if len(br_ids) != len(set(br_ids)):
        raise ValidationError("duplicate branch ids")

    if case.base_mva <= 0:
        raise ValidationError(f"base_mva must be positive, got {case.base_mva}")

    case.slack_bus()  # raises unless exactly one in-service slack

    for b in case.buses:
        if math.isnan(b.lat) or math.isnan(b.lon):
            raise ValidationError(f"bus {b.id} has no coordinates")
        if not (-90.0 <= b.lat <= 90.0 and -180.0 <= b.lon <= 180.0):
            raise ValidationError(f"bus {b.id} coordinates out of range")
        if b.voltage_setpoint <= 0:
            raise ValidationError(f"bus {b.id} voltage setpoint must be positive")

    for br in case.branches:
        if br.from_bus not in bus_ids or br.to_bus not in bus_ids:
            raise ValidationError(f"branch {br.id} references a missing bus")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {br.id} connects bus {br.from_bus} to itself")
        if br.in_service and br.x == 0.0:
            raise ValidationError(f"branch {br.id} is in service with zero reactance")
        if br.tap <= 0.0:
            raise ValidationError(f"branch {br.id} has a non-positive tap ratio")

    for g in case.generators:
        if g.bus not in bus_ids:
            raise ValidationError(f"generator {g.id} references missing bus {g.bus}")
        if g.q_min_mvar > g.q_max_mvar:
            raise ValidationError(f"generator {g.id} has q_min above q_max")
        if g.p_min_mw > g.p_max_mw:
            raise ValidationError(f"generator {g.id} has p_min above p_max")

    for l in case.loads:
        if l.bus not in bus_ids:
            raise ValidationError(f"load {l.id} references missing bus {l.bus}")

    cids = [c.id for c in case.counties]
    if len(cids) != len(set(cids)):
        raise ValidationError("duplicate county ids")
    for c in case.counties:
        if not (-90.0 <= c.lat <= 90.0 and -180.0 <= c.lon <= 180.0):
            raise ValidationError(f"county {c.id} coordinates out of range")

    known = set(cids)
    for b in case.buses:
        if b.county_id is not None and b.county_id not in known:
            raise ValidationError(f"bus {b.id} assigned to unknown county {b.county_id}")

    if not _connected_when_all_live(case):
        warnings.warn(
            f"case {case.name!r}: network is not connected with every element in service",
            stacklevel=2,
        )


def assign_counties(case: GridCase) -> GridCase:
    """Fill in county ids for buses and branches that lack an explicit one.

    A bus maps to the county whose centroid is nearest to it; a branch maps to
    the county nearest its geographic midpoint. Distance ties break toward the
    smallest county id. Returns the same case for chaining.
    """
    if not case.counties:
        return case
    counties = sorted(case.counties, key=lambda c: c.id)

    def nearest(lat: float, lon: float) -> int:
        best_id = counties[0].id
        best_d = math.inf
        for c in counties:
            d = haversine_km(lat, lon, c.lat, c.lon)
            if d < best_d - 1e-12:
                best_d = d
                best_id = c.id
        return best_id

    index = case._bus_index()
    for b in case.buses:
        if b.county_id is None:
            if not (math.isfinite(b.lat) and math.isfinite(b.lon)):
                raise ValidationError(
                    f"bus {b.id} has no coordinates; cannot site it in a county"
                )
            b.county_id = nearest(b.lat, b.lon)
    for br in case.branches:
        if br.county_id is None:
            f = index[br.from_bus]
            t = index[br.to_bus]
            mlat, mlon = midpoint(f.lat, f.lon, t.lat, t.lon)
            br.county_id = nearest(mlat, mlon)
    return case


def _connected_when_all_live(case: GridCase) -> bool:
    if not case.buses:
        return True
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen = {case.buses[0].id}
    stack = [case.buses[0].id]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(case.buses)
