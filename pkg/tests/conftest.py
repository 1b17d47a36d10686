"""Shared fixtures: bundled network cases and small in-memory builders."""

from __future__ import annotations

from pathlib import Path

import pytest

from gridpulse import matpower
from gridpulse.model import Branch, Bus, BusKind, County, Generator, GridCase, Load

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(stem: str):
    return matpower.load_case(
        FIXTURES / f"{stem}.m",
        FIXTURES / f"{stem}_geo.csv",
        FIXTURES / f"{stem}_counties.csv",
    )


# Verdict lines recorded by the acceptance tests, echoed after the run so
# the checklist survives output capture.
ACCEPTANCE_VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance checklist")
    for num in sorted(ACCEPTANCE_VERDICTS):
        terminalreporter.line(ACCEPTANCE_VERDICTS[num])


@pytest.fixture(scope="session")
def _case5_pristine():
    return load_fixture("case5")


@pytest.fixture(scope="session")
def _case14_pristine():
    return load_fixture("case14")


@pytest.fixture(scope="session")
def _corridor_pristine():
    return load_fixture("corridor")


@pytest.fixture(scope="session")
def _texas_mini_pristine():
    return load_fixture("texas_mini")


# Tests receive throwaway copies so nobody can poison the session cache.


@pytest.fixture
def case5(_case5_pristine):
    return _case5_pristine.copy()


@pytest.fixture
def case14(_case14_pristine):
    return _case14_pristine.copy()


@pytest.fixture
def corridor(_corridor_pristine):
    return _corridor_pristine.copy()


@pytest.fixture
def texas_mini(_texas_mini_pristine):
    return _texas_mini_pristine.copy()


def two_bus_case(p_mw: float = 100.0, q_mvar: float = 20.0, x: float = 0.1) -> GridCase:
    """Slack feeding one PQ load over a single lossless line."""
    return GridCase(
        name="two_bus",
        base_mva=100.0,
        buses=[
            Bus(id=1, kind=BusKind.SLACK, voltage_setpoint=1.0, lat=30.0, lon=-97.0),
            Bus(id=2, kind=BusKind.PQ, lat=30.0, lon=-96.5),
        ],
        branches=[Branch(id=1, from_bus=1, to_bus=2, r=0.0, x=x)],
        generators=[Generator(id=1, bus=1, p_mw=0.0, p_max_mw=500.0)],
        loads=[Load(id=1, bus=2, p_mw=p_mw, q_mvar=q_mvar)],
        counties=[County(id=1, name="Alpha", lat=30.0, lon=-97.0, pop_density=50.0)],
    )


def parallel_pair_case(x: float = 0.2, load_mw: float = 80.0) -> GridCase:
    """Two identical lines between a slack and a load bus.

    Outage of either line shifts its whole flow onto the twin, so the LODF
    between them is exactly 1 and neither outage islands anything.
    """
    return GridCase(
        name="parallel_pair",
        base_mva=100.0,
        buses=[
            Bus(id=1, kind=BusKind.SLACK, lat=31.0, lon=-98.0),
            Bus(id=2, kind=BusKind.PQ, lat=31.0, lon=-97.4),
        ],
        branches=[
            Branch(id=1, from_bus=1, to_bus=2, r=0.0, x=x),
            Branch(id=2, from_bus=1, to_bus=2, r=0.0, x=x),
        ],
        generators=[Generator(id=1, bus=1, p_mw=0.0, p_max_mw=400.0)],
        loads=[Load(id=1, bus=2, p_mw=load_mw)],
        counties=[County(id=1, name="Alpha", lat=31.0, lon=-98.0, pop_density=10.0)],
    )


def q_limited_case(q_max: float = 25.0) -> GridCase:
    """Three buses where the PV machine's ceiling binds at base load.

    Bus 3 carries enough reactive demand that holding 1.05 pu at bus 2 needs
    more than q_max; a limit-enforcing solve must demote bus 2 to PQ with its
    output pinned at the ceiling.
    """
    return GridCase(
        name="q_limited",
        base_mva=100.0,
        buses=[
            Bus(id=1, kind=BusKind.SLACK, voltage_setpoint=1.0, lat=32.0, lon=-99.0),
            Bus(id=2, kind=BusKind.PV, voltage_setpoint=1.05, lat=32.0, lon=-98.5),
            Bus(id=3, kind=BusKind.PQ, lat=32.0, lon=-98.0),
        ],
        branches=[
            Branch(id=1, from_bus=1, to_bus=2, r=0.01, x=0.08),
            Branch(id=2, from_bus=2, to_bus=3, r=0.02, x=0.12),
        ],
        generators=[
            Generator(id=1, bus=1, p_mw=0.0, p_max_mw=300.0),
            Generator(
                id=2,
                bus=2,
                p_mw=60.0,
                q_min_mvar=-30.0,
                q_max_mvar=q_max,
                p_max_mw=120.0,
                voltage_setpoint=1.05,
            ),
        ],
        loads=[Load(id=1, bus=3, p_mw=120.0, q_mvar=55.0)],
        counties=[County(id=1, name="Alpha", lat=32.0, lon=-99.0, pop_density=25.0)],
    )


def four_bus_mesh() -> GridCase:
    """Fully meshed four buses; no outage islands anything."""
    return GridCase(
        name="four_bus_mesh",
        base_mva=100.0,
        buses=[
            Bus(id=1, kind=BusKind.SLACK, lat=30.0, lon=-97.0, county_id=1),
            Bus(id=2, kind=BusKind.PQ, lat=30.3, lon=-96.7, county_id=1),
            Bus(id=3, kind=BusKind.PQ, lat=30.6, lon=-97.1, county_id=2),
            Bus(id=4, kind=BusKind.PQ, lat=30.2, lon=-97.5, county_id=2),
        ],
        branches=[
            Branch(id=1, from_bus=1, to_bus=2, r=0.01, x=0.10, county_id=1),
            Branch(id=2, from_bus=2, to_bus=3, r=0.01, x=0.12, county_id=1),
            Branch(id=3, from_bus=3, to_bus=4, r=0.01, x=0.09, county_id=2),
            Branch(id=4, from_bus=4, to_bus=1, r=0.01, x=0.11, county_id=2),
            Branch(id=5, from_bus=1, to_bus=3, r=0.01, x=0.15, county_id=1),
            Branch(id=6, from_bus=2, to_bus=4, r=0.01, x=0.14, county_id=2),
        ],
        generators=[Generator(id=1, bus=1, p_mw=0.0, p_max_mw=300.0)],
        loads=[
            Load(id=1, bus=2, p_mw=40.0, q_mvar=10.0),
            Load(id=2, bus=3, p_mw=55.0, q_mvar=14.0),
            Load(id=3, bus=4, p_mw=30.0, q_mvar=8.0),
        ],
        counties=[
            County(id=1, name="Alpha", lat=30.1, lon=-96.9, pop_density=120.0),
            County(id=2, name="Beta", lat=30.4, lon=-97.4, pop_density=35.0),
        ],
    )
