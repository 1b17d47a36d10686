"""Readers for MATPOWER-style case files and their geographic sidecars.

Only the pieces of the format this project consumes are supported: the
``baseMVA`` scalar and the ``bus``, ``gen`` and ``branch`` matrices. Everything
else (costs, dclines, comment blocks) is ignored. Coordinates come from a
separate ``geo`` CSV because the matrix format has no room for them, and the
county table comes from a third CSV.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .model import (
    Branch,
    Bus,
    BusKind,
    County,
    Generator,
    GridCase,
    Load,
    ValidationError,
    assign_counties,
    validate_case,
)

_BUS_TYPE = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}

# Minimum column counts for each matrix. Trailing columns beyond these are
# tolerated and ignored.
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


class CaseSyntaxError(ValueError):
    """Malformed case text. Carries the 1-based line number of the offence."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_case(
    case_path: str | Path,
    geo_path: str | Path,
    counties_path: str | Path | None = None,
    name: str | None = None,
) -> GridCase:
    """Read a case plus sidecars from disk, validate, and assign counties."""
    case_path = Path(case_path)
    case_text = case_path.read_text()
    geo_text = Path(geo_path).read_text()
    counties_text = Path(counties_path).read_text() if counties_path else None
    return parse_case(case_text, geo_text, counties_text, name=name or case_path.stem)


def parse_case(
    case_text: str,
    geo_text: str,
    counties_text: str | None = None,
    name: str = "case",
) -> GridCase:
    """Build a validated GridCase from case text and sidecar CSV text."""
    base_mva, matrices = _scan_case(case_text)
    for key in ("bus", "gen", "branch"):
        if key not in matrices:
            raise CaseSyntaxError(f"missing mpc.{key} matrix", line=_text_lines(case_text))
    if base_mva is None:
        raise CaseSyntaxError("missing mpc.baseMVA", line=_text_lines(case_text))

    case = GridCase(name=name, base_mva=base_mva)

    load_seq = 0
    for row, line in matrices["bus"]:
        _need(row, _MIN_COLS["bus"], "bus", line)
        bus_id = _as_int(row[0], "bus id", line)
        btype = _as_int(row[1], "bus type", line)
        if btype == 4:
            kind = BusKind.PQ
            in_service = False
        else:
            kind = _BUS_TYPE.get(btype)
            in_service = True
            if kind is None:
                raise CaseSyntaxError(f"unknown bus type {btype}", line)
        case.buses.append(
            Bus(
                id=bus_id,
                kind=kind,
                vm=row[7],
                va=math.radians(row[8]),
                voltage_setpoint=row[7] if row[7] > 0 else 1.0,
                base_kv=row[9],
                in_service=in_service,
                gs_mw=row[4],
                bs_mvar=row[5],
            )
        )
        if row[2] != 0.0 or row[3] != 0.0:
            load_seq += 1
            case.loads.append(
                Load(id=load_seq, bus=bus_id, p_mw=row[2], q_mvar=row[3], in_service=in_service)
            )

    for seq, (row, line) in enumerate(matrices["gen"], start=1):
        _need(row, _MIN_COLS["gen"], "gen", line)
        case.generators.append(
            Generator(
                id=seq,
                bus=_as_int(row[0], "gen bus", line),
                p_mw=row[1],
                q_mvar=row[2],
                q_max_mvar=row[3],
                q_min_mvar=row[4],
                voltage_setpoint=row[5],
                in_service=row[7] > 0,
                p_max_mw=row[8],
                p_min_mw=row[9],
            )
        )

    for seq, (row, line) in enumerate(matrices["branch"], start=1):
        _need(row, _MIN_COLS["branch"], "branch", line)
        tap = row[8]
        case.branches.append(
            Branch(
                id=seq,
                from_bus=_as_int(row[0], "branch from bus", line),
                to_bus=_as_int(row[1], "branch to bus", line),
                r=row[2],
                x=row[3],
                b=row[4],
                rate_mva=row[5],
                tap=tap if tap != 0.0 else 1.0,
                shift_deg=row[9],
                in_service=row[10] > 0,
            )
        )

    # A bus regulated by an in-service generator tracks that generator's
    # voltage setpoint; the first such generator wins.
    index = {b.id: b for b in case.buses}
    seen: set[int] = set()
    for g in case.generators:
        if g.in_service and g.bus in index and g.bus not in seen and g.voltage_setpoint > 0:
            index[g.bus].voltage_setpoint = g.voltage_setpoint
            seen.add(g.bus)

    _apply_geo(case, geo_text)
    if counties_text is not None:
        case.counties = _parse_counties(counties_text)
    validate_case(case)
    assign_counties(case)
    return case


# ----------------------------------------------------------------------
# case text scanning


def _scan_case(text: str):
    base_mva: float | None = None
    matrices: dict[str, list[tuple[list[float], int]]] = {}
    current: str | None = None
    pending: list[str] = []  # row fragments while inside a matrix

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue

        if current is None:
            if line.startswith("mpc.baseMVA"):
                _, _, rhs = line.partition("=")
                rhs = rhs.strip().rstrip(";").strip()
                try:
                    base_mva = float(rhs)
                except ValueError:
                    raise CaseSyntaxError(f"cannot parse baseMVA value {rhs!r}", lineno)
                continue
            if line.startswith("mpc.") and "[" in line:
                field = line[len("mpc."):].split("=", 1)[0].strip()
                current = field
                matrices.setdefault(field, [])
                line = line.split("[", 1)[1]
                # fall through to row handling with the remainder
            else:
                continue  # function header, version string, anything else

        closed = False
        if "]" in line:
            line = line.split("]", 1)[0]
            closed = True

        for chunk in line.split(";"):
            chunk = chunk.strip()
            if chunk:
                pending.append(chunk)
            else:
                _flush_row(matrices[current], pending, lineno)
        if ";" in line or closed:
            _flush_row(matrices[current], pending, lineno)

        if closed:
            if pending:
                _flush_row(matrices[current], pending, lineno)
            if current not in ("bus", "gen", "branch"):
                matrices.pop(current, None)  # parsed but unused
            current = None
            pending = []

    if current is not None:
        raise CaseSyntaxError(f"matrix mpc.{current} is never closed", _text_lines(text))
    return base_mva, matrices


def _flush_row(rows: list, pending: list[str], lineno: int) -> None:
    if not pending:
        return
    text = " ".join(pending)
    pending.clear()
    values = []
    for tok in text.replace(",", " ").split():
        try:
            values.append(float(tok))
        except ValueError:
            raise CaseSyntaxError(f"cannot parse numeric field {tok!r}", lineno)
    rows.append((values, lineno))


def _need(row: list[float], count: int, label: str, line: int) -> None:
    if len(row) < count:
        raise CaseSyntaxError(
            f"{label} row has {len(row)} columns, expected at least {count}", line
        )


def _as_int(value: float, label: str, line: int) -> int:
    if value != int(value):
        raise CaseSyntaxError(f"{label} must be an integer, got {value}", line)
    return int(value)


def _text_lines(text: str) -> int:
    return max(1, len(text.splitlines()))


# ----------------------------------------------------------------------
# sidecar CSVs


def _apply_geo(case: GridCase, geo_text: str) -> None:
    index = {b.id: b for b in case.buses}
    seen: set[int] = set()
    for row in _csv_rows(geo_text):
        if len(row) < 3:
            raise ValidationError(f"geo row needs bus_id,lat,lon, got {row!r}")
        bus_id = int(float(row[0]))
        if bus_id not in index:
            raise ValidationError(f"geo row references unknown bus {bus_id}")
        bus = index[bus_id]
        bus.lat = float(row[1])
        bus.lon = float(row[2])
        if len(row) >= 4 and row[3].strip() != "":
            bus.county_id = int(float(row[3]))
        seen.add(bus_id)
    missing = sorted(set(index) - seen)
    if missing:
        raise ValidationError(f"geo file has no coordinates for buses {missing}")


def _parse_counties(text: str) -> list[County]:
    counties = []
    for row in _csv_rows(text):
        if len(row) < 5:
            raise ValidationError(f"county row needs id,name,lat,lon,pop_density, got {row!r}")
        counties.append(
            County(
                id=int(float(row[0])),
                name=row[1].strip(),
                lat=float(row[2]),
                lon=float(row[3]),
                pop_density=float(row[4]),
            )
        )
    return counties


def _csv_rows(text: str):
    """Yield non-empty CSV rows, skipping a header row if one is present."""
    reader = csv.reader(io.StringIO(text))
    for i, row in enumerate(reader):
        if not row or all(not c.strip() for c in row):
            continue
        if i == 0:
            try:
                float(row[0])
            except ValueError:
                continue  # header
        yield [c.strip() for c in row]
