#!/usr/bin/env python3
"""Generate the texas_mini fixture set (case, geo, counties).

A 12 x 10 jittered lattice over a central-Texas-sized box, generation
weighted to the west and load to the east so bulk power crosses the grid.
Everything is seeded, so rerunning this script reproduces the committed
fixtures byte for byte. The script sanity-checks that the case parses,
is connected, and solves from flat start before writing anything.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from gridpulse.matpower import parse_case  # noqa: E402
from gridpulse.powerflow import PowerFlowOptions, solve  # noqa: E402

ROWS, COLS = 12, 10
LAT0, DLAT = 29.0, 0.3
LON0, DLON = -99.5, 0.4
SEED = 20240714
DROP_FRACTION = 0.18
N_DIAGONALS = 12
N_GENS_WEST = 17
N_GENS_EAST = 6
SLACK_BUS = 53  # row 5, col 2: mid-west, inside the generation belt


def bus_id(row: int, col: int) -> int:
    return row * COLS + col + 1


def build():
    rng = np.random.default_rng(SEED)

    lats = {}
    lons = {}
    for r in range(ROWS):
        for c in range(COLS):
            jlat = rng.uniform(-0.07, 0.07)
            jlon = rng.uniform(-0.07, 0.07)
            lats[bus_id(r, c)] = LAT0 + r * DLAT + jlat
            lons[bus_id(r, c)] = LON0 + c * DLON + jlon

    # Candidate lattice edges, then thin them out without disconnecting.
    edges = []
    for r in range(ROWS):
        for c in range(COLS):
            if c + 1 < COLS:
                edges.append((bus_id(r, c), bus_id(r, c + 1)))
            if r + 1 < ROWS:
                edges.append((bus_id(r, c), bus_id(r + 1, c)))

    drop_flags = rng.uniform(size=len(edges)) < DROP_FRACTION
    kept = list(edges)
    for i in np.where(drop_flags)[0]:
        candidate = kept.copy()
        candidate.remove(edges[i])
        if _connected(candidate):
            kept = candidate

    diag_cells = rng.choice((ROWS - 1) * (COLS - 1), size=N_DIAGONALS, replace=False)
    for cell in sorted(diag_cells):
        r, c = divmod(int(cell), COLS - 1)
        kept.append((bus_id(r, c), bus_id(r + 1, c + 1)))

    # Generators: west belt (cols 0-3) plus a few eastern peakers.
    west_candidates = [bus_id(r, c) for r in range(ROWS) for c in range(4)]
    east_candidates = [bus_id(r, c) for r in range(ROWS) for c in range(6, COLS)]
    gen_buses = sorted(
        set(
            int(b)
            for b in np.concatenate(
                [
                    rng.choice(west_candidates, size=N_GENS_WEST, replace=False),
                    rng.choice(east_candidates, size=N_GENS_EAST, replace=False),
                ]
            )
        )
        | {SLACK_BUS}
    )

    # Loads: just over half the buses, heavier toward the east.
    loads = {}
    for r in range(ROWS):
        for c in range(COLS):
            b = bus_id(r, c)
            if rng.uniform() < 0.60:
                base = rng.uniform(16.0, 40.0)
                p = base * (1.0 + 0.65 * c / (COLS - 1))
                loads[b] = (round(p, 1), round(p * 0.25, 1))
    total_load = sum(p for p, _ in loads.values())

    # Dispatch: PV units cover just under the full load so the slack serves
    # the remainder plus losses.
    pv_buses = [b for b in gen_buses if b != SLACK_BUS]
    share = 0.985 * total_load / len(pv_buses)
    gens = []
    vg_cycle = [1.00, 1.01, 1.02]
    for i, b in enumerate(gen_buses):
        vg = vg_cycle[i % len(vg_cycle)]
        if b == SLACK_BUS:
            gens.append((b, 0.0, 700.0, -400.0, vg, 900.0))
        else:
            pg = round(share * rng.uniform(0.8, 1.2), 1)
            pmax = round(pg * 1.55, 1)
            gens.append((b, pg, round(0.55 * pmax, 1), round(-0.35 * pmax, 1), vg, pmax))

    branches = []
    for f, t in kept:
        km = _rough_km(lats[f], lons[f], lats[t], lons[t])
        x = min(max(0.095 * km / 45.0, 0.025), 0.30)
        r_ohm = x / 8.0
        b_chg = 0.020 * km / 45.0
        rate = 250.0
        branches.append((f, t, round(r_ohm, 5), round(x, 5), round(b_chg, 5), rate))

    return lats, lons, loads, gens, branches, total_load


def _connected(edge_list) -> bool:
    parent = {bus_id(r, c): bus_id(r, c) for r in range(ROWS) for c in range(COLS)}

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for f, t in edge_list:
        parent[find(f)] = find(t)
    roots = {find(b) for b in parent}
    return len(roots) == 1


def _rough_km(lat1, lon1, lat2, lon2) -> float:
    import math

    ky = 111.19
    kx = 111.19 * math.cos(math.radians((lat1 + lat2) / 2.0))
    return math.hypot((lat2 - lat1) * ky, (lon2 - lon1) * kx)


def emit(out_dir: Path):
    lats, lons, loads, gens, branches, total_load = build()
    gen_buses = {g[0] for g in gens}

    bus_rows = []
    for r in range(ROWS):
        for c in range(COLS):
            b = bus_id(r, c)
            p, q = loads.get(b, (0.0, 0.0))
            btype = 3 if b == SLACK_BUS else (2 if b in gen_buses else 1)
            bus_rows.append(
                f"\t{b}\t{btype}\t{p}\t{q}\t0\t0\t1\t1.00\t0\t138\t1\t1.10\t0.90;"
            )

    gen_rows = []
    for b, pg, qmax, qmin, vg, pmax in gens:
        gen_rows.append(
            f"\t{b}\t{pg}\t0\t{qmax}\t{qmin}\t{vg:.2f}\t100\t1\t{pmax}\t0;"
        )

    branch_rows = []
    for f, t, r_ohm, x, b_chg, rate in branches:
        branch_rows.append(
            f"\t{f}\t{t}\t{r_ohm}\t{x}\t{b_chg}\t{rate}\t0\t0\t0\t0\t1\t-360\t360;"
        )

    case_text = "\n".join(
        [
            "function mpc = texas_mini",
            "% Synthetic 120-bus lattice fixture generated by tools/make_fixtures.py.",
            f"% Generation sits west, load east; total load {total_load:.1f} MW.",
            "mpc.version = '2';",
            "mpc.baseMVA = 100;",
            "",
            "mpc.bus = [",
            *bus_rows,
            "];",
            "",
            "mpc.gen = [",
            *gen_rows,
            "];",
            "",
            "mpc.branch = [",
            *branch_rows,
            "];",
            "",
        ]
    )

    geo_lines = ["bus_id,lat,lon"]
    for r in range(ROWS):
        for c in range(COLS):
            b = bus_id(r, c)
            geo_lines.append(f"{b},{lats[b]:.5f},{lons[b]:.5f}")
    geo_text = "\n".join(geo_lines) + "\n"

    rng = np.random.default_rng(SEED + 1)
    county_lines = ["county_id,name,lat,lon,pop_density"]
    cid = 0
    for i in range(10):
        for j in range(10):
            cid += 1
            clat = 29.12 + i * 0.34
            clon = -99.36 + j * 0.39
            density = float(np.round(np.exp(rng.normal(3.6, 1.1)), 2))
            county_lines.append(f"{cid},County{cid:03d},{clat:.3f},{clon:.3f},{density}")
    counties_text = "\n".join(county_lines) + "\n"

    case = parse_case(case_text, geo_text, counties_text, name="texas_mini")
    solution = solve(case, PowerFlowOptions(flat_start=True))
    vms = [v for b, v in solution.bus_vm.items() if b in solution.energized]
    print(
        f"texas_mini: {len(case.buses)} buses, {len(case.branches)} branches, "
        f"{len(case.generators)} gens, load {total_load:.1f} MW, "
        f"solved in {solution.total_iterations} iterations, "
        f"vm {min(vms):.4f}..{max(vms):.4f}, slack {solution.slack_p_mw:.1f} MW"
    )

    (out_dir / "texas_mini.m").write_text(case_text)
    (out_dir / "texas_mini_geo.csv").write_text(geo_text)
    (out_dir / "texas_mini_counties.csv").write_text(counties_text)
    print(f"wrote fixtures to {out_dir}")


if __name__ == "__main__":
    emit(ROOT / "tests" / "fixtures")
