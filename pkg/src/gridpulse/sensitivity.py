"""Linear sensitivities and severity metrics on the DC approximation.

PTDF rows answer "how much of an injection at bus j flows over branch n";
LODF columns answer "when branch i trips, what fraction of its pre-outage
flow lands on branch n". Severity counting and the generation surplus metric
sit on top of these.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GridCase
from .powerflow import PowerFlowSolution, energized_islands

_ISLANDING_EPS = 1e-9


class SingularSystem(ValueError):
    """The in-service network is disconnected or has no usable reference."""


@dataclass
class PTDFMatrix:
    values: np.ndarray  # branches x buses
    branch_ids: list[int]
    bus_ids: list[int]
    slack_bus: int
    terminals: list[tuple[int, int]]  # (from, to) positions into bus_ids per branch

    def transfer(self, monitored: int, outage: int) -> float:
        """Fraction of the flow on `outage` that appears on `monitored` when
        the outage flow is re-injected at its own terminals."""
        n = self.branch_ids.index(monitored)
        f, t = self.terminals[self.branch_ids.index(outage)]
        return float(self.values[n, f] - self.values[n, t])


@dataclass
class LODFMatrix:
    values: np.ndarray  # monitored branches x outaged branches
    branch_ids: list[int]
    islanding_outages: frozenset[int]

    def at(self, monitored: int, outage: int) -> float:
        return float(
            self.values[self.branch_ids.index(monitored), self.branch_ids.index(outage)]
        )


@dataclass
class SeverityIndexTable:
    threshold: float
    counts: dict[int, int]  # outaged branch id -> count of significantly loaded branches
    county_totals: dict[int, int]
    county_normalized: dict[int, float]  # totals divided by branches per county
    county_branch_counts: dict[int, int]

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class GenerationSurplus:
    per_generator_mw: dict[int, float]  # dispatch above maximum; negative is headroom
    loading_percent: dict[int, float]
    total_mw: float

    def mean_loading_percent(self) -> float:
        if not self.loading_percent:
            return 0.0
        return sum(self.loading_percent.values()) / len(self.loading_percent)


def ptdf(case: GridCase, slack_bus: int | None = None) -> PTDFMatrix:
    """Power transfer distribution factors of the in-service network.

    The network must be a single island. Susceptances are 1/x scaled by the
    tap ratio; phase shifts do not enter a linear sensitivity. The slack
    column is identically zero.
    """
    islands = energized_islands(case)
    if len(islands) != 1:
        raise SingularSystem(f"expected one island, found {len(islands)}")

    bus_ids = sorted(islands[0].buses)
    index = {bid: i for i, bid in enumerate(bus_ids)}
    if slack_bus is None:
        slack_bus = case.slack_bus().id
    if slack_bus not in index:
        raise SingularSystem(f"reference bus {slack_bus} is not in the island")

    branches = [br for br in case.in_service_branches()]
    m = len(branches)
    n = len(bus_ids)
    if m == 0:
        return PTDFMatrix(np.zeros((0, n)), [], bus_ids, slack_bus, [])

    B = np.zeros((n, n))
    Bf = np.zeros((m, n))
    terms = []
    for k, br in enumerate(branches):
        f = index[br.from_bus]
        t = index[br.to_bus]
        b = 1.0 / (br.x * br.tap)
        B[f, f] += b
        B[t, t] += b
        B[f, t] -= b
        B[t, f] -= b
        Bf[k, f] = b
        Bf[k, t] = -b
        terms.append((f, t))

    keep = [i for i in range(n) if i != index[slack_bus]]
    try:
        inv = np.linalg.solve(B[np.ix_(keep, keep)], np.eye(len(keep)))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"reduced susceptance matrix is singular: {exc}") from exc

    values = np.zeros((m, n))
    values[:, keep] = Bf[:, keep] @ inv
    return PTDFMatrix(values, [br.id for br in branches], bus_ids, slack_bus, terms)


def lodf(case: GridCase, ptdf_matrix: PTDFMatrix | None = None) -> LODFMatrix:
    """Line outage distribution factors for every in-service branch pair.

    Outages that would split the island are detected by a transfer factor of
    one (denominator within 1e-9 of zero); their columns are zeroed and their
    ids reported in `islanding_outages`. The self factor is -1 by convention:
    a tripped branch sheds its whole flow.
    """
    P = ptdf_matrix if ptdf_matrix is not None else ptdf(case)
    m = len(P.branch_ids)
    if m == 0:
        return LODFMatrix(np.zeros((0, 0)), [], frozenset())

    f_pos = np.array([ft[0] for ft in P.terminals], dtype=int)
    t_pos = np.array([ft[1] for ft in P.terminals], dtype=int)
    # transfer[n, i]: flow change on n per unit injected at i's terminals
    transfer = P.values[:, f_pos] - P.values[:, t_pos]
    denom = 1.0 - np.diag(transfer)

    islanding_pos = np.where(np.abs(denom) <= _ISLANDING_EPS)[0]
    safe = denom.copy()
    safe[islanding_pos] = 1.0  # placeholder, columns get zeroed below

    values = transfer / safe[np.newaxis, :]
    values[:, islanding_pos] = 0.0
    np.fill_diagonal(values, -1.0)
    values[islanding_pos, islanding_pos] = 0.0

    islanding = frozenset(P.branch_ids[i] for i in islanding_pos)
    return LODFMatrix(values, list(P.branch_ids), islanding)


def si_count(
    lodf_matrix: LODFMatrix,
    threshold: float,
    case: GridCase | None = None,
) -> SeverityIndexTable:
    """Count, per outage, the other branches whose outage transfer fraction
    meets the threshold (inclusive).

    Islanding outages count zero. When a case is supplied, per-county totals
    and per-branch-normalized totals are included for the branches' counties.
    """
    if threshold <= 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    ids = lodf_matrix.branch_ids
    m = len(ids)
    counts: dict[int, int] = {}
    if m:
        hits = np.abs(lodf_matrix.values) >= threshold
        np.fill_diagonal(hits, False)
        per_outage = hits.sum(axis=0)
        for i, bid in enumerate(ids):
            counts[bid] = 0 if bid in lodf_matrix.islanding_outages else int(per_outage[i])

    county_totals: dict[int, int] = {}
    county_branch_counts: dict[int, int] = {}
    county_normalized: dict[int, float] = {}
    if case is not None:
        county_of = {br.id: br.county_id for br in case.branches}
        for bid, c in counts.items():
            county = county_of.get(bid)
            if county is None:
                continue
            county_totals[county] = county_totals.get(county, 0) + c
            county_branch_counts[county] = county_branch_counts.get(county, 0) + 1
        for county, total in county_totals.items():
            county_normalized[county] = total / county_branch_counts[county]

    return SeverityIndexTable(
        threshold=threshold,
        counts=counts,
        county_totals=county_totals,
        county_normalized=county_normalized,
        county_branch_counts=county_branch_counts,
    )


def generation_surplus(case: GridCase, solution: PowerFlowSolution) -> GenerationSurplus:
    """Dispatch in excess of each unit's maximum, from a solved state.

    A unit at 100 percent loading has zero surplus; below maximum the surplus
    is negative (headroom). Units with no stated maximum are skipped.
    """
    per_gen: dict[int, float] = {}
    loading: dict[int, float] = {}
    for g in case.generators:
        if not g.in_service or g.id not in solution.gen_p_mw or g.p_max_mw <= 0.0:
            continue
        p = solution.gen_p_mw[g.id]
        percent = 100.0 * p / g.p_max_mw
        loading[g.id] = percent
        per_gen[g.id] = g.p_max_mw * (percent - 100.0) / 100.0
    return GenerationSurplus(
        per_generator_mw=per_gen,
        loading_percent=loading,
        total_mw=sum(per_gen.values()),
    )
