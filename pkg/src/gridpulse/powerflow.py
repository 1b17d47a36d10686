"""AC power flow in polar form with reactive limit handling.

The solver operates on the island that contains the slack bus. Everything
outside that island is reported de-energized (vm = 0). Newton iterations use
the full sparse Jacobian; generator reactive limits are honoured by demoting
violating PV buses to PQ at the binding limit in an outer loop, with no
re-promotion within a call.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .model import Branch, BusKind, GridCase, ValidationError

_Q_TOL_MVAR = 1e-7


class SingularBranch(ValueError):
    """An in-service branch has zero series reactance."""


class NonConvergence(Exception):
    """Newton iteration failed to reach the mismatch tolerance."""

    def __init__(self, iterations: int, max_mismatch_pu: float):
        self.iterations = iterations
        self.max_mismatch_pu = max_mismatch_pu
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {max_mismatch_pu:.3e} pu)"
        )


@dataclass(frozen=True)
class Island:
    buses: frozenset[int]
    viable: bool  # True when the island contains the slack bus


@dataclass
class PowerFlowOptions:
    tol_pu: float = 1e-8
    max_iter: int = 30
    enforce_q_limits: bool = True
    flat_start: bool = False


@dataclass(frozen=True)
class BranchFlow:
    p_from_mw: float
    q_from_mvar: float
    p_to_mw: float
    q_to_mvar: float


@dataclass
class PowerFlowSolution:
    converged: bool
    iterations: int  # Newton iterations of the final inner solve
    total_iterations: int  # summed over reactive-limit outer rounds
    bus_vm: dict[int, float]
    bus_va: dict[int, float]  # radians
    branch_flows: dict[int, BranchFlow]
    slack_p_mw: float
    slack_q_mvar: float
    gen_p_mw: dict[int, float]
    gen_q_mvar: dict[int, float]
    energized: frozenset[int]
    slack_p_within_limits: bool = True

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "total_iterations": self.total_iterations,
            "bus_vm": {str(k): v for k, v in sorted(self.bus_vm.items())},
            "bus_va": {str(k): v for k, v in sorted(self.bus_va.items())},
            "branch_flows": {
                str(k): [f.p_from_mw, f.q_from_mvar, f.p_to_mw, f.q_to_mvar]
                for k, f in sorted(self.branch_flows.items())
            },
            "slack_p_mw": self.slack_p_mw,
            "slack_q_mvar": self.slack_q_mvar,
            "gen_p_mw": {str(k): v for k, v in sorted(self.gen_p_mw.items())},
            "gen_q_mvar": {str(k): v for k, v in sorted(self.gen_q_mvar.items())},
            "energized": sorted(self.energized),
            "slack_p_within_limits": self.slack_p_within_limits,
        }


# ----------------------------------------------------------------------
# admittance matrix


@dataclass
class Admittance:
    matrix: sp.csr_matrix  # complex, one row/column per bus in bus_ids
    bus_ids: list[int]
    index: dict[int, int]

    def at(self, bus_i: int, bus_j: int) -> complex:
        return complex(self.matrix[self.index[bus_i], self.index[bus_j]])


def branch_admittance(br: Branch) -> tuple[complex, complex, complex, complex]:
    """Two-port admittance entries (yff, yft, ytf, ytt) of one branch."""
    if br.x == 0.0:
        raise SingularBranch(f"branch {br.id} has zero reactance")
    ys = 1.0 / complex(br.r, br.x)
    ysh = complex(0.0, br.b / 2.0)
    t = br.tap * cmath.exp(1j * math.radians(br.shift_deg))
    ytt = ys + ysh
    yff = ytt / (br.tap * br.tap)
    yft = -ys / t.conjugate()
    ytf = -ys / t
    return yff, yft, ytf, ytt


def build_admittance(case: GridCase, bus_ids: list[int] | None = None) -> Admittance:
    """Assemble the sparse bus admittance matrix.

    Includes every in-service branch whose endpoints are both in the bus set
    (default: all in-service buses) plus the fixed bus shunts. Line charging
    and shunts land on the diagonal, so row sums reflect them.
    """
    if bus_ids is None:
        bus_ids = sorted(b.id for b in case.buses if b.in_service)
    index = {bid: i for i, bid in enumerate(bus_ids)}
    n = len(bus_ids)

    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for br in case.branches:
        if not br.in_service or br.from_bus not in index or br.to_bus not in index:
            continue
        f = index[br.from_bus]
        t = index[br.to_bus]
        yff, yft, ytf, ytt = branch_admittance(br)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    for b in case.buses:
        if b.id in index and (b.gs_mw != 0.0 or b.bs_mvar != 0.0):
            i = index[b.id]
            rows.append(i)
            cols.append(i)
            vals.append(complex(b.gs_mw, b.bs_mvar) / case.base_mva)

    matrix = sp.csr_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n)
    )
    return Admittance(matrix=matrix, bus_ids=list(bus_ids), index=index)


# ----------------------------------------------------------------------
# island analysis


def energized_islands(case: GridCase) -> list[Island]:
    """Group in-service buses into connected components over live branches.

    Returned islands are ordered by their smallest bus id. The island holding
    the slack bus is flagged viable; every other island has no angle reference
    and is treated as de-energized by the rest of the pipeline.
    """
    parent: dict[int, int] = {b.id: b.id for b in case.buses if b.in_service}

    def find(u: int) -> int:
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for br in case.branches:
        if br.in_service and br.from_bus in parent and br.to_bus in parent:
            ru, rv = find(br.from_bus), find(br.to_bus)
            if ru != rv:
                parent[ru] = rv

    groups: dict[int, set[int]] = {}
    for bid in parent:
        groups.setdefault(find(bid), set()).add(bid)

    slack_id = None
    for b in case.buses:
        if b.in_service and b.kind is BusKind.SLACK:
            slack_id = b.id
            break

    islands = [
        Island(buses=frozenset(g), viable=(slack_id in g)) for g in groups.values()
    ]
    islands.sort(key=lambda isl: min(isl.buses))
    return islands


# ----------------------------------------------------------------------
# Newton-Raphson


def _mismatch(Ybus, V, Sbus, pvpq, pq):
    dS = V * np.conj(Ybus @ V) - Sbus
    return np.r_[dS[pvpq].real, dS[pq].imag]


def _jacobian(Ybus, V, pvpq, pq):
    Ibus = Ybus @ V
    diagV = sp.diags(V)
    diagI = sp.diags(Ibus)
    diagVnorm = sp.diags(V / np.abs(V))
    dS_dVm = diagV @ np.conj(Ybus @ diagVnorm) + np.conj(diagI) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagI - Ybus @ diagV)
    dS_dVm = dS_dVm.tocsr()
    dS_dVa = dS_dVa.tocsr()
    J11 = dS_dVa[pvpq, :][:, pvpq].real
    J12 = dS_dVm[pvpq, :][:, pq].real
    J21 = dS_dVa[pq, :][:, pvpq].imag
    J22 = dS_dVm[pq, :][:, pq].imag
    return sp.vstack(
        [sp.hstack([J11, J12]), sp.hstack([J21, J22])], format="csr"
    )


def _newton(Ybus, Sbus, V0, pv, pq, tol, max_iter):
    V = V0.copy()
    Vm = np.abs(V)
    Va = np.angle(V)
    pvpq = np.r_[pv, pq].astype(int)
    npvpq = len(pvpq)

    f = _mismatch(Ybus, V, Sbus, pvpq, pq)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    if not math.isfinite(norm):
        raise NonConvergence(0, norm)
    iterations = 0
    while norm > tol and iterations < max_iter:
        J = _jacobian(Ybus, V, pvpq, pq)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MatrixRankWarning)
            dx = spsolve(J, f)
        if not np.all(np.isfinite(dx)):
            raise NonConvergence(iterations, norm)
        Va[pvpq] -= dx[:npvpq]
        Vm[pq] -= dx[npvpq:]
        V = Vm * np.exp(1j * Va)
        Vm = np.abs(V)
        Va = np.angle(V)
        iterations += 1
        f = _mismatch(Ybus, V, Sbus, pvpq, pq)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        if not math.isfinite(norm):
            raise NonConvergence(iterations, norm)
    if norm > tol:
        raise NonConvergence(iterations, norm)
    return V, iterations


# ----------------------------------------------------------------------
# high-level solve


def solve(case: GridCase, options: PowerFlowOptions | None = None) -> PowerFlowSolution:
    """Solve the slack island and return a converged solution.

    Raises NonConvergence when Newton iteration fails, so callers that treat
    divergence as a physical outcome (cascade termination) catch it instead of
    inspecting a flag. Buses outside the slack island are reported with
    vm = 0. Reactive limits are enforced per bus aggregate; once a PV bus is
    demoted to PQ it stays demoted for the rest of the call.
    """
    opts = options or PowerFlowOptions()
    slack = case.slack_bus()
    if not case.generators_at(slack.id):
        raise ValidationError(f"slack bus {slack.id} has no in-service generator")

    islands = energized_islands(case)
    viable = next(isl for isl in islands if isl.viable)
    bus_ids = sorted(viable.buses)
    adm = build_admittance(case, bus_ids)
    Ybus = adm.matrix
    idx = adm.index
    n = len(bus_ids)
    base = case.base_mva

    gens = [g for g in case.generators if g.in_service and g.bus in idx]
    loads = [l for l in case.loads if l.in_service and l.bus in idx]

    p_gen = np.zeros(n)
    q_gen_fixed = np.zeros(n)
    p_load = np.zeros(n)
    q_load = np.zeros(n)
    has_gen = np.zeros(n, dtype=bool)
    q_lo = np.zeros(n)
    q_hi = np.zeros(n)
    for g in gens:
        i = idx[g.bus]
        p_gen[i] += g.p_mw
        q_gen_fixed[i] += g.q_mvar
        has_gen[i] = True
        q_lo[i] += g.q_min_mvar
        q_hi[i] += g.q_max_mvar
    for l in loads:
        i = idx[l.bus]
        p_load[i] += l.p_mw
        q_load[i] += l.q_mvar

    slack_pos = idx[slack.id]
    setpoint = np.ones(n)
    vm0 = np.ones(n)
    va0 = np.zeros(n)
    kinds: list[BusKind] = [BusKind.PQ] * n
    for b in case.buses:
        if b.id not in idx:
            continue
        i = idx[b.id]
        setpoint[i] = b.voltage_setpoint
        if opts.flat_start:
            vm0[i] = 1.0
            va0[i] = 0.0
        else:
            vm0[i] = b.vm if b.vm > 0 else 1.0
            va0[i] = b.va
        kind = b.kind
        if kind is BusKind.PV and not has_gen[i]:
            kind = BusKind.PQ  # nothing left to regulate the voltage
        kinds[i] = kind

    # Specified injections in pu. PV and slack rows carry a placeholder Q that
    # the solver never constrains.
    P_spec = (p_gen - p_load) / base
    Q_spec = (q_gen_fixed - q_load) / base

    demoted: dict[int, float] = {}  # position -> clamped generator Q in Mvar
    if opts.enforce_q_limits:
        # A regulating bus with no reactive range cannot hold its setpoint.
        for i in range(n):
            if kinds[i] is BusKind.PV and q_hi[i] - q_lo[i] <= 0.0:
                demoted[i] = q_lo[i]

    V = np.where(
        [k is not BusKind.PQ for k in kinds], setpoint, vm0
    ) * np.exp(1j * va0)
    # Demoted and plain PQ buses keep their warm magnitude.
    for i in range(n):
        if kinds[i] is BusKind.PQ or i in demoted:
            V[i] = vm0[i] * cmath.exp(1j * va0[i])

    total_iterations = 0
    last_iterations = 0
    max_rounds = len(gens) + 1
    for _ in range(max_rounds):
        pv = np.array(
            [i for i in range(n) if kinds[i] is BusKind.PV and i not in demoted],
            dtype=int,
        )
        pq = np.array(
            [
                i
                for i in range(n)
                if i != slack_pos and (kinds[i] is BusKind.PQ or i in demoted)
            ],
            dtype=int,
        )
        Sbus = P_spec + 1j * Q_spec
        for i, q_clamp in demoted.items():
            Sbus[i] = P_spec[i] + 1j * (q_clamp - q_load[i]) / base
        Sbus[slack_pos] = complex(P_spec[slack_pos], Q_spec[slack_pos])

        V[pv] = setpoint[pv] * np.exp(1j * np.angle(V[pv]))
        V[slack_pos] = setpoint[slack_pos] * cmath.exp(1j * np.angle(V[slack_pos]))

        V, last_iterations = _newton(Ybus, Sbus, V, pv, pq, opts.tol_pu, opts.max_iter)
        total_iterations += last_iterations

        if not opts.enforce_q_limits or len(pv) == 0:
            break
        S_inj = V * np.conj(Ybus @ V)
        violators = {}
        for i in pv:
            q_bus = S_inj[i].imag * base + q_load[i]
            if q_bus < q_lo[i] - _Q_TOL_MVAR:
                violators[int(i)] = q_lo[int(i)]
            elif q_bus > q_hi[i] + _Q_TOL_MVAR:
                violators[int(i)] = q_hi[int(i)]
        if not violators:
            break
        demoted.update(violators)

    return _assemble(case, opts, adm, V, gens, loads, demoted, kinds,
                     last_iterations, total_iterations)


def _assemble(case, opts, adm, V, gens, loads, demoted, kinds,
              last_iterations, total_iterations):
    base = case.base_mva
    idx = adm.index
    S_inj = V * np.conj(adm.matrix @ V)

    q_load_at = {}
    p_load_at = {}
    for l in loads:
        p_load_at[l.bus] = p_load_at.get(l.bus, 0.0) + l.p_mw
        q_load_at[l.bus] = q_load_at.get(l.bus, 0.0) + l.q_mvar

    bus_vm = {b.id: 0.0 for b in case.buses}
    bus_va = {b.id: 0.0 for b in case.buses}
    for bid, i in idx.items():
        bus_vm[bid] = float(np.abs(V[i]))
        bus_va[bid] = float(np.angle(V[i]))

    slack = case.slack_bus()
    slack_pos = idx[slack.id]
    slack_p_bus = S_inj[slack_pos].real * base + p_load_at.get(slack.id, 0.0)
    slack_q_bus = S_inj[slack_pos].imag * base + q_load_at.get(slack.id, 0.0)

    gens_by_bus: dict[int, list] = {}
    for g in gens:
        gens_by_bus.setdefault(g.bus, []).append(g)

    gen_p = {}
    gen_q = {}
    slack_within = True
    for bus_id, bus_gens in gens_by_bus.items():
        i = idx[bus_id]
        if bus_id == slack.id:
            shares = _spread(slack_p_bus, [(g.p_min_mw, g.p_max_mw) for g in bus_gens])
            for g, p in zip(bus_gens, shares):
                gen_p[g.id] = p
            lo = sum(g.p_min_mw for g in bus_gens)
            hi = sum(g.p_max_mw for g in bus_gens)
            slack_within = lo - 1e-6 <= slack_p_bus <= hi + 1e-6
        else:
            for g in bus_gens:
                gen_p[g.id] = g.p_mw

        if i in demoted and bus_id != slack.id:
            # Every generator of a demoted bus sits exactly on the binding limit.
            at_min = demoted[i] <= sum(g.q_min_mvar for g in bus_gens) + _Q_TOL_MVAR
            for g in bus_gens:
                gen_q[g.id] = g.q_min_mvar if at_min else g.q_max_mvar
        elif kinds[i] is BusKind.PQ:
            for g in bus_gens:
                gen_q[g.id] = g.q_mvar
        else:
            q_bus = S_inj[i].imag * base + q_load_at.get(bus_id, 0.0)
            shares = _spread(q_bus, [(g.q_min_mvar, g.q_max_mvar) for g in bus_gens])
            for g, q in zip(bus_gens, shares):
                gen_q[g.id] = q

    flows = {}
    for br in case.branches:
        if not br.in_service or br.from_bus not in idx or br.to_bus not in idx:
            continue
        yff, yft, ytf, ytt = branch_admittance(br)
        Vf = V[idx[br.from_bus]]
        Vt = V[idx[br.to_bus]]
        Sf = Vf * np.conj(yff * Vf + yft * Vt) * base
        St = Vt * np.conj(ytf * Vf + ytt * Vt) * base
        flows[br.id] = BranchFlow(
            p_from_mw=float(Sf.real),
            q_from_mvar=float(Sf.imag),
            p_to_mw=float(St.real),
            q_to_mvar=float(St.imag),
        )

    return PowerFlowSolution(
        converged=True,
        iterations=last_iterations,
        total_iterations=total_iterations,
        bus_vm=bus_vm,
        bus_va=bus_va,
        branch_flows=flows,
        slack_p_mw=float(slack_p_bus),
        slack_q_mvar=float(slack_q_bus),
        gen_p_mw=gen_p,
        gen_q_mvar=gen_q,
        energized=frozenset(idx),
        slack_p_within_limits=bool(slack_within),
    )


def _spread(total: float, bounds: list[tuple[float, float]]) -> list[float]:
    """Split a bus total across units by interpolating within their ranges.

    All units share the same interpolation parameter, so each stays inside its
    own range whenever the total is inside the aggregate range. A zero-width
    aggregate falls back to an equal split of the excess.
    """
    lo = sum(b[0] for b in bounds)
    span = sum(b[1] - b[0] for b in bounds)
    if span <= 0.0:
        extra = (total - lo) / len(bounds)
        return [b[0] + extra for b in bounds]
    t = (total - lo) / span
    return [b[0] + t * (b[1] - b[0]) for b in bounds]


def apply_solution(case: GridCase, solution: PowerFlowSolution) -> None:
    """Write solved voltages back onto a working case for warm restarts."""
    for b in case.buses:
        b.vm = solution.bus_vm.get(b.id, 0.0)
        b.va = solution.bus_va.get(b.id, 0.0)
