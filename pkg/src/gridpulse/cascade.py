"""Cascading outage engine.

Sampled line failures are applied in onset-time order, a batch at a time.
After each batch the de-energized islands are pruned and the remaining
network is re-solved from the previous voltage profile. A batch whose solve
diverges is rolled back and bisected to find the longest prefix that still
converges; the cascade then terminates at that last solvable state. The
divergent solve is an outcome, not an error, and is recorded as the final
step of the trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .damage import FailureSet
from .model import GridCase
from .powerflow import (
    NonConvergence,
    PowerFlowOptions,
    PowerFlowSolution,
    apply_solution,
    energized_islands,
    solve,
)

TERMINATED_EXHAUSTED = "failure_set_exhausted"
TERMINATED_NON_CONVERGENCE = "non_convergence"


@dataclass
class CascadeOptions:
    batch_size: int = 5
    bisect_on_failure: bool = True
    powerflow: PowerFlowOptions = field(default_factory=PowerFlowOptions)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclass
class CascadeStep:
    index: int
    failed_branches: list[int]  # sampled failures applied in this step
    islanded_branches: list[int]  # pruned along with de-energized islands
    de_energized_buses: list[int]
    outcome: str  # "converged" or "non_converged"
    slack_p_mw: float | None

    def branches_disabled(self) -> list[int]:
        return list(self.failed_branches) + list(self.islanded_branches)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "failed_branches": list(self.failed_branches),
            "islanded_branches": list(self.islanded_branches),
            "de_energized_buses": list(self.de_energized_buses),
            "outcome": self.outcome,
            "slack_p_mw": self.slack_p_mw,
        }


@dataclass
class CascadeTrace:
    steps: list[CascadeStep]
    final_case: GridCase  # topology at the last convergent state
    final_solution: PowerFlowSolution
    base_solution: PowerFlowSolution
    initially_energized: frozenset[int]
    lf_sampled: int
    lf_islanded: int
    lf_total: int
    bf_total: int
    terminated_by: str

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "lf_sampled": self.lf_sampled,
            "lf_islanded": self.lf_islanded,
            "lf_total": self.lf_total,
            "bf_total": self.bf_total,
            "terminated_by": self.terminated_by,
            "slack_p_base_mw": self.base_solution.slack_p_mw,
            "slack_p_final_mw": self.final_solution.slack_p_mw,
            "failed_buses": sorted(
                b for b in self.initially_energized
                if b not in self.final_solution.energized
            ),
        }


def run_cascade(
    case: GridCase,
    failures: FailureSet | list[int],
    options: CascadeOptions | None = None,
) -> CascadeTrace:
    """Run one cascade and return its trace.

    The input case is never touched; all mutation happens on a scenario copy.
    `failures` is either a FailureSet or a plain ordered list of branch ids.
    Failures whose branch is already out of service when their turn comes
    (usually because island pruning got there first) are skipped and do not
    occupy a batch slot.
    """
    opts = options or CascadeOptions()
    queue = list(failures.branch_ids()) if isinstance(failures, FailureSet) else list(failures)

    work = case.copy()
    base_solution = solve(work, replace(opts.powerflow, flat_start=True))
    apply_solution(work, base_solution)
    warm_opts = replace(opts.powerflow, flat_start=False)
    initially_energized = base_solution.energized

    steps: list[CascadeStep] = []
    lf_sampled = 0
    lf_islanded = 0
    last_solution = base_solution
    terminated_by = TERMINATED_EXHAUSTED
    pos = 0

    while pos < len(queue):
        batch: list[int] = []
        while pos < len(queue) and len(batch) < opts.batch_size:
            bid = queue[pos]
            pos += 1
            if _branch_live(work, bid):
                batch.append(bid)
        if not batch:
            continue

        snapshot = work.copy()
        try:
            solution, islanded, dead = _apply_batch(work, batch, warm_opts)
        except NonConvergence:
            work = snapshot
            if opts.bisect_on_failure:
                prefix = _longest_convergent_prefix(snapshot, batch, warm_opts)
                if prefix > 0:
                    work = snapshot.copy()
                    solution, islanded, dead = _apply_batch(work, batch[:prefix], warm_opts)
                    steps.append(
                        CascadeStep(
                            index=len(steps),
                            failed_branches=batch[:prefix],
                            islanded_branches=islanded,
                            de_energized_buses=dead,
                            outcome="converged",
                            slack_p_mw=solution.slack_p_mw,
                        )
                    )
                    lf_sampled += prefix
                    lf_islanded += len(islanded)
                    last_solution = solution
                failing = [batch[prefix]]
            else:
                failing = list(batch)
            steps.append(
                CascadeStep(
                    index=len(steps),
                    failed_branches=failing,
                    islanded_branches=[],
                    de_energized_buses=[],
                    outcome="non_converged",
                    slack_p_mw=None,
                )
            )
            terminated_by = TERMINATED_NON_CONVERGENCE
            break
        else:
            steps.append(
                CascadeStep(
                    index=len(steps),
                    failed_branches=batch,
                    islanded_branches=islanded,
                    de_energized_buses=dead,
                    outcome="converged",
                    slack_p_mw=solution.slack_p_mw,
                )
            )
            lf_sampled += len(batch)
            lf_islanded += len(islanded)
            last_solution = solution

    bf_total = sum(
        1 for b in initially_energized if b not in last_solution.energized
    )
    return CascadeTrace(
        steps=steps,
        final_case=work,
        final_solution=last_solution,
        base_solution=base_solution,
        initially_energized=initially_energized,
        lf_sampled=lf_sampled,
        lf_islanded=lf_islanded,
        lf_total=lf_sampled + lf_islanded,
        bf_total=bf_total,
        terminated_by=terminated_by,
    )


def bus_failures(trace: CascadeTrace) -> tuple[dict[int, bool], int]:
    """Per-bus failure flags at the last convergent state, plus the total.

    A bus has failed when it started energized and is outside the viable
    island at the end of the cascade.
    """
    flags = {
        bid: (bid not in trace.final_solution.energized)
        for bid in sorted(trace.initially_energized)
    }
    return flags, sum(flags.values())


# ----------------------------------------------------------------------
# internals


def _branch_live(case: GridCase, branch_id: int) -> bool:
    br = case.branch(branch_id)
    return (
        br.in_service
        and case.bus(br.from_bus).in_service
        and case.bus(br.to_bus).in_service
    )


def _apply_batch(
    work: GridCase, batch: list[int], opts: PowerFlowOptions
) -> tuple[PowerFlowSolution, list[int], list[int]]:
    """Disable a batch, prune dead islands, re-solve warm. Mutates `work`."""
    for bid in batch:
        work.set_branch_status(bid, False)
    dead, islanded = _prune_islands(work)
    solution = solve(work, opts)
    apply_solution(work, solution)
    return solution, islanded, dead


def _prune_islands(work: GridCase) -> tuple[list[int], list[int]]:
    islands = energized_islands(work)
    viable = next(isl for isl in islands if isl.viable)
    dead = sorted(
        b.id for b in work.buses if b.in_service and b.id not in viable.buses
    )
    dead_set = set(dead)
    islanded_branches = sorted(
        br.id
        for br in work.branches
        if br.in_service and (br.from_bus in dead_set or br.to_bus in dead_set)
    )
    for bid in dead:
        work.set_bus_status(bid, False)
    return dead, islanded_branches


def _longest_convergent_prefix(
    snapshot: GridCase, batch: list[int], opts: PowerFlowOptions
) -> int:
    """Binary search for the longest prefix of a failing batch that solves.

    The empty prefix (the snapshot itself) is convergent by construction and
    the full batch is known to diverge, so the search maintains one bound on
    each side.
    """
    lo, hi = 0, len(batch)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        trial = snapshot.copy()
        try:
            _apply_batch(trial, batch[:mid], opts)
        except NonConvergence:
            hi = mid
        else:
            lo = mid
    return lo
