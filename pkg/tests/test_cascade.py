"""Cascade engine: batching, island pruning, rollback, bookkeeping.

The corridor fixture is three parallel lines feeding 600 MW. Each line can
carry at most 500 MW on its own, so losing two of the three leaves an
infeasible network: the second loss is the engineered non-convergence.
"""

import pytest

from gridpulse.cascade import (
    TERMINATED_EXHAUSTED,
    TERMINATED_NON_CONVERGENCE,
    CascadeOptions,
    CascadeTrace,
    bus_failures,
    run_cascade,
)
from gridpulse.damage import DamageParams, sample_failures
from gridpulse.powerflow import NonConvergence, PowerFlowOptions, solve


def test_empty_failure_list_is_trivial(case5):
    trace = run_cascade(case5, [])
    assert trace.terminated_by == TERMINATED_EXHAUSTED
    assert trace.lf_total == 0
    assert trace.bf_total == 0
    assert trace.steps == []
    assert trace.final_solution.converged


def test_input_case_never_mutated(case5):
    before = case5.to_json()
    run_cascade(case5, [1, 2])
    assert case5.to_json() == before


def test_single_line_loss_converges(corridor):
    trace = run_cascade(corridor, [1])
    assert trace.terminated_by == TERMINATED_EXHAUSTED
    assert trace.lf_sampled == 1
    assert trace.lf_islanded == 0
    assert trace.bf_total == 0
    assert len(trace.steps) == 1
    assert trace.steps[0].outcome == "converged"


def test_second_line_loss_collapses(corridor):
    trace = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=1))
    assert trace.terminated_by == TERMINATED_NON_CONVERGENCE
    # Only the first loss lands; the second is recorded as the failing step.
    assert trace.lf_sampled == 1
    assert trace.steps[-1].outcome == "non_converged"
    assert trace.steps[-1].failed_branches == [2]
    assert trace.steps[-1].slack_p_mw is None


def test_bisect_recovers_longest_prefix(corridor):
    """One batch of five: the solver must peel off the convergent prefix."""
    trace = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=5))
    assert trace.terminated_by == TERMINATED_NON_CONVERGENCE
    assert trace.lf_sampled == 1
    converged = [s for s in trace.steps if s.outcome == "converged"]
    assert len(converged) == 1
    assert converged[0].failed_branches == [1]
    assert trace.steps[-1].failed_branches == [2]


def test_batch_1_and_5_agree_on_totals(corridor):
    a = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=1))
    b = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=5))
    assert a.lf_total == b.lf_total
    assert a.bf_total == b.bf_total
    assert a.terminated_by == b.terminated_by


def test_last_convergent_state_resolves(corridor):
    """The trace's final case re-solves cleanly, and applying the very next
    failed line reproduces the divergence."""
    trace = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=5))
    resolved = solve(trace.final_case, PowerFlowOptions(flat_start=True))
    assert resolved.converged

    probe = trace.final_case.copy()
    next_line = trace.steps[-1].failed_branches[0]
    probe.set_branch_status(next_line, False)
    with pytest.raises(NonConvergence):
        solve(probe, PowerFlowOptions(flat_start=True))


def test_no_bisect_reports_whole_batch(corridor):
    opts = CascadeOptions(batch_size=5, bisect_on_failure=False)
    trace = run_cascade(corridor, [1, 2], opts)
    assert trace.terminated_by == TERMINATED_NON_CONVERGENCE
    assert trace.lf_sampled == 0
    assert trace.steps[-1].failed_branches == [1, 2]


def test_island_pruning_counts_collateral(case5):
    """Cutting the spur's feed (branch 6) de-energizes bus 5; no extra
    sampled lines are charged but the islanded-line ledger stays separate."""
    trace = run_cascade(case5, [6])
    assert trace.terminated_by == TERMINATED_EXHAUSTED
    assert trace.lf_sampled == 1
    assert trace.lf_islanded == 0
    assert trace.bf_total == 1
    assert trace.steps[0].de_energized_buses == [5]
    flags, total = bus_failures(trace)
    assert flags[5] is True
    assert total == 1


def test_islanded_branches_not_double_counted(texas_mini):
    """A failure that strands a region takes its branches as collateral;
    those branches are counted islanded, not sampled."""
    p = DamageParams(center_lat=31.0, center_lon=-97.5, radius_km=140.0,
                     slope=0.9, seed=20)
    fs = sample_failures(texas_mini, p)
    trace = run_cascade(texas_mini, fs)
    assert trace.lf_total == trace.lf_sampled + trace.lf_islanded
    sampled = set()
    islanded = set()
    for s in trace.steps:
        if s.outcome == "converged":
            sampled.update(s.failed_branches)
            islanded.update(s.islanded_branches)
    assert not sampled & islanded
    assert trace.lf_sampled == len(sampled)
    assert trace.lf_islanded == len(islanded)


def test_already_dead_lines_skip_batch_slots(case5):
    case5.set_branch_status(1, False)
    trace = run_cascade(case5, [1, 2], CascadeOptions(batch_size=1))
    # Line 1 is out before the cascade starts; only line 2 occupies a step.
    assert trace.lf_sampled == 1
    assert [s.failed_branches for s in trace.steps if s.outcome == "converged"] == [[2]]


def test_failure_set_input(texas_mini):
    p = DamageParams(center_lat=30.6, center_lon=-98.0, radius_km=90.0,
                     slope=0.7, seed=41)
    fs = sample_failures(texas_mini, p)
    trace = run_cascade(texas_mini, fs)
    assert trace.lf_sampled <= len(fs)
    assert trace.terminated_by in (TERMINATED_EXHAUSTED, TERMINATED_NON_CONVERGENCE)


def test_bf_totals_consistent(texas_mini):
    p = DamageParams(center_lat=31.2, center_lon=-96.8, radius_km=120.0,
                     slope=0.9, seed=8)
    fs = sample_failures(texas_mini, p)
    trace = run_cascade(texas_mini, fs)
    flags, total = bus_failures(trace)
    assert total == trace.bf_total
    assert set(flags) == set(trace.initially_energized)
    dead_from_steps = set()
    for s in trace.steps:
        dead_from_steps.update(s.de_energized_buses)
    assert {b for b, v in flags.items() if v} == dead_from_steps


def test_trace_to_dict_shape(corridor):
    trace = run_cascade(corridor, [1, 2], CascadeOptions(batch_size=1))
    d = trace.to_dict()
    assert d["terminated_by"] == TERMINATED_NON_CONVERGENCE
    assert d["lf_total"] == trace.lf_total
    assert d["slack_p_base_mw"] == trace.base_solution.slack_p_mw
    assert d["failed_buses"] == []
    assert [s["outcome"] for s in d["steps"]] == [s.outcome for s in trace.steps]


def test_batch_size_validation():
    with pytest.raises(ValueError):
        CascadeOptions(batch_size=0)


def test_deterministic_repeat(texas_mini):
    p = DamageParams(center_lat=30.9, center_lon=-97.3, radius_km=110.0,
                     slope=0.8, seed=33)
    fs = sample_failures(texas_mini, p)
    t1 = run_cascade(texas_mini, fs)
    t2 = run_cascade(texas_mini, fs)
    assert t1.to_dict() == t2.to_dict()
