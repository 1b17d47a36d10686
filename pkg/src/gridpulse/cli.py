"""Command line entry point.

One binary, subcommand per pipeline stage. Flags override config-file values,
which override built-in defaults. Exit codes: 0 success, 1 usage error,
2 input validation error, 3 campaign-level failure. A diverging power flow
inside a cascade or solve is a result, not an error, and exits 0.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click

from .campaign import CampaignError, CampaignSpec, run_campaign
from .cascade import CascadeOptions, run_cascade
from .damage import DamageParams, sample_failures
from .matpower import CaseSyntaxError, load_case
from .model import GridCase, ValidationError
from .powerflow import NonConvergence, PowerFlowOptions, energized_islands, solve
from .report import (
    DEFAULT_BINS,
    DEFAULT_SI_THRESHOLD,
    emit_figures,
    load_records,
)
from .sensitivity import generation_surplus, lodf, ptdf, si_count

_WORKERS_ENV = "GRIDPULSE_WORKERS"


@click.group()
@click.option("--config", "config_path", default=None, metavar="FILE",
              help="JSON file with default values for options.")
@click.pass_context
def cli(ctx, config_path):
    """Contingency Monte Carlo toolkit for geographic grid damage studies."""
    cfg = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
        if not isinstance(cfg, dict):
            raise ValidationError(f"config file {path} must hold a JSON object")
    ctx.obj = cfg


def _cfg(ctx, key, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    if ctx.obj and key in ctx.obj:
        return ctx.obj[key]
    return default


def _require_file(path, what) -> Path:
    if path is None:
        raise click.UsageError(f"no {what} given (use the flag or a config entry)")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load(ctx, case, geo, counties) -> GridCase:
    case_p = _require_file(_cfg(ctx, "case", case), "case file")
    geo_p = _require_file(_cfg(ctx, "geo", geo), "geo file")
    counties = _cfg(ctx, "counties", counties)
    counties_p = _require_file(counties, "county file") if counties else None
    return load_case(case_p, geo_p, counties_p)


_case_opt = click.option("--case", default=None, metavar="FILE", help="Case file.")
_geo_opt = click.option("--geo", default=None, metavar="FILE", help="Bus coordinates CSV.")
_counties_opt = click.option("--counties", default=None, metavar="FILE", help="County table CSV.")


# ----------------------------------------------------------------------


@cli.command()
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--out", default=None, metavar="FILE", help="Write JSON here instead of stdout.")
@click.pass_context
def inspect(ctx, case, geo, counties, out):
    """Parse and validate a case, dumping its canonical JSON form."""
    grid = _load(ctx, case, geo, counties)
    text = json.dumps(grid.to_dict(), indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
        islands = energized_islands(grid)
        click.echo(
            f"{grid.name}: {len(grid.buses)} buses, {len(grid.branches)} branches, "
            f"{len(grid.generators)} generators, {len(grid.loads)} loads, "
            f"{len(grid.counties)} counties, {len(islands)} island(s), "
            f"{grid.total_load_mw():.1f} MW load",
            err=True,
        )
    else:
        click.echo(text, nl=False)


@cli.command(name="solve")
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--out", default=None, metavar="FILE", help="Solution JSON output path.")
@click.option("--tol", default=None, type=float, help="Mismatch tolerance in pu.")
@click.option("--max-iter", default=None, type=int, help="Newton iteration cap.")
@click.option("--flat-start", is_flag=True, default=False, help="Ignore stored voltages.")
@click.option("--no-q-limits", is_flag=True, default=False,
              help="Skip generator reactive limit enforcement.")
@click.pass_context
def solve_cmd(ctx, case, geo, counties, out, tol, max_iter, flat_start, no_q_limits):
    """Run one AC power flow and report the solved state."""
    grid = _load(ctx, case, geo, counties)
    opts = PowerFlowOptions(
        tol_pu=_cfg(ctx, "tol", tol, 1e-8),
        max_iter=_cfg(ctx, "max_iter", max_iter, 30),
        enforce_q_limits=not no_q_limits,
        flat_start=flat_start,
    )
    try:
        solution = solve(grid, opts)
    except NonConvergence as exc:
        click.echo(f"{grid.name}: {exc}", err=True)
        if out:
            payload = {
                "converged": False,
                "iterations": exc.iterations,
                "max_mismatch_pu": exc.max_mismatch_pu,
            }
            Path(out).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        return
    vms = [v for b, v in solution.bus_vm.items() if b in solution.energized]
    click.echo(
        f"{grid.name}: converged in {solution.iterations} iterations "
        f"({solution.total_iterations} total), slack {solution.slack_p_mw:.2f} MW, "
        f"vm {min(vms):.4f}..{max(vms):.4f} pu, {len(solution.energized)} buses energized",
        err=True,
    )
    if out:
        Path(out).write_text(
            json.dumps(solution.to_dict(), indent=1, sort_keys=True) + "\n"
        )


@cli.command()
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--threshold", default=None, type=float,
              help=f"Severity counting threshold (default {DEFAULT_SI_THRESHOLD}).")
@click.option("--out", default=None, metavar="FILE", help="Per-branch severity CSV path.")
@click.pass_context
def sensitivity(ctx, case, geo, counties, threshold, out):
    """Compute outage severity counts from linear sensitivities."""
    grid = _load(ctx, case, geo, counties)
    threshold = _cfg(ctx, "threshold", threshold, DEFAULT_SI_THRESHOLD)
    table = si_count(lodf(grid, ptdf(grid)), threshold, grid)

    county_of = {br.id: br.county_id for br in grid.branches}
    lines = ["branch_id,county_id,si_count"]
    for bid in sorted(table.counts):
        county = county_of.get(bid)
        lines.append(f"{bid},{'' if county is None else county},{table.counts[bid]}")
    branch_csv = "\n".join(lines) + "\n"

    lines = ["county_id,total,normalized"]
    for cid in sorted(table.county_totals):
        lines.append(
            f"{cid},{table.county_totals[cid]},{repr(table.county_normalized[cid])}"
        )
    county_csv = "\n".join(lines) + "\n"

    if out:
        out_path = Path(out)
        out_path.write_text(branch_csv)
        county_path = out_path.with_name(out_path.stem + "_counties" + out_path.suffix)
        county_path.write_text(county_csv)
        click.echo(
            f"wrote {out_path} and {county_path} "
            f"(system total {table.total()} at threshold {threshold})",
            err=True,
        )
    else:
        click.echo(branch_csv, nl=False)
        click.echo(county_csv, nl=False)


@cli.command()
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--center", default=None, metavar="LAT,LON", help="Damage centre coordinates.")
@click.option("--radius-km", default=None, type=float, help="Damage radius in km.")
@click.option("--k", default=None, type=float, help="Failure probability at the centre.")
@click.option("--seed", default=None, type=int, help="Scenario seed.")
@click.option("--gamma-shape", default=None, type=float, help="Onset time gamma shape.")
@click.option("--gamma-scale", default=None, type=float, help="Onset time gamma scale.")
@click.option("--out", default=None, metavar="FILE", help="Failure CSV output path.")
@click.pass_context
def sample(ctx, case, geo, counties, center, radius_km, k, seed, gamma_shape, gamma_scale, out):
    """Sample one damage event's failed lines and onset times."""
    grid = _load(ctx, case, geo, counties)
    params = _damage_params(ctx, center, radius_km, k, seed, gamma_shape, gamma_scale)
    failures = sample_failures(grid, params)
    lines = ["branch_id,distance_km,fail_time_s"]
    for fl in failures:
        lines.append(f"{fl.branch_id},{repr(fl.distance_km)},{repr(fl.fail_time_s)}")
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
        click.echo(f"{len(failures)} failed lines written to {out}", err=True)
    else:
        click.echo(text, nl=False)


def _damage_params(ctx, center, radius_km, k, seed, gamma_shape, gamma_scale) -> DamageParams:
    center = _cfg(ctx, "center", center)
    if center is None:
        raise click.UsageError("no damage centre given (--center LAT,LON)")
    if isinstance(center, str):
        parts = center.split(",")
        if len(parts) != 2:
            raise click.UsageError(f"--center expects LAT,LON, got {center!r}")
        lat, lon = (float(p) for p in parts)
    else:
        lat, lon = (float(center[0]), float(center[1]))
    return DamageParams(
        center_lat=lat,
        center_lon=lon,
        radius_km=_cfg(ctx, "radius_km", radius_km, 100.0),
        slope=_cfg(ctx, "k", k, 0.7),
        gamma_shape=_cfg(ctx, "gamma_shape", gamma_shape, 2.0),
        gamma_scale=_cfg(ctx, "gamma_scale", gamma_scale, 1.0),
        seed=_cfg(ctx, "seed", seed, 0),
    )


@cli.command()
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--failures", "failures_path", default=None, metavar="FILE",
              help="Failure CSV (branch_id[,distance_km,fail_time_s]).")
@click.option("--center", default=None, metavar="LAT,LON",
              help="Sample failures from a damage event instead of a CSV.")
@click.option("--radius-km", default=None, type=float)
@click.option("--k", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--gamma-shape", default=None, type=float)
@click.option("--gamma-scale", default=None, type=float)
@click.option("--batch-size", default=None, type=int, help="Failures applied per solve.")
@click.option("--no-bisect", is_flag=True, default=False,
              help="On divergence, stop without isolating the failing line.")
@click.option("--threshold", default=None, type=float,
              help="Severity threshold for the summary.")
@click.option("--out", default=None, metavar="DIR",
              help="Write steps.jsonl and summary.json here.")
@click.pass_context
def cascade(ctx, case, geo, counties, failures_path, center, radius_km, k, seed,
            gamma_shape, gamma_scale, batch_size, no_bisect, threshold, out):
    """Run one cascade, from a failure CSV or a sampled damage event."""
    grid = _load(ctx, case, geo, counties)
    if failures_path and center:
        raise click.UsageError("give either --failures or --center, not both")

    n_sampled = None
    if failures_path:
        failures = _read_failures(_require_file(failures_path, "failure file"))
        params = None
    else:
        params = _damage_params(ctx, center, radius_km, k, seed, gamma_shape, gamma_scale)
        sampled = sample_failures(grid, params)
        failures = sampled
        n_sampled = len(sampled)

    opts = CascadeOptions(
        batch_size=_cfg(ctx, "batch_size", batch_size, 5),
        bisect_on_failure=not no_bisect,
    )
    trace = run_cascade(grid, failures, opts)
    threshold = _cfg(ctx, "threshold", threshold, DEFAULT_SI_THRESHOLD)
    summary = _cascade_summary(grid, trace, params, threshold, n_sampled)

    click.echo(
        f"{grid.name}: {trace.terminated_by} after {len(trace.steps)} steps, "
        f"lf={trace.lf_total} (sampled {trace.lf_sampled}, islanded {trace.lf_islanded}), "
        f"bf={trace.bf_total}",
        err=True,
    )
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        steps_text = "".join(
            json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in trace.steps
        )
        (out_dir / "steps.jsonl").write_text(steps_text)
        (out_dir / "summary.json").write_text(
            json.dumps(summary, indent=1, sort_keys=True) + "\n"
        )
    else:
        click.echo(json.dumps(summary, indent=1, sort_keys=True))


def _cascade_summary(grid, trace, params, threshold, n_sampled) -> dict:
    from .campaign import _si_total  # shared metric definition

    gs = generation_surplus(trace.final_case, trace.final_solution)
    summary = trace.to_dict()
    summary.pop("steps", None)
    summary["gs_total_mw"] = gs.total_mw
    summary["gs_per_generator"] = {
        str(gid): v for gid, v in sorted(gs.per_generator_mw.items())
    }
    summary["mean_loading_percent"] = gs.mean_loading_percent()
    summary["si_totals"] = {repr(float(threshold)): _si_total(trace.final_case, threshold)}
    summary["slack_dp_mw"] = (
        trace.final_solution.slack_p_mw - trace.base_solution.slack_p_mw
    )
    if n_sampled is not None:
        summary["n_sampled"] = n_sampled
    if params is not None:
        summary["center_lat"] = params.center_lat
        summary["center_lon"] = params.center_lon
        summary["k"] = params.slope
        summary["seed"] = params.seed
    return summary


def _read_failures(path: Path) -> list[int]:
    rows = []
    for i, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if i == 0:
            try:
                float(cells[0])
            except ValueError:
                continue  # header
        branch_id = int(float(cells[0]))
        fail_time = float(cells[2]) if len(cells) >= 3 else None
        rows.append((fail_time, branch_id))
    if any(t is not None for t, _ in rows):
        if any(t is None for t, _ in rows):
            raise ValidationError(f"failure file {path} mixes rows with and without times")
        rows.sort()
    return [bid for _, bid in rows]


@cli.command()
@click.option("--spec", "spec_path", default=None, metavar="FILE", help="Campaign JSON spec.")
@click.option("--workers", default=None, type=int,
              help=f"Worker processes (default from ${_WORKERS_ENV}, then the spec).")
@click.option("--out", default=None, metavar="DIR", help="Results directory.")
@click.option("--preset", default=None,
              type=click.Choice(["popdensity", "gs30"]),
              help="Named experiment preset overriding parts of the spec.")
@click.option("--fresh", is_flag=True, default=False,
              help="Ignore existing records instead of resuming.")
@click.pass_context
def campaign(ctx, spec_path, workers, out, preset, fresh):
    """Run a Monte Carlo campaign described by a spec file."""
    spec_p = _require_file(_cfg(ctx, "spec", spec_path), "campaign spec")
    spec = CampaignSpec.from_file(spec_p)
    base = spec_p.parent

    def _resolve_path(p, what):
        if p is None:
            raise CampaignError(f"campaign spec does not name a {what}")
        q = Path(p)
        return q if q.is_absolute() else base / q

    grid = load_case(
        _resolve_path(spec.case_path, "case file"),
        _resolve_path(spec.geo_path, "geo file"),
        _resolve_path(spec.counties_path, "county file") if spec.counties_path else None,
    )
    if preset is not None:
        spec = _apply_preset(spec, preset, grid)

    out_dir = _cfg(ctx, "out", out)
    if out_dir is None:
        raise click.UsageError("no output directory given (--out)")
    if workers is None:
        env = os.environ.get(_WORKERS_ENV)
        workers = int(env) if env else None

    t0 = time.perf_counter()
    state = {"done": 0}

    def progress(kind, payload):
        state["done"] += 1
        if kind == "ok":
            click.echo(
                f"[{state['done']}] {payload['scenario_id']} "
                f"steps={payload['steps']} lf={payload['lf_total']} "
                f"bf={payload['bf_total']} {payload['terminated_by']} "
                f"({payload['wall_time_s']:.2f}s)",
                err=True,
            )
        else:
            click.echo(
                f"[{state['done']}] {payload['scenario_id']} ERROR {payload['error']}",
                err=True,
            )

    results = run_campaign(
        grid, spec, out_dir, workers=workers, resume=not fresh, progress=progress
    )
    elapsed = time.perf_counter() - t0
    click.echo(
        f"campaign complete: {len(results.records)} records, "
        f"{len(results.errors)} errors, {elapsed:.1f}s, results in {results.out_dir}",
        err=True,
    )


def _apply_preset(spec: CampaignSpec, preset: str, grid: GridCase) -> CampaignSpec:
    """Named experiment shapes: single-k county sweeps and county subsamples."""
    from dataclasses import replace as _replace

    if preset == "popdensity":
        return _replace(spec, radius_km=50.0, k_values=(0.7,), replicates=1,
                        center_county_ids=None)
    # gs30: thirty counties drawn without replacement using the master seed
    import numpy as np

    ids = sorted(c.id for c in grid.counties)
    n = min(30, len(ids))
    rng = np.random.default_rng(spec.master_seed)
    chosen = sorted(int(i) for i in rng.choice(ids, size=n, replace=False))
    return _replace(spec, k_values=(0.7,), replicates=1,
                    center_county_ids=tuple(chosen))


@cli.command()
@click.option("--results", "results_dir", default=None, metavar="DIR",
              help="Campaign results directory.")
@_case_opt
@_geo_opt
@_counties_opt
@click.option("--out", default=None, metavar="DIR", help="Figure output directory.")
@click.option("--threshold", default=None, type=float,
              help=f"Severity threshold key (default {DEFAULT_SI_THRESHOLD}).")
@click.option("--bins", default=None, type=int,
              help=f"Histogram bin count (default {DEFAULT_BINS}).")
@click.pass_context
def report(ctx, results_dir, case, geo, counties, out, threshold, bins):
    """Aggregate a finished campaign into figure-equivalent files."""
    results_p = _cfg(ctx, "results", results_dir)
    if results_p is None:
        raise click.UsageError("no results directory given (--results)")
    grid = _load(ctx, case, geo, counties)
    records = load_records(results_p)
    out_dir = _cfg(ctx, "out", out)
    if out_dir is None:
        raise click.UsageError("no output directory given (--out)")
    written = emit_figures(
        records,
        grid,
        out_dir,
        si_threshold=_cfg(ctx, "threshold", threshold, DEFAULT_SI_THRESHOLD),
        bins=_cfg(ctx, "bins", bins, DEFAULT_BINS),
    )
    click.echo(f"wrote {len(written)} files to {out_dir}", err=True)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit code mapping."""
    try:
        cli.main(args=argv, prog_name="gridpulse", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except KeyboardInterrupt:
        click.echo("interrupted; rerun with the same --out to resume", err=True)
        return 130
    except CampaignError as exc:
        click.echo(f"campaign error: {exc}", err=True)
        return 3
    except (ValidationError, CaseSyntaxError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
