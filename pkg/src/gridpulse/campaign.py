"""Monte Carlo campaign driver: scenario enumeration, worker pool, records.

Scenarios are the cross product of damage centers, slope values and
replicates, each with a seed derived from the master seed so any scenario can
be regenerated in isolation. Results are appended to a JSONL log as they
complete; a manifest makes interrupted campaigns resumable, with the record
log itself as the source of truth for what finished. Record contents carry no
scheduling artifacts apart from wall_time_s, so any worker count produces the
same sorted records.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

from .cascade import CascadeOptions, CascadeTrace, run_cascade
from .damage import DamageParams, sample_failures
from .model import GridCase
from .powerflow import PowerFlowOptions
from .sensitivity import SingularSystem, generation_surplus, lodf, si_count

RECORDS_NAME = "records.jsonl"
MANIFEST_NAME = "manifest.json"
ERRORS_NAME = "errors.jsonl"
PER_BUS_NAME = "per_bus_bf.csv"


class CampaignError(RuntimeError):
    """Campaign-level failure: unreadable spec or a mismatched resume target."""


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: str
    county_id: int
    k_index: int
    k: float
    replicate: int
    center_lat: float
    center_lon: float
    seed: int


@dataclass
class CampaignSpec:
    radius_km: float = 100.0
    k_values: tuple[float, ...] = (0.5, 0.7, 0.9)
    replicates: int = 1
    master_seed: int = 0
    batch_size: int = 5
    thresholds: tuple[float, ...] = (0.03,)
    gamma_shape: float = 2.0
    gamma_scale: float = 1.0
    workers: int = 1
    center_county_ids: tuple[int, ...] | None = None
    case_path: str | None = None
    geo_path: str | None = None
    counties_path: str | None = None

    _KEYS = {
        "case": "case_path",
        "geo": "geo_path",
        "counties": "counties_path",
        "centers": "center_county_ids",
        "radius_km": "radius_km",
        "k_values": "k_values",
        "replicates": "replicates",
        "master_seed": "master_seed",
        "batch_size": "batch_size",
        "thresholds": "thresholds",
        "gamma_shape": "gamma_shape",
        "gamma_scale": "gamma_scale",
        "workers": "workers",
    }

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignSpec":
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise CampaignError(f"unknown campaign keys: {sorted(unknown)}")
        kwargs = {}
        for key, attr in cls._KEYS.items():
            if key in data:
                value = data[key]
                if key in ("k_values", "thresholds"):
                    value = tuple(float(v) for v in value)
                elif key == "centers":
                    value = tuple(int(v) for v in value)
                kwargs[attr] = value
        spec = cls(**kwargs)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path: str | Path) -> "CampaignSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CampaignError(f"cannot read campaign spec {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise CampaignError(f"campaign spec {path} must be a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.radius_km <= 0:
            raise CampaignError(f"radius_km must be positive, got {self.radius_km}")
        if not self.k_values or any(not 0.0 < k <= 1.0 for k in self.k_values):
            raise CampaignError(f"k_values must be in (0, 1], got {self.k_values}")
        if self.replicates < 1:
            raise CampaignError(f"replicates must be at least 1, got {self.replicates}")
        if self.batch_size < 1:
            raise CampaignError(f"batch_size must be at least 1, got {self.batch_size}")
        if any(t <= 0 for t in self.thresholds):
            raise CampaignError(f"thresholds must be positive, got {self.thresholds}")
        if self.workers < 1:
            raise CampaignError(f"workers must be at least 1, got {self.workers}")

    def canonical(self) -> dict:
        """Parameters that define campaign identity for resume checking."""
        return {
            "radius_km": self.radius_km,
            "k_values": list(self.k_values),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "batch_size": self.batch_size,
            "thresholds": list(self.thresholds),
            "gamma_shape": self.gamma_shape,
            "gamma_scale": self.gamma_scale,
            "centers": list(self.center_county_ids) if self.center_county_ids else None,
        }


@dataclass
class CampaignResults:
    records: list[dict]  # sorted by scenario_id
    errors: list[dict]
    out_dir: Path
    per_bus_bf: dict[int, int]


def scenario_seed(master_seed: int, county_id: int, k_index: int, replicate: int) -> int:
    """Stable 64-bit seed for one scenario, collision-free within a campaign."""
    key = f"{master_seed}:{county_id}:{k_index}:{replicate}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def enumerate_scenarios(spec: CampaignSpec, case: GridCase) -> list[ScenarioSpec]:
    """List every scenario in deterministic (county, k, replicate) order."""
    counties = {c.id: c for c in case.counties}
    if spec.center_county_ids is not None:
        missing = [cid for cid in spec.center_county_ids if cid not in counties]
        if missing:
            raise CampaignError(f"centers reference unknown counties: {missing}")
        centers = [counties[cid] for cid in spec.center_county_ids]
    else:
        centers = sorted(case.counties, key=lambda c: c.id)
    if not centers:
        raise CampaignError("campaign has no damage centers (county table is empty)")

    scenarios = []
    for county in centers:
        for k_index, k in enumerate(spec.k_values):
            for rep in range(spec.replicates):
                scenarios.append(
                    ScenarioSpec(
                        scenario_id=f"c{county.id:04d}-k{k_index}-r{rep}",
                        county_id=county.id,
                        k_index=k_index,
                        k=k,
                        replicate=rep,
                        center_lat=county.lat,
                        center_lon=county.lon,
                        seed=scenario_seed(spec.master_seed, county.id, k_index, rep),
                    )
                )
    return scenarios


# ----------------------------------------------------------------------
# per-scenario execution (runs inside workers)

_WORKER_STATE: tuple[GridCase, CampaignSpec] | None = None


def _init_worker(case: GridCase, spec: CampaignSpec) -> None:
    global _WORKER_STATE
    _WORKER_STATE = (case, spec)


def run_scenario(case: GridCase, spec: CampaignSpec, scn: ScenarioSpec) -> dict:
    """Execute one scenario end to end and build its record."""
    t0 = time.perf_counter()
    params = DamageParams(
        center_lat=scn.center_lat,
        center_lon=scn.center_lon,
        radius_km=spec.radius_km,
        slope=scn.k,
        gamma_shape=spec.gamma_shape,
        gamma_scale=spec.gamma_scale,
        seed=scn.seed,
    )
    failures = sample_failures(case, params)
    trace = run_cascade(
        case,
        failures,
        CascadeOptions(batch_size=spec.batch_size, powerflow=PowerFlowOptions()),
    )
    record = scenario_record(trace, spec, scn, n_sampled=len(failures))
    record["wall_time_s"] = round(time.perf_counter() - t0, 6)
    return record


def scenario_record(
    trace: CascadeTrace, spec: CampaignSpec, scn: ScenarioSpec, n_sampled: int
) -> dict:
    gs = generation_surplus(trace.final_case, trace.final_solution)
    si_totals = {}
    for th in spec.thresholds:
        si_totals[_threshold_key(th)] = _si_total(trace.final_case, th)
    failed_buses = sorted(
        b for b in trace.initially_energized if b not in trace.final_solution.energized
    )
    return {
        "scenario_id": scn.scenario_id,
        "county_id": scn.county_id,
        "k": scn.k,
        "k_index": scn.k_index,
        "replicate": scn.replicate,
        "seed": scn.seed,
        "center_lat": scn.center_lat,
        "center_lon": scn.center_lon,
        "n_sampled": n_sampled,
        "lf_sampled": trace.lf_sampled,
        "lf_islanded": trace.lf_islanded,
        "lf_total": trace.lf_total,
        "bf_total": trace.bf_total,
        "failed_buses": failed_buses,
        "steps": len(trace.steps),
        "terminated_by": trace.terminated_by,
        "slack_p_base_mw": trace.base_solution.slack_p_mw,
        "slack_p_final_mw": trace.final_solution.slack_p_mw,
        "slack_dp_mw": trace.final_solution.slack_p_mw - trace.base_solution.slack_p_mw,
        "gs_total_mw": gs.total_mw,
        "gs_per_generator": {str(gid): v for gid, v in sorted(gs.per_generator_mw.items())},
        "mean_loading_percent": gs.mean_loading_percent(),
        "si_totals": si_totals,
    }


def _threshold_key(threshold: float) -> str:
    return repr(float(threshold))


def _si_total(case: GridCase, threshold: float) -> int:
    """System severity total on the (single-island) final topology."""
    if not case.in_service_branches():
        return 0
    try:
        table = si_count(lodf(case), threshold)
    except SingularSystem:
        return 0
    return table.total()


def _run_one(scn: ScenarioSpec) -> tuple[str, dict]:
    case, spec = _WORKER_STATE
    try:
        return "ok", run_scenario(case, spec, scn)
    except Exception as exc:  # recorded, never aborts the campaign
        return "error", {
            "scenario_id": scn.scenario_id,
            "error": f"{type(exc).__name__}: {exc}",
        }


# ----------------------------------------------------------------------
# campaign driver


def run_campaign(
    case: GridCase,
    spec: CampaignSpec,
    out_dir: str | Path,
    workers: int | None = None,
    resume: bool = True,
    progress=None,
) -> CampaignResults:
    """Run (or finish) a campaign, returning the full record set.

    The record log is the resume ground truth: scenarios with a valid record
    line are never re-run. A torn trailing line (from a hard kill) is dropped
    and its scenario re-executed, which is safe because scenario seeds make
    re-runs bit-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / RECORDS_NAME
    workers = workers if workers is not None else spec.workers

    scenarios = enumerate_scenarios(spec, case)
    fingerprint = _fingerprint(case, spec)

    prior_records: list[dict] = []
    if resume and records_path.exists():
        _check_manifest(out / MANIFEST_NAME, fingerprint)
        prior_records = _recover_records(records_path)
    elif records_path.exists():
        records_path.unlink()

    done_ids = {r["scenario_id"] for r in prior_records}
    pending = [s for s in scenarios if s.scenario_id not in done_ids]

    new_records: list[dict] = []
    errors: list[dict] = []
    interrupted = None
    try:
        if pending:
            with records_path.open("ab") as fh:
                if workers > 1:
                    with Pool(workers, initializer=_init_worker, initargs=(case, spec)) as pool:
                        for kind, payload in pool.imap_unordered(_run_one, pending, chunksize=1):
                            _consume(kind, payload, fh, out, new_records, errors, progress)
                else:
                    _init_worker(case, spec)
                    for scn in pending:
                        kind, payload = _run_one(scn)
                        _consume(kind, payload, fh, out, new_records, errors, progress)
    except KeyboardInterrupt as exc:
        interrupted = exc

    all_records = sorted(prior_records + new_records, key=lambda r: r["scenario_id"])
    per_bus = _per_bus_counts(all_records)
    _write_manifest(out / MANIFEST_NAME, fingerprint, scenarios, all_records, errors)
    _write_per_bus(out / PER_BUS_NAME, per_bus)
    if interrupted is not None:
        raise interrupted

    return CampaignResults(
        records=all_records, errors=errors, out_dir=out, per_bus_bf=per_bus
    )


def _consume(kind, payload, fh, out, new_records, errors, progress) -> None:
    if kind == "ok":
        fh.write((json.dumps(payload, sort_keys=True) + "\n").encode())
        fh.flush()
        new_records.append(payload)
    else:
        errors.append(payload)
        with (out / ERRORS_NAME).open("a") as efh:
            efh.write(json.dumps(payload, sort_keys=True) + "\n")
    if progress is not None:
        progress(kind, payload)


def _fingerprint(case: GridCase, spec: CampaignSpec) -> str:
    payload = json.dumps(
        {"case": case.to_dict(), "spec": spec.canonical()}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _check_manifest(manifest_path: Path, fingerprint: str) -> None:
    if not manifest_path.exists():
        return
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError):
        return  # manifest is derived state; a corrupt one is simply rebuilt
    stored = manifest.get("fingerprint")
    if stored is not None and stored != fingerprint:
        raise CampaignError(
            "existing results were produced by a different case or campaign spec; "
            "use a fresh output directory"
        )


def _recover_records(records_path: Path) -> list[dict]:
    """Load valid record lines, truncating a torn tail from a hard kill."""
    records: list[dict] = []
    seen: set[str] = set()
    valid_bytes = 0
    with records_path.open("rb") as fh:
        for line in fh:
            if not line.endswith(b"\n"):
                break
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break
            if rec.get("scenario_id") not in seen:
                records.append(rec)
                seen.add(rec["scenario_id"])
            valid_bytes += len(line)
    if valid_bytes < records_path.stat().st_size:
        with records_path.open("rb+") as fh:
            fh.truncate(valid_bytes)
    return records


def _per_bus_counts(records: list[dict]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for rec in records:
        for bid in rec.get("failed_buses", []):
            counts[bid] = counts.get(bid, 0) + 1
    return counts


def _write_manifest(path: Path, fingerprint: str, scenarios, records, errors) -> None:
    manifest = {
        "fingerprint": fingerprint,
        "total": len(scenarios),
        "completed": sorted(r["scenario_id"] for r in records),
        "errors": sorted(e["scenario_id"] for e in errors),
    }
    _atomic_write(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _write_per_bus(path: Path, per_bus: dict[int, int]) -> None:
    lines = ["bus_id,failures"]
    for bid in sorted(per_bus):
        lines.append(f"{bid},{per_bus[bid]}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
