"""Campaign post-processing: aggregates, histograms, correlations, figures.

Everything here is a pure function of the record log and the case, so
re-running the report over the same inputs reproduces every output file byte
for byte. CSV and GeoJSON are the canonical outputs; SVG bar charts are a
convenience rendering of the same numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .model import GridCase
from .sensitivity import lodf, si_count

DEFAULT_BINS = 20
DEFAULT_SI_THRESHOLD = 0.03


class EmptyInput(ValueError):
    """No values to aggregate."""


class DegenerateInput(ValueError):
    """A statistic is undefined for this input (for example zero variance)."""


class MissingField(ValueError):
    """Records lack a column a figure needs. Carries the scenario ids."""

    def __init__(self, message: str, scenarios: list[str] | None = None):
        self.scenarios = scenarios or []
        if self.scenarios:
            shown = ", ".join(self.scenarios[:10])
            more = "" if len(self.scenarios) <= 10 else f" and {len(self.scenarios) - 10} more"
            message = f"{message} (scenarios: {shown}{more})"
        super().__init__(message)


@dataclass
class CountyAggregate:
    county_id: int
    name: str
    lat: float
    lon: float
    pop_density: float
    scenarios: int
    lf_sum: int
    bf_sum: int
    si_total: int
    si_normalized: float
    branch_count: int
    no_branches: bool


# ----------------------------------------------------------------------
# statistics


def histogram(values, bins: int = DEFAULT_BINS) -> tuple[list[float], list[int]]:
    """Equal-width bin edges and counts spanning [min, max].

    The right edge of the last bin is inclusive so the maximum lands in it.
    An all-equal sample spans a unit-width window around the common value and
    occupies a single bin.
    """
    values = [float(v) for v in values]
    if not values:
        raise EmptyInput("cannot histogram an empty sample")
    if bins < 1:
        raise ValueError(f"bins must be at least 1, got {bins}")
    lo = min(values)
    hi = max(values)
    if hi == lo:
        lo -= 0.5
        hi += 0.5
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        i = int((v - lo) / width)
        if i >= bins:
            i = bins - 1
        counts[i] += 1
    edges = [lo + i * width for i in range(bins)] + [hi]
    return edges, counts


def pearson(xs, ys) -> float:
    """Pearson product-moment correlation coefficient."""
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("zero variance input")
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


# ----------------------------------------------------------------------
# record handling


def load_records(results_dir: str | Path) -> list[dict]:
    """Read the record log, sorted by scenario id, duplicates dropped."""
    path = Path(results_dir) / "records.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no record log at {path}")
    records = []
    seen = set()
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue  # torn tail from a killed campaign
        sid = rec.get("scenario_id")
        if sid not in seen:
            seen.add(sid)
            records.append(rec)
    records.sort(key=lambda r: r["scenario_id"])
    return records


def _require_fields(records: list[dict], fields: list[str]) -> None:
    missing: dict[str, list[str]] = {}
    for rec in records:
        for f in fields:
            if f not in rec:
                missing.setdefault(f, []).append(rec.get("scenario_id", "?"))
    if missing:
        parts = ", ".join(sorted(missing))
        scenarios = sorted({s for ids in missing.values() for s in ids})
        raise MissingField(f"records are missing fields: {parts}", scenarios)


def county_aggregates(
    records: list[dict], case: GridCase, si_threshold: float = DEFAULT_SI_THRESHOLD
) -> list[CountyAggregate]:
    """Per-county sums over scenario records plus intact-network severity.

    Severity totals come from the intact case (one LODF pass), not from the
    scenario end states, so they describe the county's structural exposure.
    """
    _require_fields(records, ["county_id", "lf_total", "bf_total"])
    table = si_count(lodf(case), si_threshold, case)

    by_county: dict[int, dict] = {}
    for rec in records:
        agg = by_county.setdefault(
            rec["county_id"], {"scenarios": 0, "lf_sum": 0, "bf_sum": 0}
        )
        agg["scenarios"] += 1
        agg["lf_sum"] += rec["lf_total"]
        agg["bf_sum"] += rec["bf_total"]

    unknown = sorted(set(by_county) - {c.id for c in case.counties})
    if unknown:
        raise MissingField(f"records reference counties absent from the case: {unknown}")

    aggregates = []
    for county in sorted(case.counties, key=lambda c: c.id):
        agg = by_county.get(county.id, {"scenarios": 0, "lf_sum": 0, "bf_sum": 0})
        branch_count = table.county_branch_counts.get(county.id, 0)
        aggregates.append(
            CountyAggregate(
                county_id=county.id,
                name=county.name,
                lat=county.lat,
                lon=county.lon,
                pop_density=county.pop_density,
                scenarios=agg["scenarios"],
                lf_sum=agg["lf_sum"],
                bf_sum=agg["bf_sum"],
                si_total=table.county_totals.get(county.id, 0),
                si_normalized=table.county_normalized.get(county.id, 0.0),
                branch_count=branch_count,
                no_branches=branch_count == 0,
            )
        )
    return aggregates


# ----------------------------------------------------------------------
# figure emission


def emit_figures(
    records: list[dict],
    case: GridCase,
    out_dir: str | Path,
    si_threshold: float = DEFAULT_SI_THRESHOLD,
    bins: int = DEFAULT_BINS,
) -> list[Path]:
    """Write the full figure-equivalent file set and return the paths.

    Validates the record columns before creating anything, so a failed run
    leaves no partial file set behind.
    """
    if not records:
        raise MissingField("no records to report on")
    _require_fields(
        records,
        [
            "scenario_id", "county_id", "k", "replicate", "failed_buses",
            "lf_total", "bf_total", "gs_total_mw", "slack_dp_mw",
            "mean_loading_percent", "si_totals",
        ],
    )
    si_key = repr(float(si_threshold))
    lacking = [r["scenario_id"] for r in records if si_key not in r.get("si_totals", {})]
    if lacking:
        raise MissingField(
            f"records have no severity totals at threshold {si_threshold}", lacking
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    aggregates = county_aggregates(records, case, si_threshold)
    written: list[Path] = []

    def emit(name: str, text: str) -> None:
        path = out / name
        path.write_text(text)
        written.append(path)

    # Cumulative bus failures across the whole campaign, as bus points.
    bus_counts: dict[int, int] = {}
    for rec in records:
        for bid in rec["failed_buses"]:
            bus_counts[bid] = bus_counts.get(bid, 0) + 1
    bus_features = []
    for bus in sorted(case.buses, key=lambda b: b.id):
        bus_features.append(
            _point_feature(
                bus.lon, bus.lat,
                {"bus_id": bus.id, "failures": bus_counts.get(bus.id, 0)},
            )
        )
    emit("fig02_bus_bf.geojson", _feature_collection(bus_features))

    # Line-failure distribution over scenarios.
    lf_values = [r["lf_total"] for r in records]
    edges, counts = histogram(lf_values, bins)
    emit("fig03_lf_hist.csv", _histogram_csv(edges, counts))
    emit("fig03_lf_hist.svg", _histogram_svg(edges, counts, "Line failures per scenario"))

    # Per-scenario bus failures.
    rows = [["scenario_id", "county_id", "k", "replicate", "bf_total"]]
    for rec in records:
        rows.append(
            [rec["scenario_id"], rec["county_id"], rec["k"], rec["replicate"], rec["bf_total"]]
        )
    emit("fig04_bf_by_scenario.csv", _csv_text(rows))

    # County choropleth data.
    emit(
        "fig05_lf_by_county.geojson",
        _feature_collection(
            [
                _point_feature(
                    a.lon, a.lat,
                    {
                        "county_id": a.county_id,
                        "name": a.name,
                        "lf_sum": a.lf_sum,
                        "scenarios": a.scenarios,
                    },
                )
                for a in aggregates
            ]
        ),
    )
    emit(
        "fig06_popdensity.geojson",
        _feature_collection(
            [
                _point_feature(
                    a.lon, a.lat,
                    {"county_id": a.county_id, "name": a.name, "pop_density": a.pop_density},
                )
                for a in aggregates
            ]
        ),
    )

    rows = [["county_id", "lf_sum", "pop_density"]]
    for a in aggregates:
        if a.scenarios > 0:
            rows.append([a.county_id, a.lf_sum, a.pop_density])
    emit("fig07_corr.csv", _csv_text(rows))

    emit(
        "fig08_si_total.geojson",
        _feature_collection(
            [
                _point_feature(
                    a.lon, a.lat,
                    {"county_id": a.county_id, "si_total": a.si_total,
                     "branch_count": a.branch_count},
                )
                for a in aggregates
            ]
        ),
    )
    emit(
        "fig09_si_norm.geojson",
        _feature_collection(
            [
                _point_feature(
                    a.lon, a.lat,
                    {"county_id": a.county_id, "si_normalized": a.si_normalized,
                     "no_branches": a.no_branches},
                )
                for a in aggregates
            ]
        ),
    )

    rows = [["scenario_id", "gs_total_mw", "si_total"]]
    for rec in records:
        rows.append([rec["scenario_id"], rec["gs_total_mw"], rec["si_totals"][si_key]])
    emit("fig10_gs_vs_si.csv", _csv_text(rows))

    rows = [["scenario_id", "gs_total_mw", "bf_total"]]
    for rec in records:
        rows.append([rec["scenario_id"], rec["gs_total_mw"], rec["bf_total"]])
    emit("fig11_gs_vs_bf.csv", _csv_text(rows))

    dp_values = [r["slack_dp_mw"] for r in records]
    edges, counts = histogram(dp_values, bins)
    emit("fig12_slack_dp_hist.csv", _histogram_csv(edges, counts))
    emit("fig12_slack_dp_hist.svg", _histogram_svg(edges, counts, "Slack bus active power change (MW)"))

    loading_values = [r["mean_loading_percent"] for r in records]
    edges, counts = histogram(loading_values, bins)
    emit("fig13_genloading_hist.csv", _histogram_csv(edges, counts))
    emit("fig13_genloading_hist.svg", _histogram_svg(edges, counts, "Mean generator loading (%)"))

    emit("correlations.json", _correlations_json(records, aggregates, si_key))
    return written


def _correlations_json(records, aggregates, si_key) -> str:
    def corr(xs, ys):
        try:
            return {"r": pearson(xs, ys), "n": len(xs)}
        except DegenerateInput:
            return {"r": None, "n": len(xs), "note": "zero variance"}
        except ValueError as exc:
            return {"r": None, "n": len(xs), "note": str(exc)}

    active = [a for a in aggregates if a.scenarios > 0]
    result = {
        "lf_vs_pop_density": corr(
            [a.lf_sum for a in active], [a.pop_density for a in active]
        ),
        "gs_vs_si": corr(
            [r["gs_total_mw"] for r in records],
            [r["si_totals"][si_key] for r in records],
        ),
        "gs_vs_bf": corr(
            [r["gs_total_mw"] for r in records],
            [r["bf_total"] for r in records],
        ),
    }
    return json.dumps(result, indent=1, sort_keys=True) + "\n"


# ----------------------------------------------------------------------
# serialization helpers


def _num(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(rows: list[list]) -> str:
    return "\n".join(",".join(_num(c) for c in row) for row in rows) + "\n"


def _histogram_csv(edges: list[float], counts: list[int]) -> str:
    rows = [["bin_start", "bin_end", "count"]]
    for i, c in enumerate(counts):
        rows.append([edges[i], edges[i + 1], c])
    return _csv_text(rows)


def _point_feature(lon: float, lat: float, properties: dict) -> dict:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [lon, lat]},
        "properties": properties,
    }


def _feature_collection(features: list[dict]) -> str:
    return json.dumps(
        {"type": "FeatureCollection", "features": features}, sort_keys=True
    ) + "\n"


def _histogram_svg(edges: list[float], counts: list[int], title: str) -> str:
    """Minimal self-contained bar chart. Fixed canvas, counts scaled to fit."""
    width, height = 640, 360
    left, right, top, bottom = 50, 15, 35, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    peak = max(counts) if counts else 1
    peak = max(peak, 1)
    n = len(counts)
    bar_w = plot_w / n

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for i, c in enumerate(counts):
        h = plot_h * c / peak
        x = left + i * bar_w
        y = top + plot_h - h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(bar_w - 1.0, 0.5):.2f}" '
            f'height="{h:.2f}" fill="#4878a8"/>'
        )
    axis_y = top + plot_h
    parts.append(
        f'<line x1="{left}" y1="{axis_y}" x2="{left + plot_w}" y2="{axis_y}" '
        f'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{left}" y="{axis_y + 18}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{edges[0]:.6g}</text>'
    )
    parts.append(
        f'<text x="{left + plot_w}" y="{axis_y + 18}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">{edges[-1]:.6g}</text>'
    )
    parts.append(
        f'<text x="{left - 8}" y="{top + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">{peak}</text>'
    )
    parts.append(
        f'<text x="{left - 8}" y="{axis_y + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="11">0</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
