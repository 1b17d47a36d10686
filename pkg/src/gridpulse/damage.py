"""Spatial damage footprint: distance-graded line failures with onset times.

A damage event is a point footprint of a given radius. Each line's failure
probability falls linearly from the slope value at the centre to zero at the
radius edge, scaled by how close the line passes. Failed lines receive an
onset time drawn from a gamma distribution, which orders them for the
cascade. All randomness is counter-based per branch, so a scenario is fully
reproducible from its seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .geo import point_segment_distance_km
from .model import Branch, GridCase
from .rng import uniforms


@dataclass(frozen=True)
class DamageParams:
    center_lat: float
    center_lon: float
    radius_km: float = 100.0
    slope: float = 0.7  # failure probability at the centre
    gamma_shape: float = 2.0
    gamma_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (-90.0 <= self.center_lat <= 90.0 and -180.0 <= self.center_lon <= 180.0):
            raise ValueError("damage centre is outside valid coordinates")
        if self.radius_km <= 0.0:
            raise ValueError(f"radius_km must be positive, got {self.radius_km}")
        if not 0.0 < self.slope <= 1.0:
            raise ValueError(f"slope must be in (0, 1], got {self.slope}")
        if self.gamma_shape <= 0.0 or self.gamma_scale <= 0.0:
            raise ValueError("gamma shape and scale must be positive")


@dataclass(frozen=True)
class FailedLine:
    branch_id: int
    distance_km: float
    fail_time_s: float


@dataclass(frozen=True)
class FailureSet:
    """Failed branches ordered by onset time, ties broken by branch id."""

    failures: tuple[FailedLine, ...]

    def branch_ids(self) -> list[int]:
        return [f.branch_id for f in self.failures]

    def __len__(self) -> int:
        return len(self.failures)

    def __iter__(self):
        return iter(self.failures)


def failure_probability(distance_km: float, params: DamageParams) -> float:
    """Linear decay from `slope` at the centre to zero at the radius edge.

    The raw value slope * (radius - distance) / radius is clamped to [0, 1];
    anything at or beyond the radius is exactly zero.
    """
    if distance_km >= params.radius_km:
        return 0.0
    p = params.slope * (params.radius_km - distance_km) / params.radius_km
    return min(1.0, max(0.0, p))


def line_distance_km(branch: Branch, case: GridCase, params: DamageParams) -> float:
    """Closest approach of a branch to the damage centre, in km."""
    f = case.bus(branch.from_bus)
    t = case.bus(branch.to_bus)
    return point_segment_distance_km(
        params.center_lat, params.center_lon, f.lat, f.lon, t.lat, t.lon
    )


def sample_failures(case: GridCase, params: DamageParams) -> FailureSet:
    """Draw the failed-line set for one damage event.

    Each in-service branch consumes counter position 0 of its substream for
    the Bernoulli trial and position 1 for its onset time, so adding or
    removing branches never perturbs the draws of the others. A branch with
    zero failure probability never fails.
    """
    branches = case.in_service_branches()
    if not branches:
        return FailureSet(failures=())

    ids = np.array([br.id for br in branches], dtype=np.uint64)
    distances = np.array([line_distance_km(br, case, params) for br in branches])
    probs = np.array([failure_probability(d, params) for d in distances])
    u = uniforms(params.seed, ids, counter=0)
    failed = (u <= probs) & (probs > 0.0)

    failed_ids = ids[failed]
    if failed_ids.size == 0:
        return FailureSet(failures=())

    u_time = uniforms(params.seed, failed_ids, counter=1)
    times = stats.gamma.ppf(u_time, a=params.gamma_shape, scale=params.gamma_scale)

    records = [
        FailedLine(branch_id=int(bid), distance_km=float(d), fail_time_s=float(t))
        for bid, d, t in zip(failed_ids, distances[failed], times)
    ]
    records.sort(key=lambda fl: (fl.fail_time_s, fl.branch_id))
    return FailureSet(failures=tuple(records))
