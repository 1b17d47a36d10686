"""Spherical-earth geometry helpers used for siting damage footprints."""

from __future__ import annotations

import math

EARTH_RADIUS_KM = 6371.0


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in km between two points given in degrees."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def point_segment_distance_km(
    lat: float,
    lon: float,
    lat_a: float,
    lon_a: float,
    lat_b: float,
    lon_b: float,
) -> float:
    """Minimum distance in km from a point to the segment joining two endpoints.

    The segment is projected onto a local equirectangular plane centred on the
    point, the nearest point of the projected segment is mapped back to
    latitude and longitude, and the result is measured with the haversine
    formula. For spans of a few hundred km the error is far below a km.
    """
    cos0 = math.cos(math.radians(lat))
    if abs(cos0) < 1e-12:
        # Degenerate only at the poles; fall back to endpoint distance.
        return min(haversine_km(lat, lon, lat_a, lon_a), haversine_km(lat, lon, lat_b, lon_b))

    ax = (lon_a - lon) * cos0
    ay = lat_a - lat
    bx = (lon_b - lon) * cos0
    by = lat_b - lat
    dx = bx - ax
    dy = by - ay
    seg2 = dx * dx + dy * dy
    if seg2 <= 0.0:
        t = 0.0
    else:
        # The point sits at the local origin, so the projection parameter of
        # the origin onto the segment is -(a . d) / |d|^2.
        t = -(ax * dx + ay * dy) / seg2
        t = min(1.0, max(0.0, t))
    foot_lat = lat + (ay + t * dy)
    foot_lon = lon + (ax + t * dx) / cos0
    return haversine_km(lat, lon, foot_lat, foot_lon)


def midpoint(lat1: float, lon1: float, lat2: float, lon2: float) -> tuple[float, float]:
    """Spherical midpoint of two points, returned as (lat, lon) in degrees."""
    v1 = _unit(lat1, lon1)
    v2 = _unit(lat2, lon2)
    mx = v1[0] + v2[0]
    my = v1[1] + v2[1]
    mz = v1[2] + v2[2]
    norm = math.sqrt(mx * mx + my * my + mz * mz)
    if norm < 1e-12:
        # Antipodal endpoints have no unique midpoint; pick the first point.
        return lat1, lon1
    mx, my, mz = mx / norm, my / norm, mz / norm
    lat = math.degrees(math.asin(max(-1.0, min(1.0, mz))))
    lon = math.degrees(math.atan2(my, mx))
    return lat, lon


def _unit(lat: float, lon: float) -> tuple[float, float, float]:
    phi = math.radians(lat)
    lam = math.radians(lon)
    return (
        math.cos(phi) * math.cos(lam),
        math.cos(phi) * math.sin(lam),
        math.sin(phi),
    )
