"""WGS84 / ECEF conversions and the ILS reference frame."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def wgs84_to_ecef(lat, lon, alt):
    """Geodetic degrees/metres to ECEF metres."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    alt = np.asarray(alt, dtype=float)
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise ValueError("latitude must be within [-90, 90] and longitude within [-180, 180]")
    phi = np.radians(lat)
    lam = np.radians(lon)
    s = np.sin(phi)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * s * s)
    x = (n + alt) * np.cos(phi) * np.cos(lam)
    y = (n + alt) * np.cos(phi) * np.sin(lam)
    z = (n * (1.0 - WGS84_E2) + alt) * s
    return x, y, z


def ecef_to_wgs84(x, y, z, iterations=6):
    """ECEF metres to geodetic degrees/metres by fixed-point iteration on latitude."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    p = np.hypot(x, y)
    lon = np.arctan2(y, x)
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(iterations):
        s = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * s * s)
        alt = p * np.cos(lat) + z * s - WGS84_A * np.sqrt(1.0 - WGS84_E2 * s * s)
        lat = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + alt)))
    s = np.sin(lat)
    alt = p * np.cos(lat) + z * s - WGS84_A * np.sqrt(1.0 - WGS84_E2 * s * s)
    return np.degrees(lat), np.degrees(lon), alt


def enu_basis(lat, lon):
    """Rows: local east, north, up unit vectors in ECEF at a geodetic point."""
    phi, lam = math.radians(lat), math.radians(lon)
    sp, cp, sl, cl = math.sin(phi), math.cos(phi), math.sin(lam), math.cos(lam)
    east = np.array([-sl, cl, 0.0])
    north = np.array([-sp * cl, -sp * sl, cp])
    up = np.array([cp * cl, cp * sl, sp])
    return np.vstack([east, north, up])


def enu_to_ecef(e, n, u, lat0, lon0, alt0):
    origin = np.array(wgs84_to_ecef(lat0, lon0, alt0))
    B = enu_basis(lat0, lon0)
    enu = np.column_stack([np.atleast_1d(e), np.atleast_1d(n), np.atleast_1d(u)])
    xyz = origin + enu @ B
    return xyz[:, 0], xyz[:, 1], xyz[:, 2]


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float

    def ecef(self):
        return np.array(wgs84_to_ecef(self.lat, self.lon, self.alt), dtype=float)

    @classmethod
    def from_dict(cls, d, name="point"):
        try:
            return cls(float(d["lat"]), float(d["lon"]), float(d["alt"]))
        except KeyError as exc:
            raise ValueError(f"geometry field {name}.{exc.args[0]} is missing") from exc


@dataclass(frozen=True)
class IlsGeometry:
    faf: GeoPoint
    threshold: GeoPoint
    glide_slope_deg: float = 3.0
    track_deg: float = 0.0

    def __post_init__(self):
        if self.faf == self.threshold:
            raise ValueError("FAF and threshold must differ")
        if not 0 < self.glide_slope_deg < 10:
            raise ValueError("glide slope must lie in (0, 10) degrees")

    def to_dict(self):
        return {
            "faf": vars(self.faf),
            "threshold": vars(self.threshold),
            "glide_slope_deg": self.glide_slope_deg,
            "track_deg": self.track_deg,
        }

    @classmethod
    def from_dict(cls, d):
        for key in ("faf", "threshold"):
            if key not in d:
                raise ValueError(f"geometry field {key!r} is missing")
        return cls(
            GeoPoint.from_dict(d["faf"], "faf"),
            GeoPoint.from_dict(d["threshold"], "threshold"),
            float(d.get("glide_slope_deg", 3.0)),
            float(d.get("track_deg", 0.0)),
        )

    @classmethod
    def from_threshold(cls, threshold: GeoPoint, track_deg, distance_m, glide_slope_deg=3.0):
        """Place the FAF ``distance_m`` before the threshold on the glide path."""
        brg = math.radians(track_deg)
        e = -distance_m * math.sin(brg)
        n = -distance_m * math.cos(brg)
        u = distance_m * math.tan(math.radians(glide_slope_deg))
        x, y, z = enu_to_ecef(e, n, u, threshold.lat, threshold.lon, threshold.alt)
        lat, lon, alt = ecef_to_wgs84(x[0], y[0], z[0])
        return cls(GeoPoint(float(lat), float(lon), float(alt)), threshold, glide_slope_deg, track_deg)


@dataclass(frozen=True)
class IlsFrame:
    """Orthonormal frame at the FAF: ``a`` along the approach, ``c`` lateral, ``d`` glide-slope normal."""

    origin: np.ndarray
    a: np.ndarray
    c: np.ndarray
    d: np.ndarray
    down: np.ndarray


def build_ils_frame(geometry: IlsGeometry) -> IlsFrame:
    faf = geometry.faf.ecef()
    thr = geometry.threshold.ecef()
    a = thr - faf
    a = a / np.linalg.norm(a)
    # geodetic normal, pointing down
    b = -enu_basis(geometry.faf.lat, geometry.faf.lon)[2]
    c = np.cross(b, a)
    nc = np.linalg.norm(c)
    if nc < 1e-9:
        raise ValueError("degenerate ILS geometry: approach axis parallel to local vertical")
    c = c / nc
    d = np.cross(c, a)
    d = d / np.linalg.norm(d)
    return IlsFrame(faf, a, c, d, b)


def project_to_ils(ecef_points, frame: IlsFrame):
    """Rows of ``(x_lateral, x_glideslope, l)`` for ECEF points ``(n, 3)``."""
    rel = np.atleast_2d(np.asarray(ecef_points, dtype=float)) - frame.origin
    return np.column_stack([rel @ frame.c, rel @ frame.d, rel @ frame.a])


def ils_to_ecef(points, frame: IlsFrame):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return frame.origin + P[:, :1] * frame.c + P[:, 1:2] * frame.d + P[:, 2:3] * frame.a
