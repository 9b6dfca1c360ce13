"""Raw surveillance tracks: file IO, a synthetic generator and the projection pipeline.

Track files carry one sample per row with columns
``time_s, lat_deg, lon_deg, alt_m, gs_mps, callsign, wake``.  Rows are
grouped into tracks by callsign in order of first appearance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ..trajectory import Trajectory
from .geodesy import GeoPoint, IlsGeometry, build_ils_frame, ecef_to_wgs84, enu_to_ecef, project_to_ils, wgs84_to_ecef
from .kalman import smoothed_velocity

TRACK_COLUMNS = ("time_s", "lat_deg", "lon_deg", "alt_m", "gs_mps", "callsign", "wake")
WAKE_CATEGORIES = ("medium", "heavy")


class SchemaError(ValueError):
    """A malformed input row; ``line`` is 1-based and counts the header."""

    def __init__(self, msg, line=None, source=None):
        where = f"{source or '<input>'}:{line}: " if line is not None else ""
        super().__init__(where + msg)
        self.line = line


@dataclass
class RawTrack:
    times: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    alt: np.ndarray
    ground_speed: np.ndarray
    callsign: str
    wake: str

    def __post_init__(self):
        for name in ("times", "lat", "lon", "alt", "ground_speed"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        n = len(self.times)
        if not all(len(getattr(self, k)) == n for k in ("lat", "lon", "alt", "ground_speed")):
            raise ValueError("track columns differ in length")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError(f"timestamps of {self.callsign!r} are not strictly increasing")
        if self.wake not in WAKE_CATEGORIES:
            raise ValueError(f"wake category must be one of {WAKE_CATEGORIES}, got {self.wake!r}")

    def __len__(self):
        return len(self.times)

    def ecef(self):
        return np.column_stack(wgs84_to_ecef(self.lat, self.lon, self.alt))


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def _parse_row(row, line, source):
    try:
        t = float(row["time_s"])
        lat = float(row["lat_deg"])
        lon = float(row["lon_deg"])
        alt = float(row["alt_m"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"non-numeric field ({exc})", line, source) from None
    gs_raw = row.get("gs_mps")
    try:
        gs = math.nan if gs_raw in (None, "") else float(gs_raw)
    except (TypeError, ValueError):
        raise SchemaError(f"non-numeric gs_mps {gs_raw!r}", line, source) from None
    if not all(math.isfinite(v) for v in (t, lat, lon, alt)):
        raise SchemaError("non-finite value", line, source)
    if abs(lat) > 90 or abs(lon) > 180:
        raise SchemaError("latitude/longitude out of range", line, source)
    callsign = str(row.get("callsign") or "").strip()
    if not callsign:
        raise SchemaError("empty callsign", line, source)
    wake = str(row.get("wake") or "").strip().lower()
    if wake not in WAKE_CATEGORIES:
        raise SchemaError(f"wake must be one of {WAKE_CATEGORIES}, got {row.get('wake')!r}", line, source)
    return t, lat, lon, alt, gs, callsign, wake


def _group(rows, source):
    groups = {}
    for line, (t, lat, lon, alt, gs, cs, wake) in rows:
        g = groups.setdefault(cs, {"wake": wake, "rows": []})
        if g["wake"] != wake:
            raise SchemaError(f"callsign {cs!r} changes wake category", line, source)
        if g["rows"] and t <= g["rows"][-1][0]:
            raise SchemaError(f"time of {cs!r} is not strictly increasing", line, source)
        g["rows"].append((t, lat, lon, alt, gs))
    tracks = []
    for cs, g in groups.items():
        a = np.array(g["rows"], dtype=float)
        tracks.append(RawTrack(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], cs, g["wake"]))
    return tracks


def read_tracks_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACK_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"missing column(s) {', '.join(missing)}", 1, str(path))
        rows = [(i, _parse_row(r, i, str(path))) for i, r in enumerate(reader, start=2)]
    return _group(rows, str(path))


def read_tracks_jsonl(path):
    rows = []
    with open(path) as fh:
        for i, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", i, str(path)) from None
            if not isinstance(obj, dict):
                raise SchemaError("expected an object per line", i, str(path))
            missing = [c for c in TRACK_COLUMNS if c not in obj and c != "gs_mps"]
            if missing:
                raise SchemaError(f"missing field(s) {', '.join(missing)}", i, str(path))
            rows.append((i, _parse_row(obj, i, str(path))))
    return _group(rows, str(path))


def read_tracks(path):
    p = str(path)
    return read_tracks_jsonl(p) if p.endswith((".jsonl", ".ndjson")) else read_tracks_csv(p)


def _records(tracks):
    for tr in tracks:
        for i in range(len(tr)):
            gs = tr.ground_speed[i]
            yield {
                "time_s": round(float(tr.times[i]), 6),
                "lat_deg": round(float(tr.lat[i]), 9),
                "lon_deg": round(float(tr.lon[i]), 9),
                "alt_m": round(float(tr.alt[i]), 4),
                "gs_mps": None if not math.isfinite(gs) else round(float(gs), 4),
                "callsign": tr.callsign,
                "wake": tr.wake,
            }


def write_tracks_csv(tracks, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACK_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in _records(tracks):
            rec["gs_mps"] = "" if rec["gs_mps"] is None else rec["gs_mps"]
            w.writerow(rec)


def write_tracks_jsonl(tracks, path):
    with open(path, "w") as fh:
        for rec in _records(tracks):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_geometry(source):
    """An :class:`IlsGeometry` from a dict, a JSON file, or a dict holding a ``geometry`` block."""
    if isinstance(source, dict):
        d = source
    else:
        with open(source) as fh:
            d = json.load(fh)
    if "geometry" in d and isinstance(d["geometry"], dict):
        d = d["geometry"]
    return IlsGeometry.from_dict(d)


def changi_like_geometry():
    """A runway at about 1.33 N 103.98 E, track 23 degrees, FAF 11 km out on a 3 degree slope."""
    thr = GeoPoint(1.3327, 103.9835, 7.0)
    return IlsGeometry.from_threshold(thr, 23.0, 11000.0, 3.0)


# ---------------------------------------------------------------------------
# simulated tracks
# ---------------------------------------------------------------------------

WAKE_PROFILE = {
    # (initial speed, final speed, lateral std, vertical std) in m/s and m
    "medium": (78.0, 68.0, 30.0, 10.0),
    "heavy": (85.0, 74.0, 20.0, 7.0),
}


def _ou(rng, n, dt, tau, std):
    """Stationary Ornstein-Uhlenbeck path of ``n`` steps."""
    a = math.exp(-dt / tau)
    out = np.empty(n)
    out[0] = rng.normal(0.0, std)
    e = rng.normal(0.0, std * math.sqrt(1 - a * a), n)
    for i in range(1, n):
        out[i] = a * out[i - 1] + e[i]
    return out


def simulate_tracks(
    geometry: IlsGeometry,
    n_tracks=20,
    seed=0,
    heavy_fraction=0.3,
    start_distance=None,
    end_distance=500.0,
    dt=1.0,
    position_noise=2.0,
    altitude_noise=1.0,
    constant_speed=None,
    dispersion=1.0,
):
    """Synthetic approach tracks following the glide path with random deviations.

    Ground distance to the threshold shrinks at the current ground speed.
    Speed falls linearly with distance between the wake-category end
    points (or stays at ``constant_speed``).  Lateral and vertical offsets
    are smooth random processes whose spread narrows towards the runway.
    Altitude is set geodetically as ``threshold + distance tan(slope)``, so a
    track without vertical offset descends at ``speed * tan(slope)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    thr = geometry.threshold
    faf_dist = _ground_distance(geometry)
    s0 = faf_dist + 2000.0 if start_distance is None else float(start_distance)
    brg = math.radians(geometry.track_deg)
    along = np.array([math.sin(brg), math.cos(brg)])
    right = np.array([math.cos(brg), -math.sin(brg)])
    slope = math.tan(math.radians(geometry.glide_slope_deg))
    tracks = []
    for k in range(n_tracks):
        wake = "heavy" if rng.uniform() < heavy_fraction else "medium"
        v0, v1, lat_sd, vert_sd = WAKE_PROFILE[wake]
        dv = rng.normal(0.0, 2.0)
        s = [s0]
        speeds = []
        while s[-1] > end_distance:
            v = constant_speed if constant_speed is not None else v1 + (v0 - v1) * min(s[-1] / s0, 1.0) + dv
            speeds.append(v)
            s.append(s[-1] - v * dt)
        s = np.array(s[:-1])
        speeds = np.array(speeds)
        n = len(s)
        shrink = 0.3 + 0.7 * s / s0
        lat_off = dispersion * shrink * _ou(rng, n, dt, 60.0, lat_sd)
        vert_off = dispersion * shrink * _ou(rng, n, dt, 60.0, vert_sd)
        en = -s[:, None] * along + lat_off[:, None] * right
        en = en + rng.normal(0.0, position_noise, en.shape)
        x, y, z = enu_to_ecef(en[:, 0], en[:, 1], np.zeros(n), thr.lat, thr.lon, thr.alt)
        lat, lon, _ = ecef_to_wgs84(x, y, z)
        alt = thr.alt + s * slope + vert_off + rng.normal(0.0, altitude_noise, n)
        times = dt * np.arange(n)
        tracks.append(RawTrack(times, lat, lon, alt, speeds, f"SIM{k:04d}", wake))
    return tracks


def _ground_distance(geometry):
    f = geometry.faf.ecef()
    t = geometry.threshold.ecef()
    return float(np.linalg.norm(f - t)) * math.cos(math.radians(geometry.glide_slope_deg))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def project_track(track: RawTrack, frame):
    """Rows ``(x_lateral, x_glideslope, l)`` for every sample."""
    return project_to_ils(track.ecef(), frame)


def estimate_descent_rate(track: RawTrack, n_iterations=20):
    """Smoothed descent rate in m/s, positive when descending."""
    return -smoothed_velocity(track.times, track.alt, n_iterations)


def default_l_window(geometry: IlsGeometry):
    """From the FAF (``l = 0``) to the threshold along the approach axis."""
    return 0.0, float(np.linalg.norm(geometry.threshold.ecef() - geometry.faf.ecef()))


def prepare_track(track: RawTrack, frame, l_window, n_iterations=20) -> Trajectory | None:
    """Project, estimate rates on the full track, then keep samples inside ``l_window``."""
    if len(track) < 10:
        return None
    P = project_track(track, frame)
    s_x = smoothed_velocity(track.times, P[:, 2], n_iterations)
    s_y = smoothed_velocity(track.times, P[:, 0], n_iterations)
    s_h = estimate_descent_rate(track, n_iterations)
    lo, hi = l_window
    keep = (P[:, 2] >= lo) & (P[:, 2] <= hi)
    if not keep.any():
        return None
    return Trajectory(
        P[keep],
        {"S_x": s_x[keep], "S_y": s_y[keep], "S_h": s_h[keep]},
        times=track.times[keep],
        ident=track.callsign,
        wake=track.wake,
    )


def prepare_tracks(tracks, geometry: IlsGeometry, l_window=None, n_iterations=20):
    frame = build_ils_frame(geometry)
    window = default_l_window(geometry) if l_window is None else l_window
    out = []
    for tr in tracks:
        t = prepare_track(tr, frame, window, n_iterations)
        if t is not None:
            out.append(t)
    return out
