import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tunnelgp import synth
from tunnelgp.preprocess import geodesy as G
from tunnelgp.preprocess import kalman as KF
from tunnelgp.preprocess import tracks as T
from tunnelgp.preprocess import transforms as X

# ---------------------------------------------------------------------------
# geodesy
# ---------------------------------------------------------------------------


def _bowring(x, y, z):
    # closed-form inverse, independent of the iterative one under test
    a, b, e2 = G.WGS84_A, G.WGS84_B, G.WGS84_E2
    ep2 = (a * a - b * b) / (b * b)
    p = np.hypot(x, y)
    th = np.arctan2(z * a, p * b)
    for _ in range(3):
        lat = np.arctan2(z + ep2 * b * np.sin(th) ** 3, p - e2 * a * np.cos(th) ** 3)
        th = np.arctan((b / a) * np.tan(lat))
    n = a / np.sqrt(1 - e2 * np.sin(lat) ** 2)
    alt = p / np.cos(lat) - n
    return np.degrees(lat), np.degrees(np.arctan2(y, x)), alt


def test_wgs84_constants():
    assert G.wgs84_to_ecef(0.0, 0.0, 0.0) == pytest.approx((6378137.0, 0.0, 0.0))
    x, y, z = G.wgs84_to_ecef(90.0, 30.0, 0.0)
    assert abs(x) < 1e-6 and abs(y) < 1e-6
    assert z == pytest.approx(6356752.314245, abs=1e-5)


@settings(max_examples=200)
@given(st.floats(-85, 85), st.floats(-180, 180), st.floats(-100, 12000))
def test_ecef_round_trip_against_independent_inverse(lat, lon, alt):
    x, y, z = G.wgs84_to_ecef(lat, lon, alt)
    la, lo, h = _bowring(x, y, z)
    xb, yb, zb = G.wgs84_to_ecef(la, lo, h)
    assert math.dist((x, y, z), (float(xb), float(yb), float(zb))) < 1e-6
    la2, lo2, h2 = G.ecef_to_wgs84(x, y, z)
    xc, yc, zc = G.wgs84_to_ecef(la2, lo2, h2)
    assert math.dist((x, y, z), (float(xc), float(yc), float(zc))) < 1e-6


def test_wgs84_rejects_out_of_range():
    with pytest.raises(ValueError):
        G.wgs84_to_ecef(91.0, 0.0, 0.0)


@pytest.fixture(scope="module")
def geometry():
    return T.changi_like_geometry()


def test_ils_frame_orthonormal(geometry):
    f = G.build_ils_frame(geometry)
    for u in (f.a, f.c, f.d):
        assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
    assert abs(f.a @ f.c) < 1e-9 and abs(f.a @ f.d) < 1e-9 and abs(f.c @ f.d) < 1e-9


def test_ils_frame_flip(geometry):
    f = G.build_ils_frame(geometry)
    g = G.build_ils_frame(G.IlsGeometry(geometry.threshold, geometry.faf))
    np.testing.assert_allclose(g.a, -f.a, atol=1e-6)
    # the lateral axis follows the approach direction
    assert g.c @ f.c < -0.99


def test_equator_east_runway():
    # about 1.1 km of runway heading east, FAF 58 m up (a 3 degree path)
    thr = G.GeoPoint(0.0, 0.01, 0.0)
    geom = G.IlsGeometry(G.GeoPoint(0.0, 0.0, 58.0), thr)
    f = G.build_ils_frame(geom)
    assert f.a[1] > 0.99
    # the glide-slope normal points up, against the local down vector
    assert f.d @ f.down < -0.99


def test_projection_fixtures(geometry):
    f = G.build_ils_frame(geometry)
    np.testing.assert_allclose(G.project_to_ils(f.origin, f), [[0, 0, 0]], atol=1e-6)
    thr = geometry.threshold.ecef()
    p = G.project_to_ils(thr, f)[0]
    assert abs(p[0]) < 1e-6 and abs(p[1]) < 1e-6
    assert p[2] == pytest.approx(np.linalg.norm(thr - f.origin), rel=1e-12)
    np.testing.assert_allclose(G.project_to_ils(f.origin + 100 * f.c, f), [[100, 0, 0]], atol=1e-6)
    pts = np.random.default_rng(0).normal(0, 1000, (20, 3))
    np.testing.assert_allclose(G.project_to_ils(G.ils_to_ecef(pts, f), f), pts, atol=1e-6)


def test_geometry_validation():
    p = G.GeoPoint(1.0, 2.0, 3.0)
    with pytest.raises(ValueError):
        G.IlsGeometry(p, p)
    with pytest.raises(ValueError):
        G.IlsGeometry.from_dict({"faf": {"lat": 1, "lon": 2, "alt": 3}})
    with pytest.raises(ValueError, match="threshold.lon"):
        G.IlsGeometry.from_dict({"faf": {"lat": 1, "lon": 2, "alt": 3}, "threshold": {"lat": 1, "alt": 0}})


def test_from_threshold_places_faf_on_slope(geometry):
    thr = geometry.threshold
    B = G.enu_basis(thr.lat, thr.lon)
    e, n, u = B @ (geometry.faf.ecef() - thr.ecef())
    assert math.hypot(e, n) == pytest.approx(11000.0, rel=1e-9)
    assert u == pytest.approx(11000 * math.tan(math.radians(3)), rel=1e-9)
    # FAF lies behind the threshold along the runway track
    assert math.degrees(math.atan2(-e, -n)) == pytest.approx(23.0, abs=1e-6)


# ---------------------------------------------------------------------------
# Kalman smoother and EM
# ---------------------------------------------------------------------------


def _batch_posterior(y, p):
    """Condition the joint Gaussian of (x_1..T, y_1..T) directly."""
    T_, n = len(y), len(p.mu0)
    mu = [p.mu0]
    V = {(0, 0): p.Sigma0}
    for t in range(T_ - 1):
        mu.append(p.A[t] @ mu[t] + p.b)
        for s in range(t + 1):
            V[(t + 1, s)] = p.A[t] @ V[(t, s)]
            V[(s, t + 1)] = V[(t + 1, s)].T
        V[(t + 1, t + 1)] = p.A[t] @ V[(t, t)] @ p.A[t].T + p.Q
    Sx = np.block([[V[(i, j)] for j in range(T_)] for i in range(T_)])
    mx = np.concatenate(mu)
    C = np.kron(np.eye(T_), p.C)
    my = C @ mx + np.tile(p.d, T_)
    Sy = C @ Sx @ C.T + np.kron(np.eye(T_), p.R)
    yv = np.asarray(y, float).ravel()
    r = yv - my
    sign, logdet = np.linalg.slogdet(2 * np.pi * Sy)
    ll = -0.5 * (r @ np.linalg.solve(Sy, r) + logdet)
    post = mx + Sx @ C.T @ np.linalg.solve(Sy, r)
    return post.reshape(T_, n), ll


def test_smoother_matches_batch_conditioning():
    rng = np.random.default_rng(3)
    times = np.cumsum(rng.uniform(0.5, 1.5, 15))
    y = 2.0 * times + rng.normal(0, 0.4, 15)
    p = KF.default_params(times, y)
    p.Q = np.array([[0.05, 0.01], [0.01, 0.02]])
    p.R = np.array([[0.2]])
    sm = KF.smooth(y, p)
    means, ll = _batch_posterior(y, p)
    np.testing.assert_allclose(sm.means, means, rtol=1e-8, atol=1e-8)
    assert sm.loglik == pytest.approx(ll, rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_em_loglik_non_decreasing(seed, noise):
    rng = np.random.default_rng(seed)
    t = np.arange(60.0)
    y = 0.5 * t + np.cumsum(rng.normal(0, 0.05, 60)) + rng.normal(0, noise, 60)
    _, _, trace = KF.kalman_em(y, t, n_iterations=15)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]).max())


def test_noiseless_velocity_recovered():
    t = np.arange(100.0)
    v = KF.smoothed_velocity(t, 3.0 + 1.7 * t, 20)
    np.testing.assert_allclose(v, 1.7, rtol=0.01)


def test_observation_noise_estimate():
    rng = np.random.default_rng(4)
    t = np.arange(400.0)
    params, _, _ = KF.kalman_em(t + rng.normal(0, 0.5, 400), t, 30)
    assert 0.125 <= params.R[0, 0] <= 0.5


def test_em_needs_enough_samples():
    with pytest.raises(ValueError):
        KF.kalman_em(np.arange(5.0))


def test_step_change_transitions_monotonically():
    rng = np.random.default_rng(5)
    t = np.arange(200.0)
    rate = np.where(t < 100, 3.0, 5.0)
    alt = 1000.0 - np.concatenate([[0.0], np.cumsum(rate[:-1])]) + rng.normal(0, 0.3, 200)
    v = -KF.smoothed_velocity(t, alt, 20)
    assert np.median(v[20:80]) == pytest.approx(3.0, abs=0.15)
    assert np.median(v[120:180]) == pytest.approx(5.0, abs=0.15)
    # between the plateaus the estimate climbs; allow wiggles at the noise level
    seg = v[80:120]
    assert np.all(np.diff(seg) > -0.1)
    assert seg[-1] - seg[0] > 1.5


# ---------------------------------------------------------------------------
# simulated tracks and rate estimation
# ---------------------------------------------------------------------------


def test_descent_rate_on_constant_speed_descents(geometry):
    tracks = T.simulate_tracks(geometry, n_tracks=3, seed=1, constant_speed=70.0, dispersion=0.0)
    want = 70.0 * math.tan(math.radians(3.0))
    for tr in tracks:
        sh = T.estimate_descent_rate(tr)
        assert np.median(sh) == pytest.approx(want, rel=0.05)


def test_level_flight_has_no_descent(geometry):
    tr = T.simulate_tracks(geometry, n_tracks=1, seed=2, constant_speed=70.0, dispersion=0.0)[0]
    level = T.RawTrack(tr.times, tr.lat, tr.lon, np.full(len(tr), 600.0) + np.random.default_rng(0).normal(0, 1, len(tr)),
                       tr.ground_speed, tr.callsign, tr.wake)
    assert np.all(np.abs(T.estimate_descent_rate(level)) < 0.1)


def test_prepared_tracks_stay_in_window(geometry):
    tracks = T.simulate_tracks(geometry, n_tracks=2, seed=3)
    prepared = T.prepare_tracks(tracks, geometry)
    lo, hi = T.default_l_window(geometry)
    assert len(prepared) == 2
    for p in prepared:
        assert p.points[:, 2].min() >= lo and p.points[:, 2].max() <= hi
        assert set(p.channels) == {"S_x", "S_y", "S_h"}
        # approach speed along the axis is close to the ground speed
        assert 60 < np.median(p.channels["S_x"]) < 90
        assert np.all(np.abs(p.points[:, 0]) < 300)


def test_simulation_reproducible(geometry):
    a = T.simulate_tracks(geometry, n_tracks=2, seed=9)
    b = T.simulate_tracks(geometry, n_tracks=2, seed=9)
    np.testing.assert_array_equal(a[1].lat, b[1].lat)
    assert [t.wake for t in a] == [t.wake for t in b]


# ---------------------------------------------------------------------------
# track IO
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("ext", ["csv", "jsonl"])
def test_track_io_round_trip(tmp_path, geometry, ext):
    tracks = T.simulate_tracks(geometry, n_tracks=2, seed=4)
    path = tmp_path / f"tracks.{ext}"
    (T.write_tracks_csv if ext == "csv" else T.write_tracks_jsonl)(tracks, path)
    back = T.read_tracks(path)
    assert [t.callsign for t in back] == [t.callsign for t in tracks]
    # files carry 1e-9 degree and 0.1 mm precision
    for a, b in zip(tracks, back):
        np.testing.assert_allclose(a.lat, b.lat, rtol=0, atol=5e-10)
        np.testing.assert_allclose(a.lon, b.lon, rtol=0, atol=5e-10)
        np.testing.assert_allclose(a.alt, b.alt, rtol=0, atol=5e-5)
        np.testing.assert_array_equal(a.times, b.times)
        assert a.wake == b.wake


def test_csv_schema_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        "time_s,lat_deg,lon_deg,alt_m,gs_mps,callsign,wake\n"
        "0,1.3,103.9,500,70,A1,medium\n"
        "1,1.3,103.9,abc,70,A1,medium\n"
    )
    with pytest.raises(T.SchemaError) as err:
        T.read_tracks_csv(path)
    assert err.value.line == 3
    path.write_text("time_s,lat_deg\n0,1\n")
    with pytest.raises(T.SchemaError):
        T.read_tracks_csv(path)


def test_jsonl_bad_wake(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = {"time_s": 0, "lat_deg": 1.3, "lon_deg": 103.9, "alt_m": 500, "gs_mps": 70, "callsign": "A", "wake": "super"}
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(T.SchemaError) as err:
        T.read_tracks_jsonl(path)
    assert err.value.line == 1


def test_read_geometry_nested(tmp_path, geometry):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"geometry": geometry.to_dict()}))
    assert T.read_geometry(path) == geometry
    assert T.read_geometry(geometry.to_dict()) == geometry


# ---------------------------------------------------------------------------
# scalers, pole and the cylindrical transform
# ---------------------------------------------------------------------------


def test_canonical_polar_examples():
    rho, th = X.canonical_polar(np.array([0.0, 1.0, -1.0, 0.0, 0.0]), np.array([0.0, 0.0, 0.0, 2.0, -2.0]))
    np.testing.assert_allclose(rho, [0, 1, -1, 2, -2])
    np.testing.assert_allclose(th, [0, 0, 0, math.pi / 2, math.pi / 2])


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_canonical_polar_inverts(dx, dy):
    rho, th = X.canonical_polar(dx, dy)
    assert 0.0 <= th < math.pi
    assert rho * math.cos(th) == pytest.approx(dx, abs=1e-9)
    assert rho * math.sin(th) == pytest.approx(dy, abs=1e-9)


def test_full_circle_coordinates():
    q = X.full_circle(np.array([-2.0, 2.0]), np.array([0.5, 0.5]), np.array([0.1, 0.1]))
    np.testing.assert_allclose(q[:, 0], [2.0, 2.0])
    np.testing.assert_allclose(q[:, 1], [0.5 - math.pi, 0.5])


def test_scalers():
    P = synth.sample_structure(synth.StructureSpec("S1"), 1000, seed=0)
    s = X.Scalers.fit(P)
    S = s.transform(P)
    np.testing.assert_allclose(S[:, :2].mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(S[:, :2].std(0), 1, atol=1e-12)
    assert S[:, 2].min() == pytest.approx(-1) and S[:, 2].max() == pytest.approx(1)
    np.testing.assert_allclose(s.inverse(S), P, atol=1e-12)
    assert X.Scalers.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    with pytest.raises(ValueError):
        X.Scalers((0, 0), (1, 1), 1.0, 1.0)


@pytest.fixture(scope="module")
def s1_pole():
    P = synth.sample_structure(synth.StructureSpec("S1"), 20000, seed=2)
    s = X.Scalers.fit(P)
    return P, s, X.fit_pole(s.transform(P))


def test_pole_recovers_s1_curve(s1_pole):
    P, s, pole = s1_pole
    l = np.linspace(-1, 1, 41)
    xp, yp = pole(s.scale_l(l))
    truth = (2 * l**2 - np.array(s.mean)[:, None]) / np.array(s.std)[:, None]
    rmse = np.sqrt(np.mean((np.vstack([xp, yp]) - truth) ** 2))
    assert rmse <= 0.1


def test_pole_of_centred_structure_is_origin():
    P = synth.sample_structure(synth.StructureSpec("S3"), 10000, seed=2)
    s = X.Scalers.fit(P)
    xp, yp = X.fit_pole(s.transform(P), X.PoleConfig(steps=600))(np.linspace(-1, 1, 21))
    assert np.all(np.hypot(xp, yp) <= 0.1)


def test_pole_of_symmetric_cloud_lies_on_axis():
    # mirror every point about the line y = 0
    P = synth.sample_structure(synth.StructureSpec("S1"), 5000, seed=4)
    P = np.vstack([P, P * [1, -1, 1]])
    s = X.Scalers.fit(P)
    _, yp = X.fit_pole(s.transform(P), X.PoleConfig(steps=600))(np.linspace(-1, 1, 21))
    assert np.all(np.abs(yp) <= 0.05)


def test_cylindrical_round_trip(s1_pole):
    _, s, pole = s1_pole
    P = synth.sample_structure(synth.StructureSpec("S1"), 10000, seed=8)
    cloud = X.to_cylindrical(P, pole, s, source_ids=np.arange(len(P)))
    assert np.all((cloud.theta >= 0) & (cloud.theta < math.pi))
    np.testing.assert_allclose(X.from_cylindrical(cloud), P, atol=1e-9)


def test_cylindrical_fixtures(s1_pole):
    _, s, _ = s1_pole
    ls, xp, yp = 0.3, 0.25, -0.5

    def pole(l):
        return np.full(np.shape(l), xp), np.full(np.shape(l), yp)

    S = np.array([[xp, yp, ls], [xp + 1, yp, ls], [xp - 1, yp, ls]])
    c = X.to_cylindrical(S, pole, s, scaled=True)
    np.testing.assert_allclose(c.rho, [0, 1, -1], atol=1e-12)
    np.testing.assert_allclose(c.theta, [0, 0, 0], atol=1e-12)


def test_pole_round_trip(s1_pole):
    _, _, pole = s1_pole
    back = X.PoleModel.from_dict(json.loads(json.dumps(pole.to_dict())))
    l = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(back(l), pole(l), rtol=1e-12)
