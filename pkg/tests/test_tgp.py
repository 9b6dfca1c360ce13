import json
import math

import numpy as np
import pytest
from scipy import integrate

from tunnelgp import synth, tgp
from tunnelgp.preprocess.transforms import PoleConfig
from tunnelgp.svgp import InducingSet, VariationalDist

FAST = tgp.TunnelConfig(num_angles=4, num_levels=5, steps=800, batch_size=500)
FAST_POLE = PoleConfig(steps=600)


@pytest.fixture(scope="module")
def s1_model():
    P = synth.sample_structure(synth.StructureSpec("S1"), 6000, seed=3)
    model, cloud = tgp.build_tunnel(P, FAST, FAST_POLE)
    return model, cloud, P


def test_augment_diametral_example():
    Z = InducingSet(np.array([[0.5, -0.2], [2.0, 0.4]]))
    S = np.array([[1.0, 0.2], [0.2, 0.5]])
    q = VariationalDist(np.array([1.5, -0.3]), np.linalg.cholesky(S))
    Zd, md, Sd = tgp.augment_diametral(Z, q, parity=-1)
    np.testing.assert_allclose(Zd[2:, 0], [0.5 + math.pi - 2 * math.pi, 2.0 + math.pi - 2 * math.pi])
    np.testing.assert_allclose(Zd[2:, 1], [-0.2, 0.4])
    np.testing.assert_allclose(md, [1.5, -0.3, -1.5, 0.3])
    np.testing.assert_allclose(Sd[:2, 2:], -S)
    # [[1, p], [p, 1]] (x) S has eigenvalues {0, 2} x eig(S)
    want = np.sort(np.concatenate([np.zeros(2), 2 * np.linalg.eigvalsh(S)]))
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(Sd)), want, atol=1e-12)


def test_diametral_antisymmetry(s1_model):
    model = s1_model[0]
    th, l = np.meshgrid(np.linspace(-math.pi, math.pi, 36, endpoint=False), np.linspace(-1, 1, 11))
    m1, s1 = model.predict(th.ravel(), l.ravel())
    m2, s2 = model.predict(th.ravel() + math.pi, l.ravel())
    np.testing.assert_allclose(m2, -m1, atol=1e-6)
    np.testing.assert_allclose(s2, s1, atol=1e-6)


def test_s1_cross_section_spread(s1_model):
    model, _, _ = s1_model
    sc = model.scalers
    mu, sd = model.predict(np.array([0.0, math.pi / 2]), np.zeros(2))
    # structure-unit radial std along the axes at l = 0 (true value 2 on both)
    got = sd * np.array(sc.std)
    np.testing.assert_allclose(got, [2.0, 2.0], rtol=0.2)
    assert np.all(np.abs(mu) * np.array(sc.std) < 0.5)


def test_perfect_cylinder_has_constant_radius():
    # a full ring puts rho = +r and rho = -r on every canonical diameter,
    # so the odd mean vanishes and the spread carries the radius
    rng = np.random.default_rng(0)
    n = 3000
    t = rng.uniform(-math.pi, math.pi, n)
    l = rng.uniform(0, 10, n)
    # antipodal pairs: an exactly balanced ring
    t, l = np.concatenate([t, t + math.pi]), np.concatenate([l, l])
    P = np.column_stack([np.cos(t), np.sin(t), l])
    model, _ = tgp.build_tunnel(P, FAST, FAST_POLE)
    th = np.linspace(0, math.pi, 24, endpoint=False)
    mu, sd = model.predict(th, np.zeros_like(th))
    assert np.all(np.abs(mu) * model.scalers.std[0] < 0.025)
    surf = tgp.tunnel_surface(model, np.linspace(0, 2 * math.pi, 36, endpoint=False), [2.0, 5.0, 8.0], k_sigma=1.0)
    xp, yp = model.pole(model.scalers.scale_l(surf["l"]))
    c = model.scalers.inverse(np.column_stack([xp, yp, np.zeros_like(xp)]))
    radius = np.hypot(surf["x_outer"] - c[:, 0], surf["y_outer"] - c[:, 1])
    assert np.all(np.abs(radius - 1.0) < 0.05)


def test_s1_surface_diameter(s1_model):
    model = s1_model[0]
    surf = tgp.tunnel_surface(model, np.array([0.0]), np.array([0.0]), k_sigma=2.0)
    width = abs(surf["x_outer"][0] - surf["x_inner"][0])
    assert width == pytest.approx(8.0, rel=0.15)


def test_surface_layout(s1_model):
    model = s1_model[0]
    th = np.linspace(0, 2 * math.pi, 8, endpoint=False)
    lg = np.array([-1.0, 0.0, 1.0])
    surf = tgp.tunnel_surface(model, th, lg, k_sigma=2.0)
    assert surf["shape"] == (3, 8)
    np.testing.assert_allclose(surf["l"], np.repeat(lg, 8))
    np.testing.assert_allclose(surf["z_inner"], surf["l"], atol=1e-12)
    flat = tgp.tunnel_surface(model, th, lg, k_sigma=0.0)
    np.testing.assert_allclose(flat["x_inner"], flat["x_outer"])
    np.testing.assert_allclose(flat["y_inner"], flat["y_outer"])
    with pytest.raises(ValueError):
        tgp.tunnel_surface(model, th, lg, k_sigma=-1.0)


@pytest.mark.parametrize("mu,sd", [(0.0, 1.0), (2.0, 0.5), (-1.5, 2.0), (0.3, 0.05)])
def test_log_slice_mass_matches_quadrature(mu, sd):
    f = lambda r: math.exp(r * mu / sd**2 - r * r / (2 * sd**2)) * abs(r)
    lo, hi = mu - 12 * sd, mu + 12 * sd
    val = integrate.quad(f, lo, hi, points=[0.0] if lo < 0 < hi else None, limit=200)[0]
    assert tgp._log_slice_mass(np.array(mu), np.array(sd)) == pytest.approx(math.log(val), abs=1e-8)


@pytest.mark.parametrize("l", [-0.9, 0.1, 0.7])
def test_plane_density_integrates_to_one(s1_model, l):
    model = s1_model[0]
    step = 0.1
    d = tgp.plane_density(model, l, (-12.0, 16.0), (-12.0, 16.0), step)
    assert d.min() >= 0
    assert d.sum() * step**2 == pytest.approx(1.0, abs=0.02)


def test_symmetric_model_gives_symmetric_density(s1_model):
    import copy

    model = copy.deepcopy(s1_model[0])
    model.gp.variational.mean[:] = 0.0
    rng = np.random.default_rng(2)
    ls = float(model.scalers.scale_l(0.2))
    xp, yp = model.pole(np.array([ls]))
    c = model.scalers.inverse(np.array([[xp[0], yp[0], ls]]))[0]
    d = rng.normal(0, 3, (50, 2))
    a = tgp.pdf_at_plane(model, 0.2, c[0] + d[:, 0], c[1] + d[:, 1])
    b = tgp.pdf_at_plane(model, 0.2, c[0] - d[:, 0], c[1] - d[:, 1])
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_density_vanishes_far_out(s1_model):
    model = s1_model[0]
    ls = float(model.scalers.scale_l(0.0))
    th = np.linspace(0, math.pi, 12, endpoint=False)
    mu, sd = model.predict(th, np.full(12, ls))
    xp, yp = model.pole(np.full(12, ls))
    for sign in (1.0, -1.0):
        r = mu + sign * 7.0 * sd
        S = np.column_stack([r * np.cos(th) + xp, r * np.sin(th) + yp, np.full(12, ls)])
        P = model.scalers.inverse(S)
        assert np.all(tgp.pdf_at_plane(model, 0.0, P[:, 0], P[:, 1]) < 1e-8)


def test_polar_weighting_density_integrates(s1_model):
    model = s1_model[0]
    polar = tgp.TunnelModel(model.pole, model.gp, model.scalers, "polar", model.rho_floor)
    step = 0.1
    d = tgp.plane_density(polar, 0.0, (-12.0, 16.0), (-12.0, 16.0), step)
    assert d.sum() * step**2 == pytest.approx(1.0, abs=0.1)


def test_grid_axis_inclusive():
    np.testing.assert_allclose(tgp.grid_axis((-10, 10), 0.2)[[0, -1]], [-10, 10])
    assert len(tgp.grid_axis((-10, 15), 0.2)) == 126
    with pytest.raises(ValueError):
        tgp.plane_density(None, 0.0, (0, 1), (0, 1), 0.0)


def test_tunnel_model_round_trip(s1_model):
    model = s1_model[0]
    back = tgp.TunnelModel.from_dict(json.loads(json.dumps(model.to_dict())))
    th = np.linspace(0, 3, 7)
    for a, b in zip(model.predict(th, 0.3 * np.ones(7)), back.predict(th, 0.3 * np.ones(7))):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    d = model.to_dict()
    d["kind"] = "param_field"
    with pytest.raises(ValueError):
        tgp.TunnelModel.from_dict(d)
    d = model.to_dict()
    d["format_version"] = 7
    with pytest.raises(ValueError):
        tgp.TunnelModel.from_dict(d)


def test_fit_is_order_independent():
    P = synth.sample_structure(synth.StructureSpec("S3"), 1500, seed=5)
    cfg = tgp.TunnelConfig(num_angles=2, num_levels=3, steps=100, batch_size=300)
    pc = PoleConfig(steps=100)
    a, _ = tgp.build_tunnel(P, cfg, pc)
    b, _ = tgp.build_tunnel(P[::-1].copy(), cfg, pc)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


FIELD_FAST = tgp.FieldConfig(num_inducing=27, batch_size=500, steps=600)


def test_param_field_constant(s1_model):
    _, cloud, _ = s1_model
    fld = tgp.fit_param_field(cloud, np.full(len(cloud), 70.0), FIELD_FAST, "S_x")
    mu, sd = fld.predict(cloud.rho[:50], cloud.theta[:50], cloud.l[:50])
    np.testing.assert_allclose(mu, 70.0, atol=1e-6)


def test_param_field_ramp(s1_model):
    _, cloud, _ = s1_model
    rng = np.random.default_rng(1)
    vals = 3.5 + 0.5 * cloud.l + 0.05 * rng.standard_normal(len(cloud))
    fld = tgp.fit_param_field(cloud, vals, FIELD_FAST, "S_h")
    l = np.linspace(-0.8, 0.8, 9)
    mu, sd = fld.predict(np.full(9, 0.5), np.full(9, 1.0), l)
    np.testing.assert_allclose(mu, 3.5 + 0.5 * l, atol=0.05)
    assert np.all(sd < 0.2)
    back = tgp.ParamField.from_dict(json.loads(json.dumps(fld.to_dict())))
    np.testing.assert_allclose(back.predict(np.full(9, 0.5), np.full(9, 1.0), l)[0], mu, rtol=1e-12)


def test_param_field_is_single_valued_across_the_diameter(s1_model):
    _, cloud, _ = s1_model
    vals = np.where(cloud.full_circle()[:, 1] > 0, 1.0, -1.0)
    fld = tgp.fit_param_field(cloud, vals, FIELD_FAST)
    # a point and its diametral twin with flipped sign of rho are the same place
    a = fld.predict(np.array([0.8]), np.array([1.0]), np.array([0.0]))[0]
    b = fld.predict(np.array([-0.8]), np.array([1.0 + math.pi - math.pi]), np.array([0.0]))[0]
    assert a[0] > 0 > b[0]


def test_value_alignment_checked(s1_model):
    with pytest.raises(ValueError):
        tgp.fit_param_field(s1_model[1], np.zeros(3))


@pytest.fixture(scope="module")
def s1_large():
    P = synth.sample_structure(synth.StructureSpec("S1"), 20000, seed=3)
    return tgp.build_tunnel(P, tgp.TunnelConfig(steps=1500), FAST_POLE)[0]


def test_sample_covariance_matches_structure(s1_large):
    model = s1_large
    lg = np.array([-0.5, 0.0, 0.5])
    X = np.stack([t.points for t in tgp.sample_trajectories(model, n=500, l_grid=lg, seed=11)])
    spec = synth.StructureSpec("S1")
    for j, l in enumerate(lg):
        ev = np.sort(np.linalg.eigvalsh(np.cov(X[:, j, :2].T)))
        want = np.sort(np.array(spec.sigmas(l)) ** 2)
        np.testing.assert_allclose(ev, want, rtol=0.2)


def test_samples_stay_inside_truncated_tunnel(s1_model):
    from tunnelgp.preprocess.transforms import canonical_polar

    model = s1_model[0]
    lg = np.linspace(-1, 1, 5)
    for t in tgp.sample_trajectories(model, n=50, l_grid=lg, seed=2):
        S = model.scalers.transform(t.points)
        xp, yp = model.pole(S[:, 2])
        rho, th = canonical_polar(S[:, 0] - xp, S[:, 1] - yp)
        mu, sd = model.predict(th, S[:, 2])
        assert np.all(np.abs(rho - mu) <= 6.0 * sd + 1e-9)


def test_sampling(s1_model):
    model, cloud, P = s1_model
    assert tgp.sample_trajectories(model, n=0) == []
    with pytest.raises(ValueError):
        tgp.sample_trajectories(model, n=-1)
    lg = np.array([-0.5, 0.0, 0.5])
    a = tgp.sample_trajectories(model, n=300, l_grid=lg, seed=4)
    b = tgp.sample_trajectories(model, n=300, l_grid=lg, seed=4)
    assert len(a) == 300
    np.testing.assert_array_equal(a[7].points, b[7].points)
    X = np.stack([t.points for t in a])
    np.testing.assert_allclose(X[:, :, 2], np.broadcast_to(lg, (300, 3)), atol=1e-9)
    spec = synth.StructureSpec("S1")
    for j, l in enumerate(lg):
        xp, yp = spec.pole(l)
        sa, sb = spec.sigmas(l)
        assert X[:, j, 0].mean() == pytest.approx(float(xp), abs=0.5)
        assert X[:, j, 0].std() == pytest.approx(float(sa), rel=0.2)
        assert X[:, j, 1].std() == pytest.approx(float(sb), rel=0.2)


def test_config_validation():
    with pytest.raises(ValueError):
        tgp.TunnelConfig(weighting="cubic")
    with pytest.raises(ValueError):
        tgp.TunnelConfig(num_angles=0)
