import numpy as np
import pytest
from numpy.testing import assert_allclose

from bubbletier.geometry import (
    ConfigurationError,
    SurfaceSpec,
    build_grid,
    chart_at,
    default_r0,
    integrate,
)


def test_surface_invariants(torus, sphere):
    assert_allclose(torus.area, 1.0)
    assert_allclose(sphere.area, 4 * np.pi)
    assert torus.curvature(None) == 0.0
    assert sphere.curvature(None) == 1.0
    with pytest.raises(ConfigurationError):
        SurfaceSpec("torus", np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(ConfigurationError):
        SurfaceSpec("klein")


def test_grid_weights_and_counts(torus, sphere):
    g = build_grid(torus, 64)
    assert g.nodes.shape == (4096, 2)
    assert_allclose(g.weights, 1.0 / 4096)
    gs = build_grid(sphere, 32)
    assert_allclose(np.sum(gs.weights), 4 * np.pi, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        build_grid(torus, 4)


def test_sphere_harmonic_orthonormality(sphere):
    # first-degree zonal harmonic integrates to 1 under unit normalization
    gs = build_grid(sphere, 32)
    y10 = np.sqrt(3 / (4 * np.pi)) * gs.nodes[:, 2]
    assert_allclose(integrate(gs, y10**2), 1.0, atol=1e-8)


def test_transform_roundtrip(torus, sphere):
    rng = np.random.default_rng(0)
    for surf, res in ((torus, 32), (sphere, 24)):
        g = build_grid(surf, res)
        v = g.from_coeff(g.to_coeff(rng.normal(size=len(g.nodes))))
        v2 = g.from_coeff(g.to_coeff(v))
        assert np.max(np.abs(v - v2)) < 1e-10


def test_laplacian_eigenfunctions(torus, sphere):
    g = build_grid(torus, 64)
    f = np.cos(2 * np.pi * g.nodes[:, 0]) * np.sin(4 * np.pi * g.nodes[:, 1])
    assert_allclose(g.laplacian(f), -(4 + 16) * np.pi**2 * f, atol=1e-9)
    gs = build_grid(sphere, 24)
    y = gs.nodes[:, 0] * gs.nodes[:, 1]  # degree-2 harmonic
    assert_allclose(gs.laplacian(y), -6 * y, atol=1e-10)


def test_integrate_constants_and_errors(torus, sphere):
    g = build_grid(torus, 16)
    assert_allclose(integrate(g, np.ones(len(g.nodes))), 1.0)
    gs = build_grid(sphere, 16)
    assert_allclose(integrate(gs, lambda x: np.ones(len(x))), 4 * np.pi, rtol=1e-12)
    from bubbletier.geometry import NumericError

    bad = np.ones(len(g.nodes))
    bad[7] = np.nan
    with pytest.raises(NumericError):
        integrate(g, bad)


def test_quadrature_spectral_convergence(torus):
    # smooth non-band-limited field: error should drop fast with resolution
    def f(x):
        return np.exp(3 * np.sin(2 * np.pi * x[:, 0]) + 2 * np.cos(2 * np.pi * x[:, 1]))

    vals = {}
    for n in (32, 64, 128):
        g = build_grid(torus, n)
        vals[n] = integrate(g, f)
    e1 = abs(vals[32] - vals[64])
    e2 = abs(vals[64] - vals[128])
    assert e2 < max(e1 / 10.0, 5e-14 * abs(vals[128]))


def test_chart_invariants_torus(torus):
    xi = np.array([0.3, 0.8])
    ch = chart_at(torus, xi, 0.1)
    y = np.array([0.1, 0.0])
    assert_allclose(ch.phi_hat(y), 0.0)
    assert_allclose(ch.to_chart(ch.from_chart(y)), y, atol=1e-14)
    assert_allclose(ch.to_chart(xi), [0.0, 0.0], atol=1e-14)


def test_chart_invariants_sphere(sphere):
    xi = np.array([0.3, -0.5, 0.81])
    xi = xi / np.linalg.norm(xi)
    ch = chart_at(sphere, xi, 0.3)
    assert_allclose(ch.e_phi(np.zeros(2)), 1.0)
    # normalization grad phi_hat(0) = 0
    h = 1e-6
    for e in (np.array([h, 0]), np.array([0, h])):
        assert abs(ch.phi_hat(e) - ch.phi_hat(-e)) < 1e-12
    # curvature relation Delta phi_hat = -2 K e^phi at y=(1,0)
    y0 = np.array([1.0, 0.0])
    h = 1e-4
    stencil = [y0 + [h, 0], y0 - [h, 0], y0 + [0, h], y0 - [0, h]]
    lap = (sum(ch.phi_hat(np.array(s)) for s in stencil) - 4 * ch.phi_hat(y0)) / h**2
    assert abs(lap + 2.0 * ch.e_phi(y0)) < 1e-6
    # chart radius maps to geodesic distance |y| = 2 tan(d/2)
    x = ch.from_chart(y0)
    assert_allclose(sphere.distance(x, xi), 2 * np.arctan(0.5), rtol=1e-12)


def test_chart_metric_pullback_sphere(sphere):
    # finite-difference pullback of the round metric matches e^{phi_hat} I
    xi = np.array([0.0, 0.6, 0.8])
    ch = chart_at(sphere, xi, 0.4)
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(5):
        y = rng.uniform(-0.5, 0.5, size=2)
        jx = (ch.from_chart(y + [h, 0]) - ch.from_chart(y - [h, 0])) / (2 * h)
        jy = (ch.from_chart(y + [0, h]) - ch.from_chart(y - [0, h])) / (2 * h)
        gmat = np.array([[jx @ jx, jx @ jy], [jx @ jy, jy @ jy]])
        target = float(ch.e_phi(np.array(y))) * np.eye(2)
        assert np.max(np.abs(gmat - target)) / float(ch.e_phi(np.array(y))) < 1e-8


def test_chart_distance_expansion(sphere):
    # d_g(xi, y^-1(y)) = |y| (1 + c |y|^2 + ...) with c = -1/12 for 2tan(d/2)
    xi = np.array([0.0, 0.0, 1.0])
    ch = chart_at(sphere, xi, 0.4)
    rs = np.array([0.01, 0.02, 0.04])
    ds = np.array([sphere.distance(ch.from_chart(np.array([r, 0.0])), xi) for r in rs])
    coef = (ds / rs - 1.0) / rs**2
    assert_allclose(coef, -1.0 / 12.0, rtol=1e-3)


def test_default_r0(torus, sphere):
    pts = [np.array([0.1, 0.1]), np.array([0.6, 0.1])]
    assert_allclose(default_r0(torus, pts), 0.5 / 4)
    spts = [np.array([0, 0, 1.0]), np.array([0, 0, -1.0])]
    assert_allclose(default_r0(sphere, spts), np.pi / 4)


def test_torus_distance_wraps(torus):
    d = torus.distance(np.array([[0.95, 0.0]]), np.array([0.05, 0.0]))
    assert_allclose(d, 0.1, atol=1e-14)
