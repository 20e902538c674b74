import numpy as np
import pytest
from numpy.testing import assert_allclose

from bubbletier.ansatz import BubbleFamily, ContractViolation, Field
from bubbletier.analysis import (
    LinearizedOperator,
    ProjectedSolver,
    StarNormContext,
    _exp_quotient_static,
    bubble_moment_integral,
    critical_mu,
    derivmu_value,
    energy_J,
    equilibrate_mu,
    expansion_coefficients,
    jut_value,
    near_kernel,
    kernel_principal_angles,
    nonlinear_N,
    nonlinear_correction,
    residual_R,
    star_norm,
)
from bubbletier.geometry import SurfaceSpec, build_grid, chart_at
from bubbletier.hamiltonian import VortexConfig
from bubbletier.numutil import Cutoff, fit_loglog


@pytest.fixture(scope="module")
def fam256(saddle_config, torus_grid_256):
    return BubbleFamily(
        saddle_config, 0.02, grid=torus_grid_256, mu=(8.0, 8.0), offsets=(4e-4, 4e-4)
    )


def test_star_norm_basics(fam256):
    ctx = StarNormContext(fam256)
    zero = Field(fam256.grid, np.zeros(len(fam256.grid.nodes)))
    assert star_norm(ctx, zero) == 0.0
    wfield = Field(fam256.grid, ctx.weight)
    assert_allclose(star_norm(ctx, wfield), 1.0, rtol=1e-12)


def test_star_norm_single_bubble_closed_form(torus, torus_grid_256):
    # h = 1: sup attained far from the bubble, value (dj^2+r0^2)^{1+s/2}/dj^s
    cfg = VortexConfig(torus, 1, 0, 1.0, [np.array([0.5, 0.5])])
    fam = BubbleFamily(cfg, 0.2, grid=torus_grid_256, mu=(1.0, 1.0))
    ctx = StarNormContext(fam, sigma=0.25)
    ones = Field(fam.grid, np.ones(len(fam.grid.nodes)))
    dj = fam.delta_j[0]
    expected = (dj**2 + cfg.r0**2) ** (1 + 0.125) / dj**0.25
    assert_allclose(star_norm(ctx, ones), expected, rtol=1e-6)


def test_residual_mean_zero_and_structure(fam256):
    R, sn = residual_R(fam256)
    assert abs(R.integrate()) < 1e-10 * sn
    assert sn > 0
    # full-equation identity: Full(W+psi) = R + L psi + N(psi)
    fam = fam256
    grid = fam.grid
    W = fam.build_W()
    op = LinearizedOperator(fam, W)
    psi = Field(grid, 0.01 * np.sin(2 * np.pi * grid.nodes[:, 0]))
    psi = psi - psi.mean()
    d1, _ = _exp_quotient_static(fam.config, grid, W.values + psi.values, 1)
    d2, _ = _exp_quotient_static(fam.config, grid, W.values + psi.values, 2)
    area = fam.config.surface.area
    full = (
        fam.W_laplacian().values
        + grid.laplacian(psi.values)
        + fam.lam1 * (d1 - 1 / area)
        - fam.lam2 * fam.config.tau * (d2 - 1 / area)
    )
    pred = R.values + op.apply(psi.values) + nonlinear_N(fam, W, psi, op).values
    assert np.max(np.abs(full - pred)) < 1e-9 * np.max(np.abs(full))


def test_energy_trivial_values(torus, sphere, torus_grid_256, sphere_grid_48):
    cfgT = VortexConfig(torus, 1, 1, 1.0, [np.array([0.2, 0.2]), np.array([0.7, 0.7])])
    u0 = Field(torus_grid_256, np.zeros(len(torus_grid_256.nodes)))
    assert_allclose(energy_J(u0, 3.0, 5.0, cfgT), 0.0, atol=1e-12)
    cfgS = VortexConfig(
        sphere, 1, 1, 1.0, [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    )
    u0s = Field(sphere_grid_48, np.zeros(len(sphere_grid_48.nodes)))
    assert_allclose(
        energy_J(u0s, 2.0, 3.0, cfgS), -(2.0 + 3.0) * np.log(4 * np.pi), rtol=1e-12
    )
    with pytest.raises(ContractViolation):
        energy_J(Field(torus_grid_256, np.ones(len(torus_grid_256.nodes))), 1, 1, cfgT)


def test_energy_second_variation_oracle(torus, torus_grid_256):
    # J(eps phi1) matches its quadratic Taylor value to O(eps^3)
    cfg = VortexConfig(torus, 1, 1, 1.0, [np.array([0.2, 0.2]), np.array([0.7, 0.7])])
    g = torus_grid_256
    phi1 = np.cos(2 * np.pi * g.nodes[:, 0])
    lam1, lam2 = 2.0, 3.0
    tau = cfg.tau

    def J(eps):
        return energy_J(Field(g, eps * phi1), lam1, lam2, cfg)

    # J(eps phi1) = A eps^2 + O(eps^4); A = pi^2 - (lam1 + lam2 tau^2)/4
    A = np.pi**2 - (lam1 + lam2 * tau**2) / 4.0
    for eps in (0.02, 0.01):
        assert abs(J(eps) - A * eps**2) < 5.0 * eps**3


def test_linearized_symmetry(fam256):
    op = LinearizedOperator(fam256, fam256.build_W())
    rng = np.random.default_rng(3)
    w = fam256.grid.weights
    a = rng.normal(size=len(w))
    a -= a.mean()
    b = rng.normal(size=len(w))
    b -= b.mean()
    s1 = np.sum(w * op.apply(a) * b)
    s2 = np.sum(w * a * op.apply(b))
    assert abs(s1 - s2) < 1e-10 * max(abs(s1), 1.0)


def test_projected_solve(fam256):
    solver = ProjectedSolver(fam256)
    n = len(fam256.grid.nodes)
    phi0, c0, _ = solver.solve(np.zeros(n))
    assert phi0.sup() == 0.0 and np.all(c0 == 0.0)
    rng = np.random.default_rng(5)
    h = rng.normal(size=n)
    h -= h.mean()
    phi, c, info = solver.solve(h)
    # equation and constraints hold
    eq = solver.op.apply(phi.values) - solver.B @ c - h
    assert np.max(np.abs(eq)) < 1e-7 * np.max(np.abs(h))
    cons = solver.B.T @ (fam256.grid.weights * phi.values)
    norms = np.sqrt(np.sum(fam256.grid.weights[:, None] * solver.B**2, axis=0))
    assert np.max(np.abs(cons) / norms) < 1e-8 * np.sqrt(np.sum(phi.values**2 * fam256.grid.weights))
    with pytest.raises(ContractViolation):
        solver.solve(np.ones(n))


def test_projected_solve_log_growth(saddle_config, torus_grid_256, torus_grid_512):
    # ||phi||_inf / ||h||_* grows at most like |log delta| for fixed smooth h
    ratios = []
    for d, grid in ((0.02, torus_grid_256), (0.01, torus_grid_512), (0.005, torus_grid_512)):
        mu = 8.0 if d > 0.007 else 12.0
        fam = BubbleFamily(saddle_config, d, grid=grid, mu=(mu, mu))
        h = np.cos(2 * np.pi * grid.nodes[:, 0]) + np.sin(2 * np.pi * grid.nodes[:, 1])
        h -= h.mean()
        solver = ProjectedSolver(fam)
        phi, _, _ = solver.solve(h)
        ctx = StarNormContext(fam)
        ratios.append(phi.sup() / ctx.norm(Field(grid, h)))
    logs = [abs(np.log(d)) for d in (0.02, 0.01, 0.005)]
    # growth no faster than c |log delta|
    assert ratios[2] / ratios[0] < 1.5 * logs[2] / logs[0]


def test_near_kernel_small(saddle_config, torus_grid_256):
    fam = BubbleFamily(
        saddle_config, 0.01, grid=torus_grid_256, mu=(16.0, 16.0), offsets=(1e-4, 1e-4), C0=20
    )
    vals, fields, resid = near_kernel(fam, count=8)
    assert max(resid) < 1e-10
    assert abs(vals[5]) <= 0.1 * abs(vals[6])
    ang = kernel_principal_angles(fam, fields[:6])
    assert np.degrees(np.max(ang)) < 15.0


def test_nonlinear_correction_small_case(fam256):
    res = nonlinear_correction(fam256)
    assert res.converged
    assert res.phi.sup() < 0.1
    # N(phi) quadratic smallness along the iterate
    W = fam256.build_W()
    op = LinearizedOperator(fam256, W)
    ctx = StarNormContext(fam256)
    nphi = nonlinear_N(fam256, W, res.phi, op)
    assert ctx.norm(nphi) < 50.0 * res.phi.sup() ** 2
    # E vs J(W) consistency: |E - J(W)| <= c(||R||_* ||phi|| + ||phi||^3)
    jw = energy_J(W, fam256.lam1, fam256.lam2, fam256.config, fam256.grid)
    bound = res.star_R * res.phi.sup() + res.phi.sup() ** 3
    assert abs(res.energy - jw) < 50.0 * bound


def test_jut_and_derivmu_forms(saddle_config):
    coeff = expansion_coefficients(saddle_config, grid_n=128)
    terms = jut_value(saddle_config, 0.01, (1.0, 1.0), (0.0, 0.0), coeff)
    # m1 = m2 = 1, tau = 1, offsets 0: constant block -16 pi - 16 pi log pi
    assert_allclose(terms["const"], -16 * np.pi - 16 * np.pi * np.log(np.pi), rtol=1e-12)
    assert terms["logdelta"] == 0.0
    d = derivmu_value(saddle_config, 0.01, (1.0, 1.0), (0.0, 0.0), coeff, 1)
    expected = (coeff.A1 * (1 + 0.0) - 2 * coeff.B1) * 1e-4 + 2 * coeff.A1 * 1e-4 * np.log(0.01)
    assert_allclose(d, expected, rtol=1e-12)


def test_critical_mu(saddle_config):
    coeff = expansion_coefficients(saddle_config, grid_n=128)
    mu = critical_mu(coeff, 0.01, (+1, +1), (1, 1))
    # A* = 0 here, so mu* = 1/sqrt(|B*|)
    assert_allclose(mu[0], 1 / np.sqrt(abs(coeff.B1)), rtol=1e-3)


def test_equilibrate_mu_drives_multipliers(min_config, torus_grid_512):
    eps = 5e-3
    delta = float(np.sqrt(eps))
    mu, res = equilibrate_mu(
        min_config, delta, torus_grid_512, (-eps, -eps), (0.8, 0.8)
    )
    assert res.multiplier_max() < 1e-9


def test_bubble_moment_identity_lemma(torus):
    # fitted delta^2 log delta coefficient equals -4 pi Delta_g f(xi)
    xi = np.array([0.25, 0.25])
    ch = chart_at(torus, xi, 0.15)
    chi = Cutoff(0.15)

    def f(x):
        x = np.atleast_2d(x)
        return 1 + 0.5 * np.sin(2 * np.pi * x[..., 0])

    lapf = -2 * np.pi**2  # at xi
    deltas = np.array([0.01, 0.00707, 0.005, 0.00354, 0.0025, 0.00177, 0.00125])
    vals = np.array(
        [bubble_moment_integral(ch, chi, d, lambda y: f(ch.from_chart(y))) for d in deltas]
    )
    resid = vals - 8 * np.pi * 1.5
    X = np.stack([deltas**2 * np.log(deltas), deltas**2, deltas**4 * np.log(deltas)], axis=1)
    coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
    assert abs(coef[0] - (-4 * np.pi * lapf)) < 0.02 * abs(4 * np.pi * lapf)
    # the (delta^2+|y|^2)^{-1} weighted identity: 4 pi f/d^2 + pi lap f
    vals2 = np.array(
        [
            bubble_moment_integral(ch, chi, d, lambda y: f(ch.from_chart(y)), kind="inv")
            for d in deltas
        ]
    )
    resid2 = vals2 - 4 * np.pi * 1.5 / deltas**2
    X2 = np.stack([np.ones_like(deltas), deltas**2 * np.log(deltas)], axis=1)
    coef2, *_ = np.linalg.lstsq(X2, resid2, rcond=None)
    assert abs(coef2[0] - np.pi * lapf) < 0.02 * abs(np.pi * lapf)


def test_la2v2_term_uniform_bound(torus, torus_grid_512):
    # m2 = 0 scalings: lam2 tau V2 e^{-tau W}/int V2 e^{-tau W} is uniformly
    # O(delta^2 |log delta|) on the ansatz itself
    cfg = VortexConfig(torus, 1, 0, 1.0, [np.array([0.5, 0.5])])
    sups, lad = [], [0.3, 0.21, 0.15]
    for d in lad:
        lam2tau2 = 0.5 * d * d * abs(np.log(d))
        fam = BubbleFamily(
            cfg, d, grid=torus_grid_512, mu=(0.75, 1.0), offsets=(d * d, lam2tau2)
        )
        W = fam.build_W()
        dens, _ = _exp_quotient_static(cfg, fam.grid, W.values, 2)
        sups.append(fam.lam2 * cfg.tau * np.max(dens))
    scale = [d * d * abs(np.log(d)) for d in lad]
    slope, _, _ = fit_loglog(scale, sups)
    assert 0.9 < slope < 1.1
