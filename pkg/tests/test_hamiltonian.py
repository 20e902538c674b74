import numpy as np
import pytest
from numpy.testing import assert_allclose

from bubbletier.geometry import SurfaceSpec, chart_at
from bubbletier.green import green_eval, green_evaluator, theta1_product
from bubbletier.hamiltonian import (
    AdmissibilityError,
    A_star,
    B_star,
    ConstantPotential,
    GreenExpPotential,
    VortexConfig,
    admissibility_report,
    find_critical_points,
    grad_phi_star,
    grad_phi_star_norm,
    log_rho,
    phi_star,
    rho,
    rho_at_points,
)
from bubbletier.numutil import Cutoff


def test_rho_sphere_antipodal(antipodal_config):
    cfg = antipodal_config
    assert_allclose(rho(cfg, 0, cfg.xi[0]), 16.0, rtol=1e-12)
    assert_allclose(rho(cfg, 1, cfg.xi[1]), 16.0, rtol=1e-12)


def test_rho_positive_everywhere(saddle_config):
    rng = np.random.default_rng(0)
    pts = saddle_config.surface.random_points(50, rng)
    # avoid the log-singular centers themselves
    for j in (0, 1):
        vals = rho(saddle_config, j, pts)
        assert np.all(vals > 0)


def test_rho_dual_path_oracle(torus, saddle_config):
    """rho_1(xi_1) = exp(8 pi (H(xi1,xi1) - G(xi1,xi2))) via two independent
    theta evaluations: sine series vs triple product with a Richardson limit."""
    cfg = saddle_config
    ev = cfg.green
    val_a = float(rho(cfg, 0, cfg.xi[0]))
    # independent path: zero-mean constants cancel in H - G
    tau = ev.tau
    w12 = ev.reduce_w(np.atleast_2d(cfg.xi[0]), cfg.xi[1])[0]
    h = 1e-3
    t1p0 = (4 * abs(theta1_product(h / 2, tau)) / (h / 2) - abs(theta1_product(h, tau)) / h) / 3.0
    H_minus_c = -np.log(t1p0 / abs(ev.omega1)) / (2 * np.pi)
    G_minus_c = -np.log(abs(theta1_product(w12, tau))) / (2 * np.pi) + w12.imag**2 / (
        2 * tau.imag
    )
    val_b = np.exp(8 * np.pi * (H_minus_c - G_minus_c))
    assert abs(val_a - val_b) / val_a < 1e-10


def test_phi_star_sphere_value_and_maximality(antipodal_config, sphere):
    cfg = antipodal_config
    assert_allclose(phi_star(cfg), np.log(2) / np.pi, rtol=1e-12)
    # grid-search oracle: perturbed configurations never beat the antipodal pair
    rng = np.random.default_rng(3)
    best = phi_star(cfg)
    for _ in range(40):
        q1 = rng.normal(size=3)
        q1 /= np.linalg.norm(q1)
        q2 = rng.normal(size=3)
        q2 /= np.linalg.norm(q2)
        if sphere.distance(np.atleast_2d(q1), q2)[0] < 0.3:
            continue
        val = phi_star(VortexConfig(sphere, 1, 1, 1.0, [q1, q2]))
        assert val <= best + 1e-12
    assert grad_phi_star_norm(cfg) < 1e-8


def test_phi_star_torus_translation_structure(torus):
    # phi*(xi) + 2 G(xi1 - xi2, 0) is constant in xi
    ev = green_evaluator(torus)
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(5):
        base = rng.random(2)
        off = np.array([0.31, 0.17])
        cfg = VortexConfig(torus, 1, 1, 1.0, [base, torus.wrap(base + off)])
        g = green_eval(ev, off, np.zeros(2))
        vals.append(phi_star(cfg) + 2.0 * g)
    assert np.max(vals) - np.min(vals) < 1e-10


def test_grad_phi_star_fd(torus, sphere):
    rng = np.random.default_rng(7)
    cases = []
    for _ in range(20):
        base = rng.random(2)
        off = rng.uniform(0.35, 0.6, size=2) * np.array([1.0, 0.8])
        tau = rng.uniform(0.6, 1.6)
        cases.append(VortexConfig(torus, 1, 1, tau, [base, torus.wrap(base + off)]))
    n_sphere = 0
    while n_sphere < 20:
        pts = sphere.random_points(2, rng)
        if sphere.distance(np.atleast_2d(pts[0]), pts[1])[0] < 0.8:
            continue
        tau = rng.uniform(0.6, 1.6)
        cases.append(VortexConfig(sphere, 1, 1, tau, list(pts)))
        n_sphere += 1
    # one three-point mixed-block configuration exercises the cross terms
    p = sphere.random_points(1, rng)[0]
    q = np.cross(p, [0.0, 0.0, 1.0])
    q /= np.linalg.norm(q)
    cases.append(VortexConfig(sphere, 2, 1, 0.8, [p, -p, q]))
    h = 1e-5
    for cfg in cases:
        g = grad_phi_star(cfg)
        for j in range(cfg.m):
            ch = cfg.chart(j)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                pts_p = list(cfg.xi)
                pts_p[j] = ch.from_chart(e)
                pts_m = list(cfg.xi)
                pts_m[j] = ch.from_chart(-e)
                fd = (
                    phi_star(cfg.with_points(pts_p)) - phi_star(cfg.with_points(pts_m))
                ) / (2 * h)
                assert abs(fd - g[j, i]) < 1e-6 * max(1.0, abs(g[j, i]))


def test_A_star_torus_vanishes(saddle_config):
    a1, unc = A_star(saddle_config, 1)
    a2, _ = A_star(saddle_config, 2)
    assert abs(a1) < 1e-8
    assert abs(a2) < 1e-8


def test_A_star_sphere_value_and_consistency(antipodal_config):
    a_fd, unc = A_star(antipodal_config, 1)
    a_sc, _ = A_star(antipodal_config, 1, method="shortcut")
    assert_allclose(a_sc, -128 * np.pi, rtol=1e-12)
    assert_allclose(a_fd, -128 * np.pi, rtol=1e-6)
    assert abs(a_fd - a_sc) < 1e-4 * abs(a_sc)


def test_A_star_green_exponential_family(torus):
    # potentials V_k = exp(-4 pi n G(., p_k)); at a critical point the
    # Laplacian form must match the closed product formula
    V1 = GreenExpPotential(torus, [1.0], [np.array([0.0, 0.0])])
    V2 = GreenExpPotential(torus, [1.5], [np.array([0.5, 0.5])])
    tau = 1.0
    cfg0 = VortexConfig(
        torus, 1, 1, tau, [np.array([0.5, 0.0]), np.array([0.0, 0.5])], V1, V2
    )
    res = find_critical_points(cfg0, mode="saddle")
    cfg = res["config"]
    assert res["grad_norm"] < 1e-8
    area = torus.area
    for k, orders in ((1, [1.0]), (2, [1.5])):
        a_fd, _ = A_star(cfg, k)
        rk = float(rho(cfg, 0 if k == 1 else 1, cfg.xi[0 if k == 1 else 1]))
        closed = (
            4
            * np.pi
            * rk
            * (
                -(4 * np.pi / area) * sum(orders)
                + (8 * np.pi / area) * (1.0 - tau ** (2 * k - 3))
                - 0.0
            )
        )
        assert abs(a_fd - closed) < 1e-4 * abs(closed)


def test_B_star_signs_and_symmetry(saddle_config, min_config):
    b_saddle, _ = B_star(saddle_config, 1, grid_n=256)
    b_min, _ = B_star(min_config, 1, grid_n=256)
    assert b_saddle > 0
    assert b_min < 0
    b2, _ = B_star(saddle_config, 2, grid_n=256)
    assert abs(b_saddle - b2) < 1e-6 * abs(b_saddle)


def test_B_star_r_and_chi_independence(saddle_config):
    cfg = saddle_config
    vals = [B_star(cfg, 1, r=r, grid_n=256)[0] for r in (cfg.r0, cfg.r0 / 2, cfg.r0 / 4)]
    for v in vals[1:]:
        assert abs(v - vals[0]) < 1e-4 * (1.0 + abs(vals[0]))
    for order in (2, 4):
        v = B_star(cfg, 1, cutoff=Cutoff(cfg.r0, order), grid_n=256)[0]
        assert abs(v - vals[0]) < 1e-4 * (1.0 + abs(vals[0]))


def test_B_star_radius_validation(saddle_config):
    from bubbletier.hamiltonian import GeometryError

    with pytest.raises(GeometryError):
        B_star(saddle_config, 1, r=2 * saddle_config.r0)


def test_admissibility_sides(saddle_config, min_config, antipodal_config):
    rep_s = admissibility_report(saddle_config, grid_n=256)
    assert rep_s.side == ["right", "right"]
    rep_m = admissibility_report(min_config, grid_n=256)
    assert rep_m.side == ["left", "left"]
    rep_a = admissibility_report(antipodal_config, grid_n=96)
    assert rep_a.side == ["left", "left"]
    assert rep_a.B_star[0] is None  # A* decides, B* not needed
    assert abs(rep_s.B_star[0]) > 10 * rep_s.B_unc[0]


def test_config_validation(torus, sphere):
    with pytest.raises(AdmissibilityError):
        VortexConfig(torus, 1, 1, 1.0, [np.zeros(2), np.zeros(2)])
    with pytest.raises(AdmissibilityError):
        VortexConfig(torus, 1, 1, -1.0, [np.zeros(2), np.array([0.5, 0.5])])
    # potential vanishing at its own point
    V1 = GreenExpPotential(torus, [1.0], [np.array([0.1, 0.1])])
    with pytest.raises(AdmissibilityError):
        VortexConfig(torus, 1, 1, 1.0, [np.array([0.1, 0.1]), np.array([0.6, 0.6])], V1)


def test_find_critical_points_examples(torus, sphere):
    # sphere: random start converges to an antipodal maximum
    p1 = np.array([0.3, 0.2, 0.93])
    p1 /= np.linalg.norm(p1)
    p2 = np.array([-0.4, 0.5, -0.75])
    p2 /= np.linalg.norm(p2)
    res = find_critical_points(VortexConfig(sphere, 1, 1, 1.0, [p1, p2]), mode="maximize")
    assert res["grad_norm"] < 1e-8
    assert res["kind"] == "maximum"
    assert res["stable"]
    assert sphere.distance(np.atleast_2d(res["xi"][0]), -res["xi"][1])[0] < 1e-7
    # torus: Newton from near the (1/2, 0) saddle offset
    base = np.array([0.2, 0.3])
    cfg = VortexConfig(torus, 1, 1, 1.0, [base, base + np.array([0.46, 0.06])])
    res = find_critical_points(cfg, mode="saddle")
    off = torus.wrap(res["xi"][1] - res["xi"][0])
    assert np.linalg.norm(off - [0.5, 0.0]) < 1e-8
    assert res["grad_norm"] < 1e-8
