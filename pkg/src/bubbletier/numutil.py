"""Shared numerical helpers: cutoffs, panel quadrature, stencils, slope fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# polynomial smoothstep coefficients by order: S(0)=0, S(1)=1,
# first `order` derivatives vanish at both ends
_SMOOTHSTEP = {
    2: ([10.0, -15.0, 6.0], 3),
    3: ([35.0, -84.0, 70.0, -20.0], 4),
    4: ([126.0, -420.0, 540.0, -315.0, 70.0], 5),
}


def smoothstep(t, order=3):
    """Polynomial smoothstep of the given order, clamped to [0, 1]."""
    coeffs, p = _SMOOTHSTEP[order]
    t = np.clip(t, 0.0, 1.0)
    acc = np.zeros_like(t)
    for i, c in enumerate(coeffs):
        acc = acc + c * t ** (p + i)
    return acc


def smoothstep_d(t, order=3):
    """First derivative of :func:`smoothstep` (zero outside (0, 1))."""
    coeffs, p = _SMOOTHSTEP[order]
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.where(inside, t, 0.5)
    acc = np.zeros_like(tc)
    for i, c in enumerate(coeffs):
        acc = acc + (p + i) * c * tc ** (p + i - 1)
    return np.where(inside, acc, 0.0)


def smoothstep_dd(t, order=3):
    """Second derivative of :func:`smoothstep` (zero outside (0, 1))."""
    coeffs, p = _SMOOTHSTEP[order]
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.where(inside, t, 0.5)
    acc = np.zeros_like(tc)
    for i, c in enumerate(coeffs):
        acc = acc + (p + i) * (p + i - 1) * c * tc ** (p + i - 2)
    return np.where(inside, acc, 0.0)


@dataclass(frozen=True)
class Cutoff:
    """Radial bump: 1 on [0, r0], 0 beyond 2*r0, smoothstep in between.

    ``order`` selects the smoothstep polynomial (continuity class C^order).
    """

    r0: float
    order: int = 3

    def __call__(self, s):
        t = (np.asarray(s, dtype=float) - self.r0) / self.r0
        return 1.0 - smoothstep(t, self.order)

    def d(self, s):
        t = (np.asarray(s, dtype=float) - self.r0) / self.r0
        return -smoothstep_d(t, self.order) / self.r0

    def dd(self, s):
        t = (np.asarray(s, dtype=float) - self.r0) / self.r0
        return -smoothstep_dd(t, self.order) / self.r0 ** 2

    # ∫_{R^2} chi'(|y|) log|y| / |y| dy
    def grad_log_integral(self):
        s, w = gauss_panels(self.r0, 2.0 * self.r0, 8, 16)
        return 2.0 * np.pi * np.sum(w * self.d(s) * np.log(s))

    # ∫_{R^2} chi'(|y|) / |y|^3 dy
    def grad_cube_integral(self):
        s, w = gauss_panels(self.r0, 2.0 * self.r0, 8, 16)
        return 2.0 * np.pi * np.sum(w * self.d(s) / s ** 2)


def gauss_panels(a, b, n_panels, order=12, geometric=False):
    """Composite Gauss-Legendre nodes/weights on [a, b].

    With ``geometric=True`` the panel edges refine geometrically toward ``a``
    (needed for integrands with endpoint layers like 1/r powers).
    """
    if geometric:
        edges = a * (b / a) ** (np.arange(n_panels + 1) / n_panels)
    else:
        edges = np.linspace(a, b, n_panels + 1)
    x0, w0 = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(0.5 * (hi + lo) + half * x0)
        weights.append(half * w0)
    return np.concatenate(nodes), np.concatenate(weights)


def polar_grid(r_in, r_out, n_panels=24, order=12, n_ang=64, geometric=True):
    """Polar quadrature nodes in an annulus: returns (y, w) with y (M,2).

    Weights include the polar Jacobian, so ``sum(w * f(y))`` approximates the
    flat integral of f over the annulus.  Uniform angles (trapezoid) are
    spectrally accurate in the periodic direction.
    """
    s, ws = gauss_panels(r_in, r_out, n_panels, order, geometric=geometric)
    ang = 2.0 * np.pi * np.arange(n_ang) / n_ang
    wa = 2.0 * np.pi / n_ang
    ss, aa = np.meshgrid(s, ang, indexing="ij")
    y = np.stack([(ss * np.cos(aa)).ravel(), (ss * np.sin(aa)).ravel()], axis=-1)
    w = np.broadcast_to((ws * s * wa)[:, None], ss.shape).ravel()
    return y, w


def fit_loglog(x, y):
    """Least-squares slope of log|y| against log(x).

    Returns (slope, intercept, r_squared).  Non-positive y entries are
    clipped at 1e-300 so that a vanishing gap shows up as a huge slope
    rather than an exception.
    """
    x = np.asarray(x, dtype=float)
    y = np.maximum(np.abs(np.asarray(y, dtype=float)), 1e-300)
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=-1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return coef[0], coef[1], r2


def fd_gradient(f, h):
    """4th-order central gradient of f: R^2 -> R at the origin."""
    g = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        g[i] = (-f(2 * h * e) + 8 * f(h * e) - 8 * f(-h * e) + f(-2 * h * e)) / (12 * h)
    return g


def fd_hessian(f, h):
    """4th-order central Hessian of f: R^2 -> R at the origin."""
    H = np.zeros((2, 2))
    f0 = f(np.zeros(2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        H[i, i] = (
            -f(2 * h * e) + 16 * f(h * e) - 30 * f0 + 16 * f(-h * e) - f(-2 * h * e)
        ) / (12 * h ** 2)

    def cross(step):
        return (
            f(np.array([step, step]))
            + f(np.array([-step, -step]))
            - f(np.array([step, -step]))
            - f(np.array([-step, step]))
        ) / (4 * step ** 2)

    c = (4.0 * cross(h / 2) - cross(h)) / 3.0
    H[0, 1] = H[1, 0] = c
    return H


def fd_third(f, h):
    """2nd-order third-derivative tensor components (fxxx, fxxy, fxyy, fyyy).

    Only used to sharpen odd-order Taylor subtraction whose quadrature
    contribution cancels by parity, so modest accuracy suffices.
    """

    def d3_along(u):
        return (
            f(2 * h * u) - 2 * f(h * u) + 2 * f(-h * u) - f(-2 * h * u)
        ) / (2 * h ** 3)

    ex, ey = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    fxxx = d3_along(ex)
    fyyy = d3_along(ey)
    # d3 along diagonals gives the mixed terms
    u = (ex + ey) / np.sqrt(2)
    v = (ex - ey) / np.sqrt(2)
    duu = d3_along(u) * (2 ** 1.5)  # f_xxx+3f_xxy+3f_xyy+f_yyy
    dvv = d3_along(v) * (2 ** 1.5)  # f_xxx-3f_xxy+3f_xyy-f_yyy
    fxxy = (duu - dvv) / 6.0 - fyyy / 3.0
    fxyy = (duu + dvv) / 6.0 - fxxx / 3.0
    return fxxx, fxxy, fxyy, fyyy


def log_sum_exp_quad(weights, logvals):
    """log(sum_i w_i exp(g_i)) with max-subtraction, w_i > 0."""
    m = np.max(logvals)
    return m + np.log(np.sum(weights * np.exp(logvals - m)))
