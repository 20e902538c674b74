"""Vortex Hamiltonian, interaction weights rho_j, admissibility constants.

The Hamiltonian phi*_m collects the potential logs, Robin masses and Green
interactions of a configuration of m = m1 + m2 concentration points with
intensity ratio tau.  The constants A*_k and B*_k decide from which side of
8 pi m_k the parameters may approach; B*_k is evaluated through the
r-independent identity obtained by second-order Taylor subtraction of the
singular density near each point (the raw limit definition subtracts two
divergent quantities and is numerically useless).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SurfaceSpec, chart_at, default_r0
from .green import GreenEvaluator, green_eval, green_evaluator, regular_part, robin
from .numutil import Cutoff, fd_gradient, fd_hessian, fd_third, polar_grid


class AdmissibilityError(ValueError):
    pass


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


class ConstantPotential:
    """V identically constant (default 1)."""

    def __init__(self, value: float = 1.0):
        if value <= 0:
            raise AdmissibilityError("constant potential must be positive")
        self.value = value

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] if x.ndim > 1 else ()
        return np.full(shape, self.value) if shape else self.value

    def log(self, x):
        v = self.__call__(x)
        return np.log(v)

    def grad_log(self, surface, x):
        return np.zeros(2)

    def lap_log(self, surface, x):
        return 0.0


class GreenExpPotential:
    """V(x) = exp(-4 pi sum_i n_i G(x, p_i)); vanishes exactly at the p_i."""

    def __init__(self, surface: SurfaceSpec, orders, points):
        self.surface = surface
        self.orders = [float(n) for n in orders]
        self.points = [np.asarray(p, dtype=float) for p in points]
        if any(n <= 0 for n in self.orders):
            raise AdmissibilityError("green-exponential orders must be positive")
        self._ev = green_evaluator(surface)

    def log(self, x):
        single = np.asarray(x, dtype=float).ndim == 1
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        acc = np.zeros(len(xs))
        for n, p in zip(self.orders, self.points):
            d = self.surface.distance(xs, p)
            ok = d > 1e-12
            g = np.full(len(xs), np.inf)
            if np.any(ok):
                g[ok] = green_eval(self._ev, xs[ok], p)
            acc = acc - 4.0 * np.pi * n * g
        return float(acc[0]) if single else acc

    def __call__(self, x):
        return np.exp(self.log(x))

    def grad_log(self, surface, x):
        g = np.zeros(2)
        for n, p in zip(self.orders, self.points):
            _, gr = green_eval(self._ev, x, p, grad=True)
            g = g - 4.0 * np.pi * n * gr
        return g

    def lap_log(self, surface, x):
        # Delta_g G = 1/|S| away from the pole
        return -4.0 * np.pi * sum(self.orders) / surface.area


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class VortexConfig:
    """Concentration points, split (m1, m2), intensity ratio and potentials."""

    surface: SurfaceSpec
    m1: int
    m2: int
    tau: float
    xi: list  # m surface points
    V1: object = None
    V2: object = None
    r0: float = None
    cutoff_order: int = 3
    _green: GreenEvaluator = field(default=None, repr=False)

    def __post_init__(self):
        if self.tau <= 0:
            raise AdmissibilityError("tau must be positive")
        self.xi = [np.asarray(p, dtype=float) for p in self.xi]
        if len(self.xi) != self.m1 + self.m2:
            raise AdmissibilityError("xi must hold m1 + m2 points")
        if self.surface.kind == "sphere":
            self.xi = [p / np.linalg.norm(p) for p in self.xi]
        if self.V1 is None:
            self.V1 = ConstantPotential()
        if self.V2 is None:
            self.V2 = ConstantPotential()
        if self.r0 is None:
            self.r0 = default_r0(self.surface, self.xi)
        if self.r0 <= 0:
            raise AdmissibilityError("degenerate configuration: r0 = 0")
        for i in range(len(self.xi)):
            for j in range(i + 1, len(self.xi)):
                d = self.surface.distance(self.xi[i], self.xi[j])
                if d < 1e-12:
                    raise AdmissibilityError(f"points {i},{j} coincide (diagonal set)")
                if d < 4.0 * self.r0 - 1e-12:
                    raise AdmissibilityError(
                        f"points {i},{j} closer than 4 r0 ({d:.4g} < {4 * self.r0:.4g})"
                    )
        for j in range(self.m):
            Vk = self.V1 if j < self.m1 else self.V2
            if Vk(self.xi[j]) <= 0:
                raise AdmissibilityError(f"potential vanishes at its own point {j}")
        self._green = green_evaluator(self.surface)

    @property
    def m(self):
        return self.m1 + self.m2

    @property
    def green(self):
        return self._green

    def potential(self, k: int):
        return self.V1 if k == 1 else self.V2

    def block(self, j: int) -> int:
        """1 for positive bubbles (j < m1), 2 for negative ones."""
        return 1 if j < self.m1 else 2

    def chart(self, j: int):
        return chart_at(self.surface, self.xi[j], self.r0)

    def cutoff(self):
        return Cutoff(self.r0, self.cutoff_order)

    def with_points(self, xi_new):
        return VortexConfig(
            self.surface, self.m1, self.m2, self.tau, list(xi_new),
            self.V1, self.V2, None, self.cutoff_order,
        )


def _grho_weights(config: VortexConfig, j: int):
    """Green-exponent weights (w_i)_{i != j} entering rho_j."""
    tau = config.tau
    out = np.empty(config.m)
    if j < config.m1:
        out[: config.m1] = 8.0 * np.pi
        out[config.m1:] = -8.0 * np.pi / tau
    else:
        out[: config.m1] = -8.0 * np.pi * tau
        out[config.m1:] = 8.0 * np.pi
    return out


def log_rho(config: VortexConfig, j: int, x):
    """log rho_j(x) per the interaction-weight definition (vectorized in x)."""
    ev = config.green
    k = config.block(j)
    V = config.potential(k)
    acc = V.log(x) + 8.0 * np.pi * regular_part(
        ev, x, config.xi[j], config.r0, config.cutoff()
    )
    w = _grho_weights(config, j)
    for i in range(config.m):
        if i == j:
            continue
        acc = acc + w[i] * green_eval(ev, x, config.xi[i])
    return acc


def rho(config: VortexConfig, j: int, x):
    return np.exp(log_rho(config, j, x))


def rho_at_points(config: VortexConfig):
    return np.array([float(rho(config, j, config.xi[j])) for j in range(config.m)])


# ---------------------------------------------------------------------------
# the Hamiltonian and its gradient
# ---------------------------------------------------------------------------


def phi_star(config: VortexConfig) -> float:
    ev = config.green
    tau = config.tau
    m1, m = config.m1, config.m
    xi = config.xi
    val = 0.0
    for j in range(m1):
        val += config.V1.log(xi[j]) / (4.0 * np.pi) + robin(ev, xi[j])
    for j in range(m1, m):
        val += config.V2.log(xi[j]) / (4.0 * np.pi * tau ** 2) + robin(ev, xi[j]) / tau ** 2
    for j in range(m):
        for i in range(m):
            if i == j:
                continue
            g = green_eval(ev, xi[i], xi[j])
            if i < m1 and j < m1:
                val += g
            elif i >= m1 and j >= m1:
                val += g / tau ** 2
            else:
                val -= g / tau  # each ordered mixed pair carries -1/tau
    return float(val)


def grad_phi_star(config: VortexConfig):
    """Chart gradients of phi* at each point, shape (m, 2).

    Uses d(log rho_j)(xi_j) = 4 pi tau^{2(k-1)} grad_{xi_j} phi*; the Robin
    mass is constant on the homogeneous surfaces supported here.
    """
    ev = config.green
    tau = config.tau
    m1, m = config.m1, config.m
    out = np.zeros((m, 2))
    for l in range(m):
        ch = config.chart(l)
        V = config.potential(config.block(l))
        g = np.array(V.grad_log(config.surface, config.xi[l]), dtype=float)
        w = _grho_weights(config, l)
        acc = g.copy()
        for i in range(m):
            if i == l:
                continue
            _, gr = green_eval(ev, config.xi[l], config.xi[i], grad=True)
            acc = acc + w[i] * gr
        scale = 4.0 * np.pi * (tau ** 2 if l >= m1 else 1.0)
        out[l] = acc / scale
    return out


def grad_phi_star_norm(config: VortexConfig) -> float:
    g = grad_phi_star(config)
    return float(np.sqrt(np.sum(g ** 2)))


def _rho_chart_fn(config: VortexConfig, j: int):
    ch = config.chart(j)

    def f(y):
        return float(rho(config, j, ch.from_chart(np.asarray(y, dtype=float))))

    return f


def lap_rho(config: VortexConfig, j: int, h=None, richardson=True):
    """Chart Laplacian of rho_j at xi_j by 4th-order stencil (+ Richardson)."""
    f = _rho_chart_fn(config, j)
    if h is None:
        h = 0.04 * config.r0
    H1 = np.trace(fd_hessian(f, h))
    if not richardson:
        return H1, 0.0
    H2 = np.trace(fd_hessian(f, h / 2.0))
    val = (16.0 * H2 - H1) / 15.0
    return val, abs(H2 - H1) / 15.0


def A_star(config: VortexConfig, k: int, method: str = "fd"):
    """A*_k = 4 pi sum_{j in J_k} [Delta_g rho_j(xi_j) - 2 K rho_j(xi_j)].

    ``method='shortcut'`` uses the critical-point identity
    4 pi sum rho_j [Delta_g log V_k + (-tau)^{k-1} (8 pi/|S|)(m1 - m2/tau) - 2K],
    valid where grad phi* = 0.
    Returns (value, uncertainty).
    """
    idx = range(config.m1) if k == 1 else range(config.m1, config.m)
    tot, unc = 0.0, 0.0
    if method == "shortcut":
        sgn = (-config.tau) ** (k - 1)
        bulk = sgn * (8.0 * np.pi / config.surface.area) * (
            config.m1 - config.m2 / config.tau
        )
        V = config.potential(k)
        for j in idx:
            rj = float(rho(config, j, config.xi[j]))
            K = config.surface.curvature(config.xi[j])
            tot += rj * (V.lap_log(config.surface, config.xi[j]) + bulk - 2.0 * K)
        return 4.0 * np.pi * tot, 0.0
    for j in idx:
        lap, err = lap_rho(config, j)
        rj = float(rho(config, j, config.xi[j]))
        K = config.surface.curvature(config.xi[j])
        tot += lap - 2.0 * K * rj
        unc += err
    return 4.0 * np.pi * tot, 4.0 * np.pi * unc


def _bstar_exponent(config: VortexConfig, k: int, x):
    """log of the signed Green-exponential density E_k (without V_k)."""
    tau = config.tau
    c1 = 8.0 * np.pi * (-tau) ** (k - 1)
    c2 = 8.0 * np.pi * (-tau) ** (k - 2)
    ev = config.green
    acc = None
    for i in range(config.m):
        g = green_eval(ev, x, config.xi[i])
        c = c1 if i < config.m1 else c2
        acc = c * g if acc is None else acc + c * g
    return acc


def _log_Ek(config: VortexConfig, k: int, x):
    return config.potential(k).log(x) + _bstar_exponent(config, k, x)


def B_star(
    config: VortexConfig,
    k: int,
    r: float = None,
    cutoff: Cutoff | None = None,
    grid_n: int = 384,
    estimate_uncertainty: bool = False,
):
    """B*_k through the r-independent proof-form identity.

    The singular ball integrals are regularized by subtracting the
    second-order chart Taylor polynomial of e^{phi} rho_j (plus an odd cubic
    whose quadrature contribution vanishes by parity, which removes the
    third-order remainder from the integrand).  Returns (value, uncertainty).
    """
    from .geometry import build_grid

    if r is None:
        r = config.r0
    if r > config.r0 + 1e-12:
        raise GeometryError("B* radius must satisfy r <= r0")
    chi = cutoff if cutoff is not None else config.cutoff()
    idx = list(range(config.m1)) if k == 1 else list(range(config.m1, config.m))
    rhos = rho_at_points(config)
    K = [config.surface.curvature(config.xi[j]) for j in range(config.m)]
    laps = {}
    for j in idx:
        laps[j] = lap_rho(config, j)

    Ak = 4.0 * np.pi * sum(laps[j][0] - 2.0 * K[j] * rhos[j] for j in idx)
    Ak_unc = 4.0 * np.pi * sum(laps[j][1] for j in idx)

    t_local = -2.0 * np.pi * sum(
        (laps[j][0] - 2.0 * K[j] * rhos[j]) * np.log(rhos[j]) for j in idx
    )

    # far field: smooth part on the grid plus polar annuli inside each bump
    grid = build_grid(config.surface, grid_n)
    eta = np.zeros(len(grid.nodes))
    charts = [config.chart(j) for j in range(config.m)]
    for j in range(config.m):
        s = np.linalg.norm(charts[j].to_chart(grid.nodes), axis=-1)
        eta = eta + chi(s)
    smooth_vals = np.zeros(len(grid.nodes))
    active = eta < 1.0 - 1e-15
    smooth_vals[active] = np.exp(_log_Ek(config, k, grid.nodes[active])) * (
        1.0 - eta[active]
    )
    far = float(np.sum(grid.weights * smooth_vals))
    wsub = grid.weights[::2]
    far_half = float(np.sum(wsub * smooth_vals[::2]) * np.sum(grid.weights) / np.sum(wsub))

    def annulus(j, r_in):
        ch = charts[j]
        y, w = polar_grid(r_in, 2.0 * config.r0, n_panels=36, order=12, n_ang=96)
        x = ch.from_chart(y)
        s = np.linalg.norm(y, axis=-1)
        vals = np.exp(_log_Ek(config, k, x) + ch.phi_hat(y)) * chi(s)
        return float(np.sum(w * vals))

    ann = 0.0
    for j in range(config.m):
        if j in idx:
            ann += annulus(j, r)
        else:
            ann += annulus(j, 1e-7 * config.r0)

    # singular ball integrals with Taylor subtraction
    inner = 0.0
    inner_unc = 0.0
    for j in idx:
        ch = charts[j]

        def f(y):
            y = np.asarray(y, dtype=float)
            yy = y.reshape(-1, 2)
            v = np.exp(
                log_rho(config, j, ch.from_chart(yy)) + ch.phi_hat(yy)
            )
            return float(v[0]) if y.ndim == 1 else v

        hfd = 0.04 * config.r0
        f0 = f(np.zeros(2))
        gr = fd_gradient(f, hfd)
        He = (16.0 * fd_hessian(f, hfd / 2.0) - fd_hessian(f, hfd)) / 15.0
        c3 = fd_third(f, 2.0 * hfd)

        def taylor(y):
            lin = y @ gr
            quad = 0.5 * np.einsum("mi,ij,mj->m", y, He, y)
            cub = (
                c3[0] * y[:, 0] ** 3
                + 3.0 * c3[1] * y[:, 0] ** 2 * y[:, 1]
                + 3.0 * c3[2] * y[:, 0] * y[:, 1] ** 2
                + c3[3] * y[:, 1] ** 3
            ) / 6.0
            return f0 + lin + quad + cub

        y, w = polar_grid(1e-4 * r, r, n_panels=40, order=12, n_ang=64)
        vals = (f(y) - taylor(y)) / np.sum(y * y, axis=-1) ** 2
        inner += float(np.sum(w * vals))
        y2, w2 = polar_grid(1e-4 * r, r, n_panels=20, order=8, n_ang=32)
        v2 = (f(y2) - taylor(y2)) / np.sum(y2 * y2, axis=-1) ** 2
        inner_unc += abs(float(np.sum(w2 * v2)) - float(np.sum(w * vals)))

    total = (
        t_local
        - Ak / 2.0
        + 8.0 * (far + ann)
        - (8.0 * np.pi / r ** 2) * sum(rhos[j] for j in idx)
        - Ak * np.log(1.0 / r)
        + 8.0 * inner
    )
    if not estimate_uncertainty:
        return float(total), 0.0
    unc = (
        abs(far - far_half) * 8.0
        + 8.0 * inner_unc
        + Ak_unc * (0.5 + abs(np.log(1.0 / r)))
        + sum(abs(np.log(rhos[j])) for j in idx) * Ak_unc / 2.0
    )
    return float(total), float(unc)


@dataclass
class AdmissibilityReport:
    """Per-block admissibility data and the recommended lambda side."""

    A_star: list
    B_star: list
    A_unc: list
    B_unc: list
    side: list  # 'right' | 'left' | 'undecided' per k

    def to_dict(self):
        return {
            "A_star": list(map(float, self.A_star)),
            "B_star": [None if b is None else float(b) for b in self.B_star],
            "A_unc": list(map(float, self.A_unc)),
            "B_unc": [None if b is None else float(b) for b in self.B_unc],
            "side": list(self.side),
        }


def admissibility_report(config: VortexConfig, grid_n: int = 384) -> AdmissibilityReport:
    A, B, Au, Bu, sides = [], [], [], [], []
    for k in (1, 2):
        count = config.m1 if k == 1 else config.m2
        if count == 0:
            A.append(0.0), B.append(None), Au.append(0.0), Bu.append(None)
            sides.append("undecided")
            continue
        a, au = A_star(config, k)
        tol = max(10.0 * au, 1e-7 * (1.0 + abs(a)))
        if a > tol:
            b, bu = None, None
            side = "right"
        elif a < -tol:
            b, bu = None, None
            side = "left"
        else:
            b, bu = B_star(config, k, grid_n=grid_n, estimate_uncertainty=True)
            if b > 10.0 * bu:
                side = "right"
            elif b < -10.0 * bu:
                side = "left"
            else:
                side = "undecided"
        A.append(a), Au.append(au), B.append(b), Bu.append(bu), sides.append(side)
    return AdmissibilityReport(A, B, Au, Bu, sides)


# ---------------------------------------------------------------------------
# critical points of phi*
# ---------------------------------------------------------------------------


def _shift_config(config: VortexConfig, steps):
    """Move each xi_j by the chart displacement steps[j] (shape (m,2))."""
    new_pts = []
    for j in range(config.m):
        ch = config.chart(j)
        new_pts.append(ch.from_chart(np.asarray(steps[j], dtype=float)))
    return config.with_points(new_pts)


def find_critical_points(
    config: VortexConfig,
    mode: str = "saddle",
    max_iter: int = 80,
    tol: float = 1e-9,
    trust: float = None,
):
    """Newton search on grad phi* from the configuration's own points.

    Homogeneous surfaces make phi* invariant under global isometries, so the
    Hessian has gauge zero-modes; the Newton step uses a pseudo-inverse and a
    trust-region cap.  Falls back to gradient ascent/descent steps when an
    extremum was requested and Newton stalls.
    Returns dict with the refined config, Hessian spectrum and stability flag.
    """
    cur = config
    if trust is None:
        trust = 0.5 * config.r0
    trace = []

    def grad_vec(cfg):
        return grad_phi_star(cfg).ravel()

    def hess_fd(cfg, h):
        m2 = 2 * cfg.m
        H = np.zeros((m2, m2))
        for a in range(m2):
            steps = np.zeros((cfg.m, 2))
            steps[a // 2, a % 2] = h
            gp = grad_vec(_shift_config(cfg, steps))
            gm = grad_vec(_shift_config(cfg, -steps))
            H[:, a] = (gp - gm) / (2.0 * h)
        return 0.5 * (H + H.T)

    g = grad_vec(cur)
    for it in range(max_iter):
        gn = np.linalg.norm(g)
        trace.append(gn)
        if gn < tol:
            break
        H = hess_fd(cur, 1e-5 * max(cur.r0, 1e-3))
        step = -np.linalg.pinv(H, rcond=1e-10) @ g
        sn = np.linalg.norm(step)
        if sn > trust:
            step *= trust / sn
        cand = _shift_config(cur, step.reshape(cur.m, 2))
        gc = grad_vec(cand)
        if np.linalg.norm(gc) < gn or it < 3:
            cur, g = cand, gc
            continue
        # fallback: first-order step in the requested direction
        sgn = {"maximize": 1.0, "minimize": -1.0}.get(mode, 0.0)
        if sgn == 0.0:
            cur, g = cand, gc
            continue
        alpha = trust / max(gn, 1e-14)
        for _ in range(20):
            cand = _shift_config(cur, sgn * alpha * g.reshape(cur.m, 2))
            gc = grad_vec(cand)
            val_ok = (phi_star(cand) - phi_star(cur)) * sgn > 0
            if val_ok:
                break
            alpha /= 2.0
        cur, g = cand, gc
    H = hess_fd(cur, 1e-5 * max(cur.r0, 1e-3))
    eigs = np.linalg.eigvalsh(H)
    n_gauge = 3 if cur.surface.kind == "sphere" else 2
    scale = max(np.max(np.abs(eigs)), 1e-300)
    nontrivial = eigs[np.abs(eigs) > 1e-5 * scale]
    degenerate = len(nontrivial) < 2 * cur.m - n_gauge
    stable = not degenerate
    kind = "saddle"
    if len(nontrivial) and np.all(nontrivial > 0):
        kind = "minimum"
    elif len(nontrivial) and np.all(nontrivial < 0):
        kind = "maximum"
    return {
        "config": cur,
        "xi": [p.copy() for p in cur.xi],
        "grad_norm": float(np.linalg.norm(g)),
        "hessian_eigs": eigs,
        "kind": kind,
        "stable": bool(stable),
        "converged": bool(np.linalg.norm(g) < 10 * tol),
        "trace": trace,
    }
