"""Residual, energy, reduced-energy expansion and the projected linear theory.

The linear operator L is the second variation of the energy at the ansatz W;
its near-kernel at small delta is spanned by the projected bubble symmetries
PZ.  The projected solve inverts L against that span through a bordered
(saddle) system, and the nonlinear correction iterates phi <- -T(R + N(phi))
to the fixed point, after which E(mu, xi) = J(W + phi) is the reduced energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, minres

from .ansatz import BubbleFamily, ContractViolation, Field
from .hamiltonian import A_star, B_star, VortexConfig, phi_star
from .numutil import fit_loglog, polar_grid


# ---------------------------------------------------------------------------
# weighted sup norm
# ---------------------------------------------------------------------------


@dataclass
class StarNormContext:
    """Bubble-adapted weight for the residual sup norm."""

    family: BubbleFamily
    sigma: float = 0.25

    def __post_init__(self):
        fam = self.family
        r0 = fam.config.r0
        w = np.zeros(len(fam.grid.nodes))
        for j in range(fam.config.m):
            _, s = fam.chart_coords(j)
            dj = fam.delta_j[j]
            inside = s < r0
            dist2 = np.where(inside, s ** 2, r0 ** 2)
            w = w + dj ** self.sigma / (dj ** 2 + dist2) ** (1.0 + self.sigma / 2.0)
        self.weight = w

    def norm(self, h) -> float:
        vals = h.values if isinstance(h, Field) else np.asarray(h).ravel()
        return float(np.max(np.abs(vals) / self.weight))


def star_norm(ctx: StarNormContext, h) -> float:
    return ctx.norm(h)


# ---------------------------------------------------------------------------
# residual and energy
# ---------------------------------------------------------------------------


def _exp_quotient(family: BubbleFamily, W_vals, k: int):
    """Normalized density V_k e^{(-tau)^{k-1} W} / integral, with log integral.

    Max-subtraction keeps the quotient finite for arbitrarily tall bubbles.
    Returns (density, log_integral).
    """
    cfg = family.config
    sgn = (-cfg.tau) ** (k - 1)
    logV = cfg.potential(k).log(family.grid.nodes)
    a = logV + sgn * W_vals
    m = np.max(a)
    ea = np.exp(a - m)
    integral = np.sum(family.grid.weights * ea)
    return ea / integral, m + np.log(integral)


def residual_R(family: BubbleFamily, W: Field = None, sigma: float = 0.25):
    """Defect of the ansatz in the full equation; returns (Field, star norm)."""
    cfg = family.config
    if W is None:
        W = family.build_W()
    lap = family.W_laplacian().values
    d1, _ = _exp_quotient(family, W.values, 1)
    d2, _ = _exp_quotient(family, W.values, 2)
    area = cfg.surface.area
    vals = (
        lap
        + family.lam1 * (d1 - 1.0 / area)
        - family.lam2 * cfg.tau * (d2 - 1.0 / area)
    )
    R = Field(family.grid, vals)
    ctx = StarNormContext(family, sigma)
    return R, ctx.norm(R)


def energy_J(u: Field, lam1: float, lam2: float, config: VortexConfig, grid=None):
    """J(u) = 1/2 |grad u|^2 - lam1 log int V1 e^u - lam2 log int V2 e^{-tau u}."""
    grid = grid if grid is not None else u.grid
    vals = u.values
    mean = np.sum(grid.weights * vals) / config.surface.area
    if abs(mean) > 1e-6 * max(float(np.max(np.abs(vals))), 1e-10):
        raise ContractViolation("energy_J requires a mean-zero field")
    grad2 = grid.gradient_sq_integral(vals)
    logs = []
    for k, sgn in ((1, 1.0), (2, -config.tau)):
        logV = config.potential(k).log(grid.nodes)
        a = logV + sgn * vals
        m = np.max(a)
        logs.append(m + np.log(np.sum(grid.weights * np.exp(a - m))))
    return float(0.5 * grad2 - lam1 * logs[0] - lam2 * logs[1])


# ---------------------------------------------------------------------------
# analytic expansion of J(W)
# ---------------------------------------------------------------------------


@dataclass
class ExpansionCoefficients:
    """Configuration-level inputs of the energy expansion (delta-independent)."""

    phi: float
    A1: float
    B1: float
    A2: float
    B2: float
    A1_unc: float = 0.0
    B1_unc: float = 0.0
    A2_unc: float = 0.0
    B2_unc: float = 0.0


def expansion_coefficients(config: VortexConfig, grid_n: int = 384) -> ExpansionCoefficients:
    phi = phi_star(config)
    a1, a1u = A_star(config, 1) if config.m1 else (0.0, 0.0)
    a2, a2u = A_star(config, 2) if config.m2 else (0.0, 0.0)
    b1, b1u = (
        B_star(config, 1, grid_n=grid_n, estimate_uncertainty=True)
        if config.m1
        else (0.0, 0.0)
    )
    b2, b2u = (
        B_star(config, 2, grid_n=grid_n, estimate_uncertainty=True)
        if config.m2
        else (0.0, 0.0)
    )
    return ExpansionCoefficients(phi, a1, b1, a2, b2, a1u, b1u, a2u, b2u)


def _m20_background(config: VortexConfig, n_grid: int = 256) -> float:
    """log int V2 exp(-8 pi tau sum_j G(x, xi_j)) for the m2 = 0 expansion."""
    from .geometry import build_grid
    from .green import green_eval

    grid = build_grid(config.surface, n_grid)
    acc = config.V2.log(grid.nodes)
    for j in range(config.m):
        acc = acc - 8.0 * np.pi * config.tau * green_eval(
            config.green, grid.nodes, config.xi[j]
        )
    m = np.max(acc)
    return float(m + np.log(np.sum(grid.weights * np.exp(acc - m))))


def jut_value(
    config: VortexConfig,
    delta: float,
    mu,
    offsets,
    coeff: ExpansionCoefficients,
    m20_bg: float = None,
) -> dict:
    """Term-by-term analytic expansion value of J(W) (the (mu, xi) blocks)."""
    m1, m2, tau = config.m1, config.m2, config.tau
    mu1, mu2 = mu
    off1, off2 = offsets
    logd = np.log(delta)
    terms = {}
    if m2 > 0:
        terms["const"] = (
            -8.0 * np.pi * (m1 + m2 / tau ** 2)
            - (8.0 * np.pi * m1 + off1) * np.log(np.pi * m1)
            - (8.0 * np.pi * m2 + off2) / tau ** 2 * np.log(np.pi * m2)
        )
        terms["logdelta"] = 2.0 * off1 * logd + 2.0 / tau ** 2 * off2 * logd
        terms["phi"] = -32.0 * np.pi ** 2 * coeff.phi
        terms["mu1"] = 2.0 * off1 * np.log(mu1) + coeff.A1 * mu1 ** 2 * delta ** 2 * logd + (
            coeff.A1 * mu1 ** 2 * np.log(mu1) - coeff.B1 * mu1 ** 2
        ) * delta ** 2
        terms["mu2"] = (
            2.0 * off2 * np.log(mu2)
            + coeff.A2 * mu2 ** 2 * delta ** 2 * logd
            + (coeff.A2 * mu2 ** 2 * np.log(mu2) - coeff.B2 * mu2 ** 2) * delta ** 2
        ) / tau ** 2
    else:
        lam2 = off2 / tau ** 2
        terms["const"] = -8.0 * np.pi * m1 - (8.0 * np.pi * m1 + off1) * np.log(np.pi * m1)
        terms["logdelta"] = 2.0 * off1 * logd
        terms["phi"] = -32.0 * np.pi ** 2 * coeff.phi
        terms["mu1"] = 2.0 * off1 * np.log(mu1) + coeff.A1 * mu1 ** 2 * delta ** 2 * logd + (
            coeff.A1 * mu1 ** 2 * np.log(mu1) - coeff.B1 * mu1 ** 2
        ) * delta ** 2
        terms["mu2"] = -lam2 * (m20_bg if m20_bg is not None else 0.0)
    terms["total"] = sum(terms.values())
    return terms


def derivmu_value(
    config: VortexConfig, delta: float, mu, offsets, coeff: ExpansionCoefficients, k: int
) -> float:
    """Analytic d/dmu_k of the expansion (through the delta^2 terms)."""
    tau = config.tau
    logd = np.log(delta)
    muk = mu[k - 1]
    off = offsets[k - 1]
    A = coeff.A1 if k == 1 else coeff.A2
    B = coeff.B1 if k == 1 else coeff.B2
    scale = 1.0 if k == 1 else 1.0 / tau ** 2
    return scale * (
        2.0 * off / muk
        + 2.0 * A * muk * delta ** 2 * logd
        + (A * (muk + 2.0 * muk * np.log(muk)) - 2.0 * B * muk) * delta ** 2
    )


@dataclass
class ExpansionReport:
    """Numeric J(W) against the analytic expansion over a delta sweep.

    ``conclusive`` is False when the slope fit quality falls below the
    configured R^2 threshold; consumers must not treat such a report as a
    pass.
    """

    deltas: list
    numeric: list
    analytic: list
    gaps: list
    gap_slope: float
    gap_r2: float
    conclusive: bool = True
    terms: list = field(default_factory=list)
    mu_deriv: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "deltas": list(map(float, self.deltas)),
            "numeric_J": list(map(float, self.numeric)),
            "analytic_J": list(map(float, self.analytic)),
            "gaps": list(map(float, self.gaps)),
            "gap_slope": float(self.gap_slope),
            "gap_r2": float(self.gap_r2),
            "conclusive": bool(self.conclusive),
            "terms": self.terms,
        }
        if self.mu_deriv:
            out["mu_deriv"] = self.mu_deriv
        return out


def expansion_JW(
    config: VortexConfig,
    deltas,
    mu,
    offset_fn=None,
    resolution_fn=None,
    coeff: ExpansionCoefficients = None,
    grids: dict = None,
    fit_quality: float = 0.99,
) -> ExpansionReport:
    """Sweep J(W) over deltas and compare with the analytic expansion.

    ``offset_fn(delta) -> (off1, off2)`` defaults to zero offsets, which
    suppresses the lambda-offset blocks and leaves the pure (mu, xi) content.
    ``resolution_fn(delta)`` picks the grid size per delta.
    """
    from .geometry import build_grid

    if coeff is None:
        coeff = expansion_coefficients(config)
    offset_fn = offset_fn or (lambda d: (0.0, 0.0))
    m20_bg = _m20_background(config) if config.m2 == 0 else None
    grids = grids if grids is not None else {}
    numeric, analytic, gaps, terms_list = [], [], [], []
    for d in deltas:
        res = resolution_fn(d) if resolution_fn else None
        if res not in grids:
            grids[res] = build_grid(config.surface, res)
        fam = BubbleFamily(config, d, grid=grids[res], mu=mu, offsets=offset_fn(d))
        W = fam.build_W()
        jn = energy_J(W, fam.lam1, fam.lam2, config, fam.grid)
        terms = jut_value(config, d, mu, offset_fn(d), coeff, m20_bg)
        numeric.append(jn)
        analytic.append(terms["total"])
        gaps.append(jn - terms["total"])
        terms_list.append({k: float(v) for k, v in terms.items()})
    slope, _, r2 = fit_loglog(deltas, gaps)
    return ExpansionReport(
        list(deltas), numeric, analytic, gaps, slope, r2, r2 >= fit_quality, terms_list
    )


def fd_mu_derivative(
    config: VortexConfig, delta, mu, offsets, grid, k: int, rel_step: float = 0.05
):
    """Richardson central difference of J(W) in mu_k at fixed delta."""

    def j_at(muk):
        m = list(mu)
        m[k - 1] = muk
        fam = BubbleFamily(config, delta, grid=grid, mu=tuple(m), offsets=offsets)
        W = fam.build_W()
        return energy_J(W, fam.lam1, fam.lam2, config, grid)

    muk = mu[k - 1]
    h = rel_step * muk

    def central(hh):
        return (j_at(muk + hh) - j_at(muk - hh)) / (2.0 * hh)

    d1, d2 = central(h), central(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def critical_mu(coeff: ExpansionCoefficients, delta: float, side_signs, counts):
    """Leading-order critical mu of the reduced energy per block.

    With lambda offset = sign * delta^2 the stationarity of the expansion in
    mu_k gives mu*^2 = sign / (A |log delta| sign_A ... ) reducing to
    1/(|A| |log delta|) when A decides the side and 1/|B| when A = 0.
    Blocks with no bubbles get mu = 1.
    """
    out = []
    for k, (A, B) in enumerate(((coeff.A1, coeff.B1), (coeff.A2, coeff.B2))):
        if counts[k] == 0:
            out.append(1.0)
            continue
        if abs(A) > 1e-6 * (1.0 + abs(B)):
            out.append(float(1.0 / np.sqrt(abs(A) * abs(np.log(delta)))))
        else:
            out.append(float(1.0 / np.sqrt(abs(B))) if B != 0 else 1.0)
    return tuple(out)


# ---------------------------------------------------------------------------
# linearized operator and the projected solve
# ---------------------------------------------------------------------------


class LinearizedOperator:
    """L(phi) = Delta_g phi + sum_i lam_i tau^{2(i-1)} K_i (phi - <phi>_{K_i}).

    Self-adjoint in the surface inner product on mean-zero fields.  ``W`` may
    be the ansatz or any state (full Newton reuses this with W -> u).
    """

    def __init__(self, family_or_grid, W: Field, config=None, lam1=None, lam2=None):
        if isinstance(family_or_grid, BubbleFamily):
            fam = family_or_grid
            self.grid = fam.grid
            self.config = fam.config
            self.lam1, self.lam2 = fam.lam1, fam.lam2
            self._family = fam
        else:
            self.grid = family_or_grid
            self.config = config
            self.lam1, self.lam2 = lam1, lam2
            self._family = None
        cfg = self.config
        self.k1, _ = _exp_quotient_static(cfg, self.grid, W.values, 1)
        self.k2, _ = _exp_quotient_static(cfg, self.grid, W.values, 2)
        self.c1 = self.lam1
        self.c2 = self.lam2 * cfg.tau ** 2
        self.w = self.grid.weights

    def _proj_term(self, k_dens, c, vals):
        avg = np.sum(self.w * k_dens * vals) / np.sum(self.w * k_dens)
        return c * k_dens * (vals - avg)

    def apply(self, vals):
        vals = np.asarray(vals, dtype=float).ravel()
        out = self.grid.laplacian(vals)
        out = out + self._proj_term(self.k1, self.c1, vals)
        out = out + self._proj_term(self.k2, self.c2, vals)
        return out

    def apply_field(self, phi: Field) -> Field:
        return Field(self.grid, self.apply(phi.values))


def _exp_quotient_static(config, grid, W_vals, k):
    sgn = (-config.tau) ** (k - 1)
    logV = config.potential(k).log(grid.nodes)
    a = logV + sgn * W_vals
    m = np.max(a)
    ea = np.exp(a - m)
    integral = np.sum(grid.weights * ea)
    return ea / integral, m + np.log(integral)


def linearized_L_apply(family: BubbleFamily, phi: Field, W: Field = None) -> Field:
    W = W if W is not None else family.build_W()
    op = LinearizedOperator(family, W)
    return op.apply_field(phi)


def near_kernel(family: BubbleFamily, count: int = None, W: Field = None, tol: float = 0.0):
    """Near-kernel eigenpairs of L in the energy normalization.

    Solves the symmetric pencil L phi = nu (1 - Delta_g) phi on mean-zero
    fields (plain L2 Rayleigh quotients of bubble-scale modes do not vanish
    with delta, so the raw spectrum carries no scale separation; the H1-type
    weight restores it).  Shift-invert Lanczos at sigma = 0 with MINRES inner
    solves on the symmetrized operator.
    Returns (eigenvalues, eigenvector fields) sorted by |eigenvalue|.
    """
    fam = family
    if count is None:
        count = 2 + 2 * fam.config.m + 2
    W = W if W is not None else fam.build_W()
    op = LinearizedOperator(fam, W)
    grid = fam.grid
    n = len(grid.nodes)
    w = grid.weights
    area = fam.config.surface.area
    sqw = np.sqrt(w)

    def demean(v):
        return v - np.sum(w * v) / area

    def b_pow(v, p):
        """(1 - Delta_g)^p applied spectrally."""
        return grid.from_coeff(_pow_one_minus_lap(grid, grid.to_coeff(v), p))

    one_hat = sqw / np.linalg.norm(sqw)

    def c_apply(x):
        v = demean(b_pow(demean(x / sqw), -0.5))
        v = op.apply(v)
        out = sqw * demean(b_pow(demean(v), -0.5))
        # deflate the constant direction (spurious exact kernel of the
        # full-space embedding of the mean-zero problem)
        return out - (one_hat @ x) * one_hat

    # Lanczos on -C^2: its largest eigenvalues are C's near-zero ones, and the
    # delocalized pencil spectrum clusters near -1, far from the target.
    def msq_apply(x):
        return -c_apply(c_apply(x))

    A2 = LinearOperator((n, n), matvec=msq_apply, dtype=float)
    ncv = min(n - 1, max(4 * count, 30))
    _, vecs = eigsh(A2, k=count, which="LA", ncv=ncv, tol=tol, maxiter=6000)
    # Rayleigh-Ritz of C on the captured subspace recovers signed eigenvalues
    q, _ = np.linalg.qr(vecs)
    cq = np.stack([c_apply(q[:, i]) for i in range(q.shape[1])], axis=1)
    small = q.T @ cq
    small = 0.5 * (small + small.T)
    nus, rot = np.linalg.eigh(small)
    order = np.argsort(np.abs(nus))
    nus = nus[order]
    psi = q @ rot[:, order]
    resid = [
        float(np.linalg.norm(c_apply(psi[:, i]) - nus[i] * psi[:, i]))
        for i in range(psi.shape[1])
    ]
    fields = [
        Field(grid, demean(b_pow(demean(psi[:, i] / sqw), -0.5)))
        for i in range(psi.shape[1])
    ]
    return nus, fields, resid


def kernel_principal_angles(family: BubbleFamily, fields):
    """Principal angles (radians) between eigenfields and span{PZ} in the
    (1 - Delta_g) energy metric."""
    from scipy.linalg import subspace_angles

    grid = family.grid
    sqw = np.sqrt(grid.weights)

    def b_half(v):
        return grid.from_coeff(_pow_one_minus_lap(grid, grid.to_coeff(v), 0.5))

    _, pz = family.pz_basis()
    U = np.stack([sqw * b_half(f.values) for f in fields], axis=1)
    V = np.stack([sqw * b_half(f.values) for f in pz], axis=1)
    return subspace_angles(U, V)


def _pow_one_minus_lap(grid, coeff, p):
    if isinstance(coeff, list):  # sphere
        out = []
        for m, c in enumerate(coeff):
            ls = grid.ell[m]
            out.append(c * (1.0 + ls * (ls + 1.0)) ** p)
        return out
    return coeff * (1.0 - grid.lap_eig) ** p


class ProjectedSolver:
    """Bordered solve of L(phi) = h + sum c_a Delta_g PZ_a with orthogonality.

    The saddle system in variables (sqrt(w) phi, c) is symmetric indefinite
    and is solved by preconditioned MINRES; the PZ block is tiny so the
    preconditioner is block diagonal (spectral inverse of 1 - Delta_g, identity).
    """

    def __init__(self, family: BubbleFamily, W: Field = None):
        self.family = family
        self.grid = family.grid
        self.op = LinearizedOperator(family, W if W is not None else family.build_W())
        cols, fields = family.pz_basis()
        self.B = -cols  # columns are Delta_g PZ_a (mean zero)
        self.pz_fields = fields
        self.p = self.B.shape[1]
        self.w = self.grid.weights
        self.sqw = np.sqrt(self.w)
        self.area = family.config.surface.area
        self.n = len(self.grid.nodes)
        # scale the constraint block for conditioning
        self.bscale = 1.0 / np.sqrt(np.sum(self.w[:, None] * self.B ** 2, axis=0))

    def _demean(self, v):
        return v - np.sum(self.w * v) / self.area

    def _matvec(self, z):
        x, c = z[: self.n], z[self.n:]
        phi = self._demean(x / self.sqw)
        top = self.sqw * self._demean(
            self.op.apply(phi) - self.B @ (c * self.bscale)
        )
        bot = -self.bscale * (self.B.T @ (self.w * phi))
        return np.concatenate([top, bot])

    def _prec(self, z):
        x, c = z[: self.n], z[self.n:]
        v = self._demean(x / self.sqw)
        co = self.grid.to_coeff(v)
        out = self.grid.from_coeff(_pow_one_minus_lap(self.grid, co, -1.0))
        return np.concatenate([self.sqw * self._demean(out), c])

    def solve(self, h, rtol: float = 1e-11, maxiter: int = 2000):
        """Returns (phi Field, c array, info dict)."""
        hv = h.values if isinstance(h, Field) else np.asarray(h, dtype=float).ravel()
        mean = np.sum(self.w * hv) / self.area
        if abs(mean) > 1e-6 * (np.max(np.abs(hv)) + 1e-300):
            raise ContractViolation("projected solve needs mean-zero data")
        rhs = np.concatenate([self.sqw * (hv - mean), np.zeros(self.p)])
        A = LinearOperator((self.n + self.p,) * 2, matvec=self._matvec, dtype=float)
        M = LinearOperator((self.n + self.p,) * 2, matvec=self._prec, dtype=float)
        sol, info = minres(A, rhs, M=M, rtol=rtol, maxiter=maxiter)
        if info != 0:
            raise RuntimeError(f"bordered MINRES did not converge (info={info})")
        phi = self._demean(sol[: self.n] / self.sqw)
        c = sol[self.n:] * self.bscale
        resid = self._matvec(sol) - rhs
        return (
            Field(self.grid, phi),
            c,
            {"minres_info": info, "resid": float(np.linalg.norm(resid) / (np.linalg.norm(rhs) + 1e-300))},
        )


def projected_linear_solve(family: BubbleFamily, h, W: Field = None):
    solver = ProjectedSolver(family, W)
    phi, c, info = solver.solve(h)
    n_sum = 2 if (family.config.m1 and family.config.m2) else 1
    return phi, c[:n_sum], c[n_sum:], info


# ---------------------------------------------------------------------------
# nonlinear correction
# ---------------------------------------------------------------------------


def nonlinear_N(family: BubbleFamily, W: Field, phi: Field, op: LinearizedOperator) -> Field:
    """Quadratic-and-higher remainder of the expansion of the full equation."""
    cfg = family.config
    grid = family.grid
    out = np.zeros(len(grid.nodes))
    for i, sgn_fac in ((1, 1.0), (2, -1.0)):
        lam_fac = family.lam1 if i == 1 else family.lam2 * cfg.tau
        k_dens = op.k1 if i == 1 else op.k2
        d_new, _ = _exp_quotient_static(cfg, grid, W.values + phi.values, i)
        stau = (-cfg.tau) ** (i - 1)
        avg = np.sum(grid.weights * k_dens * phi.values) / np.sum(grid.weights * k_dens)
        lin = stau * k_dens * (phi.values - avg)
        out = out + sgn_fac * lam_fac * (d_new - lin - k_dens)
    return Field(grid, out)


@dataclass
class CorrectionResult:
    phi: Field
    c0: np.ndarray
    cij: np.ndarray
    energy: float
    iterations: int
    converged: bool
    history: list
    star_R: float

    def multiplier_max(self):
        vals = list(np.abs(self.c0)) + list(np.abs(self.cij))
        return float(max(vals)) if vals else 0.0


def nonlinear_correction(
    family: BubbleFamily,
    tol: float = 1e-10,
    max_iter: int = 40,
    sigma: float = 0.25,
) -> CorrectionResult:
    """Fixed-point solve of the projected nonlinear problem.

    Iterates phi <- -T(R + N(phi)); reports the contraction history and
    switches to damped iteration if the contraction factor exceeds 0.9.
    """
    W = family.build_W()
    solver = ProjectedSolver(family, W)
    op = solver.op
    R, star_R = residual_R(family, W, sigma)
    phi, c, _ = solver.solve(-R.values)
    history = []
    converged = False
    damping = 1.0
    for it in range(max_iter):
        N = nonlinear_N(family, W, phi, op)
        new_phi, c, _ = solver.solve(-(R.values + N.values))
        diff = float(np.max(np.abs(new_phi.values - phi.values)))
        denom = history[-1] if history else None
        history.append(diff)
        if denom is not None and denom > 0 and diff / denom > 0.9:
            damping = 0.5
        if damping < 1.0:
            mixed = phi.values + damping * (new_phi.values - phi.values)
            phi = Field(family.grid, mixed)
        else:
            phi = new_phi
        if diff < tol:
            converged = True
            break
    if not converged and (len(history) >= 2 and history[-1] > history[0]):
        raise RuntimeError(
            f"fixed-point iteration diverging at delta={family.delta}: {history}"
        )
    u = Field(family.grid, W.values + phi.values)
    E = energy_J(u, family.lam1, family.lam2, family.config, family.grid)
    n_sum = 2 if (family.config.m1 and family.config.m2) else 1
    return CorrectionResult(
        phi, c[:n_sum], c[n_sum:], E, len(history), converged, history, star_R
    )


def equilibrate_mu(
    config: VortexConfig,
    delta: float,
    grid,
    offsets,
    mu0,
    C0: float = 10.0,
    tol: float = 1e-9,
    max_iter: int = 12,
):
    """Tune mu so the dilation multipliers of the projected problem vanish.

    Critical points of the reduced energy have zero multipliers (then W + phi
    solves the full equation); a Broyden iteration on c0(mu) locates them far
    more robustly than full-space Newton, whose Jacobian is nearly singular
    along the dilation directions.
    Returns (mu, CorrectionResult at mu).
    """
    active = [k for k in (0, 1) if (config.m1 if k == 0 else config.m2) > 0]
    mu = np.array(mu0, dtype=float)

    def residual(mu_vec):
        fam = BubbleFamily(
            config, delta, grid=grid, mu=tuple(mu_vec), offsets=offsets, C0=C0,
            strict=False,
        )
        res = nonlinear_correction(fam)
        return np.array([res.c0[i] for i in range(len(active))]), res

    r, res = residual(mu)
    if np.max(np.abs(r)) < tol:
        return tuple(mu), res
    # finite-difference Jacobian seed
    J = np.zeros((len(active), len(active)))
    for a, k in enumerate(active):
        mup = mu.copy()
        h = 0.05 * mu[k]
        mup[k] += h
        rp, _ = residual(mup)
        J[:, a] = (rp - r) / h
    for _ in range(max_iter):
        step = np.linalg.solve(J, -r)
        for a, k in enumerate(active):
            mu[k] = float(np.clip(mu[k] + step[a], 0.2 * mu[k], 5.0 * mu[k]))
        r_new, res = residual(mu)
        if np.max(np.abs(r_new)) < tol:
            return tuple(mu), res
        dr = r_new - r
        sTs = step @ step
        if sTs > 0:
            J = J + np.outer(dr - J @ step, step) / sTs
        r = r_new
    return tuple(mu), res


# ---------------------------------------------------------------------------
# bubble moment integrals (quadrature-identity oracles)
# ---------------------------------------------------------------------------


def bubble_moment_integral(chart, cutoff, delta, f_chart, kind="plain", a=0.0, r_max=None):
    """Chart-polar quadrature of chi e^{-phi} f e^{U} [times optional kernels].

    kind: 'plain'   -> integrand chi f e^U
          'inv'     -> extra factor 1/(delta^2 + |y|^2)
          'ratio_a' -> extra factor (a delta^2 - |y|^2)/(delta^2 + |y|^2)^2
    The surface measure cancels e^{-phi}, so this is a flat integral in y.
    """
    r_max = r_max if r_max is not None else 2.0 * cutoff.r0
    # resolve both the delta core and the cutoff annulus
    y_in, w_in = polar_grid(delta * 1e-6, min(8.0 * delta, r_max), 40, 12, 128)
    pieces = [(y_in, w_in)]
    if 8.0 * delta < r_max:
        y_out, w_out = polar_grid(min(8.0 * delta, r_max), r_max, 30, 12, 128)
        pieces.append((y_out, w_out))
    total = 0.0
    for y, w in pieces:
        r2 = np.sum(y * y, axis=-1)
        eu = 8.0 * delta ** 2 / (delta ** 2 + r2) ** 2
        vals = cutoff(np.sqrt(r2)) * f_chart(y) * eu
        if kind == "inv":
            vals = vals / (delta ** 2 + r2)
        elif kind == "ratio_a":
            vals = vals * (a * delta ** 2 - r2) / (delta ** 2 + r2) ** 2
        total += float(np.sum(w * vals))
    return total
