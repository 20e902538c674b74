"""Full nonlinear solves of the two-exponential mean field equation.

Newton iteration with spectral linear algebra: the Jacobian is the same
linearized operator used in the reduction (with the ansatz replaced by the
current state), inverted by preconditioned MINRES on the mean-zero subspace.
Branches toward the quantized parameter values are tracked by pseudo-arclength
continuation with step halving; concentration is monitored through windowed
masses and peak locations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .ansatz import Field
from .analysis import LinearizedOperator, _exp_quotient_static, _pow_one_minus_lap
from .hamiltonian import VortexConfig


class NewtonFailure(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


def full_residual(grid, config: VortexConfig, u_vals, lam1: float, lam2: float):
    """Defect of the full equation at the state u (nodal values)."""
    area = config.surface.area
    d1, _ = _exp_quotient_static(config, grid, u_vals, 1)
    d2, _ = _exp_quotient_static(config, grid, u_vals, 2)
    return (
        grid.laplacian(u_vals)
        + lam1 * (d1 - 1.0 / area)
        - lam2 * config.tau * (d2 - 1.0 / area)
    )


def _jacobian_solve(grid, config, u_vals, lam1, lam2, rhs, rtol=1e-11, maxiter=4000):
    """Solve J v = rhs on mean-zero fields (J = linearization at u)."""
    op = LinearizedOperator(grid, Field(grid, u_vals), config, lam1, lam2)
    w = grid.weights
    sqw = np.sqrt(w)
    area = config.surface.area
    n = len(w)
    one_hat = sqw / np.linalg.norm(sqw)

    def demean(v):
        return v - np.sum(w * v) / area

    def matvec(x):
        out = sqw * demean(op.apply(demean(x / sqw)))
        return out - (one_hat @ x) * one_hat

    def prec(x):
        v = demean(x / sqw)
        out = grid.from_coeff(_pow_one_minus_lap(grid, grid.to_coeff(v), -1.0))
        return sqw * demean(out) + (one_hat @ x) * one_hat

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=prec, dtype=float)
    b = sqw * demean(rhs)
    sol, info = minres(A, b, M=M, rtol=rtol, maxiter=maxiter)
    return demean(sol / sqw), info


def newton_solve(
    grid,
    config: VortexConfig,
    lam1: float,
    lam2: float,
    u0,
    tol_factor: float = 1e-8,
    max_iter: int = 30,
    verbose: bool = False,
):
    """Newton solve of the full equation from the mean-zero seed u0.

    Converges when the residual sup norm drops below
    tol_factor * (1 + sup|u|); damped steps guard the exponential terms.
    Returns (Field u, info dict); raises NewtonFailure with the residual
    trace on stagnation.
    """
    u = np.asarray(u0.values if isinstance(u0, Field) else u0, dtype=float).copy()
    u -= np.sum(grid.weights * u) / config.surface.area
    trace = []
    for it in range(max_iter):
        F = full_residual(grid, config, u, lam1, lam2)
        rnorm = float(np.max(np.abs(F)))
        target = tol_factor * (1.0 + float(np.max(np.abs(u))))
        trace.append(rnorm)
        if verbose:
            print(f"  newton it={it} |F|={rnorm:.3e}")
        if rnorm < target:
            return Field(grid, u), {"iterations": it, "residual": rnorm, "trace": trace}
        v, info = _jacobian_solve(grid, config, u, lam1, lam2, -F)
        if info != 0:
            raise NewtonFailure(f"linear solve stalled (info={info})", trace)
        step = 1.0
        for _ in range(12):
            cand = u + step * v
            Fc = full_residual(grid, config, cand, lam1, lam2)
            if np.max(np.abs(Fc)) < rnorm * (1.0 - 0.25 * step):
                u = cand
                break
            step /= 2.0
        else:
            raise NewtonFailure(f"line search failed at |F|={rnorm:.3e}", trace)
    raise NewtonFailure(f"no convergence in {max_iter} iterations", trace)


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------


@dataclass
class ContinuationStep:
    s: float
    lam1: float
    lam2: float
    sup_u: float
    inf_u: float
    residual: float
    newton_iters: int
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ContinuationRun:
    steps: list
    status: str  # 'completed' | 'branch-end'
    message: str = ""
    fields: list = None

    def to_dict(self):
        return {
            "status": self.status,
            "message": self.message,
            "steps": [
                {
                    "s": st.s,
                    "lam1": st.lam1,
                    "lam2": st.lam2,
                    "sup_u": st.sup_u,
                    "inf_u": st.inf_u,
                    "residual": st.residual,
                    "newton_iters": st.newton_iters,
                    **st.diagnostics,
                }
                for st in self.steps
            ],
        }


def continuation_run(
    grid,
    config: VortexConfig,
    path,
    seed,
    n_target: int = 12,
    ds_min: float = 1e-6,
    keep_fields: bool = False,
    diagnostics_fn=None,
):
    """Track solutions of the full equation along path(s), s in [0, 1].

    Natural parameter continuation in s with Newton correction and step
    halving (the parameter path is prescribed, so arclength reduces to s;
    secant predictors warm-start each Newton solve).  Steps are accepted only
    below the Newton residual target, keeping the run monotone in s.
    """
    s = 0.0
    lam1, lam2 = path(0.0)
    u, info = newton_solve(grid, config, lam1, lam2, seed)
    steps = []
    fields = [] if keep_fields else None

    def record(s, lam1, lam2, u, info):
        diag = diagnostics_fn(grid, config, u, lam1, lam2) if diagnostics_fn else {}
        steps.append(
            ContinuationStep(
                s,
                lam1,
                lam2,
                float(np.max(u.values)),
                float(np.min(u.values)),
                info["residual"],
                info["iterations"],
                diag,
            )
        )
        if fields is not None:
            fields.append(u)

    record(s, lam1, lam2, u, info)
    ds = 1.0 / n_target
    prev = None
    while s < 1.0 - 1e-12:
        ds = min(ds, 1.0 - s)
        s_new = s + ds
        lam1n, lam2n = path(s_new)
        if prev is not None and prev[1] < s:
            u_pred = Field(
                grid,
                u.values + (u.values - prev[0].values) * (ds / (s - prev[1])),
            )
        else:
            u_pred = u
        try:
            u_new, info = newton_solve(grid, config, lam1n, lam2n, u_pred, max_iter=14)
        except NewtonFailure as exc:
            ds /= 2.0
            if ds < ds_min:
                return ContinuationRun(
                    steps, "branch-end", f"step underflow at s={s:.4f}: {exc}", fields
                )
            continue
        prev = (u, s)
        u, s = u_new, s_new
        record(s, lam1n, lam2n, u, info)
        ds *= 1.3
    return ContinuationRun(steps, "completed", "", fields)


# ---------------------------------------------------------------------------
# concentration diagnostics
# ---------------------------------------------------------------------------


@dataclass
class MassReport:
    centers: list
    radii: list
    masses: dict  # (center_index, k) -> list over radii
    plateau: dict  # (center_index, k) -> (radius, mass)

    def to_dict(self):
        return {
            "radii": list(map(float, self.radii)),
            "masses": {
                f"{ci}:{k}": list(map(float, v)) for (ci, k), v in self.masses.items()
            },
            "plateau": {
                f"{ci}:{k}": [float(r), float(m)]
                for (ci, k), (r, m) in self.plateau.items()
            },
        }


def concentration_masses(grid, config: VortexConfig, u: Field, lam1, lam2, centers, radii):
    """Windowed masses m_k(p; r) over a radius ladder for each center."""
    radii = sorted(radii)
    for i, p in enumerate(centers):
        for q in centers[i + 1:]:
            if config.surface.distance(np.asarray(p), np.asarray(q)) < 2 * max(radii):
                raise ValueError("mass windows overlap; shrink the radius ladder")
    masses = {}
    plateau = {}
    for k, lam_fac in ((1, lam1), (2, lam2 * config.tau ** 2)):
        dens, _ = _exp_quotient_static(config, grid, u.values, k)
        total = 0.0
        for ci, p in enumerate(centers):
            d = config.surface.distance(grid.nodes, np.asarray(p, dtype=float))
            vals = []
            for r in radii:
                mask = d < r
                vals.append(lam_fac * float(np.sum(grid.weights[mask] * dens[mask])))
            masses[(ci, k)] = vals
            total += vals[-1]
            best = None
            for a in range(len(radii)):
                for b in range(a + 1, len(radii)):
                    if radii[b] <= 2.0 * radii[a] and radii[b] >= 1.9 * radii[a]:
                        drop = abs(vals[b] - vals[a]) / (abs(vals[a]) + 1e-300)
                        if best is None or drop < best[0]:
                            best = (drop, radii[a], vals[a])
            if best is None:
                best = (np.inf, radii[len(radii) // 2], vals[len(radii) // 2])
            plateau[(ci, k)] = (best[1], best[2])
        # windows are disjoint, so the center masses cannot exceed the budget
        assert total <= lam_fac * (1.0 + 1e-12) + 1e-12
    return MassReport(list(centers), radii, masses, plateau)


def peak_locations(grid, u: Field, count: int = 1, sign: float = 1.0):
    """Strongest local maxima of sign*u with quadratic sub-grid refinement."""
    vals = sign * u.values
    if not hasattr(grid, "n"):
        # sphere: return the strongest nodes (no lattice refinement)
        idx = np.argsort(-vals)[: count * 4]
        picks = []
        for i in idx:
            if all(
                grid.surface.distance(grid.nodes[i], grid.nodes[j]) > 4 * grid.spacing
                for j in picks
            ):
                picks.append(i)
            if len(picks) == count:
                break
        return [grid.nodes[i].copy() for i in picks]
    n = grid.n
    v = vals.reshape(n, n)
    lat = grid.surface.lattice
    shifts = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    is_max = np.ones_like(v, dtype=bool)
    for di, dj in shifts:
        is_max &= v >= np.roll(np.roll(v, di, axis=0), dj, axis=1)
    order = np.argsort(-v[is_max])
    coords = np.argwhere(is_max)[order]
    out = []
    for i0, j0 in coords[: 3 * count]:
        # quadratic refinement along each lattice direction
        vm = v[i0, j0]
        vx1, vx2 = v[(i0 - 1) % n, j0], v[(i0 + 1) % n, j0]
        vy1, vy2 = v[i0, (j0 - 1) % n], v[i0, (j0 + 1) % n]
        dx = 0.5 * (vx1 - vx2) / (vx1 - 2 * vm + vx2) if vx1 - 2 * vm + vx2 < 0 else 0.0
        dy = 0.5 * (vy1 - vy2) / (vy1 - 2 * vm + vy2) if vy1 - 2 * vm + vy2 < 0 else 0.0
        frac = (np.array([i0 + dx, j0 + dy])) / n
        pt = grid.surface.wrap(lat @ frac)
        if all(grid.surface.distance(pt, q) > 4 * grid.spacing for q in out):
            out.append(pt)
        if len(out) == count:
            break
    return out


def negative_component_sup(grid, config: VortexConfig, u: Field, lam2: float):
    """sup of lam2 tau V2 e^{-tau u} / int V2 e^{-tau u} (the vanishing-side
    density in the m2 = 0 regime)."""
    dens, _ = _exp_quotient_static(config, grid, u.values, 2)
    return float(lam2 * config.tau * np.max(dens))
