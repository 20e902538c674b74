"""Liouville bubbles, their mean-zero surface projections and the ansatz W.

A bubble of width delta_j sits at xi_j in its isothermal chart as
U = log(8 d^2/(d^2+|y|^2)^2).  Its projection PU solves the mean-zero
Poisson problem with right-hand side chi e^{-phi} e^U minus its average;
the approximate solution is W = sum_{j<=m1} PU_j - (1/tau) sum_{j>m1} PU_j.
All solves are spectral (exact at grid resolution), so the asymptotic
expansions of PU serve purely as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import build_grid
from .green import regular_part
from .hamiltonian import VortexConfig, rho_at_points
from .numutil import gauss_panels


class ContractViolation(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class Field:
    """Scalar samples on a quadrature grid with lazy spectral data."""

    __slots__ = ("grid", "values", "_coeff")

    def __init__(self, grid, values):
        self.grid = grid
        self.values = np.asarray(values, dtype=float).ravel()
        self._coeff = None

    @classmethod
    def from_callable(cls, grid, fn):
        return cls(grid, fn(grid.nodes))

    def coeff(self):
        if self._coeff is None:
            self._coeff = self.grid.to_coeff(self.values)
        return self._coeff

    def mean(self):
        return float(np.sum(self.grid.weights * self.values) / self.grid.surface.area)

    def minus_mean(self):
        return Field(self.grid, self.values - self.mean())

    def integrate(self):
        return float(np.sum(self.grid.weights * self.values))

    def laplacian(self):
        return Field(self.grid, self.grid.laplacian(self.values))

    def __add__(self, other):
        vals = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values + vals)

    def __sub__(self, other):
        vals = other.values if isinstance(other, Field) else other
        return Field(self.grid, self.values - vals)

    def __mul__(self, a):
        return Field(self.grid, self.values * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def sup(self):
        return float(np.max(np.abs(self.values)))


def poisson_solve_mean_zero(grid, f, tol: float = 1e-8) -> Field:
    """Solve -Delta_g u = f with mean-zero u; f must already be mean-zero."""
    vals = f.values if isinstance(f, Field) else np.asarray(f, dtype=float).ravel()
    scale = np.max(np.abs(vals)) + 1e-300
    mean = np.sum(grid.weights * vals) / grid.surface.area
    if abs(mean) > tol * scale:
        raise ContractViolation(
            f"poisson right-hand side has mean {mean:.3e} (scale {scale:.3e})"
        )
    u = grid.solve_poisson(vals - mean)
    u = u - np.sum(grid.weights * u) / grid.surface.area
    return Field(grid, u)


def bubble_U(chart, delta_j: float, x=None, y=None):
    """Liouville profile log(8 d^2/(d^2+|y|^2)^2) in the chart at xi."""
    if y is None:
        y = chart.to_chart(x)
    r2 = np.sum(np.atleast_2d(y) ** 2, axis=-1)
    out = np.log(8.0 * delta_j ** 2) - 2.0 * np.log(delta_j ** 2 + r2)
    return out if np.ndim(y) > 1 else float(out[0])


@dataclass
class BubbleFamily:
    """Bubble ansatz data: delta, (mu1, mu2), lambda offsets and the grid.

    delta_j^2 = mu_{k(j)}^2 delta^2 rho_j(xi_j); lambda_1 = 8 pi m1 + off1 and
    lambda_2 tau^2 = 8 pi m2 + off2 with |off_k| <= C0 delta^2 |log delta|.
    """

    config: VortexConfig
    delta: float
    grid: object = None
    mu: tuple = (1.0, 1.0)
    offsets: tuple = (0.0, 0.0)
    C0: float = 10.0
    resolution: int = None
    strict: bool = True
    # caches
    _pu: dict = field(default_factory=dict, repr=False)
    _rhs: dict = field(default_factory=dict, repr=False)
    _pz: dict = field(default_factory=dict, repr=False)
    _chart_y: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        cfg = self.config
        if self.grid is None:
            if self.resolution is None:
                raise ValueError("BubbleFamily needs a grid or a resolution")
            self.grid = build_grid(cfg.surface, self.resolution)
        self.rho_vals = rho_at_points(cfg)
        self.delta_j = np.array(
            [
                self.mu[0 if j < cfg.m1 else 1] * self.delta * np.sqrt(self.rho_vals[j])
                for j in range(cfg.m)
            ]
        )
        bound = self.C0 * self.delta ** 2 * abs(np.log(self.delta))
        if self.strict and (abs(self.offsets[0]) > bound or abs(self.offsets[1]) > bound):
            raise ContractViolation("lambda offsets exceed C0 delta^2 |log delta|")
        if np.any(self.delta_j > cfg.r0 / 2.0):
            raise ContractViolation("bubble width exceeds r0/2; shrink delta or mu")
        h = self.grid.spacing
        if self.strict and np.any(self.delta_j < 3.0 * h):
            raise ResolutionError(
                f"bubble width {self.delta_j.min():.3g} under-resolved (3h = {3*h:.3g})"
            )
        self.charts = [cfg.chart(j) for j in range(cfg.m)]
        self.cutoff = cfg.cutoff()

    @property
    def lam1(self):
        return 8.0 * np.pi * self.config.m1 + self.offsets[0]

    @property
    def lam2(self):
        return (8.0 * np.pi * self.config.m2 + self.offsets[1]) / self.config.tau ** 2

    def chart_coords(self, j: int):
        if j not in self._chart_y:
            y = self.charts[j].to_chart(self.grid.nodes)
            self._chart_y[j] = (y, np.sqrt(np.sum(y * y, axis=-1)))
        return self._chart_y[j]

    def bubble_rhs(self, j: int):
        """chi_j e^{-phi_j} e^{U_j} nodal values (no mean subtraction)."""
        if j not in self._rhs:
            y, s = self.chart_coords(j)
            ch = self.charts[j]
            dj = self.delta_j[j]
            vals = np.zeros(len(s))
            band = s < 2.0 * self.config.r0
            r2 = s[band] ** 2
            vals[band] = (
                self.cutoff(s[band])
                * np.exp(-ch.phi_hat(y[band]))
                * 8.0
                * dj ** 2
                / (dj ** 2 + r2) ** 2
            )
            self._rhs[j] = vals
        return self._rhs[j]

    def project_bubble(self, j: int) -> Field:
        """PU_j: mean-zero solution of the bubble projection problem."""
        if j not in self._pu:
            rhs = self.bubble_rhs(j)
            f = rhs - np.sum(self.grid.weights * rhs) / self.config.surface.area
            self._pu[j] = poisson_solve_mean_zero(self.grid, f)
        return self._pu[j]

    def sign(self, j: int) -> float:
        return 1.0 if j < self.config.m1 else -1.0 / self.config.tau

    def build_W(self) -> Field:
        vals = np.zeros(len(self.grid.nodes))
        for j in range(self.config.m):
            vals = vals + self.sign(j) * self.project_bubble(j).values
        return Field(self.grid, vals)

    def W_laplacian(self) -> Field:
        """Delta_g W assembled from the exact discrete right-hand sides."""
        vals = np.zeros(len(self.grid.nodes))
        area = self.config.surface.area
        for j in range(self.config.m):
            rhs = self.bubble_rhs(j)
            vals = vals - self.sign(j) * (rhs - np.sum(self.grid.weights * rhs) / area)
        return Field(self.grid, vals)

    # -- kernel elements ---------------------------------------------------
    def Z_ij(self, i: int, j: int):
        y, s = self.chart_coords(j)
        dj = self.delta_j[j]
        den = dj ** 2 + s ** 2
        if i == 0:
            return 2.0 * (dj ** 2 - s ** 2) / den
        return 4.0 * dj * y[..., i - 1] / den

    def _pz_rhs(self, i: int, j: int):
        """- chi_j Delta_g Z_ij = chi_j e^{-phi_j} e^{U_j} Z_ij nodal values."""
        return self.bubble_rhs(j) * self.Z_ij(i, j)

    def build_PZ(self, i: int, j: int) -> Field:
        key = (i, j)
        if key not in self._pz:
            rhs = self._pz_rhs(i, j)
            f = rhs - np.sum(self.grid.weights * rhs) / self.config.surface.area
            self._pz[key] = poisson_solve_mean_zero(self.grid, f)
        return self._pz[key]

    def build_PZ_sums(self, k: int) -> Field:
        key = ("sum", k)
        if key not in self._pz:
            idx = (
                range(self.config.m1)
                if k == 1
                else range(self.config.m1, self.config.m)
            )
            rhs = np.zeros(len(self.grid.nodes))
            for j in idx:
                rhs = rhs + self._pz_rhs(0, j)
            f = rhs - np.sum(self.grid.weights * rhs) / self.config.surface.area
            self._pz[key] = poisson_solve_mean_zero(self.grid, f)
        return self._pz[key]

    def pz_basis(self):
        """Columns: -Delta_g applied to [PZ_1, PZ_2, PZ_{ij}] (mean-zero rhs)."""
        cols, fields = [], []
        area = self.config.surface.area
        for k in (1, 2):
            idx = (
                range(self.config.m1)
                if k == 1
                else range(self.config.m1, self.config.m)
            )
            if not len(list(idx)):
                continue
            rhs = np.zeros(len(self.grid.nodes))
            for j in (
                range(self.config.m1)
                if k == 1
                else range(self.config.m1, self.config.m)
            ):
                rhs = rhs + self._pz_rhs(0, j)
            cols.append(rhs - np.sum(self.grid.weights * rhs) / area)
            fields.append(self.build_PZ_sums(k))
        for i in (1, 2):
            for j in range(self.config.m):
                rhs = self._pz_rhs(i, j)
                cols.append(rhs - np.sum(self.grid.weights * rhs) / area)
                fields.append(self.build_PZ(i, j))
        return np.array(cols).T, fields  # (-Delta_g PZ) columns, PZ fields

    # -- expansion helpers (test oracles) ----------------------------------
    def alpha_j(self, j: int) -> float:
        """Closed-form uniform constant in the PU expansion."""
        cfg = self.config
        dj = self.delta_j[j]
        area = cfg.surface.area
        chi = self.cutoff
        ch = self.charts[j]
        s, w = gauss_panels(1e-9, 2.0 * cfg.r0, 40, 12, geometric=True)
        ephi = np.exp(ch.phi_hat(np.stack([s, np.zeros_like(s)], axis=-1)))
        i_phi = 2.0 * np.pi * np.sum(w * chi(s) * (ephi - 1.0) / s ** 2)
        return float(
            -4.0 * np.pi / area * dj ** 2 * np.log(dj)
            + 2.0
            * dj ** 2
            / area
            * (i_phi + np.pi - chi.grad_log_integral())
        )

    def f_xi(self, j: int) -> Field:
        """Annulus source of the second-order chart correction F_xi."""
        cfg = self.config
        y, s = self.chart_coords(j)
        ch = self.charts[j]
        chi = self.cutoff
        vals = np.zeros(len(s))
        band = (s > cfg.r0) & (s < 2.0 * cfg.r0)
        sb = s[band]
        emphi = np.exp(-ch.phi_hat(y[band]))
        vals[band] = emphi * (
            (chi.dd(sb) + chi.d(sb) / sb) / sb ** 2 - 4.0 * chi.d(sb) / sb ** 3
        )
        vals = vals + (2.0 / cfg.surface.area) * chi.grad_cube_integral()
        return Field(self.grid, vals)

    def F_xi(self, j: int) -> Field:
        f = self.f_xi(j)
        return poisson_solve_mean_zero(self.grid, f - f.mean(), tol=1e-6)


def snap_to_node(grid, point):
    """Nearest grid node (sup-norm tests align bubble peaks to nodes)."""
    d = grid.surface.distance(grid.nodes, np.asarray(point, dtype=float))
    return grid.nodes[int(np.argmin(d))].copy()


def pu_expansion_oracle(family: BubbleFamily, j: int, x):
    """Lemma-style prediction of PU_j away from order delta^2 F terms.

    chi [U - log(8 d^2)] + 8 pi H(., xi_j) + alpha_j; the caller compares
    PU_j against this and fits the remainder order.
    """
    cfg = family.config
    ch = family.charts[j]
    y = ch.to_chart(x)
    s = np.linalg.norm(np.atleast_2d(y), axis=-1)
    dj = family.delta_j[j]
    U = bubble_U(ch, dj, y=np.atleast_2d(y))
    chi = family.cutoff(s)
    H = regular_part(cfg.green, x, cfg.xi[j], cfg.r0, family.cutoff)
    return chi * (U - np.log(8.0 * dj ** 2)) + 8.0 * np.pi * H + family.alpha_j(j)
