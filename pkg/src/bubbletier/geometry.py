"""Surfaces (unit sphere, flat torus), isothermal charts and quadrature grids.

Points on the torus are 2-vectors in the fundamental cell; points on the
sphere are unit 3-vectors.  Charts map a neighborhood of a center point to a
disk in R^2 where the metric is conformally Euclidean, g = e^{phi_hat} |dy|^2,
normalized so phi_hat(0) = 0 and grad phi_hat(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class SurfaceSpec:
    """A compact surface: 'sphere' (unit) or 'torus' (flat, given lattice)."""

    kind: str
    lattice: np.ndarray | None = None  # 2x2, columns are the lattice vectors

    def __post_init__(self):
        if self.kind == "torus":
            if self.lattice is None:
                object.__setattr__(self, "lattice", np.eye(2))
            lat = np.asarray(self.lattice, dtype=float)
            if abs(np.linalg.det(lat)) < 1e-14:
                raise ConfigurationError("torus lattice vectors are dependent")
            object.__setattr__(self, "lattice", lat)
        elif self.kind != "sphere":
            raise ConfigurationError(f"unknown surface kind {self.kind!r}")

    @property
    def area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * np.pi
        return abs(np.linalg.det(self.lattice))

    def curvature(self, x) -> float:
        return 1.0 if self.kind == "sphere" else 0.0

    # --- point utilities -------------------------------------------------
    def wrap(self, x):
        """Torus: map points to the fundamental cell [0,1)^2 in lattice coords."""
        if self.kind != "torus":
            return np.asarray(x, dtype=float)
        x = np.asarray(x, dtype=float)
        t = np.linalg.solve(self.lattice, x.T).T % 1.0
        return (self.lattice @ t.T).T

    def distance(self, x, p):
        """Geodesic distance (vectorized over leading axis of x)."""
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.kind == "sphere":
            dot = np.clip(x @ p, -1.0, 1.0)
            crs = np.linalg.norm(np.cross(x, p), axis=-1)
            return np.arctan2(crs, dot)
        diff = x - p
        t = np.linalg.solve(self.lattice, diff.reshape(-1, 2).T)  # (2, M)
        t = t - np.round(t)
        best = None
        for n1 in (-1, 0, 1):
            for n2 in (-1, 0, 1):
                v = self.lattice @ (t + np.array([[n1], [n2]]))
                d = np.hypot(v[0], v[1])
                best = d if best is None else np.minimum(best, d)
        return best.reshape(x.shape[:-1]) if x.ndim > 1 else float(best[0])

    def random_points(self, n, rng):
        if self.kind == "sphere":
            v = rng.normal(size=(n, 3))
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        t = rng.random((n, 2))
        return (self.lattice @ t.T).T


def _sphere_frame(xi):
    """Deterministic orthonormal tangent frame at a sphere point."""
    xi = np.asarray(xi, dtype=float)
    a = np.array([0.0, 0.0, 1.0])
    if abs(xi @ a) > 0.9:
        a = np.array([1.0, 0.0, 0.0])
    t1 = np.cross(a, xi)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(xi, t1)
    return t1, t2


@dataclass(frozen=True)
class Chart:
    """Isothermal chart centered at ``xi`` with radius ``r0``.

    Torus charts are lattice translations (phi_hat = 0); sphere charts are
    the stereographic projection from the antipode, rescaled so that
    |y| = 2 tan(d/2) and e^{phi_hat(y)} = (1 + |y|^2/4)^{-2}.
    """

    surface: SurfaceSpec
    xi: np.ndarray
    r0: float
    frame: tuple = field(default=None, repr=False)

    def to_chart(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = x.reshape(-1, x.shape[-1])
        if self.surface.kind == "torus":
            t = np.linalg.solve(self.surface.lattice, (xs - self.xi).T)
            t = t - np.round(t)
            y = (self.surface.lattice @ t).T
        else:
            t1, t2 = self.frame
            dot = np.clip(xs @ self.xi, -1.0, 1.0)
            v = xs - dot[:, None] * self.xi
            nv = np.linalg.norm(v, axis=1)
            d = np.arctan2(nv, dot)
            scale = np.zeros_like(d)
            ok = nv > 1e-300
            scale[ok] = 2.0 * np.tan(d[ok] / 2.0) / nv[ok]
            y = np.stack([scale * (v @ t1), scale * (v @ t2)], axis=-1)
        return y[0] if single else y

    def from_chart(self, y):
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        ys = y.reshape(-1, 2)
        if self.surface.kind == "torus":
            x = self.surface.wrap(ys + self.xi)
        else:
            t1, t2 = self.frame
            r = np.linalg.norm(ys, axis=1)
            d = 2.0 * np.arctan(r / 2.0)
            u = np.zeros_like(ys)
            ok = r > 1e-300
            u[ok] = ys[ok] / r[ok, None]
            direc = u[:, :1] * t1 + u[:, 1:] * t2
            x = np.cos(d)[:, None] * self.xi + np.sin(d)[:, None] * direc
        return x[0] if single else x

    def phi_hat(self, y):
        y = np.asarray(y, dtype=float)
        if self.surface.kind == "torus":
            return np.zeros(y.shape[:-1])
        r2 = np.sum(y * y, axis=-1)
        return -2.0 * np.log1p(r2 / 4.0)

    def e_phi(self, y):
        return np.exp(self.phi_hat(y))


def chart_at(surface: SurfaceSpec, xi, r0: float) -> Chart:
    """Chart centered at xi; `r0` is the caller's working radius."""
    xi = np.asarray(xi, dtype=float)
    if surface.kind == "sphere":
        xi = xi / np.linalg.norm(xi)
        return Chart(surface, xi, r0, frame=_sphere_frame(xi))
    return Chart(surface, surface.wrap(xi), r0)


def default_r0(surface: SurfaceSpec, points) -> float:
    """Working chart radius: quarter of the smallest pairwise separation,
    capped by the injectivity-type scale of the surface."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if surface.kind == "sphere":
        inj = np.pi
    else:
        lat = surface.lattice
        cands = [lat[:, 0], lat[:, 1], lat[:, 0] + lat[:, 1], lat[:, 0] - lat[:, 1]]
        inj = min(np.linalg.norm(v) for v in cands)
    dmin = inj
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dmin = min(dmin, surface.distance(points[i], points[j]))
    return min(inj, dmin) / 4.0


# ---------------------------------------------------------------------------
# quadrature grids with spectral transforms
# ---------------------------------------------------------------------------


class TorusGrid:
    """Uniform N x N periodic grid supporting FFT-based spectral calculus."""

    def __init__(self, surface: SurfaceSpec, n: int):
        if n < 8:
            raise ConfigurationError("torus resolution must be >= 8")
        self.surface = surface
        self.n = n
        lat = surface.lattice
        frac = np.arange(n) / n
        t1, t2 = np.meshgrid(frac, frac, indexing="ij")
        pts = np.stack([t1.ravel(), t2.ravel()], axis=0)
        self._nodes = (lat @ pts).T
        self.node_weight = surface.area / n ** 2
        k = np.fft.fftfreq(n, d=1.0 / n)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        kvec = np.stack([k1, k2], axis=0)
        kappa = 2.0 * np.pi * np.einsum("ij,jkl->ikl", np.linalg.inv(lat).T, kvec)
        self.lap_eig = -(kappa[0] ** 2 + kappa[1] ** 2)  # eigenvalues of Delta_g
        self.shape = (n, n)

    @property
    def nodes(self):
        return self._nodes

    @property
    def weights(self):
        return np.full(self.n ** 2, self.node_weight)

    @property
    def spacing(self):
        lat = self.surface.lattice
        return min(np.linalg.norm(lat[:, 0]), np.linalg.norm(lat[:, 1])) / self.n

    def to_coeff(self, values):
        return np.fft.fft2(values.reshape(self.shape)) / self.n ** 2

    def from_coeff(self, coeff):
        return np.real(np.fft.ifft2(coeff * self.n ** 2)).ravel()

    def laplacian(self, values):
        return self.from_coeff(self.lap_eig * self.to_coeff(values))

    def solve_poisson(self, values):
        """Mean-zero u with -Delta_g u = f (f must have zero mean)."""
        c = self.to_coeff(values)
        out = np.zeros_like(c)
        nz = self.lap_eig != 0.0
        out[nz] = c[nz] / (-self.lap_eig[nz])
        return self.from_coeff(out)

    def gradient_sq_integral(self, values):
        c = self.to_coeff(values)
        return float(self.surface.area * np.sum(-self.lap_eig * np.abs(c) ** 2))


def _legendre_table(lmax: int, mu: np.ndarray):
    """Fully normalized associated Legendre values.

    Returns a list ``P[m]`` of arrays (lmax+1-m, len(mu)), with the
    normalization 2*pi * integral(P_lm * P_l'm dmu) = delta_{ll'}.
    """
    nmu = len(mu)
    s = np.sqrt(np.maximum(0.0, 1.0 - mu ** 2))
    tables = []
    pmm = np.full(nmu, np.sqrt(1.0 / (4.0 * np.pi)))
    for m in range(lmax + 1):
        rows = np.zeros((lmax + 1 - m, nmu))
        rows[0] = pmm
        if m + 1 <= lmax:
            rows[1] = mu * np.sqrt(2.0 * m + 3.0) * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l ** 2 - 1.0) / (l ** 2 - m ** 2))
            b = np.sqrt(
                ((2.0 * l + 1.0) / (2.0 * l - 3.0))
                * ((l - 1.0) ** 2 - m ** 2)
                / (l ** 2 - m ** 2)
            )
            rows[l - m] = a * mu * rows[l - 1 - m] - b * rows[l - 2 - m]
        tables.append(rows)
        if m < lmax:
            pmm = -np.sqrt((2.0 * m + 3.0) / (2.0 * m + 2.0)) * s * pmm
    return tables


class SphereGrid:
    """Gauss-Legendre x uniform-longitude grid with spherical-harmonic calculus.

    Band limit L; latitudes are GL nodes in cos(theta) (never at the poles),
    longitudes are 2L+2 uniform points.  Fields are stored flattened from
    shape (L+1, 2L+2).
    """

    def __init__(self, surface: SurfaceSpec, lmax: int):
        if lmax < 8:
            raise ConfigurationError("sphere band limit must be >= 8")
        self.surface = surface
        self.lmax = lmax
        self.nlat = lmax + 1
        self.nlon = 2 * lmax + 2
        mu, wmu = np.polynomial.legendre.leggauss(self.nlat)
        order = np.argsort(-mu)  # theta increasing from north pole
        self.mu = mu[order]
        self.wmu = wmu[order]
        self.theta = np.arccos(self.mu)
        self.phi = 2.0 * np.pi * np.arange(self.nlon) / self.nlon
        st = np.sqrt(1.0 - self.mu ** 2)
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        self._nodes = np.stack(
            [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
        ).reshape(-1, 3)
        self._w2d = np.broadcast_to(
            (self.wmu * 2.0 * np.pi / self.nlon)[:, None], (self.nlat, self.nlon)
        )
        self._plm = None
        self.ell = [np.arange(m, lmax + 1) for m in range(lmax + 1)]
        self.shape = (self.nlat, self.nlon)

    @property
    def plm(self):
        if self._plm is None:
            self._plm = _legendre_table(self.lmax, self.mu)
        return self._plm

    @property
    def nodes(self):
        return self._nodes

    @property
    def weights(self):
        return self._w2d.ravel()

    @property
    def spacing(self):
        return np.pi / self.nlat

    def to_coeff(self, values):
        """Spherical-harmonic analysis; returns list over m of complex (L+1-m,)."""
        f = values.reshape(self.shape)
        g = np.fft.rfft(f, axis=1) * (2.0 * np.pi / self.nlon)
        coeffs = []
        for m in range(self.lmax + 1):
            gm = g[:, m] * self.wmu
            coeffs.append(self.plm[m] @ gm)
        return coeffs

    def from_coeff(self, coeffs):
        g = np.zeros((self.nlat, self.nlon // 2 + 1), dtype=complex)
        for m in range(self.lmax + 1):
            g[:, m] = coeffs[m] @ self.plm[m]
        return np.fft.irfft(g * self.nlon, n=self.nlon, axis=1).ravel()

    def _map_coeff(self, values, fn):
        coeffs = self.to_coeff(values)
        out = [fn(c, self.ell[m]) for m, c in enumerate(coeffs)]
        return self.from_coeff(out)

    def laplacian(self, values):
        return self._map_coeff(values, lambda c, ls: -ls * (ls + 1.0) * c)

    def solve_poisson(self, values):
        def fn(c, ls):
            out = np.zeros_like(c)
            nz = ls > 0
            out[nz] = c[nz] / (ls[nz] * (ls[nz] + 1.0))
            return out

        return self._map_coeff(values, fn)

    def gradient_sq_integral(self, values):
        coeffs = self.to_coeff(values)
        tot = 0.0
        for m, c in enumerate(coeffs):
            ls = self.ell[m]
            contrib = np.sum(ls * (ls + 1.0) * np.abs(c) ** 2)
            tot += contrib if m == 0 else 2.0 * contrib
        return float(tot)


def build_grid(surface: SurfaceSpec, resolution: int):
    """Quadrature grid: N x N lattice (torus) or band-limit-L product (sphere)."""
    if resolution < 8:
        raise ConfigurationError("resolution must be >= 8")
    if surface.kind == "torus":
        return TorusGrid(surface, resolution)
    return SphereGrid(surface, resolution)


def integrate(grid, f):
    """Integral over the surface of a callable or nodal-value array."""
    vals = f(grid.nodes) if callable(f) else np.asarray(f, dtype=float).ravel()
    if not np.all(np.isfinite(vals)):
        bad = np.argmax(~np.isfinite(vals))
        raise NumericError(f"non-finite sample at node {grid.nodes[bad]}")
    return float(np.sum(grid.weights * vals))
