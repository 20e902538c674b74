"""Deterministic figure rendering from bubbletier artifacts.

All figures use the Agg backend, a fixed style and stripped PNG metadata, so
re-rendering the same inputs reproduces the same pixels.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .artifacts import load_csv, load_field, load_json

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _new_axes(title):
    fig, ax = plt.subplots(figsize=(6.0, 4.6))
    ax.set_title(title)
    return fig, ax


def _finish(fig, out):
    fig.tight_layout()
    fig.savefig(out, **_SAVE_KW)
    plt.close(fig)
    return out


def render_field_contours(field_path: str, out: str, title: str = None, levels: int = 24):
    """Contour map of a field binary (Green function, ansatz or solution)."""
    header, grid = load_field(field_path)
    fig, ax = _new_axes(title or f"field contours ({header.get('kind', 'field')})")
    if header["surface"]["kind"] == "torus":
        n = header["resolution"]
        x = (np.arange(n) + 0.0) / n
        cs = ax.contourf(x, x, grid.T, levels=levels, cmap="RdBu_r")
        ax.contour(x, x, grid.T, levels=levels, colors="k", linewidths=0.3)
        ax.set_xlabel("lattice fraction 1")
        ax.set_ylabel("lattice fraction 2")
        ax.set_aspect("equal")
    else:
        lmax = header["resolution"]
        theta = np.linspace(0, np.pi, lmax + 1)
        phi = np.linspace(0, 2 * np.pi, 2 * lmax + 2, endpoint=False)
        cs = ax.contourf(phi, theta, grid, levels=levels, cmap="RdBu_r")
        ax.set_xlabel("longitude")
        ax.set_ylabel("colatitude")
        ax.invert_yaxis()
    fig.colorbar(cs, ax=ax, shrink=0.85)
    return _finish(fig, out)


def render_phi_landscape(scan_path: str, out: str):
    """phi* over the pair offset with the classified half-periods marked."""
    data = load_json(scan_path, "phi_scan")["phi_scan"]
    vals = np.array(
        [[np.nan if v is None else v for v in row] for row in data["values"]]
    )
    n = data["n"]
    frac = (np.arange(n) + 0.5) / n
    fig, ax = _new_axes("vortex Hamiltonian landscape over the pair offset")
    cs = ax.contourf(frac, frac, vals.T, levels=30, cmap="viridis")
    fig.colorbar(cs, ax=ax, shrink=0.85, label="phi*")
    markers = {"saddle": ("x", "white"), "minimum": ("o", "red"), "maximum": ("^", "orange")}
    seen = set()
    for cp in data["critical_offsets"]:
        kind = cp["kind"]
        m, c = markers.get(kind, ("s", "gray"))
        label = kind if kind not in seen else None
        seen.add(kind)
        ax.plot(cp["point"][0], cp["point"][1], m, color=c, markersize=9, label=label)
    ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("offset fraction 1")
    ax.set_ylabel("offset fraction 2")
    ax.set_aspect("equal")
    return _finish(fig, out)


def render_bsign_map(scan_path: str, out: str):
    """Two-color sign map of B1* over the pair offset, half-periods marked."""
    data = load_json(scan_path, "b_scan")["b_scan"]
    vals = np.array([[np.nan if v is None else v for v in row] for row in data["B1"]])
    n = data["n"]
    frac = (np.arange(n) + 0.5) / n
    fig, ax = _new_axes("sign of B1* over the pair offset")
    signed = np.where(np.isnan(vals), np.nan, np.sign(vals))
    cs = ax.pcolormesh(frac, frac, signed.T, cmap="coolwarm", vmin=-1, vmax=1, shading="nearest")
    fig.colorbar(cs, ax=ax, shrink=0.85, ticks=[-1, 0, 1], label="sign B1*")
    for cp in data["half_periods"]:
        mark = "o" if cp["kind"] == "minimum" else "x"
        ax.plot(cp["point"][0], cp["point"][1], mark, color="k", markersize=10)
        ax.annotate(cp["kind"], cp["point"], fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("offset fraction 1")
    ax.set_ylabel("offset fraction 2")
    ax.set_aspect("equal")
    return _finish(fig, out)


def render_slope_fit(csv_path: str, out: str, xcol: str = "delta", ycol: str = None, title: str = None):
    """Log-log decay plot with the fitted slope annotated."""
    cols = load_csv(csv_path)
    x = cols[xcol]
    if ycol is None:
        ycol = [c for c in cols if c != xcol][0]
    y = np.abs(cols[ycol])
    lx, ly = np.log(x), np.log(np.maximum(y, 1e-300))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fig, ax = _new_axes(title or f"{ycol} vs {xcol}")
    ax.loglog(x, y, "o", color="tab:blue")
    xs = np.array([x.min(), x.max()])
    ax.loglog(xs, np.exp(coef[1]) * xs ** coef[0], "-", color="tab:orange",
              label=f"slope {coef[0]:.2f}")
    ax.set_xlabel(xcol)
    ax.set_ylabel(ycol)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, out)


def render_branch(run_path: str, out: str):
    """Continuation diagram: sup u and windowed masses against lambda_1."""
    data = load_json(run_path, "continuation")["continuation"]
    steps = data["steps"]
    lam = np.array([st["lam1"] for st in steps])
    sup = np.array([st["sup_u"] for st in steps])
    fig, ax = _new_axes("continuation branch")
    ax.plot(lam, sup, "o-", color="tab:blue", label="sup u")
    ax.set_xlabel("lambda_1")
    ax.set_ylabel("sup u", color="tab:blue")
    if any("mass1" in st for st in steps):
        ax2 = ax.twinx()
        m1 = np.array([st.get("mass1", np.nan) for st in steps]) / (8 * np.pi)
        ax2.plot(lam, m1, "s--", color="tab:green", label="m1 / 8 pi")
        if any("mass2" in st for st in steps):
            m2 = np.array([st.get("mass2", np.nan) for st in steps]) / (8 * np.pi)
            ax2.plot(lam, m2, "d--", color="tab:red", label="m2 / 8 pi")
        ax2.axhline(1.0, color="gray", lw=0.8, ls=":")
        ax2.set_ylabel("windowed mass / 8 pi")
        ax2.legend(loc="lower right", fontsize=8)
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, out)
