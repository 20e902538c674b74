"""Command-line interface: experiment orchestration and artifact emission.

Exit codes: 0 success, 2 configuration/validation error, 3 numeric failure.
Every JSON artifact carries the schema version and the config hash; float
formatting goes through json.dumps on Python floats, so identical configs
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import ConfigurationError, NumericError, SurfaceSpec, build_grid
from .green import green_eval, green_evaluator, green_mean, robin
from .hamiltonian import (
    AdmissibilityError,
    admissibility_report,
    find_critical_points,
    grad_phi_star_norm,
    phi_star,
)
from .ansatz import BubbleFamily, ContractViolation, ResolutionError
from .analysis import (
    expansion_coefficients,
    expansion_JW,
    kernel_principal_angles,
    near_kernel,
    nonlinear_correction,
    residual_R,
)
from .config import RunConfig
from .field_io import read_field, write_field, write_json
from .numutil import fit_loglog
from .solver import (
    NewtonFailure,
    concentration_masses,
    continuation_run,
    negative_component_sup,
    peak_locations,
)


def _max_workers():
    try:
        return max(1, int(os.environ.get("BUBBLETIER_THREADS", "1")))
    except ValueError:
        return 1


def _sweep(fn, items):
    workers = _max_workers()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_green_check(args):
    if args.config:
        rc = RunConfig.from_toml(args.config)
        surface, res, stamp = rc.surface, rc.resolution, rc.stamp()
    else:
        surface = (
            SurfaceSpec("torus", np.eye(2))
            if args.surface == "torus"
            else SurfaceSpec("sphere")
        )
        res = args.resolution
        stamp = {"schema_version": "1", "config_hash": "adhoc", "version": _version()}
    ev = green_evaluator(surface)
    grid = build_grid(surface, res)
    rng = np.random.default_rng(7)
    pts = surface.random_points(64, rng)
    sym = 0.0
    for i in range(0, 40, 2):
        sym = max(sym, abs(green_eval(ev, pts[i], pts[i + 1]) - green_eval(ev, pts[i + 1], pts[i])))
    mean_err = 0.0
    for p in pts[:10]:
        mean_err = max(mean_err, abs(green_mean(ev, grid, p)))
    # chart-based 5-point Laplacian away from the pole
    h = 1e-3
    pde_err = 0.0
    from .geometry import chart_at

    pairs = [
        (p, x)
        for p, x in zip(pts[::2], pts[1::2])
        if float(surface.distance(np.atleast_2d(x), p)[0]) > 0.2
    ][:10]
    for p, x in pairs:
        ch = chart_at(surface, x, 0.1)
        stn = [np.zeros(2), [h, 0], [-h, 0], [0, h], [0, -h]]
        vals = [green_eval(ev, ch.from_chart(np.array(s, dtype=float)), p) for s in stn]
        lap = (sum(vals[1:]) - 4 * vals[0]) / h ** 2 / float(ch.e_phi(np.zeros(2)))
        # away from the pole -Delta G = -1/|S|, so Delta G = +1/|S|
        pde_err = max(pde_err, abs(lap - 1.0 / surface.area))
    rob = [float(robin(ev, p)) for p in pts[:3]]
    out = dict(stamp)
    out.update(
        {
            "surface": surface.kind,
            "symmetry_err": float(sym),
            "mean_err": float(mean_err),
            "pde_residual_err": float(pde_err),
            "robin_values": rob,
        }
    )
    _emit(out, args.out)
    return 0


def cmd_green_field(args):
    """Sample G(., p) on the grid and write it in the field binary format."""
    rc = RunConfig.from_toml(args.config)
    grid = build_grid(rc.surface, args.resolution or rc.resolution)
    ev = green_evaluator(rc.surface)
    p = rc.vortex.xi[args.pole]
    d = rc.surface.distance(grid.nodes, p)
    vals = np.zeros(len(grid.nodes))
    ok = d > 1e-9
    vals[ok] = green_eval(ev, grid.nodes[ok], p)
    if np.any(~ok):
        vals[~ok] = np.max(vals[ok])
    from .ansatz import Field

    write_field(args.out, Field(grid, vals), extra={"config_hash": rc.config_hash(), "kind": "green"})
    print(f"wrote {args.out}.json / {args.out}.bin")
    return 0


def cmd_hamiltonian_scan(args):
    """Scan phi* over the offset xi_2 - xi_1 (m = 2 torus configurations)."""
    rc = RunConfig.from_toml(args.config)
    cfg = rc.vortex
    if cfg.surface.kind != "torus" or cfg.m != 2:
        raise ConfigurationError("scan requires a two-point torus configuration")
    n = args.scan_resolution
    lat = cfg.surface.lattice
    vals = np.full((n, n), np.nan)
    base = cfg.xi[0]
    for i in range(n):
        for j in range(n):
            off = lat @ np.array([(i + 0.5) / n, (j + 0.5) / n])
            try:
                c = cfg.with_points([base, cfg.surface.wrap(base + off)])
            except AdmissibilityError:
                continue
            vals[i, j] = phi_star(c)
    from .green import torus_green_critical_points

    cps = torus_green_critical_points(green_evaluator(cfg.surface))
    out = dict(rc.stamp())
    out["phi_scan"] = {
        "n": n,
        "lattice": lat.T.tolist(),
        "values": [[None if np.isnan(v) else float(v) for v in row] for row in vals],
        "critical_offsets": [
            {"point": list(map(float, c["point"])), "kind": c["kind"]} for c in cps
        ],
    }
    _emit(out, args.out)
    return 0


def cmd_hamiltonian_bscan(args):
    """Sign map of B1* over the offset xi_2 - xi_1 on the torus."""
    rc = RunConfig.from_toml(args.config)
    cfg = rc.vortex
    if cfg.surface.kind != "torus" or cfg.m != 2:
        raise ConfigurationError("bscan requires a two-point torus configuration")
    n = args.scan_resolution
    lat = cfg.surface.lattice
    base = cfg.xi[0]
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            off = lat @ np.array([(i + 0.5) / n, (j + 0.5) / n])
            try:
                c = cfg.with_points([base, cfg.surface.wrap(base + off)])
                from .hamiltonian import B_star

                b, _ = B_star(c, 1, grid_n=args.grid_n)
                row.append(float(b))
            except AdmissibilityError:
                row.append(None)
        rows.append(row)
    from .green import torus_green_critical_points

    cps = torus_green_critical_points(green_evaluator(cfg.surface))
    out = dict(rc.stamp())
    out["b_scan"] = {
        "n": n,
        "lattice": lat.T.tolist(),
        "B1": rows,
        "half_periods": [
            {"point": list(map(float, c["point"])), "kind": c["kind"]} for c in cps
        ],
    }
    _emit(out, args.out)
    return 0


def cmd_hamiltonian_eval(args):
    rc = RunConfig.from_toml(args.config)
    rep = admissibility_report(rc.vortex, grid_n=rc.bstar_grid)
    out = dict(rc.stamp())
    out.update(
        {
            "phi_star": float(phi_star(rc.vortex)),
            "grad_norm": float(grad_phi_star_norm(rc.vortex)),
            "A_star": rep.to_dict()["A_star"],
            "B_star": rep.to_dict()["B_star"],
            "A_unc": rep.to_dict()["A_unc"],
            "B_unc": rep.to_dict()["B_unc"],
            "side_recommendation": rep.side,
        }
    )
    _emit(out, args.out)
    return 0


def cmd_hamiltonian_critical(args):
    rc = RunConfig.from_toml(args.config)
    rng = np.random.default_rng(args.seed)
    results = []
    for _ in range(args.seeds):
        jitter = 0.3 * rc.vortex.r0
        pts = [
            _jitter_point(rc.vortex.surface, p, rng.uniform(-jitter, jitter, size=2))
            for p in rc.vortex.xi
        ]
        try:
            cfg = rc.vortex.with_points(pts)
        except AdmissibilityError:
            continue
        res = find_critical_points(cfg, mode=args.mode)
        results.append(
            {
                "xi": [list(map(float, q)) for q in res["xi"]],
                "grad_norm": res["grad_norm"],
                "kind": res["kind"],
                "stable": res["stable"],
                "converged": res["converged"],
                "phi_star": float(phi_star(res["config"])),
            }
        )
    out = dict(rc.stamp())
    out["critical_points"] = results
    _emit(out, args.out)
    return 0


def _jitter_point(surface, p, step):
    from .geometry import chart_at

    ch = chart_at(surface, p, 1.0)
    return ch.from_chart(np.asarray(step, dtype=float))


def cmd_ansatz_build(args):
    rc = RunConfig.from_toml(args.config)
    grid = build_grid(rc.surface, rc.resolution)
    fam = BubbleFamily(rc.vortex, args.delta, grid=grid, mu=rc.mu, C0=rc.c0)
    W = fam.build_W()
    write_field(args.out, W, extra={"config_hash": rc.config_hash(), "delta": args.delta})
    print(f"wrote {args.out}.json / {args.out}.bin (mean {W.mean():.2e})")
    return 0


def _family_for(rc, delta, offsets=(0.0, 0.0)):
    grid = build_grid(rc.surface, rc.resolution)
    return BubbleFamily(rc.vortex, delta, grid=grid, mu=rc.mu, offsets=offsets, C0=rc.c0)


def cmd_analysis_expand(args):
    rc = RunConfig.from_toml(args.config)
    deltas = [float(x) for x in args.deltas.split(",")] if args.deltas else rc.deltas
    coeff = expansion_coefficients(rc.vortex, grid_n=rc.bstar_grid)
    rep = expansion_JW(
        rc.vortex,
        deltas,
        rc.mu,
        offset_fn=lambda d: (rc.offset_scale * d ** 2, rc.offset_scale * d ** 2),
        resolution_fn=lambda d: rc.resolution,
        coeff=coeff,
    )
    out = dict(rc.stamp())
    out["expansion"] = rep.to_dict()
    out["coefficients"] = {
        "phi_star": coeff.phi,
        "A_star": [coeff.A1, coeff.A2],
        "B_star": [coeff.B1, coeff.B2],
    }
    _emit(out, args.out)
    if args.csv:
        _write_csv(
            args.csv,
            ["delta", "numeric_J", "analytic_J", "gap"],
            zip(rep.deltas, rep.numeric, rep.analytic, rep.gaps),
        )
    return 0


def cmd_analysis_residual(args):
    rc = RunConfig.from_toml(args.config)
    deltas = [float(x) for x in args.deltas.split(",")] if args.deltas else rc.deltas

    def one(d):
        fam = _family_for(rc, d, offsets=(rc.offset_scale * d ** 2, rc.offset_scale * d ** 2))
        _, sn = residual_R(fam, sigma=rc.sigma)
        return sn

    norms = _sweep(one, deltas)
    slope, _, r2 = fit_loglog(deltas, norms)
    out = dict(rc.stamp())
    out["residual"] = {
        "deltas": deltas,
        "star_norms": [float(x) for x in norms],
        "slope": float(slope),
        "r2": float(r2),
        "grad_phi_star": float(grad_phi_star_norm(rc.vortex)),
    }
    _emit(out, args.out)
    if args.csv:
        _write_csv(args.csv, ["delta", "star_norm"], zip(deltas, norms))
    return 0


def cmd_analysis_kernel(args):
    rc = RunConfig.from_toml(args.config)
    fam = _family_for(rc, args.delta)
    count = 2 + 2 * rc.vortex.m + 2
    vals, fields, resid = near_kernel(fam, count=count)
    ang = kernel_principal_angles(fam, fields[: 2 + 2 * rc.vortex.m])
    out = dict(rc.stamp())
    out["kernel"] = {
        "delta": args.delta,
        "eigenvalues": [float(v) for v in vals],
        "residuals": [float(r) for r in resid],
        "principal_angles_deg": [float(np.degrees(a)) for a in ang],
    }
    _emit(out, args.out)
    return 0


def cmd_analysis_correct(args):
    rc = RunConfig.from_toml(args.config)
    deltas = [float(x) for x in args.deltas.split(",")] if args.deltas else rc.deltas
    rows = []
    for d in deltas:
        fam = _family_for(rc, d, offsets=(rc.offset_scale * d ** 2, rc.offset_scale * d ** 2))
        res = nonlinear_correction(fam)
        rows.append(
            {
                "delta": d,
                "phi_sup": float(res.phi.sup()),
                "energy": float(res.energy),
                "iterations": res.iterations,
                "multiplier_max": res.multiplier_max(),
                "star_R": float(res.star_R),
            }
        )
    slope, _, r2 = fit_loglog([r["delta"] for r in rows], [r["phi_sup"] for r in rows])
    out = dict(rc.stamp())
    out["correction"] = {"rows": rows, "phi_slope": float(slope), "r2": float(r2)}
    _emit(out, args.out)
    if args.csv:
        _write_csv(
            args.csv,
            ["delta", "phi_sup", "energy", "multiplier_max"],
            [(r["delta"], r["phi_sup"], r["energy"], r["multiplier_max"]) for r in rows],
        )
    return 0


def cmd_solve_continue(args):
    rc = RunConfig.from_toml(args.config)
    cfg = rc.vortex
    grid = build_grid(rc.surface, rc.resolution)
    rep = admissibility_report(cfg, grid_n=rc.bstar_grid)
    sides = {"8pi-minus": -1.0, "8pi-plus": +1.0}
    sgn = sides[args.to]
    recommended = {"left": -1.0, "right": +1.0}.get(rep.side[0])
    eps_end = args.eps
    eps_start = args.eps_start if args.eps_start else 4.0 * eps_end
    m1, m2, tau = cfg.m1, cfg.m2, cfg.tau

    def path(s):
        eps = eps_start * (eps_end / eps_start) ** s
        lam1 = 8.0 * np.pi * m1 + sgn * eps
        lam2 = (8.0 * np.pi * m2 + sgn * eps) / tau ** 2 if m2 else args.lam2_scale * eps
        return lam1, lam2

    # warm start from the corrected ansatz at the starting offset, with mu
    # equilibrated so the dilation multipliers vanish (Broyden returns
    # immediately when the leading-order mu* is already critical)
    delta0 = float(np.sqrt(eps_start))
    from .analysis import critical_mu, equilibrate_mu

    coeff = expansion_coefficients(cfg, grid_n=rc.bstar_grid)
    mu0 = critical_mu(coeff, delta0, (sgn, sgn), (m1, m2))
    offs = (
        sgn * eps_start,
        sgn * eps_start if m2 else args.lam2_scale * eps_start * tau ** 2,
    )
    mu_eq, res = equilibrate_mu(cfg, delta0, grid, offs, mu0, C0=rc.c0, tol=1e-8)
    fam = BubbleFamily(cfg, delta0, grid=grid, mu=mu_eq, offsets=offs, C0=rc.c0, strict=False)
    seed = fam.build_W() + res.phi

    mass_r = 0.45 * cfg.r0 * 4.0

    def diag(grid, config, u, lam1, lam2):
        out = {"neg_sup": negative_component_sup(grid, config, u, lam2)}
        try:
            mr = concentration_masses(
                grid, config, u, lam1, lam2, config.xi, [0.5 * mass_r, mass_r]
            )
            out["mass1"] = mr.masses[(0, 1)][-1]
            if config.m2:
                out["mass2"] = mr.masses[(1, 2)][-1]
        except ValueError:
            pass
        return out

    run = continuation_run(grid, cfg, path, seed, n_target=args.steps, diagnostics_fn=diag,
                           keep_fields=True)
    outdir = args.outdir or rc.output_dir
    os.makedirs(outdir, exist_ok=True)
    payload = dict(rc.stamp())
    payload["continuation"] = run.to_dict()
    payload["admissibility_side"] = rep.side
    payload["requested_side"] = args.to
    payload["side_matches"] = bool(recommended == sgn) if recommended is not None else None
    write_json(os.path.join(outdir, "run.json"), payload)
    if run.fields:
        write_field(os.path.join(outdir, "u_final"), run.fields[-1])
    print(f"continuation {run.status}; {len(run.steps)} steps -> {outdir}/run.json")
    return 0 if run.status == "completed" else 3


def cmd_solve_masses(args):
    field = read_field(args.field)
    rc = RunConfig.from_toml(args.config)
    a, b, n = args.radii.split(":")
    radii = list(np.linspace(float(a), float(b), int(n)))
    u = field
    lam1 = args.lam1 if args.lam1 else 8.0 * np.pi * rc.vortex.m1
    lam2 = args.lam2 if args.lam2 else 8.0 * np.pi * rc.vortex.m2 / rc.vortex.tau ** 2
    mr = concentration_masses(field.grid, rc.vortex, u, lam1, lam2, rc.vortex.xi, radii)
    out = dict(rc.stamp())
    out["masses"] = mr.to_dict()
    pk = peak_locations(field.grid, u, count=rc.vortex.m1)
    out["peaks_positive"] = [list(map(float, p)) for p in pk]
    _emit(out, args.out)
    return 0


def cmd_report(args):
    if not os.path.isdir(args.dir) or not os.listdir(args.dir):
        print(f"error: no artifacts in {args.dir!r}", file=sys.stderr)
        return 2
    summary = {"artifacts": []}
    for name in sorted(os.listdir(args.dir)):
        if name.endswith(".json"):
            with open(os.path.join(args.dir, name)) as fh:
                data = json.load(fh)
            summary["artifacts"].append(
                {"file": name, "keys": sorted(data.keys()), "config_hash": data.get("config_hash")}
            )
    _emit(summary, os.path.join(args.dir, "report.json"))
    return 0


# ---------------------------------------------------------------------------


def _version():
    from . import __version__

    return __version__


def _emit(payload: dict, out: str = None):
    text = json.dumps(payload, sort_keys=True, indent=1)
    if out:
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {out}")
    else:
        print(text)


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(x)) if isinstance(x, (int, float, np.floating)) else x for x in row])
    print(f"wrote {path}")


def build_parser():
    p = argparse.ArgumentParser(prog="bubbletier", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("green", help="Green function checks")
    gs = g.add_subparsers(dest="sub", required=True)
    gc = gs.add_parser("check")
    gc.add_argument("-c", "--config")
    gc.add_argument("--surface", choices=["torus", "sphere"], default="torus")
    gc.add_argument("--resolution", type=int, default=256)
    gc.add_argument("--out")
    gc.set_defaults(fn=cmd_green_check)
    gf = gs.add_parser("field")
    gf.add_argument("-c", "--config", required=True)
    gf.add_argument("--pole", type=int, default=0)
    gf.add_argument("--resolution", type=int)
    gf.add_argument("--out", required=True)
    gf.set_defaults(fn=cmd_green_field)

    h = sub.add_parser("hamiltonian", help="phi*, A*, B* evaluation")
    hs = h.add_subparsers(dest="sub", required=True)
    he = hs.add_parser("eval")
    he.add_argument("-c", "--config", required=True)
    he.add_argument("--out")
    he.set_defaults(fn=cmd_hamiltonian_eval)
    hc = hs.add_parser("critical")
    hc.add_argument("-c", "--config", required=True)
    hc.add_argument("--seeds", type=int, default=4)
    hc.add_argument("--seed", type=int, default=0)
    hc.add_argument("--mode", default="saddle")
    hc.add_argument("--out")
    hc.set_defaults(fn=cmd_hamiltonian_critical)
    hsc = hs.add_parser("scan")
    hsc.add_argument("-c", "--config", required=True)
    hsc.add_argument("--scan-resolution", type=int, default=33)
    hsc.add_argument("--out")
    hsc.set_defaults(fn=cmd_hamiltonian_scan)
    hb = hs.add_parser("bscan")
    hb.add_argument("-c", "--config", required=True)
    hb.add_argument("--scan-resolution", type=int, default=7)
    hb.add_argument("--grid-n", type=int, default=96)
    hb.add_argument("--out")
    hb.set_defaults(fn=cmd_hamiltonian_bscan)

    a = sub.add_parser("ansatz", help="bubble ansatz construction")
    asub = a.add_subparsers(dest="sub", required=True)
    ab = asub.add_parser("build")
    ab.add_argument("-c", "--config", required=True)
    ab.add_argument("--delta", type=float, required=True)
    ab.add_argument("--out", required=True)
    ab.set_defaults(fn=cmd_ansatz_build)

    an = sub.add_parser("analysis", help="residuals, expansion, reduction")
    ans = an.add_subparsers(dest="sub", required=True)
    for name, fn, extra in [
        ("expand", cmd_analysis_expand, True),
        ("residual", cmd_analysis_residual, True),
        ("correct", cmd_analysis_correct, True),
    ]:
        sp = ans.add_parser(name)
        sp.add_argument("-c", "--config", required=True)
        sp.add_argument("--deltas")
        sp.add_argument("--out")
        if extra:
            sp.add_argument("--csv")
        sp.set_defaults(fn=fn)
    ak = ans.add_parser("kernel")
    ak.add_argument("-c", "--config", required=True)
    ak.add_argument("--delta", type=float, default=0.01)
    ak.add_argument("--out")
    ak.set_defaults(fn=cmd_analysis_kernel)

    s = sub.add_parser("solve", help="full PDE solves")
    ss = s.add_subparsers(dest="sub", required=True)
    sc = ss.add_parser("continue")
    sc.add_argument("-c", "--config", required=True)
    sc.add_argument("--to", choices=["8pi-minus", "8pi-plus"], required=True)
    sc.add_argument("--eps", type=float, default=1e-3)
    sc.add_argument("--eps-start", type=float)
    sc.add_argument("--steps", type=int, default=8)
    sc.add_argument("--lam2-scale", type=float, default=1.0)
    sc.add_argument("--outdir")
    sc.set_defaults(fn=cmd_solve_continue)
    sm = ss.add_parser("masses")
    sm.add_argument("--field", required=True)
    sm.add_argument("-c", "--config", required=True)
    sm.add_argument("--radii", default="0.05:0.4:8")
    sm.add_argument("--lam1", type=float)
    sm.add_argument("--lam2", type=float)
    sm.add_argument("--out")
    sm.set_defaults(fn=cmd_solve_masses)

    r = sub.add_parser("report", help="summarize an artifact directory")
    r.add_argument("-d", "--dir", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigurationError, AdmissibilityError, ContractViolation, ResolutionError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, NewtonFailure, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
