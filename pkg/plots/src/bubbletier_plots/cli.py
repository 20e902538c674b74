"""Figure CLI: per-figure rendering plus render_all over an artifact directory."""

from __future__ import annotations

import argparse
import os
import sys

from . import figures
from .artifacts import SchemaError

FIGURES = {
    "contours": (figures.render_field_contours, "field binary (json+bin base path)"),
    "landscape": (figures.render_phi_landscape, "hamiltonian scan JSON"),
    "bsign": (figures.render_bsign_map, "hamiltonian bscan JSON"),
    "slopes": (figures.render_slope_fit, "residual/expansion CSV"),
    "branch": (figures.render_branch, "continuation run.json"),
}

# render_all looks for these conventional artifact names
_AUTO = [
    ("contours", "G", "green_contours.png"),
    ("contours", "W", "ansatz_contours.png"),
    ("landscape", "phi_scan.json", "phi_landscape.png"),
    ("bsign", "b_scan.json", "bsign_map.png"),
    ("slopes", "residual.csv", "residual_slopes.png"),
    ("slopes", "expansion.csv", "expansion_slopes.png"),
    ("branch", "run.json", "branch.png"),
]


def render_all(artifact_dir: str, out_dir: str = None) -> list:
    out_dir = out_dir or artifact_dir
    os.makedirs(out_dir, exist_ok=True)
    rendered = []
    for kind, name, outname in _AUTO:
        src = os.path.join(artifact_dir, name)
        probe = src + (".json" if kind == "contours" else "")
        if not os.path.exists(probe):
            continue
        fn = FIGURES[kind][0]
        out = os.path.join(out_dir, outname)
        fn(src, out)
        rendered.append(out)
    return rendered


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="bubbletier-plots", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (fn, desc) in FIGURES.items():
        sp = sub.add_parser(name, help=f"render from {desc}")
        sp.add_argument("--in", dest="src", required=True)
        sp.add_argument("--out", required=True)
        if name == "slopes":
            sp.add_argument("--ycol")
        sp.set_defaults(fn=fn, kind=name)
    ra = sub.add_parser("render_all", help="render every recognized artifact in a directory")
    ra.add_argument("dir")
    ra.add_argument("--out-dir")
    args = p.parse_args(argv)
    try:
        if args.command == "render_all":
            rendered = render_all(args.dir, args.out_dir)
            if not rendered:
                print("no recognized artifacts found", file=sys.stderr)
                return 2
            for r in rendered:
                print(f"rendered {r}")
            return 0
        kwargs = {}
        if getattr(args, "ycol", None):
            kwargs["ycol"] = args.ycol
        args.fn(args.src, args.out, **kwargs)
        print(f"rendered {args.out}")
        return 0
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
