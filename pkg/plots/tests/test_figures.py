"""End-to-end: produce artifacts through the primary CLI, render every figure
kind, and check the renders are deterministic."""

import os
import subprocess
import sys

import matplotlib.image as mpimg
import numpy as np
import pytest

from bubbletier_plots.artifacts import SchemaError, load_csv, load_field, load_json
from bubbletier_plots.cli import main as plots_main, render_all

REPO = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
TORUS_MIN = os.path.join(REPO, "configs", "torus_min.toml")
TORUS_SADDLE = os.path.join(REPO, "configs", "torus_saddle.toml")


def _cli(*args):
    proc = subprocess.run(
        [sys.executable, "-m", "bubbletier.cli", *args],
        capture_output=True,
        text=True,
        cwd=REPO,
    )
    assert proc.returncode == 0, f"bubbletier {' '.join(args)}:\n{proc.stderr}"
    return proc


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory):
    adir = tmp_path_factory.mktemp("artifacts")
    _cli("green", "field", "-c", TORUS_MIN, "--resolution", "128",
         "--out", str(adir / "G"))
    _cli("ansatz", "build", "-c", TORUS_SADDLE, "--delta", "0.02",
         "--out", str(adir / "W"))
    _cli("hamiltonian", "scan", "-c", TORUS_MIN, "--scan-resolution", "25",
         "--out", str(adir / "phi_scan.json"))
    _cli("hamiltonian", "bscan", "-c", TORUS_MIN, "--scan-resolution", "5",
         "--grid-n", "96", "--out", str(adir / "b_scan.json"))
    _cli("analysis", "residual", "-c", TORUS_SADDLE, "--deltas", "0.02,0.014,0.01",
         "--out", str(adir / "residual.json"), "--csv", str(adir / "residual.csv"))
    _cli("analysis", "expand", "-c", TORUS_MIN, "--deltas", "0.02,0.014,0.01",
         "--out", str(adir / "expansion.json"), "--csv", str(adir / "expansion.csv"))
    _cli("solve", "continue", "-c", TORUS_MIN, "--to", "8pi-minus",
         "--eps", "4e-3", "--eps-start", "8e-3", "--steps", "3",
         "--outdir", str(adir))
    return adir


def test_artifact_loaders(artifacts):
    header, grid = load_field(str(artifacts / "G"))
    assert header["surface"]["kind"] == "torus"
    assert grid.shape == (128, 128)
    cols = load_csv(str(artifacts / "residual.csv"))
    assert "delta" in cols and len(cols["delta"]) == 3
    run = load_json(str(artifacts / "run.json"), "continuation")
    assert run["continuation"]["status"] == "completed"
    assert run["side_matches"] is True


def test_schema_version_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": "99", "x": 1}')
    with pytest.raises(SchemaError):
        load_json(str(bad))


def test_render_each_figure_kind(artifacts, tmp_path):
    out = tmp_path / "figs"
    out.mkdir()
    assert plots_main(["contours", "--in", str(artifacts / "G"),
                       "--out", str(out / "g.png")]) == 0
    assert plots_main(["contours", "--in", str(artifacts / "W"),
                       "--out", str(out / "w.png")]) == 0
    assert plots_main(["landscape", "--in", str(artifacts / "phi_scan.json"),
                       "--out", str(out / "phi.png")]) == 0
    assert plots_main(["bsign", "--in", str(artifacts / "b_scan.json"),
                       "--out", str(out / "bsign.png")]) == 0
    assert plots_main(["slopes", "--in", str(artifacts / "residual.csv"),
                       "--out", str(out / "res.png")]) == 0
    assert plots_main(["slopes", "--in", str(artifacts / "expansion.csv"),
                       "--ycol", "gap", "--out", str(out / "gap.png")]) == 0
    assert plots_main(["branch", "--in", str(artifacts / "run.json"),
                       "--out", str(out / "branch.png")]) == 0
    for name in ("g", "w", "phi", "bsign", "res", "gap", "branch"):
        assert (out / f"{name}.png").stat().st_size > 5000


def test_render_all_and_determinism(artifacts, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    r1 = render_all(str(artifacts), str(out1))
    r2 = render_all(str(artifacts), str(out2))
    names1 = sorted(os.path.basename(p) for p in r1)
    names2 = sorted(os.path.basename(p) for p in r2)
    assert names1 == names2
    # every figure kind is produced
    assert {
        "green_contours.png",
        "ansatz_contours.png",
        "phi_landscape.png",
        "bsign_map.png",
        "residual_slopes.png",
        "expansion_slopes.png",
        "branch.png",
    } <= set(names1)
    for name in names1:
        a = mpimg.imread(out1 / name)
        b = mpimg.imread(out2 / name)
        assert np.array_equal(a, b), f"{name} not deterministic"


def test_render_all_empty_dir(tmp_path):
    assert plots_main(["render_all", str(tmp_path)]) == 2


def test_bsign_map_signs(artifacts):
    data = load_json(str(artifacts / "b_scan.json"), "b_scan")["b_scan"]
    vals = np.array(
        [[np.nan if v is None else v for v in row] for row in data["B1"]], dtype=float
    )
    # the scan brackets both signs (saddles positive, minimum negative)
    assert np.nanmax(vals) > 0
    assert np.nanmin(vals) < 0
