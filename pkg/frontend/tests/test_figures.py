from pathlib import Path

import numpy as np
import pytest

from synthdata import write_energy, write_rates
from slipplots.figures import render
from slipplots.schemas import SchemaMismatch

GOLDEN = Path(__file__).parent / "golden"


def test_all_kinds_render(run_dir, tmp_path):
    for kind in ("energy", "rates", "fields", "trajectory"):
        out = tmp_path / f"{kind}.png"
        meta = render(run_dir, kind, out)
        assert out.stat().st_size > 0
        assert meta["content_sha256"]


def test_unknown_kind_rejected(run_dir, tmp_path):
    with pytest.raises(SchemaMismatch, match="unknown figure kind"):
        render(run_dir, "volume", tmp_path / "x.png")


def test_energy_embedded_monotonicity_check(run_dir, tmp_path):
    meta = render(run_dir, "energy", tmp_path / "energy.png")
    assert meta["max_energy_increment"] <= 1e-12
    write_energy(run_dir / "energy.csv", increasing=True)
    meta = render(run_dir, "energy", tmp_path / "energy2.png")
    assert meta["max_energy_increment"] > 1e-6


def test_render_is_deterministic(run_dir, tmp_path):
    a = render(run_dir, "energy", tmp_path / "a.png")
    b = render(run_dir, "energy", tmp_path / "b.png")
    assert a["content_sha256"] == b["content_sha256"]


@pytest.mark.parametrize("kind", ["energy", "rates"])
def test_golden_hash(run_dir, tmp_path, kind):
    # recorded at first generation; delete the golden file to regenerate
    # after a matplotlib upgrade
    meta = render(run_dir, kind, tmp_path / f"{kind}.png")
    golden = GOLDEN / f"{kind}.sha256"
    if not golden.is_file():
        GOLDEN.mkdir(exist_ok=True)
        golden.write_text(meta["content_sha256"] + "\n")
    assert meta["content_sha256"] == golden.read_text().strip()


def test_rates_annotations_echo_footers(run_dir, tmp_path):
    footers = ("slope_r_delta = 0.4472608066131536",
               "r2_r_delta = 0.9936492103839475")
    write_rates(run_dir / "rates.csv", footers=footers)
    meta = render(run_dir, "rates", tmp_path / "rates.png")
    assert meta["annotations"] == list(footers)


def test_rates_synthetic_power_law_slope(run_dir, tmp_path):
    # data rows carry r_delta = sqrt(delta) exactly; the cross-check fit of
    # the plotted points must reproduce the exponent
    meta = render(run_dir, "rates", tmp_path / "rates.png")
    assert abs(meta["check_slopes"]["r_delta"] - 0.5) <= 1e-3


def test_rates_footer_without_column(run_dir, tmp_path):
    write_rates(run_dir / "rates.csv",
                footers=("slope_missing_metric = 0.5",))
    with pytest.raises(SchemaMismatch, match="no column"):
        render(run_dir, "rates", tmp_path / "rates.png")


def test_empty_energy_rejected(run_dir, tmp_path):
    (run_dir / "energy.csv").write_text("")
    with pytest.raises(SchemaMismatch, match="empty"):
        render(run_dir, "energy", tmp_path / "energy.png")


def test_fields_incomplete_grid_rejected(run_dir, tmp_path):
    lines = (run_dir / "fields_final.csv").read_text().splitlines()
    (run_dir / "fields_final.csv").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(SchemaMismatch, match="full grid"):
        render(run_dir, "fields", tmp_path / "fields.png")


def test_fields_metadata_matches_source(run_dir, tmp_path):
    meta = render(run_dir, "fields", tmp_path / "fields.png")
    rho = np.array([float(ln.split(",")[4]) for ln in
                    (run_dir / "fields_final.csv").read_text().splitlines()[1:]])
    assert meta["rho_min"] == rho.min()
    assert meta["rho_max"] == rho.max()


def test_trajectory_metadata_matches_source(run_dir, tmp_path):
    meta = render(run_dir, "trajectory", tmp_path / "traj.png")
    wall = np.array([float(ln.split(",")[7]) for ln in
                     (run_dir / "body.csv").read_text().splitlines()[1:]])
    assert meta["min_wall_distance"] == wall.min()
    assert meta["band_margin"] == pytest.approx(0.2 + 1.5 * 0.05, abs=1e-15)
