import subprocess
import sys

from slipplots.cli import main


def test_cli_renders(run_dir, tmp_path, capsys):
    out = tmp_path / "traj.png"
    code = main([str(run_dir), "--kind", "trajectory", "--out", str(out)])
    assert code == 0
    assert out.stat().st_size > 0
    assert "wrote" in capsys.readouterr().out


def test_cli_schema_error_exit_code(run_dir, tmp_path, capsys):
    (run_dir / "rates.csv").unlink()
    code = main([str(run_dir), "--kind", "rates",
                 "--out", str(tmp_path / "r.png")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_cli_help_lists_kinds():
    proc = subprocess.run([sys.executable, "-m", "slipplots.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for kind in ("energy", "rates", "fields", "trajectory"):
        assert kind in proc.stdout
