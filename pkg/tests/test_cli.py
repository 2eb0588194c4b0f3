import numpy as np
import pytest

from rwtq.cli import main


def test_theta_prints_coefficients(capsys):
    assert main(["theta", "--b1", "1", "--b2", "1", "--kappa", "1", "1.2", "1", "1", "1", "1", "1"]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("theta1"))
    assert np.allclose([float(v) for v in line.split()[1:]], [2.69, 1.39, 1.69, 1.19], atol=0.005)


def test_exit_codes(tmp_path):
    assert main(["theta", "--kappa", "1,2"]) == 2
    assert main(["run", "--config", str(tmp_path / "none.ini")]) == 2
    assert main(["eval", "--model-dir", str(tmp_path)]) == 3
    assert main(["bogus"]) == 2
    (tmp_path / "manifest.json").write_text("{not json")
    assert main(["eval", "--model-dir", str(tmp_path)]) == 3


def test_run_and_eval_round_trip(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    out = tmp_path / "out"
    cfg.write_text(f"[experiment]\ntarget_sizes = 20\nsource_size = 40\nseeds = 0\neval_episodes = 5\nwidth = 8\n"
                   f"output_path = {out}\nsave_models = true\n[train]\nmax_epochs = 2\n"
                   "[target]\nnoise_dims = 1\n[source]\nnoise_dims = 1\nkappa2 = 1.2\n")
    assert main(["run", "--config", str(cfg)]) == 0
    assert (out / "summary.csv").exists()
    for method in ("transfer", "single"):
        assert main(["eval", "--model-dir", str(out / "models" / "seed0_n20" / method), "--episodes", "7"]) == 0
    assert "episodes 7" in capsys.readouterr().out
    assert main(["eval", "--model-dir", str(out / "models" / "seed0_n20" / "single"), "--episodes", "0"]) == 2


def test_dry_run_flag(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[experiment]\noutput_path = {tmp_path / 'o'}\n")
    assert main(["run", "--config", str(cfg), "--dry-run"]) == 0
    assert (tmp_path / "o" / "manifest.json").exists()


def test_density_bench(tmp_path):
    cfg = tmp_path / "d.ini"
    cfg.write_text(f"[density]\ntarget_sizes = 200,400\nsource_size = 1000\nseeds = 0,1\n"
                   f"output_path = {tmp_path / 'b'}\n")
    assert main(["density-bench", "--config", str(cfg)]) == 0
    lines = (tmp_path / "b" / "ratio_rmse.csv").read_text().splitlines()
    assert lines[0] == "n0,source_size,seed,method,rmse" and len(lines) == 1 + 2 * 2 * 2
    cfg.write_text("[density]\nfloor = -1\n")
    assert main(["density-bench", "--config", str(cfg)]) == 2
