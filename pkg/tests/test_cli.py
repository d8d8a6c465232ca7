import subprocess
import sys

import pytest

from smalescan import cli

CONFIG_1D = """
metric.kind = euclidean
metric.dim = 1
problem.f = -52.210207281762692   # -(2.3 pi)^2
problem.nonlinearity = cubic
problem.cubic_b = 1.0
mesh.dim = 1
mesh.resolution = 400
scan.r_min = 0.001
scan.grid_points = 100
scan.k_eigs = 2
branch.steps = 10
branch.step_size = 0.001
output.dir = out
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG_1D)
    return path


class TestConfigParsing:
    def test_roundtrip(self, config_file):
        cfg = cli.load_config(config_file)
        assert cfg.mesh_resolution == 400
        assert cfg.problem_nonlinearity == "cubic"
        assert cfg.scan_k_eigs == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(cli.ConfigError):
            cli.load_config(tmp_path / "nope.cfg")

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(CONFIG_1D + "\nscan.grid_pionts = 10\n")
        with pytest.raises(cli.ConfigError, match="grid_pionts"):
            cli.load_config(path)

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("metric.dim = 1\n")
        with pytest.raises(cli.ConfigError, match="problem.f"):
            cli.load_config(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(CONFIG_1D + "\nmesh.dim = 1\n")
        with pytest.raises(cli.ConfigError, match="duplicate"):
            cli.load_config(path)

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(CONFIG_1D.replace("metric.dim = 1", "metric.dim = 2"))
        with pytest.raises(cli.ConfigError, match="mesh.dim"):
            cli.load_config(path)

    def test_bad_expression(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(CONFIG_1D.replace("-52.210207281762692   # -(2.3 pi)^2", "exp(x1)"))
        with pytest.raises(cli.ConfigError, match="problem.f"):
            cli.load_config(path)

    def test_r_min_floor(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(CONFIG_1D.replace("scan.r_min = 0.001", "scan.r_min = 1e-5"))
        with pytest.raises(cli.ConfigError, match="r_min"):
            cli.load_config(path)


class TestRun:
    def test_missing_config_exits_1(self, tmp_path):
        assert cli.run("scan", tmp_path / "none.cfg") == cli.EXIT_USAGE

    def test_unknown_subcommand_exits_1(self, config_file):
        assert cli.run("frobnicate", config_file) == cli.EXIT_USAGE

    def test_scan_writes_csv(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("scan", config_file, out_dir=out) == cli.EXIT_OK
        lines = (out / "scan.csv").read_text().splitlines()
        assert lines[0] == "r,lambda_1,lambda_2,n_neg"
        assert len(lines) == 101
        last = lines[-1].split(",")
        assert last[-1] == "4"

    def test_conjugate_csv(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("conjugate", config_file, out_dir=out) == cli.EXIT_OK
        lines = (out / "conjugate.csv").read_text().splitlines()
        assert lines[0] == "r_star,multiplicity,bracket_width"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 4
        for k, row in enumerate(rows, start=1):
            assert float(row[0]) == pytest.approx(k / 4.6, abs=1e-4)
            assert row[1] == "1"

    def test_crossing_csv(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("crossing", config_file, out_dir=out) == cli.EXIT_OK
        lines = (out / "crossing.csv").read_text().splitlines()
        assert lines[0] == "r_star,i,j,gamma_fd,gamma_bd,signature,agreement"
        assert len(lines) == 5  # four multiplicity-1 crossings
        for line in lines[1:]:
            vals = line.split(",")
            assert float(vals[3]) < 0.0
            assert vals[5] == "-1"
            assert float(vals[6]) <= 0.02

    def test_verify_index_report(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("verify-index", config_file, out_dir=out) == cli.EXIT_OK
        text = (out / "index_report.txt").read_text()
        assert text.splitlines()[0] == "mu=4 sum_m=4 PASS"
        assert "corollary_bound=4" in text

    def test_bifurcate_writes_branches(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("bifurcate", config_file, out_dir=out) == cli.EXIT_OK
        files = sorted(out.glob("branch_*.csv"))
        assert len(files) == 4
        lines = files[0].read_text().splitlines()
        assert lines[0] == "r,h1_norm,residual_norm,newton_iters,converged"
        # the supercritical side carries all branch.steps samples
        assert len(lines) >= 11
        assert all(line.split(",")[4] == "1" for line in lines[1:])

    def test_all_runs_everything(self, config_file, tmp_path):
        out = tmp_path / "o"
        assert cli.run("all", config_file, out_dir=out) == cli.EXIT_OK
        for name in ("scan.csv", "conjugate.csv", "crossing.csv", "index_report.txt"):
            assert (out / name).is_file()

    def test_determinism_byte_identical(self, config_file, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.run("conjugate", config_file, out_dir=out1) == cli.EXIT_OK
        assert cli.run("conjugate", config_file, out_dir=out2) == cli.EXIT_OK
        for name in ("scan.csv", "conjugate.csv"):
            if (out1 / name).exists():
                assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        assert (out1 / "conjugate.csv").read_bytes() == (out2 / "conjugate.csv").read_bytes()

    def test_mesh_dump(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(CONFIG_1D + "\nmesh.dump = true\n")
        out = tmp_path / "o"
        assert cli.run("scan", path, out_dir=out) == cli.EXIT_OK
        assert (out / "nodes.csv").is_file()
        assert (out / "elements.csv").is_file()

    def test_degenerate_endpoint_exits_3(self, tmp_path):
        path = tmp_path / "deg.cfg"
        path.write_text(
            "metric.kind = euclidean\n"
            "metric.dim = 1\n"
            "problem.f = -61.685027506808488\n"  # -(2.5 pi)^2
            "mesh.dim = 1\n"
            "mesh.resolution = 24000\n"
            "scan.grid_points = 50\n"
        )
        out = tmp_path / "o"
        assert cli.run("verify-index", path, out_dir=out) == cli.EXIT_DEGENERATE
        assert "degenerate" in (out / "index_report.txt").read_text()


class TestMainEntry:
    def test_usage_error_exit_code(self):
        assert cli.main(["scan"]) == cli.EXIT_USAGE  # missing --config

    def test_threads_env_fallback(self, config_file, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        out = tmp_path / "o"
        code = cli.main(["scan", "--config", str(config_file), "--out", str(out)])
        assert code == cli.EXIT_OK

    def test_subprocess_invocation(self, config_file, tmp_path):
        out = tmp_path / "o"
        proc = subprocess.run(
            [sys.executable, "-m", "smalescan.cli", "verify-index",
             "--config", str(config_file), "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "index_report.txt").read_text().startswith("mu=4 sum_m=4 PASS")
