import json
import os
import subprocess
import sys

import numpy as np
import pytest

from wildflow import cli, runio

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def small_pc_config():
    return {
        "mode": "iterate",
        "pressure": {"a": 0.5, "gamma": 2.0},
        "source": {"matrix": [[0.0, 1.0], [-1.0, 0.0]]},
        "grid": {"resolution": 32, "length": 1.0},
        "time": {"t0": 0.0, "t1": 1.0, "slices": 5},
        "density": {
            "kind": "piecewise_constant",
            "strips": [{"x1": [0.0, 0.5], "rho": 1.0},
                       {"x1": [0.5, 1.0], "rho": 2.0}],
            "chi": 2.0,
        },
        "iteration": {"stages": 3, "window": [0.0, 1.0]},
        "verify": {"weak_tol": 1e-6, "admissibility_tol": 1e-6},
    }


class TestConfigErrors:
    def test_missing_file(self):
        with pytest.raises(cli.ConfigError):
            cli.load_config("/nonexistent/路径.json")

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(cli.ConfigError):
            cli.load_config(str(p))

    def test_missing_key_pointer(self, tmp_path):
        cfg = small_pc_config()
        del cfg["density"]["kind"]
        with pytest.raises(cli.ConfigError) as e:
            cli.build_state(cfg, 0)
        assert "/density" in str(e.value)

    def test_chi_below_pressure_exits_nonzero(self, tmp_path):
        cfg = small_pc_config()
        cfg["density"]["chi"] = 0.1
        code, _ = cli.run(cfg, str(tmp_path / "o"), seed=0)
        assert code != 0


class TestRun:
    @pytest.fixture(scope="class")
    def completed(self, tmp_path_factory):
        out = str(tmp_path_factory.mktemp("run"))
        code, manifest = cli.run(small_pc_config(), out, seed=42)
        assert code == 0
        return out, manifest

    def test_artifacts_exist(self, completed):
        out, manifest = completed
        for name in ("manifest.json", "stages.csv", "census.csv",
                     "verification.json", "fields.json"):
            assert os.path.exists(os.path.join(out, name))

    def test_stage_rows_contract(self, completed):
        import csv
        out, _ = completed
        rows = list(csv.DictReader(open(os.path.join(out, "stages.csv"))))
        assert len(rows) == 3
        d_prev = None
        for r in rows:
            d = float(r["dist_integral"])
            if d_prev is not None:
                k = int(r["stage"])
                assert d <= min(2.0 ** (-(k - 1)), 0.5 * d_prev) + \
                    float(r["quad_tol"])
            d_prev = d

    def test_determinism_same_seed(self, completed, tmp_path):
        out, manifest = completed
        out2 = str(tmp_path / "rerun")
        code, manifest2 = cli.run(small_pc_config(), out2, seed=42)
        assert code == 0
        h1 = runio.manifest_hash(manifest)
        h2 = runio.manifest_hash(manifest2)
        assert h1 == h2
        # bit-identical dumps
        a = open(os.path.join(out, "m_t0002.f64"), "rb").read()
        b = open(os.path.join(out2, "m_t0002.f64"), "rb").read()
        assert a == b

    def test_stages_override(self, tmp_path):
        out = str(tmp_path / "ov")
        code, _ = cli.run(small_pc_config(), out, seed=1, stages_override=1)
        import csv
        rows = list(csv.DictReader(open(os.path.join(out, "stages.csv"))))
        assert len(rows) == 1


class TestGeometrySubcommand:
    def test_pentagon_output(self, capsys):
        rc = cli.main(["geometry", "--rho", "1.0", "--q", "0.5", "--seed", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "N* = 5 points" in out
        assert "LP slack" in out
        assert out.count("v") >= 5

    def test_boundary_target_fails(self, capsys):
        rc = cli.main(["geometry", "--rho", "1.0", "--q", "0.5",
                       "--target", "1.0,0.0,0.5,0.0", "--seed", "0"])
        assert rc == 4

    def test_console_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "wildflow.cli", "geometry",
                            "--rho", "1.0", "--q", "0.5"],
                           capture_output=True, text=True, timeout=120)
        assert r.returncode == 0
        assert "N* = 5" in r.stdout


def test_bundled_configs_parse():
    for name in ("two_region.json", "admissibility_pc.json",
                 "perturbed_density.json", "lipschitz.json"):
        cfg = cli.load_config(os.path.join(CONFIG_DIR, name))
        assert "mode" in cfg and "density" in cfg
