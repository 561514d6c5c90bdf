"""Command line: config validation, outputs, manifests, determinism, exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from nlcflow import __version__
from nlcflow.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from nlcflow.config import ConfigError, parse_config
from nlcflow.grid import load_snapshot
from nlcflow.trajectory import SnapshotSeries

MINIMAL = {"grid": {"points_per_dim": 32}, "simulate": {"n_steps": 10}}


def write_cfg(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write_cfg(root, MINIMAL)
    outs = []
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(root / name)]) == EXIT_OK
        outs.append(root / name)
    return outs


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.grid.N == 64 and cfg.solver.scheme == "IF-RK4"
        assert cfg.decay.n_samples == 15

    @pytest.mark.parametrize("body, path", [
        ({"grid": {"points_per_dim": 24}}, "grid.points_per_dim"),
        ({"grid": {"n_dims": 4}}, "grid.n_dims"),
        ({"solver": {"scheme": "euler"}}, "solver.scheme"),
        ({"solver": {"cfl_safety": 2}}, "solver.cfl_safety"),
        ({"solver": {"dealias": "yes"}}, "solver.dealias"),
        ({"decay": {"n_samples": 0}}, "decay.n_samples"),
        ({"decay": {"norms": ["L2"]}}, "decay.norms[0]"),
        ({"decay": {"derivative_orders": [[3, 0]]}}, "decay.derivative_orders[0]"),
        ({"decay": {"epsilons": [0.01, -1]}}, "decay.epsilons[1]"),
        ({"simulate": {"n_steps": 5, "t_end": 1.0}}, "simulate"),
        ({"trajectory": {"drift": [[1, 2]]}}, "trajectory.drift"),
        ({"grid": {"extra": 1}}, "grid.extra"),
        ({"schema_version": 9}, "schema_version"),
    ])
    def test_field_paths(self, body, path):
        with pytest.raises(ConfigError) as info:
            parse_config(body)
        assert info.value.path == path

    def test_hash_stable(self):
        a = parse_config({"grid": {"points_per_dim": 32}, "solver": {"seed": 3}})
        b = parse_config({"solver": {"seed": 3}, "grid": {"points_per_dim": 32}})
        assert a.hash() == b.hash()
        assert a.hash() != parse_config({"solver": {"seed": 4}}).hash()


class TestSimulate:
    def test_outputs(self, simulated):
        out = simulated[0]
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["snapshots"]) == 10
        assert len(list(out.glob("u_*.snap"))) == 11  # initial state plus 10 steps
        listed = {f["name"] for f in manifest["files"]}
        on_disk = {p.name for p in out.iterdir() if p.name != "manifest.json"}
        assert listed == on_disk
        assert manifest["code_version"] == __version__ and manifest["seed"] == 0
        assert manifest["config_hash"] == parse_config(MINIMAL).hash()
        for cp in manifest["checkpoints"]:
            assert cp["max_divergence"] < 1e-10

    def test_byte_identical(self, simulated):
        a, b = simulated
        for p in sorted(a.glob("*.snap")):
            assert p.read_bytes() == (b / p.name).read_bytes()
        ma, mb = (json.loads((d / "manifest.json").read_text()) for d in simulated)
        assert ma["files"] == mb["files"] and ma["config_hash"] == mb["config_hash"]

    def test_snapshot_times(self, simulated):
        u, header = load_snapshot(simulated[0] / "u_00010.snap")
        assert header["step_count"] == 10 and u.grid.N == 32

    def test_rejects_n24(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {"grid": {"points_per_dim": 24}})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "points_per_dim" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["simulate", "--config", str(p)]) == EXIT_CONFIG

    def test_env_output_dir(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path, {"grid": {"points_per_dim": 32}, "simulate": {"n_steps": 1}})
        monkeypatch.setenv("NLC_OUTPUT_DIR", str(tmp_path / "env"))
        assert main(["simulate", "--config", cfg]) == EXIT_OK
        assert (tmp_path / "env" / "manifest.json").exists()


class TestTrajectory:
    def test_from_snapshots(self, simulated, tmp_path):
        series = SnapshotSeries.from_directory(simulated[0])
        assert len(series.times) == 11 and series.d is not None
        cfg = write_cfg(tmp_path, {"grid": {"points_per_dim": 32}, "trajectory": {"n_bases": 4}})
        out = tmp_path / "traj"
        assert main(["trajectory", "--config", cfg, "--snapshots", str(simulated[0]), "--out", str(out)]) == EXIT_OK
        holder = json.loads((out / "holder.json").read_text())
        assert holder["alpha"] == pytest.approx(1.0, abs=1e-3)
        assert holder["advecting_field"] == "u"

    def test_seed_file(self, simulated, tmp_path):
        seeds = tmp_path / "seeds.json"
        seeds.write_text(json.dumps({"seeds": [[1.0, 2.0], [3.0, 4.0]]}))
        out = tmp_path / "t"
        assert main(["trajectory", "--snapshots", str(simulated[0]), "--seeds", str(seeds),
                     "--out", str(out)]) == EXIT_OK
        assert not (out / "holder.json").exists()
        assert len((out / "paths.csv").read_text().splitlines()) > 2

    def test_bad_T(self, simulated, tmp_path):
        assert main(["trajectory", "--snapshots", str(simulated[0]), "--T", "1e6",
                     "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_snapshots(self, tmp_path):
        assert main(["trajectory", "--snapshots", str(tmp_path), "--out", str(tmp_path)]) == EXIT_CONFIG


DECAY = {
    "grid": {"points_per_dim": 32},
    "decay": {"epsilons": [0.01, 0.02, 0.05], "derivative_orders": [[0, 1], [1, 0]],
              "norms": ["besov_sup"], "plots": True},
}


@pytest.fixture(scope="module")
def decayed(tmp_path_factory):
    root = tmp_path_factory.mktemp("decay")
    cfg = write_cfg(root, DECAY)
    codes = [main(["decay", "--config", cfg, "--out", str(root / n)]) for n in ("a", "b")]
    return root, codes


class TestDecay:
    def test_passes(self, decayed):
        assert decayed[1] == [EXIT_OK, EXIT_OK]

    def test_plot_guide_slope(self, decayed):
        svg = (decayed[0] / "a" / "decay_k0_m1_u.svg").read_text()
        assert "slope -0.5" in svg and "<svg" in svg

    def test_verdict_roundtrip(self, decayed):
        text = (decayed[0] / "a" / "verdict.json").read_text()
        v = json.loads(text)
        assert json.dumps(v, indent=2, sort_keys=True) + "\n" == text
        assert {"config", "entries", "epsilon_sweep", "fit_window", "report_version"} <= set(v)
        assert parse_config({"decay": {k: v["config"][k] for k in ("epsilons", "t0", "n_samples")}})

    def test_deterministic(self, decayed):
        root = decayed[0]
        for p in sorted((root / "a").iterdir()):
            if p.name != "manifest.json":
                assert p.read_bytes() == (root / "b" / p.name).read_bytes(), p.name

    def test_empty_time_grid(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {"decay": {"n_samples": 0}})
        assert main(["decay", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "time grid is empty" in capsys.readouterr().err

    def test_report(self, decayed, capsys):
        assert main(["report", str(decayed[0] / "a")]) == EXIT_OK
        assert "PASS" in (decayed[0] / "a" / "summary.md").read_text()

    def test_report_empty(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_FAIL


class TestVerify:
    def test_quick_passes(self, tmp_path, capsys):
        assert main(["verify", "--quick", "--out", str(tmp_path)]) == EXIT_OK
        body = json.loads((tmp_path / "verify.json").read_text())
        assert len(body["properties"]) >= 12
        assert all(p["passed"] for p in body["properties"])

    def test_injected_bug_fails(self, capsys):
        assert main(["verify", "--quick", "--inject-unnormalized"]) == EXIT_FAIL
        fails = [l for l in capsys.readouterr().out.splitlines() if l.startswith("FAIL")]
        assert len(fails) == 1 and "partition" in fails[0].lower()


def test_threads_flag(tmp_path):
    assert main(["verify", "--quick", "--threads", "0"]) == EXIT_CONFIG


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nlcflow", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and __version__ in r.stdout


@pytest.mark.parametrize("name", ["simulate_small.json", "decay.json", "trajectory.json"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    from nlcflow.config import load_config

    load_config(Path(__file__).resolve().parents[1] / "configs" / name)
