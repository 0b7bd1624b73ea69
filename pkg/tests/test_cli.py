import csv
import json
from pathlib import Path

import pytest

from adaptive_pinn import experiment as ex
from adaptive_pinn.cli import main

GOLDEN = Path(__file__).parent / "golden"

# Small enough to train in a couple of seconds; everything else comes from the preset.
TINY = {
    "preset": "example1",
    "profile": "desk",
    "name": "tiny",
    "problem": {"final_time": 0.2},
    "train": {"layer_sizes": [2, 8, 8, 1], "n_collocation": 80, "minibatch_size": 20,
              "epochs_per_slice": 2, "n_ic_points": 40, "mh_init_iterations": 50,
              "mh_refresh_iterations": 5},
    "reference": {"n_grid": 64, "dt": 1e-3},
}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(ex.OUT_ENV, str(tmp_path / "runs"))
    return tmp_path / "runs"


class TestPresets:
    @pytest.mark.parametrize("name", ["example1", "example2", "example3"])
    @pytest.mark.parametrize("profile", ["full", "desk"])
    def test_golden(self, name, profile):
        cfg = ex.config_from_dict({"preset": name, "profile": profile,
                                   "name": f"{name}-{profile}"})
        expected = json.loads((GOLDEN / f"{name}-{profile}.json").read_text())
        assert json.loads(cfg.to_json()) == expected

    def test_example1_published_values(self):
        cfg = ex.config_from_dict({"preset": "example1", "profile": "full"})
        p, t = cfg.problem, cfg.train
        assert (p.gamma1, p.gamma2, p.lower, p.upper) == (1e-4, 5.0, (-1.0,), (1.0,))
        assert p.final_time == 1.0 and p.slice_increment == 0.1
        assert t.layer_sizes == (2,) + (128,) * 6 + (1,)
        assert (t.n_collocation, t.minibatch_size, t.epochs_per_slice) == (10_000, 40, 100)
        assert (t.lam, t.ic_weight) == (0.6, 1000.0)

    def test_example3_parameters(self):
        p = ex.config_from_dict({"preset": "example3", "profile": "full"}).problem
        assert p.gamma1 == pytest.approx(10 * 0.025 ** 2) and p.gamma2 == 10.0
        assert p.n_slices == 10

    def test_method_suffix(self):
        cfg = ex.config_from_dict({"preset": "example2-residual"})
        assert cfg.method == "residual" and cfg.preset == "example2"
        assert cfg.profile is None or cfg.profile == "desk"

    def test_round_trip(self):
        cfg = ex.config_from_dict({"preset": "example3", "profile": "desk"})
        again = ex.config_from_dict(json.loads(cfg.to_json()))
        assert again.to_dict() == cfg.to_dict()


class TestValidation:
    def test_lists_every_violation(self):
        bad = {"preset": "example1", "train": {"lambda": 2.0, "epochs_per_slice": 0},
               "reference": {"n_grid": 4}}
        with pytest.raises(ex.ConfigError) as info:
            ex.config_from_dict(bad)
        text = "\n".join(info.value.errors)
        assert "lambda" in text and "epochs_per_slice" in text and "n_grid" in text

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            ex.config_from_dict({"preset": "example9"})

    def test_missing_sections(self):
        with pytest.raises(ex.ConfigError):
            ex.config_from_dict({"problem": {}})

    def test_cli_exit_code(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"preset": "example1", "train": {"lambda": -1}}))
        assert main(["train", "--config", str(p)]) == 2
        assert "lambda" in capsys.readouterr().err


class TestRun:
    def test_train_artifacts_and_determinism(self, tiny_config, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(tiny_config), "--out", str(a), "--seed", "3",
                     "--threads", "1"]) == 0
        assert main(["train", "--config", str(tiny_config), "--out", str(b), "--seed", "3",
                     "--threads", "1"]) == 0
        for name in ("history.csv", "points.csv", "errors.json", "run-manifest.json",
                     "checkpoints/final.ckpt", "checkpoints/slice_000.ckpt",
                     "checkpoints/slice_001.ckpt", "reference/manifest.json"):
            assert (a / name).exists(), name
        assert (a / "errors.json").read_text() == (b / "errors.json").read_text()
        manifest = json.loads((a / "run-manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["config"]["train"]["seed"] == 3
        assert len(manifest["code_hash"]) == 16
        errors = json.loads((a / "errors.json").read_text())
        assert [s["slice_time"] for s in errors["slices"]] == pytest.approx([0.1, 0.2])
        assert len(errors["unlearning_table"]) == 4

    def test_method_flag(self, tiny_config, tmp_path):
        out = tmp_path / "r"
        assert main(["train", "--config", str(tiny_config), "--out", str(out),
                     "--method", "residual"]) == 0
        manifest = json.loads((out / "run-manifest.json").read_text())
        assert manifest["config"]["train"]["density_kind"] == "residual"
        errors = json.loads((out / "errors.json").read_text())
        assert errors["method"] == "residual"

    def test_reference_is_idempotent(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "ref"
        assert main(["reference", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert "computed" in capsys.readouterr().out
        stamp = (out / "snapshots.npy").stat().st_mtime_ns
        assert main(["reference", "--config", str(tiny_config), "--out", str(out)]) == 0
        assert "up to date" in capsys.readouterr().out
        assert (out / "snapshots.npy").stat().st_mtime_ns == stamp
        assert main(["reference", "--config", str(tiny_config), "--out", str(out),
                     "--force"]) == 0
        assert "computed" in capsys.readouterr().out

    def test_reference_echoes_production_settings(self, tmp_path):
        cfg = ex.config_from_dict({"preset": "example1", "profile": "full"})
        s = ex.reference_settings(cfg)
        assert (s["n_grid"], s["dt"]) == (2048, 1e-4)

    def test_evaluate_and_dump_points(self, tiny_config, tmp_path, capsys):
        run = tmp_path / "run"
        main(["train", "--config", str(tiny_config), "--out", str(run)])
        trained = json.loads((run / "errors.json").read_text())
        capsys.readouterr()
        ckpt = run / "checkpoints" / "final.ckpt"
        ev = tmp_path / "ev"
        assert main(["evaluate", "--config", str(tiny_config), "--checkpoint", str(ckpt),
                     "--out", str(ev)]) == 0
        report = json.loads((ev / "errors.json").read_text())
        assert report["rel_l2_at_T"] == trained["rel_l2_at_T"]
        assert main(["evaluate", "--config", str(tiny_config), "--checkpoint", str(ckpt),
                     "--time", "0.1"]) == 0
        pts = tmp_path / "pts"
        assert main(["dump-points", "--config", str(tiny_config), "--checkpoint", str(ckpt),
                     "--out", str(pts)]) == 0
        with (pts / "points.csv").open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["x", "t", "kind"] and len(rows) == 81

    def test_sweep_rows(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(tiny_config), "--lambdas", "0.6",
                     "--out", str(out)]) == 0
        with (out / "sweep.csv").open() as f:
            rows = list(csv.DictReader(f))
        assert [(r["method"], r["lambda"]) for r in rows] == [("energy", "0.6"),
                                                              ("residual", "0.6")]
        assert all(r["status"] == "ok" for r in rows)

    def test_sweep_rows_per_cell(self, tiny_config, tmp_path):
        cfg = ex.load_config(tiny_config)
        rows = ex.run_lambda_sweep(cfg, [0.2, 0.6], ["energy"], [0, 1], tmp_path / "s")
        assert len(rows) == 4

    def test_sweep_records_failures(self, tiny_config, tmp_path):
        cfg = ex.load_config(tiny_config)
        # lambda 0.99 leaves a single uniform point: every minibatch has an empty
        # uniform sub-batch while its loss weight is nonzero, so that cell fails
        rows = ex.run_lambda_sweep(cfg, [0.6, 0.99], ["energy"], None, tmp_path / "s")
        assert [r["status"] == "ok" for r in rows] == [True, False]
        assert rows[1]["status"].startswith("error")

    def test_default_output_root(self, tiny_config, out_root):
        assert main(["train", "--config", str(tiny_config)]) == 0
        assert (out_root / "tiny" / "errors.json").exists()
