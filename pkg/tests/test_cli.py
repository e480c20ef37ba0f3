"""CLI: config validation, artifact generation, step-by-step reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from esbo.cli import load_schedule_csv, main, save_schedule_csv
from esbo.config import ConfigError, load_config

TINY_CONFIG = """
out_dir = "{out}"

[oracle]
kind = "synthetic"
[oracle.synthetic]
price_base = 20.0
price_peak = 90.0
impact_linear = {impact}

[storage]
horizon = 12

[scheme]
dataset_size = 120
ensemble_size = 2
iterations_max = 2
seed = 3

[training]
epochs = 4

[surrogate_max]
starts = 3
steps = 20
"""


@pytest.fixture
def tiny_config(tmp_path):
    def make(impact=0.0, name="cfg.toml", **overrides):
        out = tmp_path / "out"
        text = TINY_CONFIG.format(out=out, impact=impact)
        for line, value in overrides.items():
            text += f"\n{line} = {value}\n"
        path = tmp_path / name
        path.write_text(text)
        return path
    return make


class TestConfig:
    def test_defaults_loaded(self, tiny_config):
        cfg = load_config(tiny_config())
        assert cfg.scheme.train.max_lr == 0.003
        assert cfg.scheme.train.moment_decay_1 == 0.95
        assert cfg.scheme.epsilon == 0.1
        assert cfg.scheme.gamma == 5.0
        assert cfg.scheme.surrogate_max.starts == 3
        assert cfg.storage.horizon == 12

    def test_missing_oracle_table(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[storage]\nhorizon = 24\n")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.field_path == "oracle"

    def test_bad_field_named(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[oracle]\nkind = "synthetic"\n[scheme]\ngamma = -1.0\n')
        with pytest.raises(ConfigError, match="scheme"):
            load_config(path)

    def test_wrong_type_named(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[oracle]\nkind = "synthetic"\n[training]\nepochs = "many"\n')
        with pytest.raises(ConfigError, match="training.epochs"):
            load_config(path)

    def test_dc_case_horizon_checked(self, tmp_path):
        from esbo.oracles import two_bus_case

        two_bus_case(horizon=4).to_json(tmp_path / "case.json")
        path = tmp_path / "cfg.toml"
        path.write_text(
            '[oracle]\nkind = "dc"\n[oracle.dc]\ncase_file = "case.json"\n'
            "[storage]\nhorizon = 24\n"
        )
        with pytest.raises(ConfigError, match="horizon"):
            load_config(path)

    def test_shipped_configs_parse(self):
        root = Path(__file__).resolve().parent.parent
        for name in ("desk.toml", "pricetaker.toml", "dc_small.toml"):
            cfg = load_config(root / "configs" / name)
            assert cfg.storage.horizon == 24


class TestCommands:
    def test_run_produces_artifacts(self, tiny_config, tmp_path):
        code = main(["run", "--config", str(tiny_config())])
        assert code == 0
        out = tmp_path / "out"
        for name in ("manifest.json", "iterations.csv", "radius_trace.csv",
                     "timings.csv", "schedule_best.csv", "summary.json"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert "best_profit" in summary and "baseline_actual_profit" in summary
        assert (out / "models" / "iter01_member00.npz").exists()
        assert (out / "training" / "iter01_member00.csv").exists()

    def test_exit_1_on_config_error(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text("[storage]\nhorizon = 24\n")
        assert main(["run", "--config", str(path)]) == 1
        assert "oracle" in capsys.readouterr().err

    def test_exit_2_on_runtime_error(self, tiny_config, tmp_path, capsys):
        cfg = tiny_config()
        missing = tmp_path / "nope.csv"
        assert main(["verify", "--config", str(cfg), "--schedule", str(missing)]) == 2
        assert "runtime error" in capsys.readouterr().err

    def test_same_seed_byte_identical_iteration_csv(self, tiny_config, tmp_path):
        cfg = tiny_config()
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--seed", "7", "--out", str(out_a)]) == 0
        assert main(["run", "--config", str(cfg), "--seed", "7", "--out", str(out_b)]) == 0
        assert (out_a / "iterations.csv").read_bytes() == (out_b / "iterations.csv").read_bytes()
        assert (out_a / "radius_trace.csv").read_bytes() == (out_b / "radius_trace.csv").read_bytes()
        assert (out_a / "schedule_best.csv").read_bytes() == (out_b / "schedule_best.csv").read_bytes()

    def test_gen_train_verify_pipeline_matches_run(self, tiny_config, tmp_path):
        cfg = tiny_config()
        run_out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--iterations-max", "1",
                     "--out", str(run_out)]) == 0

        data = tmp_path / "data.csv"
        assert main(["gen-dataset", "--config", str(cfg), "--out", str(data)]) == 0
        model = tmp_path / "member0.npz"
        assert main(["train-one", "--config", str(cfg), "--dataset", str(data),
                     "--out", str(model)]) == 0
        # the standalone steps reproduce run()'s iteration-1 member-0 training
        standalone = (tmp_path / "member0.report.csv").read_bytes()
        from_run = (run_out / "training" / "iter01_member00.csv").read_bytes()
        assert standalone == from_run

    def test_verify_zero_schedule(self, tiny_config, tmp_path, capsys):
        cfg = tiny_config()
        sched = tmp_path / "zero.csv"
        save_schedule_csv(np.zeros(12), sched)
        assert main(["verify", "--config", str(cfg), "--schedule", str(sched)]) == 0
        out = capsys.readouterr().out
        assert "total profit: 0.000000" in out
        assert "lambda" in out

    def test_report_command(self, tiny_config, tmp_path, capsys):
        cfg = tiny_config()
        out = tmp_path / "out"
        main(["run", "--config", str(cfg), "--out", str(out)])
        capsys.readouterr()
        assert main(["report", "--run-dir", str(out)]) == 0
        text = capsys.readouterr().out
        assert "best_profit" in text and "iteration" in text

    def test_schedule_csv_round_trip(self, tmp_path):
        q = np.random.default_rng(0).uniform(-1, 1, 24)
        path = tmp_path / "sched.csv"
        save_schedule_csv(q, path)
        assert np.array_equal(load_schedule_csv(path), q)

    def test_manifest_records_config_hash_and_seed(self, tiny_config, tmp_path):
        cfg = tiny_config()
        main(["run", "--config", str(cfg), "--seed", "9"])
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 9
        assert len(manifest["config_sha256"]) == 64
        assert "esbo_version" in manifest and "numpy_version" in manifest
