"""CLI subcommands, exit codes, run.json, reproducibility."""

import json

import pytest

import spikedse as sd
from spikedse.cli import main


@pytest.fixture()
def dataset_dir(tmp_path):
    out = tmp_path / "data"
    code = main([
        "dataset", "gen",
        "--classes", "2",
        "--per-class", "6",
        "--seed", "9",
        "--out", str(out),
    ])
    assert code == 0
    return out


def train_config(dataset_dir, **overrides):
    config = {
        "seed": 4,
        "epochs": 1,
        "batch_size": 4,
        "timesteps": 5,
        "window": 50,
        "data": {"dir": str(dataset_dir)},
    }
    config.update(overrides)
    return config


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_missing_required_flag(self, capsys):
        assert main(["complexity", "--window", "50"]) == 2
        capsys.readouterr()

    def test_domain_error_returns_one(self, tmp_path, capsys):
        net = sd.build_network(50)
        ckpt = tmp_path / "w.ckpt"
        sd.save_checkpoint(ckpt, net, sd.init_weights(net, seed=0))
        code = main([
            "eval",
            "--checkpoint", str(ckpt),
            "--data", str(tmp_path),  # no manifest here
            "--timesteps", "5",
        ])
        assert code == 1
        assert "manifest" in capsys.readouterr().err

    def test_missing_file_returns_one(self, tmp_path, capsys):
        code = main([
            "eval",
            "--checkpoint", str(tmp_path / "missing.ckpt"),
            "--data", str(tmp_path),
            "--timesteps", "5",
        ])
        assert code == 1
        capsys.readouterr()


class TestComplexity:
    def test_prints_cost_report_json(self, capsys):
        assert main(["complexity", "--window", "50", "--timestep", "5"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["tag"] == "32b_5t_50w"
        assert payload["synaptic_ops"] == 5 * 466_848
        assert payload["memory_bits"] == 32 * 51_552

    def test_bits_flag(self, capsys):
        assert main([
            "complexity", "--window", "100", "--timestep", "20", "--bits", "10",
        ]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["tag"] == "10b_20t_100w"

    def test_out_dir_writes_run_json(self, tmp_path, capsys):
        out = tmp_path / "cx"
        assert main([
            "complexity", "--window", "50", "--timestep", "5", "--out", str(out),
        ]) == 0
        capsys.readouterr()
        run = json.loads((out / "run.json").read_text())
        assert run["command"] == "complexity"
        assert (out / "complexity.json").exists()


class TestDataset:
    def test_gen_writes_manifest_and_run_json(self, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert len(manifest) == 12
        splits = {e["split"] for e in manifest}
        assert splits == {"train", "test"}
        assert (dataset_dir / "run.json").exists()

    def test_gen_deterministic(self, tmp_path, capsys):
        args = ["dataset", "gen", "--per-class", "4", "--seed", "3"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        capsys.readouterr()
        for name in sorted(
            p.name for p in (tmp_path / "a").iterdir() if p.suffix == ".dat"
        ):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_inspect(self, dataset_dir, capsys):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        target = dataset_dir / manifest[0]["file"]
        assert main(["dataset", "inspect", str(target)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["events"] > 0
        assert summary["sensor"] == [64, 64]


class TestTrainQuantEval:
    def test_full_flow(self, dataset_dir, tmp_path, capsys):
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config(dataset_dir)))
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--out", str(run_dir)]) == 0
        assert (run_dir / "weights.ckpt").exists()
        log_lines = (run_dir / "training_log.csv").read_text().splitlines()
        assert log_lines[0] == "epoch,train_acc,test_acc,loss"
        assert json.loads((run_dir / "run.json").read_text())["command"] == "train"

        qpath = tmp_path / "w10.ckpt"
        assert main([
            "quantize",
            "--checkpoint", str(run_dir / "weights.ckpt"),
            "--bits", "10",
            "--out", str(qpath),
        ]) == 0
        _, qweights, header = sd.load_checkpoint(qpath)
        assert header["quant"]["bits"] == 10

        assert main([
            "eval",
            "--checkpoint", str(qpath),
            "--data", str(dataset_dir),
            "--timesteps", "5",
        ]) == 0
        out_lines = capsys.readouterr().out.strip().splitlines()
        result = json.loads(out_lines[-1])
        assert 0.0 <= result["accuracy"] <= 1.0

    def test_same_seed_byte_identical_checkpoints(self, dataset_dir, tmp_path, capsys):
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config(dataset_dir)))
        r1, r2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", str(config_path), "--out", str(r1)]) == 0
        assert main(["train", "--config", str(config_path), "--out", str(r2)]) == 0
        capsys.readouterr()
        assert (r1 / "weights.ckpt").read_bytes() == (r2 / "weights.ckpt").read_bytes()
        assert (r1 / "training_log.csv").read_text() == (
            r2 / "training_log.csv"
        ).read_text()

    def test_worker_count_does_not_change_bytes(self, dataset_dir, tmp_path, capsys):
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config(dataset_dir)))
        r1, r2 = tmp_path / "w1", tmp_path / "w2"
        assert main(["train", "--config", str(config_path), "--out", str(r1)]) == 0
        assert main([
            "--workers", "3", "train", "--config", str(config_path), "--out", str(r2),
        ]) == 0
        capsys.readouterr()
        assert (r1 / "weights.ckpt").read_bytes() == (r2 / "weights.ckpt").read_bytes()

    def test_inputs_not_mutated(self, dataset_dir, tmp_path, capsys):
        import hashlib

        before = {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in dataset_dir.iterdir()
        }
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config(dataset_dir)))
        main(["train", "--config", str(config_path), "--out", str(tmp_path / "r")])
        capsys.readouterr()
        after = {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in dataset_dir.iterdir()
        }
        assert before == after


class TestDseCommand:
    def test_table_mode_with_selection(self, tmp_path, capsys):
        out = tmp_path / "dse"
        code = main([
            "dse",
            "--constraints", '{"max_memory_mb": 8, "max_latency_ratio": 0.25}',
            "--out", str(out),
        ])
        assert code == 0
        capsys.readouterr()
        assert (out / "dse_results.csv").exists()
        assert (out / "pareto.csv").exists()
        selection = json.loads((out / "selection.json").read_text())
        assert selection["selected"]["tag"] == "10b_5t_100w"
        assert (out / "run.json").exists()

    def test_reruns_byte_identical(self, tmp_path, capsys):
        args = ["dse", "--constraints", '{"max_memory_mb": 1, "max_latency_ratio": 0.25}']
        o1, o2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(o1)]) == 0
        assert main(args + ["--out", str(o2)]) == 0
        capsys.readouterr()
        for name in ("dse_results.csv", "pareto.csv", "selection.json"):
            assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
        selection = json.loads((o1 / "selection.json").read_text())
        assert selection["selected"]["tag"] == "10b_5t_50w"

    def test_custom_grid(self, tmp_path, capsys):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({
            "bits": [32, 10], "timesteps": [20, 5], "windows": [50],
        }))
        out = tmp_path / "dse"
        assert main(["dse", "--grid", str(grid_path), "--out", str(out)]) == 0
        capsys.readouterr()
        lines = (out / "dse_results.csv").read_text().splitlines()
        assert len(lines) == 1 + 4

    def test_live_mode_end_to_end(self, dataset_dir, tmp_path, capsys):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({
            "bits": [32, 10], "timesteps": [5], "windows": [50],
        }))
        config_path = tmp_path / "train.json"
        config_path.write_text(json.dumps(train_config(dataset_dir)))
        out = tmp_path / "dse"
        code = main([
            "dse",
            "--grid", str(grid_path),
            "--accuracy-source", "live",
            "--train-config", str(config_path),
            "--out", str(out),
        ])
        assert code == 0
        capsys.readouterr()
        rows = (out / "dse_results.csv").read_text().splitlines()
        assert len(rows) == 1 + 2
        assert "live" in rows[1]

    def test_live_mode_with_data_flag(self, dataset_dir, tmp_path, capsys):
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps({
            "bits": [32], "timesteps": [5], "windows": [50],
        }))
        out = tmp_path / "dse"
        code = main([
            "dse",
            "--grid", str(grid_path),
            "--accuracy-source", "live",
            "--data", str(dataset_dir),
            "--out", str(out),
        ])
        assert code == 0
        capsys.readouterr()
        assert (out / "dse_results.csv").exists()

    def test_live_mode_without_data_is_domain_error(self, tmp_path, capsys):
        code = main([
            "dse", "--accuracy-source", "live", "--out", str(tmp_path / "x"),
        ])
        assert code == 1
        capsys.readouterr()
