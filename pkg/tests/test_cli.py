import json

import numpy as np

from metaretrain.cli import main
from metaretrain.nn import Dense, Flatten, Model, ModelSpec, save_checkpoint
from metaretrain.orchestrator import CycleRecord, RunHistory


def write_config(path, data_dir, output_dir, **overrides):
    values = {
        "data_dir": data_dir,
        "dataset": "mnist",
        "fraction": 0.002,
        "model": "linear",
        "trainer": "fixmatch",
        "mode": "adaptive",
        "cycles": 2,
        "epochs_per_cycle": 1,
        "batch_size": 16,
        "seeds": "0",
        "robustness_cases": 12,
        "output_dir": output_dir,
    }
    values.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def run_dirs(output_dir):
    return sorted(p for p in output_dir.iterdir() if p.is_dir())


class TestRunCommand:
    def test_minimal_run_completes_with_artifacts(self, tmp_path, data_dir):
        cfg = write_config(tmp_path / "run.cfg", data_dir, tmp_path / "runs")
        assert main(["run", "--config", str(cfg)]) == 0
        (run_dir,) = run_dirs(tmp_path / "runs")
        assert (run_dir / "config").exists()
        assert (run_dir / "history.json").exists()
        assert (run_dir / "summary.txt").exists()
        assert (run_dir / "reports" / "metrics.jsonl").exists()
        assert (run_dir / "reports" / "history.csv").exists()
        assert (run_dir / "checkpoints" / "final.ckpt").exists()
        history = RunHistory.load(run_dir / "history.json")
        assert history.termination == "completed"
        assert len(history.records) == 2

    def test_resolved_config_reproduces_run(self, tmp_path, data_dir):
        cfg = write_config(tmp_path / "run.cfg", data_dir, tmp_path / "runs")
        assert main(["run", "--config", str(cfg)]) == 0
        (run_dir,) = run_dirs(tmp_path / "runs")
        # the materialized config is itself a valid config for a second run
        assert main(["run", "--config", str(run_dir / "config"),
                     "--output-dir", str(tmp_path / "runs2")]) == 0
        (run_dir2,) = run_dirs(tmp_path / "runs2")
        a = (run_dir / "history.json").read_bytes()
        b = json.loads((run_dir2 / "history.json").read_text())
        a = json.loads(a)
        a["config"]["output_dir"] = b["config"]["output_dir"]  # only the destination differs
        assert a == b

    def test_bad_ratios_exit_2_naming_field(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path / "bad.cfg", data_dir, tmp_path / "runs",
                           ratio_labeled=0.2, ratio_unlabeled=0.7, ratio_test=0.2)
        assert main(["run", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "ratio" in err
        assert not (tmp_path / "runs").exists()  # no side effects on invalid config

    def test_unknown_key_exit_2(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path / "bad.cfg", data_dir, tmp_path / "runs")
        cfg.write_text(cfg.read_text() + "warp_speed = 9\n")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "warp_speed" in capsys.readouterr().err

    def test_determinism_same_seed_identical_files(self, tmp_path, data_dir):
        cfg = write_config(tmp_path / "run.cfg", data_dir, tmp_path / "runs")
        assert main(["run", "--config", str(cfg)]) == 0
        assert main(["run", "--config", str(cfg)]) == 0
        d1, d2 = run_dirs(tmp_path / "runs")
        for name in ("history.json", "reports/history.csv", "reports/metrics.jsonl", "config"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name
        assert (d1 / "checkpoints" / "final.ckpt").read_bytes() == \
            (d2 / "checkpoints" / "final.ckpt").read_bytes()

    def test_missing_data_dir_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "run.cfg", tmp_path / "nowhere", tmp_path / "runs")
        assert main(["run", "--config", str(cfg)]) == 2
        assert "data_dir" in capsys.readouterr().err


class TestTestCommand:
    def make_cifar_fixture(self, tmp_path, n=40):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(n, 3073), dtype=np.uint8)
        raw[:, 0] = rng.integers(0, 10, size=n)
        (tmp_path / "data_batch_1.bin").write_bytes(raw.tobytes())

    def constant_checkpoint(self, tmp_path):
        spec = ModelSpec(input_shape=(3, 32, 32), num_classes=10, layers=(Flatten(), Dense(10)))
        model = Model(spec, seed=0)
        w, b = model._params["1.weight"], model._params["1.bias"]
        w.data = np.zeros_like(w.data)
        bias = np.zeros_like(b.data)
        bias[4] = 3.0
        b.data = bias
        path = tmp_path / "constant.ckpt"
        save_checkpoint(model.snapshot(), path)
        return path

    def test_constant_model_perfect_on_label_preserving_catalog(self, tmp_path, capsys):
        # the CIFAR catalog is entirely label-preserving, so a constant
        # classifier must score SR_MT = 1.0 exactly
        self.make_cifar_fixture(tmp_path)
        ckpt = self.constant_checkpoint(tmp_path)
        rc = main(["test", "--checkpoint", str(ckpt), "--dataset", "cifar10",
                   "--data-dir", str(tmp_path), "--fraction", "1.0",
                   "--output-dir", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "SR_MT = 1.0000" in out
        report = json.loads((tmp_path / "out" / "robustness_report.json").read_text())
        assert report["robustness"]["sr_mt"] == 1.0

    def test_report_matches_golden_rerun(self, tmp_path, capsys):
        self.make_cifar_fixture(tmp_path)
        ckpt = self.constant_checkpoint(tmp_path)
        args = ["test", "--checkpoint", str(ckpt), "--dataset", "cifar10",
                "--data-dir", str(tmp_path), "--fraction", "1.0"]
        assert main(args + ["--output-dir", str(tmp_path / "g1")]) == 0
        assert main(args + ["--output-dir", str(tmp_path / "g2")]) == 0
        golden = (tmp_path / "g1" / "robustness_report.json").read_bytes()
        assert (tmp_path / "g2" / "robustness_report.json").read_bytes() == golden

    def test_missing_checkpoint_exit_2(self, tmp_path, capsys):
        rc = main(["test", "--checkpoint", str(tmp_path / "absent.ckpt"),
                   "--data-dir", str(tmp_path)])
        assert rc == 2
        assert "checkpoint" in capsys.readouterr().err.lower()


class TestReportCommand:
    def fake_history(self, path, trainer, mode, dataset="mnist", acc=0.5, sr=0.6):
        record = CycleRecord(cycle=0, sr_mt=0.1, accuracy={1: 0.2}, suites=[],
                             loss_stats={"steps": 1}, failed_ids=[], passed_ids=[],
                             policy={}, model_version=0)
        RunHistory(
            config={"trainer": trainer, "mode": mode, "seed": 0, "dataset": dataset},
            records=[record],
            final_eval={"sr_mt": sr, "topn": {"1": acc, "5": acc}},
            termination="completed", final_version=1,
        ).save(path)
        return path

    def test_four_runs_table_with_average(self, tmp_path, capsys):
        paths = []
        for i, (trainer, mode) in enumerate([("fixmatch", "base"), ("fixmatch", "adaptive"),
                                             ("fullmatch", "base"), ("fullmatch", "adaptive")]):
            paths.append(str(self.fake_history(tmp_path / f"h{i}.json", trainer, mode,
                                               acc=0.1 * (i + 1), sr=0.2 * (i + 1))))
        rc = main(["report", *paths, "--layout", "base,adaptive",
                   "--output-dir", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "Average" in out
        assert (tmp_path / "out" / "comparison.csv").exists()
        assert (tmp_path / "out" / "comparison.json").exists()

    def test_single_run_table(self, tmp_path, capsys):
        path = self.fake_history(tmp_path / "h.json", "mixmatch", "static")
        assert main(["report", str(path), "--output-dir", str(tmp_path / "out")]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[1].startswith("mixmatch")
        assert lines[-1].startswith("Average")

    def test_mixed_datasets_exit_2(self, tmp_path, capsys):
        p1 = self.fake_history(tmp_path / "a.json", "fixmatch", "base", dataset="mnist")
        p2 = self.fake_history(tmp_path / "b.json", "fixmatch", "adaptive", dataset="cifar10")
        assert main(["report", str(p1), str(p2)]) == 2
        assert "datasets" in capsys.readouterr().err


class TestListMrs:
    def test_mnist_catalog_listing(self, capsys):
        assert main(["list-mrs", "--dataset", "mnist"]) == 0
        out = capsys.readouterr().out
        assert "rot180" in out
        assert "2->5" in out and "6->9" in out
        assert "hflip" not in out

    def test_cifar_catalog_listing(self, capsys):
        assert main(["list-mrs", "--dataset", "cifar10"]) == 0
        out = capsys.readouterr().out
        assert "hflip" in out
        lines = [l for l in out.splitlines() if l.startswith("rot180")]
        assert "identity" in lines[0]
