import numpy as np
import pytest

from metaretrain.data import subsample_and_split
from metaretrain.errors import ValidationError
from metaretrain.metrics import EvalReport
from metaretrain.nn import Dense, Flatten, Model, ModelSpec
from metaretrain.orchestrator import (
    CycleConfig,
    CycleRecord,
    RunHistory,
    StoppingCriterion,
    resume_state_from,
    run_cycles,
    should_stop,
)
from metaretrain.relations import catalog_default
from metaretrain.synthdigits import make_digits
from metaretrain.tester import RobustnessReport


def small_setup(seed=0, n=80):
    split = subsample_and_split(make_digits(n, seed=seed), 1.0, (0.2, 0.6, 0.2), seed=seed)
    model = Model(ModelSpec((1, 28, 28), 10, (Flatten(), Dense(10))), seed=seed)
    catalog = catalog_default("mnist")
    return model, split, catalog


def config(**kw):
    defaults = dict(mode="base", trainer="fixmatch", cycles=2, epochs_per_cycle=1,
                    batch_size=8, seed=0, num_classes=10, learning_rate=0.05,
                    robustness_cases=8, topn=(1, 5))
    defaults.update(kw)
    return CycleConfig(**defaults)


def scripted_evaluator(sr_values):
    """Deterministic fake: cycle k reports sr_values[k]; no failed relations."""
    calls = {"n": 0}

    def evaluator(snapshot):
        sr = sr_values[min(calls["n"], len(sr_values) - 1)]
        calls["n"] += 1
        report = RobustnessReport(sr_mt=sr, total_cases=1, outcomes=(), model_version=snapshot.version)
        eval_report = EvalReport(topn={1: sr}, sample_count=1, per_class_top1={}, sr_mt=sr)
        return report, eval_report, [], []

    evaluator.calls = calls
    return evaluator


class TestShouldStop:
    def record(self, sr=0.5, acc=0.5):
        return CycleRecord(cycle=0, sr_mt=sr, accuracy={1: acc}, suites=[], loss_stats={},
                           failed_ids=[], passed_ids=[], policy={}, model_version=0)

    def test_fixed_iterations(self):
        crit = StoppingCriterion.fixed(5)
        assert should_stop([self.record()] * 5, crit)
        assert not should_stop([self.record()] * 4, crit)

    def test_sr_threshold_not_met(self):
        crit = StoppingCriterion.threshold("sr_mt", "gte", 0.9)
        assert not should_stop([self.record(sr=0.85)], crit)
        assert should_stop([self.record(sr=0.95)], crit)

    def test_degradation_guard(self):
        crit = StoppingCriterion.threshold("top1_accuracy", "lte", 0.2)
        assert should_stop([self.record(acc=0.1)], crit)
        assert not should_stop([self.record(acc=0.5)], crit)

    def test_invalid_criterion_rejected(self):
        with pytest.raises(ValidationError):
            StoppingCriterion(kind="fixed_iterations")
        with pytest.raises(ValidationError):
            StoppingCriterion(kind="metric_threshold", metric="sr_mt", direction="above", value=0.5)

    def test_unknown_metric_rejected(self):
        crit = StoppingCriterion.threshold("f1", "gte", 0.5)
        with pytest.raises(ValidationError):
            should_stop([self.record()], crit)


class TestRunCycles:
    def test_single_base_cycle(self):
        model, split, catalog = small_setup()
        evaluator = scripted_evaluator([0.5, 0.6])
        history = run_cycles(model, split, config(cycles=1), catalog, evaluator=evaluator)
        assert len(history.records) == 1
        assert history.termination == "completed"
        # one in-cycle tester run plus the appended final evaluation
        assert evaluator.calls["n"] == 2
        assert history.records[0].cycle == 0
        assert history.records[0].loss_stats["steps"] > 0

    def test_threshold_met_at_cycle_three(self):
        model, split, catalog = small_setup()
        evaluator = scripted_evaluator([0.5, 0.7, 0.8, 0.96, 0.97, 0.97])
        cfg = config(cycles=10, stopping=StoppingCriterion.threshold("sr_mt", "gte", 0.95))
        history = run_cycles(model, split, cfg, catalog, evaluator=evaluator)
        assert [r.cycle for r in history.records] == [0, 1, 2, 3]
        assert history.termination == "threshold_met"

    def test_metrics_sink_receives_every_step(self):
        model, split, catalog = small_setup()
        rows = []
        history = run_cycles(model, split, config(cycles=2), catalog,
                             evaluator=scripted_evaluator([0.1]), metrics_sink=rows.append)
        total_steps = sum(r.loss_stats["steps"] for r in history.records)
        assert len(rows) == total_steps
        assert {"cycle", "step", "l_sup", "l_unsup", "l_penalty", "total", "mask_rate"} <= set(rows[0])

    def test_adaptive_strong_pool_follows_failed_set(self):
        model, split, catalog = small_setup(seed=3)
        cfg = config(mode="adaptive", cycles=5, epochs_per_cycle=2, learning_rate=0.1)
        history = run_cycles(model, split, cfg, catalog)
        records = history.records
        assert len(records) == 5
        assert records[0].policy["fallback_used"]  # cycle 0 has no partition yet
        for k in range(len(records) - 1):
            nxt = records[k + 1].policy
            if records[k].failed_ids:
                assert nxt["strong_pool"] == records[k].failed_ids
                assert not nxt["fallback_used"]
            else:
                assert nxt["fallback_used"]

    def test_base_mode_ignores_tester(self):
        model_a, split, catalog = small_setup(seed=4)
        model_b, _, _ = small_setup(seed=4)
        real = run_cycles(model_a, split, config(cycles=2), catalog)
        stubbed = run_cycles(model_b, split, config(cycles=2), catalog,
                             evaluator=scripted_evaluator([0.0]))
        pa = {n: p.data for n, p in model_a.named_parameters()}
        pb = {n: p.data for n, p in model_b.named_parameters()}
        for n in pa:
            assert np.array_equal(pa[n], pb[n])
        assert real.final_version == stubbed.final_version

    def test_overlap_matches_sequential(self):
        model_a, split, catalog = small_setup(seed=5)
        model_b, _, _ = small_setup(seed=5)
        cfg_seq = config(mode="adaptive", cycles=3)
        cfg_par = config(mode="adaptive", cycles=3, overlap=True)
        h_seq = run_cycles(model_a, split, cfg_seq, catalog)
        h_par = run_cycles(model_b, split, cfg_par, catalog)
        assert h_seq.to_dict() == h_par.to_dict()
        pa = {n: p.data for n, p in model_a.named_parameters()}
        pb = {n: p.data for n, p in model_b.named_parameters()}
        for n in pa:
            assert np.array_equal(pa[n], pb[n])

    def test_deterministic_replay(self):
        model_a, split, catalog = small_setup(seed=6)
        model_b, _, _ = small_setup(seed=6)
        h1 = run_cycles(model_a, split, config(mode="adaptive", cycles=3), catalog)
        h2 = run_cycles(model_b, split, config(mode="adaptive", cycles=3), catalog)
        assert h1.to_dict() == h2.to_dict()

    def test_nan_loss_aborts_with_partial_history(self):
        model, split, catalog = small_setup(seed=7)
        cfg = config(cycles=4, learning_rate=1e38)
        history = run_cycles(model, split, cfg, catalog, evaluator=scripted_evaluator([0.2]))
        assert history.termination == "aborted_nan"
        assert len(history.records) < 4
        assert history.final_eval.get("aborted")

    def test_cycle_indices_contiguous_and_versions_monotone(self):
        model, split, catalog = small_setup(seed=8)
        history = run_cycles(model, split, config(cycles=3, mode="static"), catalog)
        cycles = [r.cycle for r in history.records]
        assert cycles == list(range(len(cycles)))
        versions = [r.model_version for r in history.records]
        assert versions == sorted(versions)
        # robustness was computed on the pre-retraining snapshot each cycle
        assert versions[0] == 0

    def test_history_save_load_roundtrip(self, tmp_path):
        model, split, catalog = small_setup(seed=9)
        history = run_cycles(model, split, config(cycles=2), catalog)
        path = tmp_path / "history.json"
        history.save(path)
        loaded = RunHistory.load(path)
        assert loaded.to_dict() == history.to_dict()

    def test_resume_reproduces_straight_run(self, tmp_path):
        model_a, split, catalog = small_setup(seed=10)
        cfg4 = config(mode="adaptive", cycles=4, trainer="mixmatch", batch_size=8)
        straight = run_cycles(model_a, split, cfg4, catalog, checkpoint_dir=tmp_path / "a")

        model_b, _, _ = small_setup(seed=10)
        cfg2 = config(mode="adaptive", cycles=2, trainer="mixmatch", batch_size=8)
        first = run_cycles(model_b, split, cfg2, catalog, checkpoint_dir=tmp_path / "b")
        model_c, state = resume_state_from(first, tmp_path / "b")
        resumed = run_cycles(model_c, split, cfg4, catalog, resume=state, checkpoint_dir=tmp_path / "b")

        assert [r.to_dict() for r in resumed.records] == [r.to_dict() for r in straight.records]
        pa = {n: p.data for n, p in model_a.named_parameters()}
        pc = {n: p.data for n, p in model_c.named_parameters()}
        for n in pa:
            assert np.array_equal(pa[n], pc[n])

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            config(cycles=0)
        with pytest.raises(ValidationError):
            config(mode="turbo")
        with pytest.raises(ValidationError):
            config(pass_threshold=1.5)
