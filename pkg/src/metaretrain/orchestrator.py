"""Robustness cycles: test, partition, build the next stream, retrain, record.

One cycle works on the snapshot taken before its retraining: the tester scores
that snapshot (and top-N accuracy is measured on it), the resulting
failed/passed partition determines the *next* cycle's augmentation policy, and
retraining consumes the stream prepared from the *previous* cycle's partition.
Cycle 0 therefore starts from the mode's initial pools (adaptive mode logs a
fallback). Because testing and stream preparation never read the mutating
model, they can overlap with training; overlapped and sequential execution
produce identical numbers, differing only in wall time.

Wall-clock durations are tracked in memory but excluded from persisted history
so that identically-seeded runs serialize byte-identically.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .data import DatasetSplit
from .errors import NonFiniteError, ValidationError
from .metrics import evaluate
from .nn import SGD, Model, save_checkpoint
from .policy import AugmentationPolicy, CycleDatasetSpec, CycleStream, adaptive_policy, base_policy, base_pools, build_cycle_stream, static_policy
from .tester import build_suites, partition, robustness
from .trainers import Trainer, TrainerConfig, build_trainer

log = logging.getLogger(__name__)

MODES = ("base", "adaptive", "static")
TERMINATIONS = ("completed", "threshold_met", "aborted_nan")


@dataclass(frozen=True)
class StoppingCriterion:
    kind: str  # "fixed_iterations" | "metric_threshold"
    iterations: Optional[int] = None
    metric: Optional[str] = None  # "sr_mt" | "top<N>_accuracy"
    direction: Optional[str] = None  # "gte" | "lte"
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind == "fixed_iterations":
            if not self.iterations or self.iterations < 1:
                raise ValidationError("fixed_iterations criterion needs iterations >= 1")
        elif self.kind == "metric_threshold":
            if self.metric is None or self.value is None or self.direction not in ("gte", "lte"):
                raise ValidationError("metric_threshold criterion needs metric, direction (gte|lte), value")
        else:
            raise ValidationError(f"unknown stopping criterion kind {self.kind!r}")

    @staticmethod
    def fixed(n: int) -> "StoppingCriterion":
        return StoppingCriterion(kind="fixed_iterations", iterations=n)

    @staticmethod
    def threshold(metric: str, direction: str, value: float) -> "StoppingCriterion":
        return StoppingCriterion(kind="metric_threshold", metric=metric, direction=direction, value=value)


@dataclass(frozen=True)
class CycleConfig:
    mode: str
    trainer: str
    cycles: int
    epochs_per_cycle: int
    batch_size: int
    seed: int
    num_classes: int
    pass_threshold: float = 0.8
    learning_rate: float = 0.05
    momentum: float = 0.9
    trainer_cfg: TrainerConfig = field(default_factory=TrainerConfig)
    stopping: Optional[StoppingCriterion] = None
    topn: tuple = (1, 5)
    robustness_cases: Optional[int] = None
    static_k: int = 2
    static_ratios: Optional[dict] = None
    frozen_realizations: bool = False
    overlap: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.cycles < 1:
            raise ValidationError("cycles must be at least 1")
        if self.epochs_per_cycle < 1:
            raise ValidationError("epochs_per_cycle must be at least 1")
        if not 0.0 <= self.pass_threshold <= 1.0:
            raise ValidationError("pass_threshold must be in [0, 1]")


@dataclass
class CycleRecord:
    cycle: int
    sr_mt: float
    accuracy: dict  # N -> fraction
    suites: list  # per-suite outcome records
    loss_stats: dict
    failed_ids: list
    passed_ids: list
    policy: dict  # policy active during this cycle's retraining
    model_version: int
    wall_time: float = 0.0  # in-memory only, not serialized

    def to_dict(self) -> dict:
        return {
            "cycle": self.cycle,
            "sr_mt": self.sr_mt,
            "accuracy": {str(k): v for k, v in sorted(self.accuracy.items())},
            "suites": self.suites,
            "loss_stats": self.loss_stats,
            "failed_ids": list(self.failed_ids),
            "passed_ids": list(self.passed_ids),
            "policy": self.policy,
            "model_version": self.model_version,
        }

    @staticmethod
    def from_dict(d: dict) -> "CycleRecord":
        return CycleRecord(
            cycle=d["cycle"],
            sr_mt=d["sr_mt"],
            accuracy={int(k): v for k, v in d["accuracy"].items()},
            suites=d["suites"],
            loss_stats=d["loss_stats"],
            failed_ids=list(d["failed_ids"]),
            passed_ids=list(d["passed_ids"]),
            policy=d["policy"],
            model_version=d["model_version"],
        )

    def metric(self, name: str) -> float:
        if name == "sr_mt":
            return self.sr_mt
        if name.startswith("top") and name.endswith("_accuracy"):
            n = int(name[3 : -len("_accuracy")])
            if n in self.accuracy:
                return self.accuracy[n]
        raise ValidationError(f"unknown stopping metric {name!r}")


@dataclass
class RunHistory:
    config: dict
    records: list
    final_eval: dict
    termination: str
    final_version: int

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "final_eval": self.final_eval,
            "termination": self.termination,
            "final_version": self.final_version,
        }

    def to_json_dict(self) -> dict:
        return self.to_dict()

    def to_csv_rows(self) -> list:
        algo = self.config.get("trainer", "?")
        group = self.config.get("mode", "?")
        seed = self.config.get("seed", "")
        rows = []
        for r in self.records:
            rows.append((algo, group, "sr_mt", r.sr_mt, r.cycle, seed))
            for n, acc in sorted(r.accuracy.items()):
                rows.append((algo, group, f"top{n}_accuracy", acc, r.cycle, seed))
        rows.append((algo, group, "sr_mt", self.final_eval["sr_mt"], "final", seed))
        for n, acc in sorted(self.final_eval["topn"].items(), key=lambda kv: int(kv[0])):
            rows.append((algo, group, f"top{n}_accuracy", acc, "final", seed))
        return rows

    def save(self, path) -> None:
        payload = json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
        Path(path).write_text(payload)

    @staticmethod
    def load(path) -> "RunHistory":
        d = json.loads(Path(path).read_text())
        return RunHistory(
            config=d["config"],
            records=[CycleRecord.from_dict(r) for r in d["records"]],
            final_eval=d["final_eval"],
            termination=d["termination"],
            final_version=d["final_version"],
        )

    def summary(self) -> str:
        lines = [f"run: trainer={self.config.get('trainer')} mode={self.config.get('mode')} "
                 f"seed={self.config.get('seed')}"]
        for r in self.records:
            accs = " ".join(f"top{n}={v:.3f}" for n, v in sorted(r.accuracy.items()))
            lines.append(
                f"cycle {r.cycle}: SR_MT={r.sr_mt:.4f} {accs} "
                f"failed={len(r.failed_ids)} loss={r.loss_stats.get('total_mean', float('nan')):.4f}"
            )
        accs = " ".join(f"top{n}={v:.3f}" for n, v in sorted(self.final_eval["topn"].items(), key=lambda kv: int(kv[0])))
        lines.append(f"final: SR_MT={self.final_eval['sr_mt']:.4f} {accs}")
        lines.append(f"termination: {self.termination}")
        return "\n".join(lines)


def should_stop(records, criterion: Optional[StoppingCriterion]) -> bool:
    """Pure decision from the last record; no side effects."""
    if criterion is None or not records:
        return False
    if criterion.kind == "fixed_iterations":
        return len(records) >= criterion.iterations
    value = records[-1].metric(criterion.metric)
    return value >= criterion.value if criterion.direction == "gte" else value <= criterion.value


def _policy_for_cycle(cfg: CycleConfig, catalog, failed, passed, cycle: int) -> AugmentationPolicy:
    """Mode-specific policy; adaptive uses the previous cycle's partition."""
    if cfg.mode == "base":
        return base_policy(catalog, seed=cfg.seed)
    if cfg.mode == "static":
        return static_policy(catalog, ratios=cfg.static_ratios, k=cfg.static_k, seed=cfg.seed)
    weak, strong = base_pools(catalog)
    if failed is None:  # cycle 0: nothing tested yet
        log.info("adaptive cycle %d: no prior partition, using base strong pool", cycle)
        return adaptive_policy([], [], weak, strong, seed=cfg.seed)
    return adaptive_policy(failed, passed, weak, strong, seed=cfg.seed)


def default_evaluator(cfg: CycleConfig, split: DatasetSplit, catalog) -> Callable:
    """Tester + accuracy on a snapshot: suites from the test split and catalog."""
    if not split.test:
        raise ValidationError("run needs a non-empty test split")
    suites = build_suites(catalog, split.test, max_cases=cfg.robustness_cases, seed=cfg.seed)

    def evaluator(snapshot):
        report = robustness(snapshot, suites, pass_threshold=cfg.pass_threshold, seed=cfg.seed)
        eval_report = evaluate(snapshot, split.test, topn_list=cfg.topn, sr_mt=report.sr_mt)
        failed, passed = partition(report.outcomes)
        return report, eval_report, failed, passed

    return evaluator


@dataclass
class ResumeState:
    start_cycle: int
    records: list
    failed_ids: list
    passed_ids: list
    optimizer_velocities: Optional[dict] = None


def _train_one_cycle(trainer: Trainer, stream: CycleStream, cycle: int,
                     metrics_sink: Optional[Callable]) -> tuple:
    """Run every epoch of the stream; returns (loss stats, nan diagnostic)."""
    sums = {"l_sup": 0.0, "l_unsup": 0.0, "l_penalty": 0.0, "total": 0.0, "mask_rate": 0.0}
    steps = 0
    trainer.on_cycle_start(cycle)
    per_epoch = stream.steps_per_epoch
    try:
        for i, batch in enumerate(stream):
            if per_epoch and i % per_epoch == 0:
                trainer.on_epoch_start()
            breakdown = trainer.step(batch)
            steps += 1
            for key in sums:
                sums[key] += getattr(breakdown, key)
            if metrics_sink is not None:
                record = {"cycle": cycle, "step": i}
                record.update(breakdown.to_record())
                metrics_sink(record)
    except NonFiniteError as exc:
        stats = {f"{k}_mean": (v / steps if steps else float("nan")) for k, v in sums.items()}
        stats["steps"] = steps
        return stats, str(exc)
    stats = {f"{k}_mean": (v / steps if steps else 0.0) for k, v in sums.items()}
    stats["steps"] = steps
    return stats, None


def run_cycles(model: Model, split: DatasetSplit, cfg: CycleConfig, catalog,
               evaluator: Optional[Callable] = None,
               metrics_sink: Optional[Callable] = None,
               checkpoint_dir=None,
               resume: Optional[ResumeState] = None,
               run_config: Optional[dict] = None) -> RunHistory:
    """Drive the feedback loop and return the accumulated history."""
    catalog = list(catalog)
    catalog_map = {mr.id: mr for mr in catalog}
    if evaluator is None:
        evaluator = default_evaluator(cfg, split, catalog)
    trainer = build_trainer(
        cfg.trainer, model, SGD(cfg.learning_rate, cfg.momentum), cfg.trainer_cfg,
        cfg.num_classes, seed=cfg.seed,
    )
    if resume is not None and resume.optimizer_velocities:
        trainer.optimizer.load_state_arrays(resume.optimizer_velocities)

    def stream_for(policy: AugmentationPolicy, cycle: int) -> CycleStream:
        spec = CycleDatasetSpec(
            split=split, policy=policy, batch_size=cfg.batch_size, epochs=cfg.epochs_per_cycle,
            num_classes=cfg.num_classes, n_weak_views=trainer.n_weak_views,
            frozen_realizations=cfg.frozen_realizations, cycle_index=cycle,
        )
        return build_cycle_stream(spec)

    records: list = []
    start_cycle = 0
    if resume is not None:
        records = list(resume.records)
        start_cycle = resume.start_cycle
        failed = [catalog_map[i] for i in resume.failed_ids if i in catalog_map]
        passed = [catalog_map[i] for i in resume.passed_ids if i in catalog_map]
        policy = _policy_for_cycle(cfg, catalog, failed, passed, start_cycle)
    else:
        policy = _policy_for_cycle(cfg, catalog, None, None, 0)
    stream = stream_for(policy, start_cycle)

    termination = "completed"
    executor = ThreadPoolExecutor(max_workers=2) if cfg.overlap else None
    try:
        for cycle in range(start_cycle, cfg.cycles):
            started = time.perf_counter()
            snapshot = model.snapshot()

            def eval_and_prepare(snap=snapshot, k=cycle):
                report, eval_report, failed, passed = evaluator(snap)
                next_policy = _policy_for_cycle(cfg, catalog, failed, passed, k + 1)
                next_stream = stream_for(next_policy, k + 1) if k + 1 < cfg.cycles else None
                return report, eval_report, failed, passed, next_stream

            future = executor.submit(eval_and_prepare) if executor else None
            sync_result = None if executor else eval_and_prepare()
            loss_stats, nan_diag = _train_one_cycle(trainer, stream, cycle, metrics_sink)
            report, eval_report, failed, passed, next_stream = (
                future.result() if future is not None else sync_result
            )

            records.append(
                CycleRecord(
                    cycle=cycle,
                    sr_mt=report.sr_mt,
                    accuracy=dict(eval_report.topn),
                    suites=[o.to_record() for o in report.outcomes],
                    loss_stats=loss_stats,
                    failed_ids=[mr.id for mr in failed],
                    passed_ids=[mr.id for mr in passed],
                    policy=stream.policy.to_log_dict(),
                    model_version=snapshot.version,
                    wall_time=time.perf_counter() - started,
                )
            )
            if checkpoint_dir is not None:
                _write_cycle_checkpoint(model, trainer, checkpoint_dir, cycle)
            if nan_diag is not None:
                log.error("cycle %d aborted: %s", cycle, nan_diag)
                termination = "aborted_nan"
                break
            if should_stop(records, cfg.stopping):
                termination = "threshold_met" if cfg.stopping.kind == "metric_threshold" else "completed"
                break
            if next_stream is not None:
                stream = next_stream
    finally:
        if executor:
            executor.shutdown(wait=True)

    final_snapshot = model.snapshot()
    if termination == "aborted_nan":
        final_eval = {"sr_mt": None, "topn": {}, "aborted": True}
    else:
        report, eval_report, _, _ = evaluator(final_snapshot)
        final_eval = {"sr_mt": report.sr_mt, "topn": {str(k): v for k, v in sorted(eval_report.topn.items())}}
    return RunHistory(
        config=run_config or {"trainer": cfg.trainer, "mode": cfg.mode, "seed": cfg.seed},
        records=records,
        final_eval=final_eval,
        termination=termination,
        final_version=final_snapshot.version,
    )


def _write_cycle_checkpoint(model: Model, trainer: Trainer, checkpoint_dir, cycle: int) -> None:
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.snapshot(), checkpoint_dir / f"cycle_{cycle:04d}.ckpt")
    np.savez(checkpoint_dir / f"cycle_{cycle:04d}_optimizer.npz", **trainer.optimizer.state_arrays())


def resume_state_from(history: RunHistory, checkpoint_dir) -> tuple:
    """Rebuild (model, ResumeState) from the last completed cycle's files."""
    from .nn import load_checkpoint

    if not history.records:
        raise ValidationError("history has no completed cycles to resume from")
    last = history.records[-1]
    ckpt = Path(checkpoint_dir) / f"cycle_{last.cycle:04d}.ckpt"
    model = Model.from_snapshot(load_checkpoint(ckpt))
    opt_path = Path(checkpoint_dir) / f"cycle_{last.cycle:04d}_optimizer.npz"
    velocities = None
    if opt_path.exists():
        with np.load(opt_path) as data:
            velocities = {name: data[name].copy() for name in data.files}
    state = ResumeState(
        start_cycle=last.cycle + 1,
        records=list(history.records),
        failed_ids=last.failed_ids,
        passed_ids=last.passed_ids,
        optimizer_velocities=velocities,
    )
    return model, state
