"""Command-line entry point.

Subcommands:
    run       execute a configured experiment (one run per seed)
    test      score a checkpoint with the metamorphic tester
    report    tabulate finished runs into a comparison table
    list-mrs  enumerate the relation catalog for a dataset

Exit codes: 0 success, 2 validation error, 3 runtime abort (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import ENV_DATA_DIR, ConfigError, RunConfig, load_config, validate_config
from .data import load_cifar, load_mnist, subsample_and_split
from .errors import MetaRetrainError, ValidationError
from .metrics import evaluate
from .nn import Model, load_checkpoint, model_spec, save_checkpoint
from .orchestrator import CycleConfig, RunHistory, resume_state_from, run_cycles
from .relations import LABEL_PRESERVING, catalog_default, label_map_array
from .report import comparison_table, export
from .tester import build_suites, robustness

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _dataset_props(dataset: str) -> tuple:
    if dataset == "mnist":
        return (1, 28, 28), 10
    if dataset == "cifar10":
        return (3, 32, 32), 10
    return (3, 32, 32), 100


def load_dataset(dataset: str, data_dir) -> list:
    """Load the training portion of a stock dataset from `data_dir`.

    Expected filenames: MNIST `train-images-idx3-ubyte`/`train-labels-idx1-ubyte`
    (unpacked IDX), CIFAR-10 `data_batch_1..5.bin`, CIFAR-100 `train.bin`
    (searched in data_dir and the stock `cifar-*-batches-bin` subdirectories).
    """
    data_dir = Path(data_dir)
    if dataset == "mnist":
        images = data_dir / "train-images-idx3-ubyte"
        labels = data_dir / "train-labels-idx1-ubyte"
        for p in (images, labels):
            if not p.exists():
                raise ValidationError(f"dataset file not found: {p}")
        return load_mnist(images, labels)
    if dataset == "cifar10":
        for root in (data_dir, data_dir / "cifar-10-batches-bin"):
            batches = sorted(root.glob("data_batch_*.bin"))
            if batches:
                return load_cifar(batches, variant=10)
        raise ValidationError(f"no CIFAR-10 data_batch_*.bin under {data_dir}")
    for root in (data_dir, data_dir / "cifar-100-binary"):
        train = root / "train.bin"
        if train.exists():
            return load_cifar([train], variant=100)
    raise ValidationError(f"no CIFAR-100 train.bin under {data_dir}")


def _build_model(cfg: RunConfig, input_shape, n_classes: int, seed: int) -> Model:
    if cfg.warm_start:
        model = Model.from_snapshot(load_checkpoint(cfg.warm_start))
        if model.spec.input_shape != tuple(input_shape) or model.spec.num_classes != n_classes:
            raise ValidationError(
                f"warm_start checkpoint expects input {model.spec.input_shape}/"
                f"{model.spec.num_classes} classes, run needs {tuple(input_shape)}/{n_classes}"
            )
        if cfg.trainable_last_k is not None:
            model.set_trainable_last(cfg.trainable_last_k)
        return model
    return Model(model_spec(cfg.model, input_shape, n_classes), seed=seed)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.data_dir:
        cfg.values["data_dir"] = args.data_dir
    if cfg.values["data_dir"] is None:
        cfg.values["data_dir"] = os.environ.get(ENV_DATA_DIR)
    if args.output_dir:
        cfg.values["output_dir"] = args.output_dir
    if args.seed is not None:
        cfg.values["seeds"] = (args.seed,)
    if args.deterministic:
        cfg.values["deterministic"] = True
    if args.checkpoint:
        cfg.values["warm_start"] = args.checkpoint
    validate_config(cfg)
    if args.resume and len(cfg.seeds) != 1:
        raise ConfigError("seeds: --resume continues exactly one run; pass a single seed")

    input_shape, n_classes = _dataset_props(cfg.dataset)
    samples = load_dataset(cfg.dataset, cfg.data_dir)
    catalog = catalog_default(cfg.dataset)
    worst = EXIT_OK

    for seed in cfg.seeds:
        split = subsample_and_split(samples, cfg.fraction, cfg.ratios(), seed=seed,
                                    stratified=cfg.stratified)
        cycle_cfg = CycleConfig(
            mode=cfg.mode, trainer=cfg.trainer, cycles=cfg.cycles,
            epochs_per_cycle=cfg.epochs_per_cycle, batch_size=cfg.batch_size, seed=seed,
            num_classes=n_classes, pass_threshold=cfg.pass_threshold,
            learning_rate=cfg.learning_rate, momentum=cfg.momentum,
            trainer_cfg=cfg.trainer_config(), stopping=cfg.stopping_criterion,
            topn=tuple(cfg.topn), robustness_cases=cfg.robustness_cases,
            static_k=cfg.static_k, frozen_realizations=cfg.frozen_realizations,
            overlap=not cfg.deterministic,
        )

        resume = None
        if args.resume:
            run_dir = Path(args.resume)
            history = RunHistory.load(run_dir / "history.json")
            model, resume = resume_state_from(history, run_dir / "checkpoints")
        else:
            run_id = f"{time.strftime('%Y%m%d-%H%M%S')}-{time.time_ns() % 1_000_000:06d}-seed{seed}"
            run_dir = Path(cfg.output_dir) / run_id
            model = _build_model(cfg, input_shape, n_classes, seed)

        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "reports").mkdir(exist_ok=True)
        (run_dir / "config").write_text(cfg.resolved_text(seed=seed))

        metrics_path = run_dir / "reports" / "metrics.jsonl"
        mode = "a" if args.resume else "w"
        with open(metrics_path, mode) as metrics_file:
            def sink(record, _f=metrics_file):
                _f.write(json.dumps(record, sort_keys=True) + "\n")

            history = run_cycles(
                model, split, cycle_cfg, catalog, metrics_sink=sink,
                checkpoint_dir=run_dir / "checkpoints", resume=resume,
                run_config=cfg.public_dict(seed=seed),
            )

        history.save(run_dir / "history.json")
        (run_dir / "summary.txt").write_text(history.summary() + "\n")
        export(history, "csv", run_dir / "reports" / "history.csv")
        export(history, "json", run_dir / "reports" / "history.json")
        save_checkpoint(model.snapshot(), run_dir / "checkpoints" / "final.ckpt")
        print(f"[{run_dir.name}] termination={history.termination}")
        print(history.summary())
        if history.termination == "aborted_nan":
            worst = EXIT_RUNTIME
    return worst


def cmd_test(args) -> int:
    snapshot = load_checkpoint(args.checkpoint)
    data_dir = args.data_dir or os.environ.get(ENV_DATA_DIR)
    if not data_dir:
        raise ValidationError(f"data_dir not set (flag or ${ENV_DATA_DIR})")
    samples = load_dataset(args.dataset, data_dir)
    split = subsample_and_split(samples, args.fraction, (0.0, 0.0, 1.0), seed=args.seed)
    catalog = catalog_default(args.dataset)
    suites = build_suites(catalog, split.test, max_cases=args.cases, seed=args.seed)
    report = robustness(snapshot, suites, pass_threshold=args.pass_threshold, seed=args.seed)
    eval_report = evaluate(snapshot, split.test, topn_list=(1, 5), sr_mt=report.sr_mt)
    print(report.to_text())
    print(f"top1={eval_report.topn[1]:.4f} top5={eval_report.topn[5]:.4f} on {eval_report.sample_count} samples")
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"robustness": report.to_dict(), "accuracy": eval_report.to_dict()}
    (out_dir / "robustness_report.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    (out_dir / "robustness_report.txt").write_text(report.to_text() + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    histories = [RunHistory.load(path) for path in args.runs]
    layout = args.layout.split(",") if args.layout else None
    table = comparison_table(histories, layout=layout, accuracy_n=args.accuracy_n)
    print(table.render())
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export(table, "csv", out_dir / "comparison.csv")
    export(table, "json", out_dir / "comparison.json")
    return EXIT_OK


def cmd_list_mrs(args) -> int:
    n_classes = 100 if args.dataset == "cifar100" else 10
    print(f"{'id':16s} {'kind':22s} {'strength':8s} label_map")
    for mr in catalog_default(args.dataset):
        if mr.kind == LABEL_PRESERVING:
            mapping = "identity"
        else:
            table = label_map_array(mr, n_classes)
            moved = [f"{c}->{int(t)}" for c, t in enumerate(table) if c != t]
            mapping = " ".join(moved) + " (others fixed)"
        print(f"{mr.id:16s} {mr.kind:22s} {mr.strength:8s} {mapping}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaretrain",
                                     description="Metamorphic robustness testing and retraining")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--data-dir")
    p_run.add_argument("--output-dir")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--deterministic", action="store_true",
                       help="force sequential execution (default unless config disables it)")
    p_run.add_argument("--checkpoint", help="warm-start checkpoint override")
    p_run.add_argument("--resume", help="existing run directory to continue")
    p_run.set_defaults(func=cmd_run)

    p_test = sub.add_parser("test", help="run metamorphic tests against a checkpoint")
    p_test.add_argument("--checkpoint", required=True)
    p_test.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10", "cifar100"])
    p_test.add_argument("--data-dir")
    p_test.add_argument("--fraction", type=float, default=0.02)
    p_test.add_argument("--seed", type=int, default=0)
    p_test.add_argument("--pass-threshold", type=float, default=0.8)
    p_test.add_argument("--cases", type=int, default=100)
    p_test.add_argument("--output-dir", default=".")
    p_test.set_defaults(func=cmd_test)

    p_rep = sub.add_parser("report", help="tabulate finished runs")
    p_rep.add_argument("runs", nargs="+", help="history.json files")
    p_rep.add_argument("--layout", help="comma-separated configuration column order")
    p_rep.add_argument("--accuracy-n", type=int, default=1)
    p_rep.add_argument("--output-dir", default=".")
    p_rep.set_defaults(func=cmd_report)

    p_mrs = sub.add_parser("list-mrs", help="print the relation catalog")
    p_mrs.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10", "cifar100"])
    p_mrs.set_defaults(func=cmd_list_mrs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MetaRetrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
