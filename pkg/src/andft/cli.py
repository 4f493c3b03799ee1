"""Command-line harness.

    andft gen-data <cfg>            write the synthetic dataset
    andft train <cfg>               train one trainer, write metrics.csv + checkpoint/
    andft eval <cfg> <checkpoint>   per-nuisance report for a saved model
    andft compare <cfg>             baseline vs NDFT vs A-NDFT, compare.csv + report.csv

Exit codes: 0 ok, 2 bad config, 3 I/O failure, 4 numeric abort.
"""

from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import logging
import os
from pathlib import Path
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import TRAINER_KINDS, ConfigError, RunConfig
from .data_synth import DatasetError, generate_dataset, load_dataset, save_dataset
from .evaluation import evaluate, write_report_csv
from .nn_core import NumericError
from .trainers import TRAINERS, IterationMetrics

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("andft")


def _f(x: float) -> str:
    return repr(float(x))


def metrics_header(k: int) -> list[str]:
    return ["t", "loss_o", "adv_loss", *[f"acc_n_{i + 1}" for i in range(k)], "backbone_forwards", "elapsed_seconds"]


def metrics_row(m: IterationMetrics) -> list[str]:
    return [
        str(m.t),
        _f(m.loss_o),
        _f(m.adv_loss),
        *(_f(a) for a in m.acc_n),
        str(m.backbone_forwards_total),
        _f(m.elapsed_seconds),
    ]


def write_metrics_csv(path, metrics: list[IterationMetrics], k: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics_header(k))
        for m in metrics:
            w.writerow(metrics_row(m))


def cmd_gen_data(cfg: RunConfig) -> int:
    ds = generate_dataset(cfg.dataset_spec())
    save_dataset(cfg.dataset_dir, ds)
    print(f"wrote {cfg.dataset_dir}: M_train={len(ds.train)} M_test={len(ds.test)}")
    for i, nu in enumerate(ds.spec.nuisances):
        emp = np.bincount(ds.train.nuisances[:, i], minlength=nu.cardinality) / len(ds.train)
        print(f"  {nu.name}: train marginal spec={[round(p, 4) for p in nu.train_marginal]} empirical={np.round(emp, 4).tolist()}")
    return EXIT_OK


def _run_training(cfg: RunConfig, trainer: str, out_dir: Path, ds, eval_every: int | None = None):
    """Train one kind; returns (result, compare rows). Writes metrics.csv even on numeric abort."""
    tcfg = cfg.train_config(trainer)
    rows: list[list[str]] = []

    def on_iter(state, m):
        if eval_every and (m.t % eval_every == 0 or m.t == tcfg.T):
            acc = evaluate(state, ds.test, ds.spec, cfg.iou_thresh).overall_accuracy
            rows.append([trainer, str(m.t), _f(m.elapsed_seconds), str(m.backbone_forwards_total), _f(acc)])

    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = TRAINERS[trainer](ds, tcfg, callback=on_iter)
    except NumericError as e:
        write_metrics_csv(out_dir / "metrics.csv", getattr(e, "metrics", []), ds.spec.k)
        raise
    write_metrics_csv(out_dir / "metrics.csv", result.metrics, ds.spec.k)
    save_checkpoint(out_dir / "checkpoint", result.state)
    return result, rows


def cmd_train(cfg: RunConfig) -> int:
    ds = load_dataset(cfg.dataset_dir)
    out = Path(cfg.output_dir)
    result, _ = _run_training(cfg, cfg.trainer, out, ds)
    report = evaluate(result.state, ds.test, ds.spec, cfg.iou_thresh)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        write_report_csv(fh, [((), report)])
    print(f"wrote {out / 'metrics.csv'} ({len(result.metrics)} rows) and {out / 'checkpoint'}")
    print(
        f"trainer={cfg.trainer} test_accuracy={report.overall_accuracy:.4f} "
        f"backbone_forwards={result.state.counters.backbone_forwards}"
    )
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    ds = load_dataset(cfg.dataset_dir)
    state = load_checkpoint(checkpoint)
    report = evaluate(state, ds.test, ds.spec, cfg.iou_thresh)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def _compare_worker(cfg_dict: dict, trainer: str):
    cfg = RunConfig(**cfg_dict)
    ds = load_dataset(cfg.dataset_dir)
    result, rows = _run_training(cfg, trainer, Path(cfg.output_dir) / trainer, ds, cfg.eval_every)
    report = evaluate(result.state, ds.test, ds.spec, cfg.iou_thresh)
    return trainer, rows, report, result.state.counters.backbone_forwards


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TOOL_THREADS", "1")))
    except ValueError:
        return 1


def cmd_compare(cfg: RunConfig) -> int:
    load_dataset(cfg.dataset_dir)  # fail early on a missing dataset
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = min(_threads(), len(TRAINER_KINDS))
    cfg_dict = cfg.to_dict()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_compare_worker, [cfg_dict] * len(TRAINER_KINDS), TRAINER_KINDS))
    else:
        results = [_compare_worker(cfg_dict, t) for t in TRAINER_KINDS]

    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trainer", "t", "elapsed_seconds", "backbone_forwards", "test_accuracy"])
        for _, rows, _, _ in results:
            w.writerows(rows)
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        write_report_csv(fh, [((trainer,), report) for trainer, _, report, _ in results], header_prefix=("trainer",))

    forwards = {trainer: f for trainer, _, _, f in results}
    for trainer, _, report, f in results:
        print(f"{trainer}: test_accuracy={report.overall_accuracy:.4f} backbone_forwards={f}")
    print(f"forwards ratio NDFT/A-NDFT = {forwards['ndft'] / forwards['andft']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="andft", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "compare"):
        sub.add_parser(name).add_argument("config")
    p = sub.add_parser("eval")
    p.add_argument("config")
    p.add_argument("checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # own handler on the package logger so warnings reach stderr even when
    # the host application already configured the root logger
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.WARNING)
    log.propagate = False
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_compare(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetError, CheckpointError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    finally:
        log.removeHandler(handler)
        log.propagate = True


if __name__ == "__main__":
    sys.exit(main())
