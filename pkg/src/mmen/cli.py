"""Command-line runner: ``mmen run|sweep|eval|dump-features``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .data import IdxFormatError
from .metrics import bundle_ccd, dump_features, evaluate, write_ccd_csv
from .nets import CheckpointError, load_checkpoint
from .trainer import TrainingDiverged, final_accuracy, sweep, train

logger = logging.getLogger("mmen")

SUMMARY_HEADER = ("variant", "prediction_head", "accuracy", "acc_c", "acc_d", "status")


def _fmt(x: float) -> str:
    return "NaN" if np.isnan(x) else f"{x:.6f}"


def run_variant(cfg: ExperimentConfig, variant: str) -> list:
    """Train one variant and write its artifacts; returns the summary row."""
    out = cfg.output_dir / variant
    out.mkdir(parents=True, exist_ok=True)
    pair = cfg.dataset.build()
    try:
        result = train(pair, replace(cfg.train, variant=variant), cfg.model)
    except TrainingDiverged as exc:
        logger.error("%s", exc)
        return [variant, "", "NaN", "NaN", "NaN", f"diverged at epoch {exc.epoch} ({exc.loss_name})"]
    result.log.to_csv(out / "metrics.csv")
    result.model.save(out / "model.ckpt")
    dump_features(result.bundle, pair, out / "features.csv")
    if result.reference_ccd is not None:
        write_ccd_csv(bundle_ccd(result.bundle, pair, result.reference_ccd, epoch=result.log.final.epoch),
                      out / "ccd.csv")
    rec = result.log.final
    return [variant, result.model.prediction_head, _fmt(final_accuracy(result)), _fmt(rec.acc_c), _fmt(rec.acc_d), "ok"]


def _run_variant_task(args):
    return run_variant(*args)


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, v) for v in cfg.variants]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_variant_task, tasks))
    else:
        rows = [run_variant(*t) for t in tasks]
    with open(cfg.output_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
    for row in rows:
        print(f"{row[0]}: accuracy={row[2]} ({row[5]})")
    return 0 if all(row[-1] == "ok" for row in rows) else 1


def cmd_sweep(cfg: ExperimentConfig, k_values, lambda_values, jobs: int = 1) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    result = sweep(cfg.dataset.build(), replace(cfg.train, variant="mmen"), k_values, lambda_values,
                   cfg.model, jobs=jobs)
    result.to_csv(cfg.output_dir / "sweep.csv")
    for (k, lam), err in result.failures.items():
        logger.error("cell k=%s lambda=%g: %s", k, lam, err)
    print(f"wrote {cfg.output_dir / 'sweep.csv'} ({len(result.failures)} failed cells)")
    return 0 if result.ok else 1


def _load_matching(checkpoint, cfg: ExperimentConfig):
    bundle, meta = load_checkpoint(checkpoint)
    pair = cfg.dataset.build()
    expected = bundle.g.spec.input_dim
    if pair.n_features != expected:
        raise ValueError(f"checkpoint expects {expected} input features, dataset has {pair.n_features}")
    if bundle.n_classes != pair.class_count:
        raise ValueError(f"checkpoint expects {bundle.n_classes} classes, dataset has {pair.class_count}")
    return bundle, pair


def cmd_eval(checkpoint, cfg: ExperimentConfig, out=None) -> int:
    bundle, pair = _load_matching(checkpoint, cfg)
    rec = evaluate(bundle, pair)
    row = {
        "acc_c": _fmt(rec.accuracy_classifier),
        "acc_d": _fmt(rec.accuracy_discriminator),
        "h_target": _fmt(rec.h_target),
        "target_xent_true": _fmt(rec.xent_true_target),
        "l_c_source": _fmt(rec.l_c_source),
    }
    for key, value in row.items():
        print(f"{key}={value}")
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(row.keys())
            w.writerow(row.values())
    return 0


def cmd_dump_features(checkpoint, cfg: ExperimentConfig, out) -> int:
    bundle, pair = _load_matching(checkpoint, cfg)
    dump_features(bundle, pair, out)
    return 0


def _number_list(kind):
    def parse(text):
        try:
            values = [kind(v) for v in text.replace(",", " ").split()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a list of {kind.__name__} values: {text!r}") from None
        if not values:
            raise argparse.ArgumentTypeError("list is empty")
        return values
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmen", description="Minimax entropy domain adaptation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every variant listed in the config")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=1, help="train variants in parallel processes")

    sw = sub.add_parser("sweep", help="grid over k and lambda for the mmen variant")
    sw.add_argument("config")
    sw.add_argument("--k", type=_number_list(int), required=True, help="e.g. '2,3,4,5'")
    sw.add_argument("--lambda", dest="lam", type=_number_list(float), required=True, help="e.g. '0.01,0.1,1'")
    sw.add_argument("--jobs", type=int, default=1)

    ev = sub.add_parser("eval", help="report C-head and D-head target accuracy of a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("config")
    ev.add_argument("--out", help="also write the record as CSV")

    dump = sub.add_parser("dump-features", help="write generator features of both domains")
    dump.add_argument("checkpoint")
    dump.add_argument("config")
    dump.add_argument("out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            return cmd_run(cfg, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.k, args.lam, args.jobs)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, cfg, args.out)
        return cmd_dump_features(args.checkpoint, cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, IdxFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
