"""Command-line driver: configure, run, and inspect experiments.

Commands
--------
run          full meta-optimization from a config file; writes iteration CSV,
             radius trace, timings, checkpoints, best schedule, summary, manifest
gen-dataset  sample + label one first-iteration dataset (debug step 1)
train-one    train a single surrogate on a saved dataset (debug step 2)
verify       price a fixed schedule on the configured oracle (debug step 3)
report       re-print the summary of a finished run directory

Exit codes: 0 success, 1 configuration error (with the offending field path),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

import esbo
from esbo import meta
from esbo.baseline import run_baseline
from esbo.config import ConfigError, RunConfig, load_config
from esbo.dataset import build_dataset, full_range_box, load_dataset, save_dataset, split_dataset
from esbo.cnn import build_default_architecture, init_params, save_model
from esbo.oracles import SyntheticPriceOracle, SyntheticPriceParams
from esbo.training import report_to_csv, train


def save_schedule_csv(q: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"q_{t + 1}" for t in range(len(q))])
        writer.writerow([repr(float(v)) for v in q])


def load_schedule_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        row = next(reader, None)
    if header is None or row is None or len(header) != len(row):
        raise ValueError(f"{path}: expected a q_1..q_H header and one value row")
    return np.array([float(v) for v in row])


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.scheme.seed = args.seed
    if args.workers is not None:
        cfg.scheme.workers = args.workers
    if getattr(args, "iterations_max", None) is not None:
        cfg.scheme.iterations_max = args.iterations_max
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg


def _write_manifest(cfg: RunConfig, out: Path) -> None:
    manifest = {
        "config_sha256": cfg.config_hash(),
        "seed": cfg.scheme.seed,
        "esbo_version": esbo.__version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    oracle = cfg.build_oracle()
    _write_manifest(cfg, out)

    result = meta.run(oracle, cfg.storage, cfg.scheme, artifacts_dir=out)
    meta.write_iterations_csv(result.records, out / "iterations.csv")
    meta.write_radius_trace(result.records, out / "radius_trace.csv")
    meta.write_timings_csv(result.records, out / "timings.csv")
    save_schedule_csv(result.best_schedule, out / "schedule_best.csv")

    summary = {
        "best_profit": result.best_profit,
        "best_iteration": result.best_iteration,
        "iterations": len(result.records),
        "stopped_reason": result.stopped_reason,
    }
    if cfg.baseline_enabled:
        linear = _linearized_oracle(cfg, oracle)
        base = run_baseline(oracle, linear, cfg.storage)
        summary["baseline_actual_profit"] = base.profit_on_true
        summary["baseline_linear_profit"] = base.profit_on_linear
        summary["baseline_degenerate"] = base.degenerate_simultaneous_flow
        summary["profit_over_baseline"] = result.best_profit - base.profit_on_true
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)

    print(f"best verified profit {result.best_profit:.4f} "
          f"(iteration {result.best_iteration}/{len(result.records)}, "
          f"stopped: {result.stopped_reason})")
    if "baseline_actual_profit" in summary:
        print(f"baseline actual profit {summary['baseline_actual_profit']:.4f} "
              f"(margin {summary['profit_over_baseline']:+.4f})")
    print(f"artifacts in {out}")
    return 0


def _linearized_oracle(cfg: RunConfig, oracle):
    """Fixed-price linearization: the true oracle's prices at a zero schedule."""
    lam0 = oracle.evaluate(np.zeros(cfg.storage.horizon)).lam
    return SyntheticPriceOracle(SyntheticPriceParams(a=lam0))


def cmd_gen_dataset(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    oracle = cfg.build_oracle()
    data_seed, _, _ = meta.iteration_seeds(cfg.scheme.seed, 1)
    box = full_range_box(cfg.storage, epsilon=cfg.scheme.epsilon)
    dataset = build_dataset(oracle, box, cfg.storage, cfg.scheme.dataset_size,
                            data_seed, workers=cfg.scheme.workers)
    save_dataset(dataset, args.out)
    print(f"wrote {dataset.n} labeled rows to {args.out}")
    return 0


def cmd_train_one(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dataset = load_dataset(args.dataset)
    train_set, valid_set = split_dataset(dataset, seed=dataset.seed)
    _, ens_seed, _ = meta.iteration_seeds(cfg.scheme.seed, 1)
    member_seed = ens_seed  # member 0 of iteration 1
    net = build_default_architecture(
        horizon=dataset.horizon, hidden_channels=cfg.scheme.hidden_channels,
        beta=cfg.scheme.beta, normalization=dataset.normalization,
    )
    init_params(net, member_seed)
    from dataclasses import replace

    train_cfg = replace(cfg.scheme.train, seed=member_seed)
    net, report = train(net, train_set, valid_set, train_cfg)
    out = Path(args.out)
    save_model(net, out)
    report_to_csv(report, out.with_suffix(".report.csv"))
    print(f"best validation MSE {report.best_valid_mse!r} at epoch {report.best_epoch}; "
          f"model saved to {out}")
    return 0


def cmd_verify(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    oracle = cfg.build_oracle()
    q = load_schedule_csv(args.schedule)
    if q.shape[0] != cfg.storage.horizon:
        raise ValueError(f"schedule length {q.shape[0]} != horizon {cfg.storage.horizon}")
    resp = oracle.evaluate(q)
    print(f"{'hour':>4} {'q':>12} {'lambda':>12} {'profit':>12} status")
    for t in range(q.shape[0]):
        term = -q[t] * resp.lam[t] + 0.0
        print(f"{t + 1:>4} {q[t]:>12.6f} {resp.lam[t]:>12.6f} {term:>12.6f} "
              f"{resp.per_hour_status[t]}")
    print(f"total profit: {resp.profit:.6f}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"{summary_path} not found; is this a run directory?")
    with open(summary_path) as fh:
        summary = json.load(fh)
    print(json.dumps(summary, indent=2))
    iterations = run_dir / "iterations.csv"
    if iterations.exists():
        with open(iterations) as fh:
            for line in fh:
                print(line.rstrip())
    timings = run_dir / "timings.csv"
    if timings.exists():
        print()
        with open(timings) as fh:
            for line in fh:
                print(line.rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esbo", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override scheme.seed")
        sp.add_argument("--workers", type=int, default=None, help="override scheme.workers")

    sp = sub.add_parser("run", help="full meta-optimization run")
    common(sp)
    sp.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    sp.add_argument("--iterations-max", type=int, default=None)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gen-dataset", help="generate a first-iteration dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="dataset CSV path")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train-one", help="train one surrogate on a saved dataset")
    common(sp)
    sp.add_argument("--dataset", required=True, help="dataset CSV from gen-dataset")
    sp.add_argument("--out", required=True, help="model checkpoint path (.npz)")
    sp.set_defaults(func=cmd_train_one)

    sp = sub.add_parser("verify", help="price a fixed schedule on the oracle")
    common(sp)
    sp.add_argument("--schedule", required=True, help="schedule CSV (q_1..q_H header)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="print the summary of a run directory")
    sp.add_argument("--run-dir", required=True)
    sp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure with module diagnostic
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
