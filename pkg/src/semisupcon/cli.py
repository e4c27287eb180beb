"""Command line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration failure.
"""
import argparse
import csv
import dataclasses
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import build_split, load_config
from .exceptions import ConfigError, SSCError, UnknownParameter
from .model import load_checkpoint, save_checkpoint
from .data import AugmentConfig
from .selftrain import PRESET_NAMES, MetricsWriter, apply_preset, evaluate, run_experiment
from .verify import run_suites


EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

SWEEP_RANGES = {
    "tau": (0.9, 0.98),
    "mu": (3, 12),
    "strength": (3, 20),
}


def _makedirs(path):
    os.makedirs(path, exist_ok=True)
    return path


def train_once(cfg, metrics_path=None, checkpoint_path=None, dataset=None):
    """Build the split from ``cfg`` and train; returns the ExperimentResult."""
    split = build_split(cfg, dataset)
    writer = MetricsWriter(metrics_path)
    result = run_experiment(cfg.train, split, cfg.augment, writer, settings=cfg.to_dict())
    if checkpoint_path:
        save_checkpoint(result.params, checkpoint_path)
    return result


def _final_accuracy(cfg):
    return train_once(cfg).final_accuracy


def _run_many(configs, jobs):
    if jobs <= 1:
        return [_final_accuracy(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_final_accuracy, configs))


def cmd_train(config_path):
    cfg = load_config(config_path)
    out = _makedirs(cfg.output_dir)
    result = train_once(cfg, os.path.join(out, cfg.output.metrics), os.path.join(out, cfg.output.checkpoint))
    print(f"final accuracy {result.final_accuracy:.4f}")
    return EXIT_OK


def ablation_configs(cfg, presets=tuple(PRESET_NAMES)):
    runs = []
    for preset in presets:
        for seed in cfg.seeds:
            seeded = cfg.with_seed(seed)
            runs.append((preset, seed, dataclasses.replace(seeded, train=apply_preset(seeded.train, preset))))
    return runs


def summarize(rows):
    """``[(preset, seed, acc)] -> [(preset, mean, sample std, n)]`` in preset order."""
    by = {}
    for preset, _, acc in rows:
        by.setdefault(preset, []).append(acc)
    out = []
    for preset, accs in by.items():
        std = statistics.stdev(accs) if len(accs) > 1 else 0.0
        out.append((preset, statistics.fmean(accs), std, len(accs)))
    return out


def cmd_ablate(config_path, jobs=1):
    cfg = load_config(config_path)
    out = _makedirs(cfg.output_dir)
    runs = ablation_configs(cfg)
    accs = _run_many([c for _, _, c in runs], jobs)
    rows = [(p, s, a) for (p, s, _), a in zip(runs, accs)]
    with open(os.path.join(out, "ablation_runs.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["preset", "name", "seed", "accuracy"])
        for p, s, a in rows:
            w.writerow([p, PRESET_NAMES[p], s, repr(a)])
    summary = summarize(rows)
    with open(os.path.join(out, cfg.output.summary), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["preset", "name", "mean_accuracy", "std", "n_seeds"])
        for p, mean, std, n in summary:
            w.writerow([p, PRESET_NAMES[p], repr(mean), repr(std), n])
            print(f"({p}) {PRESET_NAMES[p]:<26} {mean:.4f} +- {std:.4f}")
    return EXIT_OK


def parse_values(param, text):
    if param not in SWEEP_RANGES:
        raise UnknownParameter(f"cannot sweep {param!r}; choose one of {sorted(SWEEP_RANGES)}")
    lo, hi = SWEEP_RANGES[param]
    try:
        values = [float(v) if param == "tau" else int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad value list for {param}: {text!r}") from None
    for v in values:
        if not lo <= v <= hi:
            raise ConfigError(f"{param}={v} outside the documented range [{lo}, {hi}]")
    if not values:
        raise ConfigError("empty value list")
    return values


def sweep_configs(cfg, param, values):
    out = []
    for v in values:
        if param == "strength":
            aug = AugmentConfig.from_strength(v, cfg.augment.weak_noise_sigma)
            out.append(dataclasses.replace(cfg, augment=aug))
        else:
            out.append(dataclasses.replace(cfg, train=cfg.train.replace(**{param: v})))
    return out


def cmd_sweep(config_path, param, values_text, jobs=1):
    cfg = load_config(config_path)
    values = parse_values(param, values_text)
    out = _makedirs(cfg.output_dir)
    accs = _run_many(sweep_configs(cfg, param, values), jobs)
    with open(os.path.join(out, cfg.output.sweep), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "value", "mode", "seed", "accuracy"])
        for v, a in zip(values, accs):
            w.writerow([param, v, cfg.train.mode, cfg.train.seed, repr(a)])
            print(f"{param}={v}  accuracy={a:.4f}")
    return EXIT_OK


def cmd_verify(corrupt_gradient=False):
    results = run_suites(corrupt_gradient=corrupt_gradient)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("verify: all suites passed" if ok else "verify: FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_eval(config_path, checkpoint):
    cfg = load_config(config_path)
    split = build_split(cfg)
    try:
        params = load_checkpoint(checkpoint)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {checkpoint}: {exc.strerror or exc}") from None
    acc = evaluate(params, split.val_x, split.val_y, cfg.train)
    print(f"accuracy {acc:.4f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="semisupcon", description="Semi-supervised contrastive self-training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("config")

    s = sub.add_parser("ablate", help="run the six ablation presets over the configured seeds")
    s.add_argument("config")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("sweep", help="one run per hyperparameter value, same seed")
    s.add_argument("config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("verify", help="run the mathematical property suites")
    s.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    s = sub.add_parser("eval", help="evaluate a checkpoint on the config's validation split")
    s.add_argument("config")
    s.add_argument("--checkpoint", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.param, args.values, args.jobs)
        if args.command == "verify":
            return cmd_verify(args.corrupt_gradient)
        return cmd_eval(args.config, args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SSCError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
