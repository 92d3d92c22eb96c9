"""Command-line front end: solve one scenario, run an experiment sweep,
generate a training dataset, or train the phase generator.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure
with partial output preserved.  The default output directory comes from the
UAVSIM_OUT_DIR environment variable (falling back to the working directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import cvae as cvae_mod
from . import experiment as experiment_mod
from . import orchestrator
from .errors import Divergence, UavSimError
from .scenario import load_config, generate_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DATASET_SHARD_SIZE = 10_000
SCHEMA_VERSION = 1


def _out_dir(explicit: str | None) -> Path:
    base = explicit or os.environ.get("UAVSIM_OUT_DIR") or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config_or_none(path: str):
    try:
        return load_config(path)
    except FileNotFoundError:
        print(f"error: config file not found: {path}", file=sys.stderr)
    except (ValueError, yaml.YAMLError) as exc:
        print(f"error: bad config {path}: {exc}", file=sys.stderr)
    return None


def cmd_solve(args) -> int:
    config = _load_config_or_none(args.config)
    if config is None:
        return EXIT_CONFIG
    model = None
    if args.phase in ("cvae", "auto") and args.model:
        try:
            model = cvae_mod.load_checkpoint(args.model)
        except (FileNotFoundError, ValueError) as exc:
            return _fail(f"cannot load model checkpoint: {exc}", EXIT_CONFIG)
    if args.phase == "cvae" and model is None:
        return _fail("--phase cvae requires --model with a trained checkpoint",
                     EXIT_CONFIG)

    out = Path(args.out) if args.out else _out_dir(None) / "solution.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        scenario = generate_scenario(config, seed=args.seed)
        solution = orchestrator.ao_solve(scenario, phase_strategy=args.phase,
                                         model=model)
    except UavSimError as exc:
        return _fail(f"solver failed: {exc}", EXIT_RUNTIME)

    payload = dict(
        schema_version=SCHEMA_VERSION,
        seed=scenario.seed,
        capacity_bits_s_hz=solution.capacity,
        termination=solution.trace.termination,
        association=solution.assoc.entries.tolist(),
        uav_positions=solution.positions.tolist(),
        phases=solution.phases.theta.tolist(),
        trace=[{k: v for k, v in rec.items() if k != "wall_ms"}
               for rec in solution.trace.iterations],
    )
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    print(f"capacity {solution.capacity:.6f} bits/s/Hz "
          f"({solution.trace.termination} after {len(solution.trace.iterations)} "
          f"iterations) -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        spec = experiment_mod.spec_from_dict(raw)
    except FileNotFoundError:
        return _fail(f"experiment spec not found: {args.spec}", EXIT_CONFIG)
    except (ValueError, yaml.YAMLError) as exc:
        return _fail(f"bad experiment spec: {exc}", EXIT_CONFIG)

    out_dir = _out_dir(args.out_dir)
    rows, failures = experiment_mod.run_experiment(spec, jobs=args.jobs,
                                                   out_dir=out_dir)
    experiment_mod.write_results(rows, out_dir / "results.csv",
                                 out_dir / "timings.csv")
    for failure in failures:
        print(f"error: cell value={failure['value']} trial={failure['trial']} "
              f"method={failure['method']}: {failure['error']}", file=sys.stderr)
    print(f"{len(rows)} cells -> {out_dir / 'results.csv'}"
          + (f" ({len(failures)} failed)" if failures else ""))
    return EXIT_RUNTIME if failures else EXIT_OK


def _shard_paths(out: Path, shards: int) -> list[Path]:
    if shards == 1:
        return [out]
    stem = out.name[:-len(out.suffix)] if out.suffix else out.name
    return [out.with_name(f"{stem}.part{i:03d}{out.suffix or '.npz'}")
            for i in range(shards)]


def cmd_dataset(args) -> int:
    config = _load_config_or_none(args.config)
    if config is None:
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _out_dir(None) / "dataset.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    counts = [DATASET_SHARD_SIZE] * (args.count // DATASET_SHARD_SIZE)
    if args.count % DATASET_SHARD_SIZE:
        counts.append(args.count % DATASET_SHARD_SIZE)
    paths = _shard_paths(out, len(counts))
    written = 0
    for shard, (path, count) in enumerate(zip(paths, counts)):
        try:
            dataset = cvae_mod.generate_dataset(config, count,
                                                seed=args.seed + shard)
        except UavSimError as exc:
            print(f"error: dataset generation stopped after {written} records: {exc}",
                  file=sys.stderr)
            return EXIT_RUNTIME
        dataset.save(path)
        written += count
        print(f"wrote {count} records -> {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        dataset = cvae_mod.PhaseDataset.load(args.dataset)
    except FileNotFoundError:
        return _fail(f"dataset not found: {args.dataset}", EXIT_CONFIG)
    except (ValueError, KeyError) as exc:
        return _fail(f"bad dataset {args.dataset}: {exc}", EXIT_CONFIG)

    out = Path(args.out) if args.out else _out_dir(None) / "model.pt"
    out.parent.mkdir(parents=True, exist_ok=True)
    loss_path = out.with_suffix(".loss.csv")
    model = cvae_mod.build_model(dataset)
    curve: list[dict] = []
    best = [np.inf]

    def checkpoint_best(record, trained):
        curve.append(record)
        if record["total"] < best[0]:
            best[0] = record["total"]
            cvae_mod.save_checkpoint(trained, out)

    code = EXIT_OK
    try:
        cvae_mod.train_cvae(dataset, model, epochs=args.epochs, lr=args.lr,
                            seed=args.seed, on_epoch=checkpoint_best)
    except Divergence as exc:
        print(f"error: training diverged: {exc}; best checkpoint kept at {out}",
              file=sys.stderr)
        code = EXIT_RUNTIME

    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("epoch", "total", "recon", "kl",
                                                "capacity"))
        writer.writeheader()
        for record in curve:
            row = dict(record)
            for key in ("total", "recon", "kl", "capacity"):
                row[key] = repr(float(row[key]))
            writer.writerow(row)
    if code == EXIT_OK:
        print(f"trained {args.epochs} epochs, final loss "
              f"{curve[-1]['total']:.6g} -> {out}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavsim",
        description="Simulate and optimize metasurface-equipped UAV uplinks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the alternating optimizer on one scenario")
    p.add_argument("config", help="scenario config file (YAML)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--phase", choices=("lbl", "cvae", "auto"), default="lbl")
    p.add_argument("--model", default=None, help="trained generator checkpoint")
    p.add_argument("--out", default=None, help="solution JSON path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run a sweep defined by a spec file")
    p.add_argument("spec", help="experiment spec file (YAML)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out-dir", default=None, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("dataset", help="generate solved training records")
    p.add_argument("config", help="scenario config file (YAML)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="dataset path (.npz)")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the phase generator on a dataset")
    p.add_argument("dataset", help="dataset file written by the dataset command")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="checkpoint path (.pt)")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
