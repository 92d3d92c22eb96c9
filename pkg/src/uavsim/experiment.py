"""Sweep runner: evaluates the solver and benchmark methods over a grid of
(swept value, trial) cells and emits tidy CSV rows.

Determinism contract: every cell's seed is derived from (master seed, sweep
variable, value, trial), rows are sorted by a fixed key, and timing numbers
live in a separate sidecar file so the main results CSV is byte-identical
across reruns and worker counts.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import orchestrator
from .scenario import ScenarioConfig, config_from_dict, generate_scenario

SWEEP_VARS = ("layers", "atoms_per_layer", "num_users")
METHODS = ("ao", "rd", "ud", "pso", "de", "nosim")

RESULT_FIELDS = ("sweep_var", "value", "trial", "method", "capacity_bits_s_hz",
                 "iterations", "seed")
TIMING_FIELDS = ("sweep_var", "value", "trial", "method", "wall_ms")


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: vary a single scenario field over `values`, `trials` seeds
    per value, evaluating each method on the same scenarios."""

    sweep_var: str
    values: tuple
    trials: int = 3
    methods: tuple = ("ao",)
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    master_seed: int = 0

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {SWEEP_VARS}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.trials < 1 or not self.values:
            raise ValueError("need at least one value and one trial")
        if self.sweep_var == "atoms_per_layer":
            for v in self.values:
                if math.isqrt(int(v)) ** 2 != int(v):
                    raise ValueError(f"atom counts must be perfect squares, got {v}")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "methods", tuple(self.methods))

    def cells(self) -> list[tuple]:
        return [(value, trial, method)
                for value in self.values
                for trial in range(self.trials)
                for method in self.methods]


def spec_from_dict(raw: dict) -> ExperimentSpec:
    data = dict(raw)
    base = config_from_dict(data.pop("base", {}) or {})
    kwargs = {}
    for key in ("sweep_var", "values", "trials", "methods", "master_seed"):
        if key in data:
            kwargs[key] = data.pop(key)
    if data:
        raise ValueError(f"unknown experiment keys: {sorted(data)}")
    if "values" in kwargs:
        kwargs["values"] = tuple(int(v) for v in kwargs["values"])
    if "methods" in kwargs:
        kwargs["methods"] = tuple(kwargs["methods"])
    return ExperimentSpec(base=base, **kwargs)


def cell_seed(spec: ExperimentSpec, value: int, trial: int) -> int:
    """Stable per-cell seed; methods share it so comparisons are paired."""
    code = SWEEP_VARS.index(spec.sweep_var)
    ss = np.random.SeedSequence([spec.master_seed, code, int(value), trial])
    return int(ss.generate_state(1)[0])


_RUNNERS = {
    "ao": lambda sc: orchestrator.ao_solve(sc, phase_strategy="lbl"),
    "rd": orchestrator.benchmark_rd,
    "ud": orchestrator.benchmark_ud,
    "pso": orchestrator.benchmark_pso,
    "de": orchestrator.benchmark_de,
    "nosim": orchestrator.benchmark_no_sim,
}


def run_cell(spec: ExperimentSpec, value: int, trial: int, method: str) -> dict:
    """Evaluate one (value, trial, method) cell; returns a tidy row dict
    plus the wall-clock time under a separate key."""
    seed = cell_seed(spec, value, trial)
    config = replace(spec.base, **{spec.sweep_var: int(value)})
    scenario = generate_scenario(config, seed=seed)
    t0 = time.perf_counter()
    solution = _RUNNERS[method](scenario)
    wall_ms = (time.perf_counter() - t0) * 1e3
    return dict(
        sweep_var=spec.sweep_var, value=int(value), trial=trial, method=method,
        capacity_bits_s_hz=solution.capacity,
        iterations=len(solution.trace.iterations), seed=seed, wall_ms=wall_ms)


def _cell_path(out_dir: Path, value, trial, method) -> Path:
    return out_dir / "cells" / f"{value}_{trial}_{method}.json"


def _run_cell_args(args):
    """Worker entry; converts exceptions into error records so one bad cell
    does not kill the pool."""
    spec, value, trial, method = args
    try:
        return run_cell(spec, value, trial, method)
    except Exception as exc:  # noqa: BLE001 - reported to the caller
        return dict(error=f"{type(exc).__name__}: {exc}",
                    value=int(value), trial=trial, method=method)


def run_experiment(spec: ExperimentSpec, jobs: int = 1,
                   out_dir: str | Path | None = None) -> tuple[list[dict], list[dict]]:
    """Run every cell, resuming from any per-cell files already in out_dir.

    Each finished cell is written to disk immediately, so an interrupted run
    keeps its partial results and failed cells are retried on rerun.
    Returns (sorted row dicts with wall_ms attached, failure records).
    """
    cell_dir = None
    if out_dir is not None:
        cell_dir = Path(out_dir)
        (cell_dir / "cells").mkdir(parents=True, exist_ok=True)

    rows = []
    pending = []
    for value, trial, method in spec.cells():
        if cell_dir is not None:
            path = _cell_path(cell_dir, value, trial, method)
            if path.exists():
                with open(path, "r", encoding="utf-8") as fh:
                    rows.append(json.load(fh))
                continue
        pending.append((spec, value, trial, method))

    if jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            fresh = list(pool.map(_run_cell_args, pending))
    else:
        fresh = [_run_cell_args(args) for args in pending]

    failures = []
    for row in fresh:
        if "error" in row:
            failures.append(row)
            continue
        if cell_dir is not None:
            path = _cell_path(cell_dir, row["value"], row["trial"], row["method"])
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(row, fh)
        rows.append(row)

    rows.sort(key=lambda r: (r["value"], r["trial"], r["method"]))
    return rows, failures


def write_results(rows: list[dict], results_path, timings_path) -> None:
    """Split rows into the deterministic results CSV and the timing sidecar."""
    with open(results_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["capacity_bits_s_hz"] = repr(float(row["capacity_bits_s_hz"]))
            writer.writerow(out)
    with open(timings_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMING_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean capacity per (value, method) across trials, sorted."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault((row["value"], row["method"]), []).append(
            float(row["capacity_bits_s_hz"]))
    return [dict(value=value, method=method,
                 mean_capacity_bits_s_hz=float(np.mean(caps)), trials=len(caps))
            for (value, method), caps in sorted(groups.items())]
