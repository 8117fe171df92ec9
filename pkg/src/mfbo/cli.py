"""Command-line harness: single runs, acquisition comparisons and cost/correlation sweeps.

Usage::

    mfbo run     --preset rkhs --acq mf-mes --base-seed 0 --out out/run
    mfbo compare --preset rkhs --repeats 5 --out out/compare
    mfbo sweep   --preset rkhs --acq mf-mes --out out/sweep
    mfbo export  --preset cof --out data/          # writes the stand-in table

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from mfbo import svg
from mfbo.core import HIGH, DataError, FitError, MfboError, ProblemError, ProblemSpec, Trace
from mfbo.engine import Acquisition, GaConfig, PoolStrategy, RunConfig, run_bo
from mfbo.metrics import DEFAULT_CAP, best_so_far, budget_to_optimum, crhf, relative_improvement
from mfbo.problems import (
    NoiseSpec,
    hartmann6_problem,
    load_tabular_problem,
    make_cof_standin,
    make_oligomer_standin,
    rkhs_problem,
    write_tabular,
)
from mfbo.surrogate import FitConfig

log = logging.getLogger("mfbo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_CORR_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
DEFAULT_COST_GRID = (0.01, 0.05, 0.1, 0.2, 0.5)
SYNTHETIC = ("rkhs", "hartmann6")

PRESETS = {
    "rkhs": dict(n_seed=5, budget=50.0, cost_low=0.1, target_corr=0.88),
    "hartmann6": dict(n_seed=5, budget=50.0, cost_low=0.1, target_corr=0.76),
    "cof": dict(n_seed=3, budget=math.inf, cost_low=0.2, target_corr=0.97),
    "oligomer": dict(n_seed=25, budget=50.0, cost_low=0.1, target_corr=0.91),
}


class ConfigError(MfboError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs; JSON config files use these field names."""

    preset: Optional[str] = None
    data: Optional[str] = None
    acquisitions: tuple = ()
    n_repeats: int = 5
    budget: float = 50.0
    n_seed: int = 5
    cost_low: float = 0.1
    target_corr: Optional[float] = None
    base_seed: int = 0
    out: str = "mfbo_out"
    recompute_target: bool = False
    corr_grid: tuple = DEFAULT_CORR_GRID
    cost_grid: tuple = DEFAULT_COST_GRID
    kernel: str = "matern52"
    jobs: int = 1

    def __post_init__(self):
        if (self.preset is None) == (self.data is None):
            raise ConfigError("give exactly one of --preset or --data")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset '{self.preset}'; choose from {sorted(PRESETS)}")
        try:
            acqs = tuple(Acquisition(a) for a in self.acquisitions)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        object.__setattr__(self, "acquisitions", acqs)
        object.__setattr__(self, "corr_grid", tuple(float(c) for c in self.corr_grid))
        object.__setattr__(self, "cost_grid", tuple(float(c) for c in self.cost_grid))
        if self.n_repeats < 1 or self.n_seed < 1 or self.jobs < 1:
            raise ConfigError("repeats, seeds and jobs must be positive")
        if not self.budget > 0:
            raise ConfigError("budget must be positive")
        if not 0 < self.cost_low <= 1:
            raise ConfigError(f"cost_low must lie in (0, 1], got {self.cost_low}")
        if self.target_corr is not None and not 0 < self.target_corr <= 1:
            raise ConfigError(f"corr must lie in (0, 1], got {self.target_corr}")
        if self.kernel not in ("rbf", "matern52"):
            raise ConfigError(f"unknown kernel '{self.kernel}'")

    @property
    def name(self) -> str:
        return self.preset or os.path.splitext(os.path.basename(self.data))[0]


# ---------------------------------------------------------------------------
# problems and runs


def build_problem(cfg: ExperimentConfig, cost_low: Optional[float] = None,
                  corr: Optional[float] = None) -> ProblemSpec:
    """Problem for ``cfg``; synthetic low-fidelity noise is seeded by ``base_seed``."""
    cost = cfg.cost_low if cost_low is None else cost_low
    rho = cfg.target_corr if corr is None else corr
    if cfg.data is not None:
        return load_tabular_problem(cfg.data, cost, recompute_target=cfg.recompute_target)
    rho = rho if rho is not None else PRESETS[cfg.preset]["target_corr"]
    if cfg.preset == "rkhs":
        return rkhs_problem(cost, NoiseSpec(rho, cfg.base_seed))
    if cfg.preset == "hartmann6":
        return hartmann6_problem(cost_low=cost, noise=NoiseSpec(rho, cfg.base_seed))
    if cfg.preset == "cof":
        return make_cof_standin(cost, rho)
    return make_oligomer_standin(cost, rho)[0]


def run_config(cfg: ExperimentConfig, problem: ProblemSpec, acq: Acquisition, rng_seed: int) -> RunConfig:
    evolutionary = problem.blocks is not None and problem.n > 10000
    return RunConfig(
        n_seed=cfg.n_seed, budget=cfg.budget, acquisition=acq, rng_seed=rng_seed,
        pool_strategy=PoolStrategy.EVOLUTIONARY if evolutionary else PoolStrategy.EXHAUSTIVE,
        ga=GaConfig(block_arity=problem.blocks.shape[1]) if evolutionary else None,
        fit=FitConfig(kernel=cfg.kernel),
    )


_problem_cache: dict = {}


def _task(args) -> Trace:
    # one independent run; problems are rebuilt (and memoized) per process
    cfg, cost, corr, acq, rng_seed = args
    key = (cfg, cost, corr)
    if key not in _problem_cache:
        _problem_cache.clear()
        _problem_cache[key] = build_problem(cfg, cost, corr)
    problem = _problem_cache[key]
    return run_bo(problem, run_config(cfg, problem, acq, rng_seed))


def run_many(cfg: ExperimentConfig, tasks: list) -> list[Trace]:
    """Run ``tasks`` (cost, corr, acquisition, rng_seed) in order, optionally in parallel."""
    full = [(cfg, *t) for t in tasks]
    if cfg.jobs == 1 or len(full) < 2:
        return [_task(t) for t in full]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_task, full))


# ---------------------------------------------------------------------------
# CSV helpers


def _num(v: float) -> str:
    return repr(float(v))


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: str) -> list[dict]:
    """Rows of any CSV written by this module, numbers parsed back to float."""
    def parse(s):
        try:
            return float(s)
        except ValueError:
            return s
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def trace_rows(problem: ProblemSpec, trace: Trace):
    groups = [(0, o) for o in trace.seed_observations]
    groups += [(k + 1, o) for k, o in enumerate(trace.step_observations)]
    for step, o in groups:
        yield [step, problem.candidate_id(o.candidate_index), o.level.name, _num(o.value),
               _num(o.cumulative_cost)]


def _flatten(series) -> str:
    return ";".join(f"{c!r}:{v!r}" for c, v in series)


def _best_on_grid(trace: Trace, grid: np.ndarray) -> np.ndarray:
    series = best_so_far(trace)
    costs = np.array([c for c, _ in series])
    vals = np.array([v for _, v in series])
    pos = np.searchsorted(costs, grid, side="right") - 1
    return np.where(pos >= 0, vals[np.maximum(pos, 0)], np.nan)


# ---------------------------------------------------------------------------
# commands


def cmd_run(cfg: ExperimentConfig) -> dict:
    acq = cfg.acquisitions[0] if cfg.acquisitions else Acquisition.MF_MES
    problem = build_problem(cfg)
    trace = run_many(cfg, [(None, None, acq, cfg.base_seed)])[0]
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "trace.csv")
    write_csv(path, ("step", "candidate_id", "fidelity", "value", "cumulative_cost"),
              trace_rows(problem, trace))
    by_level = {lev: [(o.cumulative_cost, o.value) for o in trace.observations if o.level == lev]
                for lev in ("HIGH", "LOW")}
    best = trace.best_high()
    chart = svg.line_chart(
        {}, points={f"{k} evaluations": v for k, v in by_level.items()},
        hlines={"domain optimum": problem.optimum, "obtained optimum": best},
        title=f"{cfg.name}: {acq.value}, seed {cfg.base_seed}",
        xlabel="cumulative cost", ylabel="value")
    with open(os.path.join(cfg.out, "trace.svg"), "w", encoding="utf-8") as fh:
        fh.write(chart)
    reached = "not reached" if trace.reached_optimum_at is None else f"reached at {trace.reached_optimum_at:.4g}"
    print(f"{cfg.name} {acq.value} seed {cfg.base_seed}: optimum {reached}, "
          f"spent {trace.spent:.4g}, stop={trace.stop_reason.value}")
    return {"trace": trace, "problem": problem}


def cmd_compare(cfg: ExperimentConfig) -> dict:
    acqs = cfg.acquisitions or tuple(Acquisition)
    if len(acqs) < 2:
        raise ConfigError("compare needs at least two acquisitions")
    problem = build_problem(cfg)
    tasks = [(None, None, a, cfg.base_seed + r) for a in acqs for r in range(cfg.n_repeats)]
    traces = run_many(cfg, tasks)
    os.makedirs(cfg.out, exist_ok=True)

    rows, crhf_rows = [], []
    for (_, _, a, seed), t in zip(tasks, traces):
        rep = seed - cfg.base_seed
        n_low = sum(1 for o in t.step_observations if o.level != HIGH)
        rows.append([a.value, rep, seed, _num(budget_to_optimum(t)), n_low, _flatten(best_so_far(t))])
        terms, _ = crhf(t, problem.optimum)
        acc = 0.0
        for i, v in terms:
            acc += v
            crhf_rows.append([a.value, rep, i, _num(v), _num(acc)])
    write_csv(os.path.join(cfg.out, "compare.csv"),
              ("acquisition", "repeat", "rng_seed", "budget_to_optimum", "n_low_steps", "best_so_far"), rows)
    write_csv(os.path.join(cfg.out, "crhf.csv"),
              ("acquisition", "repeat", "interval", "term", "cumulative"), crhf_rows)

    horizon = max(t.spent for t in traces)
    grid = np.linspace(0.0, horizon, 201)
    mean_best, mean_crhf = {}, {}
    for a in acqs:
        runs = [t for (_, _, b, _), t in zip(tasks, traces) if b is a]
        curves = np.array([_best_on_grid(t, grid) for t in runs])
        ok = ~np.isnan(curves).any(axis=0)
        mean_best[a.value] = [(float(x), float(y)) for x, y in zip(grid[ok], curves[:, ok].mean(axis=0))]
        cum = [np.cumsum([v for _, v in crhf(t, problem.optimum)[0]]) for t in runs]
        width = max(len(c) for c in cum)
        # runs that stopped early keep their final cumulative value
        padded = np.array([np.pad(c, (0, width - len(c)), mode="edge") for c in cum])
        mean_crhf[a.value] = [(float(i), float(v)) for i, v in enumerate(padded.mean(axis=0))]
    with open(os.path.join(cfg.out, "compare.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg.line_chart(mean_best, hlines={"domain optimum": problem.optimum}, step=True,
                                title=f"{cfg.name}: mean best-so-far ({cfg.n_repeats} runs)",
                                xlabel="cumulative cost", ylabel="best HIGH value"))
    with open(os.path.join(cfg.out, "crhf.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg.line_chart(mean_crhf, title=f"{cfg.name}: cumulative regret per HIGH evaluation",
                                xlabel="interval", ylabel="CRHF"))
    for a in acqs:
        scores = [float(r[3]) for r in rows if r[0] == a.value]
        print(f"{a.value:>9}: mean budget to optimum {np.mean(scores):.2f} over {len(scores)} runs")
    return {"traces": traces, "tasks": tasks}


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    if cfg.preset not in SYNTHETIC:
        raise ConfigError(f"sweep needs a synthetic preset {SYNTHETIC}")
    if not cfg.corr_grid or not cfg.cost_grid:
        raise ConfigError("sweep grids must be nonempty")
    mf = tuple(a for a in (cfg.acquisitions or (Acquisition.MF_MES,)) if a.multi_fidelity)
    if not mf:
        raise ConfigError("sweep needs at least one multi-fidelity acquisition")
    reps = range(cfg.n_repeats)
    # SF-EI fits and scores HIGH data only, so within a cost column its runs do
    # not depend on the correlation: one baseline per cost, shared by all rows.
    sf_tasks = [(cost, cfg.corr_grid[0], Acquisition.SF_EI, cfg.base_seed + r)
                for cost in cfg.cost_grid for r in reps]
    mf_tasks = [(cost, corr, a, cfg.base_seed + r)
                for a in mf for corr in cfg.corr_grid for cost in cfg.cost_grid for r in reps]
    traces = run_many(cfg, sf_tasks + mf_tasks)
    score = {t: budget_to_optimum(tr, DEFAULT_CAP) for t, tr in zip(sf_tasks + mf_tasks, traces)}
    baseline = {cost: float(np.mean([score[(cost, cfg.corr_grid[0], Acquisition.SF_EI, cfg.base_seed + r)]
                                     for r in reps])) for cost in cfg.cost_grid}

    os.makedirs(cfg.out, exist_ok=True)
    run_rows = [[Acquisition.SF_EI.value, "", _num(c), s - cfg.base_seed, s, _num(score[(c, k, a, s)])]
                for c, k, a, s in sf_tasks]
    run_rows += [[a.value, _num(k), _num(c), s - cfg.base_seed, s, _num(score[(c, k, a, s)])]
                 for c, k, a, s in mf_tasks]
    write_csv(os.path.join(cfg.out, "sweep_runs.csv"),
              ("acquisition", "corr", "cost", "repeat", "rng_seed", "budget_to_optimum"), run_rows)
    rows, cells = [], {}
    for a in mf:
        grid = []
        for corr in cfg.corr_grid:
            line = []
            for cost in cfg.cost_grid:
                runs = [score[(cost, corr, a, cfg.base_seed + r)] for r in reps]
                ri = relative_improvement(runs, baseline[cost])
                cells[(a.value, corr, cost)] = ri
                rows.append([_num(corr), _num(cost), a.value, _num(np.mean(runs)), _num(baseline[cost]), _num(ri)])
                line.append(ri)
            grid.append(line)
        with open(os.path.join(cfg.out, f"heatmap_{a.value}.svg"), "w", encoding="utf-8") as fh:
            fh.write(svg.heatmap(grid, cfg.cost_grid, cfg.corr_grid,
                                 title=f"{cfg.name}: relative improvement, {a.value}",
                                 xlabel="low-fidelity cost", ylabel="fidelity correlation"))
    write_csv(os.path.join(cfg.out, "sweep.csv"),
              ("corr", "cost", "acquisition", "mean_mf", "sf_baseline", "relative_improvement"), rows)
    for a in mf:
        below = sum(1 for (b, _, _), v in cells.items() if b == a.value and v < 1)
        print(f"{a.value}: relative improvement < 1 in {below} of {len(cfg.corr_grid) * len(cfg.cost_grid)} cells")
    return {"cells": cells, "baseline": baseline}


def cmd_export(cfg: ExperimentConfig) -> dict:
    if cfg.preset not in ("cof", "oligomer"):
        raise ConfigError("export writes the tabular stand-ins: --preset cof or oligomer")
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"{cfg.preset}.csv")
    rho = cfg.target_corr if cfg.target_corr is not None else PRESETS[cfg.preset]["target_corr"]
    if cfg.preset == "cof":
        write_tabular(make_cof_standin(cfg.cost_low, rho), path)
    else:
        problem, props = make_oligomer_standin(cfg.cost_low, rho)
        write_tabular(problem, path, props)
    print(path)
    return {"path": path}


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "export": cmd_export}


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mfbo", description="Two-fidelity Bayesian optimization benchmarks.")
    p.add_argument("command", choices=sorted(COMMANDS))
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--data", help="tabular CSV dataset")
    p.add_argument("--acq", action="append", dest="acquisitions",
                   choices=[a.value for a in Acquisition], help="repeatable")
    p.add_argument("--budget", type=float)
    p.add_argument("--seeds", type=int, dest="n_seed", help="number of seed candidates")
    p.add_argument("--repeats", type=int, dest="n_repeats")
    p.add_argument("--cost-low", type=float, dest="cost_low")
    p.add_argument("--corr", type=float, dest="target_corr")
    p.add_argument("--base-seed", "--seed", type=int, dest="base_seed")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON file of ExperimentConfig fields; flags win")
    p.add_argument("--recompute-target", action="store_true", default=None, dest="recompute_target")
    p.add_argument("--corr-grid", type=_floats, dest="corr_grid")
    p.add_argument("--cost-grid", type=_floats, dest="cost_grid")
    p.add_argument("--kernel", choices=["rbf", "matern52"])
    p.add_argument("--jobs", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset defaults, then the JSON config, then explicit flags."""
    given = {k: v for k, v in vars(args).items() if k in FIELDS and v is not None}
    from_file = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(from_file) - FIELDS
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "budget" in from_file and from_file["budget"] in ("inf", "Infinity", None):
            from_file["budget"] = math.inf
    merged = {**from_file, **given}
    if "preset" in given:
        merged.pop("data", None)
    if "data" in given:
        merged.pop("preset", None)
    preset = merged.get("preset")
    values = dict(PRESETS.get(preset, {}))
    if preset is None:
        values.pop("target_corr", None)
    values.update(merged)
    try:
        return ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"mfbo: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ProblemError, OSError) as e:
        print(f"mfbo: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"mfbo: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"mfbo: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
