"""Budget-accounted optimization loop and the evolutionary pool proposer."""

from __future__ import annotations

import enum
import logging
import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from mfbo.acquisition import AcqScores, mf_custom, mf_mes, mf_tvr, select_next, sf_ei
from mfbo.core import (
    HIGH,
    LOW,
    DomainExhausted,
    FitError,
    Observation,
    ProblemError,
    ProblemSpec,
    StopReason,
    Trace,
)
from mfbo.surrogate import FitConfig, GpModel, fit

log = logging.getLogger(__name__)

EXHAUSTIVE_MAX_N = 10000


class Acquisition(str, enum.Enum):
    SF_EI = "sf-ei"
    MF_MES = "mf-mes"
    MF_TVR = "mf-tvr"
    MF_CUSTOM = "mf-custom"

    @property
    def multi_fidelity(self) -> bool:
        return self is not Acquisition.SF_EI


class PoolStrategy(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    EVOLUTIONARY = "evolutionary"


@dataclass(frozen=True)
class GaConfig:
    block_arity: int = 6
    population: int = 128
    generations: int = 8
    mutation_rate: float = 0.1
    elite_fraction: float = 0.25

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.block_arity < 1 or self.generations < 1:
            raise ValueError("block_arity and generations must be positive")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    """Settings for one run.

    Hyperparameters get the full multi-start search for the first
    ``full_fit_iterations`` iterations; after that only a warm start from the
    previous optimum is refined.
    """

    n_seed: int = 5
    budget: float = 50.0
    acquisition: Acquisition = Acquisition.MF_MES
    rng_seed: int = 0
    pool_strategy: PoolStrategy = PoolStrategy.EXHAUSTIVE
    ga: Optional[GaConfig] = None
    fit: FitConfig = field(default_factory=FitConfig)
    full_fit_iterations: int = 5
    n_fstar: int = 16
    max_steps: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "acquisition", Acquisition(self.acquisition))
        object.__setattr__(self, "pool_strategy", PoolStrategy(self.pool_strategy))
        if self.n_seed < 1:
            raise ValueError("n_seed must be positive")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if self.pool_strategy is PoolStrategy.EVOLUTIONARY and self.ga is None:
            raise ValueError("EVOLUTIONARY pool strategy requires a GaConfig")


def seed_design(problem: ProblemSpec, n_seed: int, rng_seed: int) -> list[Observation]:
    """``n_seed`` distinct random candidates, each observed at HIGH then LOW."""
    if n_seed > problem.n:
        raise ProblemError(f"n_seed={n_seed} exceeds domain size {problem.n}")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(problem.n, size=n_seed, replace=False)
    obs, spent = [], 0.0
    for i in chosen:
        for level in (HIGH, LOW):
            fid = problem.fidelity(level)
            spent += fid.cost
            obs.append(Observation(int(i), fid, problem.value(int(i), level), spent))
    return obs


def score_pool(problem: ProblemSpec, model: GpModel, pool: np.ndarray,
               acquisition: Acquisition, incumbent: float, rng_seed,
               n_fstar: int = 16) -> AcqScores:
    acquisition = Acquisition(acquisition)
    if acquisition is Acquisition.SF_EI:
        return sf_ei(model, pool, incumbent)
    if acquisition is Acquisition.MF_TVR:
        return mf_tvr(model, pool, problem.cost_low, incumbent)
    mes = mf_mes(model, pool, problem.cost_low, rng_seed=rng_seed, n_fstar=n_fstar,
                 incumbent=incumbent)
    if acquisition is Acquisition.MF_MES:
        return mes
    return mf_custom(mes, mf_tvr(model, pool, problem.cost_low, incumbent))


# ---------------------------------------------------------------------------
# evolutionary proposals

_block_lookup: "weakref.WeakKeyDictionary[ProblemSpec, tuple]" = weakref.WeakKeyDictionary()


def _blocks_index(problem: ProblemSpec):
    cached = _block_lookup.get(problem)
    if cached is None:
        blocks = problem.blocks
        table = {tuple(row): i for i, row in enumerate(blocks.tolist())}
        alphabets = [np.unique(blocks[:, k]) for k in range(blocks.shape[1])]
        cached = (table, alphabets)
        _block_lookup[problem] = cached
    return cached


def propose_pool_evolutionary(problem: ProblemSpec, acq: Callable[[np.ndarray], np.ndarray],
                              ga: GaConfig, rng_seed, seed_indices=()) -> np.ndarray:
    """Candidate pool grown by a genetic search over building-block tuples.

    ``acq`` maps candidate indices to one desirability score each.
    ``seed_indices`` (best first) start the population; random rows fill the
    rest. Elites survive each generation, the remaining slots are filled by
    uniform crossover of elite parents followed by per-block mutation.
    Children missing from the table are discarded. Returns every candidate
    that was ever in a population, sorted.
    """
    if problem.blocks is None:
        raise ProblemError(f"problem '{problem.name}' has no building-block columns")
    if problem.blocks.shape[1] != ga.block_arity:
        raise ProblemError(f"block arity {problem.blocks.shape[1]} != configured {ga.block_arity}")
    table, alphabets = _blocks_index(problem)
    rng = np.random.default_rng(rng_seed)
    n_elite = max(1, int(math.ceil(ga.elite_fraction * ga.population)))
    size = min(ga.population, problem.n)

    start = list(dict.fromkeys(int(i) for i in seed_indices))[:n_elite]
    taken = set(start)
    fill = [int(i) for i in rng.permutation(problem.n)[: size + len(start)] if int(i) not in taken]
    population = np.array((start + fill)[:size], dtype=np.int64)

    seen: dict[int, None] = {}
    for gen in range(ga.generations):
        seen.update(dict.fromkeys(population.tolist()))
        if gen == ga.generations - 1 or n_elite >= population.size:
            if n_elite >= population.size:
                break
            continue
        s = np.asarray(acq(population), dtype=float)
        order = np.lexsort((population, -s))
        elites = population[order[:n_elite]]
        children = []
        for _ in range(size - n_elite):
            p1, p2 = problem.blocks[elites[rng.integers(elites.size, size=2)]]
            child = np.where(rng.random(ga.block_arity) < 0.5, p1, p2)
            for k in np.flatnonzero(rng.random(ga.block_arity) < ga.mutation_rate):
                child[k] = alphabets[k][rng.integers(alphabets[k].size)]
            row = table.get(tuple(child.tolist()))
            if row is not None:
                children.append(row)
        population = np.array(list(dict.fromkeys(elites.tolist() + children)), dtype=np.int64)
    return np.array(sorted(seen), dtype=np.int64)


# ---------------------------------------------------------------------------
# the loop


def _fit_config(config: RunConfig, iteration: int) -> FitConfig:
    if iteration < config.full_fit_iterations:
        return config.fit
    return replace(config.fit, n_restarts=0)


def run_bo(problem: ProblemSpec, config: RunConfig) -> Trace:
    """Seed, then fit / score / select / observe until the optimum or the budget."""
    if config.pool_strategy is PoolStrategy.EXHAUSTIVE and problem.n > EXHAUSTIVE_MAX_N:
        log.info("domain of %d candidates scored exhaustively", problem.n)
    if config.pool_strategy is PoolStrategy.EVOLUTIONARY and problem.n <= EXHAUSTIVE_MAX_N:
        raise ValueError(f"domains with n <= {EXHAUSTIVE_MAX_N} must use the exhaustive pool")
    acq = config.acquisition
    seeds = seed_design(problem, config.n_seed, config.rng_seed)
    trace = Trace(seed_observations=seeds, budget=config.budget, rng_seed=config.rng_seed)
    observed = {(o.candidate_index, int(o.level)) for o in seeds}
    if any(o.level == HIGH and o.value == problem.optimum for o in seeds):
        trace.reached_optimum_at = trace.seed_cost
        trace.stop_reason = StopReason.OPTIMUM
        return trace

    spent = trace.seed_cost
    previous = None
    all_indices = np.arange(problem.n)
    iteration = 0
    while spent < config.budget:
        if config.max_steps is not None and iteration >= config.max_steps:
            trace.stop_reason = StopReason.BUDGET
            break
        obs = trace.observations
        train = obs if acq.multi_fidelity else [o for o in obs if o.level == HIGH]
        try:
            model = fit(train, problem, _fit_config(config, iteration), previous=previous)
        except FitError as e:
            raise FitError(f"iteration {iteration}: {e}") from e
        previous = model.params
        incumbent = max(o.value for o in obs if o.level == HIGH)
        step_seed = (config.rng_seed, iteration)

        def score(pool):
            return score_pool(problem, model, pool, acq, incumbent, step_seed, config.n_fstar)

        if config.pool_strategy is PoolStrategy.EVOLUTIONARY:
            best = sorted({o.candidate_index for o in obs if o.level == HIGH},
                          key=lambda i: (-problem.y_high[i], i))

            def per_candidate(pool):
                s = score(pool)
                out = np.full(pool.size, -np.inf)
                pos = {int(c): k for k, c in enumerate(pool)}
                for c, v in zip(s.indices, s.scores):
                    out[pos[int(c)]] = max(out[pos[int(c)]], v)
                return out

            pool = propose_pool_evolutionary(problem, per_candidate, config.ga,
                                             (config.rng_seed, iteration, 1), best)
        else:
            pool = all_indices
        scores = score(pool)
        try:
            idx, level = select_next(scores, exclude=observed)
        except DomainExhausted:
            if config.pool_strategy is PoolStrategy.EVOLUTIONARY:
                rng = np.random.default_rng((config.rng_seed, iteration, 2))
                untried = [i for i in rng.permutation(problem.n)[: 4 * config.ga.population]
                           if (int(i), int(HIGH)) not in observed]
                scores = score(np.array(sorted(untried), dtype=np.int64))
                idx, level = select_next(scores, exclude=observed)
            else:
                trace.stop_reason = StopReason.EXHAUSTED
                break
        fid = problem.fidelity(level)
        spent += fid.cost
        value = problem.value(idx, level)
        trace.step_observations.append(Observation(idx, fid, value, spent))
        observed.add((idx, int(level)))
        iteration += 1
        if level == HIGH and value == problem.optimum:
            trace.reached_optimum_at = spent
            trace.stop_reason = StopReason.OPTIMUM
            break
    else:
        trace.stop_reason = StopReason.BUDGET
    log.debug("run seed=%d acq=%s steps=%d spent=%.3f stop=%s", config.rng_seed, acq.value,
              trace.n_steps, spent, trace.stop_reason)
    return trace
