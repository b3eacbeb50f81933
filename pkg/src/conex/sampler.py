"""Evolutionary MCMC search plus GA and uniform-random baselines.

The EMCMC driver keeps a running best configuration.  Every generation is
measured as a batch; members are then visited in index order and each is
accepted with probability ``exp(sigma * dperf)`` where ``dperf`` is its
relative improvement over the running best.  Accepted members are evolved
(crossover with the best, then mutation) into the next generation.  The GA
baseline is the same driver with a greedy acceptance rule.

All randomness comes from independent streams keyed by
``(seed, purpose, generation, member)``, so results do not depend on the
order in which a generation's measurements complete, and a resumed run
replays exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

from .executor import EvaluationRecord, Executor
from .space import Configuration, ConfigurationSpace, enumerate_configurations, random_configuration, space_size
from .validity import RuleSet, empty_rules

DIRECTIONS = ("minimize", "maximize")

# stream purposes
_INIT, _ACCEPT, _EVOLVE, _RANDOM = 0, 1, 2, 3

_ENUMERATE_LIMIT = 100_000


class SamplerError(RuntimeError):
    pass


class InvalidSeedError(SamplerError):
    pass


class _Journal(Protocol):
    def append(self, record: EvaluationRecord) -> None: ...

    def complete(self, summary: dict) -> None: ...


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class AcceptancePolicy:
    sigma: float = 50.0
    direction: str = "minimize"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")


@dataclass(frozen=True)
class SamplerSettings:
    population_size: int | None = None  # None -> 4 * N
    max_generations: int = 30
    min_improvement: float = 0.001
    crossover_fraction: float = 0.5
    mutation_fraction: float = 0.06
    seed: int = 0
    invalid_retry_limit: int = 20
    budget: int | None = None
    time_budget: float | None = None
    top_k: int = 50
    sigma: float = 50.0
    direction: str = "minimize"
    dedupe: bool = False

    def __post_init__(self):
        if not 0 < self.crossover_fraction <= 1:
            raise ValueError("crossover_fraction must be in (0, 1]")
        if not 0 <= self.mutation_fraction <= 1:
            raise ValueError("mutation_fraction must be in [0, 1]")
        if self.population_size is not None and self.population_size < 1:
            raise ValueError("population_size must be positive")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if self.budget is not None and self.budget < 1:
            raise ValueError("budget must be positive")
        if self.invalid_retry_limit < 0:
            raise ValueError("invalid_retry_limit must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        AcceptancePolicy(self.sigma, self.direction)

    @property
    def policy(self) -> AcceptancePolicy:
        return AcceptancePolicy(self.sigma, self.direction)

    def population_for(self, space: ConfigurationSpace) -> int:
        return self.population_size or 4 * space.dimension

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerationState:
    index: int
    population: list[Configuration]
    accepted: list[Configuration]
    best_config: Configuration
    best_perf: float
    improvement_vs_seed: float
    improvement: float = 0.0
    distinct_evaluated: int = 0

    def summary(self) -> dict:
        return {
            "generation": self.index,
            "size": len(self.population),
            "accepted": len(self.accepted),
            "best_perf": self.best_perf,
            "improvement": self.improvement,
            "improvement_vs_seed": self.improvement_vs_seed,
            "distinct_evaluated": self.distinct_evaluated,
        }


@dataclass
class TuneResult:
    sampler: str
    space_name: str
    direction: str
    best_config: Configuration
    best_perf: float
    seed_config: Configuration | None
    seed_perf: float | None
    history: list[GenerationState] = field(default_factory=list)
    top_k: list[tuple[Configuration, float]] = field(default_factory=list)
    evaluations: int = 0
    stop_reason: str = ""

    @property
    def generations(self) -> int:
        return len(self.history)

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "space": self.space_name,
            "direction": self.direction,
            "best_config": self.best_config.to_dict(),
            "best_perf": self.best_perf,
            "seed_config": self.seed_config.to_dict() if self.seed_config is not None else None,
            "seed_perf": self.seed_perf,
            "improvement_vs_seed": (
                relative_improvement(self.seed_perf, self.best_perf, self.direction) if self.seed_perf else None
            ),
            "evaluations": self.evaluations,
            "stop_reason": self.stop_reason,
            "history": [g.summary() for g in self.history],
            "top_k": [{"rank": i + 1, "performance": p, "config": c.to_dict()} for i, (c, p) in enumerate(self.top_k)],
        }


# -- acceptance ----------------------------------------------------------------


def relative_improvement(best_perf: float, cand_perf: float, direction: str = "minimize") -> float:
    """``(best - cand) / best`` for minimization, sign-flipped for maximization."""
    if not best_perf > 0:
        raise ValueError(f"best performance must be positive, got {best_perf}")
    delta = (best_perf - cand_perf) / best_perf
    return delta if direction == "minimize" else -delta


def acceptance_probability(delta: float, sigma: float = 50.0) -> float:
    """``exp(sigma * delta)``; values above 1 mean certain acceptance."""
    return math.exp(min(sigma * delta, 700.0))


def accept(best_perf: float, cand_perf: float, policy: AcceptancePolicy, rng: np.random.Generator) -> bool:
    delta = relative_improvement(best_perf, cand_perf, policy.direction)
    if delta >= 0:
        return True
    return bool(rng.random() < acceptance_probability(delta, policy.sigma))


def greedy_accept(best_perf: float, cand_perf: float, policy: AcceptancePolicy, rng: np.random.Generator | None = None) -> bool:
    """GA rule: keep a candidate only if it strictly improves on the best."""
    return relative_improvement(best_perf, cand_perf, policy.direction) > 0


# -- evolution -----------------------------------------------------------------


def crossover_count(n: int, fraction: float) -> int:
    return math.ceil(round(fraction * n, 9))


def mutation_count(n: int, fraction: float) -> int:
    if fraction == 0:
        return 0
    return max(1, math.ceil(round(fraction * n, 9)))


def random_valid_configuration(
    space: ConfigurationSpace,
    rules: RuleSet,
    rng: np.random.Generator,
    exclude: set[str] | None = None,
    attempts: int = 1000,
) -> Configuration:
    """Uniform draw restricted to valid (and, if given, unseen) configurations.

    Rejection sampling for at most ``attempts`` draws; small spaces then fall
    back to enumerating the admissible set.  The exclusion is dropped when it
    leaves nothing to draw, so the call always terminates.
    """
    for _ in range(attempts):
        c = random_configuration(space, rng)
        if rules.is_valid(c) and (exclude is None or c.key() not in exclude):
            return c
    if space_size(space) <= _ENUMERATE_LIMIT:
        valid = [c for c in enumerate_configurations(space) if rules.is_valid(c)]
        if not valid:
            raise SamplerError("the rules admit no valid configuration")
        fresh = [c for c in valid if exclude is None or c.key() not in exclude]
        pool = fresh or valid
        return pool[int(rng.integers(len(pool)))]
    if exclude:
        return random_valid_configuration(space, rules, rng, None, attempts)
    raise SamplerError(f"no valid configuration found in {attempts} random draws")


def evolve(
    best: Configuration,
    parents: list[Configuration],
    settings: SamplerSettings,
    space: ConfigurationSpace,
    rules: RuleSet,
    rng: np.random.Generator,
    seen: set[str] | None = None,
) -> list[Configuration]:
    """One child per parent: copy the crossover set from ``best``, then mutate.

    The crossover and mutation parameter sets are drawn once per call, as
    independent uniform subsets of the relevant parameters.  Mutation moves a
    parameter to a different candidate.  Invalid children (and, with ``seen``,
    already-sampled ones) are re-mutated on a freshly drawn mutation set up to
    ``invalid_retry_limit`` times, then replaced by a valid random configuration.
    """
    if not parents:
        raise ValueError("evolve needs at least one parent")
    names = space.relevant_names
    n = len(names)
    n_cross = crossover_count(n, settings.crossover_fraction)
    n_mut = mutation_count(n, settings.mutation_fraction)
    cross = [names[i] for i in sorted(rng.choice(n, size=n_cross, replace=False))]
    mutate = [names[i] for i in sorted(rng.choice(n, size=n_mut, replace=False))] if n_mut else []
    tries = settings.invalid_retry_limit + 1 if mutate else 1

    children = []
    for parent in parents:
        base = parent.to_dict()
        for name in cross:
            base[name] = best[name]
        child = None
        for attempt in range(tries):
            values = dict(base)
            # retries re-draw this child's mutation set so they explore other parameters
            chosen = mutate if attempt == 0 else [names[i] for i in sorted(rng.choice(n, size=n_mut, replace=False))]
            for name in chosen:
                cands = space[name].candidates
                if len(cands) > 1:
                    current = cands.index(values[name])
                    pick = int(rng.integers(len(cands) - 1))
                    values[name] = cands[pick + (pick >= current)]
            candidate = Configuration(values, space.name)
            if rules.is_valid(candidate) and (seen is None or candidate.key() not in seen):
                child = candidate
                break
        if child is None:
            child = random_valid_configuration(space, rules, rng, exclude=seen)
        if seen is not None:
            seen.add(child.key())
        children.append(child)
    return children


# -- drivers -------------------------------------------------------------------


class _Run:
    """Bookkeeping shared by all samplers: budget, journal, top-K, history."""

    def __init__(self, name, space, rules, executor, settings, journal, on_generation):
        self.name = name
        self.space = space
        self.rules = rules if rules is not None else empty_rules(space)
        self.executor = executor
        self.settings = settings
        self.journal = journal
        self.on_generation = on_generation
        self.direction = settings.direction
        self.observed: dict[str, tuple[Configuration, float | None]] = {}
        self.history: list[GenerationState] = []
        self.started = time.monotonic()

    def better(self, a: float, b: float) -> bool:
        return a < b if self.direction == "minimize" else a > b

    def remaining(self) -> float:
        if self.settings.time_budget is not None and time.monotonic() - self.started >= self.settings.time_budget:
            return 0
        if self.settings.budget is None:
            return math.inf
        return self.settings.budget - len(self.observed)

    def measure(self, configs: list[Configuration], generation: int) -> tuple[list[Configuration], list[EvaluationRecord]]:
        """Evaluate a generation, truncated to what the budget still allows.

        The budget counts distinct configurations this run has measured.
        """
        room = self.remaining()
        keep, new = [], set()
        for c in configs:
            k = c.key()
            if k not in self.observed and k not in new:
                if len(new) >= room:
                    break
                new.add(k)
            keep.append(c)
        on_fresh = self.journal.append if self.journal is not None else None
        results = self.executor.evaluate_batch(keep, generation, on_fresh)
        for c, (rec, _) in zip(keep, results):
            if c.key() not in self.observed:
                self.observed[c.key()] = (c, rec.performance if rec.ok else None)
        return keep, [rec for rec, _ in results]

    def top_k(self) -> list[tuple[Configuration, float]]:
        sign = 1.0 if self.direction == "minimize" else -1.0
        ok = [(c, p) for c, p in self.observed.values() if p is not None]
        ok.sort(key=lambda cp: (sign * cp[1], cp[0].key()))
        return ok[: self.settings.top_k]

    def record_generation(self, state: GenerationState) -> None:
        state.distinct_evaluated = len(self.observed)
        self.history.append(state)
        if self.on_generation is not None:
            self.on_generation(state)

    def finish(self, best, best_perf, seed_config, seed_perf, reason) -> TuneResult:
        result = TuneResult(
            sampler=self.name,
            space_name=self.space.name,
            direction=self.direction,
            best_config=best,
            best_perf=best_perf,
            seed_config=seed_config,
            seed_perf=seed_perf,
            history=self.history,
            top_k=self.top_k(),
            evaluations=len(self.observed),
            stop_reason=reason,
        )
        if self.journal is not None:
            self.journal.complete(
                {"best_config": best.to_dict(), "best_perf": best_perf, "evaluations": result.evaluations, "stop_reason": reason}
            )
        return result


def _generational(
    name: str,
    acceptor: Callable,
    space: ConfigurationSpace,
    rules: RuleSet | None,
    executor: Executor,
    settings: SamplerSettings,
    seed_config: Configuration,
    journal: _Journal | None = None,
    on_generation: Callable[[GenerationState], None] | None = None,
) -> TuneResult:
    run = _Run(name, space, rules, executor, settings, journal, on_generation)
    rules = run.rules
    report = rules.check(seed_config)
    if not report.valid:
        raise InvalidSeedError("seed configuration is invalid: " + "; ".join(m for _, m in report.violations))
    policy = settings.policy
    seed = settings.seed
    pop_size = settings.population_for(space)
    seen = {seed_config.key()} if settings.dedupe else None

    _, (seed_rec,) = run.measure([seed_config], 0)
    if not seed_rec.ok:
        raise SamplerError(f"seed configuration could not be evaluated ({seed_rec.status}): {seed_rec.stderr}")
    best, best_perf = seed_config, seed_rec.performance
    seed_perf = best_perf
    if settings.max_generations == 0:
        return run.finish(best, best_perf, seed_config, seed_perf, "max_generations")
    if run.remaining() <= 0:
        return run.finish(best, best_perf, seed_config, seed_perf, "budget")

    population = []
    for i in range(pop_size):
        c = random_valid_configuration(space, rules, stream(seed, _INIT, 1, i), exclude=seen)
        if seen is not None:
            seen.add(c.key())
        population.append(c)

    generation, stalled = 1, 0
    while True:
        population, records = run.measure(population, generation)
        prev_perf = best_perf
        accepted = []
        for i, (cfg, rec) in enumerate(zip(population, records)):
            if not rec.ok:
                continue
            if acceptor(best_perf, rec.performance, policy, stream(seed, _ACCEPT, generation, i)):
                accepted.append(cfg)
                if run.better(rec.performance, best_perf):
                    best, best_perf = cfg, rec.performance
        improvement = relative_improvement(prev_perf, best_perf, run.direction)
        run.record_generation(
            GenerationState(
                index=generation,
                population=population,
                accepted=accepted,
                best_config=best,
                best_perf=best_perf,
                improvement_vs_seed=relative_improvement(seed_perf, best_perf, run.direction),
                improvement=improvement,
            )
        )
        stalled = stalled + 1 if improvement < settings.min_improvement else 0
        if run.remaining() <= 0:
            reason = "budget"
        elif generation >= settings.max_generations:
            reason = "max_generations"
        elif stalled >= 2:
            reason = "converged"
        elif not population:
            reason = "budget"
        else:
            reason = ""
        if reason:
            return run.finish(best, best_perf, seed_config, seed_perf, reason)

        # an empty accepted set restarts from the whole previous generation;
        # parents are cycled so every generation keeps the configured size
        pool = accepted or population
        parents = [pool[i % len(pool)] for i in range(pop_size)]
        population = evolve(best, parents, settings, space, rules, stream(seed, _EVOLVE, generation), seen)
        generation += 1


def run_emcmc(space, rules, executor, settings, seed_config, journal=None, on_generation=None) -> TuneResult:
    """Evolutionary MCMC search starting from ``seed_config`` (usually the default)."""
    return _generational("emcmc", accept, space, rules, executor, settings, seed_config, journal, on_generation)


def run_ga(space, rules, executor, settings, seed_config, journal=None, on_generation=None) -> TuneResult:
    """Same driver as :func:`run_emcmc` with greedy acceptance."""
    return _generational("ga", greedy_accept, space, rules, executor, settings, seed_config, journal, on_generation)


def run_random(space, rules, executor, settings, seed_config=None, journal=None, on_generation=None) -> TuneResult:
    """Uniform random sampling of valid configurations.

    Draws come in batches of ``population_size`` (one history entry per batch)
    until the budget of distinct configurations is spent.  Without a budget,
    ``max_generations`` batches are drawn.  With ``dedupe`` the draws are
    without replacement.  ``seed_config`` is reported but not evaluated.
    """
    run = _Run("random", space, rules, executor, settings, journal, on_generation)
    rules = run.rules
    pop_size = settings.population_for(space)
    seen: set[str] | None = set() if settings.dedupe else None
    max_batches = settings.max_generations if settings.budget is None else max(settings.max_generations, 20 * settings.budget)
    best, best_perf = None, None
    batch, reason = 0, "max_generations"
    while batch < max_batches:
        if run.remaining() <= 0:
            reason = "budget"
            break
        batch += 1
        draws = []
        for i in range(pop_size):
            c = random_valid_configuration(space, rules, stream(settings.seed, _RANDOM, batch, i), exclude=seen)
            if seen is not None:
                seen.add(c.key())
            draws.append(c)
        draws, records = run.measure(draws, batch)
        for cfg, rec in zip(draws, records):
            if rec.ok and (best_perf is None or run.better(rec.performance, best_perf)):
                best, best_perf = cfg, rec.performance
        if best is not None:
            run.record_generation(GenerationState(batch, draws, [], best, best_perf, 0.0))
    else:
        reason = "budget" if run.remaining() <= 0 else "max_generations"
    if best is None:
        raise SamplerError("random search evaluated no configuration successfully")
    seed_perf = None
    if seed_config is not None:
        hit = executor.cached(seed_config)
        seed_perf = hit.performance if hit is not None and hit.ok else None
    if seed_perf:
        for state in run.history:
            state.improvement_vs_seed = relative_improvement(seed_perf, state.best_perf, run.direction)
    return run.finish(best, best_perf, seed_config, seed_perf, reason)


SAMPLERS = {"emcmc": run_emcmc, "ga": run_ga, "random": run_random}
