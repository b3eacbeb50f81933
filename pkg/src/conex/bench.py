"""Paired sampler comparison on synthetic landscapes.

Every seed runs each sampler once with the same budget on the same landscape;
statistics are computed over the pairs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .executor import Executor, ExecutorSettings
from .landscapes import grid_space, synthetic_landscape
from .sampler import SAMPLERS, SamplerSettings
from .space import ConfigurationSpace, default_configuration, space_size


@dataclass
class LandscapeComparison:
    landscape: str
    space_size: int
    budget: int
    optimum: float
    best: dict[str, list[float]] = field(default_factory=dict)  # sampler -> best-found per seed
    seconds: float = 0.0

    def within(self, sampler: str, tolerance: float = 0.05) -> float:
        """Fraction of runs within ``tolerance`` (relative) of the optimum."""
        vals = np.asarray(self.best[sampler])
        return float(np.mean(vals <= self.optimum * (1 + tolerance) + 1e-12))

    def pair_rate(self, a: str, b: str) -> float:
        """Fraction of seeds where ``a`` found a cost <= that of ``b``."""
        return float(np.mean(np.asarray(self.best[a]) <= np.asarray(self.best[b])))

    def mean(self, sampler: str) -> float:
        return float(np.mean(self.best[sampler]))

    def to_records(self) -> list[dict]:
        rows = []
        for s in self.best:
            row = {
                "landscape": self.landscape,
                "sampler": s,
                "space_size": self.space_size,
                "budget": self.budget,
                "optimum": self.optimum,
                "mean_best": self.mean(s),
                "within_5pct": self.within(s),
            }
            if s != "emcmc" and "emcmc" in self.best:
                row["emcmc_le_rate"] = self.pair_rate("emcmc", s)
            rows.append(row)
        return rows


def compare(
    landscape: str | dict,
    space: ConfigurationSpace,
    seeds: range | list[int],
    budget_fraction: float = 0.3,
    samplers: tuple[str, ...] = ("emcmc", "ga", "random"),
    dedupe: bool = True,
    min_improvement: float = 0.0,
) -> LandscapeComparison:
    land = synthetic_landscape(landscape, space)
    _, opt = land.optimum()
    size = space_size(space)
    budget = max(1, math.floor(budget_fraction * size))
    out = LandscapeComparison(land.name, size, budget, opt)
    start = time.perf_counter()
    seed_config = default_configuration(space)
    for name in samplers:
        out.best[name] = []
    for seed in seeds:
        settings = SamplerSettings(seed=seed, budget=budget, dedupe=dedupe, min_improvement=min_improvement)
        for name in samplers:
            executor = Executor(land, ExecutorSettings(repeats=1))
            result = SAMPLERS[name](space, None, executor, settings, seed_config)
            out.best[name].append(result.best_perf)
    out.seconds = time.perf_counter() - start
    return out


def bench_synth(
    landscapes=("two_basin_deceptive", "pairwise_interaction"),
    n_params: int = 6,
    n_values: int = 3,
    seeds: int = 20,
    first_seed: int = 0,
    budget_fraction: float = 0.3,
    landscape_seed: int = 1,
) -> list[LandscapeComparison]:
    space = grid_space(n_params, n_values)
    return [
        compare({"name": name, "seed": landscape_seed}, space, range(first_seed, first_seed + seeds), budget_fraction)
        for name in landscapes
    ]
