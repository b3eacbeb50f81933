import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st

from conex.executor import Executor, ExecutorSettings
from conex.landscapes import LANDSCAPES, grid_space, synthetic_landscape
from conex.sampler import (
    AcceptancePolicy,
    InvalidSeedError,
    SamplerSettings,
    accept,
    acceptance_probability,
    crossover_count,
    evolve,
    greedy_accept,
    mutation_count,
    random_valid_configuration,
    relative_improvement,
    run_emcmc,
    run_ga,
    run_random,
)
from conex.space import default_configuration, enumerate_configurations, random_configuration, space_size
from conex.validity import empty_rules, rules_from_dict


class FixedDraw:
    """Stand-in generator whose uniform draw is fixed."""

    def __init__(self, value):
        self.value = value

    def random(self):
        return self.value


def executor_for(land):
    return Executor(land, ExecutorSettings(repeats=1))


# -- acceptance -----------------------------------------------------------------


def test_zero_delta_always_accepted():
    policy = AcceptancePolicy()
    assert acceptance_probability(0.0) == 1.0
    assert accept(100.0, 100.0, policy, FixedDraw(0.999999999))


def test_worse_candidate_probability():
    policy = AcceptancePolicy()
    assert relative_improvement(100.0, 102.0) == pytest.approx(-0.02)
    p = acceptance_probability(-0.02, 50.0)
    assert p == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert accept(100.0, 102.0, policy, FixedDraw(p - 1e-9))
    assert not accept(100.0, 102.0, policy, FixedDraw(p + 1e-9))


def test_better_candidate_accepted():
    assert acceptance_probability(0.01, 50.0) == pytest.approx(math.exp(0.5))
    assert accept(100.0, 99.0, AcceptancePolicy(), FixedDraw(0.999))


def test_maximize_direction_flips_sign():
    assert relative_improvement(100.0, 110.0, "maximize") == pytest.approx(0.1)
    assert relative_improvement(100.0, 110.0, "minimize") == pytest.approx(-0.1)
    assert accept(100.0, 110.0, AcceptancePolicy(direction="maximize"), FixedDraw(0.999))


def test_non_positive_best_rejected():
    with pytest.raises(ValueError):
        relative_improvement(0.0, 1.0)


def test_greedy_rule():
    policy = AcceptancePolicy()
    assert not greedy_accept(100.0, 100.0000001, policy)
    assert not greedy_accept(100.0, 100.0, policy)
    assert greedy_accept(100.0, 99.9, policy)


@hsettings(max_examples=200, deadline=None)
@given(a=st.floats(-1.0, 1.0), b=st.floats(-1.0, 1.0))
def test_acceptance_monotone(a, b):
    lo, hi = sorted((a, b))
    assert acceptance_probability(lo) <= acceptance_probability(hi)


# -- evolution ------------------------------------------------------------------


@pytest.mark.parametrize("n, n_cross, n_mut", [(1, 1, 1), (10, 5, 1), (44, 22, 3), (100, 50, 6)])
def test_evolution_counts(n, n_cross, n_mut):
    assert crossover_count(n, 0.5) == n_cross == math.ceil(n / 2)
    assert mutation_count(n, 0.06) == n_mut == max(1, math.ceil(0.06 * n))
    assert mutation_count(n, 0.0) == 0


@pytest.mark.parametrize("n", [1, 10, 44, 100])
def test_evolve_applies_counts(n):
    space = grid_space(n, 3)
    rng = np.random.default_rng(n)
    best = random_configuration(space, rng)
    parents = [best] * 8
    children = evolve(best, parents, SamplerSettings(), space, empty_rules(space), np.random.default_rng(1))
    changed = [{k for k in best if child[k] != best[k]} for child in children]
    # parents equal best, so only mutation changes anything: same set for every child
    assert all(len(c) == mutation_count(n, 0.06) for c in changed)
    assert all(c == changed[0] for c in changed)


def test_evolve_crossover_copies_best():
    space = grid_space(10, 3)
    best = default_configuration(space)
    parent = best.with_values({f"p{i}": 0 for i in range(10)})
    s = SamplerSettings(mutation_fraction=0.0)
    (child,) = evolve(best, [parent], s, space, empty_rules(space), np.random.default_rng(5))
    from_best = [k for k in child if child[k] == best[k]]
    assert len(from_best) == 5


_FUZZ_SPACE = grid_space(7, 4)


@hsettings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_parents=st.integers(1, 6))
def test_fixed_point(seed, n_parents):
    rng = np.random.default_rng(seed)
    best = random_configuration(_FUZZ_SPACE, rng)
    parents = [random_configuration(_FUZZ_SPACE, rng) for _ in range(n_parents)]
    s = SamplerSettings(mutation_fraction=0.0, crossover_fraction=1.0)
    children = evolve(best, parents, s, _FUZZ_SPACE, empty_rules(_FUZZ_SPACE), rng)
    assert children == [best] * n_parents


def test_evolve_children_valid_and_terminates():
    space = grid_space(3, 3)
    # only one configuration is valid
    rules = rules_from_dict(
        [{"id": f"r{i}", "kind": "range", "subjects": [f"p{i}"], "min": 2} for i in range(3)], space
    )
    only = default_configuration(space).with_values({"p0": 2, "p1": 2, "p2": 2})
    children = evolve(only, [only] * 5, SamplerSettings(), space, rules, np.random.default_rng(0), seen={only.key()})
    assert children == [only] * 5


def test_random_valid_configuration_respects_exclusion():
    space = grid_space(2, 3)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(9):
        c = random_valid_configuration(space, empty_rules(space), rng, exclude=seen)
        assert c.key() not in seen
        seen.add(c.key())
    assert len(seen) == 9


# -- drivers --------------------------------------------------------------------


@pytest.mark.parametrize("name", LANDSCAPES)
def test_emcmc_exhausts_small_space(name):
    space = grid_space(3, 3)
    land = synthetic_landscape(name, space)
    _, opt = land.optimum()
    s = SamplerSettings(budget=27, dedupe=True, min_improvement=0.0)
    result = run_emcmc(space, None, executor_for(land), s, default_configuration(space))
    assert result.evaluations == 27
    assert result.best_perf == opt


def test_zero_generations_returns_seed():
    space = grid_space(3, 3)
    land = synthetic_landscape("separable_quadratic", space)
    seed = default_configuration(space).with_values({"p0": 0})
    result = run_emcmc(space, None, executor_for(land), SamplerSettings(max_generations=0), seed)
    assert result.best_config == seed and result.best_perf == land(seed)
    assert result.evaluations == 1 and result.stop_reason == "max_generations"


def test_seeded_determinism():
    space = grid_space(5, 3)
    land = synthetic_landscape("pairwise_interaction", space)
    runs = [run_emcmc(space, None, executor_for(land), SamplerSettings(seed=11), default_configuration(space)) for _ in range(2)]
    assert runs[0].to_dict() == runs[1].to_dict()
    other = run_emcmc(space, None, executor_for(land), SamplerSettings(seed=12), default_configuration(space))
    assert other.to_dict() != runs[0].to_dict()


def test_parallel_jobs_do_not_change_result():
    space = grid_space(5, 3)
    land = synthetic_landscape("two_basin_deceptive", space)
    serial = run_emcmc(space, None, executor_for(land), SamplerSettings(seed=3), default_configuration(space))
    pooled = Executor(land, ExecutorSettings(repeats=1, jobs=4))
    parallel = run_emcmc(space, None, pooled, SamplerSettings(seed=3), default_configuration(space))
    assert serial.to_dict() == parallel.to_dict()


def test_history_monotone_and_topk_consistent():
    space = grid_space(6, 3)
    land = synthetic_landscape("plateau_noise", space)
    ex = executor_for(land)
    result = run_emcmc(space, None, ex, SamplerSettings(seed=2, top_k=10), default_configuration(space))
    bests = [g.best_perf for g in result.history]
    assert all(b <= a for a, b in zip(bests, bests[1:]))
    perfs = [p for _, p in result.top_k]
    assert perfs == sorted(perfs) and len(perfs) == 10
    measured = sorted(r.performance for r in ex.cache.values())
    assert perfs == measured[:10]
    assert result.top_k[0][1] == result.best_perf


def test_budget_limits_distinct_evaluations():
    space = grid_space(6, 3)
    land = synthetic_landscape("separable_quadratic", space)
    for runner in (run_emcmc, run_ga, run_random):
        ex = executor_for(land)
        result = runner(space, None, ex, SamplerSettings(budget=40, seed=1), default_configuration(space))
        assert result.evaluations <= 40
        assert ex.executions <= 41  # random reports the seed from the cache only


def test_invalid_seed_refused():
    space = grid_space(3, 3)
    rules = rules_from_dict([{"id": "lo", "kind": "range", "subjects": ["p0"], "min": 2}], space)
    land = synthetic_landscape("separable_quadratic", space)
    with pytest.raises(InvalidSeedError):
        run_emcmc(space, rules, executor_for(land), SamplerSettings(), default_configuration(space))


def test_ga_separable_reaches_optimum_quickly():
    space = grid_space(6, 3)
    land = synthetic_landscape("separable_quadratic", space)
    _, opt = land.optimum()
    for seed in range(5):
        s = SamplerSettings(seed=seed, max_generations=10, min_improvement=0.0, dedupe=True)
        result = run_ga(space, None, executor_for(land), s, default_configuration(space))
        assert result.generations <= 10
        assert result.best_perf == pytest.approx(opt)


def test_random_budget_one():
    space = grid_space(4, 3)
    land = synthetic_landscape("separable_quadratic", space)
    ex = executor_for(land)
    result = run_random(space, None, ex, SamplerSettings(budget=1, seed=4), default_configuration(space))
    assert result.evaluations == 1
    (only,) = ex.cache.values()
    assert result.best_config == only.config and result.best_perf == only.performance


def test_random_full_budget_without_dedupe():
    space = grid_space(3, 3)
    land = synthetic_landscape("two_basin_deceptive", space)
    values = [land(c) for c in enumerate_configurations(space)]
    result = run_random(space, None, executor_for(land), SamplerSettings(budget=space_size(space), seed=0), None)
    assert min(values) <= result.best_perf <= max(values)
    assert result.best_perf == min(values)


def test_settings_validation():
    for kwargs in (dict(crossover_fraction=0), dict(mutation_fraction=1.5), dict(budget=0), dict(sigma=0), dict(direction="up")):
        with pytest.raises(ValueError):
            SamplerSettings(**kwargs)
