import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conex.analysis import AnalysisError, break_even, evaluate_topk, gain, improvement, sensitivity
from conex.executor import Executor, ExecutorSettings
from conex.landscapes import grid_space, synthetic_landscape
from conex.sampler import SamplerSettings, run_emcmc
from conex.space import default_configuration
from conex.validity import rules_from_dict


def test_gain_examples():
    assert gain(100, 87.5).gain_pct == 12.5
    assert gain(100, 100).gain_pct == 0.0
    assert gain(100, 27.9).gain_pct == pytest.approx(72.1)
    with pytest.raises(AnalysisError):
        gain(0, 1)


@given(d=st.floats(1e-3, 1e6), b=st.floats(1e-3, 1e6), k=st.floats(1e-3, 1e3))
def test_gain_scale_invariant(d, b, k):
    assert gain(k * d, k * b).gain_pct == pytest.approx(gain(d, b).gain_pct, rel=1e-9, abs=1e-9)


def test_break_even_example():
    r = break_even(43200, 900, 756)
    assert r.additional_runs == 300
    assert r.overhead_equiv_runs == 48
    assert r.total_runs == 348 and r.breaks_even


def test_break_even_edges():
    never = break_even(43200, 900, 900)
    assert never.additional_runs is None and not never.breaks_even
    zero = break_even(0, 900, 756)
    assert (zero.additional_runs, zero.total_runs) == (0, 0)
    with pytest.raises(AnalysisError):
        break_even(10, 0, 5)


def test_break_even_monotone_in_t_opt():
    runs = [break_even(43200, 900, t).additional_runs for t in range(890, 100, -37)]
    assert all(b < a for a, b in zip(runs, runs[1:]))


def test_sensitivity_matches_solo_terms():
    space = grid_space(6, 5)
    land = synthetic_landscape({"name": "separable_quadratic", "seed": 3}, space)
    best, _ = land.optimum()
    default = default_configuration(space)
    perf_d = land(default)
    entries = sensitivity(best, default, land)
    changed = [p for p in space.relevant_names if best[p] != default[p]]
    assert {e.parameter for e in entries} == set(changed)
    for e in entries:
        i = int(e.parameter[1:])
        solo = -land.term(i, float(land.coords(best)[i])) / perf_d
        assert e.sensitivity == pytest.approx(solo, abs=1e-6)
    sens = [e.sensitivity for e in entries]
    assert sens == sorted(sens, reverse=True)
    assert entries[0].delta_best == pytest.approx(improvement(perf_d, land(best)))


def test_sensitivity_of_ignored_parameter_is_zero():
    space = grid_space(4, 3)
    land = synthetic_landscape({"name": "separable_quadratic", "ignore": ["p1"], "noise": 0.0}, space)
    best = default_configuration(space).with_values({"p0": 0, "p1": 2, "p3": 2})
    by_name = {e.parameter: e for e in sensitivity(best, default_configuration(space), land)}
    assert by_name["p1"].sensitivity == pytest.approx(0.0, abs=1e-12)
    assert "p2" not in by_name


def test_sensitivity_invalid_reset_listed_last():
    space = grid_space(3, 3)
    land = synthetic_landscape("separable_quadratic", space)
    rules = rules_from_dict([{"id": "pair", "kind": "linear_inequality", "subjects": ["p0", "p1"], "coeffs": [1, -1], "bound": 0}], space)
    best = default_configuration(space).with_values({"p0": 0, "p1": 0, "p2": 2})
    entries = sensitivity(best, default_configuration(space), land, rules)
    assert entries[-1].parameter == "p0" and not entries[-1].valid and entries[-1].sensitivity is None


def test_sensitivity_through_executor():
    space = grid_space(3, 3)
    land = synthetic_landscape("separable_quadratic", space)
    ex = Executor(land, ExecutorSettings(repeats=1))
    best = default_configuration(space).with_values({"p0": 0})
    (entry,) = sensitivity(best, default_configuration(space), ex)
    assert entry.sensitivity == pytest.approx(-land.term(0, -1) / 100.0)


def _small_run(seed=0):
    space = grid_space(6, 3)
    small = synthetic_landscape({"name": "pairwise_interaction", "seed": 1}, space)
    ex = Executor(small, ExecutorSettings(repeats=1))
    result = run_emcmc(space, None, ex, SamplerSettings(seed=seed, top_k=50), default_configuration(space))
    return space, result


def test_topk_single_row_is_gain():
    space, result = _small_run()
    large = synthetic_landscape({"name": "pairwise_interaction", "seed": 1, "scale": 40.0}, space)
    top1 = result.top_k[0][0]
    report = evaluate_topk([top1], large, default_configuration(space))
    assert len(report.rows) == 1
    d, b = large(default_configuration(space)), large(top1)
    assert report.rows[0].improvement_pct == pytest.approx(gain(d, b).gain_pct if b <= d else -gain(d, b).gain_pct)
    assert list(report.prefix_best) == [1]


def test_topk_correlated_scale_up():
    space, result = _small_run()
    large = synthetic_landscape({"name": "pairwise_interaction", "seed": 1, "scale": 40.0, "blend_seed": 8, "blend_weight": 0.3}, space)
    configs = [c for c, _ in result.top_k]
    report = evaluate_topk(configs, large, default_configuration(space))
    curve = list(report.prefix_best.values())
    assert curve == sorted(curve)
    assert report.prefix_best[min(50, len(configs))] >= report.prefix_best[1]
    assert set(report.prefix_best) <= {min(k, len(configs)) for k in (1, 3, 5, 10, 25, 50)}


def test_topk_uncorrelated_well_formed():
    space, result = _small_run()
    unrelated = synthetic_landscape({"name": "two_basin_deceptive", "seed": 99}, space)
    configs = [c for c, _ in result.top_k]
    report = evaluate_topk(configs, unrelated, default_configuration(space))
    assert len(report.rows) == len(configs)
    assert all(np.isfinite(r.improvement_pct) for r in report.rows)
    assert report.to_dict()["default_perf"] == unrelated(default_configuration(space))


def test_topk_empty():
    space = grid_space(2, 2)
    with pytest.raises(AnalysisError):
        evaluate_topk([], lambda c: 1.0, default_configuration(space))


def test_improvement_direction():
    assert improvement(100, 80) == pytest.approx(0.2)
    assert improvement(100, 120, "maximize") == pytest.approx(0.2)
