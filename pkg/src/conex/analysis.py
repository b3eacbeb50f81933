"""Post-run analytics: gain, top-K scale-up, sensitivity and break-even."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .executor import EvaluationRecord, Executor
from .space import Configuration
from .validity import RuleSet

TOPK_PREFIXES = (1, 3, 5, 10, 25, 50)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class GainReport:
    perf_default: float
    perf_best: float
    gain_pct: float


@dataclass(frozen=True)
class SensitivityEntry:
    parameter: str
    delta_best: float
    delta_i: float | None
    sensitivity: float | None
    reset_value: object = None
    valid: bool = True


@dataclass(frozen=True)
class BreakEvenReport:
    overhead: float
    t_default: float
    t_opt: float
    overhead_equiv_runs: float
    additional_runs: int | None  # None: never breaks even
    total_runs: int | None

    @property
    def breaks_even(self) -> bool:
        return self.additional_runs is not None


@dataclass
class TopKRow:
    rank: int
    performance: float | None
    improvement_pct: float | None
    status: str = "ok"


@dataclass
class TopKReport:
    default_perf: float
    rows: list[TopKRow] = field(default_factory=list)
    prefix_best: dict[int, float] = field(default_factory=dict)  # K -> best improvement_pct among Top-K

    def to_dict(self) -> dict:
        return {
            "default_perf": self.default_perf,
            "rows": [vars(r) for r in self.rows],
            "prefix_best": {str(k): v for k, v in self.prefix_best.items()},
        }


def gain(perf_default: float, perf_best: float) -> GainReport:
    """Absolute percentage change of ``perf_best`` relative to ``perf_default``."""
    if not perf_default > 0:
        raise AnalysisError(f"default performance must be positive, got {perf_default}")
    return GainReport(perf_default, perf_best, abs(perf_default - perf_best) / perf_default * 100.0)


def improvement(perf_default: float, perf: float, direction: str = "minimize") -> float:
    """Signed fractional improvement over the default (positive is better)."""
    if not perf_default > 0:
        raise AnalysisError(f"default performance must be positive, got {perf_default}")
    delta = (perf_default - perf) / perf_default
    return delta if direction == "minimize" else -delta


def _perf(executor: Executor | Callable, config: Configuration) -> EvaluationRecord | float:
    if isinstance(executor, Executor):
        return executor.evaluate(config)
    return float(executor(config))


def _value(result) -> float | None:
    if isinstance(result, EvaluationRecord):
        return result.performance if result.ok else None
    return result


def evaluate_topk(
    topk: Sequence[Configuration],
    evaluator: Executor | Callable[[Configuration], float],
    default_config: Configuration,
    direction: str = "minimize",
    prefixes: Sequence[int] = TOPK_PREFIXES,
) -> TopKReport:
    """Re-measure the default and each top-K configuration on ``evaluator``.

    ``evaluator`` is typically the larger-workload benchmark.  The prefix
    curve reports, for Top-1, Top-3, ... (capped at K), the best improvement
    among the first K configurations.
    """
    if not topk:
        raise AnalysisError("top-K list is empty")
    default_perf = _value(_perf(evaluator, default_config))
    if default_perf is None:
        raise AnalysisError("default configuration failed to evaluate")
    report = TopKReport(default_perf)
    for rank, config in enumerate(topk, 1):
        result = _perf(evaluator, config)
        perf = _value(result)
        status = result.status if isinstance(result, EvaluationRecord) else "ok"
        imp = improvement(default_perf, perf, direction) * 100.0 if perf is not None else None
        report.rows.append(TopKRow(rank, perf, imp, status))
    best = -math.inf
    curve = []
    for row in report.rows:
        if row.improvement_pct is not None:
            best = max(best, row.improvement_pct)
        curve.append(best)
    for k in sorted({min(p, len(topk)) for p in prefixes}):
        if curve[k - 1] > -math.inf:
            report.prefix_best[k] = curve[k - 1]
    return report


def sensitivity(
    best: Configuration,
    default: Configuration,
    evaluator: Executor | Callable[[Configuration], float],
    rules: RuleSet | None = None,
    direction: str = "minimize",
) -> list[SensitivityEntry]:
    """Gain lost by resetting each non-default parameter of ``best`` in turn.

    ``delta_best`` and ``delta_i`` are fractional improvements over the
    default; entries are sorted by sensitivity, highest first, with resets
    that violate ``rules`` listed last (not evaluated).
    """
    if best.space_ref != default.space_ref or set(best) != set(default):
        raise AnalysisError("best and default configurations come from different spaces")
    perf_d = _value(_perf(evaluator, default))
    perf_b = _value(_perf(evaluator, best))
    if perf_d is None or perf_b is None:
        raise AnalysisError("default or best configuration failed to evaluate")
    delta_best = improvement(perf_d, perf_b, direction)
    entries, invalid = [], []
    for name in best:
        if best[name] == default[name]:
            continue
        reset = best.with_values({name: default[name]})
        if rules is not None and not rules.is_valid(reset):
            invalid.append(SensitivityEntry(name, delta_best, None, None, default[name], valid=False))
            continue
        perf_n = _value(_perf(evaluator, reset))
        if perf_n is None:
            invalid.append(SensitivityEntry(name, delta_best, None, None, default[name], valid=False))
            continue
        delta_i = improvement(perf_d, perf_n, direction)
        entries.append(SensitivityEntry(name, delta_best, delta_i, delta_best - delta_i, default[name]))
    entries.sort(key=lambda e: (-e.sensitivity, e.parameter))
    return entries + invalid


def break_even(overhead: float, t_default: float, t_opt: float) -> BreakEvenReport:
    """Runs needed before tuning pays for itself.

    ``overhead_equiv_runs`` is the tuning time expressed in default-config
    runs; ``additional_runs`` is how many optimized runs it takes for the
    per-run savings to cover the overhead.
    """
    if not t_default > 0 or not t_opt > 0:
        raise AnalysisError("run times must be positive")
    if overhead < 0:
        raise AnalysisError("overhead must be non-negative")
    equiv = overhead / t_default
    if overhead == 0:
        return BreakEvenReport(overhead, t_default, t_opt, 0.0, 0, 0)
    if t_opt >= t_default:
        return BreakEvenReport(overhead, t_default, t_opt, equiv, None, None)
    additional = math.ceil(round(overhead / (t_default - t_opt), 9))
    return BreakEvenReport(overhead, t_default, t_opt, equiv, additional, math.ceil(round(equiv, 9)) + additional)
