"""``conex`` command-line entry point.

Exit codes: 0 success, 1 invalid configuration (``validate``), 2 usage or
input error, 3 evaluator abort, 4 invalid seed configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .analysis import AnalysisError, break_even, evaluate_topk, gain, sensitivity
from .bench import bench_synth
from .executor import FAILURE_POLICIES, RENDER_MODES, CommandEvaluator, CommandNotFound, EvaluatorAbort, Executor, ExecutorSettings
from .landscapes import LANDSCAPES, LandscapeError, synthetic_landscape
from .persistence import JournalError, journal_path_for, make_header, read_journal, run_with_journal
from .sampler import SAMPLERS, InvalidSeedError, SamplerError, SamplerSettings
from .similarity import DEFAULT_NGRAM, DEFAULT_THRESHOLD, TraceError, classify_similar, parse_trace, similarity_matrix
from .space import (
    Configuration,
    ConfigurationError,
    SpaceError,
    default_configuration,
    load_configuration,
    load_space,
    make_configuration,
    space_size,
)
from .validity import RuleError, empty_rules, load_rules

log = logging.getLogger("conex")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_ABORT, EXIT_SEED = 0, 1, 2, 3, 4
JOURNAL_DIR_ENV = "CONEX_JOURNAL_DIR"


class UsageError(Exception):
    pass


# -- output helpers --------------------------------------------------------------


def _emit_records(records: list[dict], out) -> None:
    for r in records:
        out.write(json.dumps(r, sort_keys=True, default=str) + "\n")


def _table(rows: list[list[Any]], header: list[str]) -> str:
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _parse_kv(items: Sequence[str] | None) -> dict[str, Any]:
    """``key=value`` pairs; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


# -- shared construction ---------------------------------------------------------


def _add_evaluator_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=required)
    src.add_argument("--command", help="benchmark command; {config_file} expands to the rendered configuration")
    src.add_argument("--synthetic", choices=LANDSCAPES, help="use a synthetic landscape instead of a command")
    p.add_argument("--landscape-opt", action="append", metavar="KEY=VALUE", help="synthetic landscape option (repeatable)")
    p.add_argument("--render-mode", choices=RENDER_MODES, default="json_file")
    p.add_argument("--perf-pattern", help="regex whose first group is the performance value")
    p.add_argument("--repeats", type=int, help="measurements per configuration (default 3, 1 for synthetic)")
    p.add_argument("--timeout", type=float, help="seconds per benchmark run")
    p.add_argument("--failure-policy", choices=FAILURE_POLICIES, default="skip")
    p.add_argument("--penalty", type=float, help="performance recorded for failures under --failure-policy penalize")
    p.add_argument("--aggregate", choices=("mean", "median"), default="mean")
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluations per generation")


def _make_executor(args, space) -> Executor:
    synthetic = getattr(args, "synthetic", None)
    repeats = args.repeats if args.repeats is not None else (1 if synthetic else 3)
    try:
        settings = ExecutorSettings(
            command_template=args.command,
            render_mode=args.render_mode,
            perf_pattern=args.perf_pattern,
            repeats=repeats,
            timeout=args.timeout,
            failure_policy=args.failure_policy,
            penalty=args.penalty,
            aggregate=args.aggregate,
            jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if synthetic:
        evaluator = synthetic_landscape({"name": synthetic, **_parse_kv(args.landscape_opt)}, space)
    else:
        evaluator = CommandEvaluator(settings)
    return Executor(evaluator, settings)


def _load_rules(args, space):
    return load_rules(args.rules, space) if getattr(args, "rules", None) else empty_rules(space)


def _config_from_report(path: str, space, key: str) -> Configuration:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if key not in data or data[key] is None:
        raise UsageError(f"{path} has no {key!r} entry")
    return make_configuration(space, data[key])


def _parse_budget(text: str | None, space) -> int | None:
    if text is None:
        return None
    try:
        if text.endswith("%"):
            return max(1, math.floor(float(text[:-1]) / 100 * space_size(space)))
        return int(text)
    except ValueError:
        raise UsageError(f"bad --budget {text!r}: expected an integer or a percentage like 30%") from None


# -- subcommands -------------------------------------------------------------------


def cmd_tune(args, out) -> int:
    space = load_space(args.space)
    rules = _load_rules(args, space)
    executor = _make_executor(args, space)
    seed_config = load_configuration(args.seed_config, space) if args.seed_config else default_configuration(space)
    try:
        settings = SamplerSettings(
            population_size=args.population,
            max_generations=args.generations,
            min_improvement=args.min_improvement,
            seed=args.seed,
            budget=_parse_budget(args.budget, space),
            time_budget=args.time_budget,
            top_k=args.top_k,
            direction=args.direction,
            dedupe=args.dedupe,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    runner = SAMPLERS[args.sampler]

    status = "off"
    if args.no_journal:
        result = runner(space, rules, executor, settings, seed_config)
    else:
        if args.journal:
            path = Path(args.journal)
        else:
            path = journal_path_for(os.environ.get(JOURNAL_DIR_ENV, "conex-journals"), space, args.sampler, args.seed)
        resume = args.resume
        if path.exists() and not resume:
            # a finished run with the same inputs is simply replayed
            if read_journal(path).completion is None:
                raise UsageError(f"journal {path} is incomplete; pass --resume to continue it or --journal to start a new one")
            resume = True
        header = make_header(space, rules, settings, args.sampler, executor.identity())
        result, status = run_with_journal(runner, space, rules, executor, settings, seed_config, path, header, resume)
        log.info("journal %s (%s)", path, status)

    # gain is always reported against the space default
    default = default_configuration(space)
    default_rec = executor.evaluate(default)
    report = result.to_dict()
    report["journal_status"] = status
    report["default_perf"] = default_rec.performance if default_rec.ok else None
    report["gain_pct"] = gain(report["default_perf"], result.best_perf).gain_pct if report["default_perf"] else None
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    if args.format == "records":
        recs = [
            {
                "kind": "summary",
                **{k: report[k] for k in ("sampler", "space", "direction", "best_perf", "seed_perf", "default_perf", "gain_pct", "evaluations", "stop_reason", "journal_status")},
            }
        ]
        recs += [{"kind": "best", "parameter": k, "value": v} for k, v in sorted(report["best_config"].items())]
        recs += [{"kind": "generation", **g} for g in report["history"]]
        recs += [{"kind": "topk", "rank": t["rank"], "performance": t["performance"], "config": t["config"]} for t in report["top_k"]]
        _emit_records(recs, out)
        return EXIT_OK

    out.write(f"sampler {result.sampler}  space {result.space_name}  stop: {result.stop_reason}\n")
    out.write(f"evaluations {result.evaluations}  generations {result.generations}  journal {status}\n")
    out.write(f"default {_fmt(report['default_perf'])}  seed {_fmt(result.seed_perf)}  best {_fmt(result.best_perf)}  gain {_fmt(report['gain_pct'])}%\n\n")
    out.write("best configuration\n")
    out.write(_table([[k, v, "*" if v != default[k] else ""] for k, v in sorted(result.best_config.items())], ["parameter", "value", "changed"]))
    if report["history"]:
        out.write("\nhistory\n")
        out.write(
            _table(
                [[g["generation"], g["size"], g["accepted"], g["best_perf"], g["distinct_evaluated"]] for g in report["history"]],
                ["gen", "size", "accepted", "best", "evaluated"],
            )
        )
    shown = report["top_k"][: args.show_top]
    if shown:
        out.write(f"\ntop {len(shown)} of {len(report['top_k'])}\n")
        out.write(_table([[t["rank"], t["performance"]] for t in shown], ["rank", "performance"]))
    return EXIT_OK


def cmd_validate(args, out) -> int:
    space = load_space(args.space)
    rules = load_rules(args.rules, space)
    config = load_configuration(args.config, space)
    report = rules.check(config)
    if args.format == "records":
        _emit_records([{"rule": rid, "message": msg} for rid, msg in report.violations] or [{"valid": True}], out)
    elif report.valid:
        out.write(f"valid ({len(rules)} rules checked)\n")
    else:
        out.write(f"invalid: {len(report.violations)} violation(s)\n")
        for rid, msg in report.violations:
            out.write(f"  [{rid}] {msg}\n")
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_space_info(args, out) -> int:
    space = load_space(args.space)
    rows = [[p.name, p.kind, p.default, len(p.candidates), "yes" if p.relevant else "no", ", ".join(map(str, p.candidates))] for p in space.parameters]
    size = space_size(space)
    if args.format == "records":
        _emit_records(
            [{"parameter": p.name, "kind": p.kind, "default": p.default, "candidates": list(p.candidates), "relevant": p.relevant} for p in space.parameters]
            + [{"space": space.name, "N": space.dimension, "space_size": size}],
            out,
        )
        return EXIT_OK
    out.write(f"space {space.name}: N = {space.dimension} relevant parameters, {size} configurations ({size:.3e})\n\n")
    out.write(_table(rows, ["parameter", "kind", "default", "count", "relevant", "candidates"]))
    return EXIT_OK


def _topk_configs(path: str, space, k: int) -> list[Configuration]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    entries = data.get("top_k") or []
    if not entries:
        raise UsageError(f"{path} contains no top-K list")
    return [make_configuration(space, e["config"]) for e in entries[:k]]


def cmd_eval_topk(args, out) -> int:
    space = load_space(args.space)
    executor = _make_executor(args, space)
    configs = _topk_configs(args.report, space, args.top_k)
    report = evaluate_topk(configs, executor, default_configuration(space), args.direction)
    if args.format == "records":
        _emit_records(
            [{"kind": "row", **vars(r)} for r in report.rows]
            + [{"kind": "prefix", "k": k, "best_improvement_pct": v} for k, v in report.prefix_best.items()]
            + [{"kind": "default", "performance": report.default_perf}],
            out,
        )
        return EXIT_OK
    out.write(f"default performance {_fmt(report.default_perf)}\n\n")
    out.write(_table([[r.rank, r.performance, r.improvement_pct, r.status] for r in report.rows], ["rank", "performance", "improvement %", "status"]))
    out.write("\n")
    out.write(_table([[f"Top-{k}", v] for k, v in report.prefix_best.items()], ["prefix", "best improvement %"]))
    return EXIT_OK


def cmd_sensitivity(args, out) -> int:
    space = load_space(args.space)
    rules = _load_rules(args, space)
    executor = _make_executor(args, space)
    if args.best:
        best = load_configuration(args.best, space)
    elif args.report:
        best = _config_from_report(args.report, space, "best_config")
    else:
        raise UsageError("sensitivity needs --best or --report")
    entries = sensitivity(best, default_configuration(space), executor, rules, args.direction)
    if args.format == "records":
        _emit_records([vars(e) for e in entries], out)
        return EXIT_OK
    if not entries:
        out.write("best configuration equals the default; nothing to reset\n")
        return EXIT_OK
    out.write(f"gain of best over default: {entries[0].delta_best * 100:.4g}%\n\n")
    rows = [[e.parameter, e.reset_value, None if e.delta_i is None else e.delta_i * 100, None if e.sensitivity is None else e.sensitivity * 100, "" if e.valid else "invalid reset"] for e in entries]
    out.write(_table(rows, ["parameter", "reset to", "gain after reset %", "sensitivity %", "note"]))
    return EXIT_OK


def cmd_similar(args, out) -> int:
    profiles = [parse_trace(p) for p in args.traces]
    ids = [p.job_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise UsageError("trace files must have distinct names")
    m = similarity_matrix(profiles, args.ngram)
    groups = classify_similar(m, ids, args.threshold, args.inclusive)
    if args.matrix_out:
        header = ",".join(["job"] + ids)
        lines = [header] + [",".join([ids[i]] + [repr(float(x)) for x in m[i]]) for i in range(len(ids))]
        Path(args.matrix_out).write_text("\n".join(lines) + "\n")
    if args.format == "records":
        recs = [{"a": ids[i], "b": ids[j], "score": float(m[i, j])} for i in range(len(ids)) for j in range(i + 1, len(ids))]
        recs += [{"job": j, "similar": sorted(groups[j])} for j in ids]
        _emit_records(recs, out)
        return EXIT_OK
    out.write(_table([[ids[i]] + [float(x) for x in m[i]] for i in range(len(ids))], ["job"] + ids))
    op = ">=" if args.inclusive else ">"
    out.write(f"\nsimilar jobs (score {op} {args.threshold})\n")
    for j in ids:
        out.write(f"  {j}: {', '.join(sorted(groups[j])) or '-'}\n")
    return EXIT_OK


def cmd_breakeven(args, out) -> int:
    try:
        r = break_even(args.overhead, args.default_runtime, args.optimized_runtime)
    except AnalysisError as exc:
        raise UsageError(str(exc)) from None
    rec = {
        "overhead": r.overhead,
        "t_default": r.t_default,
        "t_opt": r.t_opt,
        "overhead_equiv_runs": r.overhead_equiv_runs,
        "additional_runs": r.additional_runs,
        "total_runs": r.total_runs,
        "breaks_even": r.breaks_even,
    }
    if args.format == "records":
        _emit_records([rec], out)
    else:
        out.write(_table([[k, "never" if v is None else v] for k, v in rec.items()], ["quantity", "value"]))
    return EXIT_OK


def cmd_bench_synth(args, out) -> int:
    results = bench_synth(args.landscape or ("two_basin_deceptive", "pairwise_interaction"), args.params, args.values, args.seeds, args.seed, args.budget_fraction)
    records = [r for c in results for r in c.to_records()]
    if args.format == "records":
        _emit_records(records, out)
        return EXIT_OK
    rows = [[r["landscape"], r["sampler"], r["space_size"], r["budget"], r["optimum"], r["mean_best"], r["within_5pct"], r.get("emcmc_le_rate")] for r in records]
    out.write(_table(rows, ["landscape", "sampler", "size", "budget", "optimum", "mean best", "within 5%", "emcmc <= rate"]))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conex", description="Black-box configuration tuning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("table", "records"), default="table", help="human table or JSON-lines records")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    sub = parser.add_subparsers(dest="command_name", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("tune", parents=[common], help="search the space for a better configuration")
    p.add_argument("--space", required=True)
    p.add_argument("--sampler", choices=sorted(SAMPLERS), default="emcmc")
    _add_evaluator_args(p)
    p.add_argument("--rules")
    p.add_argument("--seed-config", help="starting configuration (default: the space defaults)")
    p.add_argument("--generations", type=int, default=30)
    p.add_argument("--population", type=int, help="configurations per generation (default 4N)")
    p.add_argument("--budget", help="max distinct configurations measured; an integer or a percentage of the space")
    p.add_argument("--time-budget", type=float, help="seconds")
    p.add_argument("--min-improvement", type=float, default=0.001)
    p.add_argument("--dedupe", action="store_true", help="never propose an already-sampled configuration")
    p.add_argument("--direction", choices=("minimize", "maximize"), default="minimize")
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--show-top", type=int, default=10, help="top-K rows shown in the table output")
    p.add_argument("--journal", help=f"journal path (default: ${JOURNAL_DIR_ENV} or ./conex-journals)")
    p.add_argument("--no-journal", action="store_true")
    p.add_argument("--resume", action="store_true", help="continue an existing journal")
    p.add_argument("--report", help="write the full JSON report here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("validate", parents=[common], help="check a configuration against rules")
    p.add_argument("--space", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("space-info", parents=[common], help="describe a configuration space")
    p.add_argument("--space", required=True)
    p.set_defaults(func=cmd_space_info)

    p = sub.add_parser("eval-topk", parents=[common], help="re-measure a report's top-K on another evaluator")
    p.add_argument("--space", required=True)
    p.add_argument("--report", required=True, help="JSON report written by tune --report")
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--direction", choices=("minimize", "maximize"), default="minimize")
    _add_evaluator_args(p)
    p.set_defaults(func=cmd_eval_topk)

    p = sub.add_parser("sensitivity", parents=[common], help="gain lost by resetting each tuned parameter")
    p.add_argument("--space", required=True)
    p.add_argument("--best", help="configuration file")
    p.add_argument("--report", help="JSON report written by tune --report")
    p.add_argument("--rules")
    p.add_argument("--direction", choices=("minimize", "maximize"), default="minimize")
    _add_evaluator_args(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("similar", parents=[common], help="compare jobs by system-call traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--inclusive", action="store_true", help="use >= instead of > at the threshold")
    p.add_argument("--ngram", type=int, default=DEFAULT_NGRAM)
    p.add_argument("--matrix-out", help="write the score matrix as CSV")
    p.set_defaults(func=cmd_similar)

    p = sub.add_parser("breakeven", parents=[common], help="runs needed to amortize tuning cost")
    p.add_argument("--overhead", type=float, required=True, help="tuning time, seconds")
    p.add_argument("--default-runtime", type=float, required=True)
    p.add_argument("--optimized-runtime", type=float, required=True)
    p.set_defaults(func=cmd_breakeven)

    p = sub.add_parser("bench-synth", parents=[common], help="paired EMCMC/GA/random comparison on synthetic landscapes")
    p.add_argument("--landscape", action="append", choices=LANDSCAPES)
    p.add_argument("--params", type=int, default=6)
    p.add_argument("--values", type=int, default=3)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--budget-fraction", type=float, default=0.3)
    p.set_defaults(func=cmd_bench_synth)
    return parser


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, out)
    except InvalidSeedError as exc:
        print(f"conex: {exc}", file=sys.stderr)
        return EXIT_SEED
    except EvaluatorAbort as exc:
        print(f"conex: evaluator aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (UsageError, CommandNotFound, SpaceError, ConfigurationError, RuleError, LandscapeError, JournalError, TraceError, AnalysisError, SamplerError, OSError) as exc:
        print(f"conex: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
