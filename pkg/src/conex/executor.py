"""Turn configurations into measured performance numbers.

An *evaluator* is any object with a ``measure(config) -> float`` method (one
raw measurement per call), a ``deterministic`` flag and an ``identity()``
dict used for journal headers.  :class:`CommandEvaluator` runs an external
benchmark command; the synthetic landscapes in :mod:`conex.landscapes` are
pure in-process evaluators.  :class:`Executor` wraps an evaluator with
repetition, aggregation, failure policy and a result cache.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shlex
import statistics
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

from .space import Configuration, ConfigurationSpace, SpaceError

log = logging.getLogger(__name__)

ENV_PREFIX = "CONEX_"
RENDER_MODES = ("env", "properties_file", "json_file")
FAILURE_POLICIES = ("abort", "penalize", "skip")
STATUSES = ("ok", "failed", "invalid", "timeout")

_FLOAT = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


class EvaluationError(RuntimeError):
    """A single measurement failed (bad exit status, unparseable output)."""


class MeasurementTimeout(EvaluationError):
    pass


class CommandNotFound(EvaluationError):
    """The benchmark command itself cannot be launched; never retried."""


class EvaluatorAbort(RuntimeError):
    """Raised when failure_policy=abort meets a failed measurement."""

    def __init__(self, message: str, record: "EvaluationRecord | None" = None):
        super().__init__(message)
        self.record = record


class Evaluator(Protocol):
    deterministic: bool

    def measure(self, config: Configuration) -> float: ...

    def identity(self) -> dict: ...


@dataclass
class EvaluationRecord:
    config: Configuration
    performance: float | None
    repeats: list[float] = field(default_factory=list)
    status: str = "ok"
    generation: int = 0
    member: int = 0
    wall_clock: float | None = None
    timestamp: str | None = None
    stderr: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok" and self.performance is not None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "performance": self.performance,
            "repeats": list(self.repeats),
            "status": self.status,
            "generation": self.generation,
            "member": self.member,
            "wall_clock": self.wall_clock,
            "timestamp": self.timestamp,
            "stderr": self.stderr,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], space_ref: str) -> "EvaluationRecord":
        return cls(
            config=Configuration(data["config"], space_ref),
            performance=data.get("performance"),
            repeats=list(data.get("repeats", [])),
            status=data.get("status", "ok"),
            generation=int(data.get("generation", 0)),
            member=int(data.get("member", 0)),
            wall_clock=data.get("wall_clock"),
            timestamp=data.get("timestamp"),
            stderr=data.get("stderr", ""),
        )


@dataclass(frozen=True)
class ExecutorSettings:
    command_template: str = ""
    render_mode: str = "json_file"
    perf_pattern: str | None = None
    repeats: int = 3
    timeout: float | None = None
    failure_policy: str = "skip"
    penalty: float | None = None
    aggregate: str = "mean"
    jobs: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.render_mode not in RENDER_MODES:
            raise ValueError(f"render_mode must be one of {RENDER_MODES}")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ValueError(f"failure_policy must be one of {FAILURE_POLICIES}")
        if self.failure_policy == "penalize" and (self.penalty is None or self.penalty <= 0):
            raise ValueError("failure_policy=penalize needs a positive penalty")
        if self.aggregate not in ("mean", "median"):
            raise ValueError("aggregate must be mean or median")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.perf_pattern is not None and re.compile(self.perf_pattern).groups != 1:
            raise ValueError("perf_pattern needs exactly one capture group")

    def identity(self) -> dict:
        """Fields that change measured results (jobs does not)."""
        return {
            "command_template": self.command_template,
            "render_mode": self.render_mode,
            "perf_pattern": self.perf_pattern,
            "repeats": self.repeats,
            "timeout": self.timeout,
            "failure_policy": self.failure_policy,
            "penalty": self.penalty,
            "aggregate": self.aggregate,
        }


# -- rendering ---------------------------------------------------------------


def env_name(param: str) -> str:
    return ENV_PREFIX + re.sub(r"[^A-Za-z0-9]", "_", param).upper()


def _text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def render(config: Configuration, mode: str) -> dict[str, str] | str:
    """Render ``config`` for a benchmark command.

    ``env`` returns a name -> value mapping of ``CONEX_*`` variables,
    ``properties_file`` returns ``name=value`` lines sorted by name and
    ``json_file`` returns a flat JSON object.
    """
    if mode == "env":
        return {env_name(k): _text(config[k]) for k in sorted(config)}
    if mode == "properties_file":
        return "".join(f"{k}={_text(config[k])}\n" for k in sorted(config))
    if mode == "json_file":
        return json.dumps({k: config[k] for k in sorted(config)}, indent=2) + "\n"
    raise ValueError(f"unknown render mode {mode!r}")


def _from_text(space: ConfigurationSpace, name: str, text: str) -> Any:
    p = space[name]
    if p.kind == "boolean":
        return p.coerce(text)
    if p.kind == "integer":
        return int(text)
    if p.kind == "float":
        return float(text)
    return text


def parse_rendered(artifact: Mapping[str, str] | str, mode: str, space: ConfigurationSpace) -> Configuration:
    """Inverse of :func:`render` for configurations of ``space``."""
    from .space import make_configuration

    values: dict[str, Any] = {}
    if mode == "env":
        by_env = {}
        for p in space.parameters:
            key = env_name(p.name)
            if key in by_env:
                raise SpaceError(f"parameters {by_env[key]!r} and {p.name!r} share env name {key}")
            by_env[key] = p.name
        for key, text in artifact.items():
            if key.startswith(ENV_PREFIX) and key in by_env:
                values[by_env[key]] = _from_text(space, by_env[key], text)
    elif mode == "properties_file":
        for line in str(artifact).splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, _, text = line.partition("=")
            values[name] = _from_text(space, name, text) if name in space else text
    elif mode == "json_file":
        values = json.loads(artifact)
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return make_configuration(space, values)


def parse_performance(stdout: str, pattern: str | None = None) -> float:
    """Extract one measurement from benchmark output.

    Without a pattern the last float on the last non-empty stdout line is used.
    With a pattern, its single capture group from the last match is used.
    """
    if pattern is not None:
        matches = list(re.finditer(pattern, stdout, re.MULTILINE))
        if not matches:
            raise EvaluationError(f"perf_pattern {pattern!r} did not match benchmark output")
        try:
            return float(matches[-1].group(1))
        except (TypeError, ValueError):
            raise EvaluationError(f"perf_pattern captured non-numeric text {matches[-1].group(1)!r}") from None
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        raise EvaluationError("benchmark produced no output")
    floats = _FLOAT.findall(lines[-1])
    if not floats:
        raise EvaluationError(f"no number on last output line {lines[-1]!r}")
    return float(floats[-1])


class CommandEvaluator:
    """Run an external benchmark once per :meth:`measure` call.

    ``{config_file}`` in the command template expands to a temporary file
    holding the rendered configuration (a JSON rendering in ``env`` mode,
    where the values are also exported as ``CONEX_*`` variables).
    """

    deterministic = False

    def __init__(self, settings: ExecutorSettings):
        if not settings.command_template:
            raise ValueError("command_template is required")
        self.settings = settings
        self.last_stderr = ""

    def identity(self) -> dict:
        return {"kind": "command", **self.settings.identity()}

    def measure(self, config: Configuration) -> float:
        s = self.settings
        env = dict(os.environ)
        with tempfile.TemporaryDirectory(prefix="conex-") as tmp:
            if s.render_mode == "properties_file":
                path = Path(tmp) / "config.properties"
                path.write_text(render(config, "properties_file"))
            else:
                path = Path(tmp) / "config.json"
                path.write_text(render(config, "json_file"))
                if s.render_mode == "env":
                    env.update(render(config, "env"))
            argv = shlex.split(s.command_template.replace("{config_file}", shlex.quote(str(path))))
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=s.timeout, env=env)
            except FileNotFoundError:
                raise CommandNotFound(f"command not found: {argv[0] if argv else s.command_template!r}") from None
            except subprocess.TimeoutExpired as exc:
                self.last_stderr = exc.stderr if isinstance(exc.stderr, str) else ""
                raise MeasurementTimeout(f"benchmark exceeded {s.timeout}s") from None
        self.last_stderr = proc.stderr
        if proc.returncode != 0:
            raise EvaluationError(f"benchmark exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}")
        return parse_performance(proc.stdout, s.perf_pattern)


class Executor:
    """Repetition, aggregation, failure policy and caching around an evaluator.

    The cache maps a configuration's canonical key to its record; hits never
    touch the evaluator.  ``executions`` counts cache misses (the quantity an
    evaluation budget limits), ``invocations`` counts raw ``measure`` calls.
    """

    def __init__(self, evaluator: Evaluator, settings: ExecutorSettings | None = None, cache: dict | None = None):
        self.evaluator = evaluator
        self.settings = settings or ExecutorSettings()
        self.cache: dict[str, EvaluationRecord] = dict(cache or {})
        self.executions = 0
        self.invocations = 0
        self._lock = threading.Lock()

    def identity(self) -> dict:
        s = self.settings
        return {
            "evaluator": self.evaluator.identity(),
            "repeats": s.repeats,
            "failure_policy": s.failure_policy,
            "penalty": s.penalty,
            "aggregate": s.aggregate,
        }

    def cached(self, config: Configuration) -> EvaluationRecord | None:
        with self._lock:
            return self.cache.get(config.key())

    def _aggregate(self, values: list[float]) -> float:
        if self.settings.aggregate == "median":
            return float(statistics.median(values))
        return float(statistics.fmean(values))

    def _run(self, config: Configuration, generation: int, member: int) -> EvaluationRecord:
        s = self.settings
        timed = not getattr(self.evaluator, "deterministic", False)
        started = time.perf_counter()
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if timed else None
        repeats: list[float] = []
        status, errors = "ok", []
        for _ in range(s.repeats):
            with self._lock:
                self.invocations += 1
            try:
                value = float(self.evaluator.measure(config))
                if not value > 0:
                    raise EvaluationError(f"non-positive measurement {value}")
                repeats.append(value)
            except CommandNotFound:
                raise
            except EvaluationError as exc:
                errors.append(str(exc))
                if s.failure_policy == "penalize":
                    repeats.append(float(s.penalty))
                    continue
                status = "timeout" if isinstance(exc, MeasurementTimeout) else "failed"
                break
        stderr = "\n".join(errors)
        if not stderr and hasattr(self.evaluator, "last_stderr"):
            stderr = self.evaluator.last_stderr.strip()[-2000:]
        record = EvaluationRecord(
            config=config,
            performance=self._aggregate(repeats) if status == "ok" else None,
            repeats=repeats if status == "ok" else [],
            status=status,
            generation=generation,
            member=member,
            wall_clock=round(time.perf_counter() - started, 6) if timed else None,
            timestamp=stamp,
            stderr=stderr,
        )
        if status != "ok" and s.failure_policy == "abort":
            raise EvaluatorAbort(f"evaluation failed ({status}): {stderr}", record)
        return record

    def evaluate(self, config: Configuration, generation: int = 0, member: int = 0) -> EvaluationRecord:
        record, _ = self.evaluate_fresh(config, generation, member)
        return record

    def evaluate_fresh(self, config: Configuration, generation: int = 0, member: int = 0) -> tuple[EvaluationRecord, bool]:
        """Like :meth:`evaluate` but also report whether the evaluator ran."""
        hit = self.cached(config)
        if hit is not None:
            return hit, False
        record = self._run(config, generation, member)
        with self._lock:
            self.executions += 1
            # last writer wins; identical by the repetition contract
            self.cache[config.key()] = record
        return record, True

    def evaluate_batch(
        self,
        configs: Iterable[Configuration],
        generation: int = 0,
        on_fresh: Callable[[EvaluationRecord], None] | None = None,
    ) -> list[tuple[EvaluationRecord, bool]]:
        """Evaluate ``configs`` (in member order) with up to ``settings.jobs`` workers.

        Each distinct uncached configuration runs once; results are returned in
        input order so downstream decisions never depend on completion order.
        ``on_fresh`` sees every new record in input order, as soon as it and all
        earlier ones are done.
        """
        configs = list(configs)
        first_index: dict[str, int] = {}
        for i, c in enumerate(configs):
            if self.cached(c) is None:
                first_index.setdefault(c.key(), i)
        todo = sorted(first_index.values())
        fresh: dict[int, EvaluationRecord] = {}

        def done(i: int, record: EvaluationRecord) -> None:
            with self._lock:
                self.executions += 1
                self.cache[configs[i].key()] = record
            fresh[i] = record
            if on_fresh is not None:
                on_fresh(record)

        if self.settings.jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.settings.jobs) as pool:
                futures = {i: pool.submit(self._run, configs[i], generation, i) for i in todo}
                for i in todo:
                    done(i, futures[i].result())
        else:
            for i in todo:
                done(i, self._run(configs[i], generation, i))
        out = []
        for i, c in enumerate(configs):
            if i in fresh:
                out.append((fresh[i], True))
            else:
                out.append((self.cache[c.key()], False))
        return out
