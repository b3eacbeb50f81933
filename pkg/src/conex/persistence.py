"""Append-only evaluation journal.

Line-delimited JSON, one self-describing record per line::

    {"type": "header", "version": 1, "space_hash": ..., "rules_hash": ..., "settings_hash": ..., "seed": ..., ...}
    {"type": "eval", "config": {...}, "performance": 12.5, "repeats": [...], "status": "ok", ...}
    ...
    {"type": "complete", "best_config": {...}, "best_perf": ..., "evaluations": ..., "stop_reason": ...}

Only fresh evaluator executions are journaled.  Resuming rebuilds the cache
from the ``eval`` lines and replays the seeded search; replayed steps are
served from the cache, so the continued run appends exactly the records an
uninterrupted run would have written.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .executor import EvaluationRecord, Executor
from .sampler import SAMPLERS, GenerationState, SamplerSettings
from .space import Configuration, ConfigurationSpace
from .validity import RuleSet, empty_rules

log = logging.getLogger(__name__)

JOURNAL_VERSION = 1


class JournalError(RuntimeError):
    pass


class ResumeRefused(JournalError):
    """Header hashes differ from the current inputs."""


def _digest(payload: Any) -> str:
    text = payload if isinstance(payload, str) else json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def make_header(
    space: ConfigurationSpace,
    rules: RuleSet | None,
    settings: SamplerSettings,
    sampler: str = "emcmc",
    evaluator: dict | None = None,
) -> dict:
    rules = rules if rules is not None else empty_rules(space)
    return {
        "type": "header",
        "version": JOURNAL_VERSION,
        "space": space.name,
        "space_hash": _digest(space.fingerprint()),
        "rules_hash": rules.digest(),
        "settings_hash": _digest({"sampler": sampler, "settings": settings.to_dict(), "evaluator": evaluator or {}}),
        "sampler": sampler,
        "seed": settings.seed,
    }


@dataclass
class JournalContents:
    header: dict
    records: list[EvaluationRecord] = field(default_factory=list)
    completion: dict | None = None
    valid_bytes: int = 0
    torn: bool = False


def read_journal(path: str | Path) -> JournalContents:
    """Parse a journal, tolerating a torn (partial or corrupt) final line."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise JournalError(f"cannot read journal {path}: {exc}") from None
    lines = data.split(b"\n")
    header, records, completion = None, [], None
    offset, torn = 0, False
    for i, raw in enumerate(lines):
        last = i == len(lines) - 1
        if last and raw == b"":
            break
        try:
            if last:
                raise ValueError("missing newline")
            entry = json.loads(raw)
            if not isinstance(entry, dict) or "type" not in entry:
                raise ValueError("not a journal entry")
        except ValueError:
            if i == len(lines) - 1 or all(not rest.strip() for rest in lines[i + 1 :]):
                torn = True
                break
            raise JournalError(f"{path}:{i + 1}: corrupt journal line") from None
        kind = entry["type"]
        if i == 0:
            if kind != "header":
                raise JournalError(f"{path}: first line is not a journal header")
            header = entry
        elif kind == "eval":
            records.append(EvaluationRecord.from_dict(entry, header["space"]))
        elif kind == "complete":
            completion = entry
        else:
            raise JournalError(f"{path}:{i + 1}: unknown entry type {kind!r}")
        offset += len(raw) + 1
    if header is None:
        raise JournalError(f"{path}: empty journal")
    return JournalContents(header, records, completion, offset, torn)


class Journal:
    """Single-writer appender; every line is flushed and fsynced before returning."""

    def __init__(self, path: str | Path, header: dict, records: list[EvaluationRecord] | None = None, completion: dict | None = None):
        self.path = Path(path)
        self.header = header
        self.records = list(records or [])
        self.completion = completion
        self._fh = None

    @classmethod
    def create(cls, path: str | Path, header: dict, overwrite: bool = False) -> "Journal":
        path = Path(path)
        if path.exists() and not overwrite:
            raise JournalError(f"journal {path} already exists (resume it or choose another path)")
        path.parent.mkdir(parents=True, exist_ok=True)
        journal = cls(path, header)
        journal._fh = open(path, "w", encoding="utf-8")
        journal._write(header)
        return journal

    @classmethod
    def reopen(cls, path: str | Path, header: dict) -> "Journal":
        """Open an existing journal for appending after checking its header.

        A torn trailing line is truncated away (with a warning) first.
        """
        path = Path(path)
        contents = read_journal(path)
        mismatched = [k for k in ("space_hash", "rules_hash", "settings_hash", "seed") if contents.header.get(k) != header.get(k)]
        if mismatched:
            raise ResumeRefused(f"journal {path} was written with different inputs ({', '.join(mismatched)}); refusing to resume")
        if contents.torn:
            log.warning("journal %s: discarding torn trailing line", path)
            with open(path, "r+b") as fh:
                fh.truncate(contents.valid_bytes)
        journal = cls(path, contents.header, contents.records, contents.completion)
        journal._fh = open(path, "a", encoding="utf-8")
        return journal

    def _write(self, entry: dict) -> None:
        if self._fh is None:
            raise JournalError("journal is not open for writing")
        try:
            self._fh.write(_dumps(entry) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError as exc:
            raise JournalError(f"cannot append to journal {self.path}: {exc}") from None

    def append(self, record: EvaluationRecord) -> None:
        self._write({"type": "eval", **record.to_dict()})
        self.records.append(record)

    def complete(self, summary: dict) -> None:
        entry = {"type": "complete", **summary}
        self._write(entry)
        self.completion = entry

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def cache(self) -> dict[str, EvaluationRecord]:
        return {r.config.key(): r for r in self.records}


def append(journal: Journal, record: EvaluationRecord) -> None:
    journal.append(record)


class _ReplayStop(Exception):
    pass


class _CacheOnly:
    """Evaluator that refuses to run: replay must be fully served from cache."""

    deterministic = True

    def __init__(self, identity: dict):
        self._identity = identity

    def identity(self) -> dict:
        return self._identity

    def measure(self, config: Configuration) -> float:
        raise _ReplayStop()


def resume(
    path: str | Path,
    space: ConfigurationSpace,
    rules: RuleSet | None,
    settings: SamplerSettings,
    sampler: str = "emcmc",
    evaluator: dict | None = None,
    seed_config: Configuration | None = None,
) -> tuple[dict[str, EvaluationRecord], GenerationState | None]:
    """Rebuild the evaluation cache and the last fully journaled generation.

    The state is recovered by replaying the seeded search against the cache
    alone and stopping at the first configuration the journal lacks.
    """
    from .space import default_configuration

    header = make_header(space, rules, settings, sampler, evaluator)
    contents = read_journal(path)
    mismatched = [k for k in ("space_hash", "rules_hash", "settings_hash", "seed") if contents.header.get(k) != header.get(k)]
    if mismatched:
        raise ResumeRefused(f"journal {path} was written with different inputs ({', '.join(mismatched)}); refusing to resume")
    cache = {r.config.key(): r for r in contents.records}
    states: list[GenerationState] = []
    executor = Executor(_CacheOnly(evaluator or {}), cache=cache)
    seed_config = seed_config if seed_config is not None else default_configuration(space)
    try:
        SAMPLERS[sampler](space, rules, executor, settings, seed_config, None, states.append)
    except _ReplayStop:
        pass
    return cache, (states[-1] if states else None)


def journal_path_for(directory: str | Path, space: ConfigurationSpace, sampler: str, seed: int) -> Path:
    return Path(directory) / f"{space.name}-{sampler}-seed{seed}.jsonl"


def run_with_journal(
    runner: Callable,
    space: ConfigurationSpace,
    rules: RuleSet | None,
    executor: Executor,
    settings: SamplerSettings,
    seed_config: Configuration,
    path: str | Path,
    header: dict,
    resume_existing: bool = False,
):
    """Run ``runner`` journaling to ``path``, resuming an existing journal if asked.

    Returns ``(result, status)`` with status ``new``, ``resumed`` or
    ``complete``; a completed journal is replayed from its cache without any
    evaluation or write.
    """
    path = Path(path)
    if path.exists() and resume_existing:
        journal = Journal.reopen(path, header)
        executor.cache.update(journal.cache())
        if journal.completion is not None:
            journal.close()
            replay = Executor(_CacheOnly(executor.identity()), executor.settings, cache=executor.cache)
            try:
                return runner(space, rules, replay, settings, seed_config), "complete"
            except _ReplayStop:
                raise JournalError(f"journal {path} is marked complete but does not cover the run") from None
        status = "resumed"
    else:
        journal = Journal.create(path, header)
        status = "new"
    try:
        result = runner(space, rules, executor, settings, seed_config, journal=journal)
    finally:
        journal.close()
    return result, status
