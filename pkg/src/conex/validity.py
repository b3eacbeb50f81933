"""Declarative validity rules for configurations.

Rules are checked before a configuration is ever handed to an evaluator,
so that obviously broken settings (a buffer that is not a page multiple, a
heap larger than its container) never cost a benchmark run.

Supported rule kinds and their fields::

    range              min and/or max                    every subject within bounds
    multiple_of        modulus                           every subject divisible
    enum_member        values                            every subject in values
    linear_inequality  coeffs (one per subject), bound   sum(coeff*value) <op> bound
    ratio_bound        factor [, denominator]            subj[0] <op> factor * subj[1]
                                                         (or factor * denominator with one subject)
    requires           when, then values / min / max     if every `when` matches, subjects obey `then`

``op`` defaults to ``<=`` and may be one of ``<=, <, >=, >, ==, !=``.  Any
numeric field may be written as ``${NAME}``; it is resolved at load time from
the rules file's ``externals`` table first and the process environment second.
"""

from __future__ import annotations

import hashlib
import json
import math
import operator
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .space import Configuration, ConfigurationSpace, SpaceError, read_structured

RULE_KINDS = ("range", "multiple_of", "enum_member", "linear_inequality", "ratio_bound", "requires")

_OPS = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
    "!=": operator.ne,
}
_EXTERNAL = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")


class RuleError(ValueError):
    """Malformed rule or reference to a parameter the space does not have."""


@dataclass(frozen=True)
class ConstraintRule:
    id: str
    kind: str
    subjects: tuple[str, ...]
    params: Mapping[str, Any]
    message: str

    def describe(self) -> str:
        return self.message or f"rule {self.id} ({self.kind}) violated"


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    violations: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict:
        return {"valid": self.valid, "violations": [{"rule": r, "message": m} for r, m in self.violations]}


def _resolve(value: Any, externals: Mapping[str, Any], where: str) -> Any:
    if isinstance(value, str):
        m = _EXTERNAL.match(value.strip())
        if m:
            name = m.group(1)
            if name in externals:
                raw = externals[name]
            elif name in os.environ:
                raw = os.environ[name]
            else:
                raise RuleError(f"{where}: external value ${{{name}}} is not defined in the rules file or environment")
            return _number(raw, where)
    if isinstance(value, list):
        return [_resolve(v, externals, where) for v in value]
    if isinstance(value, dict):
        return {k: _resolve(v, externals, where) for k, v in value.items()}
    return value


def _number(raw: Any, where: str) -> float | int:
    if isinstance(raw, bool):
        raise RuleError(f"{where}: expected a number, got {raw!r}")
    if isinstance(raw, (int, float)):
        return raw
    try:
        text = str(raw).strip()
        return int(text) if re.fullmatch(r"[-+]?\d+", text) else float(text)
    except ValueError:
        raise RuleError(f"{where}: expected a number, got {raw!r}") from None


def _require_number(params: Mapping[str, Any], key: str, rid: str) -> float:
    if key not in params:
        raise RuleError(f"rule {rid}: missing field {key!r}")
    return _number(params[key], f"rule {rid}.{key}")


def _compile_rule(entry: Mapping[str, Any], space: ConfigurationSpace, externals: Mapping[str, Any]) -> ConstraintRule:
    if not isinstance(entry, Mapping):
        raise RuleError(f"rule entry must be a mapping, got {entry!r}")
    rid = entry.get("id")
    if not rid:
        raise RuleError(f"rule without id: {dict(entry)!r}")
    rid = str(rid)
    kind = entry.get("kind")
    if kind not in RULE_KINDS:
        raise RuleError(f"rule {rid}: unknown kind {kind!r} (expected one of {', '.join(RULE_KINDS)})")
    subjects = entry.get("subjects")
    if isinstance(subjects, str):
        subjects = [subjects]
    if not subjects or not isinstance(subjects, list):
        raise RuleError(f"rule {rid}: subjects must be a non-empty list")
    for s in subjects:
        if s not in space:
            raise RuleError(f"rule {rid}: unknown parameter {s!r}")

    params = {k: v for k, v in entry.items() if k not in ("id", "kind", "subjects", "message")}
    params = _resolve(params, externals, f"rule {rid}")
    op = params.get("op", "<=")
    if op not in _OPS:
        raise RuleError(f"rule {rid}: unknown op {op!r}")
    params["op"] = op

    if kind == "range":
        if "min" not in params and "max" not in params:
            raise RuleError(f"rule {rid}: range needs min and/or max")
        for key in ("min", "max"):
            if key in params:
                params[key] = _require_number(params, key, rid)
    elif kind == "multiple_of":
        params["modulus"] = _require_number(params, "modulus", rid)
        if params["modulus"] == 0:
            raise RuleError(f"rule {rid}: modulus must be non-zero")
    elif kind == "enum_member":
        if not isinstance(params.get("values"), list):
            raise RuleError(f"rule {rid}: enum_member needs a values list")
    elif kind == "linear_inequality":
        coeffs = params.get("coeffs")
        if not isinstance(coeffs, list) or len(coeffs) != len(subjects):
            raise RuleError(f"rule {rid}: linear_inequality needs one coefficient per subject")
        params["coeffs"] = [_number(c, f"rule {rid}.coeffs") for c in coeffs]
        params["bound"] = _require_number(params, "bound", rid)
    elif kind == "ratio_bound":
        params["factor"] = _require_number(params, "factor", rid)
        if len(subjects) == 1:
            params["denominator"] = _require_number(params, "denominator", rid)
        elif len(subjects) != 2:
            raise RuleError(f"rule {rid}: ratio_bound takes two subjects (or one plus a denominator)")
    elif kind == "requires":
        when = params.get("when")
        if not isinstance(when, Mapping) or not when:
            raise RuleError(f"rule {rid}: requires needs a non-empty when mapping")
        for name in when:
            if name not in space:
                raise RuleError(f"rule {rid}: unknown parameter {name!r} in when")
        if not any(k in params for k in ("values", "min", "max")):
            raise RuleError(f"rule {rid}: requires needs values, min or max for its subjects")

    message = str(entry.get("message") or f"{kind} rule {rid} violated by {', '.join(subjects)}")
    return ConstraintRule(rid, kind, tuple(subjects), params, message)


def _value_of(name: str, config: Configuration, space: ConfigurationSpace) -> Any:
    if name in config:
        return config[name]
    return space[name].default


def _is_multiple(value: float, modulus: float) -> bool:
    if isinstance(value, int) and isinstance(modulus, int):
        return value % modulus == 0
    q = value / modulus
    return math.isclose(q, round(q), rel_tol=0, abs_tol=1e-9)


def _matches(actual: Any, expected: Any) -> bool:
    if isinstance(expected, list):
        return actual in expected
    return actual == expected


def _holds(rule: ConstraintRule, config: Configuration, space: ConfigurationSpace) -> bool:
    p = rule.params
    vals = [_value_of(s, config, space) for s in rule.subjects]
    cmp = _OPS[p["op"]]
    kind = rule.kind
    try:
        if kind == "range":
            return all(("min" not in p or v >= p["min"]) and ("max" not in p or v <= p["max"]) for v in vals)
        if kind == "multiple_of":
            return all(_is_multiple(v, p["modulus"]) for v in vals)
        if kind == "enum_member":
            return all(v in p["values"] for v in vals)
        if kind == "linear_inequality":
            return cmp(sum(c * v for c, v in zip(p["coeffs"], vals)), p["bound"])
        if kind == "ratio_bound":
            denom = p["denominator"] if len(vals) == 1 else vals[1]
            return cmp(vals[0], p["factor"] * denom)
        if kind == "requires":
            if not all(_matches(_value_of(n, config, space), want) for n, want in p["when"].items()):
                return True
            return all(
                ("values" not in p or v in p["values"])
                and ("min" not in p or v >= p["min"])
                and ("max" not in p or v <= p["max"])
                for v in vals
            )
    except TypeError:
        # comparing a string parameter against numeric bounds
        return False
    raise AssertionError(kind)


@dataclass(frozen=True)
class RuleSet:
    """Compiled, immutable rules bound to one configuration space."""

    space: ConfigurationSpace
    rules: tuple[ConstraintRule, ...] = ()
    source: tuple[dict, ...] = field(default=(), repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.rules)

    def check(self, config: Configuration) -> ValidityReport:
        return check(config, self)

    def is_valid(self, config: Configuration) -> bool:
        return all(_holds(r, config, self.space) for r in self.rules)

    def fingerprint(self) -> str:
        payload = [
            {"id": r.id, "kind": r.kind, "subjects": list(r.subjects), "params": r.params, "message": r.message}
            for r in self.rules
        ]
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.fingerprint().encode()).hexdigest()


def empty_rules(space: ConfigurationSpace) -> RuleSet:
    return RuleSet(space)


def rules_from_dict(data: Any, space: ConfigurationSpace) -> RuleSet:
    if data is None:
        return RuleSet(space)
    if isinstance(data, list):
        data = {"rules": data}
    if not isinstance(data, Mapping):
        raise RuleError("rules file must be a mapping with a 'rules' list")
    externals = data.get("externals") or {}
    if not isinstance(externals, Mapping):
        raise RuleError("'externals' must be a mapping")
    entries = data.get("rules") or []
    if not isinstance(entries, list):
        raise RuleError("'rules' must be a list")
    rules = tuple(_compile_rule(e, space, externals) for e in entries)
    ids = [r.id for r in rules]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise RuleError(f"duplicate rule ids: {sorted(dup)}")
    return RuleSet(space, rules, tuple(dict(e) for e in entries))


def load_rules(path: str | Path, space: ConfigurationSpace) -> RuleSet:
    try:
        data = read_structured(path)
    except SpaceError as exc:
        raise RuleError(str(exc)) from None
    return rules_from_dict(data, space)


def check(config: Configuration, rules: RuleSet) -> ValidityReport:
    """Evaluate every rule (no short-circuit) and collect all violations."""
    violations = tuple((r.id, r.describe()) for r in rules.rules if not _holds(r, config, rules.space))
    return ValidityReport(not violations, violations)
