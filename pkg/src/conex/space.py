"""Typed, discretized configuration spaces.

A space file lists every parameter of the tuned system together with the
finite set of candidate values the search may assign to it.  Parameters
flagged ``relevant: false`` stay in the file (so renderers and rules can
still see their defaults) but are never varied.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomli_w
import yaml

KINDS = ("boolean", "integer", "float", "categorical", "string")
DEFAULT_DISCRETIZE_COUNT = 5


class SpaceError(ValueError):
    """Raised for malformed space files and invariant violations."""


class ConfigurationError(ValueError):
    """Raised when a configuration does not fit its space."""


def _coerce(kind: str, value: Any, where: str) -> Any:
    if kind == "boolean":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise SpaceError(f"{where}: expected boolean, got {value!r}")
    if kind == "integer":
        if isinstance(value, bool):
            raise SpaceError(f"{where}: expected integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise SpaceError(f"{where}: expected integer, got {value!r}")
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpaceError(f"{where}: expected number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise SpaceError(f"{where}: non-finite value {value!r}")
        return value
    if not isinstance(value, str):
        raise SpaceError(f"{where}: expected string, got {value!r}")
    return value


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    kind: str
    default: Any
    candidates: tuple
    relevant: bool = True
    unit: str | None = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise SpaceError(f"invalid parameter name {self.name!r}")
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        default = _coerce(self.kind, self.default, f"{self.name}.default")
        candidates = tuple(_coerce(self.kind, c, f"{self.name}.candidates") for c in self.candidates)
        if not candidates:
            raise SpaceError(f"{self.name}: empty candidate list")
        if len(set(candidates)) != len(candidates):
            raise SpaceError(f"{self.name}: duplicate candidates {list(candidates)}")
        if default not in candidates:
            raise SpaceError(f"{self.name}: default {default!r} is not among candidates {list(candidates)}")
        object.__setattr__(self, "default", default)
        object.__setattr__(self, "candidates", candidates)

    def index_of(self, value: Any) -> int:
        return self.candidates.index(value)

    def coerce(self, value: Any) -> Any:
        """Convert ``value`` to this parameter's kind (used when parsing rendered files)."""
        return _coerce(self.kind, value, self.name)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "kind": self.kind,
            "default": self.default,
            "candidates": list(self.candidates),
            "relevant": self.relevant,
        }
        if self.unit is not None:
            d["unit"] = self.unit
        return d


@dataclass(frozen=True)
class ConfigurationSpace:
    name: str
    parameters: tuple[ParameterSpec, ...]
    _by_name: Mapping[str, ParameterSpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.parameters)
        object.__setattr__(self, "parameters", params)
        by_name = {}
        for p in params:
            if p.name in by_name:
                raise SpaceError(f"duplicate parameter name {p.name!r}")
            by_name[p.name] = p
        object.__setattr__(self, "_by_name", MappingProxyType(by_name))
        if not any(p.relevant for p in params):
            raise SpaceError(f"space {self.name!r} has no relevant parameters")

    def __getitem__(self, name: str) -> ParameterSpec:
        return self._by_name[name]

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    @property
    def relevant(self) -> tuple[ParameterSpec, ...]:
        return tuple(p for p in self.parameters if p.relevant)

    @property
    def relevant_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters if p.relevant)

    @property
    def dimension(self) -> int:
        return len(self.relevant)

    def to_dict(self) -> dict:
        return {"name": self.name, "parameters": [p.to_dict() for p in self.parameters]}

    def fingerprint(self) -> str:
        """Canonical JSON used for hashing (journal headers)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Configuration(Mapping):
    """An immutable assignment of one candidate value to every relevant parameter.

    Configurations are value objects: equality and hashing use the canonical
    sorted serialization returned by :meth:`key`, which is also the cache key.
    """

    __slots__ = ("_values", "space_ref", "_key")

    def __init__(self, assignments: Mapping[str, Any], space_ref: str):
        self._values = dict(assignments)
        self.space_ref = space_ref
        self._key = json.dumps(self._values, sort_keys=True, separators=(",", ":"))

    def __getitem__(self, name: str) -> Any:
        return self._values[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Configuration):
            return self.space_ref == other.space_ref and self._key == other._key
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.space_ref, self._key))

    def __repr__(self) -> str:
        return f"Configuration({self._values!r})"

    def key(self) -> str:
        return self._key

    def to_dict(self) -> dict:
        return dict(self._values)

    def with_values(self, changes: Mapping[str, Any]) -> "Configuration":
        values = dict(self._values)
        values.update(changes)
        return Configuration(values, self.space_ref)


def make_configuration(space: ConfigurationSpace, assignments: Mapping[str, Any]) -> Configuration:
    """Build a configuration, checking it against ``space``.

    Irrelevant parameters may be present in ``assignments`` only at their
    default value; they are dropped from the result.
    """
    values = {}
    for name, raw in assignments.items():
        if name not in space:
            raise ConfigurationError(f"unknown parameter {name!r} for space {space.name!r}")
        p = space[name]
        try:
            value = p.coerce(raw)
        except SpaceError as exc:
            raise ConfigurationError(str(exc)) from None
        if value not in p.candidates:
            raise ConfigurationError(f"{name}: value {value!r} is not among candidates {list(p.candidates)}")
        if not p.relevant:
            if value != p.default:
                raise ConfigurationError(f"{name}: irrelevant parameter must stay at its default {p.default!r}")
            continue
        values[name] = value
    missing = [n for n in space.relevant_names if n not in values]
    if missing:
        raise ConfigurationError(f"missing assignments for {', '.join(missing)}")
    return Configuration({n: values[n] for n in space.relevant_names}, space.name)


def default_configuration(space: ConfigurationSpace) -> Configuration:
    return Configuration({p.name: p.default for p in space.relevant}, space.name)


def random_configuration(space: ConfigurationSpace, rng: np.random.Generator) -> Configuration:
    """Assign each relevant parameter a uniformly chosen candidate.

    Draws happen in the space's parameter order, one ``rng.integers`` call per
    parameter, so a fixed seed reproduces the same configuration everywhere.
    """
    values = {}
    for p in space.relevant:
        values[p.name] = p.candidates[int(rng.integers(len(p.candidates)))]
    return Configuration(values, space.name)


def enumerate_configurations(space: ConfigurationSpace) -> Iterator[Configuration]:
    names = space.relevant_names
    for combo in itertools.product(*(p.candidates for p in space.relevant)):
        yield Configuration(dict(zip(names, combo)), space.name)


def space_size(space: ConfigurationSpace) -> int:
    """Exact number of configurations (product of relevant candidate counts)."""
    return math.prod(len(p.candidates) for p in space.relevant)


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def discretize_numeric(
    default: float,
    percent: float,
    count: int = DEFAULT_DISCRETIZE_COUNT,
    integer: bool = False,
    name: str = "<parameter>",
) -> list:
    """Evenly spaced values over ``[default*(1-percent), default*(1+percent)]``.

    The default is always present: when ``count`` is even (so no grid point
    lands on it) the grid point nearest the default is replaced by it.
    Integer grids are rounded half away from zero and deduplicated in order.
    """
    if count < 1:
        raise SpaceError(f"{name}: count must be >= 1, got {count}")
    if not percent > 0:
        raise SpaceError(f"{name}: percent must be > 0, got {percent}")
    if not math.isfinite(default):
        raise SpaceError(f"{name}: default must be finite, got {default}")
    if count == 1:
        return [int(default) if integer else float(default)]

    lo, hi = default * (1 - percent), default * (1 + percent)
    grid = [lo + (hi - lo) * i / (count - 1) for i in range(count)]
    nearest = min(range(count), key=lambda i: abs(grid[i] - default))
    grid[nearest] = default

    if integer:
        values = [_round_half_away(v) for v in grid]
    else:
        # 12 significant digits strips binary noise such as 0.5940000000000001
        values = [float(f"{v:.12g}") for v in grid]
    out = list(dict.fromkeys(values))
    if len(out) < 2:
        raise SpaceError(
            f"{name}: discretizing default {default} by ±{percent:g} into {count} values collapses to {out}"
        )
    return out


def _parse_parameter(entry: Mapping[str, Any], default_count: int) -> ParameterSpec:
    if not isinstance(entry, Mapping):
        raise SpaceError(f"parameter entry must be a mapping, got {entry!r}")
    unknown = set(entry) - {"name", "kind", "default", "candidates", "range", "relevant", "unit"}
    if unknown:
        raise SpaceError(f"parameter {entry.get('name')!r}: unknown fields {sorted(unknown)}")
    for key in ("name", "kind", "default"):
        if key not in entry:
            raise SpaceError(f"parameter entry missing {key!r}: {dict(entry)!r}")
    name, kind = entry["name"], entry["kind"]
    if "candidates" in entry and "range" in entry:
        raise SpaceError(f"{name}: give either candidates or range, not both")
    if "range" in entry:
        if kind not in ("integer", "float"):
            raise SpaceError(f"{name}: range sugar only applies to integer/float parameters")
        rng = entry["range"]
        if not isinstance(rng, Mapping) or "percent" not in rng:
            raise SpaceError(f"{name}: range needs a percent field")
        default = entry["default"]
        if isinstance(default, bool) or not isinstance(default, (int, float)):
            raise SpaceError(f"{name}: numeric default required for range, got {default!r}")
        candidates = discretize_numeric(
            default, float(rng["percent"]), int(rng.get("count", default_count)), kind == "integer", name
        )
    elif "candidates" in entry:
        candidates = entry["candidates"]
        if not isinstance(candidates, Sequence) or isinstance(candidates, str):
            raise SpaceError(f"{name}: candidates must be a list")
    elif kind == "boolean":
        candidates = [True, False]
    else:
        raise SpaceError(f"{name}: candidates (or range) required for {kind} parameters")
    relevant = entry.get("relevant", True)
    if not isinstance(relevant, bool):
        raise SpaceError(f"{name}: relevant must be true or false")
    return ParameterSpec(name, kind, entry["default"], tuple(candidates), relevant, entry.get("unit"))


def space_from_dict(data: Mapping[str, Any], default_count: int = DEFAULT_DISCRETIZE_COUNT) -> ConfigurationSpace:
    if not isinstance(data, Mapping):
        raise SpaceError("space file must contain a mapping at top level")
    if "name" not in data or "parameters" not in data:
        raise SpaceError("space file needs top-level 'name' and 'parameters'")
    params = data["parameters"]
    if not isinstance(params, list) or not params:
        raise SpaceError("'parameters' must be a non-empty list")
    return ConfigurationSpace(str(data["name"]), tuple(_parse_parameter(e, default_count) for e in params))


def read_structured(path: str | Path) -> Any:
    """Parse a JSON, YAML or TOML file, chosen by extension."""
    path = Path(path)
    text = path.read_text()
    suffix = path.suffix.lower()
    try:
        if suffix == ".json":
            return json.loads(text) if text.strip() else None
        if suffix == ".toml":
            return tomllib.loads(text)
        if suffix in (".yaml", ".yml"):
            return yaml.safe_load(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, yaml.YAMLError) as exc:
        raise SpaceError(f"cannot parse {path}: {exc}") from None
    raise SpaceError(f"{path}: unsupported file type {suffix!r} (use .json, .yaml or .toml)")


def write_structured(data: Any, path: str | Path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        text = json.dumps(data, indent=2) + "\n"
    elif suffix == ".toml":
        text = tomli_w.dumps(data)
    elif suffix in (".yaml", ".yml"):
        text = yaml.safe_dump(data, sort_keys=False)
    else:
        raise SpaceError(f"{path}: unsupported file type {suffix!r}")
    path.write_text(text)


def load_space(path: str | Path, default_count: int = DEFAULT_DISCRETIZE_COUNT) -> ConfigurationSpace:
    return space_from_dict(read_structured(path), default_count)


def save_space(space: ConfigurationSpace, path: str | Path) -> None:
    write_structured(space.to_dict(), path)


def load_configuration(path: str | Path, space: ConfigurationSpace) -> Configuration:
    """Read a flat name -> value record (JSON/YAML/TOML) as a configuration."""
    data = read_structured(path)
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{path}: configuration file must be a flat mapping")
    return make_configuration(space, data)


def save_configuration(config: Configuration, path: str | Path) -> None:
    write_structured(config.to_dict(), path)
