"""Synthetic performance landscapes for desk-scale verification.

Each landscape maps a configuration to a positive cost through integer
*coordinates*: ``x_i = index(value_i) - index(default_i)`` in the parameter's
candidate list, so the default configuration sits at the origin.  All
landscapes are pure; the optional noise is a deterministic hash of the
configuration and the noise seed.  True optima come from exhaustive
enumeration (:meth:`Landscape.optimum`).

Closed forms (``offset`` = base cost, all coefficients drawn from ``seed``)::

    separable_quadratic   offset + sum_i (a_i x_i^2 + b_i x_i)
    pairwise_interaction  offset + sum_i (a_i x_i^2 + b_i x_i) + sum_(i,j) c_ij x_i x_j
    two_basin_deceptive   offset * (1 - W exp(-|u - u_default|^2 / 2 s_w^2)
                                      - D exp(-|u - u_far|^2 / 2 s_n^2))
    plateau_noise         offset * (1 - depth * ceil(levels * q(x)) / levels) + noise

For ``two_basin_deceptive``, ``u`` rescales each index to [0, 1] and
distances are root-mean-square over parameters; the wide shallow basin sits on
the default and the narrow deep one on a far corner.  ``plateau_noise``
quantizes ``q = 1 - rms_w(u - u_target)``, a cone with its apex at a random
target, into flat terraces.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from typing import Any, Mapping

import numpy as np

from .space import Configuration, ConfigurationSpace, ParameterSpec, enumerate_configurations, space_size

LANDSCAPES = ("separable_quadratic", "pairwise_interaction", "two_basin_deceptive", "plateau_noise")

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "offset": 100.0,
    "noise": 0.0,
    "noise_seed": 0,
    "scale": 1.0,
    "depth": 0.5,
    "ignore": (),
    "pairs": None,
    "interaction": 3.0,
    "wide_weight": 0.3,
    "narrow_weight": 0.6,
    "wide_width": 0.5,
    "narrow_width": 0.15,
    "levels": 8,
    "blend_seed": None,
    "blend_weight": 0.0,
}


class LandscapeError(ValueError):
    pass


def _hash_unit(*parts: Any) -> float:
    """Deterministic value in [-1, 1) from arbitrary parts."""
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**63 - 1.0


class Landscape:
    """Base class: coordinate mapping, purity, exhaustive optimum."""

    deterministic = True
    name = "landscape"

    def __init__(self, space: ConfigurationSpace, options: Mapping[str, Any]):
        self.space = space
        self.options = dict(options)
        self.params: tuple[ParameterSpec, ...] = space.relevant
        self.default_index = np.array([p.index_of(p.default) for p in self.params])
        self.sizes = np.array([len(p.candidates) for p in self.params])
        self.rng = np.random.default_rng(int(self.options["seed"]))

    def identity(self) -> dict:
        opts = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.options.items())}
        return {"kind": "synthetic", "landscape": self.name, "space": self.space.name, **opts}

    def indices(self, config: Configuration) -> np.ndarray:
        return np.array([p.index_of(config[p.name]) for p in self.params])

    def coords(self, config: Configuration) -> np.ndarray:
        return self.indices(config) - self.default_index

    def base_cost(self, config: Configuration) -> float:
        raise NotImplementedError

    def __call__(self, config: Configuration) -> float:
        cost = self.base_cost(config)
        noise = float(self.options["noise"])
        if noise:
            cost += noise * float(self.options["offset"]) * _hash_unit(self.options["noise_seed"], config.key())
        return max(cost, 1e-9) * float(self.options["scale"])

    measure = __call__

    def optimum(self) -> tuple[Configuration, float]:
        """Best configuration by exhaustive enumeration (ties: enumeration order)."""
        if space_size(self.space) > 2_000_000:
            raise LandscapeError("space too large for exhaustive enumeration")
        best, best_cost = None, math.inf
        for config in enumerate_configurations(self.space):
            cost = self(config)
            if cost < best_cost:
                best, best_cost = config, cost
        return best, best_cost


class SeparableQuadratic(Landscape):
    name = "separable_quadratic"

    def __init__(self, space, options):
        super().__init__(space, options)
        n = len(self.params)
        a = self.rng.uniform(0.5, 1.5, n)
        b = self.rng.uniform(-3.0, 3.0, n)
        ignored = set(self.options["ignore"])
        unknown = ignored - set(space.relevant_names)
        if unknown:
            raise LandscapeError(f"ignore names unknown parameters: {sorted(unknown)}")
        mask = np.array([p.name not in ignored for p in self.params], dtype=float)
        a, b = a * mask, b * mask
        # rescale so the exhaustive optimum sits exactly at offset * (1 - depth)
        reduction = 0.0
        for i, p in enumerate(self.params):
            xs = np.arange(len(p.candidates)) - self.default_index[i]
            reduction += -min(0.0, float(np.min(a[i] * xs**2 + b[i] * xs)))
        if reduction > 0:
            gamma = float(self.options["depth"]) * float(self.options["offset"]) / reduction
            a, b = a * gamma, b * gamma
        self.a, self.b = a, b

    def term(self, i: int, x: float) -> float:
        """Solo contribution of parameter ``i`` at coordinate ``x``."""
        return float(self.a[i] * x * x + self.b[i] * x)

    def base_cost(self, config):
        x = self.coords(config)
        return float(self.options["offset"]) + float(np.sum(self.a * x * x + self.b * x))


class PairwiseInteraction(Landscape):
    name = "pairwise_interaction"

    def __init__(self, space, options):
        super().__init__(space, options)
        n = len(self.params)
        a = self.rng.uniform(0.2, 1.0, n)
        b = self.rng.uniform(-1.0, 1.0, n)
        n_pairs = self.options["pairs"]
        n_pairs = n if n_pairs is None else int(n_pairs)
        # the last parameter never interacts, so every space keeps a solo-only one
        pool = list(range(n - 1)) if n > 2 else []
        candidates = list(itertools.combinations(pool, 2))
        n_pairs = min(n_pairs, len(candidates))
        chosen = self.rng.choice(len(candidates), size=n_pairs, replace=False) if n_pairs else []
        self.pairs = [candidates[int(k)] for k in sorted(chosen)]
        c = self.rng.uniform(-1.0, 1.0, len(self.pairs)) * float(self.options["interaction"])
        # bound |terms| over the box so every cost stays within offset * (1 +- 0.9)
        lo = -self.default_index
        hi = self.sizes - 1 - self.default_index
        xmax = np.maximum(np.abs(lo), np.abs(hi)).astype(float)
        bound = float(np.sum(a * xmax**2 + np.abs(b) * xmax))
        bound += float(sum(abs(cij) * xmax[i] * xmax[j] for cij, (i, j) in zip(c, self.pairs)))
        gamma = 0.9 * float(self.options["offset"]) / bound if bound > 0 else 1.0
        self.a, self.b, self.c = a * gamma, b * gamma, c * gamma

    @property
    def interacting(self) -> set[int]:
        return {i for pair in self.pairs for i in pair}

    def solo_term(self, i: int, x: float) -> float:
        return float(self.a[i] * x * x + self.b[i] * x)

    def base_cost(self, config):
        x = self.coords(config).astype(float)
        cost = float(self.options["offset"]) + float(np.sum(self.a * x * x + self.b * x))
        for cij, (i, j) in zip(self.c, self.pairs):
            cost += float(cij * x[i] * x[j])
        return cost


class TwoBasinDeceptive(Landscape):
    name = "two_basin_deceptive"

    def __init__(self, space, options):
        super().__init__(space, options)
        span = np.maximum(self.sizes - 1, 1).astype(float)
        self.span = span
        self.wide_center = self.default_index / span
        # narrow basin: for each parameter the candidate index farthest from the
        # default, ties broken by the seed
        far = []
        for i, size in enumerate(self.sizes):
            d = self.default_index[i]
            options_ = [0, size - 1]
            dist = [abs(o - d) for o in options_]
            if dist[0] == dist[1]:
                far.append(options_[int(self.rng.integers(2))])
            else:
                far.append(options_[int(np.argmax(dist))])
        self.narrow_index = np.array(far)
        self.narrow_center = self.narrow_index / span

    def base_cost(self, config):
        u = self.indices(config) / self.span
        n = len(u)
        dw = float(np.sum((u - self.wide_center) ** 2)) / n
        dn = float(np.sum((u - self.narrow_center) ** 2)) / n
        o = self.options
        well = float(o["wide_weight"]) * math.exp(-dw / (2 * float(o["wide_width"]) ** 2))
        well += float(o["narrow_weight"]) * math.exp(-dn / (2 * float(o["narrow_width"]) ** 2))
        return float(o["offset"]) * (1.0 - well)


class PlateauNoise(Landscape):
    name = "plateau_noise"

    def __init__(self, space, options):
        super().__init__(space, options)
        self.target = np.array([int(self.rng.integers(s)) for s in self.sizes])
        self.weights = self.rng.uniform(0.5, 1.5, len(self.sizes))
        span = np.maximum(self.sizes - 1, 1).astype(float)
        self.norm = float(np.sum(self.weights))
        self.span = span

    def base_cost(self, config):
        d = ((self.indices(config) - self.target) / self.span) ** 2
        q = 1.0 - math.sqrt(float(np.sum(self.weights * d)) / self.norm)  # 1 at target, >= 0 elsewhere
        levels = int(self.options["levels"])
        stepped = math.ceil(q * levels - 1e-12) / levels  # top level is a region, not a single point
        return float(self.options["offset"]) * (1.0 - float(self.options["depth"]) * stepped)


_CLASSES = {
    "separable_quadratic": SeparableQuadratic,
    "pairwise_interaction": PairwiseInteraction,
    "two_basin_deceptive": TwoBasinDeceptive,
    "plateau_noise": PlateauNoise,
}


class Blend(Landscape):
    """``(1 - w) * primary + w * other``: a correlated (small w) or unrelated (w = 1) variant."""

    def __init__(self, primary: Landscape, other: Landscape, weight: float, options):
        self.primary, self.other, self.weight = primary, other, weight
        self.name = primary.name
        super().__init__(primary.space, options)

    def base_cost(self, config):
        return (1 - self.weight) * self.primary.base_cost(config) + self.weight * self.other.base_cost(config)


def synthetic_landscape(descriptor: str | Mapping[str, Any], space: ConfigurationSpace) -> Landscape:
    """Build a pure evaluator from a descriptor.

    ``descriptor`` is a landscape name or a mapping with a ``name`` key plus
    options (``seed``, ``offset``, ``noise``, ``noise_seed``, ``scale``,
    ``blend_seed``/``blend_weight`` and the per-landscape knobs in ``_DEFAULTS``).
    """
    if isinstance(descriptor, str):
        descriptor = {"name": descriptor}
    descriptor = dict(descriptor)
    name = descriptor.pop("name", None)
    if name not in _CLASSES:
        raise LandscapeError(f"unknown landscape {name!r} (expected one of {', '.join(LANDSCAPES)})")
    unknown = set(descriptor) - set(_DEFAULTS)
    if unknown:
        raise LandscapeError(f"unknown landscape options {sorted(unknown)}")
    options = dict(_DEFAULTS)
    if name == "plateau_noise":
        options["noise"] = 0.01
    options.update(descriptor)
    options["ignore"] = tuple(options["ignore"])
    landscape = _CLASSES[name](space, options)
    weight = float(options["blend_weight"])
    if weight:
        if options["blend_seed"] is None:
            raise LandscapeError("blend_weight needs blend_seed")
        other_opts = dict(options, seed=options["blend_seed"], blend_weight=0.0)
        other = _CLASSES[name](space, other_opts)
        landscape = Blend(landscape, other, weight, landscape.options)
    return landscape


def grid_space(n_params: int, n_values: int = 3, name: str | None = None, default_index: int | None = None) -> ConfigurationSpace:
    """An all-integer test space with ``n_values`` candidates per parameter."""
    if default_index is None:
        default_index = n_values // 2
    params = tuple(
        ParameterSpec(f"p{i}", "integer", default_index, tuple(range(n_values))) for i in range(n_params)
    )
    return ConfigurationSpace(name or f"grid{n_values}x{n_params}", params)
