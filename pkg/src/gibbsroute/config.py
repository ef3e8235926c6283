"""Experiment configuration: TOML with dotted keys, validated against a fixed key set."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .domain import Grid, IntensityDensity, Window, build_grid
from .energy import CongestionPenalty
from .gibbs import ModelParams


class ConfigError(ValueError):
    def __init__(self, message: str, path: Optional[str] = None, key: Optional[str] = None):
        super().__init__(message)
        self.path = path
        self.key = key


PENALTIES = {
    "quadratic": None,
    "cubic": lambda m: m * (m - 1) * (m - 2) + m * (m - 1),
}

# key -> (type, default)
SCHEMA: dict = {
    "window.r": (float, 1.0),
    "window.d": (int, 1),
    "density.kind": (str, "uniform"),
    "density.total_mass": (float, 1.0),
    "density.delta": (Fraction, Fraction(1, 3)),
    "density.cells": ([float], []),
    "model.lambda": (float, 50.0),
    "model.gamma": (float, 1.0),
    "model.beta": (float, 0.0),
    "model.k_max": (int, 2),
    "model.alpha": (float, 2.0),
    "model.eta": (str, "quadratic"),
    "grid.deltas": ([Fraction], [Fraction(1, 9)]),
    "run.seed": (int, 0),
    "run.seeds": (int, 1),
    "mcmc.steps": (int, 100_000),
    "mcmc.thin": (int, 10),
    "mcmc.replicas": (int, 1),
    "mcmc.workers": (int, 1),
    "mcmc.sampler": (str, "metropolis"),
    "mcmc.burn_in": (float, 0.2),
    "mcmc.c0": (float, 0.0),
    "mcmc.gamma_max": (float, 0.0),
    "solver.damping": (float, 0.5),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 10_000),
    "solver.starts": (int, 1),
    "budget.enumeration": (int, 10**6),
    "budget.conditional": (int, 10**5),
    "free_energy.lambdas": ([float], [50.0, 200.0, 800.0]),
    "functionals.setting": (str, ""),
    "output.dir": (str, "out"),
}


def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, typ, value):
    if isinstance(typ, list):
        if not isinstance(value, list):
            value = [value]
        return [_coerce(key, typ[0], v) for v in value]
    if typ is Fraction:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a fraction", key=key)
        try:
            return Fraction(str(value)) if not isinstance(value, float) else Fraction(value).limit_denominator(3**12)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{key}: cannot read {value!r} as a fraction", key=key) from None
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if typ is str and isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}", key=key)


def _jsonable(v: Any):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class ExperimentConfig:
    values: dict
    source: str = ""

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def hash(self) -> str:
        blob = json.dumps({k: _jsonable(v) for k, v in sorted(self.values.items())}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def window(self) -> Window:
        return Window(self["window.r"], self["window.d"])

    def density(self) -> IntensityDensity:
        w = self.window()
        if self["density.kind"] == "uniform":
            return IntensityDensity.uniform(w, self["density.total_mass"])
        grid = build_grid(w, self["density.delta"])
        return IntensityDensity.tabulated(grid, self["density.cells"])

    def params(self, **override) -> ModelParams:
        fn = PENALTIES[self["model.eta"]]
        eta = CongestionPenalty(fn, self["model.eta"]) if fn else CongestionPenalty()
        vals = dict(gamma=self["model.gamma"], beta=self["model.beta"], k_max=self["model.k_max"],
                    alpha=self["model.alpha"], eta=eta)
        vals.update(override)
        return ModelParams(**vals)

    def grids(self) -> list:
        return [build_grid(self.window(), d) for d in self["grid.deltas"]]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        vals = dict(self.values)
        vals["run.seed"] = int(seed)
        return ExperimentConfig(vals, self.source)


def _validate(vals: dict, path: Optional[str]) -> None:
    def fail(msg, key):
        raise ConfigError(msg, path, key)

    if vals["density.kind"] not in ("uniform", "tabulated"):
        fail("density.kind must be 'uniform' or 'tabulated'", "density.kind")
    if vals["model.eta"] not in PENALTIES:
        fail(f"model.eta must be one of {sorted(PENALTIES)}", "model.eta")
    if vals["mcmc.sampler"] not in ("metropolis", "gibbs"):
        fail("mcmc.sampler must be 'metropolis' or 'gibbs'", "mcmc.sampler")
    for key in ("mcmc.steps", "mcmc.thin", "mcmc.replicas", "run.seeds", "solver.max_iter", "solver.starts"):
        if vals[key] < 1:
            fail(f"{key} must be at least 1", key)
    if not 0 <= vals["mcmc.burn_in"] < 1:
        fail("mcmc.burn_in must lie in [0, 1)", "mcmc.burn_in")
    if not 0 < vals["solver.damping"] <= 1:
        fail("solver.damping must lie in (0, 1]", "solver.damping")
    if not vals["grid.deltas"]:
        fail("grid.deltas must name at least one grid", "grid.deltas")
    try:
        w = Window(vals["window.r"], vals["window.d"])
        for d in vals["grid.deltas"]:
            build_grid(w, d)
        if vals["density.kind"] == "tabulated":
            g = build_grid(w, vals["density.delta"])
            if len(vals["density.cells"]) != g.n_cells:
                fail(f"density.cells needs {g.n_cells} masses for density.delta", "density.cells")
        ModelParams(gamma=vals["model.gamma"], beta=vals["model.beta"], k_max=vals["model.k_max"],
                    alpha=vals["model.alpha"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    if vals["model.lambda"] <= 0 or any(x <= 0 for x in vals["free_energy.lambdas"]):
        fail("intensities must be positive", "model.lambda")


def parse_config(text: str, path: Optional[str] = None) -> ExperimentConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}", path) from None
    flat = _flatten(tree)
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}", path, unknown[0])
    vals = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in SCHEMA.items()}
    for k, v in flat.items():
        try:
            vals[k] = _coerce(k, SCHEMA[k][0], v)
        except ConfigError as exc:
            raise ConfigError(str(exc), path, k) from None
    _validate(vals, path)
    return ExperimentConfig(vals, path or "")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
    return parse_config(text, str(p))
