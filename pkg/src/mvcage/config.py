"""Experiment configuration: dataclasses, presets and JSON overlays.

A configuration document is a nested JSON object mirroring
:class:`ExperimentConfig`. It is resolved as defaults, then the preset, then
the config file, then command-line overrides, each merged key by key.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .bayes import ModelConfig
from .covariance import BivariateMaternParams
from .errors import ConfigError
from .regionalize import RegionalizeConfig

ROUTES = ("score-cov", "plug-in", "empirical", "posterior-EOF")


@dataclass
class GridSpec:
    bbox: list = field(default_factory=lambda: [[0.0, 1.0]])
    counts: list = field(default_factory=lambda: [200])


@dataclass
class CovarianceSpec:
    """``parametric``: bivariate Matérn ``params``; replicated data needed by a
    route are simulated from it. ``data``: replicated data read from
    ``data_path`` (binary container or long CSV)."""

    source: str = "parametric"
    params: dict = field(default_factory=lambda: BivariateMaternParams.simulation_defaults().to_dict())
    data_path: str | None = None
    replications: int = 500


@dataclass
class BasisSpec:
    kind: str = "fourier"
    K: int = 25
    knots: list = field(default_factory=lambda: [5, 5])
    bandwidth: float | None = None


@dataclass
class CageSpec:
    loss: str = "squared"
    partition: str = "regular:10"
    mode: str = "plug-in"


@dataclass
class RegionSpec:
    gamma: float = 0.5
    epsilon: float = 1e-4
    j_min: int | None = None
    j_max: int | None = None
    enforce_contiguity: bool = True
    features: str = "kle"
    mode: str = "epsilon"


@dataclass
class ExperimentConfig:
    name: str = "default"
    grid: GridSpec = field(default_factory=GridSpec)
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    basis: BasisSpec = field(default_factory=BasisSpec)
    route: str = "empirical"
    cage: CageSpec = field(default_factory=CageSpec)
    regionalize: RegionSpec = field(default_factory=RegionSpec)
    model: dict = field(default_factory=lambda: {"n_iter": 2000, "n_burn": 500, "thin": 2})
    seed: int = 0
    threads: int = 1

    def validate(self):
        cov = self.covariance
        if cov.source not in ("parametric", "data"):
            raise ConfigError("covariance.source must be 'parametric' or 'data'")
        if cov.source == "data" and not cov.data_path:
            raise ConfigError("covariance.source 'data' needs covariance.data_path")
        if cov.source == "parametric" and cov.data_path:
            raise ConfigError("give either parametric params or a data path, not both")
        if cov.replications < 1:
            raise ConfigError("covariance.replications must be >= 1")
        if self.route not in ROUTES:
            raise ConfigError(f"route must be one of {ROUTES}")
        if self.basis.kind not in ("fourier", "rbf"):
            raise ConfigError("basis.kind must be 'fourier' or 'rbf'")
        if self.cage.mode not in ("plug-in", "expectation"):
            raise ConfigError("cage.mode must be 'plug-in' or 'expectation'")
        if self.regionalize.mode not in ("epsilon", "argmin"):
            raise ConfigError("regionalize.mode must be 'epsilon' or 'argmin'")
        if self.regionalize.mode == "argmin" and (self.regionalize.j_min is None
                                                  or self.regionalize.j_max is None):
            raise ConfigError("argmin mode needs regionalize.j_min and regionalize.j_max")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.model_config()
        self.region_config()
        if cov.source == "parametric":
            self.matern()
        return self

    def model_config(self):
        try:
            return ModelConfig(seed=self.seed, **self.model)
        except TypeError as exc:
            raise ConfigError(f"bad model settings: {exc}") from exc

    def region_config(self):
        r = self.regionalize
        return RegionalizeConfig(r.gamma, r.epsilon, r.j_min, r.j_max, r.enforce_contiguity,
                                 "kle" if r.features == "kle" else "process",
                                 self.seed, self.threads)

    def matern(self):
        try:
            return BivariateMaternParams.from_dict(self.covariance.params)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad covariance params: {exc}") from exc

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "sim-matern-1d": {
        "name": "sim-matern-1d",
        "grid": {"bbox": [[0.0, 1.0]], "counts": [200]},
        "covariance": {"source": "parametric", "replications": 500,
                       "params": BivariateMaternParams.simulation_defaults().to_dict()},
        "basis": {"kind": "fourier", "K": 25},
        "route": "empirical",
        "cage": {"partition": "regular:10"},
        "regionalize": {"epsilon": 1e-4, "features": "kle", "gamma": 0.5},
    },
    "county-style": {
        "name": "county-style",
        "grid": {"bbox": [[0.0, 1.0], [0.0, 1.0]], "counts": [24, 24]},
        "covariance": {"source": "parametric", "replications": 1,
                       "params": BivariateMaternParams.simulation_defaults().to_dict()},
        "basis": {"kind": "rbf", "knots": [8, 8]},
        "route": "posterior-EOF",
        "cage": {"partition": "regular:16"},
        "regionalize": {"epsilon": 0.01, "features": "process", "gamma": 0.5},
        "model": {"n_iter": 2000, "n_burn": 500, "thin": 2},
    },
    "argmin-bounded": {
        "name": "argmin-bounded",
        "grid": {"bbox": [[0.0, 1.0], [0.0, 1.0]], "counts": [20, 20]},
        "covariance": {"source": "parametric", "replications": 200,
                       "params": BivariateMaternParams.simulation_defaults().to_dict()},
        "basis": {"kind": "rbf", "knots": [6, 6]},
        "route": "score-cov",
        "cage": {"partition": "regular:16"},
        "regionalize": {"mode": "argmin", "j_min": 25, "j_max": 35, "features": "kle"},
    },
}


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("params", "model"):
            out[k] = deep_merge(out[k], v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, d, where):
    names = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kw = {}
    nested = {"grid": GridSpec, "covariance": CovarianceSpec, "basis": BasisSpec,
              "cage": CageSpec, "regionalize": RegionSpec}
    for k, v in d.items():
        if cls is ExperimentConfig and k in nested:
            if not isinstance(v, dict):
                raise ConfigError(f"{k} must be an object")
            kw[k] = _build(nested[k], v, k)
        else:
            kw[k] = v
    return cls(**kw)


def parse_override(text):
    """``a.b.c=value`` with a JSON value (bare words are taken as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    out = cur = {}
    parts = key.split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = val
    return out


def resolve(preset=None, config_path=None, overrides=(), seed=None, threads=None):
    doc = asdict(ExperimentConfig())
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc = deep_merge(doc, PRESETS[preset])
    if config_path is not None:
        try:
            user = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        if isinstance(user, dict) and "config" in user and "command" in user:
            user = user["config"]
        if not isinstance(user, dict):
            raise ConfigError("config document must be a JSON object")
        doc = deep_merge(doc, user)
    for o in overrides:
        doc = deep_merge(doc, parse_override(o))
    if seed is not None:
        doc["seed"] = int(seed)
    if threads is not None:
        doc["threads"] = int(threads)
    try:
        cfg = _build(ExperimentConfig, doc, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
