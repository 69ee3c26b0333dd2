"""Experiment configuration (YAML).

Every key is optional; an empty file runs the default synthetic grid at
N = 1500.  Example::

    data:
      source: synthetic        # or "csv"
      csv: oslo.csv            # real-schema data (csv runs, fit-mle)
      n: 1500
      seeds: 10
      params: {sigma_eps2: 0.5, sigma2: 0.2, rho: 4.0}
    alpha: 0.1
    models: [linear, random_forest, gradient_boosting, spatial]
    schemes: {eta: 0.9233, radius: 1.0}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..exceptions import ConfigError
from ..spatial import NUGGET_MODES, SpatialParams

MODELS = ("linear", "random_forest", "gradient_boosting", "spatial")
SCORES = ("standard", "normalized1", "normalized2", "normalized3", "cqr", "oracle")
SCHEMES = ("CP", "MCP", "SCP", "NNCP", "FWCP")

# Placeholder variances (squared million NOK); only rho = 4.0 is an estimate.
DEFAULT_PARAMS = SpatialParams(sigma_eps2=0.5, sigma2=0.2, rho=4.0)
FULL_SCALE_N = 6000


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    csv: str | None = None
    params_file: str | None = None
    n: int = 1500
    seeds: int = 10
    feature_seed: int = 0
    params: SpatialParams = DEFAULT_PARAMS
    nugget_mode: str = "diagonal"
    fractions: tuple = (1 / 3, 1 / 3, 1 / 3)
    alpha: float = 0.1
    models: tuple = MODELS
    scores: tuple = SCORES
    schemes: tuple = SCHEMES
    eta: float = 0.64 / math.log(2.0)
    radius: float = 1.0
    rf: dict = field(default_factory=lambda: {"n_trees": 500, "min_leaf": 5, "mtry": None})
    gbt: dict = field(default_factory=lambda: {"n_trees": 1000, "max_depth": 4, "learning_rate": 0.03})
    qrf: dict = field(default_factory=lambda: {"n_trees": 500, "min_leaf": 5})
    fwcp: dict = field(default_factory=lambda: {"n_trees": 500, "max_depth": 6, "min_leaf": 5})
    mle: dict = field(default_factory=lambda: {"init": {"sigma_eps2": 0.5, "sigma2": 0.5, "rho": 2.0},
                                               "maxiter": 500})
    out: str = "results"
    data_dir: str | None = None
    threads: int = 1
    write_predictions: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv:
            raise ConfigError("data.source = csv needs data.csv")
        if self.seeds < 1:
            raise ConfigError("seed count must be at least 1")
        if self.n < 30:
            raise ConfigError("n must be at least 30")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.nugget_mode not in NUGGET_MODES:
            raise ConfigError(f"nugget_mode must be one of {NUGGET_MODES}")
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError(f"split fractions must be 3 positive numbers summing to 1: {self.fractions}")
        self.fractions = fr
        for name, allowed in (("models", MODELS), ("scores", SCORES), ("schemes", SCHEMES)):
            vals = tuple(getattr(self, name))
            bad = [v for v in vals if v not in allowed]
            if bad:
                raise ConfigError(f"unknown {name}: {bad}; allowed {list(allowed)}")
            setattr(self, name, vals)
        if "SCP" in self.schemes and not self.eta > 0:
            raise ConfigError("SCP needs eta > 0")
        if "NNCP" in self.schemes and not self.radius > 0:
            raise ConfigError("NNCP needs radius > 0")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def data_path(self):
        return Path(self.data_dir) if self.data_dir else Path(self.out) / "data"

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["params"] = self.params.to_dict()
        d["fractions"] = list(self.fractions)
        for k in ("models", "scores", "schemes"):
            d[k] = list(d[k])
        return d


_SECTIONS = {
    "data": {"source", "csv", "params_file", "n", "seeds", "feature_seed", "params", "nugget_mode",
             "dir"},
    "split": {"fractions"},
    "schemes": {"eta", "radius", "list"},
    "predictors": {"rf", "gbt", "qrf", "fwcp", "mle"},
    "output": {"dir", "write_predictions", "threads"},
}
_TOP = {"alpha", "models", "scores", "data", "split", "schemes", "predictors", "output"}


def config_from_dict(raw):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for section, keys in _SECTIONS.items():
        sub = raw.get(section) or {}
        if section == "schemes" and isinstance(sub, list):
            sub = {"list": sub}
        if not isinstance(sub, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        bad = set(sub) - keys
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
        for k, v in sub.items():
            if section == "data" and k == "params":
                try:
                    v = SpatialParams.from_dict(v)
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"bad data.params: {exc}") from None
                kw["params"] = v
            elif section == "data" and k == "dir":
                kw["data_dir"] = v
            elif section == "schemes" and k == "list":
                kw["schemes"] = tuple(v)
            elif section == "output" and k == "dir":
                kw["out"] = v
            elif section == "predictors":
                base = getattr(ExperimentConfig(), k)
                if not isinstance(v, dict):
                    raise ConfigError(f"predictors.{k} must be a mapping")
                kw[k] = {**base, **v}
            else:
                kw[k] = v
    for k in ("alpha", "models", "scores"):
        if k in raw:
            kw[k] = raw[k]
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides):
    """Read a YAML config and apply non-``None`` command-line overrides."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = config_from_dict(raw)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.validate()
    return cfg
