"""Experiment configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from mfg_select.coefficients import ModelParams

KINDS = ("coeffs", "field", "mfg", "nplayer", "cost", "verify")


class ConfigError(ValueError):
    """Raised for configurations that violate a module precondition."""


@dataclass
class ExperimentConfig:
    kind: str = "verify"
    model: ModelParams = field(default_factory=ModelParams.canonical)
    dt: float = 1e-3
    seed: int = 0
    out: str = "out"
    threads: int | None = None
    # zero-noise experiments
    sigma0: float = 0.05
    sigma0_list: tuple = (0.2, 0.1, 0.05)
    paths: int = 2000
    tolerance: float = 0.15
    L_exponent: float = 1.0 / 9.0
    # field tabulation
    t_values: tuple = (0.1, 0.25, 0.5, 0.75, 0.9)
    x_min: float = -1.0
    x_max: float = 1.0
    nx: int = 41
    # finite population
    n: int = 1024
    n_list: tuple = (64, 256, 1024)
    runs: int = 500
    exact: bool = False
    picard_iters: int = 30
    gamma_exponent: float = 0.25
    # cost
    cost_paths: int = 100_000
    # verification
    suite: str = "acceptance"

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not (math.isfinite(self.dt) and 0 < self.dt < self.model.horizon):
            raise ConfigError("dt must lie in (0, horizon)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for s0 in (self.sigma0, *self.sigma0_list):
            if not 0 < s0 < 1:
                raise ConfigError(f"sigma0={s0} must lie in (0, 1)")
        if self.paths < 1 or self.runs < 1:
            raise ConfigError("path and run counts must be positive")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.L_exponent <= 0 or self.gamma_exponent <= 0:
            raise ConfigError("exponents must be positive")
        if self.nx < 2 or self.x_max <= self.x_min:
            raise ConfigError("field lattice needs nx >= 2 and x_max > x_min")
        if any(not 0 <= t <= self.model.horizon for t in self.t_values):
            raise ConfigError("t_values must lie in [0, horizon]")
        for N in (self.n, *self.n_list):
            if N < 2:
                raise ConfigError("N must be at least 2")
        if self.picard_iters < 1:
            raise ConfigError("picard_iters must be positive")
        if self.cost_paths < 100:
            raise ConfigError("cost Monte Carlo needs at least 100 paths")
        if self.suite != "acceptance":
            raise ConfigError(f"unknown suite {self.suite!r}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = dataclasses.asdict(self.model)
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding the output path."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_TUPLE_FIELDS = {"sigma0_list", "t_values", "n_list"}


def build_config(file_data: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge a parsed JSON document with flag overrides (flags win) and
    validate.  Model parameters may be given under "model" or at top level."""
    data = dict(file_data or {})
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    # sigma0 at top level is the experiment's noise level, not a model field
    model_keys = {f.name for f in dataclasses.fields(ModelParams)} - {"sigma0"}
    model = dict(data.pop("model", {}) or {})
    for k in list(data):
        if k in model_keys:
            model[k] = data.pop(k)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for k in _TUPLE_FIELDS & set(data):
        data[k] = tuple(data[k])
    try:
        params = ModelParams(**{**dataclasses.asdict(ModelParams.canonical()), **model})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model parameters: {exc}") from exc
    try:
        cfg = ExperimentConfig(model=params, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    return build_config(data, overrides)
