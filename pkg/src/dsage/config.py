"""Experiment configuration: condition table, scale profiles, TOML loading.

A condition name fully determines the surrogate mode and selector; profiles
bundle the desk-scale and paper-scale knobs. Precedence, lowest to highest:
dataclass defaults < profile < config file keys < CLI overrides < condition.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .loop import DsageConfig

# condition -> (surrogate mode, selector, baseline optimizer or None)
CONDITIONS: Dict[str, tuple] = {
    "dsage": ("two-stage", "downsample", None),
    "only-anc": ("two-stage", "all", None),
    "only-down": ("direct", "downsample", None),
    "basic": ("direct", "all", None),
    "baseline-qd": ("none", "all", "by-domain"),
    "dr": ("none", "all", "dr"),
}

PROFILES: Dict[str, dict] = {
    "desk_scale": {
        "budget": 10000,
        "n_rand": 100,
        "n_exploit": 1000,
        "inner_batch": 50,
        "batch_size": 150,
        "epochs": 6,
        "hidden_channels": 8,
        "fc_hidden": 64,
        "dtype": "float32",
        "episodes": 50,
        "trials": 5,
    },
    "paper_scale": {
        "budget": 100000,
        "n_rand": 100,
        "n_exploit": 10000,
        "inner_batch": 150,
        "batch_size": 150,
        "epochs": 200,
        "hidden_channels": 64,
        "fc_hidden": 128,
        "dtype": "float64",
        "episodes": 50,
        "trials": 5,
    },
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


@dataclass
class ExperimentConfig:
    condition: str
    base: DsageConfig
    out_dir: Path
    jobs: int = 1

    @property
    def trials(self) -> int:
        return self.base.trials

    def trial_config(self, index: int) -> DsageConfig:
        cfg = DsageConfig(**{f.name: getattr(self.base, f.name)
                             for f in fields(DsageConfig)})
        cfg.seed = self.base.seed + index
        return cfg

    def trial_dir(self, index: int) -> Path:
        return self.out_dir / self.condition / f"trial_{index}"


def apply_condition(cfg: DsageConfig, condition: str) -> None:
    if condition not in CONDITIONS:
        raise ConfigError(
            f"condition: unknown value {condition!r}; expected one of {sorted(CONDITIONS)}")
    mode, selector, baseline = CONDITIONS[condition]
    cfg.surrogate_mode = mode
    cfg.selector = selector
    if baseline == "by-domain":
        cfg.baseline_optimizer = "map-elites" if cfg.domain == "direct-maze" else "cma-me"
    elif baseline:
        cfg.baseline_optimizer = baseline


def load_experiment(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse a TOML experiment file plus CLI overrides into a validated config."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file does not parse: {e}")
    return build_experiment(raw, overrides, base_dir=path.parent)


def build_experiment(raw: dict, overrides: Optional[dict] = None,
                     base_dir: Path = Path(".")) -> ExperimentConfig:
    raw = dict(raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    condition = overrides.pop("condition", raw.pop("condition", None))
    if condition is None:
        raise ConfigError("condition: required (dsage | only-anc | only-down | "
                          "basic | baseline-qd | dr)")
    profile = overrides.pop("profile", raw.pop("profile", "desk_scale"))
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown value {profile!r}; "
                          f"expected one of {sorted(PROFILES)}")
    out_dir = Path(overrides.pop("out", raw.pop("out", "runs")))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    jobs = int(overrides.pop("jobs", raw.pop("jobs", 1)))

    values = dict(PROFILES[profile])
    known = {f.name: f for f in fields(DsageConfig)}
    for source_name, source in (("config file", raw), ("override", overrides)):
        for key, value in source.items():
            if key == "budget_override":
                key = "budget"
            if key not in known:
                raise ConfigError(f"{key}: unknown {source_name} field")
            values[key] = value
    for key in ("archive_cells", "region_shape"):
        if key in values and values[key] is not None:
            values[key] = tuple(values[key])

    try:
        cfg = DsageConfig(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    apply_condition(cfg, condition)
    try:
        cfg.__post_init__()
    except ValueError as e:
        raise ConfigError(str(e))
    return ExperimentConfig(condition=condition, base=cfg, out_dir=out_dir, jobs=jobs)


def condition_table() -> List[str]:
    return sorted(CONDITIONS)
