"""Experiment configuration: a YAML (or JSON) file with ``model``,
``displacement`` and ``run`` blocks plus a mandatory ``seed``."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from heavybrw.branching import BranchingModel, ModelError, model_from_config, validate_model
from heavybrw.displacement import DisplacementModel, displacement_from_config

OUT_ENV = "HEAVYBRW_OUT"
MAX_SEED = (1 << 64) - 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    n: int = 12
    replicas: int = 1000
    delta: float = 0.05
    zeta: float = 0.5
    theta: float = 0.2
    eta: float = 0.01
    epsilon: float = 0.1
    K: tuple = (2, 4, 6, 8)
    B: tuple = (1, 2, 3)
    n_grid: tuple = (8, 10, 12, 14)
    x_grid: tuple = (0.5, 1.0, 2.0, 4.0)
    population_cap: int = 2_000_000
    cap_tolerance: float = 0.0
    w_depth: int = 14
    w_samples: int = 10_000
    limit_samples: int = 10_000
    mc: int = 200_000
    backend: str | None = None

    @classmethod
    def from_mapping(cls, block: Mapping | None) -> RunSettings:
        block = dict(block or {})
        known = {f.name for f in fields(cls)}
        unknown = set(block) - known
        if unknown:
            raise ConfigError(f"unknown run keys: {sorted(unknown)}")
        for key in ("K", "B", "n_grid", "x_grid"):
            if key in block:
                block[key] = tuple(block[key])
        out = cls(**block)
        if out.n < 1 or out.replicas < 1:
            raise ConfigError("run.n and run.replicas must be positive")
        for key in ("delta", "zeta", "theta", "eta", "epsilon"):
            if getattr(out, key) <= 0:
                raise ConfigError(f"run.{key} must be positive")
        if not 0 <= out.cap_tolerance <= 1:
            raise ConfigError("run.cap_tolerance must lie in [0, 1]")
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    seed: int
    bmodel: BranchingModel
    dmodel: DisplacementModel
    run: RunSettings
    output: Path = field(default=Path("out"))

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def provenance(self) -> dict:
        return {"config_sha256": self.hash, "seed": self.seed}


def config_hash(raw: Mapping) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_raw(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(raw: Mapping, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Validate ``raw`` and assemble models. ``seed`` and ``out`` override the file."""
    raw = copy.deepcopy(dict(raw))
    if seed is not None:
        raw["seed"] = seed
    if raw.get("seed") is None:
        raise ConfigError("a seed is required")
    try:
        s = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {raw['seed']!r}") from None
    if not 0 <= s <= MAX_SEED:
        raise ConfigError("seed must fit in 64 unsigned bits")
    raw["seed"] = s
    for key in ("model", "displacement"):
        if not isinstance(raw.get(key), Mapping):
            raise ConfigError(f"missing {key!r} block")
    try:
        bmodel = model_from_config(raw["model"])
        dmodel = displacement_from_config(raw["displacement"], bmodel.Q)
        run = RunSettings.from_mapping(raw.get("run"))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    output = out or os.environ.get(OUT_ENV) or raw.get("output") or "out"
    # the output location does not change results, so keep it out of the hash
    raw.pop("output", None)
    return ExperimentConfig(raw, s, bmodel, dmodel, run, Path(output))


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    return build_config(load_raw(path), seed, out)


def model_report(cfg: ExperimentConfig) -> dict[str, Any]:
    rep = validate_model(cfg.bmodel)
    return {k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in rep.items()}


__all__ = ["ConfigError", "ExperimentConfig", "RunSettings", "build_config", "load_config",
           "config_hash", "model_report", "ModelError"]
