"""Environment-backed defaults and layered settings for routepredict.

Defaults come from ``ROUTEPREDICT_*`` environment variables (falling back to
built-in values), a JSON config file overrides them, and explicit command-line
flags override both.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

log = logging.getLogger("routepredict")

PRIOR_MODES = ("uniform", "proportional")
PI_MODES = ("ml", "cluster_uniform", "global_uniform")
CLUSTERING_MODES = ("od", "route")
PROTOCOLS = ("split", "loo", "incremental")

SWEEP_ALPHAS = (1e-4, 0.001, 0.1, 0.2, 0.25, 0.3, 0.35, 0.4)
SWEEP_EPSILONS = (1e-7, 1e-5, 0.001, 0.005, 0.01, 0.1)


def _get_float(env: str, default: str) -> float:
    """Return a float from ``env`` or ``default`` with error handling."""
    try:
        default_val: float = float(default)
    except ValueError as exc:
        raise RuntimeError(f"Invalid default for {env}: {default}") from exc

    raw = os.getenv(env)
    if raw is None:
        return default_val
    try:
        return float(raw)
    except ValueError:
        log.error("Invalid %s value %r; using default %s", env, raw, default)
        return default_val


def _get_int(env: str, default: str) -> int:
    """Return an integer from ``env`` or ``default`` with error handling."""
    try:
        default_val = int(default)
    except ValueError as exc:
        raise RuntimeError(f"Invalid default for {env}: {default}") from exc

    raw = os.getenv(env)
    if raw is None:
        return default_val
    try:
        return int(raw)
    except ValueError:
        log.error("Invalid %s value %r; using default %s", env, raw, default)
        return default_val


def _get_choice(env: str, default: str, choices: tuple[str, ...]) -> str:
    """Return one of ``choices`` from ``env``; hyphens count as underscores."""
    if default not in choices:
        raise RuntimeError(f"Invalid default for {env}: {default}")
    raw = os.getenv(env)
    if raw is None:
        return default
    value = raw.strip().lower().replace("-", "_")
    if value not in choices:
        log.error(
            "Invalid %s value %r; expected one of %s, using default %s",
            env,
            raw,
            ", ".join(choices),
            default,
        )
        return default
    return value


ENV_VARS: Mapping[str, str] = MappingProxyType(
    {
        "alpha": "ROUTEPREDICT_ALPHA",
        "epsilon": "ROUTEPREDICT_EPSILON",
        "prior_mode": "ROUTEPREDICT_PRIOR",
        "pi_mode": "ROUTEPREDICT_PI",
        "clustering_mode": "ROUTEPREDICT_CLUSTERING",
        "route_threshold": "ROUTEPREDICT_ROUTE_THRESHOLD",
        "seed": "ROUTEPREDICT_SEED",
    }
)


def _load_defaults() -> Dict[str, Any]:
    alpha = _get_float("ROUTEPREDICT_ALPHA", "0.1")
    if not 0 < alpha < 1:
        log.error("ROUTEPREDICT_ALPHA must be in (0, 1); using default 0.1")
        alpha = 0.1
    epsilon = _get_float("ROUTEPREDICT_EPSILON", "1e-6")
    if epsilon <= 0:
        log.error("ROUTEPREDICT_EPSILON must be > 0; using default 1e-6")
        epsilon = 1e-6
    threshold = _get_float("ROUTEPREDICT_ROUTE_THRESHOLD", "0.3")
    if not 0 < threshold < 1:
        log.error("ROUTEPREDICT_ROUTE_THRESHOLD must be in (0, 1); using default 0.3")
        threshold = 0.3
    return {
        "alpha": alpha,
        "epsilon": epsilon,
        "prior_mode": _get_choice("ROUTEPREDICT_PRIOR", "uniform", PRIOR_MODES),
        "pi_mode": _get_choice("ROUTEPREDICT_PI", "global_uniform", PI_MODES),
        "clustering_mode": _get_choice("ROUTEPREDICT_CLUSTERING", "od", CLUSTERING_MODES),
        "route_threshold": threshold,
        "seed": _get_int("ROUTEPREDICT_SEED", "0"),
    }


_DEFAULTS: Dict[str, Any] = _load_defaults()
DEFAULTS: Mapping[str, Any] = MappingProxyType(_DEFAULTS)


def reload_defaults() -> Mapping[str, Any]:
    """Re-read the environment into :data:`DEFAULTS`."""
    fresh = _load_defaults()
    _DEFAULTS.clear()
    _DEFAULTS.update(fresh)
    return DEFAULTS


class Settings(BaseModel):
    """Validated run configuration shared by every subcommand."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(gt=0, lt=1)
    epsilon: float = Field(gt=0)
    prior_mode: Literal["uniform", "proportional"]
    pi_mode: Literal["ml", "cluster_uniform", "global_uniform"]
    clustering_mode: Literal["od", "route"]
    route_threshold: float = Field(gt=0, lt=1)
    similarity: Literal["jaccard", "shared_over_total"] = "jaccard"
    seed: int = 0
    protocol: Literal["split", "loo", "incremental"] = "loo"
    rounds: int = Field(default=8, ge=1)
    split_fraction: float = Field(default=0.5, gt=0, lt=1)
    alphas: tuple[float, ...] = SWEEP_ALPHAS
    epsilons: tuple[float, ...] = SWEEP_EPSILONS

    @field_validator("prior_mode", "pi_mode", mode="before")
    @classmethod
    def _underscore(cls, value: Any) -> Any:
        if isinstance(value, str):
            return value.replace("-", "_")
        return value

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("alpha grid must not be empty")
        for a in value:
            if not 0 < a < 1:
                raise ValueError(f"alpha {a} outside (0, 1)")
        return value

    @field_validator("epsilons")
    @classmethod
    def _check_epsilons(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("epsilon grid must not be empty")
        for e in value:
            if e <= 0:
                raise ValueError(f"epsilon {e} must be > 0")
        return value


def load_config_file(path: Optional[str | Path]) -> Dict[str, Any]:
    """Return the JSON object stored at ``path`` (empty when ``path`` is None)."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a JSON object")
    return data


def resolve_settings(
    flags: Mapping[str, Any], config_path: Optional[str | Path] = None
) -> Settings:
    """Layer defaults < config file < flags and validate the result.

    ``flags`` entries whose value is ``None`` count as "not given".
    """

    merged: Dict[str, Any] = dict(DEFAULTS)
    merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in flags.items() if v is not None})
    try:
        return Settings(**merged)
    except ValidationError as exc:
        raise ValueError(f"Invalid settings: {exc}") from exc


def explicit_settings(
    flags: Mapping[str, Any], config_path: Optional[str | Path] = None
) -> frozenset[str]:
    """Setting names given by the environment, the config file or ``flags``."""
    keys = {name for name, env in ENV_VARS.items() if os.getenv(env) is not None}
    keys.update(load_config_file(config_path))
    keys.update(k for k, v in flags.items() if v is not None)
    return frozenset(keys)
