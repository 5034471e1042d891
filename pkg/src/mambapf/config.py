"""Run configuration: defaults, flat key=value config files, CLI overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import InvalidInputError, ParseError

SEED_ENV_VAR = "MAMBAPF_SEED"


@dataclass
class RunConfig:
    """All pipeline knobs; defaults follow the reference training setup
    (4 modules, 4 iterations, 6 Mamba layers, patch 2000, alpha 0.01,
    32 views, Adam lr 1e-4)."""

    modules: int = 4            # M
    iterations: int = 4         # T
    mamba_layers: int = 6
    patch_size: int = 2000
    k_graph: int = 16
    embed_dim: int = 32
    state_dim: int = 16
    expand: int = 2
    conv_width: int = 4
    max_step: float = 0.01
    alpha: float = 0.01
    views: int = 32
    image_size: int = 64
    depth_bins: int = 32
    splat_sigma: float = 1.0
    lr: float = 1e-4
    steps: int = 100
    seed: int = 0
    normalize: bool = True
    sigma_start: float = 0.02
    noise_fraction: float = 0.02
    noise_reference: str = "bbox_diagonal"
    grad_clip: float = 1.0
    threads: int = 1

    def __post_init__(self):
        for name in ("modules", "iterations", "mamba_layers", "patch_size",
                     "k_graph", "embed_dim", "state_dim", "expand",
                     "conv_width", "views", "image_size", "depth_bins",
                     "steps", "threads"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.alpha < 0:
            raise InvalidInputError("alpha must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidInputError(f"config key {name}: expected boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError as exc:
        raise InvalidInputError(f"config key {name}: {exc}") from None


def load_config(path: str) -> RunConfig:
    """Parse a flat ``key = value`` file with ``#`` comments."""
    types = {f.name: f.type for f in fields(RunConfig)}
    concrete = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ParseError(f"expected 'key = value', got {stripped!r}",
                                 line=lineno)
            key, raw = (s.strip() for s in stripped.split("=", 1))
            if key not in types:
                raise ParseError(f"unknown config key {key!r}", line=lineno)
            values[key] = _coerce(key, raw, concrete[key])
    return RunConfig.from_dict(values | {})


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    d = config.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in d:
            raise InvalidInputError(f"unknown config key {key!r}")
        d[key] = type(d[key])(value)
    return RunConfig.from_dict(d)


def resolve_seed(config: RunConfig, explicit: int | None) -> int:
    """CLI flag wins, then the environment fallback, then the config default."""
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidInputError(f"{SEED_ENV_VAR} must be an integer") from None
    return config.seed
