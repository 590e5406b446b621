"""Run configuration: dataclass, flat key=value config files, CLI merging."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

VARIANTS = ("baseline", "only_sfm", "only_hcam", "sfm_conv3d",
            "shnet", "shnet_no_pe", "shnet_no_glove")


@dataclass
class RunConfig:
    variant: str = "shnet"
    resolution: int = 64
    channels: int = 64
    heads: int = 4
    embed_dim: int = 48
    feature_size: int = 0          # 0 -> resolution // 8; 18 restores 320-px geometry
    batch_size: int = 8
    steps: int = 3000
    lr0: float = 1.2e-4
    weight_decay: float = 9e-5
    poly_power: float = 0.7
    seed: int = 0
    data: str = ""
    embeddings: str = ""
    out: str = "runs/run"

    @property
    def grid_size(self):
        return self.feature_size if self.feature_size else self.resolution // 8

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("resolution", "channels", "heads", "embed_dim",
                     "batch_size", "steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr0", "poly_power"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.resolution % 16:
            raise ConfigError(f"resolution {self.resolution} is not a multiple of 16")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.channels % 4:
            raise ConfigError(f"channels {self.channels} must be divisible by 4")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}={raw!r}: {exc}") from exc


def read_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment; keys mirror CLI flags."""
    values = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_config(file_path=None, overrides=None):
    """Defaults, then config file, then CLI overrides; validated."""
    values = {}
    if file_path:
        values.update(read_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return RunConfig(**values).validate()
