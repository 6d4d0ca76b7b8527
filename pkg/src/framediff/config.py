"""Flat `key = value` run configuration with strict key validation."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(Exception):
    """Malformed config file or unknown key."""


@dataclasses.dataclass
class RunConfig:
    # schedule
    T: int = 1000
    beta_start: float = 0.0015
    beta_end: float = 0.0195
    # model
    f: int = 32
    K: int = 5
    base_channels: int = 32
    ae_base_channels: int = 32
    codebook_size: int = 8192
    window_size: int = 4
    head_count: int = 4
    channel_mult: tuple = (1, 2, 4)
    attn_depths: tuple = (1, 2)
    time_embed_dim: int = 128
    lambda_vq: float = 1.0
    # training
    ae_lr: float = 1e-3
    dn_lr: float = 1e-4
    ae_steps: int = 500
    dn_steps: int = 2000
    batch: int = 4
    seed: int = 0
    crop: int = 64
    augment: int = 1
    ckpt_every: int = 0
    # sampler
    mode: str = "ddim"
    ddim_steps: int = 200

    def validate(self):
        if self.mode not in ("ddpm", "ddim"):
            raise ConfigError(f"mode must be ddpm or ddim, got '{self.mode}'")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError("beta range must satisfy 0 < start <= end < 1")
        if self.T < 1 or self.ddim_steps < 1:
            raise ConfigError("T and ddim_steps must be positive")
        if self.f < 2 or self.f & (self.f - 1):
            raise ConfigError("f must be a power of two >= 2")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(name, raw):
    field = _FIELDS[name]
    base = RunConfig()
    current = getattr(base, name)
    try:
        if field.type in ("int", int) or isinstance(current, int):
            return int(raw)
        if field.type in ("float", float) or isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: '{raw}'") from e


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values).validate()


def load_config(path=None):
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text(encoding="utf-8"))


def config_to_dict(cfg):
    out = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
    return out


def config_from_dict(d):
    values = {k: _parse_value(k, v) for k, v in d.items() if k in _FIELDS}
    return RunConfig(**values).validate()
