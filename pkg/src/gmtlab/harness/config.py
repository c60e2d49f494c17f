"""Flat ``key = value`` scenario configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

SEED_ENV = "GMTLAB_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    name: str
    # geometry
    h: float = 0.02
    R: float = 1.0
    sphere_radius: float = 1.0
    cap_radius: float = 10.0
    tilt: float = 0.01
    amplitude: float = 0.01
    crossing_angle: float = 0.5
    velocity: float = 0.1
    hole_radius: float = 0.1
    n_frames: int = 100
    n_fields: int = 20
    n_scales: int = 5
    # module parameters
    C0: float = 10.0
    eta: float = 0.25
    alpha: float = 0.5
    eps0: float = 0.02
    theta: float = 0.25
    delta0: float = 0.02
    C_pen: float = 10.0
    cfl: float = 0.5
    K: float = 1.0
    c: float = 0.1
    # run
    seed: int = 42
    out_dir: str = "."
    format: str = "json"
    extra: dict = field(default_factory=dict, repr=False)

    SCALE_KEYS = ("h", "R", "sphere_radius", "cap_radius", "hole_radius", "C0", "cfl", "K",
                  "C_pen", "theta", "c")
    UNIT_KEYS = ("eta", "alpha", "eps0", "delta0")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("scenario name is empty")
        for k in self.SCALE_KEYS:
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        for k in self.UNIT_KEYS:
            if not 0 < getattr(self, k) < 1:
                raise ConfigError(f"{k} must lie in (0, 1), got {getattr(self, k)}")
        if not 0 < self.cfl <= 1:
            raise ConfigError(f"cfl must lie in (0, 1], got {self.cfl}")
        for k in ("n_frames", "n_fields", "n_scales"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.n_scales < 3:
            raise ConfigError("n_scales must be >= 3")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format must be json or csv, got {self.format!r}")

    def echo(self) -> dict:
        """Plain dict of every setting (used as report provenance)."""
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "extra"}
        out.update(self.extra)
        return out

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _coerce(key: str, text: str, lineno: int):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            return int(text, 0)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {kind}, got {text!r}") from None
    return text


def parse_config(text: str, name: str | None = None) -> ScenarioConfig:
    """Parse ``key = value`` lines. ``#`` starts a comment; unknown keys are errors."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS or key == "extra":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, lineno)
    if name is not None:
        values["name"] = name
    if "name" not in values:
        raise ConfigError("no scenario name given")
    return ScenarioConfig(**values)


def load_config(path, name: str | None = None, env=None) -> ScenarioConfig:
    cfg = parse_config(Path(path).read_text(encoding="utf-8"), name)
    return apply_env(cfg, env)


def apply_env(cfg: ScenarioConfig, env=None) -> ScenarioConfig:
    """Let ``GMTLAB_SEED`` override the configured seed."""
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return cfg
    try:
        seed = int(raw, 0)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None
    return cfg.replace(seed=seed)
