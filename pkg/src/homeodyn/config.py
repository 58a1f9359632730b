"""Flat ``key = value`` run configuration.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Keys fall into three groups:

* model parameters (``kc = 0.05``), checked against the chosen model;
* ``noise.*`` keys: ``target``, ``dist``, ``mean``, ``sigma``, ``refresh``, ``seed``;
* run keys listed in :data:`RUN_KEYS` (integrator, sweep and output settings).

Precedence, lowest first: built-in parameter tables, config file, ``--set``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .models import make_system
from .stochastic import DISTRIBUTIONS, NoiseProcess

RUN_KEYS = {
    "model": str,
    "method": str,
    "dt": float,
    "t_end": float,
    "record_stride": int,
    "discard": float,
    "window": float,
    "input": str,
    "range": str,
    "observe": str,
    "seed": int,
    "workers": int,
    "warm_start": "bool",
    "effective_inputs": "bool",
    "x0": "floats",
}
NOISE_KEYS = {
    "target": str,
    "dist": str,
    "mean": float,
    "sigma": float,
    "refresh": float,
    "seed": int,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _convert(key, raw, kind):
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


@dataclass
class RunConfig:
    run: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)

    def merged(self, other: "RunConfig") -> "RunConfig":
        """``other`` wins on every key it sets."""
        return RunConfig({**self.run, **other.run}, {**self.params, **other.params},
                         {**self.noise, **other.noise})

    def as_dict(self) -> dict:
        return {"run": dict(self.run), "params": dict(self.params), "noise": dict(self.noise)}


def parse_pairs(pairs, source: str = "<args>") -> RunConfig:
    """Sort ``(key, value)`` string pairs into run, noise and parameter groups."""
    cfg = RunConfig()
    for key, raw in pairs:
        key, raw = key.strip(), raw.strip()
        if not key:
            raise ConfigError(f"{source}: empty key")
        if key.startswith("noise."):
            sub = key[len("noise."):]
            if sub not in NOISE_KEYS:
                raise ConfigError(f"{source}: unknown noise key {key!r}")
            cfg.noise[sub] = _convert(key, raw, NOISE_KEYS[sub])
        elif key in RUN_KEYS:
            cfg.run[key] = _convert(key, raw, RUN_KEYS[key])
        else:
            cfg.params[key] = _convert(key, raw, float)
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        pairs.append((key, raw))
    return parse_pairs(pairs, source)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def parse_set_flags(items) -> RunConfig:
    pairs = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    return parse_pairs(pairs, "--set")


def parse_noise_flag(text: str) -> dict:
    """``"folded-normal:sigma=0.04,refresh=1000"`` to noise keys."""
    dist, _, rest = text.partition(":")
    out = {"dist": dist.strip()}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        if "=" not in item:
            raise ConfigError(f"--noise option {item!r} is not key=value")
        k, v = item.split("=", 1)
        if k not in NOISE_KEYS:
            raise ConfigError(f"unknown --noise option {k!r}")
        out[k] = _convert(f"noise.{k}", v, NOISE_KEYS[k])
    return out


def build_system(model: str, params: dict):
    """Model with table defaults and ``params`` applied; unknown names raise."""
    try:
        return make_system(model, **params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_noise(noise: dict, default_target: Optional[str] = None, system=None,
                seed: int = 0) -> Optional[NoiseProcess]:
    """:class:`NoiseProcess` from ``noise.*`` keys, or ``None`` if none were given."""
    if not noise:
        return None
    target = noise.get("target", default_target)
    if target is None:
        raise ConfigError("noise needs a target parameter (noise.target)")
    dist = noise.get("dist", "normal")
    if dist not in DISTRIBUTIONS:
        raise ConfigError(f"unknown noise distribution {dist!r}")
    if system is not None:
        try:
            system.param_index(target)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
        mean = noise.get("mean", getattr(system.params, target))
    else:
        mean = noise.get("mean", 0.0)
    try:
        return NoiseProcess(target, dist, float(mean), float(noise.get("sigma", 0.0)),
                            float(noise.get("refresh", 1.0)), int(noise.get("seed", seed)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
