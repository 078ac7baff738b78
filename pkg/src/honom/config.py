"""Run configuration: flat ``key = value`` files merged with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigError
from .point_cloud import WEIGHTS


def _int_list(text):
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


def _float_list(text):
    return tuple(float(t) for t in str(text).replace(" ", "").split(",") if t)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    return lambda text: None if str(text).strip().lower() in ("", "none", "default") else conv(text)


@dataclass
class RunConfig:
    """Everything needed to run one benchmark or ladder.

    ``nodes``, ``orders`` and ``phg`` are tuples so that a ladder can
    sweep them; ``solve`` requires a single value of each.
    """

    benchmark: str | None = None
    cloud: str | None = None
    nodes: tuple = ()
    orders: tuple = ()
    phg: tuple = ()
    weight: str | None = None
    gauss_shape: float | None = None
    neighbors: int | None = None
    penalty: float | None = None
    hourglass_scale: float | None = None
    seed: int = 0
    perturb: float = 0.0
    tol: float = 1e-8
    max_iter: int = 25
    load_steps: int | None = None
    out: str = "."
    runtime: bool = True

    def validate(self):
        """Raise :class:`ConfigError` on values no run can use."""
        if not self.benchmark:
            raise ConfigError("no benchmark given")
        if self.weight is not None and self.weight not in WEIGHTS:
            raise ConfigError(f"weight must be one of {WEIGHTS}, got {self.weight!r}")
        if self.cloud is not None and not Path(self.cloud).is_file():
            raise ConfigError(f"cloud file {self.cloud!r} does not exist")
        if any(n < 1 for n in self.nodes):
            raise ConfigError("nodes must be positive")
        if any(p < 1 for p in self.orders):
            raise ConfigError("orders must be positive")
        if any(v < 0 for v in self.phg):
            raise ConfigError("phg must be non-negative")
        if not 0.0 <= self.perturb < 1.0:
            raise ConfigError("perturb must lie in [0, 1)")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.penalty is not None and self.penalty <= 0:
            raise ConfigError("penalty must be positive")
        if self.load_steps is not None and self.load_steps < 1:
            raise ConfigError("load_steps must be at least 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.neighbors is not None and self.neighbors < 1:
            raise ConfigError("neighbors must be positive")
        return self


_PARSERS = {
    "benchmark": str, "cloud": str, "nodes": _int_list, "orders": _int_list, "phg": _float_list,
    "weight": _opt(str), "gauss_shape": _opt(float), "neighbors": _opt(int),
    "penalty": _opt(float), "hourglass_scale": _opt(float), "seed": int, "perturb": float,
    "tol": float, "max_iter": int, "load_steps": _opt(int), "out": str, "runtime": _bool,
}
_ALIASES = {"order": "orders", "p": "orders", "p_hg": "phg", "load-steps": "load_steps",
            "max-iter": "max_iter", "gauss-shape": "gauss_shape", "hourglass-scale": "hourglass_scale"}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_value(key, text):
    key = _ALIASES.get(key, key)
    if key not in _PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return key, _PARSERS[key](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        k, v = parse_value(key, val)
        out[k] = v
    return out


def build_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge file values with overrides (``None`` overrides are ignored)."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**merged).validate()


def thread_limit() -> int | None:
    """Worker cap from ``NOM_THREADS`` (unset means no cap)."""
    raw = os.environ.get("NOM_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"NOM_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"NOM_THREADS must be a positive integer, got {raw!r}")
    return n
