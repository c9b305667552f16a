"""Experiment configuration: a flat ``key = value`` document (or JSON) with per-experiment defaults.

Schema (all keys optional)::

    experiment        E1 .. E8 or custom
    seed              integer in [0, 2^64)
    n_paths           paths (E1, E3, E6) or replicas (E4, E5, E8, custom)
    horizon           time horizon of each path or replica
    dt                Euler step, 0 < dt <= 0.01
    u_bins            spatial cells, a multiple of 8
    z_bins            transverse bins (classes for finite systems)
    boundary_bins     bins on the circle at infinity
    system            boundary | type2 | cyclic:N | identity:N
    output_dir        directory for artifacts
    workers           worker processes
    atom_threshold    classifier threshold for a point mass
    support_threshold classifier threshold for full support
    ridge             Poisson inversion ridge
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, fields

from .diffusion import MAX_DT
from .errors import ConfigError

EXPERIMENTS = {
    "E1": "forward Brownian motion from the origin: hitting angles, radial law, reproducing property",
    "E2": "reverse-kernel normalization and Chapman-Kolmogorov identities by quadrature",
    "E3": "characteristic exponent of the stable foliation, forward and reverse",
    "E4": "boundary-action occupation measure: area marginal and pointed disintegration",
    "E5": "cyclic finite-permutation control: uniform classes, zero exponent, constant h",
    "E6": "forward versus reverse hitting measures of the stable foliation",
    "E7": "Poisson inversion of synthetic harmonic functions",
    "E8": "exploration of a suspension with non-injective, non-elementary holonomy (report only)",
    "custom": "occupation grid and forward exponent for the configured system (report only)",
}

_BASE = {
    "seed": 42, "n_paths": 100_000, "horizon": 100.0, "dt": 0.005, "u_bins": 64, "z_bins": 32,
    "boundary_bins": 32, "system": "boundary", "output_dir": "runs", "workers": 1,
    "atom_threshold": 0.9, "support_threshold": 0.95, "ridge": 1e-6,
}

DEFAULTS = {
    "E1": {},
    "E2": {"n_paths": 1, "horizon": 1.0},
    "E3": {"n_paths": 2000, "horizon": 50.0},
    "E4": {"n_paths": 16, "horizon": 1000.0, "dt": 0.001, "z_bins": 16},
    "E5": {"n_paths": 64, "horizon": 800.0, "dt": 0.002, "z_bins": 4, "system": "cyclic:4"},
    "E6": {"n_paths": 10_000},
    "E7": {"n_paths": 1, "boundary_bins": 64, "horizon": 1.0},
    "E8": {"n_paths": 32, "horizon": 3000.0, "dt": 0.005, "z_bins": 32, "system": "type2",
           "boundary_bins": 64},
    "custom": {"n_paths": 16, "horizon": 200.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    n_paths: int
    horizon: float
    dt: float
    u_bins: int
    z_bins: int
    boundary_bins: int
    system: str
    output_dir: str
    workers: int
    atom_threshold: float
    support_threshold: float
    ridge: float

    def to_dict(self) -> dict:
        return asdict(self)


_INT = {"seed", "n_paths", "u_bins", "z_bins", "boundary_bins", "workers"}
_FLOAT = {"horizon", "dt", "atom_threshold", "support_threshold", "ridge"}
_STR = {"experiment", "system", "output_dir"}
KNOWN_KEYS = _INT | _FLOAT | _STR
_SYSTEM_RE = re.compile(r"^(boundary|type2|(cyclic|identity):(\d+))$")


def parse_document(text: str) -> dict:
    """Parse a flat ``key = value`` document, or JSON if it starts with ``{``."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError("document", f"invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("document", "top level must be an object")
        return doc
    doc = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("document", f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in doc:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        doc[key] = value
    return doc


def _coerce(key, value):
    try:
        if isinstance(value, bool):
            raise ValueError
        if key in _INT:
            if isinstance(value, str):
                value = value.strip()
                return int(value) if re.fullmatch(r"[+-]?\d+", value) else _coerce(key, float(value))
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if key in _FLOAT:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot interpret {value!r}") from exc


def validate_config(raw: dict | None = None, experiment: str | None = None) -> ExperimentConfig:
    """Fully-defaulted, validated configuration; unknown keys are rejected."""
    raw = dict(raw or {})
    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigError(key, f"unknown key; known keys: {', '.join(sorted(KNOWN_KEYS))}")
    name = str(raw.get("experiment", experiment or "E1"))
    if name not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    values = dict(_BASE)
    values.update(DEFAULTS[name])
    for key, value in raw.items():
        values[key] = _coerce(key, value)
    values["experiment"] = name
    cfg = ExperimentConfig(**{f.name: values[f.name] for f in fields(ExperimentConfig)})
    _check(cfg)
    return cfg


def _check(cfg: ExperimentConfig) -> None:
    if not (0 < cfg.dt <= MAX_DT):
        raise ConfigError("dt", f"must lie in (0, {MAX_DT}], got {cfg.dt}")
    if cfg.n_paths < 1:
        raise ConfigError("n_paths", "must be at least 1")
    if not (0 <= cfg.seed < 2 ** 64):
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    if not cfg.horizon > 0:
        raise ConfigError("horizon", "must be positive")
    if cfg.u_bins < 8 or cfg.u_bins % 8:
        raise ConfigError("u_bins", "must be a positive multiple of 8")
    if cfg.z_bins < 1:
        raise ConfigError("z_bins", "must be at least 1")
    if cfg.boundary_bins < 3:
        raise ConfigError("boundary_bins", "must be at least 3")
    if cfg.workers < 1:
        raise ConfigError("workers", "must be at least 1")
    if not _SYSTEM_RE.match(cfg.system):
        raise ConfigError("system", "expected boundary, type2, cyclic:N or identity:N")
    m = _SYSTEM_RE.match(cfg.system)
    if m.group(3) is not None:
        n = int(m.group(3))
        if n < 1:
            raise ConfigError("system", "class count must be positive")
        if cfg.z_bins != n:
            raise ConfigError("z_bins", f"must equal the {n} classes of {cfg.system}")
    for key in ("atom_threshold", "support_threshold"):
        if not 0 < getattr(cfg, key) <= 1:
            raise ConfigError(key, "must lie in (0, 1]")
    if cfg.ridge < 0:
        raise ConfigError("ridge", "must be nonnegative")


def load_config(path=None, experiment: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = parse_document(fh.read())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if experiment is not None:
        if "experiment" in raw and raw["experiment"] != experiment:
            raise ConfigError("experiment", f"config names {raw['experiment']!r} but {experiment!r} was requested")
        raw["experiment"] = experiment
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return validate_config(raw)
