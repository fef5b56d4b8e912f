"""Experiment configuration files (TOML).

Example::

    [operator]
    kind = "heat"          # heat | wave | damped_wave
    dim = 1

    [measure]
    kind = "white"         # white | riesz (beta) | exponential (ell) | atoms
    # dim defaults to the operator dimension

    [grid]
    length = 4.0
    modes = 64
    horizon = 0.5
    steps = 64

    [coefficients]
    sigma = { kind = "sine", a0 = 1.0, a1 = 0.5 }
    b = 0.0                # a number means a constant coefficient

    [initial]
    u0 = { kind = "constant", value = 0.0 }

    [observation]
    t = 0.5                # defaults to the grid horizon
    x = 0.0

    [run]
    samples = 100000
    seed = 1
    bandwidth_factor = 1.0

    [malliavin]            # optional
    deltas = [0.015625, 0.03125, 0.0625, 0.125, 0.25, 0.5]
    paths = 1000

The config hash covers everything except ``run.seed``, ``run.samples``,
``run.out`` and ``run.threads``, so runs that differ only in those can be
pooled.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientPair, InitialData
from .fundamental import FundamentalSolution
from .noise import GridSpec
from .phi import InadmissibleMeasure
from .spectral import SpectralMeasure, is_admissible

TABLES = ("operator", "measure", "grid", "coefficients", "initial", "observation", "run",
          "malliavin", "phi")
UNHASHED_RUN_KEYS = ("seed", "samples", "out", "threads")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    operator: FundamentalSolution
    measure: SpectralMeasure
    grid: GridSpec | None
    coeffs: CoefficientPair
    data: InitialData
    t_obs: float | None
    x_obs: float | tuple
    samples: int = 10_000
    seed: int = 0
    out: str | None = None
    threads: int = 1
    bandwidth_factor: float = 1.0
    extra: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Normalized dict of every result-affecting field."""
        return {
            "operator": self.operator.to_dict(),
            "measure": self.measure.to_dict(),
            "grid": self.grid.to_dict() if self.grid else None,
            "coefficients": self.coeffs.to_dict(),
            "initial": self.data.to_dict(),
            "observation": {"t": self.t_obs, "x": _listify(self.x_obs)},
            "run": {"bandwidth_factor": self.bandwidth_factor},
            **{k: v for k, v in sorted(self.extra.items())},
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        out = self.canonical()
        out["run"] = {**out["run"], "samples": self.samples, "seed": self.seed}
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _listify(x):
    return list(x) if isinstance(x, tuple) else x


def _table(raw: dict, name: str) -> dict:
    val = raw.get(name, {})
    if not isinstance(val, dict):
        raise ConfigError(f"[{name}] must be a table")
    return val


def from_dict(raw: dict, check_admissible: bool = True) -> ExperimentConfig:
    """Build and validate a config from a parsed TOML document."""
    unknown = set(raw) - set(TABLES)
    if unknown:
        raise ConfigError(f"unknown tables {sorted(unknown)}")
    try:
        op = _table(raw, "operator")
        if "kind" not in op:
            raise ConfigError("[operator] needs a kind")
        sol = FundamentalSolution.from_dict(op)
        ms = dict(_table(raw, "measure"))
        if "kind" not in ms:
            raise ConfigError("[measure] needs a kind")
        ms.setdefault("dim", sol.dim)
        mu = SpectralMeasure.from_dict(ms)
        gt = _table(raw, "grid")
        grid = None
        if gt:
            grid = GridSpec(sol.dim, float(gt["length"]), int(gt["modes"]), float(gt["horizon"]),
                            int(gt["steps"]))
        coeffs = CoefficientPair.from_dict(_table(raw, "coefficients"))
        data = InitialData.from_dict(_table(raw, "initial"))
        obs = _table(raw, "observation")
        run = _table(raw, "run")
        extra = {k: raw[k] for k in ("malliavin", "phi") if k in raw}
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, NotImplementedError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc

    if mu.dim != sol.dim:
        raise ConfigError(f"measure dimension {mu.dim} differs from operator dimension {sol.dim}")
    t_obs = obs.get("t", grid.horizon if grid else None)
    x_obs = obs.get("x", 0.0)
    x_obs = tuple(float(v) for v in x_obs) if isinstance(x_obs, list) else float(x_obs)
    if grid is not None:
        if sol.kind != "heat" and grid.dim != 1:
            raise ConfigError(f"{sol.kind} stepping is supported for d = 1 only")
        if t_obs is None or not 0 < t_obs <= grid.horizon * (1 + 1e-12):
            raise ConfigError("observation time must satisfy 0 < t* <= T")
        try:
            grid.time_index(float(t_obs))
            xs = x_obs if isinstance(x_obs, tuple) else (x_obs,) * grid.dim
            if len(xs) != grid.dim:
                raise ValueError(f"observation point needs {grid.dim} coordinates")
            for xi in xs:
                grid.index_of(xi)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    samples = int(run.get("samples", 10_000))
    seed = int(run.get("seed", 0))
    if samples < 1:
        raise ConfigError("run.samples must be positive")
    if not 0 <= seed < 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    if check_admissible and not is_admissible(mu):
        raise InadmissibleMeasure(f"{mu.kind} measure in d = {mu.dim} fails the Dalang condition")
    return ExperimentConfig(sol, mu, grid, coeffs, data,
                            None if t_obs is None else float(t_obs), x_obs, samples, seed,
                            run.get("out"), int(run.get("threads", 1)),
                            float(run.get("bandwidth_factor", 1.0)), extra)


def loads(text: str, **kw) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    return from_dict(raw, **kw)


def load(path, **kw) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return loads(p.read_text(), **kw)


def dumps(cfg: ExperimentConfig) -> str:
    """Serialize back to TOML (inline tables for catalog entries)."""
    d = cfg.to_dict()
    lines = []
    for name, table in d.items():
        if table is None:
            continue
        lines.append(f"[{name}]")
        for k, v in table.items():
            if v is None:
                continue
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    raise TypeError(f"cannot serialize {type(v).__name__}")
