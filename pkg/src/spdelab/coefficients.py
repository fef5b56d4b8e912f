"""Closed catalog of scalar coefficients sigma, b and initial data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

COEFFICIENT_KINDS = ("constant", "affine_clamped", "sine", "cosine")


@dataclass(frozen=True)
class Coefficient:
    """Scalar function with recorded sup-norm bounds.

    Kinds and parameters:

    ``constant``        value
    ``affine_clamped``  a, s, lo, hi   ->  clip(a + s z, lo, hi)
    ``sine``            a0, a1         ->  a0 + a1 sin(z)
    ``cosine``          a0, a1         ->  a0 + a1 cos(z)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        need = {"constant": ("value",), "affine_clamped": ("a", "s", "lo", "hi"),
                "sine": ("a0", "a1"), "cosine": ("a0", "a1")}[self.kind]
        missing = [k for k in need if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind} needs parameters {missing}")
        if self.kind == "affine_clamped" and self.params["lo"] > self.params["hi"]:
            raise ValueError("affine_clamped needs lo <= hi")

    @classmethod
    def constant(cls, value: float) -> "Coefficient":
        return cls("constant", {"value": float(value)})

    @classmethod
    def sine(cls, a0: float, a1: float) -> "Coefficient":
        return cls("sine", {"a0": float(a0), "a1": float(a1)})

    @classmethod
    def cosine(cls, a0: float, a1: float) -> "Coefficient":
        return cls("cosine", {"a0": float(a0), "a1": float(a1)})

    @classmethod
    def affine_clamped(cls, a: float, s: float, lo: float, hi: float) -> "Coefficient":
        return cls("affine_clamped", {"a": float(a), "s": float(s), "lo": float(lo), "hi": float(hi)})

    def __call__(self, z):
        p = self.params
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.full_like(z, p["value"])
        if self.kind == "affine_clamped":
            return np.clip(p["a"] + p["s"] * z, p["lo"], p["hi"])
        if self.kind == "sine":
            return p["a0"] + p["a1"] * np.sin(z)
        return p["a0"] + p["a1"] * np.cos(z)

    def derivative(self, z):
        """First derivative; the clamped affine map uses 0 at its kinks."""
        p = self.params
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(z)
        if self.kind == "affine_clamped":
            y = p["a"] + p["s"] * z
            return np.where((y > p["lo"]) & (y < p["hi"]), p["s"], 0.0)
        if self.kind == "sine":
            return p["a1"] * np.cos(z)
        return -p["a1"] * np.sin(z)

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind in ("sine", "cosine"):
            return self.params["a1"] == 0.0
        return self.params["s"] == 0.0 or self.params["lo"] == self.params["hi"]

    @property
    def sup(self) -> float:
        p = self.params
        if self.kind == "constant":
            return abs(p["value"])
        if self.kind == "affine_clamped":
            if p["s"] == 0:
                return abs(min(max(p["a"], p["lo"]), p["hi"]))
            return max(abs(p["lo"]), abs(p["hi"]))
        return abs(p["a0"]) + abs(p["a1"])

    @property
    def sup_d1(self) -> float:
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine_clamped":
            return 0.0 if p["lo"] == p["hi"] else abs(p["s"])
        return abs(p["a1"])

    @property
    def sup_d2(self) -> float:
        """Sup of the second derivative (a.e. for the clamped affine map)."""
        if self.kind in ("sine", "cosine"):
            return abs(self.params["a1"])
        return 0.0

    @property
    def lower(self) -> float:
        """Largest c with |f(z)| >= c for all z (0 when f can vanish)."""
        p = self.params
        if self.kind == "constant":
            return abs(p["value"])
        if self.kind == "affine_clamped":
            if p["s"] == 0:
                return self.sup
            if p["lo"] <= 0.0 <= p["hi"]:
                return 0.0
            return min(abs(p["lo"]), abs(p["hi"]))
        return max(abs(p["a0"]) - abs(p["a1"]), 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, spec) -> "Coefficient":
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        spec = dict(spec)
        kind = spec.pop("kind")
        return cls(kind, {k: float(v) for k, v in spec.items()})


@dataclass(frozen=True)
class CoefficientPair:
    sigma: Coefficient
    b: Coefficient

    @property
    def additive(self) -> bool:
        """True when sigma is constant, so the noise enters additively."""
        return self.sigma.is_constant

    @property
    def c(self) -> float:
        return self.sigma.lower

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.to_dict(), "b": self.b.to_dict()}

    @classmethod
    def from_dict(cls, spec: dict) -> "CoefficientPair":
        return cls(Coefficient.from_dict(spec.get("sigma", 1.0)),
                   Coefficient.from_dict(spec.get("b", 0.0)))


# -- initial data -----------------------------------------------------------------

DATA_KINDS = ("constant", "mode", "bump")


@dataclass(frozen=True)
class Profile:
    """Bounded continuous function on R^d.

    ``constant``  value
    ``mode``      amplitude * cos(2 pi freq . x)
    ``bump``      amplitude * (1 + cos(pi |x - center| / radius)) / 2 inside the ball
    """

    kind: str = "constant"
    params: dict = field(default_factory=lambda: {"value": 0.0})

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValueError(f"unknown initial-data kind {self.kind!r}")
        if self.kind == "bump" and self.params.get("radius", 0) <= 0:
            raise ValueError("bump needs a positive radius")

    @classmethod
    def zero(cls) -> "Profile":
        return cls("constant", {"value": 0.0})

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls("constant", {"value": float(value)})

    @classmethod
    def mode(cls, freq, amplitude: float = 1.0) -> "Profile":
        return cls("mode", {"freq": tuple(np.atleast_1d(freq).astype(float)),
                            "amplitude": float(amplitude)})

    @classmethod
    def bump(cls, center, radius: float, amplitude: float = 1.0) -> "Profile":
        return cls("bump", {"center": tuple(np.atleast_1d(center).astype(float)),
                            "radius": float(radius), "amplitude": float(amplitude)})

    def __call__(self, x, dim: int = 1):
        """Evaluate at points x: shape (...) when dim = 1, (..., dim) otherwise."""
        p = self.params
        x = np.asarray(x, dtype=float)
        shape = x.shape if dim == 1 else x.shape[:-1]
        if self.kind == "constant":
            return np.full(shape, p["value"])
        if self.kind == "mode":
            freq = np.zeros(dim)
            given = np.asarray(p["freq"], dtype=float)[:dim]
            freq[: given.size] = given
            phase = x * freq[0] if dim == 1 else x @ freq
            return p["amplitude"] * np.cos(2 * math.pi * phase)
        c = np.asarray(p["center"], dtype=float)
        if dim > 1 and c.size < dim:
            c = np.concatenate([c, np.zeros(dim - c.size)])
        r = np.abs(x - c[0]) if dim == 1 else np.linalg.norm(x - c[:dim], axis=-1)
        inside = np.minimum(r / p["radius"], 1.0)
        return np.where(r < p["radius"], 0.5 * p["amplitude"] * (1 + np.cos(math.pi * inside)), 0.0)

    @property
    def sup(self) -> float:
        p = self.params
        if self.kind == "constant":
            return abs(p["value"])
        return abs(p["amplitude"])

    def support_radius(self) -> float:
        """Radius of the support around its center (inf unless a bump)."""
        return self.params["radius"] if self.kind == "bump" else math.inf

    def antiderivative_1d(self, x, length: float | None = None):
        """A primitive of the d = 1 profile, L-periodically extended if ``length``."""
        p = self.params
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return p["value"] * x
        if self.kind == "mode":
            f = p["freq"][0]
            if f == 0:
                return p["amplitude"] * x
            return p["amplitude"] * np.sin(2 * math.pi * f * x) / (2 * math.pi * f)
        c, r, A = p["center"][0], p["radius"], p["amplitude"]
        if length is None:
            n = np.zeros_like(x)
            y = x - c
        else:
            if 2 * r > length:
                raise ValueError("bump wider than the torus")
            n = np.floor((x - c + 0.5 * length) / length)
            y = x - n * length - c
        inside = np.clip(y, -r, r)
        prim = 0.5 * A * ((inside + r) + (r / math.pi) * np.sin(math.pi * inside / r))
        return n * (A * r) + prim

    def periodic(self, x, length: float, dim: int = 1):
        """Evaluate the L-periodic extension (bumps are wrapped around the center)."""
        if self.kind != "bump":
            return self(x, dim)
        c = np.zeros(dim)
        given = np.asarray(self.params["center"], dtype=float)[:dim]
        c[: given.size] = given
        c = c[0] if dim == 1 else c
        y = (np.asarray(x, dtype=float) - c + 0.5 * length) % length - 0.5 * length + c
        return self(y, dim)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, spec) -> "Profile":
        if spec is None:
            return cls.zero()
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        spec = dict(spec)
        kind = spec.pop("kind", "constant")
        if kind == "constant":
            return cls.constant(spec.get("value", 0.0))
        if kind == "mode":
            return cls.mode(spec["freq"], spec.get("amplitude", 1.0))
        return cls.bump(spec["center"], spec["radius"], spec.get("amplitude", 1.0))


@dataclass(frozen=True)
class InitialData:
    u0: Profile = field(default_factory=Profile.zero)
    v0: Profile = field(default_factory=Profile.zero)

    def to_dict(self) -> dict:
        return {"u0": self.u0.to_dict(), "v0": self.v0.to_dict()}

    @classmethod
    def from_dict(cls, spec: dict | None) -> "InitialData":
        spec = spec or {}
        return cls(Profile.from_dict(spec.get("u0")), Profile.from_dict(spec.get("v0")))
