"""Fundamental solutions of the heat, wave and damped-wave operators.

Operators are normalized with unit diffusivity and unit wave speed:

    heat         d/dt - Laplacian
    wave         d^2/dt^2 - Laplacian                 (d in {1, 2, 3})
    damped_wave  d^2/dt^2 + d/dt - Laplacian

With the Fourier convention of :mod:`spdelab.spectral`, the transform of
Gamma(t) at frequency xi solves a constant-coefficient ODE in t with
a = 4 pi^2 |xi|^2:

    heat         y' = -a y,            y(0) = 1
    wave         y'' = -a y,           y(0) = 0, y'(0) = 1
    damped_wave  y'' + y' = -a y,      y(0) = 0, y'(0) = 1

Frequencies are passed as radii |xi| because every operator is isotropic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

OPERATORS = ("heat", "wave", "damped_wave")

_TWO_PI = 2.0 * math.pi


def _sin_over(q, t):
    """sin(sqrt(q) t) / sqrt(q), continued to q <= 0 as sinh / t."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    q, t = np.broadcast_arrays(q, t)
    out = np.empty(q.shape)
    x = q * t * t
    small = np.abs(x) < 1e-6
    out[small] = t[small] * (1.0 - x[small] / 6.0 + x[small] ** 2 / 120.0)
    pos = ~small & (q > 0)
    w = np.sqrt(q[pos])
    out[pos] = np.sin(w * t[pos]) / w
    neg = ~small & (q < 0)
    k = np.sqrt(-q[neg])
    out[neg] = np.sinh(k * t[neg]) / k
    return out


@dataclass(frozen=True)
class FundamentalSolution:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in OPERATORS:
            raise ValueError(f"unknown operator {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "wave" and self.dim > 3:
            raise ValueError("the wave fundamental solution is a measure only for d <= 3")

    @property
    def order(self) -> int:
        """Order of the operator in time."""
        return 1 if self.kind == "heat" else 2

    # -- Fourier side ---------------------------------------------------------

    def fourier_transform(self, t, xi):
        """F Gamma(t)(xi) for t >= 0 and radial frequency |xi|."""
        t = np.asarray(t, dtype=float)
        a = (_TWO_PI * np.asarray(xi, dtype=float)) ** 2
        if self.kind == "heat":
            return np.exp(-a * t)
        if self.kind == "wave":
            return _sin_over(a, t)
        return np.exp(-0.5 * t) * _sin_over(a - 0.25, t)

    def mode_ode_solve(self, t: float, xi: float, rtol: float = 1e-12) -> float:
        """Integrate the per-mode ODE numerically; ground truth for tests."""
        a = (_TWO_PI * float(xi)) ** 2
        if t == 0:
            return 1.0 if self.kind == "heat" else 0.0
        if self.kind == "heat":
            rhs = lambda s, y: -a * y
            y0 = [1.0]
        else:
            damp = 1.0 if self.kind == "damped_wave" else 0.0
            rhs = lambda s, y: [y[1], -a * y[0] - damp * y[1]]
            y0 = [0.0, 1.0]
        sol = integrate.solve_ivp(rhs, (0.0, float(t)), y0, method="DOP853",
                                  rtol=rtol, atol=1e-30)
        if not sol.success:
            raise RuntimeError(f"mode ODE failed at t={t}, xi={xi}: {sol.message}")
        return float(sol.y[0, -1])

    def mode_energy(self, t, xi):
        """int_0^t |F Gamma(s)(xi)|^2 ds, vectorized in xi."""
        t = float(t)
        r = np.asarray(xi, dtype=float)
        a = (_TWO_PI * r) ** 2
        if t == 0:
            return np.zeros_like(a)
        if self.kind == "heat":
            out = np.empty_like(a)
            z = a == 0
            out[z] = t
            out[~z] = -np.expm1(-2.0 * a[~z] * t) / (2.0 * a[~z])
            return out
        if self.kind == "wave":
            out = np.empty_like(a)
            w = np.sqrt(a)
            small = w * t < 1e-3
            ws = w[small]
            out[small] = t**3 / 3.0 - ws**2 * t**5 / 15.0
            wb = w[~small]
            out[~small] = (t / 2.0 - np.sin(2.0 * wb * t) / (4.0 * wb)) / wb**2
            return out
        return _damped_energy(a, t)

    def mode_energy_envelope(self, t, xi):
        """Non-oscillating large-|xi| part of :meth:`mode_energy`."""
        a = (_TWO_PI * np.asarray(xi, dtype=float)) ** 2
        if self.kind == "heat":
            return self.mode_energy(t, xi)
        if self.kind == "wave":
            return t / (2.0 * a)
        q = a - 0.25
        return (0.5 * (1.0 - math.exp(-t)) - 0.5 / (1.0 + 4.0 * q)) / q

    # -- physical side ------------------------------------------------------

    def total_mass(self, t):
        """Gamma(t, R^d)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "heat":
            return np.ones_like(t)
        if self.kind == "wave":
            return t.copy()
        return -np.expm1(-t)

    def sup_mass(self, horizon: float) -> float:
        """sup_{0 <= t <= T} Gamma(t, R^d); every mass here is nondecreasing."""
        return float(self.total_mass(horizon))

    def real_kernel(self, t, x):
        """Pointwise density of Gamma(t); heat in any d, wave in d = 1."""
        x = np.asarray(x, dtype=float)
        if self.kind == "heat":
            if t <= 0:
                raise ValueError("the heat kernel is a Dirac mass at t = 0")
            r2 = x * x if self.dim == 1 else np.sum(x * x, axis=-1)
            return (4.0 * math.pi * t) ** (-self.dim / 2) * np.exp(-r2 / (4.0 * t))
        if self.kind == "wave" and self.dim == 1:
            return np.where(np.abs(x) < t, 0.5, 0.0)
        raise NotImplementedError(
            f"{self.kind} in d={self.dim} has no pointwise kernel; use fourier_transform"
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}

    @classmethod
    def from_dict(cls, spec: dict) -> "FundamentalSolution":
        return cls(spec["kind"], int(spec.get("dim", 1)))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _damped_energy(a, t):
    """int_0^t exp(-s) S(a - 1/4, s)^2 ds for the damped-wave mode."""
    q = a - 0.25
    out = np.empty_like(a)
    near = np.abs(q) * t * t < 1e-2
    if np.any(near):
        # no cancellation-free closed form near the critical damping frequency
        s = 0.5 * t * (_GL_NODES + 1.0)
        y = np.exp(-0.5 * s)[None, :] * _sin_over(q[near][:, None], s[None, :])
        out[near] = 0.5 * t * (y**2) @ _GL_WEIGHTS
    under = ~near & (q > 0)
    if np.any(under):
        w = np.sqrt(q[under])
        c = (np.exp(-t) * (-np.cos(2 * w * t) + 2 * w * np.sin(2 * w * t)) + 1.0) / (1.0 + 4 * w * w)
        out[under] = (0.5 * (1.0 - math.exp(-t)) - 0.5 * c) / (w * w)
    over = ~near & (q < 0)
    if np.any(over):
        k = np.sqrt(-q[over])
        lo = 1.0 - 2.0 * k
        hi = 1.0 + 2.0 * k
        with np.errstate(invalid="ignore", divide="ignore"):
            first = np.where(lo > 1e-12, -np.expm1(-lo * t) / np.where(lo > 1e-12, lo, 1.0), t)
        ch = 0.5 * (first - np.expm1(-hi * t) / hi)
        out[over] = (0.5 * ch - 0.5 * (1.0 - math.exp(-t))) / (k * k)
    return out
