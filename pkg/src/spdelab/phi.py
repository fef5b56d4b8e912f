"""Variance functional Phi, drift functional Psi and gamma certificates.

    Phi(t) = int_0^t int |F Gamma(s)(xi)|^2 mu(dxi) ds
    Psi(t) = int_0^t Gamma(r, R^d) dr

Phi is computed frequency-then-time: the s-integral of |F Gamma|^2 is
analytic per mode (``FundamentalSolution.mode_energy``), leaving a single
radial quadrature.  ``phi_nested`` does the naive double integral and is
kept as an independent cross-check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .fundamental import FundamentalSolution
from .spectral import (
    IndeterminateIntegral,
    SpectralMeasure,
    is_admissible,
    sphere_area,
)

PHI_RTOL_FLAG = 1e-4


class InadmissibleMeasure(ValueError):
    """Raised when Phi is requested for a measure failing the Dalang test."""


def _check(mu: SpectralMeasure, sol: FundamentalSolution):
    if mu.dim != sol.dim:
        raise ValueError(f"measure dimension {mu.dim} != operator dimension {sol.dim}")
    verdict = is_admissible(mu)
    if not verdict.admissible:
        raise InadmissibleMeasure(
            f"{mu.kind} in d={mu.dim} fails the Dalang condition (integral = {verdict.value})"
        )


def phi_closed_form(mu: SpectralMeasure, sol: FundamentalSolution, t: float):
    """Phi(t) from the analytic table, or None when no entry applies."""
    t = float(t)
    if t == 0:
        return 0.0
    if mu.kind == "atoms":
        pts = np.asarray([p for p, _ in mu.atoms], dtype=float).reshape(len(mu.atoms), -1)
        masses = np.asarray([m for _, m in mu.atoms], dtype=float)
        radii = np.linalg.norm(pts, axis=1)
        return float(masses @ sol.mode_energy(t, radii))
    if mu.kind == "white" and mu.dim == 1:
        if sol.kind == "heat":
            return math.sqrt(t / (2.0 * math.pi))
        if sol.kind == "wave":
            return t * t / 4.0
    if mu.kind == "riesz" and sol.kind == "heat":
        b = mu.beta
        return (sphere_area(mu.dim) * special.gamma(b / 2) * (8 * math.pi**2) ** (-b / 2)
                * t ** (1 - b / 2) / (2 - b))
    return None


def _quad(fn, a, b, **kw):
    opts = dict(limit=2000, epsabs=0.0, epsrel=1e-10)
    opts.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(fn, a, b, **opts)
        except integrate.IntegrationWarning as exc:
            raise IndeterminateIntegral(str(exc)) from exc


def _tail_quad(fn, tail, **kw):
    """int_tail^inf fn for algebraically decaying fn, via r = tail / u on (0, 1]."""
    return _quad(lambda u: fn(tail / u) * tail / (u * u) if u > 0 else 0.0, 0.0, 1.0, **kw)


def _radial_split(sol: FundamentalSolution, t: float):
    """Radii splitting the frequency axis into origin, bulk and tail pieces."""
    head = min(1.0, 0.25 / t)
    tail = max(40.0 / t, 40.0) if sol.kind != "heat" else math.inf
    return head, tail


def _energy_radial_integral(mu: SpectralMeasure, sol: FundamentalSolution, t: float,
                            lo: float = 0.0):
    """omega_d int_lo^inf r^(d-1) rho(r) E(t, r) dr with its error estimate."""
    alg = mu._alg()
    omega = sphere_area(mu.dim)

    def smooth(r):
        return float(mu.radial_smooth(r) * sol.mode_energy(t, np.array([r]))[0])

    head, tail = _radial_split(sol, t)
    head = max(head, lo)
    total = err = 0.0
    if lo == 0.0:
        if alg == 0:
            v, e = _quad(smooth, 0.0, head)
        else:
            v, e = _quad(smooth, 0.0, head, weight="alg", wvar=(alg, 0.0))
        total, err = total + v, err + e

    def full(r):
        return smooth(r) * r**alg

    if math.isinf(tail):
        v, e = _quad(full, head, np.inf)
        return omega * (total + v), omega * (err + e)
    if tail <= head:
        tail = 2 * head
    v, e = _quad(full, head, tail)
    total, err = total + v, err + e

    def env(r):
        return float(mu.radial_smooth(r) * sol.mode_energy_envelope(t, np.array([r]))[0]) * r**alg

    v, e = _tail_quad(env, tail)
    total, err = total + v, err + e
    if sol.kind == "wave":
        # exact oscillating remainder: -sin(2 w t) / (4 w^3), w = 2 pi r
        def osc(r):
            return -float(mu.radial_smooth(r)) * r**alg / (4.0 * (2 * math.pi * r) ** 3)

        scale = abs(_quad(osc, tail, 2 * tail)[0]) + 1e-300
        try:
            v, e = _quad(osc, tail, np.inf, weight="sin", wvar=4 * math.pi * t, limlst=200,
                         epsabs=1e-10 * scale)
        except IndeterminateIntegral:
            # |remainder| <= int |osc|; keep it as error instead
            v = 0.0
            e = -_tail_quad(osc, tail)[0]
        total, err = total + v, err + e
    else:
        # damped remainder is O(e^-t / r^3); bound it into the error estimate
        bound = math.exp(-t) * _tail_quad(
            lambda r: float(mu.radial_smooth(r)) * r**alg / (2 * math.pi * r) ** 3, tail)[0]
        err += bound
    return omega * total, omega * err


def phi_quadrature(mu: SpectralMeasure, sol: FundamentalSolution, t: float):
    """(value, error estimate) of Phi(t) by radial quadrature of the mode energy."""
    t = float(t)
    if t == 0:
        return 0.0, 0.0
    if mu.kind == "atoms":
        return phi_closed_form(mu, sol, t), 0.0
    return _energy_radial_integral(mu, sol, t)


def phi(mu: SpectralMeasure, sol: FundamentalSolution, t: float, method: str = "auto") -> float:
    """Phi(t) for an admissible measure.

    Parameters
    ----------
    method : {"auto", "closed", "quadrature"}
        ``auto`` prefers the analytic table and falls back to quadrature.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    _check(mu, sol)
    if method in ("auto", "closed"):
        val = phi_closed_form(mu, sol, t)
        if val is not None:
            return val
        if method == "closed":
            raise ValueError(f"no closed form for {sol.kind}/{mu.kind} in d={mu.dim}")
    return phi_quadrature(mu, sol, t)[0]


def phi_tail(mu: SpectralMeasure, sol: FundamentalSolution, t: float, cutoff: float) -> float:
    """int_0^t int_{|xi| > cutoff} |F Gamma(s)(xi)|^2 mu(dxi) ds."""
    _check(mu, sol)
    if t == 0:
        return 0.0
    if mu.kind == "atoms":
        pts = np.asarray([p for p, _ in mu.atoms], dtype=float).reshape(len(mu.atoms), -1)
        masses = np.asarray([m for _, m in mu.atoms], dtype=float)
        radii = np.linalg.norm(pts, axis=1)
        keep = radii > cutoff
        return float(masses[keep] @ sol.mode_energy(t, radii[keep]))
    return _energy_radial_integral(mu, sol, float(t), lo=float(cutoff))[0]


def phi_nested(mu: SpectralMeasure, sol: FundamentalSolution, t: float, a: float = 0.0,
               epsrel: float = 1e-9) -> float:
    """int_a^t int |F Gamma(s)(xi)|^2 mu(dxi) ds by nested quadrature (s outer)."""
    _check(mu, sol)
    if t <= a:
        return 0.0
    alg = mu._alg()
    omega = sphere_area(mu.dim)

    def inner(s):
        if s <= 0:
            return 0.0 if sol.kind != "heat" else math.inf

        def smooth(r):
            return float(mu.radial_smooth(r) * sol.fourier_transform(s, r) ** 2)

        if mu.kind == "atoms":
            return float(sum(m * sol.fourier_transform(s, np.linalg.norm(np.atleast_1d(p))) ** 2
                             for p, m in mu.atoms))
        if sol.kind == "heat":
            head = max(min(1.0, 0.25 / s), 0.2)
        else:
            # start the oscillatory tail a quarter period in
            head = max(0.25 / s, 0.2)
        near = min(head, 1.0)
        if alg == 0:
            v = _quad(smooth, 0.0, near, epsrel=epsrel)[0]
        else:
            v = _quad(smooth, 0.0, near, weight="alg", wvar=(alg, 0.0), epsrel=epsrel)[0]
        if head > near:
            v += _quad(lambda r: smooth(r) * r**alg, near, head, epsrel=epsrel)[0]
        if sol.kind == "wave":
            # sin^2 = (1 - cos) / 2 on the tail, cosine part by QAWF
            base = lambda r: float(mu.radial_smooth(r)) * r**alg / (2 * (2 * math.pi * r) ** 2)
            flat = _tail_quad(base, head, epsrel=epsrel)[0]
            v += flat - _quad(base, head, np.inf, weight="cos", wvar=4 * math.pi * s,
                              limlst=200, epsabs=max(1e-300, epsrel * flat))[0]
        elif sol.kind == "damped_wave":
            # substitute w = sqrt(4 pi^2 r^2 - 1/4) so the tail oscillates as cos(2 w s)
            w0 = math.sqrt(4 * math.pi**2 * head**2 - 0.25)

            def base(w):
                r = math.sqrt(w * w + 0.25) / (2 * math.pi)
                jac = w / (4 * math.pi**2 * r)
                return float(mu.radial_smooth(r)) * r**alg * math.exp(-s) / (2 * w * w) * jac

            flat = _tail_quad(base, w0, epsrel=epsrel)[0]
            v += flat - _quad(base, w0, np.inf, weight="cos", wvar=2 * s,
                              limlst=200, epsabs=max(1e-300, epsrel * flat))[0]
        else:
            v += _quad(lambda r: smooth(r) * r**alg, head, np.inf, epsrel=epsrel)[0]
        return omega * v

    return _quad(inner, a, t, epsrel=epsrel * 10)[0]


def psi(sol: FundamentalSolution, t: float) -> float:
    """Psi(t) = int_0^t Gamma(r, R^d) dr."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if sol.kind == "heat":
        return float(t)
    if sol.kind == "wave":
        return 0.5 * t * t
    return float(t + math.expm1(-t))


@dataclass
class PhiProfile:
    """Tabulated Phi(t) with per-point error estimates."""

    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    method: str
    psi: np.ndarray = field(default=None)

    @property
    def flagged(self) -> np.ndarray:
        rel = np.where(self.values > 0, self.errors / np.maximum(self.values, 1e-300), 0.0)
        return rel > PHI_RTOL_FLAG

    def is_increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0))

    def rows(self):
        for i, t in enumerate(self.times):
            yield (float(t), float(self.values[i]), float(self.psi[i]), self.method,
                   float(self.errors[i]))


def phi_profile(mu: SpectralMeasure, sol: FundamentalSolution, times, method: str = "auto"):
    """Evaluate Phi and Psi on a time grid.

    Points are independent, so the result does not depend on evaluation order.
    """
    _check(mu, sol)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-negative and strictly increasing")
    closed = method in ("auto", "closed") and phi_closed_form(mu, sol, 1.0) is not None
    if method == "closed" and not closed:
        raise ValueError(f"no closed form for {sol.kind}/{mu.kind} in d={mu.dim}")
    vals = np.empty_like(times)
    errs = np.zeros_like(times)
    for i, t in enumerate(times):
        if closed:
            vals[i] = phi_closed_form(mu, sol, t)
        else:
            vals[i], errs[i] = phi_quadrature(mu, sol, t)
    ps = np.array([psi(sol, t) for t in times])
    return PhiProfile(times, vals, errs, "closed-form" if closed else "quadrature", ps)


def loglog_slope(times, values) -> float:
    """Least-squares slope of log(values) against log(times)."""
    x = np.log(np.asarray(times, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def gamma_grid(n: int = 40, lo: float = 1e-4) -> np.ndarray:
    """Log-spaced tau grid on [lo, 1] for :func:`certify_gamma`."""
    return np.logspace(math.log10(lo), 0.0, n)


@dataclass
class GammaCertificate:
    gamma: float
    constant: float
    taus: np.ndarray
    ratios: np.ndarray
    slope: float
    valid: bool
    diagnostic: str = ""

    def __bool__(self):
        return self.valid

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "C": self.constant, "slope": self.slope,
                "valid": self.valid, "points": int(len(self.taus)),
                "diagnostic": self.diagnostic}


SLOPE_TOLERANCE = 0.01


def certify_gamma(profile: PhiProfile, gamma: float) -> GammaCertificate:
    """Numerical evidence for Phi(tau) >= C tau^gamma on (0, 1].

    The certificate is valid when C = min Phi/tau^gamma over the grid is
    positive and log(Phi/tau^gamma) does not decrease toward tau -> 0 on
    the smallest decade of the grid.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    t = np.asarray(profile.times, dtype=float)
    keep = (t > 0) & (t <= 1.0)
    taus = t[keep]
    vals = np.asarray(profile.values, dtype=float)[keep]
    if taus.size < 32:
        raise ValueError(f"need >= 32 grid points in (0, 1], got {taus.size}")
    logs = np.log10(taus)
    if not np.allclose(np.diff(logs), logs[1] - logs[0], rtol=1e-6, atol=1e-9):
        raise ValueError("tau grid must be log-spaced")
    ratios = vals / taus**gamma
    C = float(ratios.min())
    decade = taus <= taus[0] * 10.0 * (1 + 1e-12)
    if decade.sum() < 3 or np.any(ratios[decade] <= 0):
        slope = math.inf
    else:
        slope = loglog_slope(taus[decade], ratios[decade])
    valid = C > 0 and slope <= SLOPE_TOLERANCE
    diag = ""
    if not valid:
        diag = (f"Phi/tau^{gamma:g} decreases toward 0 (slope {slope:.4f} on the smallest decade)"
                if C > 0 else "non-positive ratio on the grid")
    return GammaCertificate(float(gamma), C, taus, ratios, float(slope), bool(valid), diag)
