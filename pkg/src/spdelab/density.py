"""Density estimation for u(t, x) and Gaussian envelope checks.

The upper envelope tested is

    p(z) <= c1 Phi^{-1/2} exp(-((|z - i0| - c3 T)_+)^2 / (c2 Phi)),

with c3 = ||b||_inf sup_{t <= T} Gamma(t, R^d) fixed and (c1, c2) searched on
log grids.  All checks use the CI-widened estimate (p_hat - ci for upper
bounds, p_hat + ci for lower bounds), so Monte Carlo noise cannot create a
violation on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

Z95 = 1.959963984540054
MIN_BINS = 64


class PointMassError(ValueError):
    """Samples have zero variance, so there is no density to estimate."""


class InsufficientTailMass(ValueError):
    """Too few well-resolved tail bins for a decay fit."""


@dataclass
class DensityEstimate:
    centers: np.ndarray
    density: np.ndarray
    ci: np.ndarray
    bandwidth: float
    n: int
    mean: float
    std: float

    @property
    def spacing(self) -> float:
        return float(self.centers[1] - self.centers[0])

    def integral(self) -> float:
        return float(self.density.sum() * self.spacing)


def silverman_bandwidth(samples) -> float:
    """0.9 min(std, IQR / 1.34) n^(-1/5)."""
    x = np.asarray(samples, dtype=float)
    s = x.std(ddof=1)
    iqr = stats.iqr(x)
    a = min(s, iqr / 1.34) if iqr > 0 else s
    return 0.9 * a * x.size ** (-0.2)


def _binned_kde(x, lo, spacing, nbins, bw):
    """Linear-binned Gaussian KDE evaluated at the bin centers."""
    pos = (x - lo) / spacing - 0.5
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    counts = np.zeros(nbins + 2)
    np.add.at(counts, np.clip(i0, -1, nbins) + 1, 1.0 - frac)
    np.add.at(counts, np.clip(i0 + 1, -1, nbins) + 1, frac)
    counts = counts[1:-1]
    half = int(math.ceil(8 * bw / spacing))
    k = np.arange(-half, half + 1) * spacing
    kern = np.exp(-0.5 * (k / bw) ** 2) / (bw * math.sqrt(2 * math.pi))
    return np.maximum(signal.fftconvolve(counts, kern, mode="same"), 0.0) / x.size


def estimate_density(samples, bandwidth_factor: float = 1.0, bins: int = 256,
                     min_samples: int = 10_000, max_bins: int = 1 << 22) -> DensityEstimate:
    """Gaussian KDE on a uniform grid spanning [min - 4 s, max + 4 s].

    The grid is refined beyond ``bins`` until its spacing is at most a
    quarter bandwidth, which keeps the linear binning error negligible.
    The 95% half-width is 1.96 sqrt(Var K_h(z - X) / n), with the variance
    estimated from the same samples.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    s = float(x.std(ddof=1))
    if s == 0.0 or np.ptp(x) == 0.0:
        raise PointMassError(f"all samples equal {x[0]!r}: point mass, no density")
    bw = bandwidth_factor * silverman_bandwidth(x)
    lo, hi = x.min() - 4 * s, x.max() + 4 * s
    nb = max(int(bins), MIN_BINS)
    need = int(math.ceil((hi - lo) / (0.25 * bw)))
    if need > nb:
        nb = min(1 << int(math.ceil(math.log2(need))), max_bins)
    spacing = (hi - lo) / nb
    centers = lo + spacing * (np.arange(nb) + 0.5)
    p = _binned_kde(x, lo, spacing, nb, bw)
    # E K_h^2 = K_{h / sqrt 2} / (2 sqrt(pi) h)
    k2 = _binned_kde(x, lo, spacing, nb, bw / math.sqrt(2)) / (2 * math.sqrt(math.pi) * bw)
    var = np.maximum(k2 - p * p, 0.0)
    ci = Z95 * np.sqrt(var / x.size)
    return DensityEstimate(centers, p, ci, float(bw), int(x.size), float(x.mean()), s)


# -- upper envelope -----------------------------------------------------------------


def envelope(z, c1, c2, c3T, phi, i0):
    d = np.maximum(np.abs(np.asarray(z) - i0) - c3T, 0.0)
    return c1 / math.sqrt(phi) * np.exp(-d * d / (c2 * phi))


def envelope_holds(est: DensityEstimate, c1, c2, c3T, phi, i0) -> int:
    """Number of bins where p_hat - ci exceeds the envelope."""
    lower = est.density - est.ci
    return int(np.sum(lower > envelope(est.centers, c1, c2, c3T, phi, i0) * (1 + 1e-12)))


C1_GRID = np.logspace(-3, 2, 2001)
C2_GRID = np.logspace(-2, 2, 1601)


@dataclass
class EnvelopeFit:
    c1: float
    c2: float
    c3: float
    horizon: float
    phi: float
    i0: float
    violations: int
    status: str
    slack: np.ndarray = field(repr=False)
    bound: np.ndarray = field(repr=False)
    worst_bin: float | None = None

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "phi": self.phi, "i0": self.i0,
                "violations": self.violations, "status": self.status,
                "worst_bin": self.worst_bin}


def drift_constant(coeffs, sol, horizon: float) -> float:
    """c3 = ||b||_inf sup_{t <= T} Gamma(t, R^d)."""
    return coeffs.b.sup * sol.sup_mass(horizon)


def verify_upper_envelope(est: DensityEstimate, phi: float, i0: float, c3: float,
                          horizon: float, c1_grid=C1_GRID, c2_grid=C2_GRID) -> EnvelopeFit:
    """Smallest-mass (c1, c2) on the grids with zero CI-widened violations.

    For each c2 the least admissible c1 is computed in closed form and
    rounded up to ``c1_grid``; among feasible pairs the one with the least
    envelope mass c1 (2 c3 T / sqrt(phi) + sqrt(pi c2)) is returned.
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    c3T = c3 * horizon
    z = est.centers
    lower = est.density - est.ci
    keep = lower > 0
    d = np.maximum(np.abs(z[keep] - i0) - c3T, 0.0)
    c1_grid = np.sort(np.asarray(c1_grid, dtype=float))
    best = None
    for c2 in np.asarray(c2_grid, dtype=float):
        logs = np.log(lower[keep]) + 0.5 * math.log(phi) + d * d / (c2 * phi)
        log_need = float(logs.max()) if logs.size else -math.inf
        if log_need > math.log(c1_grid[-1]):
            continue
        idx = np.searchsorted(c1_grid, math.exp(log_need) * (1 - 1e-12))
        if idx >= c1_grid.size:
            continue
        c1 = float(c1_grid[idx])
        mass = c1 * (2 * c3T / math.sqrt(phi) + math.sqrt(math.pi * c2))
        if best is None or mass < best[0]:
            best = (mass, c1, float(c2))
    if best is None:
        c1, c2 = float(c1_grid[-1]), float(np.max(c2_grid))
        status = "FAILED"
    else:
        _, c1, c2 = best
        status = "PASS"
    bound = envelope(z, c1, c2, c3T, phi, i0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        slack = np.log(bound) - np.log(est.density)
        viol_mask = lower > bound * (1 + 1e-12)
        violations = int(viol_mask.sum())
        worst = None
        if violations:
            excess = np.where(viol_mask, np.log(lower) - np.log(bound), -np.inf)
            worst = float(z[int(np.argmax(excess))])
            status = "FAILED"
    return EnvelopeFit(c1, c2, c3, horizon, phi, i0, violations, status, slack, bound, worst)


# -- two-sided additive bounds ------------------------------------------------------


@dataclass
class TwoSidedReport:
    C1: float
    C2: float
    ratio: float
    feasible: bool
    passed: bool
    region: tuple
    note: str = "lower bound checked on |z - m| <= 3 sqrt(phi) only"

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "ratio": self.ratio, "feasible": self.feasible,
                "passed": self.passed, "region": list(self.region), "note": self.note}


def two_sided_check(est: DensityEstimate, phi: float, m: float, e_abs: float,
                    width: float = 3.0, c1_grid=None, max_ratio: float = 4.0) -> TwoSidedReport:
    """Fit 0 < C1 <= C2 with

        e_abs/(C2 phi) exp(-(z-m)^2/(C1 phi)) <= p(z) <= e_abs/(C1 phi) exp(-(z-m)^2/(C2 phi))

    on |z - m| <= width sqrt(phi), minimizing C2 / C1.  For each C1 on the
    grid the least feasible C2 is exact.
    """
    if phi <= 0 or e_abs <= 0:
        raise ValueError("phi and e_abs must be positive")
    if c1_grid is None:
        c1_grid = np.logspace(-3, 3, 3001)
    z = est.centers
    sel = np.abs(z - m) <= width * math.sqrt(phi)
    if sel.sum() < 5:
        raise ValueError("central region holds fewer than 5 bins")
    u2 = (z[sel] - m) ** 2 / phi
    lo_p = est.density[sel] - est.ci[sel]
    hi_p = est.density[sel] + est.ci[sel]
    k = e_abs / phi
    best = None
    for C1 in np.asarray(c1_grid, dtype=float):
        # lower: k / C2 * exp(-u2 / C1) <= hi_p
        with np.errstate(divide="ignore"):
            need_lo = np.max(k * np.exp(-u2 / C1) / hi_p)
        # upper: lo_p <= k / C1 * exp(-u2 / C2)
        r = lo_p * C1 / k
        if np.any(r > 1.0) or np.any((r >= 1.0) & (u2 > 0)):
            continue
        act = (r > 0) & (u2 > 0)
        need_up = u2[act] / -np.log(r[act])
        C2 = max(C1, float(need_lo), float(need_up.max()) if need_up.size else 0.0)
        if not math.isfinite(C2):
            continue
        ratio = C2 / C1
        if best is None or ratio < best[0]:
            best = (ratio, float(C1), C2)
    region = (float(m - width * math.sqrt(phi)), float(m + width * math.sqrt(phi)))
    if best is None:
        return TwoSidedReport(math.nan, math.nan, math.inf, False, False, region)
    ratio, C1, C2 = best
    return TwoSidedReport(C1, C2, ratio, True, ratio < max_ratio, region)


# -- tail decay ---------------------------------------------------------------------


@dataclass
class TailFit:
    a: float
    ci: float
    a_left: float
    a_right: float
    r2: float
    bins: tuple
    tightness: float | None = None
    a_smoothed: float | None = None
    pooled: bool = True

    @property
    def excludes_zero(self) -> bool:
        return self.a - self.ci > 0

    def to_dict(self) -> dict:
        return {"a": self.a, "ci": self.ci, "a_left": self.a_left, "a_right": self.a_right,
                "r2": self.r2, "bins": list(self.bins), "tightness": self.tightness,
                "a_smoothed": self.a_smoothed, "pooled": self.pooled}


class NonQuadraticTail(ValueError):
    """The log-density tails are not quadratic (residual diagnostic failed)."""


def _wls(x, y, w, groups):
    """Weighted fit y = a x + intercept per group; returns a, se(a), R^2, chi2/dof."""
    cols = [x] + [(groups == g).astype(float) for g in np.unique(groups)]
    A = np.vstack(cols).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = y - A @ coef
    dof = max(len(y) - A.shape[1], 1)
    chi2 = float(np.sum(w * resid**2)) / dof
    cov = np.linalg.inv((A * w[:, None]).T @ A) * max(1.0, chi2)
    ybar = np.array([np.average(y[groups == g], weights=w[groups == g]) for g in groups])
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(w * resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), float(math.sqrt(cov[0, 0])), r2, chi2


def tail_decay_fit(est: DensityEstimate, center: float | None = None, phi: float | None = None,
                   c2: float | None = None, min_bins: int = 20, r2_min: float = 0.9,
                   inner: float = 1.0) -> TailFit:
    """Fit -log p_hat(z) = a (z - center)^2 + const on each tail.

    Tails are the bins beyond ``inner`` sample deviations from the center
    with p_hat > 10 ci.  Each side is fitted separately and must pass the
    R^2 check.  If the two curvatures agree they are pooled into one slope
    with per-side intercepts; otherwise ``a`` is the slower side.  The CI of
    a is 1.96 standard errors inflated by max(1, chi^2/dof) and by the
    kernel correlation length.  The raw coefficient is corrected for the
    kernel variance bw^2, exact when the tails are Gaussian.
    """
    c = est.mean if center is None else float(center)
    z = est.centers
    # FFT round-off leaves a floor near 1e-16 of the peak; keep well above it
    good = (est.density > 10 * est.ci) & (est.ci > 0) & (est.density > 1e-10 * est.density.max())
    left = good & (z < c - inner * est.std)
    right = good & (z > c + inner * est.std)
    nl, nr = int(left.sum()), int(right.sum())
    if nl < min_bins or nr < min_bins:
        raise InsufficientTailMass(f"resolved tail bins: left {nl}, right {nr}; need {min_bins}")
    x = (z - c) ** 2
    y = -np.log(np.where(good, est.density, 1.0))
    w = np.where(good, (Z95 * est.density / np.where(good, est.ci, 1.0)) ** 2, 0.0)
    a_l, se_l, r2_l, _ = _wls(x[left], y[left], w[left], np.zeros(nl))
    a_r, se_r, r2_r, _ = _wls(x[right], y[right], w[right], np.zeros(nr))
    r2 = min(r2_l, r2_r)
    if r2 < r2_min:
        raise NonQuadraticTail(f"weighted R^2 left {r2_l:.3f}, right {r2_r:.3f} < {r2_min}: "
                               "tails are not Gaussian-like")
    # KDE errors are correlated over ~2 sqrt(pi) bw: count independent bins only
    corr = math.sqrt(max(2 * math.sqrt(math.pi) * est.bandwidth / est.spacing, 1.0))
    pooled = abs(a_l - a_r) <= Z95 * corr * math.hypot(se_l, se_r)
    if pooled:
        both = left | right
        groups = np.where(z[both] < c, 0, 1)
        a_raw, se, _, _ = _wls(x[both], y[both], w[both], groups)
    else:
        # asymmetric tails: the slower one governs a Gaussian-type envelope
        a_raw, se = (a_l, se_l) if a_l < a_r else (a_r, se_r)
    # a Gaussian kernel adds bw^2 to the variance seen in the tails: undo it
    a, jac = _deconvolve(a_raw, est.bandwidth)
    a_l, _ = _deconvolve(a_l, est.bandwidth)
    a_r, _ = _deconvolve(a_r, est.bandwidth)
    tight = a * c2 * phi if (c2 is not None and phi is not None) else None
    return TailFit(a, Z95 * se * jac * corr, a_l, a_r, r2, (nl, nr), tight, a_raw, pooled)


def _deconvolve(a, bw):
    """Map the smoothed coefficient 1/(2(v + bw^2)) back to 1/(2v); returns (a, da/da_raw)."""
    den = 1.0 - 2.0 * a * bw * bw
    if den <= 0:
        return math.inf, math.inf
    return a / den, 1.0 / den**2
