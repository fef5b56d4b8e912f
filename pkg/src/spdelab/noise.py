"""Spectral synthesis of spatially homogeneous noise on a periodic grid.

The torus [-L/2, L/2)^d carries n points per axis, x_j = -L/2 + j h with
h = L / n.  Mode k has frequency k / L and weight

    mu_hat(k) = density(k / L) / L^d,

the torus discretization of mu.  A step increment has coefficients

    W_hat_k = sqrt(dt mu_hat(k) / n^d) * rfftn(Z),   Z iid N(0, 1) on the grid,

so E|W_hat_k|^2 = dt mu_hat(k) and the real field is dW = n^d irfftn(W_hat).
Each Monte Carlo path draws from its own Philox stream keyed by
(seed, path), making every path reproducible on its own.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .spectral import SpectralMeasure


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid on the torus of side ``length``."""

    dim: int
    length: float
    modes: int
    horizon: float
    steps: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("noise synthesis supports d = 1 or 2")
        if self.length <= 0 or self.horizon <= 0:
            raise ValueError("length and horizon must be positive")
        if self.modes < 2 or self.modes & (self.modes - 1):
            raise ValueError("modes per axis must be a power of two >= 2")
        if self.steps < 1:
            raise ValueError("steps must be positive")

    @property
    def h(self) -> float:
        return self.length / self.modes

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def shape(self) -> tuple:
        return (self.modes,) * self.dim

    @property
    def rshape(self) -> tuple:
        return (self.modes,) * (self.dim - 1) + (self.modes // 2 + 1,)

    @property
    def cutoff(self) -> float:
        """Largest retained frequency magnitude per axis, n / (2L)."""
        return self.modes / (2.0 * self.length)

    def coords(self) -> np.ndarray:
        return -0.5 * self.length + self.h * np.arange(self.modes)

    def index_of(self, x: float) -> int:
        """Grid index of a node; raises if x is not on the grid."""
        j = (x + 0.5 * self.length) / self.h
        jr = int(round(j))
        if abs(j - jr) > 1e-9 or not 0 <= jr < self.modes:
            raise ValueError(f"x = {x} is not a grid node")
        return jr

    def time_index(self, t: float) -> int:
        n = t / self.dt
        nr = int(round(n))
        if abs(n - nr) > 1e-9 or not 0 <= nr <= self.steps:
            raise ValueError(f"t = {t} is not on the time grid")
        return nr

    def frequencies(self, real: bool = False):
        """Per-axis frequency arrays k / L in FFT layout (last axis rfft if ``real``)."""
        full = np.fft.fftfreq(self.modes, d=self.h)
        axes = [full] * self.dim
        if real:
            axes[-1] = np.fft.rfftfreq(self.modes, d=self.h)
        return np.meshgrid(*axes, indexing="ij")

    def radii(self, real: bool = False) -> np.ndarray:
        return np.sqrt(sum(f * f for f in self.frequencies(real)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "length": self.length, "modes": self.modes,
                "horizon": self.horizon, "steps": self.steps}


def _riesz_zero_cell(beta: float, dim: int, length: float) -> float:
    """Mass of |xi|^(beta-d) over the zero cell [-1/(2L), 1/(2L)]^d."""
    a = 0.5 / length
    if dim == 1:
        return 2.0 * a**beta / beta
    val = integrate.quad(lambda th: (a / math.cos(th)) ** beta / beta, 0.0, math.pi / 4,
                         epsabs=0.0, epsrel=1e-12)[0]
    return 8.0 * val


def mode_weights(grid: GridSpec, mu: SpectralMeasure, real: bool = False) -> np.ndarray:
    """Torus weights mu_hat(k) in FFT layout (rfft layout if ``real``)."""
    if mu.dim != grid.dim:
        raise ValueError("measure and grid dimensions differ")
    L = grid.length
    if mu.kind == "atoms":
        w = np.zeros(grid.shape)
        n = grid.modes
        for p, m in mu.atoms:
            k = tuple(int(np.round(c * L)) % n for c in np.atleast_1d(p))
            w[k] += m
        if real:
            w = w[..., : n // 2 + 1]
        return w
    r = grid.radii(real)
    w = np.empty(r.shape)
    nz = r > 0
    w[nz] = mu.radial_density(r[nz]) / L**grid.dim
    origin = (0,) * grid.dim
    if mu.kind == "riesz":
        w[origin] = _riesz_zero_cell(mu.beta, grid.dim, L)
    else:
        w[origin] = float(mu.radial_density(np.array([0.0]))[0]) / L**grid.dim
    return w


def field_variance(grid: GridSpec, mu: SpectralMeasure) -> float:
    """Exact per-step variance of a real-space increment value, dt * sum mu_hat."""
    return grid.dt * float(mode_weights(grid, mu).sum())


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Counter-based stream for one Monte Carlo path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path,))))


def _amplitudes(grid: GridSpec, weights_r: np.ndarray) -> np.ndarray:
    return np.sqrt(grid.dt * weights_r / grid.modes**grid.dim)


def _axes(grid: GridSpec):
    return tuple(range(1, grid.dim + 1))


def draw_coefficients(grid: GridSpec, weights_r: np.ndarray, seed: int, path: int = 0):
    """Spectral coefficients (steps, *rshape) for one path."""
    z = path_rng(seed, path).standard_normal((grid.steps,) + grid.shape)
    return _amplitudes(grid, weights_r) * np.fft.rfftn(z, axes=_axes(grid))


def draw_increments(grid: GridSpec, weights_r: np.ndarray, seed: int, path: int = 0):
    """Real-space increments (steps, *shape) for one path."""
    coef = draw_coefficients(grid, weights_r, seed, path)
    return to_real(grid, coef)


def to_real(grid: GridSpec, coef: np.ndarray) -> np.ndarray:
    axes = tuple(range(coef.ndim - grid.dim, coef.ndim))
    return grid.modes**grid.dim * np.fft.irfftn(coef, s=grid.shape, axes=axes)


@dataclass
class NoiseIncrements:
    """Spectral increments of one path; ``coeffs`` has shape (steps, *rshape)."""

    grid: GridSpec
    coeffs: np.ndarray
    seed: int
    path: int = 0

    def step(self, n: int) -> np.ndarray:
        """Real-space increment field over step n."""
        return to_real(self.grid, self.coeffs[n])

    def fields(self) -> np.ndarray:
        return to_real(self.grid, self.coeffs)

    def imag_residue(self) -> float:
        """Relative imaginary part left by a full complex inverse transform."""
        g = self.grid
        full = np.fft.fftn(self.fields(), axes=_axes(g))
        back = np.fft.ifftn(full, axes=_axes(g))
        return float(np.abs(back.imag).max() / max(np.abs(back.real).max(), 1e-300))


def sample_increments(grid: GridSpec, mu: SpectralMeasure, seed: int, path: int = 0):
    """Deterministic noise increments for (seed, path) on ``grid``."""
    w = mode_weights(grid, mu, real=True)
    return NoiseIncrements(grid, draw_coefficients(grid, w, seed, path), int(seed), int(path))


# -- pairing with test functions ------------------------------------------------


def pair(grid: GridSpec, g: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """int g dW over each leading-index step: h^d sum_j g_j dW_j."""
    return grid.h**grid.dim * np.tensordot(dw, g, axes=grid.dim)


def fourier_of(grid: GridSpec, g: np.ndarray) -> np.ndarray:
    """Torus transform F g(k) = h^d sum_j g_j exp(-2 pi i k x_j / L)."""
    return grid.h**grid.dim * np.fft.fftn(g)


def h_inner(grid: GridSpec, weights: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """Discrete H inner product sum_k mu_hat(k) F f(k) conj(F g(k))."""
    return float(np.real(np.sum(weights * fourier_of(grid, f) * np.conj(fourier_of(grid, g)))))


def h_norm_sq(grid: GridSpec, weights: np.ndarray, f: np.ndarray) -> float:
    return float(np.sum(weights * np.abs(fourier_of(grid, f)) ** 2))


def cameron_martin(grid: GridSpec, weights: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Lambda * h on the grid; satisfies int g (Lambda * h) = <g, h>_H."""
    axes = tuple(range(h.ndim - grid.dim, h.ndim))
    return np.real(np.fft.ifftn(grid.length**grid.dim * weights * np.fft.fftn(h, axes=axes),
                                axes=axes))


def indicator(grid: GridSpec, lo: float, hi: float) -> np.ndarray:
    """Indicator of [lo, hi)^d sampled on the grid."""
    x = grid.coords()
    one = ((x >= lo) & (x < hi)).astype(float)
    if grid.dim == 1:
        return one
    return np.multiply.outer(one, one)


@dataclass
class PairCorrelationReport:
    rows: list

    @property
    def max_abs_z(self) -> float:
        return max(abs(r["z"]) for r in self.rows)

    def passed(self, z_max: float = 4.0) -> bool:
        return self.max_abs_z < z_max


def pair_correlation_test(grid: GridSpec, mu: SpectralMeasure, increments: np.ndarray):
    """Compare empirical covariances of int g dW with the torus Lambda form.

    ``increments`` is an array (steps, *shape) of real-space fields, with at
    least 1000 steps.  The panel uses indicators of intervals (boxes in
    d = 2), a translate and a disjoint pair.  Expected values are exact
    for the discrete noise; z-scores use the Gaussian standard errors.
    """
    n = increments.shape[0]
    if n < 1000:
        raise ValueError("need at least 1000 steps")
    w = mode_weights(grid, mu)
    L = grid.length
    panel = {
        "A": indicator(grid, -0.1 * L, 0.05 * L),
        "A+shift": indicator(grid, 0.15 * L, 0.3 * L),
        "B": indicator(grid, 0.0, 0.2 * L),
    }
    X = {k: pair(grid, g, increments) / math.sqrt(grid.dt) for k, g in panel.items()}
    rows = []

    def add(name, a, b, expected, var_a, var_b, cov_ab):
        emp = float(np.mean(a * b))
        se = math.sqrt((var_a * var_b + cov_ab**2) / n)
        diff = emp - expected
        if se == 0.0:
            # degenerate panel entry: the identity must hold to rounding
            z = 0.0 if abs(diff) <= 1e-9 * max(var_a, 1.0) else math.inf
        else:
            z = diff / se
        rows.append({"name": name, "empirical": emp, "expected": expected, "se": se, "z": z})

    var = {k: h_norm_sq(grid, w, g) for k, g in panel.items()}
    for k in panel:
        add(f"var[{k}]", X[k], X[k], var[k], var[k], var[k], var[k])
    cov_ab = h_inner(grid, w, panel["A"], panel["B"])
    add("cov[A,B]", X["A"], X["B"], cov_ab, var["A"], var["B"], cov_ab)
    add("cov[A_n,A_n+1]", X["A"][:-1], X["A"][1:], 0.0, var["A"], var["A"], 0.0)
    add("var[A]-var[A+shift]", X["A"] ** 2 - X["A+shift"] ** 2, np.ones(n), 0.0,
        2 * var["A"] ** 2 + 2 * var["A+shift"] ** 2
        - 4 * h_inner(grid, w, panel["A"], panel["A+shift"]) ** 2, 1.0, 0.0)
    return PairCorrelationReport(rows)


# -- binary cache ---------------------------------------------------------------

_MAGIC = b"SPDN"
_HEADER = struct.Struct("<4sIIIIddQQ")


def write_cache(path, inc: NoiseIncrements) -> None:
    """Little-endian cache: header {magic, version, dim, modes, steps, length,
    horizon, seed, path}, then one complex128 block of rshape per step."""
    g = inc.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, g.dim, g.modes, g.steps, g.length, g.horizon,
                              inc.seed, inc.path))
        for n in range(g.steps):
            fh.write(np.ascontiguousarray(inc.coeffs[n], dtype="<c16").tobytes())


def read_cache(path) -> NoiseIncrements:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, dim, modes, steps, length, horizon, seed, p = _HEADER.unpack(head)
        if magic != _MAGIC or version != 1:
            raise ValueError("not a noise cache file")
        grid = GridSpec(dim, length, modes, horizon, steps)
        data = np.frombuffer(fh.read(), dtype="<c16")
    expected = steps * int(np.prod(grid.rshape))
    if data.size != expected:
        raise ValueError(f"truncated cache: {data.size} of {expected} coefficients")
    return NoiseIncrements(grid, data.reshape((steps,) + grid.rshape).astype(complex), seed, p)


def truncation_diagnostic(grid: GridSpec, mu: SpectralMeasure, sol, t: float) -> dict:
    """Phi mass carried by frequencies beyond the grid cutoff n / (2L)."""
    from .phi import phi, phi_tail

    total = phi(mu, sol, t)
    tail = phi_tail(mu, sol, t, grid.cutoff)
    return {"cutoff": grid.cutoff, "phi": total, "phi_tail": tail,
            "relative": tail / total if total > 0 else 0.0}
