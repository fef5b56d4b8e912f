"""Time stepping of the mild equation on the periodic grid.

    u(t, x) = I0(t, x) + int_0^t int Gamma(t - s, x - y) sigma(u(s, y)) W(ds, dy)
                       + int_0^t int Gamma(t - s, x - y) b(u(s, y)) dy ds

Both schemes freeze sigma(u) and b(u) at the start of each step (Ito) and
apply the lag kernel at the step midpoint, so source step m reaches step N
through G_j with lag (j - 1/2) dt, j = N - m:

``heat-expint`` (heat, d = 1, 2)
    u_{n+1} = S(dt) u_n + S(dt/2) [sigma(u_n) dW_n + dt b(u_n)],
    S(t) = exp(t Laplacian) applied mode by mode.

``wave-lattice`` (wave, d = 1, requires h = dt)
    G_j = 1/2 on |x| <= (j - 1) h, applied through the exact lattice
    recursion w_{N+1} = w_N(. + h) + w_N(. - h) - w_{N-1} + h/2 (f_N + f_{N-1}).
    The lattice cone grows one cell per step, so finite speed is exact.

With sigma = 1 the scheme variance at a grid node is exactly
``phi_truncated`` = dt sum_j sum_k mu_hat(k) |F G_j(k)|^2.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientPair, InitialData
from .fundamental import FundamentalSolution
from .noise import GridSpec, draw_increments, fourier_of, mode_weights
from .spectral import SpectralMeasure, is_admissible


class SchemeError(RuntimeError):
    """Non-finite values during stepping; carries step diagnostics."""


def initial_contribution(sol: FundamentalSolution, data: InitialData, t, x, grid: GridSpec | None = None):
    """I0(t, x) for catalog initial data.

    heat: (Gamma(t) * u0)(x), by spectral multiplication on ``grid`` when one
    is given (x must then be the grid itself) and analytically otherwise.
    wave, d = 1: d'Alembert, 1/2 (u0(x+t) + u0(x-t)) + 1/2 int_{x-t}^{x+t} v0.
    """
    t = float(t)
    if sol.kind == "heat":
        if grid is not None:
            u0 = data.u0.periodic(_grid_points(grid), grid.length, grid.dim)
            lam = 4 * math.pi**2 * grid.radii(real=True) ** 2
            return np.fft.irfftn(np.exp(-lam * t) * np.fft.rfftn(u0), s=grid.shape,
                                  axes=tuple(range(grid.dim)))
        p = data.u0
        if p.kind == "constant":
            return p(x, sol.dim)
        if p.kind == "mode":
            f = np.asarray(p.params["freq"], dtype=float)
            return math.exp(-4 * math.pi**2 * float(f @ f) * t) * p(x, sol.dim)
        raise ValueError("heat with a bump needs a grid for the spectral convolution")
    if sol.kind == "wave" and sol.dim == 1:
        x = np.asarray(x, dtype=float)
        length = None if grid is None else grid.length
        if length is None:
            ev = lambda prof, y: prof(y)
        else:
            ev = lambda prof, y: prof.periodic(y, length)
        out = 0.5 * (ev(data.u0, x + t) + ev(data.u0, x - t))
        prim = data.v0.antiderivative_1d
        return out + 0.5 * (prim(x + t, length) - prim(x - t, length))
    raise NotImplementedError(f"no initial contribution for {sol.kind} in d={sol.dim}")


def _grid_points(grid: GridSpec):
    x = grid.coords()
    if grid.dim == 1:
        return x
    return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)


class _Scheme:
    """Shared plumbing: mode weights, I0 table, lag kernels."""

    name = ""

    def __init__(self, grid: GridSpec, sol: FundamentalSolution, mu: SpectralMeasure,
                 coeffs: CoefficientPair, data: InitialData):
        if mu.dim != grid.dim or sol.dim != grid.dim:
            raise ValueError("grid, operator and measure dimensions differ")
        if not is_admissible(mu):
            raise ValueError(f"{mu.kind} measure in d={mu.dim} is not admissible")
        self.grid, self.sol, self.mu = grid, sol, mu
        self.coeffs, self.data = coeffs, data
        self.weights = mode_weights(grid, mu)
        self.weights_r = mode_weights(grid, mu, real=True)
        self.i0 = np.stack([initial_contribution(sol, data, n * grid.dt, _grid_points(grid), grid)
                            for n in range(grid.steps + 1)])

    # lag kernel G_j as a point density, centered at index 0 (circular)
    def lag_kernel(self, j: int) -> np.ndarray:
        raise NotImplementedError

    def lag_hat(self, j: int) -> np.ndarray:
        return fourier_of(self.grid, self.lag_kernel(j))

    def phi_truncated(self, n_steps: int) -> float:
        """Exact variance of the sigma = 1 stochastic convolution after n steps."""
        dt = self.grid.dt
        return float(sum(dt * np.sum(self.weights * np.abs(self.lag_hat(j)) ** 2)
                         for j in range(1, n_steps + 1)))

    def lag_mass(self, j: int) -> float:
        return float(self.grid.h**self.grid.dim * self.lag_kernel(j).sum())

    def reflected_kernels(self, n_obs: int, j_obs) -> np.ndarray:
        """R[m] (z) = G_{n_obs - m}(x_obs - z) for m < n_obs."""
        g = self.grid
        idx = np.indices(g.shape)
        jo = np.atleast_1d(j_obs)
        shift = tuple((jo[a] - idx[a]) % g.modes for a in range(g.dim))
        return np.stack([self.lag_kernel(n_obs - m)[shift] for m in range(n_obs)])


class HeatScheme(_Scheme):
    name = "heat-expint"

    def __init__(self, grid, sol, mu, coeffs, data):
        if sol.kind != "heat" or grid.dim not in (1, 2):
            raise ValueError("HeatScheme needs the heat operator in d = 1 or 2")
        super().__init__(grid, sol, mu, coeffs, data)
        self.lam_r = 4 * math.pi**2 * grid.radii(real=True) ** 2
        self.lam = 4 * math.pi**2 * grid.radii() ** 2
        self.e1 = np.exp(-self.lam_r * grid.dt)
        self.eh = np.exp(-0.5 * self.lam_r * grid.dt)

    def _fft_axes(self, arr):
        return tuple(range(arr.ndim - self.grid.dim, arr.ndim))

    def lag_kernel(self, j):
        g = self.grid
        hat = np.exp(-self.lam_r * (j - 0.5) * g.dt)
        return np.fft.irfftn(hat, s=g.shape, axes=tuple(range(g.dim))) / g.h**g.dim

    def lag_hat(self, j):
        return np.exp(-self.lam * (j - 0.5) * self.grid.dt)

    def init(self, batch: int):
        shape = (batch,) + self.grid.rshape
        return {"M": np.zeros(shape, complex), "D": np.zeros(shape, complex)}

    def to_real(self, spec):
        return np.fft.irfftn(spec, s=self.grid.shape, axes=self._fft_axes(spec))

    def parts(self, state, n):
        """(u, M, D) real fields at step n."""
        m = self.to_real(state["M"])
        d = self.to_real(state["D"])
        return self.i0[n] + m + d, m, d

    def step(self, state, n, dw, u):
        ax = self._fft_axes(u)
        s = self.coeffs.sigma(u)
        state["M"] = self.e1 * state["M"] + self.eh * np.fft.rfftn(s * dw, axes=ax)
        if not self.coeffs.b.is_constant or self.coeffs.b.sup != 0.0:
            bb = self.coeffs.b(u)
            state["D"] = self.e1 * state["D"] + self.eh * (self.grid.dt * np.fft.rfftn(bb, axes=ax))

    # linear propagation used by the first-variation solver
    def linear_step(self, y, c):
        """S(dt) y + S(dt/2) (c y) along the last d axes."""
        ax = self._fft_axes(y)
        return self.to_real(self.e1 * np.fft.rfftn(y, axes=ax) + self.eh * np.fft.rfftn(c * y, axes=ax))

    def inject(self, field):
        """S(dt/2) field: the first-step image of a source."""
        return self.to_real(self.eh * np.fft.rfftn(field, axes=self._fft_axes(field)))


class WaveScheme(_Scheme):
    name = "wave-lattice"

    def __init__(self, grid, sol, mu, coeffs, data):
        if sol.kind != "wave" or grid.dim != 1:
            raise ValueError("WaveScheme needs the wave operator in d = 1")
        if not math.isclose(grid.h, grid.dt, rel_tol=1e-12):
            raise ValueError(f"wave-lattice needs h == dt (h={grid.h}, dt={grid.dt})")
        if grid.length < 2 * grid.horizon + grid.h:
            raise ValueError("torus too small: periodic images would reach the observation point")
        super().__init__(grid, sol, mu, coeffs, data)

    def lag_kernel(self, j):
        g = np.zeros(self.grid.modes)
        g[: j] = 0.5
        if j > 1:
            g[-(j - 1):] = 0.5
        return g

    def init(self, batch: int):
        z = np.zeros((batch, self.grid.modes))
        return {k: z.copy() for k in ("M", "Mp", "fM", "D", "Dp", "fD")}

    def parts(self, state, n):
        return self.i0[n] + state["M"] + state["D"], state["M"], state["D"]

    def _advance(self, w, wp, f, fp, first):
        h = self.grid.h
        if first:
            return 0.5 * h * f
        return np.roll(w, 1, -1) + np.roll(w, -1, -1) - wp + 0.5 * h * (f + fp)

    def step(self, state, n, dw, u):
        first = n == 0
        fM = self.coeffs.sigma(u) * dw
        fD = self.grid.dt * self.coeffs.b(u)
        newM = self._advance(state["M"], state["Mp"], fM, state["fM"], first)
        newD = self._advance(state["D"], state["Dp"], fD, state["fD"], first)
        state.update(Mp=state["M"], M=newM, fM=fM, Dp=state["D"], D=newD, fD=fD)


def make_scheme(grid, sol, mu, coeffs, data):
    if sol.kind == "heat":
        return HeatScheme(grid, sol, mu, coeffs, data)
    if sol.kind == "wave" and sol.dim == 1:
        return WaveScheme(grid, sol, mu, coeffs, data)
    raise NotImplementedError(f"no time stepper for {sol.kind} in d={sol.dim}")


# -- single paths ------------------------------------------------------------------


@dataclass
class PathResult:
    """Full fields of one path; arrays indexed by step 0..N."""

    scheme: str
    grid: GridSpec
    u: np.ndarray
    martingale: np.ndarray
    drift: np.ndarray
    i0: np.ndarray
    dw: np.ndarray
    seed: int | None = None
    path: int = 0

    @property
    def times(self):
        return self.grid.dt * np.arange(self.u.shape[0])


def _check_finite(u, n):
    if not np.all(np.isfinite(u)):
        bad = np.argwhere(~np.isfinite(u))[0]
        raise SchemeError(f"non-finite solution at step {n}, index {tuple(bad)}")


def _integrate(scheme, dw, n_steps, record=True):
    batch = dw.shape[0]
    state = scheme.init(batch)
    us, ms, ds = [], [], []
    for n in range(n_steps):
        u, m, d = scheme.parts(state, n)
        _check_finite(u, n)
        if record:
            us.append(u), ms.append(m), ds.append(d)
        scheme.step(state, n, dw[:, n], u)
    u, m, d = scheme.parts(state, n_steps)
    _check_finite(u, n_steps)
    if record:
        us.append(u), ms.append(m), ds.append(d)
        return np.stack(us, 1), np.stack(ms, 1), np.stack(ds, 1)
    return u, m, d


def solve_path(grid: GridSpec, mu: SpectralMeasure, sol: FundamentalSolution,
               coeffs: CoefficientPair, data: InitialData, seed: int | None = None,
               path: int = 0, increments: np.ndarray | None = None) -> PathResult:
    """Simulate one path; ``increments`` (steps, *shape) overrides the RNG draw."""
    scheme = make_scheme(grid, sol, mu, coeffs, data)
    if increments is None:
        if seed is None:
            raise ValueError("need a seed or explicit increments")
        increments = draw_increments(grid, scheme.weights_r, seed, path)
    dw = np.asarray(increments, dtype=float)
    if dw.shape != (grid.steps,) + grid.shape:
        raise ValueError(f"increments must have shape {(grid.steps,) + grid.shape}")
    u, m, d = _integrate(scheme, dw[None], grid.steps)
    return PathResult(scheme.name, grid, u[0], m[0], d[0], scheme.i0, dw, seed, path)


def _source_contributions(scheme, res: PathResult, t_obs, x_obs, which):
    g = res.grid
    n_obs = g.time_index(t_obs)
    j_obs = _node(g, x_obs)
    kern = scheme.reflected_kernels(n_obs, j_obs)
    out = np.zeros(n_obs + 1)
    for m in range(n_obs):
        u = res.u[m]
        if which == "M":
            f = scheme.coeffs.sigma(u) * res.dw[m]
        else:
            f = g.dt * scheme.coeffs.b(u)
        out[m + 1] = g.h**g.dim * np.sum(kern[m] * f)
    return np.cumsum(out)


def martingale_part(res: PathResult, scheme, t_obs: float, x_obs) -> np.ndarray:
    """s -> M_s for the fixed target (t_obs, x_obs), s on the step grid up to t_obs.

    M_s sums the stochastic source terms of steps m < s propagated to the
    target; its last entry equals the scheme's martingale field at the target.
    """
    return _source_contributions(scheme, res, t_obs, x_obs, "M")


def drift_part(res: PathResult, scheme, t_obs: float, x_obs) -> np.ndarray:
    return _source_contributions(scheme, res, t_obs, x_obs, "D")


def quadratic_variation(res: PathResult, scheme, t_obs: float, x_obs) -> np.ndarray:
    """Cumulative <M>_s = sum_{m<s} dt ||G(t - s_m, x - .) sigma(u_m)||_H^2."""
    g = res.grid
    n_obs = g.time_index(t_obs)
    kern = scheme.reflected_kernels(n_obs, _node(g, x_obs))
    out = np.zeros(n_obs + 1)
    for m in range(n_obs):
        f = fourier_of(g, kern[m] * scheme.coeffs.sigma(res.u[m]))
        out[m + 1] = g.dt * np.sum(scheme.weights * np.abs(f) ** 2)
    return np.cumsum(out)


def _node(grid: GridSpec, x_obs):
    xs = np.atleast_1d(np.asarray(x_obs, dtype=float))
    if xs.size == 1 and grid.dim > 1:
        xs = np.repeat(xs, grid.dim)
    return tuple(grid.index_of(float(v)) for v in xs)


# -- ensembles ---------------------------------------------------------------------


@dataclass
class SolutionEnsemble:
    """Monte Carlo samples at one observation point with provenance."""

    values: np.ndarray
    martingale: np.ndarray
    drift: np.ndarray
    i0: float
    phi_truncated: float
    t_obs: float
    x_obs: tuple
    seed: int
    scheme: str
    grid: GridSpec
    qv: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def to_dict(self) -> dict:
        return {"samples": self.n, "seed": self.seed, "scheme": self.scheme,
                "grid": self.grid.to_dict(), "t_obs": self.t_obs, "x_obs": list(self.x_obs),
                "i0": self.i0, "phi_truncated": self.phi_truncated, **self.meta}


def block_size(grid: GridSpec) -> int:
    """Paths per block; depends on the grid only, never on the thread count."""
    cells = grid.steps * grid.modes**grid.dim
    return int(max(1, min(256, (1 << 21) // cells)))


def _run_block(scheme, seed, paths, n_obs, j_obs, kern, want_qv, snap_steps):
    g = scheme.grid
    batch = len(paths)
    dw = np.empty((g.steps, batch) + g.shape)
    for i, p in enumerate(paths):
        dw[:, i] = draw_increments(g, scheme.weights_r, seed, p)
    state = scheme.init(batch)
    qv = np.zeros(batch) if want_qv else None
    snaps = {}
    sel = (slice(None),) + tuple(j_obs)
    for n in range(n_obs):
        u, _, _ = scheme.parts(state, n)
        _check_finite(u, n)
        if n in snap_steps:
            snaps[n] = u.copy()
        if want_qv:
            f = fourier_of_batch(g, kern[n] * scheme.coeffs.sigma(u))
            qv += g.dt * np.sum(scheme.weights * np.abs(f) ** 2, axis=tuple(range(1, g.dim + 1)))
        scheme.step(state, n, dw[n], u)
    u, m, d = scheme.parts(state, n_obs)
    _check_finite(u, n_obs)
    if n_obs in snap_steps:
        snaps[n_obs] = u.copy()
    return u[sel], m[sel], d[sel], qv, snaps


def fourier_of_batch(grid: GridSpec, g: np.ndarray) -> np.ndarray:
    return grid.h**grid.dim * np.fft.fftn(g, axes=tuple(range(g.ndim - grid.dim, g.ndim)))


def simulate_ensemble(grid: GridSpec, mu: SpectralMeasure, sol: FundamentalSolution,
                      coeffs: CoefficientPair, data: InitialData, samples: int, seed: int,
                      t_obs: float, x_obs=0.0, threads: int = 1, want_qv: bool = False,
                      snapshot_times=(), meta: dict | None = None) -> SolutionEnsemble:
    """Sample u(t_obs, x_obs) over ``samples`` independent paths.

    Path p always uses the stream (seed, p) and blocks have a fixed size, so
    the output is bit-identical for any ``threads``.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    scheme = make_scheme(grid, sol, mu, coeffs, data)
    n_obs = grid.time_index(t_obs)
    j_obs = _node(grid, x_obs)
    kern = scheme.reflected_kernels(n_obs, j_obs) if want_qv else None
    snap_steps = {grid.time_index(t) for t in snapshot_times}
    bs = block_size(grid)
    blocks = [range(a, min(a + bs, samples)) for a in range(0, samples, bs)]
    job = lambda paths: _run_block(scheme, seed, paths, n_obs, j_obs, kern, want_qv, snap_steps)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, blocks))
    else:
        results = [job(b) for b in blocks]
    vals = np.concatenate([r[0] for r in results])
    mart = np.concatenate([r[1] for r in results])
    drift = np.concatenate([r[2] for r in results])
    qv = np.concatenate([r[3] for r in results]) if want_qv else None
    snaps = {grid.dt * n: np.concatenate([r[4][n] for r in results]) for n in sorted(snap_steps)}
    x_node = tuple(float(grid.coords()[j]) for j in j_obs)
    return SolutionEnsemble(vals, mart, drift, float(scheme.i0[n_obs][j_obs]),
                            scheme.phi_truncated(n_obs), float(t_obs), x_node, int(seed),
                            scheme.name, grid, qv, snaps, dict(meta or {}))


def moment_survey(ensemble: SolutionEnsemble, ps=(1, 2, 4)) -> dict:
    """E|u(t, x)|^p over the recorded snapshot grid, with the max per p."""
    if not ensemble.snapshots:
        raise ValueError("ensemble has no snapshots; pass snapshot_times")
    table = {}
    for p in ps:
        per_time = {t: np.mean(np.abs(f) ** p, axis=0) for t, f in ensemble.snapshots.items()}
        table[p] = {"moments": per_time, "max": float(max(v.max() for v in per_time.values()))}
    return table
