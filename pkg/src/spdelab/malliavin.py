"""First variation of the discrete scheme: the simulated Malliavin derivative.

For a source (s_m, z) the kernel D_{s_m, z} u(t_N, x) is the derivative of
u(t_N, x) with respect to the noise density at (s_m, z), i.e. h^-d times
the derivative with respect to the increment dW_m(z).  It is obtained by
linearizing the scheme along the sampled path:

* at the source step the perturbation is sigma(u_m(z)) e_z / h,
* afterwards it is carried by the scheme with the multiplicative field
  c_n = sigma'(u_n) dW_n + dt b'(u_n).

All sources are propagated together in one array of shape
(sources, n_x, n_x): rows are (m, z), columns are x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import GridSpec, cameron_martin, h_inner
from .solver import HeatScheme, PathResult, WaveScheme, _node, make_scheme, solve_path


class MemoryBudgetError(MemoryError):
    """The forward propagation would exceed the allowed memory."""

    def __init__(self, required: int, budget: int):
        super().__init__(f"first-variation propagation needs {required / 2**20:.1f} MiB, "
                         f"budget is {budget / 2**20:.1f} MiB")
        self.required = required
        self.budget = budget


DEFAULT_BUDGET = 2 << 30


def required_bytes(grid: GridSpec, n_obs: int) -> int:
    """Peak bytes of the propagation arrays for ``n_obs`` source steps."""
    per_source = grid.modes * grid.modes * 8
    return int(6 * n_obs * per_source)


@dataclass
class MalliavinKernel:
    """D_{s_m, z} u(t_obs, x_obs) on source steps m and cells z.

    ``norms[m, n]`` holds dt ||D_{s_m, .} u(t_n, x_obs)||_H^2 for every target
    step n, so windows at intermediate times need no recomputation.
    """

    values: np.ndarray
    grid: GridSpec
    t_obs: float
    x_obs: tuple
    weights: np.ndarray
    norms: np.ndarray = field(repr=False)
    seed: int | None = None

    @property
    def source_times(self) -> np.ndarray:
        return self.grid.dt * np.arange(self.values.shape[0])


@dataclass
class HNormWindow:
    a: float
    e: float
    value: float


def _check_grid(grid: GridSpec):
    if grid.dim != 1:
        raise ValueError("the first-variation solver supports d = 1")
    if grid.steps > 128 or grid.modes > 128:
        raise ValueError("first-variation grids are limited to n_t, n_x <= 128")


def derivative_kernel(res: PathResult, scheme, t_obs: float, x_obs=0.0,
                      budget: int = DEFAULT_BUDGET) -> MalliavinKernel:
    """First-variation kernel of u(t_obs, x_obs) along the path ``res``."""
    g = res.grid
    _check_grid(g)
    n_obs = g.time_index(t_obs)
    need = required_bytes(g, n_obs)
    if need > budget:
        raise MemoryBudgetError(need, budget)
    (j_obs,) = _node(g, x_obs)
    n_x, h, dt = g.modes, g.h, g.dt
    sig, b = scheme.coeffs.sigma, scheme.coeffs.b
    eye = np.eye(n_x)
    Y = np.zeros((n_obs, n_x, n_x))
    if isinstance(scheme, WaveScheme):
        Yp = np.zeros_like(Y)
        Fp = np.zeros_like(Y)
    norms = np.zeros((max(n_obs, 1), n_obs + 1))
    for n in range(n_obs):
        u = res.u[n]
        c = sig.derivative(u) * res.dw[n] + dt * b.derivative(u)
        src = sig(u)[:, None] * eye / h
        act = slice(0, n)
        if isinstance(scheme, HeatScheme):
            if n:
                Y[act] = scheme.linear_step(Y[act], c)
            Y[n] = scheme.inject(src)
        else:
            F = np.zeros((n + 1, n_x, n_x))
            F[act] = c * Y[act]
            F[n] = src
            if n:
                new = (np.roll(Y[act], 1, -1) + np.roll(Y[act], -1, -1) - Yp[act]
                       + 0.5 * h * (F[act] + Fp[act]))
                Yp[act] = Y[act]
                Y[act] = new
            Y[n] = 0.5 * h * F[n]
            Yp[n] = 0.0
            Fp[: n + 1] = F
        rows = Y[: n + 1, :, j_obs]
        f = h * np.fft.fft(rows, axis=-1)
        norms[: n + 1, n + 1] = dt * np.sum(scheme.weights * np.abs(f) ** 2, axis=-1)
    values = np.zeros((g.steps, n_x))
    values[:n_obs] = Y[:, :, j_obs]
    full_norms = np.zeros((g.steps, n_obs + 1))
    full_norms[:n_obs] = norms[:n_obs]
    return MalliavinKernel(values, g, float(t_obs), (float(g.coords()[j_obs]),),
                           scheme.weights, full_norms, res.seed)


def _window_steps(grid: GridSpec, a: float, e: float):
    ia = int(math.floor(a / grid.dt + 1e-9))
    ie = int(math.floor(e / grid.dt + 1e-9))
    return ia, ie


def window_norm(kernel: MalliavinKernel, a: float, e: float) -> HNormWindow:
    """||D u(t_obs, x_obs)||^2 over sources with s in [a, e]."""
    if not 0 <= a < e:
        raise ValueError("need 0 <= a < e")
    g = kernel.grid
    ia, ie = _window_steps(g, a, e)
    rows = kernel.values[ia:ie]
    if rows.size == 0:
        return HNormWindow(a, e, 0.0)
    f = g.h * np.fft.fft(rows, axis=-1)
    val = g.dt * float(np.sum(kernel.weights * np.abs(f) ** 2))
    return HNormWindow(float(a), float(e), val)


def target_window(kernel: MalliavinKernel, n_target: int, n_delta: int) -> float:
    """||D u(t_n, x_obs)||^2 over the last ``n_delta`` source steps before t_n."""
    lo = max(n_target - n_delta, 0)
    return float(kernel.norms[lo:n_target, n_target].sum())


def h_pairing(kernel: MalliavinKernel, direction: np.ndarray) -> float:
    """<D u, h>_{H_T} = sum_m dt <D_{s_m} u, h_m>_H."""
    g = kernel.grid
    return float(sum(g.dt * h_inner(g, kernel.weights, kernel.values[m], direction[m])
                     for m in range(g.steps)))


def directional_check(grid, mu, sol, coeffs, data, seed: int, t_obs: float, x_obs=0.0,
                      n_directions: int = 5, eps: float = 1e-4, direction_seed: int = 0):
    """Compare <Du, h> with central differences of solve_path along h.

    The increments are shifted by eps dt (Lambda * h_m), the Cameron-Martin
    image of h.  Returns one dict per direction.
    """
    scheme = make_scheme(grid, sol, mu, coeffs, data)
    res = solve_path(grid, mu, sol, coeffs, data, seed=seed)
    ker = derivative_kernel(res, scheme, t_obs, x_obs)
    n_obs = grid.time_index(t_obs)
    (j,) = _node(grid, x_obs)
    rng = np.random.default_rng(direction_seed)
    du_norm = math.sqrt(window_norm(ker, 0.0, t_obs).value)
    out = []
    for _ in range(n_directions):
        hdir = rng.standard_normal((grid.steps, grid.modes))
        shift = grid.dt * cameron_martin(grid, scheme.weights, hdir)
        up = solve_path(grid, mu, sol, coeffs, data, increments=res.dw + eps * shift)
        dn = solve_path(grid, mu, sol, coeffs, data, increments=res.dw - eps * shift)
        fd = (up.u[n_obs, j] - dn.u[n_obs, j]) / (2 * eps)
        pairing = h_pairing(ker, hdir)
        h_norm = math.sqrt(sum(grid.dt * h_inner(grid, scheme.weights, hdir[m], hdir[m])
                               for m in range(n_obs)))
        err = abs(pairing - fd)
        out.append({"pairing": pairing, "finite_difference": fd, "abs_error": err,
                    "relative": err / max(abs(fd), 1e-300),
                    "normalized": err / max(h_norm, 1e-300),
                    "scale": du_norm * h_norm})
    return out


# -- scaling experiment -------------------------------------------------------------


@dataclass
class ScalingReport:
    deltas: np.ndarray
    phi_delta: np.ndarray
    mean_sq_norm: np.ndarray
    se_sq_norm: np.ndarray
    slope: float
    slope_se: float
    t_grid: np.ndarray
    phi_t: np.ndarray
    mean_inv_norm: np.ndarray
    product: np.ndarray
    ratio: float
    positivity_failures: int
    paths: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "slope_se": self.slope_se, "ratio": self.ratio,
                "positivity_failures": self.positivity_failures, "paths": self.paths,
                "deltas": self.deltas.tolist(), "phi_delta": self.phi_delta.tolist(),
                "mean_sq_norm": self.mean_sq_norm.tolist(), "t_grid": self.t_grid.tolist(),
                "product": self.product.tolist()}


def scaling_experiment(grid: GridSpec, mu, sol, coeffs, data, deltas, paths: int, seed: int,
                       t_grid=None, x_obs=0.0, p: int = 1) -> ScalingReport:
    """Window-norm scaling in delta and the inverse-norm product over t.

    (i) slope of log E||Du(T, x)||^2 on [T - delta, T] against log Phi(delta);
    (ii) E||Du(t, x)||^{-2} Phi(t) over ``t_grid``, with max/min ratio.
    Phi is the scheme's own truncated Phi, so the additive case is exact.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size < 4:
        raise ValueError("need at least 4 delta values for the regression")
    if p != 1:
        raise NotImplementedError("only p = 1 moments are implemented")
    scheme = make_scheme(grid, sol, mu, coeffs, data)
    n_T = grid.steps
    n_d = np.array([grid.time_index(d) for d in deltas])
    if np.any(n_d < 1) or np.any(n_d > n_T):
        raise ValueError("deltas must be positive multiples of dt within the horizon")
    if t_grid is None:
        t_grid = np.linspace(0.1, 1.0, 10) * grid.horizon
    n_t = np.array([max(1, int(round(t / grid.dt))) for t in t_grid])
    sq = np.zeros((paths, n_d.size))
    inv = np.zeros((paths, n_t.size))
    pos_fail = 0
    c = coeffs.sigma.lower
    phi_min = scheme.phi_truncated(int(n_d.min()))
    for path in range(paths):
        res = solve_path(grid, mu, sol, coeffs, data, seed=seed, path=path)
        ker = derivative_kernel(res, scheme, grid.horizon, x_obs)
        sq[path] = [target_window(ker, n_T, k) for k in n_d]
        inv[path] = [1.0 / target_window(ker, k, k) for k in n_t]
        if c > 0 and sq[path].min() < 0.5 * c * c * phi_min:
            pos_fail += 1
    phi_d = np.array([scheme.phi_truncated(int(k)) for k in n_d])
    mean_sq = sq.mean(axis=0)
    se_sq = sq.std(axis=0, ddof=1) / math.sqrt(paths) if paths > 1 else np.zeros_like(mean_sq)
    A = np.vstack([np.log(phi_d), np.ones_like(phi_d)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(mean_sq), rcond=None)
    resid = np.log(mean_sq) - A @ coef
    dof = max(len(phi_d) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * float(resid @ resid) / dof
    phi_t = np.array([scheme.phi_truncated(int(k)) for k in n_t])
    mean_inv = inv.mean(axis=0)
    prod = mean_inv * phi_t
    return ScalingReport(n_d * grid.dt, phi_d, mean_sq, se_sq, float(coef[0]),
                         float(math.sqrt(max(cov[0, 0], 0.0))), n_t * grid.dt, phi_t, mean_inv,
                         prod, float(prod.max() / prod.min()), pos_fail, paths)
