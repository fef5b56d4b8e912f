"""End-to-end acceptance criteria 1-10.

Each criterion returns a :class:`CriterionResult`; :func:`run_all` prints
one PASS/FAIL line per criterion.  Monte Carlo ensembles are shared between
criteria through a :class:`Context` and can be cached on disk as ``.npz``
keyed by configuration hash, seed and sample count.
"""

from __future__ import annotations

import math
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import cli
from .coefficients import Coefficient, CoefficientPair, InitialData
from .config import ExperimentConfig, dumps
from .density import (drift_constant, estimate_density, tail_decay_fit, two_sided_check,
                      verify_upper_envelope)
from .fundamental import FundamentalSolution
from .malliavin import derivative_kernel, directional_check, scaling_experiment, window_norm
from .noise import GridSpec
from .phi import (certify_gamma, gamma_grid, loglog_slope, phi_closed_form, phi_profile,
                  phi_quadrature)
from .solver import make_scheme, simulate_ensemble, solve_path
from .spectral import SpectralMeasure, dalang_integral, is_admissible, riesz_verdict

SAMPLES = 100_000
SEED = 20_240_601
SQRT_2PI = math.sqrt(2 * math.pi)

WHITE = SpectralMeasure.white(1)
HEAT = FundamentalSolution("heat", 1)
WAVE = FundamentalSolution("wave", 1)
ADDITIVE = CoefficientPair(Coefficient.constant(1.0), Coefficient.constant(0.0))
MULT = CoefficientPair(Coefficient.sine(1.0, 0.5), Coefficient.constant(0.0))
MULT_DRIFT = CoefficientPair(Coefficient.sine(1.0, 0.5), Coefficient.cosine(0.0, 0.3))
ADD_DRIFT = CoefficientPair(Coefficient.constant(1.0), Coefficient.cosine(0.0, 0.3))
ZERO = InitialData()


def heat_grid(horizon: float) -> GridSpec:
    return GridSpec(1, 4.0, 64, horizon, 64)


WAVE_GRID = GridSpec(1, 4.0, 256, 0.5, 32)
MALLIAVIN_GRID = GridSpec(1, 4.0, 64, 1.0, 64)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return (f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.title}: "
                f"{self.detail} ({self.seconds:.1f} s)")


class Context:
    """Shared ensembles across criteria, optionally cached on disk."""

    def __init__(self, cache_dir=None, threads: int = 2):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.threads = threads
        self._mem = {}
        self._tmp = None

    def workdir(self) -> Path:
        if self._tmp is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="spdelab-acc-")
        return Path(self._tmp.name)

    def ensemble(self, cfg: ExperimentConfig, want_qv=False, samples=SAMPLES):
        key = f"{cfg.hash[:16]}-{cfg.seed}-{samples}-{int(want_qv)}"
        if key in self._mem:
            return self._mem[key]
        path = self.cache_dir / f"{key}.npz" if self.cache_dir else None
        if path is not None and path.is_file():
            z = np.load(path)
            ens = {k: z[k] for k in z.files}
        else:
            e = simulate_ensemble(cfg.grid, cfg.measure, cfg.operator, cfg.coeffs, cfg.data,
                                  samples, cfg.seed, cfg.t_obs, cfg.x_obs, threads=self.threads,
                                  want_qv=want_qv)
            ens = {"values": e.values, "martingale": e.martingale, "drift": e.drift,
                   "i0": np.array(e.i0), "phi_truncated": np.array(e.phi_truncated)}
            if want_qv:
                ens["qv"] = e.qv
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                np.savez(path, **ens)
        self._mem[key] = ens
        return ens


def config(sol, coeffs, grid, t_obs=None, seed=SEED, samples=SAMPLES) -> ExperimentConfig:
    return ExperimentConfig(sol, WHITE, grid, coeffs, ZERO,
                            grid.horizon if t_obs is None else t_obs, 0.0, samples, seed)


# -- criteria -----------------------------------------------------------------------


def criterion_1(ctx) -> CriterionResult:
    """Admissibility verdicts against the closed rule and the split integral."""
    cases = []
    for d in (1, 2, 3):
        mu = SpectralMeasure.white(d)
        cases.append((f"white d={d}", is_admissible(mu).admissible,
                      math.isfinite(dalang_integral(mu)), d == 1))
        for beta in (0.5, 1.0, 1.5, 2.5):
            rule = 0 < beta < min(2, d)
            verdict = riesz_verdict(beta, d).admissible
            if 0 < beta < d:
                split = math.isfinite(dalang_integral(SpectralMeasure.riesz(beta, d)))
            else:
                split = False
            cases.append((f"riesz beta={beta} d={d}", verdict, split, rule))
        mu = SpectralMeasure.exponential(1.0, d)
        cases.append((f"exponential d={d}", is_admissible(mu).admissible,
                      math.isfinite(dalang_integral(mu)), True))
    bad = [c[0] for c in cases if not c[1] == c[2] == c[3]]
    return CriterionResult(1, "Dalang classifier", not bad,
                           f"{len(cases) - len(bad)}/{len(cases)} verdicts agree"
                           + (f"; mismatches {bad}" if bad else ""), {"cases": len(cases)})


def criterion_2(ctx) -> CriterionResult:
    worst = 0.0
    for sol in (HEAT, WAVE):
        for t in (0.01, 0.1, 1.0):
            q, _ = phi_quadrature(WHITE, sol, t)
            exact = phi_closed_form(WHITE, sol, t)
            worst = max(worst, abs(q - exact) / exact)
    times = np.logspace(-3, 0, 13)
    slopes = {}
    for sol, target in ((HEAT, 0.5), (WAVE, 2.0)):
        prof = phi_profile(WHITE, sol, times, method="quadrature")
        slopes[sol.kind] = loglog_slope(times, prof.values)
    ok = (worst < 1e-4 and abs(slopes["heat"] - 0.5) <= 0.02
          and abs(slopes["wave"] - 2.0) <= 0.02)
    return CriterionResult(2, "Phi closed forms", ok,
                           f"max rel err {worst:.2e}, slopes heat {slopes['heat']:.4f} "
                           f"wave {slopes['wave']:.4f}", {"rel_err": worst, **slopes})


def criterion_3(ctx) -> CriterionResult:
    taus = gamma_grid()
    heat = phi_profile(WHITE, HEAT, taus, method="quadrature")
    wave = phi_profile(WHITE, WAVE, taus, method="quadrature")
    c_heat = certify_gamma(heat, 1.0)
    c_wave = certify_gamma(wave, 3.0)
    c_bad = certify_gamma(heat, 0.3)
    ok = c_heat.valid and c_wave.valid and not c_bad.valid
    return CriterionResult(3, "gamma certificates", ok,
                           f"heat g=1 {'valid' if c_heat.valid else 'invalid'}, "
                           f"wave g=3 {'valid' if c_wave.valid else 'invalid'}, "
                           f"heat g=0.3 {'valid' if c_bad.valid else 'invalid'}",
                           {"heat": c_heat.valid, "wave": c_wave.valid, "heat_0.3": c_bad.valid})


def gaussian_config() -> ExperimentConfig:
    return config(HEAT, ADDITIVE, heat_grid(0.5))


def _cli_simulate(ctx, cfg, threads, name):
    """Run ``spdelab simulate`` and return (samples.csv bytes, manifest dict)."""
    work = ctx.workdir()
    cfg_path = work / "gaussian.toml"
    if not cfg_path.is_file():
        cfg_path.write_text(dumps(cfg))
    out = work / name
    if not (out / "manifest.json").is_file():
        code = cli.main(["simulate", "--config", str(cfg_path), "--out", str(out),
                         "--threads", str(threads)])
        if code != 0:
            raise RuntimeError(f"simulate exited with {code}")
    return (out / "samples.csv").read_bytes(), cli.read_manifest(out)


def criterion_4(ctx) -> CriterionResult:
    cfg = gaussian_config()
    _, man = _cli_simulate(ctx, cfg, 1, "threads1")
    x = cli.read_samples(ctx.workdir() / "threads1" / "samples.csv")
    phi_t = man["phi_truncated"]
    ks = stats.kstest(x, stats.norm(0.0, math.sqrt(phi_t)).cdf).statistic
    est = estimate_density(x)
    fit = verify_upper_envelope(est, phi_t, man["i0"], 0.0, cfg.t_obs)
    c1n = fit.c1 * SQRT_2PI
    ok = ks < 0.01 and fit.passed and 0.95 <= c1n <= 1.1 and 1.9 <= fit.c2 <= 2.3
    return CriterionResult(4, "Gaussian exact case", ok,
                           f"KS {ks:.4f}, c1*sqrt(2pi) {c1n:.4f}, c2 {fit.c2:.4f}, n {x.size}",
                           {"ks": ks, "c1": fit.c1, "c2": fit.c2})


def criterion_5(ctx) -> CriterionResult:
    add = ctx.ensemble(gaussian_config())
    phi_t = float(add["phi_truncated"])
    m = add["martingale"]
    var_add = m.var(ddof=1)
    rel = abs(var_add / phi_t - 1.0)
    cfg = config(HEAT, MULT, heat_grid(0.5))
    mult = ctx.ensemble(cfg, want_qv=True, samples=20_000)
    mm = mult["martingale"]
    s_sup = MULT.sigma.sup
    var_m = mm.var(ddof=1)
    se = math.sqrt(np.var((mm - mm.mean()) ** 2, ddof=1) / mm.size)
    bound = s_sup**2 * phi_t
    qv = mult["qv"]
    ok = rel < 0.02 and var_m <= bound + 3 * se and qv.max() <= bound * (1 + 1e-12)
    return CriterionResult(5, "variance identity and QV bound", ok,
                           f"additive Var M/Phi_trunc - 1 = {rel:+.4f}; multiplicative Var M "
                           f"{var_m:.4f} <= {bound:.4f} (+3se {3 * se:.4f}), max <M> "
                           f"{qv.max():.4f}", {"rel": rel, "var_mult": var_m, "bound": bound})


def _envelope_run(ctx, sol, grid):
    cfg = config(sol, MULT_DRIFT, grid)
    ens = ctx.ensemble(cfg)
    x = ens["values"]
    phi_t = float(ens["phi_truncated"])
    c3 = drift_constant(MULT_DRIFT, sol, cfg.t_obs)
    est = estimate_density(x)
    fit = verify_upper_envelope(est, phi_t, float(ens["i0"]), c3, cfg.t_obs)
    tail = tail_decay_fit(est, float(ens["i0"]), phi_t, fit.c2)
    return fit, tail


def criterion_6(ctx) -> CriterionResult:
    parts, ok, metrics = [], True, {}
    for sol, grid in ((HEAT, heat_grid(0.5)), (WAVE, WAVE_GRID)):
        fit, tail = _envelope_run(ctx, sol, grid)
        good = fit.passed and tail.excludes_zero
        ok &= good
        parts.append(f"{sol.kind}: {fit.status} c1 {fit.c1:.3f} c2 {fit.c2:.3f} c3 {fit.c3:.3f}, "
                     f"a {tail.a:.3f}+-{tail.ci:.3f}")
        metrics[sol.kind] = {"c1": fit.c1, "c2": fit.c2, "c3": fit.c3, "a": tail.a,
                             "a_ci": tail.ci}
    return CriterionResult(6, "upper envelope, multiplicative", ok, "; ".join(parts), metrics)


def criterion_7(ctx) -> CriterionResult:
    cfg = config(HEAT, ADD_DRIFT, heat_grid(0.1))
    ens = ctx.ensemble(cfg)
    x = ens["values"]
    m = float(x.mean())
    e_abs = float(np.abs(x - m).mean())
    rep = two_sided_check(estimate_density(x), float(ens["phi_truncated"]), m, e_abs)
    return CriterionResult(7, "two-sided additive bounds", bool(rep.passed),
                           f"C1 {rep.C1:.3f} C2 {rep.C2:.3f} ratio {rep.ratio:.3f}",
                           rep.to_dict())


def criterion_8(ctx) -> CriterionResult:
    g = MALLIAVIN_GRID
    # (a) additive: explicit kernel
    s0 = 0.7
    coeffs = CoefficientPair(Coefficient.constant(s0), Coefficient.constant(0.0))
    scheme = make_scheme(g, HEAT, WHITE, coeffs, ZERO)
    res = solve_path(g, WHITE, HEAT, coeffs, ZERO, seed=SEED)
    ker = derivative_kernel(res, scheme, g.horizon, 0.0)
    exact = s0 * scheme.reflected_kernels(g.steps, (g.index_of(0.0),))
    err_k = float(np.max(np.abs(ker.values - exact)) / np.max(np.abs(exact)))
    norm = window_norm(ker, 0.0, g.horizon).value
    target = s0**2 * scheme.phi_truncated(g.steps)
    err_n = abs(norm / target - 1.0)
    ok_a = err_k < 1e-10 and err_n < 1e-6
    # (b), (c) multiplicative scaling
    deltas = g.dt * np.array([1, 2, 4, 8, 16, 32])
    rep = scaling_experiment(g, WHITE, HEAT, MULT, ZERO, deltas, 1000, SEED,
                             t_grid=np.round(np.linspace(0.1, 1.0, 10) / g.dt) * g.dt)
    ok_b = 0.85 <= rep.slope <= 1.15
    ok_c = rep.ratio < 5.0
    return CriterionResult(8, "Malliavin scalings", ok_a and ok_b and ok_c,
                           f"(a) kernel err {err_k:.1e}, norm err {err_n:.1e}; (b) slope "
                           f"{rep.slope:.3f}+-{rep.slope_se:.3f}; (c) ratio {rep.ratio:.3f}, "
                           f"positivity failures {rep.positivity_failures}",
                           {"kernel_err": err_k, "norm_err": err_n, **rep.to_dict()})


def criterion_9(ctx) -> CriterionResult:
    rows = directional_check(MALLIAVIN_GRID, WHITE, HEAT, MULT_DRIFT, ZERO, SEED, 1.0, 0.0,
                             n_directions=5, eps=1e-4)
    worst = max(r["relative"] for r in rows)
    worst_n = max(r["normalized"] for r in rows)
    return CriterionResult(9, "noise directional duality", worst < 1e-2,
                           f"max relative error {worst:.2e}, max error/|h| {worst_n:.2e}",
                           {"relative": worst, "normalized": worst_n})


def criterion_10(ctx) -> CriterionResult:
    cfg = gaussian_config()
    a, _ = _cli_simulate(ctx, cfg, 1, "threads1")
    b, _ = _cli_simulate(ctx, cfg, max(2, ctx.threads), "threadsN")
    same = a == b
    return CriterionResult(10, "determinism across thread counts", same,
                           f"samples.csv {'byte-identical' if same else 'DIFFERS'} "
                           f"({len(a)} bytes)", {"identical": same})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}
# wall-clock budgets in seconds; criterion 6 covers two operators
BUDGETS = {1: 10, 2: 30, 3: 10, 4: 300, 5: 300, 6: 1800, 7: 600, 8: 1800, 9: 120, 10: 600}


def run_criterion(number: int, ctx: Context) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number](ctx)
    except Exception as exc:  # a crash is a failed criterion, reported as such
        res = CriterionResult(number, CRITERIA[number].__name__, False,
                              f"error {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    if res.seconds > BUDGETS[number]:
        res.passed = False
        res.detail += f"; over the {BUDGETS[number]} s budget"
    return res


def run_all(cache_dir=None, only=None, threads: int = 2, stream=sys.stdout):
    ctx = Context(cache_dir, threads)
    out = []
    for i in sorted(only or CRITERIA):
        r = run_criterion(i, ctx)
        print(r.line(), file=stream, flush=True)
        out.append(r)
    return out
