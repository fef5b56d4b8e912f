import math

import numpy as np
import pytest

from spdelab.coefficients import Coefficient, CoefficientPair, InitialData, Profile
from spdelab.fundamental import FundamentalSolution
from spdelab.noise import GridSpec
from spdelab.phi import phi
from spdelab.solver import (SchemeError, block_size, drift_part, initial_contribution,
                            make_scheme, martingale_part, moment_survey, quadratic_variation,
                            simulate_ensemble, solve_path)
from spdelab.spectral import SpectralMeasure

HEAT = FundamentalSolution("heat", 1)
WAVE = FundamentalSolution("wave", 1)
WHITE = SpectralMeasure.white(1)
ADD = CoefficientPair(Coefficient.constant(1.0), Coefficient.constant(0.0))
MULT = CoefficientPair(Coefficient.sine(1.0, 0.5), Coefficient.cosine(0.0, 0.3))
ZERO = InitialData()
HG = GridSpec(1, 4.0, 64, 0.5, 64)
WG = GridSpec(1, 4.0, 128, 1.0, 32)


def test_heat_phi_truncated_oracle():
    # dt sum_j sum_k (1/L) exp(-8 pi^2 (k/L)^2 (j - 1/2) dt)
    k = np.fft.fftfreq(HG.modes, d=HG.h)
    j = np.arange(1, HG.steps + 1)[:, None]
    oracle = HG.dt * np.sum(np.exp(-8 * math.pi**2 * k**2 * (j - 0.5) * HG.dt) / HG.length)
    scheme = make_scheme(HG, HEAT, WHITE, ADD, ZERO)
    assert scheme.phi_truncated(HG.steps) == pytest.approx(oracle, rel=1e-13)
    assert scheme.phi_truncated(HG.steps) == pytest.approx(0.27240842741704446, rel=1e-13)
    # below the continuum value, within the truncation and time-step error
    assert scheme.phi_truncated(HG.steps) < phi(WHITE, HEAT, 0.5)


def test_wave_phi_truncated_is_exact():
    # lattice cone: dt sum_j h (2j - 1) / 4 = T^2 / 4 when h = dt
    g = GridSpec(1, 4.0, 256, 0.5, 32)
    scheme = make_scheme(g, WAVE, WHITE, ADD, ZERO)
    assert scheme.phi_truncated(32) == pytest.approx(0.0625, rel=1e-13)
    assert scheme.phi_truncated(16) == pytest.approx(0.25**2 / 4, rel=1e-13)


def test_wave_grid_constraints():
    with pytest.raises(ValueError):
        make_scheme(GridSpec(1, 4.0, 64, 1.0, 32), WAVE, WHITE, ADD, ZERO)
    with pytest.raises(ValueError):
        make_scheme(GridSpec(1, 1.0, 32, 1.0, 32), WAVE, WHITE, ADD, ZERO)
    with pytest.raises(NotImplementedError):
        make_scheme(HG, FundamentalSolution("damped_wave", 1), WHITE, ADD, ZERO)


def test_inadmissible_measure_refused():
    g = GridSpec(2, 2.0, 16, 0.5, 8)
    with pytest.raises(ValueError):
        make_scheme(g, FundamentalSolution("heat", 2), SpectralMeasure.white(2), ADD, ZERO)


def test_heat_drift_only_is_exact():
    coeffs = CoefficientPair(Coefficient.constant(0.0), Coefficient.constant(0.7))
    res = solve_path(HG, WHITE, HEAT, coeffs, ZERO, seed=1)
    assert np.allclose(res.u[-1], 0.7 * 0.5, atol=1e-14)
    assert np.allclose(res.martingale, 0.0)


def test_wave_drift_only_is_exact():
    coeffs = CoefficientPair(Coefficient.constant(0.0), Coefficient.constant(0.7))
    res = solve_path(WG, WHITE, WAVE, coeffs, ZERO, seed=1)
    # Psi(T) = T^2 / 2 for the wave kernel
    assert np.allclose(res.u[-1], 0.7 * 0.5, atol=1e-13)


def test_wave_finite_speed():
    g = WG
    dw = np.zeros((g.steps, g.modes))
    dw[0, g.index_of(0.0)] = 1.0
    res = solve_path(g, WHITE, WAVE, ADD, ZERO, increments=dw)
    x = g.coords()
    for n in range(1, g.steps + 1):
        outside = np.abs(x) > n * g.dt + 1e-12
        assert np.abs(res.u[n][outside]).max() < 1e-15


def test_heat_mode_initial_data():
    f = 0.5
    data = InitialData(Profile.mode(f, 2.0))
    t = 0.3
    x = HG.coords()
    grid_val = initial_contribution(HEAT, data, t, x, HG)
    exact = 2.0 * math.exp(-4 * math.pi**2 * f * f * t) * np.cos(2 * math.pi * f * x)
    assert grid_val == pytest.approx(exact, abs=1e-12)
    assert initial_contribution(HEAT, data, t, x) == pytest.approx(exact, abs=1e-14)


def test_wave_dalembert():
    data = InitialData(Profile.mode(0.5), Profile.constant(1.0))
    x = np.linspace(-1, 1, 11)
    t = 0.4
    got = initial_contribution(WAVE, data, t, x)
    exact = np.cos(math.pi * t) * np.cos(math.pi * x) + t
    assert got == pytest.approx(exact, abs=1e-13)


def test_heat_bump_needs_grid():
    with pytest.raises(ValueError):
        initial_contribution(HEAT, InitialData(Profile.bump(0.0, 1.0)), 0.1, 0.0)


def test_decomposition_is_exact():
    res = solve_path(HG, WHITE, HEAT, MULT, InitialData(Profile.mode(0.25)), seed=4)
    assert np.allclose(res.u, res.i0 + res.martingale + res.drift, atol=1e-13)
    scheme = make_scheme(HG, HEAT, WHITE, MULT, InitialData(Profile.mode(0.25)))
    j = HG.index_of(0.0)
    m = martingale_part(res, scheme, 0.5, 0.0)
    d = drift_part(res, scheme, 0.5, 0.0)
    assert m[-1] == pytest.approx(res.martingale[-1, j], abs=1e-13)
    assert d[-1] == pytest.approx(res.drift[-1, j], abs=1e-13)


def test_wave_decomposition():
    res = solve_path(WG, WHITE, WAVE, MULT, ZERO, seed=4)
    scheme = make_scheme(WG, WAVE, WHITE, MULT, ZERO)
    m = martingale_part(res, scheme, 1.0, 0.0)
    assert m[-1] == pytest.approx(res.martingale[-1, WG.index_of(0.0)], abs=1e-13)


def test_additive_quadratic_variation():
    res = solve_path(HG, WHITE, HEAT, ADD, ZERO, seed=2)
    scheme = make_scheme(HG, HEAT, WHITE, ADD, ZERO)
    qv = quadratic_variation(res, scheme, 0.5, 0.0)
    assert qv[-1] == pytest.approx(scheme.phi_truncated(64), rel=1e-12)
    assert np.all(np.diff(qv) >= 0)


def test_bad_increments_shape():
    with pytest.raises(ValueError):
        solve_path(HG, WHITE, HEAT, ADD, ZERO, increments=np.zeros((3, 64)))
    with pytest.raises(ValueError):
        solve_path(HG, WHITE, HEAT, ADD, ZERO)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reported():
    dw = np.zeros((HG.steps, HG.modes))
    dw[0, 0] = np.inf
    with pytest.raises(SchemeError):
        solve_path(HG, WHITE, HEAT, ADD, ZERO, increments=dw)


def test_ensemble_variance_matches_phi_truncated():
    ens = simulate_ensemble(HG, WHITE, HEAT, ADD, ZERO, 4000, seed=3, t_obs=0.5)
    se = ens.phi_truncated * math.sqrt(2 / ens.n)
    assert ens.values.var(ddof=1) == pytest.approx(ens.phi_truncated, abs=5 * se)
    assert abs(ens.values.mean()) < 5 * math.sqrt(ens.phi_truncated / ens.n)


def test_ensemble_matches_single_paths():
    ens = simulate_ensemble(HG, WHITE, HEAT, MULT, ZERO, 5, seed=9, t_obs=0.25, x_obs=0.5)
    j = HG.index_of(0.5)
    for p in range(5):
        res = solve_path(HG, WHITE, HEAT, MULT, ZERO, seed=9, path=p)
        assert ens.values[p] == pytest.approx(res.u[32, j], abs=1e-13)


def test_ensemble_thread_invariance():
    a = simulate_ensemble(HG, WHITE, HEAT, MULT, ZERO, 300, seed=5, t_obs=0.5, threads=1)
    b = simulate_ensemble(HG, WHITE, HEAT, MULT, ZERO, 300, seed=5, t_obs=0.5, threads=3)
    assert np.array_equal(a.values, b.values)
    assert block_size(HG) == 256


def test_ensemble_qv_and_snapshots():
    ens = simulate_ensemble(HG, WHITE, HEAT, MULT, ZERO, 200, seed=5, t_obs=0.5, want_qv=True,
                            snapshot_times=(0.25, 0.5))
    s = MULT.sigma
    phi_t = ens.phi_truncated
    assert np.all(ens.qv <= s.sup**2 * phi_t * (1 + 1e-12))
    assert np.all(ens.qv >= s.lower**2 * phi_t * (1 - 1e-12))
    table = moment_survey(ens, ps=(2,))
    assert set(table[2]["moments"]) == {0.25, 0.5}
    assert ens.to_dict()["samples"] == 200


def test_moment_survey_needs_snapshots():
    ens = simulate_ensemble(HG, WHITE, HEAT, ADD, ZERO, 3, seed=5, t_obs=0.5)
    with pytest.raises(ValueError):
        moment_survey(ens)


def test_heat_2d_runs():
    g = GridSpec(2, 2.0, 16, 0.25, 16)
    mu = SpectralMeasure.riesz(1.0, 2)
    ens = simulate_ensemble(g, mu, FundamentalSolution("heat", 2), ADD, ZERO, 2000, seed=1,
                            t_obs=0.25, x_obs=(0.0, 0.0))
    se = ens.phi_truncated * math.sqrt(2 / ens.n)
    assert ens.values.var(ddof=1) == pytest.approx(ens.phi_truncated, abs=5 * se)
