import math

import numpy as np
import pytest

from spdelab.fundamental import FundamentalSolution
from spdelab.phi import (InadmissibleMeasure, PHI_RTOL_FLAG, certify_gamma, gamma_grid,
                         loglog_slope, phi, phi_closed_form, phi_nested, phi_profile,
                         phi_quadrature, phi_tail, psi)
from spdelab.spectral import SpectralMeasure

HEAT1 = FundamentalSolution("heat", 1)
WAVE1 = FundamentalSolution("wave", 1)
DAMP1 = FundamentalSolution("damped_wave", 1)
WHITE1 = SpectralMeasure.white(1)


@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_heat_white_closed_form(t):
    # int_0^t int exp(-8 pi^2 s xi^2) dxi ds = int_0^t (8 pi s)^(-1/2) ds
    assert phi_closed_form(WHITE1, HEAT1, t) == pytest.approx(math.sqrt(t / (2 * math.pi)), rel=1e-14)
    assert phi_quadrature(WHITE1, HEAT1, t)[0] == pytest.approx(math.sqrt(t / (2 * math.pi)), rel=1e-5)


@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_wave_white_closed_form(t):
    assert phi_quadrature(WHITE1, WAVE1, t)[0] == pytest.approx(t * t / 4, rel=1e-5)


@pytest.mark.parametrize("beta,d", [(0.5, 1), (1.0, 2), (1.5, 3)])
def test_heat_riesz_closed_form(beta, d):
    mu = SpectralMeasure.riesz(beta, d)
    sol = FundamentalSolution("heat", d)
    for t in (0.05, 1.0):
        assert phi_quadrature(mu, sol, t)[0] == pytest.approx(phi_closed_form(mu, sol, t), rel=1e-5)


def test_frozen_values():
    # independent nested (time-outer) quadrature values
    assert phi(SpectralMeasure.riesz(0.5, 1), HEAT1, 1.0) == pytest.approx(1.6217069523, rel=1e-9)
    assert phi(SpectralMeasure.riesz(1.5, 3), FundamentalSolution("wave", 3), 1.0) == \
        pytest.approx(2 * math.sqrt(2) / 3, rel=1e-7)
    assert phi(WHITE1, DAMP1, 1.0) == pytest.approx(0.136980624, rel=1e-7)


CASES = [(WHITE1, DAMP1), (SpectralMeasure.riesz(0.5, 1), WAVE1),
         (SpectralMeasure.exponential(1.0, 1), WAVE1),
         (SpectralMeasure.exponential(1.0, 2), FundamentalSolution("damped_wave", 2)),
         (SpectralMeasure.riesz(1.0, 2), FundamentalSolution("wave", 2)),
         (SpectralMeasure.riesz(1.5, 3), FundamentalSolution("damped_wave", 3))]


@pytest.mark.parametrize("mu,sol", CASES, ids=lambda x: getattr(x, "kind", ""))
@pytest.mark.parametrize("t", [1e-3, 0.1, 1.0])
def test_quadrature_matches_nested(mu, sol, t):
    assert phi_quadrature(mu, sol, t)[0] == pytest.approx(phi_nested(mu, sol, t), rel=1e-6)


@pytest.mark.parametrize("mu,sol", CASES[:3], ids=lambda x: getattr(x, "kind", ""))
def test_window_increment(mu, sol):
    t, delta = 0.8, 0.25
    window = phi_nested(mu, sol, t, a=t - delta)
    assert phi(mu, sol, t) - phi(mu, sol, t - delta) == pytest.approx(window, rel=1e-6)


def test_loglog_slopes():
    times = np.logspace(-3, 0, 13)
    heat = phi_profile(WHITE1, HEAT1, times, method="quadrature")
    wave = phi_profile(WHITE1, WAVE1, times, method="quadrature")
    assert loglog_slope(times, heat.values) == pytest.approx(0.5, abs=0.02)
    assert loglog_slope(times, wave.values) == pytest.approx(2.0, abs=0.02)


def test_profile_at_zero_and_monotone():
    prof = phi_profile(WHITE1, DAMP1, np.linspace(0, 1, 6))
    assert prof.values[0] == 0.0
    assert prof.is_increasing()
    assert not prof.flagged.any()
    rows = list(prof.rows())
    assert rows[0][:3] == (0.0, 0.0, 0.0)


def test_atoms_closed_form():
    mu = SpectralMeasure.from_atoms([[0.5], [-0.5]], [1.0, 1.0], 1)
    t = 0.7
    a = (2 * math.pi * 0.5) ** 2
    exact = 2 * (1 - math.exp(-2 * a * t)) / (2 * a)
    assert phi(mu, HEAT1, t) == pytest.approx(exact, rel=1e-12)


def test_tail_consistency():
    t = 0.5
    cut = 3.0
    total = phi(WHITE1, WAVE1, t)
    head = total - phi_tail(WHITE1, WAVE1, t, cut)
    # head piece by direct radial quadrature of the mode energy
    from scipy import integrate
    direct = 2 * integrate.quad(lambda r: WAVE1.mode_energy(t, np.array([r]))[0], 0, cut,
                                epsabs=0, epsrel=1e-12, limit=200)[0]
    assert head == pytest.approx(direct, rel=1e-8)
    assert phi_tail(WHITE1, WAVE1, t, 0.0) == pytest.approx(total, rel=1e-9)


def test_inadmissible_refused():
    with pytest.raises(InadmissibleMeasure):
        phi(SpectralMeasure.white(2), FundamentalSolution("heat", 2), 1.0)
    with pytest.raises(ValueError):
        phi(WHITE1, FundamentalSolution("heat", 2), 1.0)


def test_psi():
    assert psi(HEAT1, 0.3) == 0.3
    assert psi(WAVE1, 0.4) == pytest.approx(0.08)
    assert psi(DAMP1, 1.0) == pytest.approx(math.exp(-1.0))
    with pytest.raises(ValueError):
        psi(HEAT1, -1)


def test_gamma_certificates():
    taus = gamma_grid()
    heat = phi_profile(WHITE1, HEAT1, taus)
    wave = phi_profile(WHITE1, WAVE1, taus)
    assert certify_gamma(heat, 1.0).valid
    assert certify_gamma(wave, 3.0).valid
    assert certify_gamma(wave, 2.0).valid
    bad = certify_gamma(heat, 0.3)
    assert not bad.valid and "decreases" in bad.diagnostic
    assert not certify_gamma(wave, 1.5).valid


def test_gamma_grid_requirements():
    prof = phi_profile(WHITE1, HEAT1, np.logspace(-2, 0, 10))
    with pytest.raises(ValueError):
        certify_gamma(prof, 1.0)
    prof = phi_profile(WHITE1, HEAT1, np.linspace(0.01, 1, 40))
    with pytest.raises(ValueError):
        certify_gamma(prof, 1.0)
    assert PHI_RTOL_FLAG == 1e-4
