import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from spdelab.spectral import (IndeterminateIntegral, NoClosedFormPair, SpectralMeasure,
                              dalang_integral, is_admissible, kernel_of, riesz_constant,
                              riesz_verdict, sphere_area, weighted_mass)

# Gaussian panel: phi_a(x) = exp(-pi a |x|^2), F phi_a(xi) = a^(-d/2) exp(-pi |xi|^2 / a)
PANEL = (0.3, 0.7, 1.0, 2.0, 5.0)


def _phi(a):
    return lambda r: np.exp(-math.pi * a * np.asarray(r) ** 2)


def _fphi(a, d):
    return lambda r: a ** (-d / 2) * np.exp(-math.pi * np.asarray(r) ** 2 / a)


MEASURES = [SpectralMeasure.white(1), SpectralMeasure.white(2),
            SpectralMeasure.riesz(0.5, 1), SpectralMeasure.riesz(1.0, 2),
            SpectralMeasure.riesz(1.5, 3), SpectralMeasure.exponential(1.0, 1),
            SpectralMeasure.exponential(0.5, 2), SpectralMeasure.exponential(2.0, 3)]


@pytest.mark.parametrize("mu", MEASURES, ids=lambda m: f"{m.kind}-{m.dim}")
@pytest.mark.parametrize("a", PANEL)
def test_fourier_pair_duality(mu, a):
    lam = kernel_of(mu)
    lhs = lam.pair(_phi(a))
    rhs = mu.integrate_radial(_fphi(a, mu.dim))
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_riesz_pair_d1_against_direct_quadrature():
    # F[c |x|^-1/2](xi) = |xi|^-1/2: check on cos-transform at xi = 1 against a Gaussian
    beta = 0.5
    c = riesz_constant(beta, 1)
    a = 1.0
    lhs = 2 * integrate.quad(lambda x: c * x**-beta * math.exp(-math.pi * a * x * x), 0, np.inf)[0]
    rhs = 2 * integrate.quad(lambda r: r ** (beta - 1) * math.exp(-math.pi * r * r / a), 0, np.inf)[0]
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_white_kernel_is_dirac():
    lam = kernel_of(SpectralMeasure.white(1))
    assert lam.representation == "dirac"
    assert lam.pair(lambda r: 3.0 + r) == 3.0
    with pytest.raises(TypeError):
        lam(0.3)


def test_exponential_kernel_values():
    lam = kernel_of(SpectralMeasure.exponential(1.0, 1))
    assert lam(np.array([0.0, 1.0])) == pytest.approx([1.0, math.exp(-1)])
    # total mass of the spectral measure is Lambda(0) = 1
    assert SpectralMeasure.exponential(0.7, 2).integrate_radial(lambda r: 1.0) == pytest.approx(1.0, rel=1e-8)


def test_riesz_kernel_singular():
    lam = kernel_of(SpectralMeasure.riesz(1.0, 2))
    assert lam.singular_at_origin
    assert np.isinf(lam(np.array([[0.0, 0.0]]))[0])


def test_atoms_have_no_pair():
    mu = SpectralMeasure.from_atoms([[1.0], [-1.0]], [0.5, 0.5], 1)
    with pytest.raises(NoClosedFormPair):
        kernel_of(mu)


def test_atoms_need_mirrors():
    with pytest.raises(ValueError):
        SpectralMeasure.from_atoms([[1.0]], [1.0], 1)
    with pytest.raises(ValueError):
        SpectralMeasure.from_atoms([[1.0], [-1.0]], [1.0, 2.0], 1)


def test_dalang_white_d1_is_pi():
    oracle = integrate.quad(lambda x: 1.0 / (1.0 + x * x), -np.inf, np.inf)[0]
    assert dalang_integral(SpectralMeasure.white(1)) == pytest.approx(oracle, rel=1e-12)
    assert dalang_integral(SpectralMeasure.white(1), method="quadrature") == pytest.approx(math.pi, rel=1e-8)


def test_white_d2_diverges():
    assert dalang_integral(SpectralMeasure.white(2)) == math.inf
    assert dalang_integral(SpectralMeasure.white(2), method="quadrature") == math.inf


@pytest.mark.parametrize("beta,d", [(0.5, 1), (1.0, 2), (1.5, 2), (1.5, 3), (0.7, 3)])
def test_riesz_closed_vs_shells(beta, d):
    mu = SpectralMeasure.riesz(beta, d)
    closed = weighted_mass(mu, 1.0, method="closed")
    shells = weighted_mass(mu, 1.0, method="quadrature")
    assert shells == pytest.approx(closed, rel=1e-7)


def test_riesz_closed_form_d1_direct():
    # int |xi|^(beta - 1) / (1 + xi^2) over R for beta = 0.5
    b = 0.5
    oracle = 2 * integrate.quad(lambda x: x ** (b - 1) / (1 + x * x), 0, 1)[0] \
        + 2 * integrate.quad(lambda x: x ** (b - 1) / (1 + x * x), 1, np.inf)[0]
    assert dalang_integral(SpectralMeasure.riesz(b, 1)) == pytest.approx(oracle, rel=1e-9)
    assert oracle == pytest.approx(math.pi / math.sin(math.pi * b / 2), rel=1e-9)


def test_exponential_d1_against_direct_quadrature():
    mu = SpectralMeasure.exponential(1.0, 1)
    dens = lambda x: 2.0 / (1.0 + (2 * math.pi * x) ** 2)
    oracle = 2 * integrate.quad(lambda x: dens(x) / (1 + x * x), 0, np.inf)[0]
    assert dalang_integral(mu) == pytest.approx(oracle, rel=1e-8)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_admissibility_rule_grid(d):
    for beta in np.round(np.arange(0.1, 2.51, 0.1), 10):
        rule = 0 < beta < min(2, d)
        assert riesz_verdict(float(beta), d).admissible == rule, (beta, d)


def test_admissibility_split_oracle_agrees():
    for d in (2, 3):
        for beta in (0.5, 1.5, 1.99, 2.01, 2.5):
            if beta >= d:
                continue
            mu = SpectralMeasure.riesz(beta, d)
            split = math.isfinite(weighted_mass(mu, 1.0, method="quadrature"))
            assert split == (beta < 2), (beta, d)


def test_riesz_order_outside_range_rejected():
    with pytest.raises(ValueError):
        SpectralMeasure.riesz(1.0, 1)
    assert not riesz_verdict(2.5, 1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.55, 1.0), st.floats(0.55, 1.0))
def test_dalang_monotone_in_eta(e1, e2):
    lo, hi = sorted((e1, e2))
    for mu in (SpectralMeasure.white(1), SpectralMeasure.riesz(1.5, 2)):
        assert dalang_integral(mu, hi) <= dalang_integral(mu, lo) * (1 + 1e-12)


def test_eta_range_checked():
    with pytest.raises(ValueError):
        dalang_integral(SpectralMeasure.white(1), 1.5)


def test_admissibility_report():
    rep = is_admissible(SpectralMeasure.white(1)).to_dict(SpectralMeasure.white(1))
    assert rep["kind"] == "white" and rep["finite"] and rep["value"] == pytest.approx(math.pi)
    rep = is_admissible(SpectralMeasure.white(3)).to_dict()
    assert rep["finite"] is False and rep["value"] is None


def test_atoms_weighted_mass():
    mu = SpectralMeasure.from_atoms([[2.0], [-2.0]], [0.25, 0.25], 1)
    assert weighted_mass(mu, 1.0) == pytest.approx(0.5 / 5.0)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("mu", MEASURES + [SpectralMeasure.from_atoms([[1.0], [-1.0]], [1, 1], 1)],
                         ids=lambda m: m.kind)
def test_dict_roundtrip(mu):
    assert SpectralMeasure.from_dict(mu.to_dict()) == mu


def test_unknown_kind():
    with pytest.raises(ValueError):
        SpectralMeasure("matern", 1)
    with pytest.raises(ValueError):
        SpectralMeasure.exponential(-1.0, 1)


def test_indeterminate_is_runtime_error():
    assert issubclass(IndeterminateIntegral, RuntimeError)
