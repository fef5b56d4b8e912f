import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdelab.coefficients import Coefficient, CoefficientPair, InitialData, Profile

COEFFS = [Coefficient.constant(1.5), Coefficient.sine(1.0, 0.5), Coefficient.cosine(0.0, 0.3),
          Coefficient.affine_clamped(0.2, 2.0, -1.0, 3.0), Coefficient.affine_clamped(0.0, 1.0, 0.5, 2.0)]


@pytest.mark.parametrize("c", COEFFS, ids=lambda c: c.kind)
def test_sup_and_lower_bounds_on_grid(c):
    z = np.linspace(-20, 20, 40001)
    v = np.abs(c(z))
    assert v.max() <= c.sup + 1e-12
    assert v.min() >= c.lower - 1e-12
    assert v.max() == pytest.approx(c.sup, abs=1e-3)


@pytest.mark.parametrize("c", COEFFS, ids=lambda c: c.kind)
def test_derivative_matches_differences(c):
    z = np.linspace(-5, 5, 1001) + 1e-3
    h = 1e-6
    fd = (c(z + h) - c(z - h)) / (2 * h)
    smooth = np.abs(fd - c.derivative(z)) < 1e-5
    # affine clamp differs only next to its two kinks
    assert smooth.mean() > 0.99
    assert np.abs(c.derivative(z)).max() <= c.sup_d1 + 1e-12


def test_lower_values():
    assert Coefficient.sine(1.0, 0.5).lower == 0.5
    assert Coefficient.affine_clamped(0.0, 1.0, -1.0, 1.0).lower == 0.0
    assert Coefficient.constant(-2.0).lower == 2.0


def test_constantness():
    assert Coefficient.constant(3).is_constant
    assert Coefficient.sine(1.0, 0.0).is_constant
    assert not Coefficient.cosine(0.0, 0.3).is_constant
    assert CoefficientPair(Coefficient.constant(1.0), Coefficient.sine(0, 1)).additive


def test_validation():
    with pytest.raises(ValueError):
        Coefficient("exp", {})
    with pytest.raises(ValueError):
        Coefficient("sine", {"a0": 1.0})
    with pytest.raises(ValueError):
        Coefficient.affine_clamped(0, 1, 2, 1)


@pytest.mark.parametrize("c", COEFFS, ids=lambda c: c.kind)
def test_roundtrip(c):
    assert Coefficient.from_dict(c.to_dict()) == c


def test_pair_defaults():
    p = CoefficientPair.from_dict({})
    assert p.sigma == Coefficient.constant(1.0) and p.b == Coefficient.constant(0.0)
    p = CoefficientPair.from_dict({"sigma": {"kind": "sine", "a0": 1, "a1": 0.5}, "b": 0.3})
    assert p.c == 0.5 and p.b.sup == 0.3
    assert CoefficientPair.from_dict(p.to_dict()) == p


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_sine_second_derivative_bound(a0, a1):
    c = Coefficient.sine(a0, a1)
    z = np.linspace(-4, 4, 2001)
    d2 = np.gradient(c.derivative(z), z)
    assert np.abs(d2[5:-5]).max() <= c.sup_d2 + 1e-4


def test_profile_values():
    assert Profile.constant(2.0)(np.zeros(3)).tolist() == [2.0] * 3
    m = Profile.mode(0.25, 2.0)
    assert m(np.array([0.0, 1.0])) == pytest.approx([2.0, 0.0], abs=1e-12)
    b = Profile.bump(0.5, 1.0, 3.0)
    assert b(np.array([0.5, 1.5, 2.0])) == pytest.approx([3.0, 0.0, 0.0])
    assert b.support_radius() == 1.0 and Profile.zero().support_radius() == math.inf


def test_profile_2d():
    m = Profile.mode([0.5, 0.0])
    x = np.array([[1.0, 0.3], [0.0, 0.0]])
    assert m(x, dim=2) == pytest.approx([-1.0, 1.0])
    b = Profile.bump([0.0, 0.0], 1.0)
    assert b(np.array([[0.0, 0.0], [0.6, 0.8]]), dim=2) == pytest.approx([1.0, 0.0])


@pytest.mark.parametrize("p", [Profile.constant(1.3), Profile.mode(0.75, 2.0), Profile.bump(0.3, 0.8, 1.5)],
                         ids=lambda p: p.kind)
def test_antiderivative(p):
    x = np.linspace(-3, 3, 601)
    F = p.antiderivative_1d(x)
    assert np.gradient(F, x)[2:-2] == pytest.approx(p(x)[2:-2], abs=2e-3)


def test_periodic_antiderivative_of_bump():
    p = Profile.bump(0.0, 0.5, 2.0)
    L = 4.0
    x = np.linspace(-10, 10, 4001)
    F = p.antiderivative_1d(x, length=L)
    assert np.gradient(F, x)[2:-2] == pytest.approx(p.periodic(x, L)[2:-2], abs=1e-2)
    # one period adds the bump mass
    assert p.antiderivative_1d(np.array([3.0]), L)[0] - p.antiderivative_1d(np.array([-1.0]), L)[0] == \
        pytest.approx(2.0 * 0.5)
    with pytest.raises(ValueError):
        Profile.bump(0.0, 3.0).antiderivative_1d(x, length=L)


def test_initial_data_roundtrip():
    d = InitialData(Profile.mode(0.5), Profile.bump(0.0, 1.0))
    assert InitialData.from_dict(d.to_dict()).to_dict() == d.to_dict()
    assert InitialData.from_dict(None).u0.sup == 0.0
    with pytest.raises(ValueError):
        Profile("gauss", {})
    with pytest.raises(ValueError):
        Profile.bump(0.0, 0.0)
