"""Stable heat kernel tables against closed forms and mpmath Fourier inversion."""
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs
from scipy import integrate, special, stats

from fracshe.kernels import (KernelAccuracyError, eval_increment_kernel, eval_kernel, stable_tail_mass,
                             unit_density)
from fracshe.oracle import Q_increment_variance


def mp_p1(a, x):
    """(1/pi) int_0^inf cos(chi x) exp(-chi^alpha) dchi at 30 digits."""
    mp.mp.dps = 30
    f = lambda c: mp.cos(c * x) * mp.exp(-c ** a)  # noqa: E731
    if x == 0:
        return float(mp.quad(f, [0, mp.inf]) / mp.pi)
    return float(mp.quadosc(f, [0, mp.inf], omega=abs(x)) / mp.pi)


# [DERIVED] Gaussian closed form under p_hat = exp(-t chi^2)
@pytest.mark.parametrize("t", [0.01, 0.3, 1.0, 4.0])
def test_gaussian(t):
    xs = np.linspace(-10 * math.sqrt(t), 10 * math.sqrt(t), 401)
    tab = eval_kernel(2.0, t, xs)
    exact = np.exp(-xs ** 2 / (4 * t)) / math.sqrt(4 * math.pi * t)
    assert np.max(np.abs(tab.values - exact)) <= 1e-9


# [DERIVED] value at the origin
@pytest.mark.parametrize("a", [1.1, 1.5, 1.75, 2.0])
@pytest.mark.parametrize("t", [0.05, 1.0, 3.0])
def test_origin(a, t):
    v = eval_kernel(a, t, np.array([0.0])).values[0]
    assert v == pytest.approx(math.gamma(1 / a) / (math.pi * a) * t ** (-1 / a), abs=1e-9)


# [DERIVED] mpmath Fourier inversion, including the tail-series region
@pytest.mark.parametrize("a", [1.2, 1.5, 1.8])
@pytest.mark.parametrize("x", [0.3, 1.7, 4.0, 9.0, 25.0])
def test_mpmath_inversion(a, x):
    assert unit_density(a, np.array([x]))[0][0] == pytest.approx(mp_p1(a, x), abs=1e-10, rel=1e-8)


# [TRIVIAL] scaling p_t(x) = t^{-1/a} p_1(x t^{-1/a})
@settings(max_examples=25, deadline=None)
@given(hs.floats(1.1, 2.0), hs.floats(0.01, 10.0), hs.floats(-20.0, 20.0))
def test_scaling(a, t, x):
    lhs = eval_kernel(a, t, np.array([x])).values[0]
    s = t ** (1 / a)
    rhs = unit_density(a, np.array([x / s]))[0][0] / s
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(hs.floats(1.1, 2.0), hs.floats(0.01, 5.0), hs.floats(0.0, 30.0))
def test_symmetric_positive(a, t, x):
    tab = eval_kernel(a, t, np.array([-x, x]))
    assert tab.values[0] == pytest.approx(tab.values[1], abs=max(tab.quad_error, 1e-15))
    assert tab.values.min() >= -tab.quad_error


# mass on a window of >= 12 scale units, completed by the exact tail mass
@pytest.mark.parametrize("a", [1.5, 2.0])
def test_mass(a):
    t = 0.5
    X = 40 * t ** (1 / a)
    xs = np.linspace(-X, X, 20001)
    tab = eval_kernel(a, t, xs)
    tail = stable_tail_mass(a, X / t ** (1 / a))
    assert tab.mass() + tail == pytest.approx(1.0, abs=1e-6)


def test_fft_matches_quad():
    xs = np.linspace(-8, 8, 1024, endpoint=False)
    a = eval_kernel(1.5, 0.7, xs, method="quad").values
    b = eval_kernel(1.5, 0.7, xs, method="fft").values
    assert np.max(np.abs(a - b)) < 1e-8


def test_errors():
    with pytest.raises(ValueError):
        eval_kernel(1.5, 0.0, np.zeros(1))
    with pytest.raises(ValueError):
        eval_kernel(1.5, 1.0, np.array([np.nan]))
    with pytest.raises(KernelAccuracyError) as e:
        eval_kernel(1.5, 1.0, np.linspace(-3, 3, 7), tol=1e-30)
    assert e.value.achieved > 0


# [TRIVIAL] zero increment
def test_increment_eps_zero():
    tab = eval_increment_kernel(1.5, 1.0, 0.0, np.linspace(-2, 2, 9))
    assert np.all(tab.values == 0.0)


# [TRIVIAL] alpha = 2, eps >> sqrt(t): the two bumps separate
def test_increment_disjoint_bumps():
    t = 1e-3
    xs = np.linspace(-0.5, 1.5, 4001)
    tab = eval_increment_kernel(2.0, t, 1.0, xs)
    p0 = 1 / math.sqrt(4 * math.pi * t)
    assert np.max(tab.values) == pytest.approx(p0, rel=1e-6)


# [DERIVED] Plancherel: int_s0^t ||nabla_eps p_s||^2 ds = Q(eps, t) - Q(eps, s0)
@pytest.mark.parametrize("a", [1.5, 2.0])
def test_increment_plancherel(a):
    t, s0, eps = 1.0, 0.02, 0.25
    xs = np.linspace(-30, 30, 12001)

    def l2(s):
        return np.trapezoid(eval_increment_kernel(a, s, eps, xs).values ** 2, xs)

    val, _ = integrate.quad(l2, s0, t, points=[0.1], epsrel=1e-8)
    ref = Q_increment_variance(a, t, eps).value - Q_increment_variance(a, s0, eps).value
    assert val == pytest.approx(ref, rel=1e-4)


# [DERIVED] Gaussian tail with variance 2
@pytest.mark.parametrize("lam", [0.1, 1.0, 3.0, 7.5])
def test_tail_gaussian(lam):
    assert stable_tail_mass(2.0, lam) == pytest.approx(2 * (1 - stats.norm.cdf(lam / math.sqrt(2))), rel=1e-12)


@pytest.mark.parametrize("a", [1.3, 1.5, 1.8])
def test_tail_against_density(a):
    for lam in (0.5, 2.0, 8.0):
        mass, _ = integrate.quad(lambda x: unit_density(a, np.array([x]))[0][0], 0, lam, limit=200)
        assert stable_tail_mass(a, lam) == pytest.approx(1 - 2 * mass, abs=1e-8)


def test_tail_limits():
    assert stable_tail_mass(1.5, 1e-8) == pytest.approx(1.0, abs=1e-6)
    lam = np.geomspace(1, 100, 30)
    scaled = np.array([v ** 1.5 * stable_tail_mass(1.5, v) for v in lam])
    # lam^a P{|X| > lam} -> 2 Gamma(a) sin(pi a / 2) / pi
    limit = 2 * special.gamma(1.5) * math.sin(0.75 * math.pi) / math.pi
    assert scaled.max() < 2 * limit
    assert scaled[-1] == pytest.approx(limit, rel=2e-2)
    with pytest.raises(ValueError):
        stable_tail_mass(1.5, 0.0)
