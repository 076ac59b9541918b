"""Covariance oracles against mpmath quadrature and their algebraic identities."""
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs

from fracshe.constants import frak_A, frak_B
from fracshe.oracle import (Formula, OracleAccuracyError, Q_first_term, Q_increment_variance, Q_second_term,
                            Q_second_term_bound, S_derivative_variance, S_increment_variance, evaluate,
                            fbm_covariance, linear_moment, localization_Q1_bound, localization_parts,
                            localization_tail)


def mp_Q(a, t, eps):
    """(1/pi) int_0^inf (1 - e^{-2 t chi^a}) (1 - cos eps chi) chi^{-a} dchi at 30 digits."""
    mp.mp.dps = 30
    a, t, eps = mp.mpf(a), mp.mpf(t), mp.mpf(eps)
    f = lambda c: -mp.expm1(-2 * t * c ** a) * (1 - mp.cos(eps * c)) / c ** a  # noqa: E731
    cut = 40 / eps
    head = mp.quad(f, mp.linspace(0, cut, 41))
    # beyond the cut e^{-2 t chi^a} is negligible; the remainder is the bare cosine integral
    g = lambda c: (1 - mp.cos(eps * c)) / c ** a  # noqa: E731
    tail = cut ** (1 - a) / (a - 1) - mp.quadosc(lambda c: mp.cos(eps * c) / c ** a, [cut, mp.inf], omega=eps)
    corr = mp.quad(lambda c: mp.exp(-2 * t * c ** a) * g(c), [cut, mp.inf])
    return float((head + tail - corr) / mp.pi)


@pytest.mark.parametrize("a", [1.5, 2.0])
@pytest.mark.parametrize("t,eps", [(1.0, 0.05), (0.25, 0.2), (2.0, 1.0)])
def test_Q_mpmath(a, t, eps):
    assert Q_increment_variance(a, t, eps).value == pytest.approx(mp_Q(a, t, eps), rel=1e-8)


# [PAPER] first term alone = frak_A^2 eps^{alpha-1}
@settings(max_examples=30, deadline=None)
@given(hs.floats(1.1, 2.0), hs.floats(1e-4, 2.0))
def test_first_term(a, eps):
    r = Q_first_term(a, eps)
    assert r.value == pytest.approx(frak_A(a) ** 2 * eps ** (a - 1), rel=1e-9)
    assert r.formula_id is Formula.Q_first_term


# [TRIVIAL] Q = frak_A^2 eps^{alpha-1} - S increment variance
@settings(max_examples=30, deadline=None)
@given(hs.floats(1.1, 2.0), hs.floats(0.01, 4.0), hs.floats(1e-3, 1.0))
def test_decomposition_identity(a, t, eps):
    q = Q_increment_variance(a, t, eps).value
    s = S_increment_variance(a, t, eps).value
    assert q + s == pytest.approx(frak_A(a) ** 2 * eps ** (a - 1), rel=1e-9)


# [PAPER] (frak_A^2 eps^{a-1} - Q)/eps^2 is positive and below the explicit bound
@pytest.mark.parametrize("a", [1.5, 2.0])
def test_second_term_ratio(a):
    bound = Q_second_term_bound(a, 1.0)
    for k in range(3, 13):
        eps = 2.0 ** -k
        ratio = (frak_A(a) ** 2 * eps ** (a - 1) - Q_increment_variance(a, 1.0, eps).value) / eps ** 2
        assert 0 < ratio <= bound
        assert Q_second_term(a, 1.0, eps).value / eps ** 2 <= bound


# [TRIVIAL] Q increases to frak_A^2 eps^{alpha-1} as t grows
@pytest.mark.parametrize("a", [1.3, 1.5, 2.0])
def test_Q_monotone_in_t(a):
    eps = 0.1
    qs = [Q_increment_variance(a, t, eps).value for t in (0.01, 0.1, 1, 10, 100)]
    assert np.all(np.diff(qs) > 0)
    assert qs[-1] < frak_A(a) ** 2 * eps ** (a - 1)


# [DERIVED] closed form n = 1, alpha = 2, t = 1
def test_S_derivative_value():
    r = S_derivative_variance(2.0, 1.0, 1)
    assert r.value == pytest.approx(math.sqrt(math.pi / 2) / (4 * math.pi), rel=1e-12)
    assert round(r.value, 4) == 0.0997
    parts = dict(r.parts)
    assert parts["quadrature"] == pytest.approx(parts["closed_form"], rel=1e-10)


# [TRIVIAL] doubling t rescales by 2^{-(2n - a + 1)/a}
@pytest.mark.parametrize("a", [1.25, 1.5, 2.0])
@pytest.mark.parametrize("n", [1, 2, 4])
def test_S_derivative_scaling(a, n):
    v1 = S_derivative_variance(a, 0.7, n).value
    v2 = S_derivative_variance(a, 1.4, n).value
    assert math.isfinite(v1)
    assert v2 / v1 == pytest.approx(2 ** (-(2 * n - a + 1) / a), rel=1e-10)
    with pytest.raises(ValueError):
        S_derivative_variance(a, 1.0, 0)


def test_S_increment_small_eps():
    assert S_increment_variance(1.5, 1.0, 0.0).value == 0.0
    ratios = [S_increment_variance(1.5, 1.0, 2.0 ** -k).value / 4.0 ** -k for k in range(3, 12)]
    # smooth in x: Var/eps^2 -> E|S'|^2
    assert ratios[-1] == pytest.approx(S_derivative_variance(1.5, 1.0, 1).value, rel=1e-3)
    assert max(ratios) <= Q_second_term_bound(1.5, 1.0)


# [PAPER] linear moment ~ frak_B eps; alpha = 2 reduces to Q
def test_linear_moment():
    q = Q_increment_variance(2.0, 1.0, 0.1).value
    assert linear_moment(2.0, 1.0, 0.1).value == pytest.approx(q, rel=1e-12)
    for a in (1.5, 1.75):
        r = [linear_moment(a, 1.0, e).value / e for e in (1e-2, 1e-3, 1e-4)]
        assert r[-1] == pytest.approx(frak_B(a), rel=1e-3)
        assert abs(r[-1] - frak_B(a)) < abs(r[0] - frak_B(a))


@settings(max_examples=50, deadline=None)
@given(hs.floats(0.05, 0.5), hs.floats(-5, 5), hs.floats(-5, 5))
def test_fbm_covariance(h, x, y):
    var = fbm_covariance(h, x, x) + fbm_covariance(h, y, y) - 2 * fbm_covariance(h, x, y)
    assert var == pytest.approx(abs(x - y) ** (2 * h), abs=1e-12)
    assert fbm_covariance(h, 0.0, y) == 0.0


def test_fbm_covariance_brownian():
    assert fbm_covariance(0.5, 2.5, 2.5) == pytest.approx(2.5)
    assert fbm_covariance(0.5, 1.0, -1.0) == 0.0
    with pytest.raises(ValueError):
        fbm_covariance(0.7, 1.0, 1.0)


# [PAPER] Q1 bound and A eps^{a-1} beta^{-1/2} dominance
@pytest.mark.parametrize("a", [1.5, 2.0])
def test_localization(a):
    t = 1.0
    vals = {}
    for eps in (1 / 64, 1 / 128, 1 / 256):
        for beta in (4.0, 16.0, 64.0):
            q1, q2, _, _ = localization_parts(a, t, eps, beta)
            assert 0 <= q1 <= localization_Q1_bound(a, eps, beta) * (1 + 1e-9)
            vals[eps, beta] = localization_tail(a, t, eps, beta).value
    scaled = {k: math.log(v) - (a - 1) * math.log(k[0]) + 0.5 * math.log(k[1]) for k, v in vals.items()}
    A = scaled[1 / 64, 4.0]
    assert max(scaled.values()) <= A + 0.05
    # the tail shrinks as the box grows
    assert vals[1 / 256, 64.0] < vals[1 / 256, 16.0] < vals[1 / 256, 4.0]


def test_localization_box_too_tall():
    with pytest.raises(ValueError):
        localization_tail(1.5, 0.01, 0.1, 64.0)


def test_report_and_dispatch():
    r = evaluate("Q_increment", 1.5, 1.0, 0.1)
    d = r.as_dict()
    assert d["formula"] == "Q_increment" and d["value"] > 0 and d["quad_error"] >= 0
    assert evaluate("B_increment", 1.5, eps=0.25).value == pytest.approx(0.25 ** 0.5)
    assert evaluate("localization_tail", 1.5, 1.0, 1 / 64, 16.0).parts
    with pytest.raises(ValueError):
        evaluate("nope", 1.5)
    with pytest.raises(ValueError):
        Q_increment_variance(1.5, 1.0, 0.0)
    with pytest.raises(OracleAccuracyError):
        Q_increment_variance(1.5, 1.0, 0.1, tol=1e-30)
