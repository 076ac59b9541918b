"""Deterministic quadrature of the exact second moments of Z, S and the localization residual.

All integrals are of the form

    (1/pi) int_0^inf w(chi) chi^{-alpha} (1 - cos(eps chi)) dchi

with a smooth weight w.  Each one is split at chi = 1/eps: the head is a plain
adaptive quadrature (1 - cos written as 2 sin^2 to avoid cancellation), the
tail is either negligible (exponentially weighted) or summed over half periods.
"""
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from .constants import as_params, gauss_moment_c, cosine_integral
from .kernels import unit_density
from .quadrature import cos_tail_integral


class Formula(str, Enum):
    Q_increment = "Q_increment"
    Q_first_term = "Q_first_term"
    Q_second_term = "Q_second_term"
    S_increment = "S_increment"
    S_derivative_n = "S_derivative_n"
    B_increment = "B_increment"
    linear_moment = "linear_moment"
    localization_tail = "localization_tail"


class OracleAccuracyError(ArithmeticError):
    def __init__(self, formula, achieved, tol):
        super().__init__(f"{formula}: quadrature error {achieved:.3g} exceeds tolerance {tol:.3g}")
        self.achieved = achieved


@dataclass(frozen=True)
class MomentReport:
    value: float
    quad_error: float
    formula_id: Formula
    parts: tuple = ()

    def as_dict(self):
        d = {"formula": self.formula_id.value, "value": self.value, "quad_error": self.quad_error}
        if self.parts:
            d["parts"] = dict(self.parts)
        return d


def _report(formula, value, err, tol, parts=()):
    if err > tol:
        raise OracleAccuracyError(formula.value, err, tol)
    return MomentReport(max(float(value), 0.0), float(err), formula, tuple(parts))


def _quad(f, a, b, points=None, **kw):
    opts = dict(epsabs=1e-16, epsrel=1e-12, limit=500)
    opts.update(kw)
    if points is not None and "weight" not in kw:
        points = [x for x in points if a < x < b]
        if not points:
            points = None
    if "weight" in kw:
        points = None
    val, err = integrate.quad(f, a, b, points=points, **opts)
    return val, err + 1e-16 * abs(val)


def _chi_scale(t, alpha):
    return t ** (-1.0 / alpha)


def _one_minus_cos(x):
    s = np.sin(0.5 * x)
    return 2.0 * s * s


def _weighted_cos_integral(alpha, eps, weight, decay_chi, tail_weight_small):
    """(1/pi) int_0^inf weight(chi) chi^-alpha (1 - cos eps chi) dchi.

    ``decay_chi`` is the scale beyond which weight() is exponentially small (or
    None if weight -> 1); ``tail_weight_small`` says the chi > 1/eps part can be
    done as a single non-oscillatory-in-practice quadrature.
    """
    cut = 1.0 / eps
    bps = [decay_chi * f for f in (0.25, 1.0, 4.0)] if decay_chi else None

    def head_f(c):
        return weight(c) * c ** (-alpha) * _one_minus_cos(eps * c) if c > 0 else 0.0

    head, herr = _quad(head_f, 0.0, cut, points=bps)
    if tail_weight_small:
        hi = max(cut, 40.0 * decay_chi)
        if hi > cut:
            t1, e1 = _quad(lambda c: weight(c) * c ** (-alpha), cut, hi, points=bps)
            t2, e2 = _quad(lambda c: weight(c) * c ** (-alpha), cut, hi, points=bps, weight="cos", wvar=eps)
            tail, terr = t1 - t2, e1 + e2
        else:
            tail, terr = 0.0, 0.0
    else:
        # weight -> 1: split weight = 1 - (1 - weight); the constant part is the
        # scaled cosine tail, the rest decays.
        z_tail, z_err = cos_tail_integral(lambda z: z ** -alpha, 1.0, 1.0)
        const = eps ** (alpha - 1.0) * (1.0 / (alpha - 1.0) - z_tail)
        cerr = eps ** (alpha - 1.0) * z_err
        hi = max(cut, 40.0 * decay_chi)
        if hi > cut:
            def g(c):
                return (1.0 - weight(c)) * c ** (-alpha)
            r1, e1 = _quad(g, cut, hi, points=bps)
            r2, e2 = _quad(g, cut, hi, points=bps, weight="cos", wvar=eps)
            rem, rerr = r1 - r2, e1 + e2
        else:
            rem, rerr = 0.0, 0.0
        tail, terr = const - rem, cerr + rerr
    return (head + tail) / math.pi, (herr + terr) / math.pi


def Q_first_term(p, eps):
    """frak_A^2 eps^{alpha-1} via the cosine integral (not via the closed form)."""
    p = as_params(p)
    v, e = cosine_integral(p, with_error=True)
    scale = eps ** (p.alpha - 1.0) / math.pi
    return MomentReport(v * scale, e * scale, Formula.Q_first_term)


def Q_increment_variance(p, t, eps, tol=1e-9):
    """E|Z_t(x) - Z_t(x - eps)|^2."""
    p = as_params(p)
    if not (t > 0 and eps > 0):
        raise ValueError("t and eps must be positive")
    a = p.alpha
    val, err = _weighted_cos_integral(a, eps, lambda c: -math.expm1(-2.0 * t * c ** a),
                                      _chi_scale(t, a), tail_weight_small=False)
    return _report(Formula.Q_increment, val, err, tol * max(val, eps ** (a - 1.0)))


def Q_second_term(p, t, eps, tol=1e-9):
    """frak_A^2 eps^{alpha-1} - Q, i.e. the part removed by the finite horizon."""
    p = as_params(p)
    a = p.alpha
    val, err = _weighted_cos_integral(a, eps, lambda c: math.exp(-2.0 * t * c ** a),
                                      _chi_scale(t, a), tail_weight_small=True)
    return _report(Formula.Q_second_term, val, err, tol * max(val, eps ** (a - 1.0)))


def S_increment_variance(p, t, eps, tol=1e-9):
    """E|S(x) - S(x - eps)|^2; identical integral to the second term of Q."""
    p = as_params(p)
    if eps == 0:
        return MomentReport(0.0, 0.0, Formula.S_increment)
    r = Q_second_term(p, t, eps, tol)
    return MomentReport(r.value, r.quad_error, Formula.S_increment)


def Q_second_term_bound(p, t):
    """(1/pi) int e^{-2 t chi^alpha} chi^{2-alpha} dchi: the O(eps^2) constant."""
    a = as_params(p).alpha
    return math.gamma((3.0 - a) / a) / (math.pi * a) * (2.0 * t) ** (-(3.0 - a) / a)


def S_derivative_variance(p, t, n=1, tol=1e-10):
    """E|d^n S / dx^n|^2 in closed form, confirmed by quadrature."""
    p = as_params(p)
    a = p.alpha
    if n < 1:
        raise ValueError("n must be >= 1 (use S_increment_variance for n = 0)")
    expo = (2 * n - a + 1.0) / a
    closed = (2.0 * t) ** (-expo) * math.gamma(expo) / (2.0 * math.pi * a)
    cs = _chi_scale(t, a)
    quad, qerr = 0.0, 0.0
    edges = [0.0, cs, 4 * cs, 16 * cs, 64 * cs]
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = _quad(lambda c: math.exp(-2.0 * t * c ** a) * c ** (2 * n - a), lo, hi)
        quad += v
        qerr += e
    v, e = _quad(lambda c: math.exp(-2.0 * t * c ** a) * c ** (2 * n - a), edges[-1], np.inf)
    quad = (quad + v) / (2.0 * math.pi)
    qerr = (qerr + e) / (2.0 * math.pi)
    gap = abs(quad - closed)
    return _report(Formula.S_derivative_n, closed, max(gap, qerr), tol * closed,
                   parts=(("quadrature", quad), ("closed_form", closed)))


def linear_moment(p, t, eps, tol=1e-9):
    """E|nabla_eps Z_t|^{2/(alpha-1)} via the Gaussian moment identity."""
    p = as_params(p)
    q = Q_increment_variance(p, t, eps, tol)
    e = 1.0 / (p.alpha - 1.0)
    c = gauss_moment_c(p)
    val = c * q.value ** e
    err = c * e * q.value ** (e - 1.0) * q.quad_error
    return MomentReport(val, err, Formula.linear_moment, (("Q", q.value),))


def fbm_covariance(h, x, y):
    if not 0 < h <= 0.5:
        raise ValueError("hurst index must lie in (0, 1/2]")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = 0.5 * (np.abs(x) ** (2 * h) + np.abs(y) ** (2 * h) - np.abs(x - y) ** (2 * h))
    return float(out) if out.ndim == 0 else out


def box_gamma(beta):
    return 1.0 + beta ** 1.5


# --- localization -------------------------------------------------------------

_GL = {}


def _gl(n):
    if n not in _GL:
        _GL[n] = np.polynomial.legendre.leggauss(n)
    return _GL[n]


def _panels(f, a, b, n, panels):
    """Composite Gauss-Legendre of a vectorized f over [a, b]."""
    x, w = _gl(n)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    pts = mid + half * x[None, :]
    return float((half * w[None, :] * f(pts)).sum())


def _p1(alpha, z):
    v, _ = unit_density(alpha, np.ravel(z))
    return v.reshape(np.shape(z))


def _G(alpha, delta, gamma, n=48, panels=6):
    """int_{|z| > gamma delta} |p_1(z) - p_1(z - delta)|^2 dz.

    Both half lines are mapped to v in (0, 1] by z = +-gamma delta / v.
    """
    z0 = gamma * delta

    def integrand(v):
        z = z0 / v
        jac = z0 / (v * v)
        right = (_p1(alpha, z) - _p1(alpha, z - delta)) ** 2
        left = (_p1(alpha, -z) - _p1(alpha, -z - delta)) ** 2
        return (right + left) * jac

    if alpha == 2.0:
        # Gaussian tails die before v reaches 0; map on a finite z-range instead
        zmax = z0 + delta + 40.0

        def gauss(z):
            return ((_p1(alpha, z) - _p1(alpha, z - delta)) ** 2
                    + (_p1(alpha, -z) - _p1(alpha, -z - delta)) ** 2)
        return _panels(gauss, z0, zmax, n, 4 * panels)
    return _panels(integrand, 0.0, 1.0, n, panels)


def _Q2_scaled(alpha, beta, n=32, panels=6):
    """Q2 / eps^{alpha-1} = alpha int_{beta^{-1/alpha}}^inf delta^-alpha G(delta) d delta."""
    gamma = box_gamma(beta)
    d0 = beta ** (-1.0 / alpha)
    x, w = _gl(n)
    edges = np.linspace(0.0, 1.0, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        ws = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
        for wi, wt in zip(ws, w):
            delta = d0 / wi
            jac = d0 / (wi * wi)
            total += 0.5 * (hi - lo) * wt * alpha * delta ** (-alpha) * _G(alpha, delta, gamma) * jac
    return total


def localization_parts(p, t, eps, beta, tol=1e-6):
    """(Q1, Q2, errors) of the localization residual; Q2 is eps-free up to eps^{alpha-1}."""
    p = as_params(p)
    a = p.alpha
    if not (0 < eps < 1 and beta > 1):
        raise ValueError("need 0 < eps < 1 and beta > 1")
    r0 = beta * eps ** a
    if not t > r0:
        raise ValueError(f"box height {r0:.4g} does not fit in (0, t={t:.4g})")

    def weight(c):
        return math.exp(-2.0 * r0 * c ** a) - math.exp(-2.0 * t * c ** a)

    q1, e1 = _weighted_cos_integral(a, eps, weight, _chi_scale(r0, a), tail_weight_small=True)
    s = eps ** (a - 1.0)
    fine = _Q2_scaled(a, beta, n=32)
    coarse = _Q2_scaled(a, beta, n=24)
    q2 = fine * s
    e2 = abs(fine - coarse) * s + 1e-14 * s
    return q1, q2, e1, e2


def localization_tail(p, t, eps, beta, tol=1e-6):
    """Mean-square gradient mass outside the box B_beta(x, t; eps)."""
    q1, q2, e1, e2 = localization_parts(p, t, eps, beta)
    val = q1 + q2
    return _report(Formula.localization_tail, val, e1 + e2, tol * max(val, 1e-300),
                   parts=(("Q1", q1), ("Q2", q2)))


def localization_Q1_bound(p, eps, beta):
    """eps^{alpha-1} (2 beta)^{-(3-alpha)/alpha} Gamma((3-alpha)/alpha) / (pi alpha)."""
    a = as_params(p).alpha
    return eps ** (a - 1.0) * (2.0 * beta) ** (-(3.0 - a) / a) * math.gamma((3.0 - a) / a) / (math.pi * a)


def evaluate(formula, p, t=1.0, eps=None, beta=None, n=1):
    """Dispatch used by the CLI."""
    f = Formula(formula)
    if eps is None and f not in (Formula.S_derivative_n,):
        raise ValueError(f"{f.value} needs eps")
    if beta is None and f is Formula.localization_tail:
        raise ValueError("localization_tail needs beta")
    if f is Formula.Q_increment:
        return Q_increment_variance(p, t, eps)
    if f is Formula.Q_first_term:
        return Q_first_term(p, eps)
    if f is Formula.Q_second_term:
        return Q_second_term(p, t, eps)
    if f is Formula.S_increment:
        return S_increment_variance(p, t, eps)
    if f is Formula.S_derivative_n:
        return S_derivative_variance(p, t, n)
    if f is Formula.linear_moment:
        return linear_moment(p, t, eps)
    if f is Formula.localization_tail:
        return localization_tail(p, t, eps, beta)
    if f is Formula.B_increment:
        # fBm increment: E|F(x) - F(x - eps)|^2 = eps^{2H}
        h = as_params(p).hurst
        return MomentReport(eps ** (2 * h), 0.0, f)
    raise ValueError(f"unknown formula {formula!r}")
