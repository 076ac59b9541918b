"""Closed-form constants indexed by the stability index alpha in (1, 2]."""
import math
from dataclasses import dataclass

from .quadrature import cos_tail_integral

ALPHA_FLOOR = 1.0 + 1e-6


@dataclass(frozen=True)
class AlphaParams:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not math.isfinite(a) or a <= ALPHA_FLOOR or a > 2.0:
            raise ValueError(f"alpha must lie in ({ALPHA_FLOOR}, 2], got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    @property
    def hurst(self):
        return 0.5 * (self.alpha - 1.0)

    @property
    def power(self):
        """The variation exponent 2/(alpha-1)."""
        return 2.0 / (self.alpha - 1.0)


def as_params(p):
    return p if isinstance(p, AlphaParams) else AlphaParams(p)


def frak_A(p):
    a = as_params(p).alpha
    return (2.0 * math.gamma(a) * abs(math.cos(a * math.pi / 2.0))) ** -0.5


def frak_B(p):
    a = as_params(p).alpha
    inner = abs(1.0 / (math.gamma(a) * math.cos(a * math.pi / 2.0)))
    return inner ** (1.0 / (a - 1.0)) * math.gamma(0.5 + 1.0 / (a - 1.0)) / math.sqrt(math.pi)


def gauss_moment_c(p):
    """c with E|X|^{2/(alpha-1)} = c (E X^2)^{1/(alpha-1)} for centered Gaussian X."""
    a = as_params(p).alpha
    q = 1.0 / (a - 1.0)
    return 2.0 ** q * math.gamma(0.5 + q) / math.sqrt(math.pi)


def rate_exponent_b(p):
    a = as_params(p).alpha
    return (a - 1.0) / (3.0 * a - 2.0)


def cosine_integral(p, with_error=False):
    """int_0^inf (1 - cos z) / z^alpha dz by series on [0, 1] plus an oscillatory tail.

    On [0, 1] the Taylor series of 1 - cos integrates term by term; beyond 1 the
    integral splits into 1/(alpha-1) minus a cosine transform summed over half
    periods.
    """
    a = as_params(p).alpha
    head = 0.0
    term_err = 0.0
    fact = 1.0
    for k in range(1, 40):
        fact *= (2 * k - 1) * (2 * k)
        term = (-1) ** (k + 1) / (fact * (2 * k - a + 1.0))
        head += term
        term_err = abs(term)
        if term_err < 1e-18:
            break
    tail, tail_err = cos_tail_integral(lambda z: z ** -a, 1.0, 1.0)
    value = head + 1.0 / (a - 1.0) - tail
    if with_error:
        return value, tail_err + term_err + 4 * math.ulp(value)
    return value


def summary(p):
    p = as_params(p)
    return {
        "alpha": p.alpha,
        "hurst": p.hurst,
        "frakA": frak_A(p),
        "frakB": frak_B(p),
        "c": gauss_moment_c(p),
        "b": rate_exponent_b(p),
        "cosine_integral": cosine_integral(p),
    }
