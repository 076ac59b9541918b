"""Quadrature helpers for Fourier-type integrals on half lines."""
import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=8)
def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(f, a, b, n=32):
    x, w = _gauss_legendre(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return half * float(np.dot(w, f(mid + half * x)))


def alternating_sum(terms):
    """Cohen-Rodriguez Villegas-Zagier acceleration of sum_k (-1)^k terms[k]."""
    n = len(terms)
    d = (3.0 + math.sqrt(8.0)) ** n
    d = 0.5 * (d + 1.0 / d)
    b = -1.0
    c = -d
    s = 0.0
    for k in range(n):
        c = b - c
        s += c * terms[k]
        b = (k + n) * (k - n) * b / ((k + 0.5) * (k + 1.0))
    return s / d


def cos_tail_integral(f, a, omega, n_terms=40, nodes=32):
    """int_a^inf f(z) cos(omega z) dz for smooth, eventually monotone f.

    The range is cut at the zeros of cos(omega z); each half period is done by
    Gauss-Legendre and the resulting alternating series is accelerated.
    Returns (value, error_estimate).
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    half = math.pi / omega
    k0 = math.ceil(a / half - 0.5)
    z0 = (k0 + 0.5) * half
    if z0 <= a:
        z0 += half

    def g(z):
        return f(z) * np.cos(omega * z)

    head = gauss_legendre(g, a, z0, nodes) if z0 > a else 0.0
    edges = z0 + half * np.arange(n_terms + 1)
    pieces = np.array([gauss_legendre(g, edges[j], edges[j + 1], nodes) for j in range(n_terms)])
    signs = (-1.0) ** np.arange(n_terms)
    mags = pieces * signs
    full = alternating_sum(mags)
    coarse = alternating_sum(mags[: n_terms - 12])
    err = abs(full - coarse) + 1e-16 * (abs(head) + np.abs(pieces).sum())
    return head + full, err
