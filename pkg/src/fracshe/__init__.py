"""Numerical laboratory for the fractional stochastic heat equation."""
from .constants import AlphaParams, frak_A, frak_B, gauss_moment_c, rate_exponent_b, cosine_integral
from .kernels import KernelTable, KernelAccuracyError, eval_kernel, eval_increment_kernel, stable_tail_mass

__version__ = "0.1.0"

__all__ = ["AlphaParams", "frak_A", "frak_B", "gauss_moment_c", "rate_exponent_b", "cosine_integral",
           "KernelTable", "KernelAccuracyError", "eval_kernel", "eval_increment_kernel", "stable_tail_mass"]
