"""Variance stabilization X_t(x) = int_{u_t(0)}^{u_t(x)} dy / sigma(y) and the Hopf-Cole map h = log u."""
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .fields import FieldKind, FieldSample
from .solver import ModelSpec, make_sigma

MARGIN = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL2_NODES, _GL2_WEIGHTS = np.polynomial.legendre.leggauss(64)


class PolarityError(ValueError):
    """An integration interval [u_t(0), u_t(x)] reaches a zero of sigma."""


@dataclass
class StabilizedField:
    base: FieldSample
    transformed: FieldSample
    sigma_floor: float

    def __post_init__(self):
        if not self.sigma_floor > 0:
            raise PolarityError(f"sigma floor {self.sigma_floor} is not positive")


def _closed_form(sigma, lo, hi):
    """Antiderivative difference for the registered sigmas that have one, else None."""
    name = sigma.name
    par = dict(sigma.params)
    if name == "constant":
        return (hi - lo) / par["c"]
    if name == "identity":
        return np.log(hi / lo)
    if name == "affine" and par["b"] != 0:
        return np.log((par["a"] + par["b"] * hi) / (par["a"] + par["b"] * lo)) / par["b"]
    if name == "affine":
        return (hi - lo) / par["a"]
    return None


def _gl(sigma, lo, hi, nodes, weights):
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    y = mid[..., None] + half[..., None] * nodes
    s = sigma(y)
    return half * (weights / s).sum(axis=-1), np.abs(s).min(axis=-1)


def _check_zeros(sigma, lo, hi, margin, labels):
    a, b = np.minimum(lo, hi), np.maximum(lo, hi)
    for z in sigma.zeros:
        bad = (a - margin <= z) & (z <= b + margin)
        if bad.any():
            r, j = (int(v[0]) for v in np.nonzero(bad))
            raise PolarityError(f"sigma zero {z:g} within {margin:g} of [u(0), u(x)] at replica {r}, "
                                f"grid point {labels[j]} (polarity violated at this resolution)")


def stabilize(field, sigma, margin=MARGIN, rtol=1e-10):
    """X_t(x) for every replica and grid point of a u snapshot.

    Closed forms are used for constant, identity and affine sigma; otherwise a
    32/64-point Gauss-Legendre pair per interval, with scipy quad for the points
    where the two disagree.  Intervals reaching a sigma zero are rejected.
    """
    if isinstance(sigma, str):
        sigma = make_sigma(sigma)
    g = field.grid
    u = field.batch
    o = g.origin if g is not None else 0
    lo = np.broadcast_to(u[:, o:o + 1], u.shape)
    hi = u
    labels = g.x if g is not None else np.arange(u.shape[1])
    _check_zeros(sigma, lo, hi, margin, labels)
    # observed floor of |sigma| on the integration ranges (nodes plus endpoints)
    x1, floor1 = _gl(sigma, lo, hi, _GL_NODES, _GL_WEIGHTS)
    floor = float(min(floor1.min(), np.abs(sigma(u)).min()))
    if floor < margin:
        r, j = np.unravel_index(int(np.argmin(np.minimum(floor1, np.abs(sigma(u))))), u.shape)
        raise PolarityError(f"|sigma| = {floor:.3g} < {margin:g} on [u(0), u(x)] at replica {r}, grid point "
                            f"{labels[j]} (polarity violated at this resolution)")
    x = _closed_form(sigma, lo, hi)
    if x is None:
        x2, _ = _gl(sigma, lo, hi, _GL2_NODES, _GL2_WEIGHTS)
        x = x2
        redo = np.abs(x2 - x1) > rtol * np.maximum(1.0, np.abs(x2))
        for r, j in zip(*np.nonzero(redo)):
            x[r, j] = integrate.quad(lambda y: 1.0 / float(sigma(np.array([y]))[0]), lo[r, j], hi[r, j],
                                     epsabs=0, epsrel=rtol, limit=200)[0]
    x = np.array(x, dtype=float)
    x[:, o] = 0.0
    out = FieldSample(g, field.time_label, x.reshape(field.values.shape), FieldKind.X,
                      {"sigma": sigma.name, "sigma_floor": floor})
    return StabilizedField(field, out, floor)


def _require_pam(model):
    if model.params.alpha != 2.0 or model.sigma.name != "identity":
        raise ValueError("the Hopf-Cole map needs alpha = 2 and sigma(u) = u (PAM)")


def hopf_cole(traj):
    """h_t = log u_t for every snapshot of a PAM trajectory (failed replicas dropped)."""
    _require_pam(traj.model)
    ok = ~traj.failed
    out = []
    for s in traj.snapshots:
        u = s.batch[ok]
        umin = float(u.min())
        if not umin > 0:
            r, j = np.unravel_index(int(np.argmin(u)), u.shape)
            raise PolarityError(f"u_t <= 0 at t={s.time_label:g}, replica {r}, grid point {s.grid.x[j]:g} "
                                f"(numerical positivity failure)")
        base = FieldSample(s.grid, s.time_label, u, FieldKind.U, dict(s.meta))
        h = FieldSample(s.grid, s.time_label, np.log(u), FieldKind.H, {"min_u": umin})
        out.append(StabilizedField(base, h, umin))
    return out


def kpz_model(h0=0.0, T=1.0):
    """PAM model for Hopf-Cole KPZ with u0 = exp(h0); h0 bounded above and Lipschitz."""
    if callable(h0):
        u0 = lambda x: np.exp(h0(x))  # noqa: E731
    else:
        if not math.isfinite(h0):
            raise ValueError("h0 must be finite")
        u0 = math.exp(h0)
    return ModelSpec(2.0, make_sigma("identity"), u0, T)


def stabilized_batch(batch):
    """Coupled batch with u replaced by X and sigma by the constant 1.

    Feeding this to ratio_statistic tests |dX/dF - A| in place of
    |du/dF - A sigma(u)|.
    """
    sf = stabilize(FieldSample(batch.grid, batch.u.time_label, batch.u.batch[batch.ok], FieldKind.U),
                   batch.model.sigma)
    model = ModelSpec(batch.model.params, make_sigma("constant", c=1.0), 0.0, batch.model.T)
    ok = batch.ok
    pick = lambda f: replace(f, values=f.batch[ok])  # noqa: E731
    return replace(batch, u=sf.transformed, Z=pick(batch.Z), S=pick(batch.S), F=pick(batch.F), model=model,
                   seeds=batch.seeds[ok], failed=np.zeros(int(ok.sum()), dtype=bool))
