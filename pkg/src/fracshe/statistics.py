"""Finite-eps, finite-replica estimators for the gradient limit theorems.

Every estimator works on a batch of replicas (rows) and returns values with
Monte Carlo standard errors.  Asymptotic statements are probed as a trend over
dyadic eps levels plus a threshold at the finest level.
"""
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sst

from . import _accel
from .constants import as_params, frak_A, frak_B, rate_exponent_b
from .fields import make_noise, irfft, slice_multiplier
from .oracle import box_gamma, localization_tail

DEGENERATE = 1e-14


@dataclass
class Stat:
    value: float
    stderr: float
    replicas: int

    def as_dict(self):
        return {"value": self.value, "stderr": self.stderr, "replicas": self.replicas}


@dataclass
class ExperimentReport:
    name: str
    config: dict
    statistics: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    runtime: float = 0.0
    min_replicas: int = 1

    def add(self, key, value, stderr, replicas):
        if replicas < self.min_replicas:
            raise ValueError(f"{key}: {replicas} replicas < declared minimum {self.min_replicas}")
        if not math.isfinite(stderr):
            raise ValueError(f"{key}: non-finite standard error")
        self.statistics[key] = Stat(float(value), float(stderr), int(replicas))

    def check(self, key, passed, value, threshold):
        self.criteria[key] = {"passed": bool(passed), "value": value, "threshold": threshold}
        return bool(passed)

    @property
    def passed(self):
        return all(c["passed"] for c in self.criteria.values())

    def as_dict(self, with_runtime=True):
        d = {"name": self.name, "config": self.config,
             "statistics": {k: v.as_dict() for k, v in sorted(self.statistics.items())},
             "criteria": dict(sorted(self.criteria.items())), "passed": self.passed}
        if with_runtime:
            d["runtime"] = self.runtime
        return d

    def to_json(self, with_runtime=True):
        return json.dumps(_plain(self.as_dict(with_runtime)), indent=2, sort_keys=True)


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def binomial_se(p, n):
    return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(_accel.compensated_sum(x[:, None])[0] / x.size), float(x.std(ddof=1) / math.sqrt(x.size))


def fit_loglog(xs, ys):
    """Slope and its standard error for log ys against log xs."""
    lx, ly = np.log(xs), np.log(ys)
    res = sst.linregress(lx, ly)
    return float(res.slope), float(res.stderr)


# ---------------------------------------------------------------------------
# gradient ratio against frak_A sigma(u)


def _increments(batch, eps_steps, x_steps=0):
    """u(x), u(x) - u(x - eps) and F(x) - F(x - eps) at the given offsets from the origin.

    Several offsets are pooled as extra rows (the law is translation invariant),
    ordered position-major so row r * len(x_steps) + c is replica r at offset c.
    """
    g = batch.grid
    js = (g.origin + np.atleast_1d(np.asarray(x_steps, dtype=int))) % g.n_space
    ok = batch.ok
    u = batch.u.batch[ok]
    f = batch.F.batch[ok]
    du = np.stack([u[:, js] - np.roll(u, m, axis=1)[:, js] for m in eps_steps], axis=2)
    dF = np.stack([f[:, js] - np.roll(f, m, axis=1)[:, js] for m in eps_steps], axis=2)
    return u[:, js].reshape(-1), du.reshape(-1, len(eps_steps)), dF.reshape(-1, len(eps_steps))


def ratio_statistic(batch, eps_steps, lam=None, x_steps=0):
    """Exceedance P{|du/dF - A sigma(u)| > lam} per eps (in dx units)."""
    p = batch.model.params
    A = frak_A(p)
    lam = 0.25 * A if lam is None else lam
    if min(eps_steps) < 4:
        raise ValueError("eps must be at least 4 dx")
    u, du, dF = _increments(batch, eps_steps, x_steps)
    sig = batch.model.sigma(u)
    degenerate = np.abs(dF) < DEGENERATE
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = du / dF
    dev = np.abs(ratio - A * sig[:, None])
    exceed = (dev > lam) | degenerate
    n = int(batch.ok.sum())
    npos = exceed.shape[0] // n
    out = []
    for c, m in enumerate(eps_steps):
        # per-replica fraction over positions keeps the stderr honest under pooling
        per = exceed[:, c].reshape(n, npos).mean(axis=1)
        ph, se = float(per.mean()), float(per.std(ddof=1) / math.sqrt(n))
        out.append({"eps": m * batch.grid.dx, "exceedance": ph, "stderr": max(se, binomial_se(ph, n * npos)),
                    "degenerate": int(degenerate[:, c].sum()), "replicas": n, "positions": npos})
    return out


def strong_error(batch, eps_steps, x_steps=0):
    """L2 norm and median of du - A sigma(u) dF per eps, with stderr."""
    p = batch.model.params
    A = frak_A(p)
    u, du, dF = _increments(batch, eps_steps, x_steps)
    err = du - A * batch.model.sigma(u)[:, None] * dF
    n = err.shape[0]
    out = []
    for c, m in enumerate(eps_steps):
        e2 = err[:, c] ** 2
        ms, se = mean_se(e2)
        l2 = math.sqrt(ms)
        out.append({"eps": m * batch.grid.dx, "l2": l2, "l2_stderr": se / (2 * l2) if l2 > 0 else 0.0,
                    "median_abs": float(np.median(np.abs(err[:, c]))), "replicas": n})
    return out


def rate_fit(rows, key="l2"):
    eps = np.array([r["eps"] for r in rows])
    vals = np.array([r[key] for r in rows])
    return fit_loglog(eps, vals)


def rate_target(p):
    p = as_params(p)
    return 0.5 * (p.alpha - 1.0 + rate_exponent_b(p))


# ---------------------------------------------------------------------------
# LIL, density average, CLT, variations


def lil_scan(du_by_eps, eps, sigma_u, alpha):
    """Per replica max over eps of +-du / sqrt(2 eps^{alpha-1} loglog(1/eps)).

    ``du_by_eps`` is [replicas, levels].  Levels with eps >= 1/e are dropped.
    Returns dict with the maxima, their ratio to A |sigma(u)| and a KS p-value
    comparing the + and - maxima.
    """
    eps = np.asarray(eps, dtype=float)
    keep = eps < math.exp(-1.0)
    if not keep.any():
        raise ValueError("no eps level below 1/e")
    eps = eps[keep]
    du = np.asarray(du_by_eps)[:, keep]
    norm = np.sqrt(2.0 * eps ** (alpha - 1.0) * np.log(np.log(1.0 / eps)))
    z = du / norm[None, :]
    up = z.max(axis=1)
    down = (-z).max(axis=1)
    A = frak_A(alpha)
    target = A * np.abs(np.asarray(sigma_u, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(target > 0, np.maximum(up, down) / target, np.nan)
    ks = sst.ks_2samp(up, down)
    return {"up": up, "down": down, "relative": rel, "ks_pvalue": float(ks.pvalue), "eps": eps}


def density_average(du, dF, eps, sigma_u, alpha, s_list):
    """(1/s) int_{eps_min}^s |du/dF - A sigma(u)| d eps by trapezoid, per replica and s."""
    A = frak_A(alpha)
    eps = np.asarray(eps, dtype=float)
    sig = np.asarray(sigma_u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.abs(du / dF - A * sig[:, None])
    # a vanishing denominator is a null event; count and drop those replicas
    bad = ~np.isfinite(integrand).all(axis=1)
    integrand = integrand[~bad]
    out = []
    for s in s_list:
        m = eps <= s * (1 + 1e-12)
        if m.sum() < 2:
            raise ValueError(f"s={s} covers fewer than two eps levels")
        vals = np.trapezoid(integrand[:, m], eps[m], axis=1) / s
        out.append({"s": float(s), "median": float(np.median(vals)),
                    "upper_quartile": float(np.quantile(vals, 0.75)), "replicas": int(vals.size),
                    "dropped": int(bad.sum())})
    return out


def _ks_against(sample, cdf):
    x = np.sort(sample)
    n = x.size
    c = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - c), np.max(c - np.arange(n) / n)))


def mixture_cdf(scales, n_table=8193):
    """CDF of |scale| * N with scale drawn uniformly from ``scales``.

    Tabulated once on a symmetric grid out to 9 max|scale| and linearly
    interpolated; the table error is below 1e-6, far under any KS resolution.
    """
    s = np.abs(np.asarray(scales, dtype=float))
    s = s[s > 0]
    if s.size == 0:
        raise ValueError("mixture needs a positive scale")
    top = 9.0 * s.max()
    grid = np.linspace(-top, top, n_table)
    table = np.empty(n_table)
    for i in range(0, n_table, 256):
        table[i:i + 256] = sst.norm.cdf(grid[i:i + 256, None] / s[None, :]).mean(axis=1)

    def cdf(y):
        return np.interp(np.atleast_1d(y), grid, table, left=0.0, right=1.0)
    return cdf, s


def clt_check(stat_sample, ref_scales=None, exact_scale=None, seeds=None, ref_seeds=None,
              n_boot=200, boot_seed=12345):
    """KS distance of stat_sample to the mixture law |scale| N, with a bootstrap p-value.

    Either ``exact_scale`` (degenerate mixture: a single normal) or
    ``ref_scales`` (A |sigma(u)| from an independent batch) must be given; the
    two seed sets must be disjoint.
    """
    if seeds is not None and ref_seeds is not None:
        if np.intersect1d(np.asarray(seeds), np.asarray(ref_seeds)).size:
            raise ValueError("reference batch shares seeds with the test batch")
    if exact_scale is not None:
        scales = np.array([abs(exact_scale)])

        def cdf(y):
            return sst.norm.cdf(np.atleast_1d(y) / scales[0])
    elif ref_scales is not None:
        cdf, scales = mixture_cdf(ref_scales)
    else:
        raise ValueError("need ref_scales or exact_scale")
    stat_sample = np.asarray(stat_sample, dtype=float)
    d = _ks_against(stat_sample, cdf)
    rng = np.random.default_rng(boot_seed)
    n = stat_sample.size
    boots = np.empty(n_boot)
    for b in range(n_boot):
        s = scales[rng.integers(0, scales.size, n)]
        boots[b] = _ks_against(s * rng.standard_normal(n), cdf)
    pval = float((1 + np.sum(boots >= d)) / (n_boot + 1))
    return {"ks": d, "pvalue": pval, "replicas": int(n)}


PHI = {
    "one": lambda u: np.ones_like(u),
    "zero": lambda u: np.zeros_like(u),
    "identity": lambda u: u,
    "sin": np.sin,
}


def variation_sum(field, sigma, alpha, a, b, n, phi="one"):
    """sum_{a 2^n <= j <= b 2^n} phi(u(j 2^-n)) |u((j+1) 2^-n) - u(j 2^-n)|^{2/(alpha-1)}.

    Returns (sums per replica, reference frak_B int_a^b phi(u) sigma(u)^{2/(alpha-1)} dx per replica).
    """
    g = field.grid
    phi_fn = PHI[phi] if isinstance(phi, str) else phi
    h = 2.0 ** -n
    step = g.steps(h)
    if step < 4:
        raise ValueError(f"mesh 2^-{n} is finer than 4 dx")
    j = np.arange(math.ceil(a * 2 ** n - 1e-9), math.floor(b * 2 ** n + 1e-9) + 1)
    idx = g.origin + j * step
    if idx.min() < 0 or idx.max() + step >= g.n_space:
        raise ValueError("variation window leaves the grid")
    u = field.batch
    power = 2.0 / (alpha - 1.0)
    weights = phi_fn(u[:, idx])
    sums = _accel.variation_sums(u, idx, step, weights, power)
    lo, hi = g.origin + g.steps(a), g.origin + g.steps(b)
    seg = u[:, lo:hi + 1]
    integrand = phi_fn(seg) * np.abs(sigma(seg)) ** power
    ref = frak_B(alpha) * np.trapezoid(integrand, dx=g.dx, axis=1)
    return sums, ref


# ---------------------------------------------------------------------------
# localization


def graded_edges(r_box, t, ratio=1.15, r_min_factor=1e-3):
    """Time-to-go slice edges: geometric inside (0, r_box], then one slice (r_box, t]."""
    edges = [0.0, r_box * r_min_factor]
    while edges[-1] * ratio < r_box:
        edges.append(edges[-1] * ratio)
    edges.append(r_box)
    edges.append(t)
    return np.array(edges)


def localization_mc(p, grid, t, eps, beta, seed, replicas, chunk=500):
    """MC mean of |nabla_eps Z_t(0) - box integral|^2 against the quadrature oracle.

    Z is assembled from slices graded in r = t - s; each slice's contribution is
    a circular convolution of its normals with the exact slice kernel, so the
    box integral keeps exactly the cells with |y| <= eps gamma of the slices
    with r <= beta eps^alpha.
    """
    p = as_params(p)
    a = p.alpha
    g = grid
    r_box = beta * eps ** a
    gamma = box_gamma(beta)
    m = g.steps(eps)
    half_width = eps * gamma
    if r_box >= t:
        raise ValueError(f"box height {r_box:.4g} exceeds t={t:.4g}; need t > beta eps^alpha")
    if half_width + eps >= g.L:
        raise ValueError(f"box half-width {half_width:.4g} does not fit; need L > {half_width + eps:.4g}")
    edges = graded_edges(r_box, t)
    o = g.origin
    x = g.x
    outside = np.abs(x) > half_width * (1 + 1e-12)  # cells y with |y - 0| > eps gamma
    # per slice: coefficient vector c with nabla Z(0) = sum_k c_k eta_k, masked for box slices
    coefs = []
    for ra, rb in zip(edges[:-1], edges[1:]):
        h = slice_multiplier(g, a, ra, rb)
        kern = irfft(h.astype(complex), g.n_space)  # kernel indexed by offset
        # W(x_j) = sum_k kern[(j - k) mod n] eta_k
        kj = np.arange(g.n_space)
        c = kern[(o - kj) % g.n_space] - kern[(o - m - kj) % g.n_space]
        if rb <= r_box * (1 + 1e-12):
            c = np.where(outside, c, 0.0)
        coefs.append(c)
    coefs = np.array(coefs)
    exact_discrete = float((coefs ** 2).sum())
    res = []
    for s0 in range(0, replicas, chunk):
        cnt = min(chunk, replicas - s0)
        noise = make_noise(g, seed + s0, cnt)
        acc = np.zeros(cnt)
        for i in range(coefs.shape[0]):
            acc += noise.normals(i) @ coefs[i]
        res.append(acc ** 2)
    sq = np.concatenate(res)
    mean, se = mean_se(sq)
    oracle = localization_tail(p, t, eps, beta)
    return {"mean": mean, "stderr": se, "oracle": oracle.value, "discrete_exact": exact_discrete,
            "Q1": dict(oracle.parts)["Q1"], "Q2": dict(oracle.parts)["Q2"], "replicas": int(sq.size),
            "beta": beta, "eps": eps}


def localization_u_mc(model, grid, t, eps, beta, seed, replicas, frozen=False, k=2):
    """k-th moment of nabla_eps u_t(0) minus its sigma-weighted box integral.

    The solver is re-run with a hook that, for every step inside the box, adds
    the windowed part of the step's noise kernel weighted by sigma(u_s(y))
    (or, if ``frozen``, by sigma(u_{t - beta eps^alpha}(0))).
    """
    from .solver import solve
    a = model.params.alpha
    g = grid
    g.check_resolution(a)
    r_box = beta * eps ** a
    m_t = g.time_index(t)
    j_box = int(math.floor(r_box / g.dt + 1e-9))
    if j_box >= m_t:
        raise ValueError("box does not fit in (0, t)")
    gamma = box_gamma(beta)
    m = g.steps(eps)
    if eps * gamma + eps >= g.L:
        raise ValueError(f"box half-width does not fit; need L > {eps * gamma + eps:.4g}")
    o = g.origin
    lam = g.k ** a
    from .solver import _principal_multiplier
    h0 = slice_multiplier(g, a, 0.0, g.dt)
    hp = _principal_multiplier(lam, g.dt, g.dx)
    window = np.abs(g.x) <= eps * gamma * (1 + 1e-12)
    kj = np.arange(g.n_space)
    noise = make_noise(g, seed, replicas)
    start = m_t - j_box
    acc = np.zeros(replicas)
    frozen_sig = {}

    def hook(i, eta, u_before):
        if i < start:
            return
        if i == start and frozen:
            frozen_sig["v"] = model.sigma(u_before[:, o])
        j = m_t - 1 - i  # steps between the end of this slice and t
        mult = np.exp(-j * g.dt * lam) * hp + (h0 - hp if j == 0 else 0.0)
        kern = irfft(mult.astype(complex), g.n_space)
        c = kern[(o - kj) % g.n_space] - kern[(o - m - kj) % g.n_space]
        c = np.where(window, c, 0.0)
        w = frozen_sig["v"][:, None] if frozen else model.sigma(u_before)
        acc[:] += (w * eta) @ c if not frozen else (eta @ c) * w[:, 0]

    traj = solve(model, noise, [t], hook=hook, on_blowup="mask")
    u = traj.snapshots[0].batch
    du = u[:, o] - u[:, o - m]
    resid = np.abs(du - acc)[~traj.failed] ** k
    mean, se = mean_se(resid)
    return {"mean": mean, "stderr": se, "replicas": int(resid.size), "beta": beta, "eps": eps, "k": k,
            "frozen": frozen}


def dominance(values, scalings):
    """Fit A at the first (coarsest) point and report whether A * scaling dominates the rest."""
    values = np.asarray(values, dtype=float)
    scalings = np.asarray(scalings, dtype=float)
    A = values[0] / scalings[0]
    return float(A), bool(np.all(values[1:] <= A * scalings[1:] * (1 + 1e-12)))


def lag1_autocorrelation(x):
    x = np.asarray(x, dtype=float) - np.mean(x)
    return float(np.dot(x[:-1], x[1:]) / np.dot(x, x))

