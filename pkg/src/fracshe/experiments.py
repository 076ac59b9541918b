"""Named experiments: RunConfig -> ExperimentReport plus plot-ready curves.

Each runner builds the grid and model from the config, farms replicas in
fixed chunks (results do not depend on the worker count) and declares its
pass/fail criteria on the report.  Curves are lists of rows with the fixed
columns in CURVE_COLUMNS.
"""
import math

import numpy as np

from . import kpz, pipeline, statistics as st
from .config import sigma_from
from .constants import as_params, frak_A
from .fields import FieldKind, FieldSample, GridSpec
from .solver import ModelSpec, holder_slope, make_sigma

CURVE_COLUMNS = {
    "ratio": ("eps", "exceedance", "stderr"),
    "strong_error": ("eps", "l2", "l2_stderr", "median_abs"),
    "lil": ("quantile", "up", "down", "relative"),
    "density": ("s", "median", "upper_quartile"),
    "clt": ("y", "empirical", "reference"),
    "variation": ("replica", "sum", "reference"),
    "localization": ("beta", "mean", "stderr", "oracle"),
    "localization_u": ("beta", "mean", "stderr"),
    "holder": ("direction", "lag", "msq"),
}


def grid_from(cfg):
    a = cfg["alpha"]
    dx = cfg.dx
    nt = cfg["n_time"] or int(math.ceil(cfg["t"] / dx ** a * (1 - 1e-12)))
    return GridSpec(cfg["L"], cfg["n_space"], cfg["t"], nt)


def model_from(cfg):
    if cfg.experiment.startswith("kpz"):
        if cfg["u0"] <= 0:
            from .config import ConfigError
            raise ConfigError("Hopf-Cole experiments need u0 > 0")
        return kpz.kpz_model(math.log(cfg["u0"]), cfg["t"])
    return ModelSpec(cfg["alpha"], sigma_from(cfg), cfg["u0"], cfg["t"])


def positions(cfg):
    n, k = cfg["n_space"], cfg["positions"]
    return (np.arange(k) * (n // k)).astype(int)


def _report(cfg, grid=None, model=None):
    echo = cfg.echo()
    if grid is not None:
        echo["grid"] = {"L": grid.L, "n_space": grid.n_space, "t_max": grid.t_max, "n_time": grid.n_time,
                        "dx": grid.dx, "dt": grid.dt}
    if model is not None:
        echo["model"] = model.echo()
    return st.ExperimentReport(cfg.experiment, echo, min_replicas=cfg["min_replicas"])


def _strictly_decreasing(vals):
    return bool(np.all(np.diff(vals) < 0))


def _coupled(cfg, model, grid, workers):
    t_ext = cfg["t_ext"] or None
    eps_check = max(cfg["eps_steps"]) * grid.dx
    batch = pipeline.coupled_batch(model, grid, cfg["t"], cfg["seed"], cfg["replicas"], t_ext=t_ext,
                                   eps_check=eps_check, workers=workers)
    pipeline.check_failures(batch.failed)
    return batch


def _ratio_core(cfg, rep, batch):
    lam = cfg["lam"] or 0.25 * frak_A(batch.model.params)
    rows = st.ratio_statistic(batch, cfg["eps_steps"], lam=lam, x_steps=positions(cfg))
    for r, m in zip(rows, cfg["eps_steps"]):
        rep.add(f"exceedance_{m}dx", r["exceedance"], r["stderr"], r["replicas"])
    ex = [r["exceedance"] for r in rows]
    rep.check("strictly_decreasing", _strictly_decreasing(ex), ex, "strict decrease over eps levels")
    rep.check("finest_below_threshold", ex[-1] <= cfg["threshold"], ex[-1], cfg["threshold"])
    err = st.strong_error(batch, cfg["eps_steps"], x_steps=positions(cfg))
    slope, se = st.rate_fit(err)
    rep.add("strong_error_exponent", slope, se, err[0]["replicas"])
    rep.curves["ratio"] = [{"eps": r["eps"], "exceedance": r["exceedance"], "stderr": r["stderr"]} for r in rows]
    rep.curves["strong_error"] = [{k: r[k] for k in CURVE_COLUMNS["strong_error"]} for r in err]
    return rep


def run_ratio(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    return _ratio_core(cfg, rep, _coupled(cfg, model, grid, workers))


def lil_levels(grid):
    """Dyadic eps = 2^-k with 4 <= k and eps >= 4 dx."""
    kmax = int(math.floor(math.log2(1.0 / (4.0 * grid.dx)) + 1e-9))
    ks = list(range(4, kmax + 1))
    eps = [2.0 ** -k for k in ks]
    if len(eps) < 2:
        raise ValueError("grid too coarse for two dyadic LIL levels (need dx <= 2^-7)")
    return np.array(eps)


def _lil_core(cfg, rep, u_field, sigma_u, alpha):
    g = u_field.grid
    eps = lil_levels(g)
    du = np.stack([u_field.increment(e) for e in eps], axis=1)
    res = st.lil_scan(du, eps, sigma_u, alpha)
    n = du.shape[0]
    rel = res["relative"]
    finite = np.isfinite(rel)
    rep.add("lil_symmetry_pvalue", res["ks_pvalue"], 0.0, n)
    rep.check("symmetry", res["ks_pvalue"] >= cfg["symmetry_pvalue"], res["ks_pvalue"], cfg["symmetry_pvalue"])
    if finite.any():
        inside = float(np.mean(rel[finite] <= 1.0 + cfg["delta"]))
        rep.add("lil_inside_fraction", inside, st.binomial_se(inside, int(finite.sum())), int(finite.sum()))
        rep.check("envelope", inside >= cfg["envelope_fraction"], inside, cfg["envelope_fraction"])
    else:
        top = float(np.max(np.maximum(res["up"], res["down"])))
        rep.add("lil_max", top, 0.0, n)
    qs = np.linspace(0.05, 0.95, 19)
    rep.curves["lil"] = [{"quantile": q, "up": float(np.quantile(res["up"], q)),
                          "down": float(np.quantile(res["down"], q)),
                          "relative": float(np.quantile(rel[finite], q)) if finite.any() else math.nan}
                         for q in qs]
    return rep


def run_lil(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    traj = pipeline.trajectory_batch(model, grid, [cfg["t"]], cfg["seed"], cfg["replicas"], workers)
    pipeline.check_failures(traj.failed)
    u = traj.snapshots[0]
    u = FieldSample(grid, u.time_label, u.batch[~traj.failed], FieldKind.U)
    return _lil_core(cfg, rep, u, model.sigma(u.at(0.0)), model.params.alpha)


def run_density(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    batch = _coupled(cfg, model, grid, workers)
    steps = sorted(cfg["eps_steps"])
    eps = np.array(steps) * grid.dx
    u, du, dF = st._increments(batch, steps)
    s_list = cfg["s_list"] or tuple(eps[2:][::-1])
    rows = st.density_average(du, dF, eps, model.sigma(u), model.params.alpha, s_list)
    med = [r["median"] for r in rows]
    for r in rows:
        rep.add(f"density_median_s{r['s']:.6g}", r["median"], 0.0, r["replicas"])
    rep.check("median_decreasing", len(med) >= 3 and _strictly_decreasing(med), med,
              "strict decrease over >= 3 s levels")
    rep.curves["density"] = [{k: r[k] for k in CURVE_COLUMNS["density"]} for r in rows]
    return rep


def _clt_curve(sample, cdf):
    ys = np.quantile(sample, np.linspace(0.01, 0.99, 99))
    srt = np.sort(sample)
    emp = np.searchsorted(srt, ys, side="right") / srt.size
    return [{"y": float(y), "empirical": float(e), "reference": float(r)} for y, e, r in zip(ys, emp, cdf(ys))]


def _clt_stat(field, eps_steps, pos, alpha):
    g = field.grid
    m = eps_steps[-1]
    u = field.batch
    du = u[:, pos] - np.roll(u, m, axis=1)[:, pos]
    return (du / (m * g.dx) ** ((alpha - 1.0) / 2.0)).ravel()


def run_clt(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    a = model.params.alpha
    A = frak_A(a)
    pos = positions(cfg)
    traj = pipeline.trajectory_batch(model, grid, [cfg["t"]], cfg["seed"], cfg["replicas"], workers)
    pipeline.check_failures(traj.failed)
    u = FieldSample(grid, cfg["t"], traj.snapshots[0].batch[~traj.failed], FieldKind.U)
    stat = _clt_stat(u, cfg["eps_steps"], pos, a)
    if model.sigma.is_constant:
        res = st.clt_check(stat, exact_scale=A * abs(dict(model.sigma.params)["c"]))
        ref_cdf = lambda y: st.sst.norm.cdf(y / (A * abs(dict(model.sigma.params)["c"])))  # noqa: E731
    else:
        ref_seed = cfg.ref_seed
        ref = pipeline.trajectory_batch(model, grid, [cfg["t"]], ref_seed, cfg["replicas"], workers)
        pipeline.check_failures(ref.failed)
        ref_u = ref.snapshots[0].batch[~ref.failed][:, pos].ravel()
        scales = A * model.sigma(ref_u)
        res = st.clt_check(stat, ref_scales=scales, seeds=traj.seeds, ref_seeds=ref.seeds)
        ref_cdf = st.mixture_cdf(scales)[0]
    n = int((~traj.failed).sum())
    rep.add("ks", res["ks"], 0.0, n)
    rep.add("ks_bootstrap_pvalue", res["pvalue"], 0.0, n)
    rep.check("ks_below_max", res["ks"] <= cfg["ks_max"], res["ks"], cfg["ks_max"])
    rep.curves["clt"] = _clt_curve(stat, ref_cdf)
    return rep


def _variation_core(cfg, rep, field, sigma, alpha):
    sums, ref = st.variation_sum(field, sigma, alpha, cfg["a"], cfg["b"], cfg["level"], cfg["phi"])
    n = sums.size
    m, se = st.mean_se(sums)
    r = float(ref.mean())
    rep.add("variation_mean", m, se, n)
    rep.add("reference_mean", r, float(ref.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, n)
    if r == 0.0:
        ok = bool(np.all(sums == 0.0))
        rep.check("zero_reference", ok, m, 0.0)
    else:
        rel = m / r - 1.0
        rep.add("relative_error", rel, se / abs(r), n)
        rep.check("within_tolerance", abs(rel) <= cfg["tolerance"], rel, cfg["tolerance"])
    rep.curves["variation"] = [{"replica": i, "sum": float(s), "reference": float(q)}
                               for i, (s, q) in enumerate(zip(sums, ref))]
    return rep


def run_variation(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    traj = pipeline.trajectory_batch(model, grid, [cfg["t"]], cfg["seed"], cfg["replicas"], workers)
    pipeline.check_failures(traj.failed)
    u = FieldSample(grid, cfg["t"], traj.snapshots[0].batch[~traj.failed], FieldKind.U)
    return _variation_core(cfg, rep, u, model.sigma, model.params.alpha)


def _beta_slope(rep, betas, means, slope_max, n, k=2):
    slope, se = st.fit_loglog(betas, means)
    rep.add("beta_slope", slope, se, n)
    rep.check("beta_slope", slope <= slope_max, slope, slope_max)
    A, dom = st.dominance(means, np.asarray(betas) ** (-k / 4.0))
    rep.add("dominance_A", A, 0.0, n)
    rep.check("dominance", dom, list(means), f"<= A beta^{-k / 4:g} with A fitted at beta={betas[0]:g}")


def run_localization(cfg, workers=None):
    grid = grid_from(cfg)
    p = as_params(cfg["alpha"])
    rep = _report(cfg, grid)
    eps = cfg["eps_steps"][-1] * grid.dx
    betas = list(cfg["beta"])
    tasks = [(p, grid, cfg["t"], eps, b, cfg["seed"], cfg["replicas"]) for b in betas]
    rows = pipeline.farm(st.localization_mc, tasks, workers)
    for r in rows:
        b = r["beta"]
        rep.add(f"residual_beta{b:g}", r["mean"], r["stderr"], r["replicas"])
        tol = 3 * r["stderr"] + cfg["tolerance"] * r["oracle"]
        rep.check(f"oracle_match_beta{b:g}", abs(r["mean"] - r["oracle"]) <= tol,
                  r["mean"], {"oracle": r["oracle"], "allowed": tol})
    _beta_slope(rep, betas, [r["mean"] for r in rows], cfg["slope_max"], min(r["replicas"] for r in rows))
    rep.curves["localization"] = [{k: r[k] for k in CURVE_COLUMNS["localization"]} for r in rows]
    return rep


def run_localization_u(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    eps = cfg["eps_steps"][-1] * grid.dx
    betas = list(cfg["beta"])
    tasks = [(model, grid, cfg["t"], eps, b, cfg["seed"], cfg["replicas"], bool(cfg["frozen"]), cfg["k"])
             for b in betas]
    rows = pipeline.farm(st.localization_u_mc, tasks, workers)
    for r in rows:
        rep.add(f"residual_beta{r['beta']:g}", r["mean"], r["stderr"], r["replicas"])
    _beta_slope(rep, betas, [r["mean"] for r in rows], cfg["slope_max"], min(r["replicas"] for r in rows),
                cfg["k"])
    rep.curves["localization_u"] = [{k: r[k] for k in CURVE_COLUMNS["localization_u"]} for r in rows]
    return rep


def run_holder(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    a = model.params.alpha
    t = cfg["t"]
    lags = list(cfg["lags"])
    times = [t] + [t - m * grid.dt for m in lags]
    traj = pipeline.trajectory_batch(model, grid, times, cfg["seed"], cfg["replicas"], workers)
    pipeline.check_failures(traj.failed)
    curve = []
    for direction, target in (("space", a - 1.0), ("time", (a - 1.0) / a)):
        fit = holder_slope(traj, direction, t, lags, min_replicas=cfg["min_replicas"])
        rep.add(f"{direction}_slope", fit.slope, fit.stderr, int((~traj.failed).sum()))
        rep.check(f"{direction}_slope", abs(fit.slope - target) <= cfg["slope_tol"], fit.slope,
                  {"target": target, "tolerance": cfg["slope_tol"]})
        curve += [{"direction": direction, "lag": float(lag), "msq": float(v)} for lag, v in zip(fit.lags, fit.msq)]
    rep.curves["holder"] = curve
    return rep


# ---------------------------------------------------------------------------
# Hopf-Cole experiments (alpha = 2, sigma(u) = u)


def run_kpz_ratio(cfg, workers=None):
    grid, model = grid_from(cfg), model_from(cfg)
    rep = _report(cfg, grid, model)
    batch = _coupled(cfg, model, grid, workers)
    return _ratio_core(cfg, rep, kpz.stabilized_batch(batch))


def _kpz_h(cfg, workers):
    grid, model = grid_from(cfg), model_from(cfg)
    traj = pipeline.trajectory_batch(model, grid, [cfg["t"]], cfg["seed"], cfg["replicas"], workers)
    pipeline.check_failures(traj.failed)
    return grid, model, kpz.hopf_cole(traj)[0]


def run_kpz_lil(cfg, workers=None):
    grid, model, sf = _kpz_h(cfg, workers)
    rep = _report(cfg, grid, model)
    h = sf.transformed
    # dividing by sqrt(2 eps loglog) and comparing with frak_A(2) = 1/sqrt 2 is the
    # sqrt(eps loglog) envelope with limit 1
    return _lil_core(cfg, rep, h, np.ones(h.batch.shape[0]), 2.0)


def run_kpz_clt(cfg, workers=None):
    grid, model, sf = _kpz_h(cfg, workers)
    rep = _report(cfg, grid, model)
    # (h(x) - h(x - eps)) / sqrt(eps / 2) against the standard normal
    stat = _clt_stat(sf.transformed, cfg["eps_steps"], positions(cfg), 2.0) * math.sqrt(2.0)
    res = st.clt_check(stat, exact_scale=1.0)
    n = sf.transformed.batch.shape[0]
    rep.add("ks", res["ks"], 0.0, n)
    rep.add("ks_bootstrap_pvalue", res["pvalue"], 0.0, n)
    rep.check("ks_below_max", res["ks"] <= cfg["ks_max"], res["ks"], cfg["ks_max"])
    rep.curves["clt"] = _clt_curve(stat, st.sst.norm.cdf)
    return rep


def run_kpz_qv(cfg, workers=None):
    grid, model, sf = _kpz_h(cfg, workers)
    rep = _report(cfg, grid, model)
    # sigma = 1 in the reference makes it frak_B(2) int phi(h) = 1/2 int phi(h)
    return _variation_core(cfg, rep, sf.transformed, make_sigma("constant", c=1.0), 2.0)


RUNNERS = {
    "ratio": run_ratio,
    "lil": run_lil,
    "density": run_density,
    "clt": run_clt,
    "variation": run_variation,
    "localization": run_localization,
    "localization-u": run_localization_u,
    "holder": run_holder,
    "kpz-ratio": run_kpz_ratio,
    "kpz-lil": run_kpz_lil,
    "kpz-clt": run_kpz_clt,
    "kpz-qv": run_kpz_qv,
}


def run(cfg, workers=None):
    """Run the configured experiment; the report's runtime covers the whole call."""
    with st.Timer() as tm:
        rep = RUNNERS[cfg.experiment](cfg, workers)
    rep.runtime = tm.elapsed
    return rep
