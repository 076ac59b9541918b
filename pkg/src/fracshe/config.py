"""Flat key = value run configuration.

Grammar, one entry per line::

    # comment
    key = value            # trailing comments allowed
    eps_steps = 32, 16, 8  # lists are comma separated

Keys are validated against SCHEMA and against the keys the chosen experiment
uses; anything else is rejected.  Every default is filled in and echoed.
"""
import hashlib
import json
import math
from dataclasses import dataclass

from .constants import as_params


class ConfigError(ValueError):
    pass


def _floats(v):
    return tuple(float(s) for s in v.split(",") if s.strip())


def _ints(v):
    return tuple(int(s) for s in v.split(",") if s.strip())


# key: (parser, default, help)
SCHEMA = {
    "experiment": (str, None, "experiment name"),
    "alpha": (float, 2.0, "order of the fractional Laplacian, in (1, 2]"),
    "sigma": (str, "constant", "sigma from the registry: constant, identity, affine, bounded_smooth"),
    "sigma_c": (float, 1.0, "constant sigma value"),
    "sigma_a": (float, 1.0, "affine sigma intercept"),
    "sigma_b": (float, 0.5, "affine sigma slope"),
    "u0": (float, 0.0, "constant initial value"),
    "L": (float, 0.5, "torus half-width: x in [-L, L)"),
    "n_space": (int, 256, "spatial cells"),
    "t": (float, 0.0625, "observation time"),
    "n_time": (int, 0, "time steps up to t; 0 picks the smallest with dt <= dx^alpha"),
    "replicas": (int, 1000, "replica count"),
    "min_replicas": (int, 100, "declared minimum replica count"),
    "seed": (int, 1, "base seed; replica i uses seed + i"),
    "ref_seed": (int, 0, "base seed of the independent reference batch; 0 means seed + 10^6"),
    "eps_steps": (_ints, (32, 16, 8), "increment lengths in dx units, coarse to fine"),
    "positions": (int, 8, "evaluation points per replica, spread evenly over the torus"),
    "lam": (float, 0.0, "exceedance level; 0 means 0.25 frak_A"),
    "threshold": (float, 0.2, "pass level at the finest eps"),
    "t_ext": (float, 0.0, "S truncation horizon; 0 picks it from the tail budget"),
    "s_list": (_floats, (), "density-average windows; empty means every eps level from the third"),
    "delta": (float, 0.5, "LIL envelope slack"),
    "envelope_fraction": (float, 0.8, "fraction of replicas required inside the LIL envelope"),
    "symmetry_pvalue": (float, 0.01, "minimum KS p-value for the +/- LIL symmetry"),
    "ks_max": (float, 0.05, "largest accepted KS distance"),
    "level": (int, 5, "dyadic level n of the variation mesh 2^-n"),
    "a": (float, 0.0, "left end of the variation window"),
    "b": (float, 0.25, "right end of the variation window"),
    "phi": (str, "one", "variation weight: one, zero, identity, sin"),
    "tolerance": (float, 0.05, "relative tolerance"),
    "beta": (_floats, (4.0, 16.0, 64.0), "localization box parameters"),
    "slope_max": (float, -0.4, "largest accepted beta slope"),
    "frozen": (int, 0, "localization-u: freeze sigma at the box bottom"),
    "k": (int, 2, "moment order"),
    "lags": (_ints, (4, 8, 16, 32), "Holder lags in dx (space) and dt (time) units"),
    "slope_tol": (float, 0.1, "Holder slope tolerance"),
}

_GRID = ("alpha", "L", "n_space", "t", "n_time", "replicas", "min_replicas", "seed")
_SIGMA = ("sigma", "sigma_c", "sigma_a", "sigma_b", "u0")

EXPERIMENT_KEYS = {
    "ratio": _GRID + _SIGMA + ("eps_steps", "positions", "lam", "threshold", "t_ext"),
    "lil": _GRID + _SIGMA + ("delta", "envelope_fraction", "symmetry_pvalue"),
    "density": _GRID + _SIGMA + ("eps_steps", "s_list", "t_ext"),
    "clt": _GRID + _SIGMA + ("eps_steps", "positions", "ks_max", "ref_seed"),
    "variation": _GRID + _SIGMA + ("level", "a", "b", "phi", "tolerance"),
    "localization": _GRID + ("eps_steps", "beta", "slope_max", "tolerance"),
    "localization-u": _GRID + _SIGMA + ("eps_steps", "beta", "slope_max", "frozen", "k"),
    "holder": _GRID + _SIGMA + ("lags", "slope_tol"),
    # Hopf-Cole experiments: alpha = 2 and sigma(u) = u are fixed
    "kpz-ratio": _GRID + ("u0", "eps_steps", "positions", "lam", "threshold", "t_ext"),
    "kpz-lil": _GRID + ("u0", "delta", "envelope_fraction", "symmetry_pvalue"),
    "kpz-clt": _GRID + ("u0", "eps_steps", "positions", "ks_max"),
    "kpz-qv": _GRID + ("u0", "level", "a", "b", "phi", "tolerance"),
}

EXPERIMENTS = ("ratio", "lil", "density", "clt", "variation", "localization", "localization-u", "holder")
KPZ_EXPERIMENTS = ("ratio", "lil", "clt", "qv")


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def echo(self):
        d = {"experiment": self.experiment}
        d.update({k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())})
        return d

    def digest(self):
        blob = json.dumps(self.echo(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def dx(self):
        return 2.0 * self["L"] / self["n_space"]

    @property
    def ref_seed(self):
        return self["ref_seed"] or self["seed"] + 10 ** 6


def parse_text(text):
    """Raw key -> string map; duplicate keys and malformed lines are errors."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ConfigError(f"line {no}: empty key or value")
        if key in out:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        out[key] = val
    return out


def build(raw, experiment=None, overrides=None):
    """Validate a raw map (plus CLI overrides) into a RunConfig with every default filled."""
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = str(v)
    name = experiment or raw.get("experiment")
    if experiment and raw.get("experiment") not in (None, experiment):
        raise ConfigError(f"config is for experiment {raw['experiment']!r}, not {experiment!r}")
    raw.pop("experiment", None)
    if name not in EXPERIMENT_KEYS:
        raise ConfigError(f"unknown experiment {name!r}; known: {sorted(EXPERIMENT_KEYS)}")
    allowed = EXPERIMENT_KEYS[name]
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys for {name}: {', '.join(unknown)}")
    vals = {}
    for key in allowed:
        parser, default, _ = SCHEMA[key]
        if key in raw:
            try:
                vals[key] = parser(raw[key])
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw[key]!r}") from None
        else:
            vals[key] = default
    cfg = RunConfig(name, vals)
    validate(cfg)
    return cfg


def load(path, experiment=None, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return build(parse_text(text), experiment, overrides)


def validate(cfg):
    v = cfg.values
    if "alpha" in v:
        try:
            as_params(v["alpha"])
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if cfg.experiment.startswith("kpz") and v["alpha"] != 2.0:
        raise ConfigError("Hopf-Cole experiments need alpha = 2")
    for key in ("replicas", "n_space", "min_replicas"):
        if key in v and v[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if v["replicas"] < v["min_replicas"]:
        raise ConfigError(f"replicas={v['replicas']} below min_replicas={v['min_replicas']}")
    for key in ("L", "t"):
        if not (v[key] > 0 and math.isfinite(v[key])):
            raise ConfigError(f"{key} must be positive")
    if v["n_time"] < 0:
        raise ConfigError("n_time must be >= 0")
    if "eps_steps" in v:
        steps = v["eps_steps"]
        if not steps or min(steps) < 4:
            raise ConfigError("eps_steps must be >= 4 dx")
        if list(steps) != sorted(steps, reverse=True) or len(set(steps)) != len(steps):
            raise ConfigError("eps_steps must be strictly decreasing (coarse to fine)")
        if 2 * max(steps) > v["n_space"]:
            raise ConfigError("largest eps exceeds half the torus")
    if "positions" in v and not 1 <= v["positions"] <= v["n_space"]:
        raise ConfigError("positions must be in [1, n_space]")
    if "sigma" in v:
        try:
            sigma_from(cfg)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None
    if "beta" in v and (not v["beta"] or min(v["beta"]) <= 1):
        raise ConfigError("beta values must exceed 1")
    if "a" in v and not v["b"] > v["a"]:
        raise ConfigError("need b > a")
    if "phi" in v:
        from .statistics import PHI
        if v["phi"] not in PHI:
            raise ConfigError(f"unknown phi {v['phi']!r}; known: {sorted(PHI)}")
    if "k" in v and (v["k"] <= 0 or v["k"] % 2):
        raise ConfigError("k must be a positive even integer")


def sigma_from(cfg):
    from .solver import make_sigma
    v = cfg.values
    name = v.get("sigma", "identity")
    if name == "constant":
        return make_sigma(name, c=v["sigma_c"])
    if name == "affine":
        return make_sigma(name, a=v["sigma_a"], b=v["sigma_b"])
    return make_sigma(name)


def describe():
    """Schema as text, for --help style listings."""
    rows = [f"{k:18s} default={d!r:22s} {h}" for k, (_, d, h) in SCHEMA.items()]
    return "\n".join(rows)
