"""Space-time white noise on a periodic lattice and the Gaussian fields it drives.

Conventions
-----------
The torus is [-L, L) with grid x_j = -L + j dx, so x = 0 sits at j = n/2.
Time slices are s in [i dt, (i+1) dt).  A slice is one vector of n standard
normals per replica (the cell increments are these times sqrt(dt dx)).

The contribution of slice i to a field observed at time t is the circular
convolution of its cell noise with a kernel whose Fourier multiplier is

    h(k)^2 = dx^{-1} sum_q int_{t - s_{i+1}}^{t - s_i} exp(-2 r |k + q K|^alpha) dr,    K = 2 pi / dx,

i.e. the exact law of the whole slice integral sampled on the grid (aliases
included).  Z, S, F and the solver all use these multipliers on the same
normals, which is what couples them.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.fft as sfft
from scipy import linalg

from . import _accel
from .constants import as_params, frak_A
from .oracle import S_increment_variance

STREAM_MAIN = 0
STREAM_EXT = 1
STREAM_DIRECT = 2
DEFAULT_CAP = 2 ** 27  # max doubles in one materialized noise block


@dataclass(frozen=True)
class GridSpec:
    L: float
    n_space: int
    t_max: float
    n_time: int

    def __post_init__(self):
        if not (self.L > 0 and self.t_max > 0):
            raise ValueError("L and t_max must be positive")
        n = int(self.n_space)
        if n < 4 or n & (n - 1):
            raise ValueError(f"n_space must be a power of two >= 4, got {self.n_space}")
        if int(self.n_time) < 1:
            raise ValueError("n_time must be positive")
        object.__setattr__(self, "n_space", n)
        object.__setattr__(self, "n_time", int(self.n_time))

    @property
    def dx(self):
        return 2.0 * self.L / self.n_space

    @property
    def dt(self):
        return self.t_max / self.n_time

    @property
    def x(self):
        return -self.L + self.dx * np.arange(self.n_space)

    @property
    def origin(self):
        return self.n_space // 2

    @property
    def k(self):
        """Nonnegative rfft wavenumbers."""
        return 2.0 * np.pi * np.fft.rfftfreq(self.n_space, d=self.dx)

    @property
    def kperiod(self):
        return 2.0 * np.pi / self.dx

    def check_resolution(self, alpha):
        """Time-stepping guard dt <= dx^alpha (the exact samplers do not need it)."""
        if self.dt > self.dx ** alpha * (1 + 1e-12):
            raise ValueError(f"dt={self.dt:.3g} exceeds dx^alpha={self.dx ** alpha:.3g}")

    def time_index(self, t):
        m = t / self.dt
        mi = int(round(m))
        if abs(m - mi) > 1e-9 * max(1.0, m) or not 0 <= mi <= self.n_time:
            raise ValueError(f"t={t} is not on the time lattice (dt={self.dt})")
        return mi

    def steps(self, lag):
        m = lag / self.dx
        mi = int(round(m))
        if abs(m - mi) > 1e-9 * max(1.0, m):
            raise ValueError(f"lag {lag} is not a multiple of dx={self.dx}")
        return mi


class FieldKind(str, Enum):
    Z = "Z"
    S = "S"
    F = "F"
    U = "U"
    X = "X"
    H = "H"


@dataclass
class FieldSample:
    grid: GridSpec | None
    time_label: float
    values: np.ndarray  # [replicas, n_space] or [n_space]
    kind: FieldKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = FieldKind(self.kind)
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"non-finite values in {self.kind.value} field")

    @property
    def batch(self):
        return np.atleast_2d(self.values)

    def at(self, x):
        j = self.grid.origin + self.grid.steps(x)
        return self.batch[:, j]

    def increment(self, eps, x=0.0):
        """f(x) - f(x - eps) per replica."""
        j = self.grid.origin + self.grid.steps(x)
        m = self.grid.steps(eps)
        return self.batch[:, j] - self.batch[:, j - m]


class NoiseLattice:
    """Lazily generated cell noise for a batch of replicas.

    Replica r uses seed ``seeds[r]``; slice i of stream s is generated from the
    key (seed, s, i), so any slice (and any block of cells in it) can be
    regenerated on its own.
    """

    def __init__(self, grid, seeds, cap=DEFAULT_CAP):
        self.grid = grid
        self.seeds = np.atleast_1d(np.asarray(seeds, dtype=np.int64))
        self.cap = cap
        self._keys = {}

    @property
    def replicas(self):
        return self.seeds.size

    def keys(self, stream, i):
        kk = (stream, i)
        if kk not in self._keys:
            self._keys[kk] = np.array([_accel.slice_key(s, stream, i) for s in self.seeds], dtype=np.uint64)
        return self._keys[kk]

    def normals(self, i, stream=STREAM_MAIN, start=0, count=None):
        n = self.grid.n_space if count is None else count
        return _accel.counter_normals(self.keys(stream, i), n, start)

    def slice(self, i, stream=STREAM_MAIN):
        """Cell increments of slice i, variance dt dx."""
        return self.normals(i, stream) * math.sqrt(self.grid.dt * self.grid.dx)

    @property
    def increments(self):
        """The full [n_time, n_space] matrix of the first replica."""
        g = self.grid
        if g.n_time * g.n_space > self.cap:
            raise MemoryError(f"lattice of {g.n_time * g.n_space} cells exceeds cap {self.cap}")
        one = NoiseLattice(g, self.seeds[:1])
        return np.vstack([one.slice(i) for i in range(g.n_time)])

    def echo(self):
        return {"seeds": [int(self.seeds[0]), int(self.seeds[-1])], "replicas": int(self.replicas)}


def make_noise(grid, seed, replicas=1, cap=DEFAULT_CAP):
    """Noise for replicas seed, seed+1, ..., seed+replicas-1."""
    if replicas < 1:
        raise ValueError("replicas must be positive")
    if grid.n_space * replicas > cap:
        raise MemoryError(f"one slice batch of {grid.n_space * replicas} cells exceeds cap {cap}")
    return NoiseLattice(grid, int(seed) + np.arange(replicas), cap)


# ---------------------------------------------------------------------------
# slice multipliers

_MULT_CACHE = {}


def _qmax(ra, kperiod, alpha):
    if ra <= 0:
        return 256
    # |k + qK| >= (q - 1/2) K; stop once exp(-2 ra |.|^alpha) < e^-40
    return max(1, int(math.ceil(0.5 + (20.0 / ra) ** (1.0 / alpha) / kperiod)))


def slice_multiplier(grid, alpha, ra, rb):
    """sqrt of the aliased slice spectrum over r in [ra, rb], divided by sqrt(dx)."""
    key = (grid.n_space, grid.L, alpha, round(ra, 15), round(rb, 15))
    hit = _MULT_CACHE.get(key)
    if hit is not None:
        return hit
    spec = _accel.aliased_slice_spectrum(grid.k, grid.kperiod, alpha, ra, rb, _qmax(ra, grid.kperiod, alpha))
    mult = np.sqrt(spec / grid.dx)
    if len(_MULT_CACHE) > 4096:
        _MULT_CACHE.clear()
    _MULT_CACHE[key] = mult
    return mult


def rfft(a):
    return sfft.rfft(a, axis=-1)


def irfft(a, n):
    return sfft.irfft(a, n=n, axis=-1)


def sample_Z(noise, p, t):
    """Z_t on the grid from slices 0 .. m-1 of the main stream."""
    p = as_params(p)
    g = noise.grid
    m = g.time_index(t)
    if m == 0:
        raise ValueError("t must be positive")
    acc = np.zeros((noise.replicas, g.k.size), dtype=complex)
    for i in range(m):
        h = slice_multiplier(g, p.alpha, t - (i + 1) * g.dt, t - i * g.dt)
        acc += h * rfft(noise.normals(i))
    vals = irfft(acc, g.n_space)
    return FieldSample(g, t, vals, FieldKind.Z, {"alpha": p.alpha})


def ext_edges(t, t_ext):
    """Dyadic blocks (t, 2t], (2t, 4t], ... ending at t_ext."""
    edges = [t]
    while edges[-1] * 2 < t_ext * (1 - 1e-12):
        edges.append(edges[-1] * 2)
    edges.append(t_ext)
    return edges


def S_tail_variance(p, t_ext, eps):
    return S_increment_variance(p, t_ext, eps).value


def choose_t_ext(p, t, eps, max_doublings=40):
    """Smallest t 2^j (j >= 6) whose discarded S variance fits the 1e-4 budget at eps."""
    p = as_params(p)
    budget = 1e-4 * frak_A(p) ** 2 * eps ** (p.alpha - 1.0)
    t_ext = 64.0 * t
    for _ in range(max_doublings):
        if S_tail_variance(p, t_ext, eps) <= budget:
            return t_ext
        t_ext *= 2.0
    raise ValueError("no t_ext within 2^46 t meets the tail budget")


def sample_S(noise, p, t, t_ext=None, eps=None):
    """S(x) = int_{r > t} [p_r(y) - p_r(y - x)] xi, truncated at r = t_ext.

    Uses the extension stream, so S is independent of Z.  The discarded
    (t_ext, inf) variance at increment eps (default 16 dx) is reported in meta;
    if it exceeds 1e-4 frak_A^2 eps^{alpha-1} the call is rejected.  By default
    t_ext is 64 t, doubled until that budget holds.
    """
    p = as_params(p)
    g = noise.grid
    eps = 16 * g.dx if eps is None else eps
    if t_ext is None:
        t_ext = choose_t_ext(p, t, eps)
    t_ext = float(t_ext)
    if t_ext < 64.0 * t * (1 - 1e-12):
        raise ValueError("t_ext must be at least 64 t")
    tail = S_tail_variance(p, t_ext, eps)
    budget = 1e-4 * frak_A(p) ** 2 * eps ** (p.alpha - 1.0)
    if tail > budget:
        raise ValueError(f"t_ext={t_ext:.4g} leaves tail variance {tail:.3g} > {budget:.3g} at eps={eps:.4g}")
    edges = ext_edges(t, t_ext)
    acc = np.zeros((noise.replicas, g.k.size), dtype=complex)
    for j, (ra, rb) in enumerate(zip(edges[:-1], edges[1:])):
        acc += slice_multiplier(g, p.alpha, ra, rb) * rfft(noise.normals(j, STREAM_EXT))
    w = irfft(acc, g.n_space)
    vals = w[:, [g.origin]] - w
    return FieldSample(g, t, vals, FieldKind.S,
                       {"t_ext": t_ext, "tail_variance": tail, "tail_eps": eps, "alpha": p.alpha})


def coupled_F(z, s, p):
    """The fBm of the decomposition: (Z - Z(0) - S) / frak_A, pinned at 0."""
    if z.kind is not FieldKind.Z or s.kind is not FieldKind.S:
        raise ValueError("coupled_F needs a Z field and an S field")
    if z.grid != s.grid or z.batch.shape != s.batch.shape:
        raise ValueError("Z and S live on different grids")
    p = as_params(p)
    zb = z.batch
    o = z.grid.origin
    vals = (zb - zb[:, [o]] - s.batch) / frak_A(p)
    vals[:, o] = 0.0
    return FieldSample(z.grid, z.time_label, vals, FieldKind.F, {"alpha": p.alpha, **s.meta})


def sample_fbm_direct(h, xs, seed, replicas=1):
    """Exact fBm(h) on sorted xs (which must contain 0) by Cholesky factorization."""
    from .oracle import fbm_covariance
    xs = np.asarray(xs, dtype=float)
    if xs.size > 4096:
        raise ValueError("direct sampler is limited to 4096 points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    zero = np.nonzero(xs == 0.0)[0]
    if zero.size != 1:
        raise ValueError("xs must contain 0")
    free = np.delete(xs, zero[0])
    cov = fbm_covariance(h, free[:, None], free[None, :])
    cov = cov + 1e-14 * np.trace(cov) / cov.shape[0] * np.eye(cov.shape[0])
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("covariance not positive definite (duplicated abscissae?)") from exc
    keys = np.array([_accel.slice_key(int(seed) + r, STREAM_DIRECT, 0) for r in range(replicas)], dtype=np.uint64)
    z = _accel.counter_normals(keys, free.size)
    vals = np.zeros((replicas, xs.size))
    vals[:, np.arange(xs.size) != zero[0]] = z @ chol.T
    return FieldSample(None, 0.0, vals, FieldKind.F, {"xs": xs, "hurst": h})
