"""Hot loops with a numba path and a pure-numpy fallback.

Set ``FRACSHE_DISABLE_NUMBA=1`` to force the numpy implementations (also used
automatically when numba is not importable).  Both paths compute the same
quantities; results agree to rounding, not necessarily bit for bit, because
libm and numpy's vectorized transcendental functions may differ in the last ulp.
"""
import math
import os

import numpy as np

_DISABLED = os.environ.get("FRACSHE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange
    # TBB in some images is too old for numba; the workqueue layer always works
    if os.environ.get("NUMBA_THREADING_LAYER") is None:
        numba.config.THREADING_LAYER = "workqueue"
    HAS_NUMBA = True
    # prange only pays off with more than one core
    PARALLEL = (os.cpu_count() or 1) > 1
except ImportError:  # pragma: no cover - exercised by the env flag in CI
    HAS_NUMBA = False
    PARALLEL = False

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 2.0 ** -53


def backend():
    return "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# counter-based normals
#
# Cell j of a slice with key k starts from the SplitMix64 counter
# z = k + (j + 1) * golden.  Attempt a of the ziggurat draws the 64-bit word
# mix(z + a * ALT); the low 7 bits pick the layer and the top 53 bits the
# abscissa (Doornik's 128-layer variant).  About 1.2% of cells need a second
# look, so almost every normal costs one mix and one multiply.

_ALT = 0xD1B54A32D192ED03
_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3


def _zig_tables():
    x = np.empty(129)
    f = math.exp(-0.5 * _ZIG_R * _ZIG_R)
    x[0] = _ZIG_V / f
    x[1] = _ZIG_R
    for i in range(2, 128):
        x[i] = math.sqrt(-2.0 * math.log(_ZIG_V / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    x[128] = 0.0
    ratio = x[1:] / x[:-1]
    return x, ratio


ZIG_X, ZIG_RATIO = _zig_tables()
_MASK = (1 << 64) - 1


def _mix_int(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def slice_key(seed, stream, time_index):
    """64-bit key of one time slice; pure python so both paths share it."""
    h = _mix_int(int(seed) * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019)
    h = _mix_int(h ^ (int(stream) * 0xD1B54A32D192ED03 + 1))
    h = _mix_int(h ^ (int(time_index) * 0x8CB92BA72F3D8DD7 + 2))
    return h


def _zig_cell_py(z, x, ratio):
    """Full ziggurat for one cell from counter z (python ints); used for rejects."""
    a = 0
    while True:
        w = _mix_int(z + a * _ALT)
        a += 1
        i = w & 127
        u = 2.0 * ((w >> 11) * _TWO53) - 1.0
        if abs(u) < ratio[i]:
            return u * x[i]
        if i == 0:
            while True:
                u1 = ((_mix_int(z + a * _ALT) >> 11) + 1) * _TWO53
                u2 = ((_mix_int(z + (a + 1) * _ALT) >> 11) + 1) * _TWO53
                a += 2
                xx = -math.log(u1) / _ZIG_R
                yy = -math.log(u2)
                if yy + yy >= xx * xx:
                    return _ZIG_R + xx if u > 0 else -_ZIG_R - xx
        xi = u * x[i]
        f0 = math.exp(-0.5 * (x[i] * x[i] - xi * xi))
        f1 = math.exp(-0.5 * (x[i + 1] * x[i + 1] - xi * xi))
        v = ((_mix_int(z + a * _ALT) >> 11)) * _TWO53
        a += 1
        if f1 + v * (f0 - f1) < 1.0:
            return xi


def _normals_np(keys, start, n):
    keys = np.asarray(keys, dtype=np.uint64)[:, None]
    j = np.arange(start, start + n, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        z = keys + (j + np.uint64(1)) * GOLDEN
        w = _mix_np(z)
    i = (w & np.uint64(127)).astype(np.intp)
    u = 2.0 * ((w >> np.uint64(11)).astype(np.float64) * _TWO53) - 1.0
    out = u * ZIG_X[i]
    bad = np.nonzero(np.abs(u) >= ZIG_RATIO[i])
    for r, c in zip(*bad):
        out[r, c] = _zig_cell_py(int(z[r, c]), ZIG_X, ZIG_RATIO)
    return out


def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


if HAS_NUMBA:

    @njit(cache=True, inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _zig_slow_nb(z, x, ratio):
        alt = np.uint64(_ALT)
        a = np.uint64(0)
        while True:
            w = _mix_nb(z + a * alt)
            a += np.uint64(1)
            i = np.int64(w & np.uint64(127))
            u = 2.0 * (np.float64(w >> np.uint64(11)) * 1.1102230246251565e-16) - 1.0
            if abs(u) < ratio[i]:
                return u * x[i]
            if i == 0:
                while True:
                    u1 = (np.float64(_mix_nb(z + a * alt) >> np.uint64(11)) + 1.0) * 1.1102230246251565e-16
                    u2 = (np.float64(_mix_nb(z + (a + np.uint64(1)) * alt) >> np.uint64(11)) + 1.0) \
                        * 1.1102230246251565e-16
                    a += np.uint64(2)
                    xx = -math.log(u1) / 3.442619855899
                    yy = -math.log(u2)
                    if yy + yy >= xx * xx:
                        if u > 0:
                            return 3.442619855899 + xx
                        return -3.442619855899 - xx
            xi = u * x[i]
            f0 = math.exp(-0.5 * (x[i] * x[i] - xi * xi))
            f1 = math.exp(-0.5 * (x[i + 1] * x[i + 1] - xi * xi))
            v = np.float64(_mix_nb(z + a * alt) >> np.uint64(11)) * 1.1102230246251565e-16
            a += np.uint64(1)
            if f1 + v * (f0 - f1) < 1.0:
                return xi

    @njit(cache=True, parallel=PARALLEL)
    def _normals_nb(keys, start, n, x, ratio):
        out = np.empty((keys.shape[0], n))
        g = np.uint64(0x9E3779B97F4A7C15)
        for r in prange(keys.shape[0]):
            k = keys[r]
            for c in range(n):
                z = k + (np.uint64(start + c) + np.uint64(1)) * g
                w = _mix_nb(z)
                i = np.int64(w & np.uint64(127))
                u = 2.0 * (np.float64(w >> np.uint64(11)) * 1.1102230246251565e-16) - 1.0
                if abs(u) < ratio[i]:
                    out[r, c] = u * x[i]
                else:
                    out[r, c] = _zig_slow_nb(z, x, ratio)
        return out


def counter_normals(keys, n, start=0):
    """Standard normals for cells ``start .. start+n-1`` of every slice key.

    ``keys`` is a sequence of 64-bit slice keys (one row per replica).  Any
    sub-block of a row is reproducible on its own via ``start``.
    """
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
    if HAS_NUMBA:
        return _normals_nb(keys, int(start), int(n), ZIG_X, ZIG_RATIO)
    return _normals_np(keys, int(start), int(n))


# ---------------------------------------------------------------------------
# aliased slice spectrum: sum_q int_{ra}^{rb} exp(-2 r |k + q K|^alpha) dr


def _slice_integral(lam, ra, rb):
    out = np.empty_like(lam)
    small = lam * (rb - ra) < 1e-8
    ls = lam[~small]
    out[~small] = (np.exp(-2.0 * ra * ls) - np.exp(-2.0 * rb * ls)) / (2.0 * ls)
    out[small] = (rb - ra) * np.exp(-2.0 * ra * lam[small])
    return out


def _alias_np(kabs, kperiod, alpha, ra, rb, qmax):
    total = _slice_integral(kabs ** alpha, ra, rb)
    for q in range(1, qmax + 1):
        lp = np.abs(kabs + q * kperiod) ** alpha
        lm = np.abs(kabs - q * kperiod) ** alpha
        total = total + _slice_integral(lp, ra, rb) + _slice_integral(lm, ra, rb)
    return total


if HAS_NUMBA:

    @njit(cache=True, inline="always")
    def _slice_integral_scalar(lam, ra, rb):
        if lam * (rb - ra) < 1e-8:
            return (rb - ra) * math.exp(-2.0 * ra * lam)
        return (math.exp(-2.0 * ra * lam) - math.exp(-2.0 * rb * lam)) / (2.0 * lam)

    @njit(cache=True)
    def _alias_nb(kabs, kperiod, alpha, ra, rb, qmax):
        out = np.empty(kabs.shape[0])
        for i in range(kabs.shape[0]):
            k = kabs[i]
            s = _slice_integral_scalar(k ** alpha, ra, rb)
            for q in range(1, qmax + 1):
                s += _slice_integral_scalar(abs(k + q * kperiod) ** alpha, ra, rb)
                s += _slice_integral_scalar(abs(k - q * kperiod) ** alpha, ra, rb)
            out[i] = s
        return out


def aliased_slice_spectrum(kabs, kperiod, alpha, ra, rb, qmax):
    """Sum over |q| <= qmax of the slice integral at frequency |k + q kperiod|.

    The truncated remainder for ``ra == 0`` is added by an integral tail
    estimate; for ``ra > 0`` terms decay like exp(-2 ra |q K|^alpha) and the
    caller picks qmax so that they are negligible.
    """
    kabs = np.ascontiguousarray(np.abs(kabs), dtype=np.float64)
    if HAS_NUMBA:
        total = _alias_nb(kabs, float(kperiod), float(alpha), float(ra), float(rb), int(qmax))
    else:
        total = _alias_np(kabs, float(kperiod), float(alpha), float(ra), float(rb), int(qmax))
    if ra == 0.0 and qmax > 0:
        # sum_{q>Q} of ~ 1/(2 |q K|^alpha) on both sides, midpoint-corrected
        # integral tail; exp(-2 rb lam) is negligible out there.
        qq = qmax + 0.5
        tail = (qq * kperiod) ** (1.0 - alpha) / (kperiod * (alpha - 1.0))
        total = total + tail  # 2 sides x 1/2
    return total


# ---------------------------------------------------------------------------
# compensated reductions across replicas


def _neumaier_np(x):
    x = np.asarray(x, dtype=np.float64)
    s = np.zeros(x.shape[1:])
    c = np.zeros(x.shape[1:])
    for row in x:
        t = s + row
        big = np.abs(s) >= np.abs(row)
        c += np.where(big, (s - t) + row, (row - t) + s)
        s = t
    return s + c


if HAS_NUMBA:

    @njit(cache=True)
    def _neumaier_nb(x):
        m = x.shape[1]
        s = np.zeros(m)
        c = np.zeros(m)
        for i in range(x.shape[0]):
            for j in range(m):
                v = x[i, j]
                t = s[j] + v
                if abs(s[j]) >= abs(v):
                    c[j] += (s[j] - t) + v
                else:
                    c[j] += (v - t) + s[j]
                s[j] = t
        return s + c


def compensated_sum(x):
    """Order-insensitive (to rounding) sum over axis 0 with Neumaier compensation."""
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[1:]
    flat = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    if HAS_NUMBA:
        out = _neumaier_nb(flat)
    else:
        out = _neumaier_np(flat)
    return out.reshape(shape) if shape else float(out[0])


# ---------------------------------------------------------------------------
# dyadic variation sums


def _variation_np(values, idx, step, weights, power):
    inc = np.abs(values[:, idx + step] - values[:, idx]) ** power
    return (weights * inc).sum(axis=1)


if HAS_NUMBA:

    @njit(cache=True, parallel=PARALLEL)
    def _variation_nb(values, idx, step, weights, power):
        out = np.zeros(values.shape[0])
        for r in prange(values.shape[0]):
            s = 0.0
            for m in range(idx.shape[0]):
                i = idx[m]
                s += weights[r, m] * abs(values[r, i + step] - values[r, i]) ** power
            out[r] = s
        return out


def variation_sums(values, idx, step, weights, power):
    """Per-row sum of weights[m] * |v[idx[m] + step] - v[idx[m]]|^power."""
    values = np.ascontiguousarray(np.atleast_2d(values), dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    weights = np.ascontiguousarray(np.broadcast_to(weights, (values.shape[0], idx.shape[0])),
                                   dtype=np.float64)
    if HAS_NUMBA:
        return _variation_nb(values, idx, int(step), weights, float(power))
    return _variation_np(values, idx, int(step), weights, float(power))
