"""numba and numpy paths of the hot loops agree; the RNG is counter-based."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs
from scipy import stats

from fracshe import _accel

needs_numba = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba disabled")


def keys(n, seed=3, stream=0, i=0):
    return np.array([_accel.slice_key(seed + r, stream, i) for r in range(n)], dtype=np.uint64)


@needs_numba
def test_normals_parity():
    k = keys(50)
    a = _accel._normals_np(k, 7, 3000)
    b = _accel._normals_nb(k, 7, 3000, _accel.ZIG_X, _accel.ZIG_RATIO)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


@needs_numba
def test_alias_parity():
    k = 2 * np.pi * np.fft.rfftfreq(512, d=1 / 64)
    for ra, rb, q in ((0.0, 1e-3, 256), (0.01, 0.02, 4)):
        a = _accel._alias_np(k, 2 * np.pi * 64, 1.5, ra, rb, q)
        b = _accel._alias_nb(k, 2 * np.pi * 64, 1.5, ra, rb, q)
        np.testing.assert_allclose(a, b, rtol=1e-12)


@needs_numba
def test_sum_and_variation_parity(rng):
    x = rng.standard_normal((300, 17)) * 1e6
    np.testing.assert_allclose(_accel._neumaier_np(x), _accel._neumaier_nb(x), rtol=0, atol=1e-9)
    u = rng.standard_normal((5, 200))
    idx = np.arange(0, 150, 4)
    w = rng.random((5, idx.size))
    np.testing.assert_allclose(_accel._variation_np(u, idx, 4, w, 4.0), _accel._variation_nb(u, idx, 4, w, 4.0),
                               rtol=1e-12)


def test_sub_block_reproducible():
    k = keys(4)
    full = _accel.counter_normals(k, 1000)
    part = _accel.counter_normals(k, 100, start=450)
    np.testing.assert_array_equal(full[:, 450:550], part)


def test_keys_distinct_and_deterministic():
    a = {_accel.slice_key(s, st, i) for s in range(20) for st in range(3) for i in range(20)}
    assert len(a) == 20 * 3 * 20
    assert _accel.slice_key(5, 1, 2) == _accel.slice_key(5, 1, 2)


def test_normal_law():
    z = _accel.counter_normals(keys(20), 20000).ravel()
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / z.size)
    assert stats.kstest(z, "norm").pvalue > 1e-3
    # the ziggurat tail layer is exercised
    assert np.abs(z).max() > 4.0


def test_streams_uncorrelated():
    a = _accel.counter_normals(keys(1, seed=1), 200000).ravel()
    b = _accel.counter_normals(keys(1, seed=2), 200000).ravel()
    assert abs(np.corrcoef(a, b)[0, 1]) < 5 / np.sqrt(a.size)
    assert abs(np.corrcoef(a[:-1], a[1:])[0, 1]) < 5 / np.sqrt(a.size)


@settings(max_examples=30, deadline=None)
@given(hs.integers(1, 40), hs.integers(1, 6), hs.integers(0, 2 ** 31))
def test_compensated_sum_exact(n, m, seed):
    r = np.random.default_rng(seed)
    # integers scaled by powers of two: every partial sum is exactly representable
    x = r.integers(-2 ** 20, 2 ** 20, size=(n, m)).astype(float) * 2.0 ** -10
    assert np.array_equal(_accel.compensated_sum(x), x.sum(axis=0))


def test_compensated_sum_cancellation():
    x = np.array([1e16, 1.0, -1e16, 1.0])
    assert _accel.compensated_sum(x) == 2.0


def test_variation_sums_naive(rng):
    u = rng.standard_normal((3, 64))
    idx = np.array([0, 8, 16, 40])
    w = rng.random((3, 4))
    out = _accel.variation_sums(u, idx, 8, w, 3.0)
    for r in range(3):
        ref = sum(w[r, m] * abs(u[r, i + 8] - u[r, i]) ** 3 for m, i in enumerate(idx))
        assert out[r] == pytest.approx(ref, rel=1e-13)


def test_env_flag_selects_numpy():
    code = ("from fracshe import _accel, fields; import numpy as np;"
            "print(_accel.backend());"
            "print(repr(float(_accel.counter_normals([_accel.slice_key(3, 0, 0)], 5)[0, 4])))")
    env = dict(os.environ, FRACSHE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, value = out.stdout.split()
    assert backend == "numpy"
    here = _accel.counter_normals([_accel.slice_key(3, 0, 0)], 5)[0, 4]
    assert float(value) == pytest.approx(here, rel=1e-13)
