"""Mild-form solver: linear and deterministic reductions, PAM mean, guards, Holder fits."""
import math

import numpy as np
import pytest
from scipy import integrate

from fracshe import fields as fl
from fracshe.fields import GridSpec
from fracshe.kernels import eval_kernel, unit_density
from fracshe.oracle import Q_increment_variance
from fracshe.solver import (ModelSpec, Sigma, SolverBlowUp, check_lipschitz, holder_slope, make_sigma,
                            moment_bound_check, register_sigma, solve)


def grid(alpha, L=1.0, n=128, t=0.25):
    dx = 2 * L / n
    return GridSpec(L, n, t, int(math.ceil(t / dx ** alpha - 1e-9)))


# [TRIVIAL] sigma = 1, u0 = 0 is the linear field Z
@pytest.mark.parametrize("a", [1.5, 2.0])
def test_linear_equals_Z(a):
    g = grid(a)
    noise = fl.make_noise(g, 4, replicas=20)
    traj = solve(ModelSpec(a, make_sigma("constant", c=1.0)), noise, [0.125, 0.25], track_linear=True)
    for t in (0.125, 0.25):
        z = fl.sample_Z(noise, a, t).batch
        u = traj.at(t).batch
        assert np.max(np.abs(u - z)) <= 0.02 * z.std()
        np.testing.assert_allclose(traj.linear[t].batch, z, atol=1e-12 * np.abs(z).max())


# [TRIVIAL] sigma = 0: deterministic heat flow p_t * u0
def test_heat_flow_gaussian():
    g = grid(2.0, n=256)
    u0 = lambda x: np.cos(np.pi * x) + 0.5 * np.sin(2 * np.pi * x) + 0.2  # noqa: E731
    traj = solve(ModelSpec(2.0, make_sigma("constant", c=0.0), u0), fl.make_noise(g, 1), [0.25])
    ys = np.linspace(-6, 6, 24001)
    p = eval_kernel(2.0, 0.25, ys).values
    ref = np.array([np.trapezoid(p * u0(x - ys), ys) for x in g.x])
    assert np.max(np.abs(traj.snapshots[0].batch[0] - ref)) <= 1e-8


def test_heat_flow_stable():
    a, t = 1.5, 0.25
    g = grid(a, n=256)
    k = np.pi  # one torus mode
    traj = solve(ModelSpec(a, make_sigma("constant", c=0.0), lambda x: np.cos(k * x)), fl.make_noise(g, 1), [t])
    # characteristic function of p_t at k, from the kernel module
    s = t ** (1 / a)
    phi = 2 * integrate.quad(lambda y: unit_density(a, np.array([y]))[0][0], 0, np.inf, weight="cos",
                             wvar=k * s)[0]
    assert np.max(np.abs(traj.snapshots[0].batch[0] - phi * np.cos(k * g.x))) <= 1e-8


# [DERIVED] PAM martingale mean
def test_pam_mean():
    g = grid(2.0, n=64)
    traj = solve(ModelSpec(2.0, make_sigma("identity"), 1.0), fl.make_noise(g, 100, replicas=1000), [0.25])
    u = traj.snapshots[0].batch[:, g.origin]
    assert abs(u.mean() - 1.0) <= 4 * u.std(ddof=1) / math.sqrt(u.size)
    assert u.min() > 0


def test_deterministic():
    g = grid(1.5, n=64)
    m = ModelSpec(1.5, make_sigma("bounded_smooth"), 0.3)
    a = solve(m, fl.make_noise(g, 8, replicas=5), [0.25]).snapshots[0].batch
    b = solve(m, fl.make_noise(g, 8, replicas=5), [0.25]).snapshots[0].batch
    assert np.array_equal(a, b)


def test_blowup():
    g = grid(2.0, n=32)
    m = ModelSpec(2.0, make_sigma("constant", c=0.0), 2e8)
    with pytest.raises(SolverBlowUp):
        solve(m, fl.make_noise(g, 1), [0.25])
    traj = solve(m, fl.make_noise(g, 1, replicas=3), [0.25], on_blowup="mask")
    assert traj.failed.all()


def test_model_guards():
    with pytest.raises(ValueError):
        make_sigma("nope")
    bad = Sigma("steep", lambda u: 3.0 * u, 1.0)
    with pytest.raises(ValueError):
        ModelSpec(1.5, bad)
    with pytest.raises(ValueError):
        ModelSpec(1.5, "identity", T=0.0)
    with pytest.raises(ValueError):
        ModelSpec(1.5, "identity", lambda x: np.where(x > 0, np.inf, 0.0)).initial(grid(1.5, n=16))
    assert check_lipschitz(make_sigma("bounded_smooth")) <= 0.5
    register_sigma("half", lambda: Sigma("half", lambda u: 0.5 * u, 0.5))
    assert make_sigma("half")(np.array([2.0]))[0] == 1.0


def test_snapshot_guards():
    g = grid(1.5, n=32)
    m = ModelSpec(1.5, "identity", 1.0)
    noise = fl.make_noise(g, 1)
    for times in ([0.0], [0.1234], [0.25, 0.25]):
        with pytest.raises(ValueError):
            solve(m, noise, times)
    with pytest.raises(ValueError):
        solve(m, fl.make_noise(GridSpec(1.0, 32, 0.25, 2), 1), [0.25])
    with pytest.raises(KeyError):
        solve(m, noise, [0.25]).at(0.125)


def test_moment_bound():
    g = grid(1.5, n=64)
    u0 = lambda x: 1.0 + 0.5 * np.cos(np.pi * x)  # noqa: E731
    traj = solve(ModelSpec(1.5, make_sigma("constant", c=0.0), u0), fl.make_noise(g, 1, replicas=100), [0.25])
    mb = moment_bound_check(traj, 2)
    heat = traj.snapshots[0].batch[0]
    assert mb.sup_moment[0] == pytest.approx(np.max(heat ** 2), rel=1e-12)
    g2 = GridSpec(1.0, 64, 0.5, 92)
    m = ModelSpec(1.5, make_sigma("bounded_smooth"), 0.0)
    traj = solve(m, fl.make_noise(g2, 1, replicas=200), [0.25, 0.5])
    mb = moment_bound_check(traj, 2)
    assert mb.finite and 1.0 < mb.growth() < 3.0
    with pytest.raises(ValueError):
        moment_bound_check(traj, 3)


# [DERIVED] sigma = 1: spatial slope of the Z field follows the oracle across lags
def test_holder_linear_matches_oracle():
    a, t = 1.5, 0.0625
    g = grid(a, n=256, t=t)
    traj = solve(ModelSpec(a, make_sigma("constant", c=1.0)), fl.make_noise(g, 1, replicas=300), [t])
    lags = [4, 8, 16, 32]
    fit = holder_slope(traj, "space", t, lags, min_replicas=300)
    q = [Q_increment_variance(a, t, m * g.dx).value for m in lags]
    ref = np.polyfit(np.log(np.array(lags) * g.dx), np.log(q), 1)[0]
    assert abs(fit.slope - ref) <= 3 * fit.stderr + 0.02
    np.testing.assert_allclose(fit.msq, q, rtol=0.05)


def test_holder_guards():
    g = grid(1.5, n=64)
    traj = solve(ModelSpec(1.5, "bounded_smooth"), fl.make_noise(g, 1, replicas=20), [0.25])
    with pytest.raises(ValueError):
        holder_slope(traj, "space", min_replicas=1000)
    with pytest.raises(ValueError):
        holder_slope(traj, "space", lags=[4, 8], min_replicas=10)
    with pytest.raises(ValueError):
        holder_slope(traj, "time", lags=[2, 4, 8, 16], min_replicas=10)
    with pytest.raises(ValueError):
        holder_slope(traj, "diagonal", min_replicas=10)
