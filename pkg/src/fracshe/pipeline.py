"""Coupled batches: u, Z, S and F driven by one noise lattice, farmed in fixed chunks."""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fields import FieldKind, FieldSample, coupled_F, make_noise, sample_S
from .solver import solve

CHUNK = 250  # replicas per task; fixed so results do not depend on the worker count


def default_workers():
    try:
        return max(1, int(os.environ.get("FRACSHE_WORKERS", "1")))
    except ValueError:
        return 1


def farm(fn, tasks, workers=None):
    """Map fn over tasks, in order, on a process pool (or inline for one worker)."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*tasks)))


def chunks(seed, replicas, size=CHUNK):
    out = []
    for start in range(0, replicas, size):
        out.append((seed + start, min(size, replicas - start)))
    return out


@dataclass
class CoupledBatch:
    u: FieldSample
    Z: FieldSample
    S: FieldSample
    F: FieldSample
    model: object
    seeds: np.ndarray
    failed: np.ndarray

    @property
    def grid(self):
        return self.u.grid

    @property
    def ok(self):
        return ~self.failed


def _coupled_chunk(model, grid, t, seed, count, t_ext, eps_check):
    noise = make_noise(grid, seed, count)
    traj = solve(model, noise, [t], track_linear=True, on_blowup="mask")
    z = traj.linear[t]
    s = sample_S(noise, model.params, t, t_ext=t_ext, eps=eps_check)
    f = coupled_F(z, s, model.params)
    return traj.snapshots[0].batch, z.batch, s.batch, f.batch, traj.failed, s.meta


def coupled_batch(model, grid, t, seed, replicas, t_ext=None, eps_check=None, workers=None):
    tasks = [(model, grid, t, s, c, t_ext, eps_check) for s, c in chunks(seed, replicas)]
    parts = farm(_coupled_chunk, tasks, workers)
    u, z, s, f, failed = (np.vstack([p[i] for p in parts]) if i < 4 else np.concatenate([p[i] for p in parts])
                          for i in range(5))
    meta = parts[0][5]
    return CoupledBatch(FieldSample(grid, t, u, FieldKind.U), FieldSample(grid, t, z, FieldKind.Z),
                        FieldSample(grid, t, s, FieldKind.S, meta), FieldSample(grid, t, f, FieldKind.F, meta),
                        model, seed + np.arange(replicas), failed)


def _traj_chunk(model, grid, times, seed, count):
    traj = solve(model, make_noise(grid, seed, count), times, on_blowup="mask")
    return [s.batch for s in traj.snapshots], traj.failed


def trajectory_batch(model, grid, times, seed, replicas, workers=None):
    """Solve in chunks and stitch into one Trajectory."""
    from .solver import Trajectory
    tasks = [(model, grid, list(times), s, c) for s, c in chunks(seed, replicas)]
    parts = farm(_traj_chunk, tasks, workers)
    times = sorted(times)
    snaps = [FieldSample(grid, t, np.vstack([p[0][j] for p in parts]), FieldKind.U) for j, t in enumerate(times)]
    failed = np.concatenate([p[1] for p in parts])
    return Trajectory(model, grid, snaps, seed + np.arange(replicas), failed)


def failure_fraction(failed):
    return float(np.mean(failed)) if len(failed) else 0.0


def check_failures(failed, limit=0.01):
    frac = failure_fraction(failed)
    if frac > limit:
        raise RuntimeError(f"{frac:.2%} of replicas failed (limit {limit:.0%})")
    return frac
