"""Exponential-Euler integration of the truncated slow-fast system.

Per mode k and step dt the linear part is integrated exactly:

    u_k+ = e^{-a1k dt} u_k + phi1(a1k dt) dt [B1(u,v)]_k + w1k [G1(u,v) Q1 xi1]_k
    v_k+ = e^{-a2k dt/eps} v_k + phi1(a2k dt/eps) (dt/eps) [B2(u,v)]_k + w2k [G2(u,v) Q2 xi2]_k

with phi1(z) = (1 - e^{-z}) / z, xi standard normal per mode and

    w1k^2 = (1 - e^{-2 a1k dt}) / (2 a1k),   w2k^2 = (1 - e^{-2 a2k dt/eps}) / (2 a2k),

the exact variances of the linear stochastic convolutions over one step.
The Brownian increment shared between runs is ``sqrt(dt) * xi``.  Nonlinear
terms use the left endpoint and are evaluated on the collocation grid.

All arrays carry a leading replica axis; replicas advance together.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, NonFiniteError, StabilityViolation
from .model import ModelSpec
from .streams import FAST, SLOW, NoiseStream

__all__ = [
    "SlowFastState",
    "NoiseDraw",
    "Trajectory",
    "phi1",
    "step_coupled",
    "iter_coupled",
    "iter_frozen_fast",
    "iter_averaged",
    "simulate_coupled",
    "simulate_frozen_fast",
    "simulate_averaged",
    "n_steps_for",
]


def phi1(z):
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0.0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def _conv_weight(alpha, a):
    # sqrt((1 - e^{-2a}) / (2 alpha)) with a = alpha * step
    return np.sqrt(-np.expm1(-2.0 * a) / (2.0 * alpha))


@dataclass(frozen=True, eq=False)
class _Kernels:
    decay1: np.ndarray
    drift1: np.ndarray
    w1: np.ndarray
    decay2: np.ndarray
    drift2: np.ndarray
    w2: np.ndarray


@lru_cache(maxsize=256)
def _kernels(slow, fast, dt: float, eps: float) -> _Kernels:
    a1 = slow.alphas * dt
    a2 = fast.alphas * dt / eps
    return _Kernels(
        decay1=np.exp(-a1), drift1=phi1(a1) * dt, w1=_conv_weight(slow.alphas, a1),
        decay2=np.exp(-a2), drift2=phi1(a2) * (dt / eps), w2=_conv_weight(fast.alphas, a2),
    )


def _check_step(dt, eps, allow_unstable):
    if not dt > 0:
        raise InvalidArgument(f"time step must be positive, got {dt}")
    if not 0 < eps <= 1:
        raise InvalidArgument(f"eps must lie in (0, 1], got {eps}")
    if dt > eps / 10.0 * (1.0 + 1e-12) and not allow_unstable:
        raise StabilityViolation(f"dt = {dt:g} exceeds eps/10 = {eps / 10:g}; "
                                 "pass allow_unstable=True to override")


def n_steps_for(T, dt):
    """Number of steps covering [0, T]; T is rounded onto the dt grid."""
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T}")
    return max(1, int(round(T / dt)))


# -- single step ----------------------------------------------------------


@dataclass(frozen=True)
class SlowFastState:
    t: float
    u: np.ndarray
    v: np.ndarray
    eps: float


@dataclass(frozen=True)
class NoiseDraw:
    """Standard normal per-mode draws for one step (increment = sqrt(dt) * draw)."""

    slow: np.ndarray
    fast: np.ndarray


def _slow_update(model, grid, kern, u, ug, vg, xi1):
    drift = grid.from_grid(model.b1(grid.points, ug, vg))
    z = model.slow.lambdas * xi1
    if model.g1_const is not None:
        noise = model.g1_const * z
    else:
        noise = grid.from_grid(model.g1(grid.points, ug, vg) * grid.to_grid(z))
    return kern.decay1 * u + kern.drift1 * drift + kern.w1 * noise


def _fast_update(model, grid, kern, v, ug, vg, xi2):
    drift = grid.from_grid(model.b2(grid.points, ug, vg))
    z = model.fast.lambdas * xi2
    if model.g2_const is not None:
        noise = model.g2_const * z
    else:
        noise = grid.from_grid(model.g2(grid.points, ug, vg) * grid.to_grid(z))
    return kern.decay2 * v + kern.drift2 * drift + kern.w2 * noise


def step_coupled(model: ModelSpec, state: SlowFastState, dt: float, noise: NoiseDraw,
                 allow_unstable: bool = False) -> SlowFastState:
    """Advance the coupled system by one exponential-Euler step."""
    _check_step(dt, state.eps, allow_unstable)
    grid = model.grid
    kern = _kernels(model.slow, model.fast, float(dt), float(state.eps))
    u = np.asarray(state.u, dtype=float)
    v = np.asarray(state.v, dtype=float)
    ug, vg = grid.to_grid(u), grid.to_grid(v)
    u_new = _slow_update(model, grid, kern, u, ug, vg, np.asarray(noise.slow))
    v_new = _fast_update(model, grid, kern, v, ug, vg, np.asarray(noise.fast))
    return SlowFastState(state.t + dt, u_new, v_new, state.eps)


# -- iterators ------------------------------------------------------------


def _batch(x, R, N, name):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N:
        raise InvalidArgument(f"{name} has {x.shape[-1]} modes, expected {N}")
    return np.array(np.broadcast_to(x, (R, N)), dtype=float)


def _finite_or_raise(n, t, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite state at step {n} (t = {t:.6g})")


def iter_coupled(model: ModelSpec, x, y, eps, T, dt, slow_noise: NoiseStream,
                 fast_noise: NoiseStream, t0: float = 0.0, allow_unstable: bool = False,
                 check_every: int = 256):
    """Yield ``(n, t, u, v)`` for n = 0..n_steps; arrays are (R, N) and reused."""
    _check_step(dt, eps, allow_unstable)
    R, N = slow_noise.replicas, model.N
    if fast_noise.replicas != R:
        raise InvalidArgument("slow and fast noise streams disagree on replica count")
    grid = model.grid
    kern = _kernels(model.slow, model.fast, float(dt), float(eps))
    u = _batch(x, R, N, "x")
    v = _batch(y, R, N, "y")
    steps = n_steps_for(T, dt)
    yield 0, t0, u, v
    for n in range(1, steps + 1):
        ug, vg = grid.to_grid(u), grid.to_grid(v)
        u_new = _slow_update(model, grid, kern, u, ug, vg, slow_noise.next())
        v = _fast_update(model, grid, kern, v, ug, vg, fast_noise.next())
        u = u_new
        t = t0 + n * dt
        if n % check_every == 0 or n == steps:
            _finite_or_raise(n, t, u, v)
        yield n, t, u, v


def iter_frozen_fast(model: ModelSpec, x, y, T, dt, fast_noise: NoiseStream,
                     check_every: int = 256):
    """Yield ``(n, t, v)`` for the fast equation with the slow argument fixed at x."""
    if not dt > 0:
        raise InvalidArgument(f"time step must be positive, got {dt}")
    R, N = fast_noise.replicas, model.N
    grid = model.grid
    kern = _kernels(model.slow, model.fast, float(dt), 1.0)
    xg = grid.to_grid(_batch(x, R, N, "x"))
    v = _batch(y, R, N, "y")
    steps = n_steps_for(T, dt)
    yield 0, 0.0, v
    for n in range(1, steps + 1):
        v = _fast_update(model, grid, kern, v, xg, grid.to_grid(v), fast_noise.next())
        if n % check_every == 0 or n == steps:
            _finite_or_raise(n, n * dt, v)
        yield n, n * dt, v


def _gbar_apply(G, z):
    G = np.asarray(G)
    if G.ndim == 2:
        return z @ G.T
    return np.einsum("rij,rj->ri", G, z)


def iter_averaged(avg, x, T, dt, slow_noise: NoiseStream, t0: float = 0.0,
                  check_every: int = 256):
    """Yield ``(n, t, u)`` for the averaged equation driven by ``avg``."""
    if not dt > 0:
        raise InvalidArgument(f"time step must be positive, got {dt}")
    basis = avg.basis
    R, N = slow_noise.replicas, basis.N
    kern = _kernels(basis, basis, float(dt), 1.0)
    u = _batch(x, R, N, "x")
    steps = n_steps_for(T, dt)
    const_g = avg.gbar_const
    yield 0, t0, u
    for n in range(1, steps + 1):
        z = basis.lambdas * slow_noise.next()
        noise = _gbar_apply(const_g if const_g is not None else avg.gbar(u), z)
        u = kern.decay1 * u + kern.drift1 * avg.bbar(u) + kern.w1 * noise
        t = t0 + n * dt
        if n % check_every == 0 or n == steps:
            _finite_or_raise(n, t, u)
        yield n, t, u


# -- trajectories ---------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    """Recorded path(s): ``u``/``v`` have shape (n_records, replicas, N)."""

    times: np.ndarray
    u: np.ndarray | None
    v: np.ndarray | None
    dt: float
    eps: float | None
    seed: int
    replica_ids: tuple
    slow_key: tuple | None = None
    fast_key: tuple | None = None
    record_every: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def replicas(self) -> int:
        return len(self.replica_ids)

    def to_csv(self, path, replica: int = 0):
        """Write t, u_1..u_N[, v_1..v_N] for one replica (RFC-4180, repr floats)."""
        cols = ["t"]
        blocks = []
        if self.u is not None:
            N = self.u.shape[-1]
            cols += [f"u_{k}" for k in range(1, N + 1)]
            blocks.append(self.u[:, replica, :])
        if self.v is not None:
            N = self.v.shape[-1]
            cols += [f"v_{k}" for k in range(1, N + 1)]
            blocks.append(self.v[:, replica, :])
        data = np.column_stack([self.times] + blocks)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in data:
                w.writerow([repr(float(x)) for x in row])

    def to_binary(self, path, replica: int = 0):
        """Row-major float64 rows after a one-line JSON header."""
        arrays = [self.times[:, None]]
        if self.u is not None:
            arrays.append(self.u[:, replica, :])
        if self.v is not None:
            arrays.append(self.v[:, replica, :])
        data = np.ascontiguousarray(np.hstack(arrays), dtype="<f8")
        header = {"rows": data.shape[0], "cols": data.shape[1], "dtype": "float64-le",
                  "has_u": self.u is not None, "has_v": self.v is not None,
                  "dt": self.dt, "eps": self.eps, "seed": self.seed}
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            fh.write(data.tobytes())

    @staticmethod
    def read_binary(path):
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(header["rows"], header["cols"])
        return header, data


def _replica_ids(replicas, replica_ids):
    if replica_ids is None:
        if replicas < 1:
            raise InvalidArgument("need at least one replica")
        return tuple(range(int(replicas)))
    return tuple(int(r) for r in replica_ids)


def _record(steps, record_every):
    idx = list(range(0, steps + 1, record_every))
    if idx[-1] != steps:
        idx.append(steps)
    return idx


def simulate_coupled(model: ModelSpec, x, y, eps, T, dt, seed=0, replicas=1, *,
                     record_every=1, store_fast=True, slow_key=(SLOW,), fast_key=(FAST,),
                     replica_ids=None, allow_unstable=False) -> Trajectory:
    """Path of (u_eps, v_eps) on [0, T]; deterministic given the seed and keys."""
    ids = _replica_ids(replicas, replica_ids)
    N = model.N
    sn = NoiseStream.for_replicas(seed, slow_key, ids, N)
    fn = NoiseStream.for_replicas(seed, fast_key, ids, N)
    steps = n_steps_for(T, dt)
    rec = _record(steps, record_every)
    U = np.empty((len(rec), len(ids), N))
    V = np.empty((len(rec), len(ids), N)) if store_fast else None
    times = np.empty(len(rec))
    j = 0
    for n, t, u, v in iter_coupled(model, x, y, eps, T, dt, sn, fn, allow_unstable=allow_unstable):
        if j < len(rec) and n == rec[j]:
            times[j] = t
            U[j] = u
            if V is not None:
                V[j] = v
            j += 1
    return Trajectory(times, U, V, float(dt), float(eps), int(seed), ids,
                      tuple(slow_key), tuple(fast_key), int(record_every),
                      {"kind": "coupled", "T": float(T)})


def simulate_frozen_fast(model: ModelSpec, x, y, T, dt, seed=0, replicas=1, *,
                         record_every=1, fast_key=(FAST,), replica_ids=None) -> Trajectory:
    """Path of the frozen fast process v^{x,y} at natural (eps = 1) speed."""
    ids = _replica_ids(replicas, replica_ids)
    fn = NoiseStream.for_replicas(seed, fast_key, ids, model.N)
    steps = n_steps_for(T, dt)
    rec = _record(steps, record_every)
    V = np.empty((len(rec), len(ids), model.N))
    times = np.empty(len(rec))
    j = 0
    for n, t, v in iter_frozen_fast(model, x, y, T, dt, fn):
        if j < len(rec) and n == rec[j]:
            times[j] = t
            V[j] = v
            j += 1
    return Trajectory(times, None, V, float(dt), 1.0, int(seed), ids, None, tuple(fast_key),
                      int(record_every), {"kind": "frozen_fast", "T": float(T)})


def simulate_averaged(avg, x, T, dt, seed=0, replicas=1, *, record_every=1,
                      slow_key=(SLOW,), replica_ids=None) -> Trajectory:
    """Path of the averaged solution; shares slow noise with :func:`simulate_coupled`
    whenever ``seed``, ``slow_key`` and ``dt`` agree."""
    ids = _replica_ids(replicas, replica_ids)
    sn = NoiseStream.for_replicas(seed, slow_key, ids, avg.basis.N)
    steps = n_steps_for(T, dt)
    rec = _record(steps, record_every)
    U = np.empty((len(rec), len(ids), avg.basis.N))
    times = np.empty(len(rec))
    j = 0
    for n, t, u in iter_averaged(avg, x, T, dt, sn):
        if j < len(rec) and n == rec[j]:
            times[j] = t
            U[j] = u
            j += 1
    return Trajectory(times, U, None, float(dt), None, int(seed), ids, tuple(slow_key), None,
                      int(record_every), {"kind": "averaged", "T": float(T)})
