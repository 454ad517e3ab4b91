"""Executable pieces of the time-partition argument.

* :func:`build_partition` - block length delta_eps = eps * zeta_eps with
  zeta_eps = (log eps^{-kappa2})^{kappa1}.
* :func:`simulate_auxiliary` - the fast process restarted at each block
  start with the slow argument frozen there, driven by the same fast noise.
* :func:`remainder_path` - R_eps(t) = int_0^t <B1(u,v) - Bbar(u), h> ds.
* :func:`eval_L_sl`, :func:`eval_L_av` - Kolmogorov operators on regular
  cylindrical functions; :func:`kolmogorov_gap` estimates their
  conditional-expectation gap by branching the noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgument, NonFiniteError
from .ergodics import AveragedCoeffs, EstimatorStats
from .integrator import (
    Trajectory,
    _fast_update,
    _kernels,
    iter_coupled,
    n_steps_for,
)
from .model import ModelSpec, nemytskii
from .streams import FAST, SLOW, STUDY, NoiseStream

__all__ = [
    "PartitionPlan",
    "CylindricalFn",
    "build_partition",
    "aligned_step",
    "simulate_auxiliary",
    "remainder_path",
    "eval_L_sl",
    "eval_L_av",
    "kolmogorov_gap",
    "quadratic_mode_fn",
]


@dataclass(frozen=True)
class PartitionPlan:
    eps: float
    kappa1: float
    kappa2: float
    zeta: float
    delta: float
    T: float

    @property
    def intervals(self) -> int:
        return math.ceil(self.T / self.delta - 1e-12)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "kappa1": self.kappa1, "kappa2": self.kappa2,
                "zeta_eps": self.zeta, "delta_eps": self.delta, "T": self.T,
                "intervals": self.intervals}


def build_partition(eps, kappa1=0.5, kappa2=1.0, T=1.0) -> PartitionPlan:
    if not 0 < eps < 1:
        raise InvalidArgument(f"eps must lie in (0, 1), got {eps}")
    if not (kappa1 > 0 and kappa2 > 0):
        raise InvalidArgument("kappa1 and kappa2 must be positive")
    zeta = (kappa2 * math.log(1.0 / eps)) ** kappa1
    delta = eps * zeta
    if delta >= T:
        raise InvalidArgument(f"block length {delta:.4g} >= T = {T}; eps too large for this horizon")
    return PartitionPlan(float(eps), float(kappa1), float(kappa2), zeta, delta, float(T))


def aligned_step(plan: PartitionPlan, max_dt=None):
    """Largest dt <= max_dt (default eps/10) dividing the block length exactly.

    Returns ``(dt, steps_per_block)``.
    """
    max_dt = plan.eps / 10.0 if max_dt is None else max_dt
    m = math.ceil(plan.delta / max_dt - 1e-12)
    return plan.delta / m, m


def simulate_auxiliary(model: ModelSpec, coupled: Trajectory, plan: PartitionPlan) -> Trajectory:
    """Auxiliary fast process on the partition blocks.

    On each block the fast equation is restarted from v_eps(k delta) with the
    slow argument frozen at u_eps(k delta), reusing the coupled run's fast
    noise (regenerated from its stream keys).
    """
    if coupled.u is None or coupled.v is None:
        raise InvalidArgument("coupled trajectory must record both u and v")
    if coupled.record_every != 1:
        raise InvalidArgument("coupled trajectory must be recorded at every step")
    if coupled.eps is None or not math.isclose(coupled.eps, plan.eps, rel_tol=1e-12):
        raise InvalidArgument("trajectory eps does not match the partition")
    dt = coupled.dt
    m = plan.delta / dt
    if abs(m - round(m)) > 1e-9 * max(1.0, m):
        raise InvalidArgument(f"dt = {dt:g} does not divide the block length {plan.delta:g}")
    m = int(round(m))
    grid = model.grid
    kern = _kernels(model.slow, model.fast, float(dt), float(coupled.eps))
    noise = NoiseStream.for_replicas(coupled.seed, coupled.fast_key, coupled.replica_ids, model.N)
    steps = coupled.times.size - 1
    V = np.empty_like(coupled.v)
    vhat = coupled.v[0].copy()
    V[0] = vhat
    ug = None
    for n in range(1, steps + 1):
        if (n - 1) % m == 0:
            vhat = coupled.v[n - 1].copy()
            ug = grid.to_grid(coupled.u[n - 1])
        vhat = _fast_update(model, grid, kern, vhat, ug, grid.to_grid(vhat), noise.next())
        if n % m == 0:
            # right end of the block belongs to the next block: restart there
            V[n] = coupled.v[n]
        else:
            V[n] = vhat
    if not np.all(np.isfinite(V)):
        raise NonFiniteError("auxiliary process produced non-finite values")
    meta = dict(coupled.meta, kind="auxiliary", delta=plan.delta, steps_per_block=m)
    return Trajectory(coupled.times, None, V, dt, coupled.eps, coupled.seed, coupled.replica_ids,
                      None, coupled.fast_key, 1, meta)


def _pre_reset_values(model, coupled, plan):
    # kept for diagnostics; not part of the public surface
    return simulate_auxiliary(model, coupled, plan)


def remainder_path(model: ModelSpec, coupled: Trajectory, bbar: Callable, h) -> np.ndarray:
    """Cumulative trapezoid of <B1(u,v) - Bbar(u), h> along the recorded path.

    Returns an array of shape (n_records, replicas).
    """
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != model.N:
        raise InvalidArgument("h must lie in the span of the truncated basis")
    grid = model.grid
    U, V = coupled.u, coupled.v
    B1 = grid.from_grid(nemytskii(model, "b1", grid.to_grid(U), grid.to_grid(V), grid.points))
    integrand = (B1 - np.asarray(bbar(U.reshape(-1, model.N))).reshape(U.shape)) @ h
    if not np.all(np.isfinite(integrand)):
        raise NonFiniteError("remainder integrand is not finite")
    dts = np.diff(coupled.times)[:, None]
    R = np.zeros(integrand.shape)
    R[1:] = np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dts, axis=0)
    return R


# -- Kolmogorov operators -------------------------------------------------


@dataclass(frozen=True, eq=False)
class CylindricalFn:
    """phi(x) = f(<x, P a_1>, ..., <x, P a_k>) with user-supplied derivatives.

    ``grad(s)`` and ``hess(s)`` take s of shape (R, k) and return (R, k)
    and (R, k, k).
    """

    f: Callable
    grad: Callable
    hess: Callable
    anchors: np.ndarray
    n_proj: int

    def coords(self, x):
        P = np.zeros_like(self.anchors)
        P[:, : self.n_proj] = self.anchors[:, : self.n_proj]
        return np.atleast_2d(x) @ P.T

    def projected_anchors(self, N):
        if self.n_proj > N:
            raise InvalidArgument(f"projection order {self.n_proj} exceeds basis size {N}")
        if self.anchors.shape[1] != N:
            raise InvalidArgument("anchor vectors must have N coefficients")
        P = np.zeros_like(self.anchors)
        P[:, : self.n_proj] = self.anchors[:, : self.n_proj]
        return P

    def __call__(self, x):
        return self.f(self.coords(x))

    def check_derivatives(self, points, step=1e-4, rtol=1e-4):
        """Compare grad/hess with central differences of f at ``points`` (R, k)."""
        s = np.atleast_2d(np.asarray(points, dtype=float))
        k = s.shape[1]
        g_fd = np.empty_like(s)
        h_fd = np.empty(s.shape + (k,))
        for i in range(k):
            e = np.zeros(k)
            e[i] = step
            g_fd[:, i] = (self.f(s + e) - self.f(s - e)) / (2 * step)
            for j in range(k):
                e2 = np.zeros(k)
                e2[j] = step
                h_fd[:, i, j] = (self.f(s + e + e2) - self.f(s + e - e2) - self.f(s - e + e2)
                                 + self.f(s - e - e2)) / (4 * step * step)
        g, H = self.grad(s), self.hess(s)
        scale_g = max(1.0, float(np.max(np.abs(g))))
        scale_h = max(1.0, float(np.max(np.abs(H))))
        return (float(np.max(np.abs(g - g_fd))) <= rtol * scale_g
                and float(np.max(np.abs(H - h_fd))) <= rtol * scale_h)


def quadratic_mode_fn(N, mode=1, n_proj=None) -> CylindricalFn:
    """phi(x) = <x, e_mode>^2."""
    a = np.zeros((1, N))
    a[0, mode - 1] = 1.0
    return CylindricalFn(
        f=lambda s: s[:, 0] ** 2,
        grad=lambda s: 2.0 * s,
        hess=lambda s: np.full((s.shape[0], 1, 1), 2.0),
        anchors=a,
        n_proj=N if n_proj is None else n_proj,
    )


def _generator(phi, x, alphas, lambdas, noise_op, drift):
    """Shared second-order + first-order assembly.

    ``noise_op(z)`` applies the diffusion operator to a batch of coefficient
    vectors z with shape (R, k, N); ``drift`` is the (R, N) nonlinear drift.
    """
    N = alphas.size
    Pa = phi.projected_anchors(N)             # (k, N)
    s = x @ Pa.T                              # (R, k)
    g = phi.grad(s)
    H = phi.hess(s)
    QPa = lambdas * Pa                        # (k, N)
    Z = noise_op(np.broadcast_to(QPa, (x.shape[0],) + QPa.shape))  # (R, k, N)
    gram = np.einsum("rin,rjn->rij", Z, Z)
    second = 0.5 * np.einsum("rij,rij->r", H, gram)
    first = np.einsum("ri,ri->r", g, x @ (-(alphas * Pa)).T + drift @ Pa.T)
    return second + first


def eval_L_sl(phi: CylindricalFn, model: ModelSpec, x, y):
    """Slow Kolmogorov operator with the fast component frozen at y."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    grid = model.grid
    xg, yg = grid.to_grid(x), grid.to_grid(y)
    B1 = grid.from_grid(nemytskii(model, "b1", xg, yg, grid.points))
    g1 = nemytskii(model, "g1", xg, yg, grid.points)      # (R, M)

    def noise_op(Z):
        return grid.from_grid(g1[:, None, :] * grid.to_grid(Z))

    return _generator(phi, x, model.slow.alphas, model.slow.lambdas, noise_op, B1)


def eval_L_av(phi: CylindricalFn, avg: AveragedCoeffs, x):
    """Kolmogorov operator of the averaged equation."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    G = np.asarray(avg.gbar(x))

    def noise_op(Z):
        if G.ndim == 2:
            return Z @ G.T
        return np.einsum("rmn,rkn->rkm", G, Z)

    return _generator(phi, x, avg.basis.alphas, avg.basis.lambdas, noise_op,
                      np.asarray(avg.bbar(x)))


def kolmogorov_gap(model: ModelSpec, avg: AveragedCoeffs, phi: CylindricalFn, eps, t1, t2,
                   x, y=None, outer=64, inner=32, dt=None, seed=0, eps_index=0) -> EstimatorStats:
    """Estimate E| int_{t1}^{t2} E(L_sl phi(u,v) - L_av phi(u) | F_t1) dr |.

    Outer replicas run the coupled system to t1; each state is branched into
    ``inner`` continuations with fresh noise, and the inner mean of the
    time integral stands in for the conditional expectation.
    """
    if outer < 10 or inner < 10:
        raise InvalidArgument("outer and inner replica counts must be >= 10")
    if not 0 <= t1 <= t2:
        raise InvalidArgument(f"need 0 <= t1 <= t2, got {t1}, {t2}")
    N = model.N
    y = np.zeros(N) if y is None else y
    dt = eps / 10.0 if dt is None else dt
    study = STUDY["gap"]
    if t2 == t1:
        zeros = np.zeros(outer)
        return EstimatorStats(0.0, 0.0, 0.0, float(t1), outer, zeros, seed)
    ids = range(outer)
    if t1 > 0:
        sn = NoiseStream.for_replicas(seed, (study, SLOW, eps_index, 0), ids, N)
        fn = NoiseStream.for_replicas(seed, (study, FAST, eps_index, 0), ids, N)
        for n, t, u, v in iter_coupled(model, x, y, eps, t1, dt, sn, fn):
            pass
        u1, v1 = u.copy(), v.copy()
    else:
        u1 = np.broadcast_to(np.asarray(x, dtype=float), (outer, N)).copy()
        v1 = np.broadcast_to(np.asarray(y, dtype=float), (outer, N)).copy()
    U0 = np.repeat(u1, inner, axis=0)
    V0 = np.repeat(v1, inner, axis=0)
    keys = [(o, b) for o in range(outer) for b in range(1, inner + 1)]
    sn = NoiseStream(seed, [(study, SLOW, eps_index) + k for k in keys], N)
    fn = NoiseStream(seed, [(study, FAST, eps_index) + k for k in keys], N)
    acc = np.zeros(outer * inner)
    prev = None
    for n, t, u, v in iter_coupled(model, U0, V0, eps, t2 - t1, dt, sn, fn, t0=t1):
        d = eval_L_sl(phi, model, u, v) - eval_L_av(phi, avg, u)
        if prev is not None:
            acc += 0.5 * (prev + d) * dt
        prev = d
    cond = acc.reshape(outer, inner).mean(axis=1)
    vals = np.abs(cond)
    se = float(vals.std(ddof=1) / math.sqrt(outer))
    return EstimatorStats(float(vals.mean()), se, float(t2 - t1), float(t1), outer, vals, seed)
