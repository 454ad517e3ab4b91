"""Long-time statistics of the frozen fast process and the averaged coefficients.

Every estimator runs ``replicas`` independent long paths of v^{x,y}
(y = 0 by default), discards a burn-in ``T_b`` (default 5 / gap) and
time-averages a functional over the next ``T`` time units with the
trapezoid rule.  The cross-replica spread gives the standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateFit, InvalidArgument, NonFiniteError
from .integrator import iter_frozen_fast, n_steps_for
from .model import ModelSpec, nemytskii, pseudo_spectral_gram
from .spectral import SpectralBasis, h_norm
from .streams import FAST, STUDY, NoiseStream

__all__ = [
    "EstimatorStats",
    "AveragedCoeffs",
    "ergodic_average",
    "invariant_moments",
    "invariant_mode_stats",
    "estimate_mixing",
    "MixingFit",
    "estimate_bbar",
    "estimate_S",
    "sqrt_spd",
    "bbar_lipschitz_probe",
    "fit_affine_bbar",
    "analytic_averaged",
    "estimated_averaged",
    "default_burn_in",
]


@dataclass
class EstimatorStats:
    estimate: np.ndarray | float
    se: np.ndarray | float
    T: float
    T_b: float
    replicas: int
    values: np.ndarray = field(repr=False)
    seed: int | None = None

    def to_dict(self) -> dict:
        as_list = lambda a: np.asarray(a).tolist()  # noqa: E731
        return {"estimate": as_list(self.estimate), "se": as_list(self.se), "T": self.T,
                "Tb": self.T_b, "replicas": self.replicas, "seed": self.seed}


def _stats(values, T, T_b, seed):
    values = np.asarray(values, dtype=float)
    R = values.shape[0]
    est = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(est)
    if np.ndim(est) == 0:
        est, se = float(est), float(se)
    return EstimatorStats(est, se, float(T), float(T_b), R, values, seed)


def default_burn_in(model: ModelSpec) -> float:
    return 5.0 / model.fast.gap


def _fast_stream(seed, key, replicas, N):
    return NoiseStream.for_replicas(seed, key, range(replicas), N)


def ergodic_average(model: ModelSpec, x, phi: Callable, T, T_b=None, dt=1e-2, replicas=10,
                    seed=0, y=None, key=(STUDY["ergodic"], FAST)) -> EstimatorStats:
    """Time average (1/T) int_{T_b}^{T_b+T} phi(v^{x,y}(s)) ds per replica.

    ``phi`` maps an (R, N) coefficient batch to an (R,) or (R, K) array.
    """
    if not T > 0:
        raise InvalidArgument(f"averaging window must be positive, got {T}")
    T_b = default_burn_in(model) if T_b is None else float(T_b)
    if T_b < 0:
        raise InvalidArgument(f"burn-in must be >= 0, got {T_b}")
    N = model.N
    y = np.zeros(N) if y is None else y
    n_burn = int(round(T_b / dt))
    n_avg = n_steps_for(T, dt)
    stream = _fast_stream(seed, key, replicas, N)
    acc = None
    prev = None
    for n, t, v in iter_frozen_fast(model, x, y, (n_burn + n_avg) * dt, dt, stream):
        if n < n_burn:
            continue
        f = np.asarray(phi(v), dtype=float)
        if not np.all(np.isfinite(f)):
            raise NonFiniteError(f"functional returned non-finite values at t = {t:.6g}")
        if prev is None:
            acc = np.zeros_like(f)
        else:
            acc += 0.5 * (prev + f)
        prev = f.copy()
    values = acc / n_avg
    if values.ndim == 0:
        values = np.full(replicas, float(values))
    return _stats(values, n_avg * dt, n_burn * dt, seed)


def invariant_moments(model: ModelSpec, x, p=2, T=100.0, T_b=None, dt=1e-2, replicas=10,
                      seed=0) -> EstimatorStats:
    """Estimate int |z|_H^p mu^x(dz) for p in {2, 4}."""
    if p not in (2, 4):
        raise InvalidArgument(f"p must be 2 or 4, got {p}")
    return ergodic_average(model, x, lambda v: h_norm(v) ** p, T, T_b, dt, replicas, seed)


def invariant_mode_stats(model: ModelSpec, x, T, T_b=None, dt=1e-3, replicas=20, seed=0):
    """Per-mode invariant mean and variance.

    Each replica contributes its time-averaged mean and its centred second
    moment; returns ``(mean_stats, var_stats)``.
    """
    N = model.N
    st = ergodic_average(model, x, lambda v: np.concatenate([v, v * v], axis=-1), T, T_b, dt,
                         replicas, seed)
    m = st.values[:, :N]
    var = st.values[:, N:] - m * m
    return _stats(m, st.T, st.T_b, seed), _stats(var, st.T, st.T_b, seed)


@dataclass
class MixingFit:
    rate: float
    prefactor: float
    r_squared: float
    times: np.ndarray = field(repr=False)
    mean_distance: np.ndarray = field(repr=False)


def estimate_mixing(model: ModelSpec, x, y1, y2, T, dt=1e-3, replicas=10, seed=0,
                    fit_from=0.0) -> MixingFit:
    """Fit E|v^{x,y1}(t) - v^{x,y2}(t)|_H ~ c exp(-rate t) under identical noise."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    d0 = float(np.linalg.norm(y1 - y2))
    if d0 < 1e-14:
        raise DegenerateFit("initial data coincide; nothing to fit")
    N = model.N
    key = (STUDY["mixing"], FAST)
    ids = range(replicas)
    # the second copy reuses the first copy's keys, so both see identical noise
    s1 = NoiseStream.for_replicas(seed, key, ids, N)
    s2 = NoiseStream.for_replicas(seed, key, ids, N)
    times, dist = [], []
    for (n, t, a), (_, _, b) in zip(iter_frozen_fast(model, x, y1, T, dt, s1),
                                    iter_frozen_fast(model, x, y2, T, dt, s2)):
        times.append(t)
        dist.append(float(np.mean(h_norm(a - b))))
    times = np.array(times)
    dist = np.array(dist)
    sel = (times >= fit_from) & (dist > 1e-14)
    if sel.sum() < 3:
        raise DegenerateFit("distance fell below 1e-14 before the fit window")
    tt, ld = times[sel], np.log(dist[sel])
    slope, icpt = np.polyfit(tt, ld, 1)
    resid = ld - (slope * tt + icpt)
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return MixingFit(float(-slope), float(math.exp(icpt)), r2, times, dist)


def estimate_bbar(model: ModelSpec, x, T=50.0, T_b=None, dt=1e-2, replicas=10, seed=0,
                  y=None) -> EstimatorStats:
    """Time average of the mode projections of B1(x, v^{x,y})."""
    grid = model.grid
    xg = grid.to_grid(np.asarray(x, dtype=float))

    def phi(v):
        return grid.from_grid(nemytskii(model, "b1", xg, grid.to_grid(v), grid.points))

    return ergodic_average(model, x, phi, T, T_b, dt, replicas, seed, y=y)


def estimate_S(model: ModelSpec, x, T=50.0, T_b=None, dt=1e-2, replicas=10, seed=0,
               y=None) -> EstimatorStats:
    """Time average of <G1(x,v) e_h, G1(x,v) e_k> (pseudo-spectral), symmetrized.

    The noise amplitudes of Q1 are applied where the averaged diffusion is
    used, not inside this matrix.
    """
    if model.g1_bound is None:
        raise InvalidArgument("estimate_S needs a bounded g1 (declare g1_bound)")
    N = model.N
    x = np.asarray(x, dtype=float)

    def phi(v):
        return pseudo_spectral_gram(model, np.broadcast_to(x, v.shape), v).reshape(v.shape[0], N * N)

    st = ergodic_average(model, x, phi, T, T_b, dt, replicas, seed, y=y)
    vals = st.values.reshape(-1, N, N)
    vals = 0.5 * (vals + np.swapaxes(vals, -1, -2))
    return _stats(vals, st.T, st.T_b, seed)


def sqrt_spd(S, rtol=1e-8):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues down to ``-rtol * ||S||`` are treated as noise and clipped
    to zero; anything more negative, or asymmetry beyond ``rtol``, raises.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidArgument("S must be a square matrix")
    norm = float(np.linalg.norm(S, 2)) if S.size else 0.0
    if np.max(np.abs(S - S.T), initial=0.0) > rtol * max(norm, 1e-300):
        raise InvalidArgument("S is not symmetric within tolerance")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.size and w.min() < -rtol * norm:
        raise InvalidArgument(f"S has eigenvalue {w.min():.3g} below -{rtol:g}*||S||")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


# -- averaged coefficients ------------------------------------------------


@dataclass(eq=False)
class AveragedCoeffs:
    """Drift B-bar and diffusion G-bar of the averaged equation.

    ``bbar`` maps an (R, N) batch to (R, N).  The diffusion is either the
    constant matrix ``gbar_const`` or ``gbar(x)`` returning (R, N, N).
    ``anchors``/``S`` hold the estimated matrices when G-bar comes from
    estimates (piecewise constant: nearest anchor wins).
    """

    basis: SpectralBasis
    bbar: Callable
    gbar_const: np.ndarray | None = None
    gbar_fn: Callable | None = None
    anchors: np.ndarray | None = None
    S: np.ndarray | None = None
    delta: float = 0.0
    provenance: dict = field(default_factory=dict)

    def gbar(self, x):
        if self.gbar_const is not None:
            return self.gbar_const
        return self.gbar_fn(np.asarray(x, dtype=float))

    def S_at(self, x):
        G = np.asarray(self.gbar(np.atleast_2d(x)))
        return G @ G if G.ndim == 2 else np.einsum("rij,rjk->rik", G, G)


def analytic_averaged(model: ModelSpec) -> AveragedCoeffs:
    """Closed-form coefficients for catalog models whose g1 ignores the fast variable."""
    if model.bbar_exact is None:
        raise InvalidArgument(f"model {model.name} has no closed-form averaged drift")
    if model.g1_depends_on_fast:
        raise InvalidArgument("closed-form diffusion needs g1 independent of the fast variable")
    N = model.N
    if model.g1_const is not None:
        G = abs(model.g1_const) * np.eye(N)
        return AveragedCoeffs(model.slow, model.bbar_exact, gbar_const=G, delta=model.delta,
                              provenance={"bbar": "analytic", "gbar": "analytic"})

    def gbar_fn(x):
        S = pseudo_spectral_gram(model, x, np.zeros_like(x))
        return np.stack([sqrt_spd(s) for s in np.atleast_3d(S).reshape(-1, N, N)])

    return AveragedCoeffs(model.slow, model.bbar_exact, gbar_fn=gbar_fn, delta=model.delta,
                          provenance={"bbar": "analytic", "gbar": "analytic"})


def fit_affine_bbar(model: ModelSpec, x0=None, h=1.0, T=50.0, T_b=None, dt=1e-2,
                    replicas=10, seed=0):
    """Affine surrogate of B-bar from estimates at x0 and x0 + h e_j.

    All anchors share the same noise so the finite differences are not
    swamped by estimator variance.  Returns ``(bbar, base_stats, jacobian)``.
    """
    N = model.N
    x0 = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float)
    base = estimate_bbar(model, x0, T, T_b, dt, replicas, seed)
    J = np.empty((N, N))
    for j in range(N):
        xj = x0.copy()
        xj[j] += h
        st = estimate_bbar(model, xj, T, T_b, dt, replicas, seed)
        J[:, j] = (st.values - base.values).mean(axis=0) / h
    b0 = np.asarray(base.estimate)

    def bbar(x):
        return b0 + (np.asarray(x) - x0) @ J.T

    return bbar, base, J


def estimated_averaged(model: ModelSpec, anchors, x0=None, T=50.0, T_b=None, dt=1e-2,
                       replicas=10, seed=0, bbar=None) -> AveragedCoeffs:
    """Averaged coefficients from estimates.

    B-bar is the affine surrogate of :func:`fit_affine_bbar` unless a drift is
    supplied; G-bar is sqrt(S) estimated at each anchor and used piecewise
    constantly (nearest anchor) when g1 depends on the fast variable.
    """
    N = model.N
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    prov = {}
    if bbar is None:
        bbar, _, _ = fit_affine_bbar(model, x0, 1.0, T, T_b, dt, replicas, seed)
        prov["bbar"] = "estimated"
    else:
        prov["bbar"] = "supplied"
    S = np.stack([np.asarray(estimate_S(model, a, T, T_b, dt, replicas, seed).estimate)
                  for a in anchors])
    G = np.stack([sqrt_spd(s) for s in S])
    prov["gbar"] = "estimated"
    if len(anchors) == 1:
        return AveragedCoeffs(model.slow, bbar, gbar_const=G[0], anchors=anchors, S=S,
                              delta=model.delta, provenance=prov)

    def gbar_fn(x):
        x = np.atleast_2d(x)
        d = np.linalg.norm(x[:, None, :] - anchors[None, :, :], axis=-1)
        return G[np.argmin(d, axis=1)]

    return AveragedCoeffs(model.slow, bbar, gbar_fn=gbar_fn, anchors=anchors, S=S,
                          delta=model.delta, provenance=prov)


def bbar_lipschitz_probe(model: ModelSpec, anchors, T=50.0, T_b=None, dt=1e-2, replicas=10,
                         seed=0) -> dict:
    """Pairwise quotients |B(x1) - B(x2)| / |x1 - x2| over the anchors.

    Estimates share noise across anchors; the standard error of each
    quotient comes from the per-replica differences.  Coincident anchors
    are skipped.
    """
    anchors = [np.asarray(a, dtype=float) for a in anchors]
    stats = [estimate_bbar(model, a, T, T_b, dt, replicas, seed) for a in anchors]
    pairs = []
    for i in range(len(anchors)):
        for j in range(i + 1, len(anchors)):
            dx = float(np.linalg.norm(anchors[i] - anchors[j]))
            if dx == 0.0:
                pairs.append({"i": i, "j": j, "skipped": True})
                continue
            per_rep = np.linalg.norm(stats[i].values - stats[j].values, axis=-1) / dx
            q = float(np.linalg.norm(np.asarray(stats[i].estimate) - np.asarray(stats[j].estimate)) / dx)
            se = float(per_rep.std(ddof=1) / math.sqrt(len(per_rep))) if len(per_rep) > 1 else 0.0
            pairs.append({"i": i, "j": j, "quotient": q, "se": se, "skipped": False})
    qs = [p["quotient"] for p in pairs if not p["skipped"]]
    return {"max_quotient": max(qs) if qs else 0.0, "pairs": pairs,
            "finite": bool(all(math.isfinite(q) for q in qs))}
