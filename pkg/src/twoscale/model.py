"""Pointwise coefficients of the slow-fast system and their validity checks.

A model is four pointwise maps ``b1, b2, g1, g2`` of ``(xi, s1, s2)``
together with declared constants.  The maps must accept numpy arrays and
broadcast; the Nemytskii operators are then evaluated pseudo-spectrally on
the collocation grid.

Catalog entries (selectable by name from a run config):

``linear_test_model``
    b1 = c_u s1 + c_v s2, b2 = a s1 + s s2, g1 = c + p sin(s2) + q sin(s1),
    g2 = const.  The defaults (c_v = 1, a = 1/2, s = -1/2, c = 1, g2 = 1)
    give the fully analytic model with averaged drift x_k / (2k^2 + 1).
``bistable``
    b1 = cubic(s1) + s2 with a Lipschitz linear extension of s1 - s1^3
    beyond |s1| = 2; fast part as the linear test model.
``additive_fast``
    b1 = cos(s2); fast part as the linear test model, so the averaged drift
    has a closed form through the Gaussian invariant law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .spectral import (
    HypothesisReport,
    SpectralBasis,
    build_basis,
    check_hypothesis_h1,
    sine_grid,
)

__all__ = [
    "ModelSpec",
    "H2Report",
    "ConditionM0Report",
    "nemytskii",
    "check_hypothesis_h2",
    "check_condition_m0",
    "m0_value",
    "check_model",
    "gaussian_invariant_law",
    "pseudo_spectral_gram",
    "linear_test_model",
    "bistable_model",
    "additive_fast_model",
    "get_model",
    "CATALOG",
]

PointwiseMap = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    slow: SpectralBasis
    fast: SpectralBasis
    b1: PointwiseMap
    b2: PointwiseMap
    g1: PointwiseMap
    g2: PointwiseMap
    lb2: float
    lg2: float
    gamma: float = 0.0
    g1_depends_on_fast: bool = True
    delta: float = 0.0
    g1_bound: float | None = None
    M: int | None = None
    # constant multipliers let the integrator skip grid work for additive noise
    g1_const: float | None = None
    g2_const: float | None = None
    # (a, s, c) when b2 = a s1 + s s2 and g2 = c: the frozen fast law is Gaussian
    fast_linear: tuple | None = None
    bbar_exact: Callable | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument(f"growth exponent gamma must lie in [0, 1), got {self.gamma}")
        if self.slow.N != self.fast.N or self.slow.L != self.fast.L:
            raise InvalidArgument("slow and fast bases must share N and L")

    @property
    def N(self) -> int:
        return self.slow.N

    @property
    def grid(self):
        return sine_grid(self.slow, self.M)

    def with_params(self, **changes) -> "ModelSpec":
        return get_model(self.name, N=self.N, L=self.slow.L, shift_slow=self.slow.shift,
                         shift_fast=self.fast.shift, M=self.M, **{**self.params, **changes})


def nemytskii(model: ModelSpec, which: str, u_grid, v_grid, xi=None):
    """Evaluate ``b1|b2|g1|g2`` pointwise on grid fields.

    For the g-maps the result is the multiplier field; applying the
    operator to z is the pointwise product with z.
    """
    if which not in ("b1", "b2", "g1", "g2"):
        raise InvalidArgument(f"unknown map {which!r}")
    u_grid = np.asarray(u_grid, dtype=float)
    v_grid = np.asarray(v_grid, dtype=float)
    if u_grid.shape[-1] != v_grid.shape[-1]:
        raise InvalidArgument(f"grid mismatch: {u_grid.shape} vs {v_grid.shape}")
    if xi is None:
        grid = sine_grid(model.slow, u_grid.shape[-1])
        xi = grid.points
    shape = np.broadcast_shapes(u_grid.shape, v_grid.shape)
    out = getattr(model, which)(xi, u_grid, v_grid)
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


def pseudo_spectral_gram(model: ModelSpec, x, v):
    """Matrix of <G1(x,v) e_h, G1(x,v) e_k> with the product projected onto N modes.

    ``x`` and ``v`` are coefficient arrays with matching batch axes; the
    result has shape ``batch + (N, N)``.
    """
    grid = model.grid
    g = nemytskii(model, "g1", grid.to_grid(x), grid.to_grid(v), grid.points)
    # W[l, h] = sum_j analysis[l, j] g_j synth[j, h]
    W = (grid.analysis * g[..., None, :]) @ grid.synth
    S = np.swapaxes(W, -1, -2) @ W
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def gaussian_invariant_law(model: ModelSpec, x):
    """Mean and per-mode variance of the frozen fast invariant law.

    Only available when the fast equation is linear with additive noise
    (``model.fast_linear`` set); returns ``None`` otherwise.
    """
    if model.fast_linear is None:
        return None
    a, s, c = model.fast_linear
    rate = model.fast.alphas - s
    mean = a * np.asarray(x, dtype=float) / rate
    var = (c * model.fast.lambdas) ** 2 / (2.0 * rate)
    return mean, var


# -- Hypothesis checks ----------------------------------------------------


@dataclass(frozen=True)
class H2Report:
    measured_lb2: float
    measured_lg2: float
    declared_lb2: float
    declared_lg2: float
    gap: float
    growth_exponent: float
    gamma: float
    g1_floor: float | None
    violations: tuple

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "measured_lb2": self.measured_lb2,
            "measured_lg2": self.measured_lg2,
            "declared_lb2": self.declared_lb2,
            "declared_lg2": self.declared_lg2,
            "gap": self.gap,
            "growth_exponent": self.growth_exponent,
            "gamma": self.gamma,
            "g1_floor": self.g1_floor,
            "violations": list(self.violations),
            "passed": self.passed,
        }


def _lipschitz_in_fast(f, xi, s1, s2, r2):
    num = np.abs(f(xi, s1, s2) - f(xi, s1, r2))
    den = np.abs(s2 - r2)
    q = np.broadcast_to(num, den.shape) / den
    return float(np.max(q))


def check_hypothesis_h2(model: ModelSpec, sample_count: int = 1000, rng_seed=0) -> H2Report:
    """Sample the fast-variable Lipschitz quotients of b2, g2 and the growth of g2.

    Quotients may exceed the declared constants by at most 1%.  The growth
    exponent is the least-squares slope of log|g2| against log|s2| over
    |s2| in {1e1, 1e2, 1e3, 1e4} and must not exceed gamma + 0.05.
    """
    if sample_count < 100:
        raise InvalidArgument("sample_count must be >= 100")
    rng = np.random.default_rng(rng_seed)
    L = model.slow.L
    n = int(sample_count)
    xi = rng.uniform(0.0, L, n)
    s1 = rng.normal(0.0, 3.0, n)
    s2 = rng.normal(0.0, 3.0, n)
    r2 = s2 + rng.normal(0.0, 1.0, n)
    r2 = np.where(r2 == s2, s2 + 1.0, r2)

    lb2 = _lipschitz_in_fast(model.b2, xi, s1, s2, r2)
    lg2 = _lipschitz_in_fast(model.g2, xi, s1, s2, r2)
    violations = []
    if lb2 > 1.01 * model.lb2:
        violations.append(f"b2 Lipschitz quotient {lb2:.6g} exceeds declared {model.lb2:.6g}")
    if lg2 > 1.01 * model.lg2:
        violations.append(f"g2 Lipschitz quotient {lg2:.6g} exceeds declared {model.lg2:.6g}")
    gap = model.fast.gap
    if not model.lb2 < gap:
        violations.append(f"L_b2 = {model.lb2:.6g} is not below the fast spectral gap {gap:.6g}")

    mags = np.array([1e1, 1e2, 1e3, 1e4])
    xs = rng.uniform(0.0, L, 64)
    peak = []
    for m in mags:
        vals = [np.abs(np.broadcast_to(model.g2(xs, 0.0, sign * m), xs.shape)) for sign in (-1.0, 1.0)]
        peak.append(float(np.max(vals)))
    peak = np.array(peak)
    if np.all(peak == 0.0):
        growth = 0.0
    else:
        growth = float(np.polyfit(np.log(mags), np.log(np.maximum(peak, 1e-300)), 1)[0])
    if growth > model.gamma + 0.05:
        violations.append(f"g2 growth exponent {growth:.3f} exceeds gamma + 0.05 = {model.gamma + 0.05:.3f}")

    g1_floor = None
    if model.delta > 0:
        g1_floor = float(np.min(np.broadcast_to(model.g1(xi, s1, s2), xi.shape)))
        if g1_floor < model.delta:
            violations.append(f"g1 sampled minimum {g1_floor:.6g} below declared floor {model.delta:.6g}")
    return H2Report(lb2, lg2, model.lb2, model.lg2, gap, growth, model.gamma, g1_floor,
                    tuple(violations))


@dataclass(frozen=True)
class ConditionM0Report:
    m0: float
    drift_term: float
    noise_term: float
    inputs: dict

    @property
    def passed(self) -> bool:
        return self.m0 < 0.5

    def to_dict(self) -> dict:
        return {"m0": self.m0, "drift_term": self.drift_term, "noise_term": self.noise_term,
                "passed": self.passed, "inputs": self.inputs}


def m0_value(lb2, lg2, gap, beta, rho, zeta, kappa):
    """Return ``(drift_term, noise_term)`` of the contraction constant.

    ``rho = inf`` uses the limits (rho-2)/rho -> 1 and kappa^(2/rho) -> 1.
    """
    drift = (lb2 / gap) ** 2
    if lg2 == 0.0:
        return drift, 0.0
    if math.isinf(rho):
        e = beta
        noise = (lg2 ** 2 * (beta / math.e) ** e * zeta * (1.0 / gap) ** (1.0 - e))
    else:
        e = beta * (rho - 2.0) / rho
        noise = (lg2 ** 2 * (beta / math.e) ** e * zeta ** ((rho - 2.0) / rho)
                 * kappa ** (2.0 / rho) * (rho / (gap * (rho + 2.0))) ** (1.0 - e))
    return drift, noise


def check_condition_m0(model: ModelSpec, report: HypothesisReport) -> ConditionM0Report:
    c = report.fast_constants()
    for key in ("gap", "beta", "rho", "zeta", "kappa"):
        if c.get(key) is None:
            raise InvalidArgument(f"fast report lacks {key}")
    rho = math.inf if c["rho"] == "inf" else float(c["rho"])
    drift, noise = m0_value(model.lb2, model.lg2, c["gap"], c["beta"], rho, c["zeta"], c["kappa"])
    inputs = {"lambda": c["gap"], "beta2": c["beta"], "rho2": c["rho"], "zeta2": c["zeta"],
              "kappa2": c["kappa"], "lb2": model.lb2, "lg2": model.lg2}
    return ConditionM0Report(drift + noise, drift, noise, inputs)


def check_model(model: ModelSpec, beta=(0.75, 0.75), rho=(math.inf, math.inf),
                sample_count=1000, rng_seed=0):
    """Run every validity check; returns ``(h1_report, h2_report, m0_report)``."""
    h1 = check_hypothesis_h1(model.slow, model.fast, beta, rho)
    h2 = check_hypothesis_h2(model, sample_count, rng_seed)
    m0 = check_condition_m0(model, h1)
    h1 = HypothesisReport(h1.slow, h1.fast, h1.flags, h1.gap,
                          lb2_below_gap=model.lb2 < h1.gap, m0=m0.m0)
    return h1, h2, m0


# -- Catalog --------------------------------------------------------------


def _bases(N, L, shift_slow, shift_fast):
    slow = build_basis("dirichlet_laplacian", N, L, shift_slow, role="slow")
    fast = build_basis("dirichlet_laplacian", N, L, shift_fast, role="fast")
    return slow, fast


def _gaussian_fast_bbar(slow, fast, fast_linear, M, b1_of_mean):
    """B-bar for b1 affine in s2 (or with closed-form Gaussian expectation)."""
    a, s, c = fast_linear
    rate = fast.alphas - s
    grid = sine_grid(slow, M)
    var_grid = (grid.synth ** 2) @ ((c * fast.lambdas) ** 2 / (2.0 * rate))

    def bbar(x):
        x = np.asarray(x, dtype=float)
        mean = a * x / rate
        return b1_of_mean(grid, x, mean, var_grid)

    return bbar


def linear_test_model(N=32, L=math.pi, shift_slow=0.0, shift_fast=0.0, M=None,
                      b1_slow=0.0, b1_fast=1.0, b2_slow=0.5, b2_fast=-0.5,
                      g1_const=1.0, g1_sin_fast=0.0, g1_sin_slow=0.0, g2_const=1.0):
    slow, fast = _bases(N, L, shift_slow, shift_fast)
    cu, cv, a, s = float(b1_slow), float(b1_fast), float(b2_slow), float(b2_fast)
    c, p, q, g2c = float(g1_const), float(g1_sin_fast), float(g1_sin_slow), float(g2_const)

    def b1(xi, s1, s2):
        return cu * s1 + cv * s2

    def b2(xi, s1, s2):
        return a * s1 + s * s2

    if p == 0.0 and q == 0.0:
        def g1(xi, s1, s2):
            return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), c)
    else:
        def g1(xi, s1, s2):
            return c + p * np.sin(s2) + q * np.sin(s1)

    def g2(xi, s1, s2):
        return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), g2c)

    fast_linear = (a, s, g2c)

    def affine(grid, x, mean, var_grid):
        return cu * x + cv * mean

    bbar = _gaussian_fast_bbar(slow, fast, fast_linear, M, affine)
    floor = c - abs(p) - abs(q)
    params = dict(b1_slow=cu, b1_fast=cv, b2_slow=a, b2_fast=s, g1_const=c,
                  g1_sin_fast=p, g1_sin_slow=q, g2_const=g2c)
    return ModelSpec(
        name="linear_test_model", slow=slow, fast=fast, b1=b1, b2=b2, g1=g1, g2=g2,
        lb2=abs(s), lg2=0.0, gamma=0.0, g1_depends_on_fast=p != 0.0,
        delta=floor if floor > 0 else 0.0, g1_bound=abs(c) + abs(p) + abs(q), M=M,
        g1_const=c if (p == 0.0 and q == 0.0) else None, g2_const=g2c,
        fast_linear=fast_linear, bbar_exact=bbar, params=params,
    )


_CUBIC_CUT = 2.0


def _cubic(s):
    r = _CUBIC_CUT
    inner = s - s ** 3
    edge = r - r ** 3
    slope = 1.0 - 3.0 * r ** 2
    outer = np.sign(s) * edge + slope * (s - np.sign(s) * r)
    return np.where(np.abs(s) <= r, inner, outer)


def bistable_model(N=32, L=math.pi, shift_slow=0.0, shift_fast=0.0, M=None,
                   b2_slow=0.5, b2_fast=-0.5, g1_const=1.0, g2_const=1.0):
    slow, fast = _bases(N, L, shift_slow, shift_fast)
    a, s, c, g2c = float(b2_slow), float(b2_fast), float(g1_const), float(g2_const)

    def b1(xi, s1, s2):
        return _cubic(s1) + s2

    def b2(xi, s1, s2):
        return a * s1 + s * s2

    def g1(xi, s1, s2):
        return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), c)

    def g2(xi, s1, s2):
        return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), g2c)

    def drift(grid, x, mean, var_grid):
        return grid.from_grid(_cubic(grid.to_grid(x))) + mean

    fast_linear = (a, s, g2c)
    return ModelSpec(
        name="bistable", slow=slow, fast=fast, b1=b1, b2=b2, g1=g1, g2=g2,
        lb2=abs(s), lg2=0.0, gamma=0.0, g1_depends_on_fast=False,
        delta=c if c > 0 else 0.0, g1_bound=abs(c), M=M, g1_const=c, g2_const=g2c,
        fast_linear=fast_linear,
        bbar_exact=_gaussian_fast_bbar(slow, fast, fast_linear, M, drift),
        params=dict(b2_slow=a, b2_fast=s, g1_const=c, g2_const=g2c),
    )


def additive_fast_model(N=32, L=math.pi, shift_slow=0.0, shift_fast=0.0, M=None,
                        b2_slow=0.5, b2_fast=-0.5, g1_const=1.0, g2_const=1.0):
    slow, fast = _bases(N, L, shift_slow, shift_fast)
    a, s, c, g2c = float(b2_slow), float(b2_fast), float(g1_const), float(g2_const)

    def b1(xi, s1, s2):
        return np.cos(s2) + 0.0 * s1

    def b2(xi, s1, s2):
        return a * s1 + s * s2

    def g1(xi, s1, s2):
        return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), c)

    def g2(xi, s1, s2):
        return np.full(np.broadcast_shapes(np.shape(s1), np.shape(s2)), g2c)

    def drift(grid, x, mean, var_grid):
        # E cos(V) = cos(m) exp(-var/2) for Gaussian V
        return grid.from_grid(np.cos(grid.to_grid(mean)) * np.exp(-0.5 * var_grid))

    fast_linear = (a, s, g2c)
    return ModelSpec(
        name="additive_fast", slow=slow, fast=fast, b1=b1, b2=b2, g1=g1, g2=g2,
        lb2=abs(s), lg2=0.0, gamma=0.0, g1_depends_on_fast=False,
        delta=c if c > 0 else 0.0, g1_bound=abs(c), M=M, g1_const=c, g2_const=g2c,
        fast_linear=fast_linear,
        bbar_exact=_gaussian_fast_bbar(slow, fast, fast_linear, M, drift),
        params=dict(b2_slow=a, b2_fast=s, g1_const=c, g2_const=g2c),
    )


CATALOG = {
    "linear_test_model": linear_test_model,
    "bistable": bistable_model,
    "additive_fast": additive_fast_model,
}


def get_model(name, **kwargs) -> ModelSpec:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise InvalidArgument(f"unknown model {name!r}; catalog: {sorted(CATALOG)}") from None
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for {name}: {exc}") from None
