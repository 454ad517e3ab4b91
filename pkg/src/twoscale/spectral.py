"""Sine eigenbasis of 1D elliptic operators and the transforms built on it.

Fields on the interval (0, L) are carried as coefficient arrays whose last
axis runs over the modes k = 1..N; any leading axes are batch axes
(replicas, time samples).  Grid values live on the interior points
``xi_j = j L / (M + 1)``, j = 1..M, where the discrete sine sums are exactly
orthogonal, so synthesis followed by analysis is the identity whenever
M >= N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "SpectralBasis",
    "SineGrid",
    "HypothesisReport",
    "build_basis",
    "apply_semigroup",
    "to_grid",
    "from_grid",
    "h_norm",
    "mode_vector",
    "series_summary",
    "check_hypothesis_h1",
]

_KINDS = ("dirichlet_laplacian", "shifted_laplacian")


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Eigenpairs of ``A`` and ``Q`` on (0, L) truncated to N modes.

    ``alphas[k-1]`` is the decay rate of mode k (A e_k = -alpha_k e_k) and
    ``lambdas[k-1]`` the noise amplitude (Q e_k = lambda_k e_k).
    """

    role: str
    N: int
    L: float
    boundary: str
    shift: float
    alphas: np.ndarray
    lambdas: np.ndarray
    sup_bounds: np.ndarray

    @property
    def gap(self) -> float:
        return float(self.alphas.min())

    def eigenfunction(self, k: int, xi):
        """Evaluate e_k at points ``xi`` (k is 1-based)."""
        return math.sqrt(2.0 / self.L) * np.sin(k * np.pi * np.asarray(xi) / self.L)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "N": self.N,
            "L": self.L,
            "boundary": self.boundary,
            "shift": self.shift,
            "alphas": self.alphas.tolist(),
            "lambdas": self.lambdas.tolist(),
        }


def build_basis(kind="dirichlet_laplacian", N=32, L=math.pi, shift=0.0,
                role="slow", lambdas=None) -> SpectralBasis:
    """Construct the sine basis of ``d^2/dxi^2 - shift`` on (0, L).

    ``shifted_laplacian`` is the same operator flagged as a stand-in for a
    Robin-type boundary operator; it requires ``shift > 0``.  Noise
    amplitudes default to 1 (white noise in space).
    """
    if kind not in _KINDS:
        raise InvalidArgument(f"unknown basis kind {kind!r}; expected one of {_KINDS}")
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise InvalidArgument(f"N must be a positive integer, got {N!r}")
    if not L > 0:
        raise InvalidArgument(f"L must be positive, got {L!r}")
    if shift < 0:
        raise InvalidArgument(f"shift must be >= 0, got {shift!r}")
    if kind == "shifted_laplacian" and shift <= 0:
        raise InvalidArgument("shifted_laplacian needs shift > 0")
    if role not in ("slow", "fast"):
        raise InvalidArgument(f"role must be 'slow' or 'fast', got {role!r}")
    k = np.arange(1, N + 1, dtype=float)
    alphas = (k * np.pi / L) ** 2 + shift
    if lambdas is None:
        lam = np.ones(N)
    else:
        lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (N,)).copy()
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise InvalidArgument("noise amplitudes must be finite and >= 0")
    boundary = "dirichlet" if kind == "dirichlet_laplacian" else "robin"
    for arr in (alphas, lam):
        arr.setflags(write=False)
    sup = np.full(N, math.sqrt(2.0 / L))
    sup.setflags(write=False)
    return SpectralBasis(role, int(N), float(L), boundary, float(shift), alphas, lam, sup)


def apply_semigroup(basis: SpectralBasis, u, t: float):
    """Apply e^{tA}: each coefficient decays as exp(-alpha_k t)."""
    if t < 0:
        raise InvalidArgument(f"semigroup time must be >= 0, got {t}")
    return np.exp(-basis.alphas * t) * np.asarray(u, dtype=float)


@dataclass(frozen=True, eq=False)
class SineGrid:
    """Collocation grid with dense synthesis/analysis matrices."""

    N: int
    M: int
    L: float
    points: np.ndarray = field(repr=False)
    synth: np.ndarray = field(repr=False)     # (M, N): grid = coeffs @ synth.T
    analysis: np.ndarray = field(repr=False)  # (N, M): coeffs = grid @ analysis.T

    def to_grid(self, coeffs):
        return np.asarray(coeffs) @ self.synth.T

    def from_grid(self, values):
        return np.asarray(values) @ self.analysis.T


@lru_cache(maxsize=64)
def _grid(N: int, M: int, L: float) -> SineGrid:
    j = np.arange(1, M + 1, dtype=float)
    pts = j * L / (M + 1)
    k = np.arange(1, N + 1, dtype=float)
    synth = math.sqrt(2.0 / L) * np.sin(np.outer(pts, k) * np.pi / L)
    analysis = (L / (M + 1)) * synth.T
    for arr in (pts, synth, analysis):
        arr.setflags(write=False)
    return SineGrid(N, M, L, pts, np.ascontiguousarray(synth), np.ascontiguousarray(analysis))


def sine_grid(basis: SpectralBasis, M: int | None = None) -> SineGrid:
    """Grid for ``basis`` with M points (default 2N)."""
    M = 2 * basis.N if M is None else int(M)
    if M < basis.N:
        raise InvalidArgument(f"grid size M={M} must be >= N={basis.N}")
    return _grid(basis.N, M, basis.L)


def to_grid(basis: SpectralBasis, coeffs, M: int | None = None):
    """Synthesize grid values from coefficients (batch axes preserved)."""
    return sine_grid(basis, M).to_grid(coeffs)


def from_grid(basis: SpectralBasis, values):
    """Discrete sine analysis of grid values back to N coefficients."""
    values = np.asarray(values, dtype=float)
    return sine_grid(basis, values.shape[-1]).from_grid(values)


def h_norm(coeffs):
    """L^2(0,L) norm from coefficients (Parseval), over the last axis."""
    return np.linalg.norm(np.asarray(coeffs, dtype=float), axis=-1)


def mode_vector(N: int, k: int, scale: float = 1.0):
    """Coefficient vector of ``scale * e_k`` (k is 1-based)."""
    if not 1 <= k <= N:
        raise InvalidArgument(f"mode {k} outside 1..{N}")
    out = np.zeros(N)
    out[k - 1] = scale
    return out


# -- Hypothesis on the spectral data -------------------------------------


def series_summary(terms) -> dict:
    """Partial sum of a positive series plus a tail estimate.

    The tail is bounded by fitting a power law ``c k^{-p}`` through the last
    two terms and integrating it from N to infinity, which gives
    ``a_N N / (p - 1)``; if ``p <= 1`` the series is reported divergent.
    Faster-than-power decay makes the fitted p large and the bound tight.
    """
    a = np.asarray(terms, dtype=float)
    n = a.size
    partial = float(a.sum())
    if n < 2 or a[-1] == 0.0:
        p = math.inf if (n >= 1 and a[-1] == 0.0) else float("nan")
        tail = 0.0 if a[-1] == 0.0 else math.inf
    else:
        p = math.log(a[-2] / a[-1]) / math.log(n / (n - 1)) if a[-2] > 0 else float("nan")
        tail = float(a[-1] * n / (p - 1.0)) if p > 1.0 else math.inf
    ratio = float(a[-1] / a[-2]) if n >= 2 and a[-2] > 0 else float("nan")
    return {
        "partial_sum": partial,
        "tail_bound": tail,
        "total_bound": partial + tail,
        "fitted_decay_exponent": p,
        "last_ratio": ratio,
        "converges": bool(math.isfinite(tail)),
    }


@dataclass(frozen=True)
class HypothesisReport:
    """Truncated series and condition flags for both bases.

    ``lb2_below_gap`` and ``m0`` are filled in once a model is known
    (see :func:`twoscale.model.check_model`).
    """

    slow: dict
    fast: dict
    flags: dict
    gap: float
    lb2_below_gap: bool | None = None
    m0: float | None = None

    @property
    def passed(self) -> bool:
        flags = dict(self.flags)
        if self.lb2_below_gap is not None:
            flags["lb2_below_gap"] = self.lb2_below_gap
        if self.m0 is not None:
            flags["m0_below_half"] = self.m0 < 0.5
        return all(flags.values())

    def fast_constants(self) -> dict:
        f = self.fast
        return {
            "gap": self.gap,
            "beta": f["beta"],
            "rho": f["rho"],
            "zeta": f["zeta"]["total_bound"],
            "kappa": f["kappa"]["total_bound"],
        }

    def to_dict(self) -> dict:
        flags = dict(self.flags)
        if self.lb2_below_gap is not None:
            flags["lb2_below_gap"] = self.lb2_below_gap
        return {
            "slow": self.slow,
            "fast": self.fast,
            "flags": flags,
            "kappa": {"slow": self.slow["kappa"], "fast": self.fast["kappa"]},
            "zeta": {"slow": self.slow["zeta"], "fast": self.fast["zeta"]},
            "gap": self.gap,
            "m0": self.m0,
            "passed": self.passed,
        }


def _basis_series(basis: SpectralBasis, beta: float, rho: float) -> dict:
    if not beta > 0:
        raise InvalidArgument(f"beta must be > 0, got {beta}")
    if not rho > 2:
        raise InvalidArgument(f"rho must lie in (2, inf], got {rho}")
    e2 = basis.sup_bounds ** 2
    if math.isinf(rho):
        # white-noise convention: kappa reduces to sup_k lambda_k |e_k|_0
        sup = float(np.max(basis.lambdas * basis.sup_bounds))
        kappa = {"partial_sum": sup, "tail_bound": 0.0, "total_bound": sup,
                 "fitted_decay_exponent": None, "last_ratio": None,
                 "converges": bool(math.isfinite(sup)), "sup_convention": True}
        exponent = beta
    else:
        kappa = series_summary(basis.lambdas ** rho * e2)
        kappa["sup_convention"] = False
        exponent = beta * (rho - 2.0) / rho
    zeta = series_summary(basis.alphas ** (-beta) * e2)
    out = basis.to_dict()
    out.update({
        "beta": beta,
        "rho": "inf" if math.isinf(rho) else rho,
        "kappa": kappa,
        "zeta": zeta,
        "time_exponent": exponent,
    })
    return out


def check_hypothesis_h1(slow: SpectralBasis, fast: SpectralBasis, beta=(0.75, 0.75),
                        rho=(math.inf, math.inf)) -> HypothesisReport:
    """Evaluate the summability and spectral-gap conditions on both bases."""
    rho = tuple(math.inf if (isinstance(r, str) and r.lower() in ("inf", "infinity")) else float(r)
                for r in rho)
    s = _basis_series(slow, float(beta[0]), rho[0])
    f = _basis_series(fast, float(beta[1]), rho[1])
    gap = fast.gap
    flags = {
        "slow_kappa_finite": s["kappa"]["converges"],
        "slow_zeta_finite": s["zeta"]["converges"],
        "slow_exponent_below_one": s["time_exponent"] < 1.0,
        "fast_kappa_finite": f["kappa"]["converges"],
        "fast_zeta_finite": f["zeta"]["converges"],
        "fast_exponent_below_one": f["time_exponent"] < 1.0,
        "fast_gap_positive": gap > 0.0,
    }
    return HypothesisReport(slow=s, fast=f, flags=flags, gap=gap)
