"""Monte Carlo studies: averaging error, remainder, Kolmogorov gap, weak
convergence and a priori bounds, plus the run-directory writers.

Every study is a deterministic function of its arguments and seed.  The
per-epsilon shards are independent and may run on a thread pool; results
are assembled in eps order so completion order never matters.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .config import DtRule
from .errors import HypothesisGateError, InvalidArgument, NonFiniteError
from .ergodics import AveragedCoeffs, analytic_averaged
from .integrator import NoiseStream, iter_averaged, iter_coupled, n_steps_for, simulate_coupled
from .khasminskii import (
    CylindricalFn,
    build_partition,
    kolmogorov_gap,
    remainder_path,
    simulate_auxiliary,
    aligned_step,
)
from .model import ModelSpec, check_model
from .streams import FAST, SLOW, STUDY

__all__ = [
    "ConvergenceResult",
    "WeakResult",
    "BoundReport",
    "StudyTable",
    "gate_model",
    "common_dt",
    "convergence_study",
    "weak_convergence_probe",
    "moment_bound_study",
    "holder_increment_study",
    "remainder_study",
    "gap_study",
    "auxiliary_study",
    "strictly_decreasing",
    "write_csv",
    "write_json",
    "write_run_dir",
    "default_jobs",
]


# -- helpers --------------------------------------------------------------


def default_jobs() -> int:
    env = os.environ.get("TWOSCALE_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _map(fn, items, jobs):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def strictly_decreasing(values) -> bool:
    v = list(values)
    return all(a > b for a, b in zip(v, v[1:]))


def _check_eps_list(eps_list):
    eps = [float(e) for e in eps_list]
    if not eps:
        raise InvalidArgument("eps_list is empty")
    if any(not 0 < e <= 1 for e in eps):
        raise InvalidArgument("eps values must lie in (0, 1]")
    if not strictly_decreasing(eps):
        raise InvalidArgument("eps_list must be strictly decreasing")
    return eps


def common_dt(dt_rule, eps_list) -> float:
    """One time step shared by all eps: the rule evaluated at the smallest eps.

    Sharing the step lets every eps shard and the averaged run consume the
    same slow noise increments.
    """
    rule = DtRule.coerce(dt_rule)
    eps = min(eps_list)
    dt = rule(eps)
    if dt > eps / 10 * (1 + 1e-12):
        raise InvalidArgument(f"dt = {dt:g} violates dt <= eps/10 at eps = {eps:g}")
    return dt


def gate_model(model: ModelSpec, beta=(0.75, 0.75), rho=(math.inf, math.inf), sample_count=1000):
    """Run all validity checks; raise :class:`HypothesisGateError` if any fails."""
    h1, h2, m0 = check_model(model, beta, rho, sample_count)
    report = {"h1": h1.to_dict(), "h2": h2.to_dict(), "m0": m0.to_dict(),
              "passed": bool(h1.passed and h2.passed and m0.passed)}
    if not report["passed"]:
        raise HypothesisGateError("model fails the hypothesis checks; refusing to run", report)
    return report


def _sem(x):
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def _vec(x, N):
    return np.zeros(N) if x is None else np.asarray(x, dtype=float)


def _batches(replicas, size):
    return [tuple(range(s, min(s + size, replicas))) for s in range(0, replicas, size)]


@dataclass
class StudyTable:
    """A result table: ordered columns and rows of plain numbers."""

    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return [r[name] for r in self.rows]


# -- averaging error ------------------------------------------------------


@dataclass
class ConvergenceResult:
    rows: list            # dicts: eps, replicas, mean_sup_error, se, median, runtime
    coupling: str
    model: str
    provenance: dict
    dt: float
    meta: dict = field(default_factory=dict)

    columns = ("eps", "replicas", "mean_sup_error", "se", "median")

    @property
    def errors(self):
        return [r["mean_sup_error"] for r in self.rows]

    def decreasing(self) -> bool:
        return strictly_decreasing(self.errors)

    def table(self) -> StudyTable:
        rows = [{k: r[k] for k in self.columns} for r in self.rows]
        return StudyTable(list(self.columns), rows, {"coupling": self.coupling, "dt": self.dt})

    def timing(self) -> dict:
        return {repr(r["eps"]): r["runtime"] for r in self.rows}


def convergence_study(model: ModelSpec, x, y, eps_list, T=1.0, dt_rule="eps/10", replicas=200,
                      seed=0, avg: AveragedCoeffs | None = None, *, gate=True, beta=(0.75, 0.75),
                      rho=(math.inf, math.inf), jobs=1, dt=None) -> ConvergenceResult:
    """E sup_{t<=T} |u_eps(t) - u_bar(t)|_H under common slow noise.

    All eps shards use one time step (``common_dt``) and the same slow
    stream key, so u_bar is the same path for every shard; each shard
    regenerates it alongside u_eps rather than storing it.
    """
    eps_list = _check_eps_list(eps_list)
    if model.g1_depends_on_fast:
        raise InvalidArgument("strong averaging needs g1 independent of the fast variable")
    if gate:
        gate_model(model, beta, rho)
    if avg is None:
        avg = analytic_averaged(model)
    dt = common_dt(dt_rule, eps_list) if dt is None else float(dt)
    N = model.N
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["converge"]
    ids = range(replicas)

    def shard(i):
        eps = eps_list[i]
        t0 = time.perf_counter()
        sn = NoiseStream.for_replicas(seed, (study, SLOW), ids, N)
        sn_bar = NoiseStream.for_replicas(seed, (study, SLOW), ids, N)
        fn = NoiseStream.for_replicas(seed, (study, FAST, i), ids, N)
        sup = np.zeros(replicas)
        avg_it = iter_averaged(avg, x, T, dt, sn_bar)
        for (n, t, u, v), (_, _, ub) in zip(iter_coupled(model, x, y, eps, T, dt, sn, fn), avg_it):
            np.maximum(sup, np.linalg.norm(u - ub, axis=1), out=sup)
        return {"eps": eps, "replicas": replicas, "mean_sup_error": float(sup.mean()),
                "se": _sem(sup), "median": float(np.median(sup)),
                "runtime": time.perf_counter() - t0}

    rows = _map(shard, range(len(eps_list)), jobs)
    return ConvergenceResult(rows, "common-noise", model.name, dict(avg.provenance), dt,
                             {"T": T, "seed": seed})


# -- weak convergence -----------------------------------------------------


def _clipped_mode1(c):
    return lambda u: np.clip(u[:, 0], -c, c)


def _clipped_norm(c):
    return lambda u: np.minimum(np.linalg.norm(u, axis=1), c)


def default_functionals(clip=10.0) -> dict:
    return {"mode1_clipped": _clipped_mode1(clip), "norm_clipped": _clipped_norm(clip)}


@dataclass
class WeakResult:
    rows: list     # eps, replicas, ks, ks_pvalue, diff_<name>, se_<name>
    functionals: tuple
    dt: float
    meta: dict = field(default_factory=dict)

    def series(self, name):
        return [r[name] for r in self.rows]

    def table(self) -> StudyTable:
        cols = ["eps", "replicas", "ks", "ks_pvalue"]
        for f in self.functionals:
            cols += [f"diff_{f}", f"se_{f}"]
        return StudyTable(cols, [{k: r[k] for k in cols} for r in self.rows], {"dt": self.dt})


def _terminal_averaged(avg, x, T, dt, seed, key, replicas):
    sn = NoiseStream.for_replicas(seed, key, range(replicas), avg.basis.N)
    for _, _, u in iter_averaged(avg, x, T, dt, sn):
        pass
    return u.copy()


def weak_convergence_probe(model: ModelSpec, avg: AveragedCoeffs, x, y, eps_list, T=1.0,
                           functionals: dict | None = None, replicas=1000, seed=0,
                           dt_rule="eps/10", *, gate=True, beta=(0.75, 0.75),
                           rho=(math.inf, math.inf), jobs=1, clip=10.0) -> WeakResult:
    """Distributional distance between u_eps(T) and u_bar(T) with independent noise.

    Reports |E f(u_eps(T)) - E f(u_bar(T))| for each functional and the
    two-sample Kolmogorov-Smirnov statistic of <u(T), e_1>.  The u_eps runs
    share one slow stream across eps (independent of u_bar's) so the trend
    in eps is not masked by shard-to-shard noise.
    """
    eps_list = _check_eps_list(eps_list)
    if gate:
        gate_model(model, beta, rho)
    functionals = default_functionals(clip) if functionals is None else dict(functionals)
    dt = common_dt(dt_rule, eps_list)
    N = model.N
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["weak"]
    ubar = _terminal_averaged(avg, x, T, dt, seed, (study, SLOW, 0), replicas)
    fbar = {k: np.asarray(f(ubar), dtype=float) for k, f in functionals.items()}
    ids = range(replicas)

    def shard(i):
        eps = eps_list[i]
        sn = NoiseStream.for_replicas(seed, (study, SLOW, 1), ids, N)
        fn = NoiseStream.for_replicas(seed, (study, FAST, i), ids, N)
        for _, _, u, _ in iter_coupled(model, x, y, eps, T, dt, sn, fn):
            pass
        ks = sps.ks_2samp(u[:, 0], ubar[:, 0])
        row = {"eps": eps, "replicas": replicas, "ks": float(ks.statistic),
               "ks_pvalue": float(ks.pvalue)}
        for k, f in functionals.items():
            fe = np.asarray(f(u), dtype=float)
            row[f"diff_{k}"] = float(abs(fe.mean() - fbar[k].mean()))
            row[f"se_{k}"] = math.sqrt(_sem(fe) ** 2 + _sem(fbar[k]) ** 2)
        return row

    rows = _map(shard, range(len(eps_list)), jobs)
    return WeakResult(rows, tuple(functionals), dt, {"T": T, "seed": seed,
                                                     "coupling": "independent"})


# -- a priori bounds ------------------------------------------------------


@dataclass
class BoundReport:
    """Per-eps values of one bounded quantity and its pass/fail verdict."""

    quantity: str
    p: int | None
    eps: list
    values: list
    constants: dict
    passed: bool
    criterion: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "p": self.p, "eps": self.eps, "values": self.values,
                "constants": self.constants, "passed": self.passed, "criterion": self.criterion,
                "diagnostics": self.diagnostics}


def _ratio(values):
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return math.inf
    lo, hi = float(v.min()), float(v.max())
    if hi == 0.0:
        return 1.0
    return hi / lo if lo > 0 else math.inf


def moment_bound_study(model: ModelSpec, x, y, eps_list, p_list=(2, 4), T=1.0, replicas=200,
                       seed=0, dt_rule="eps/10", *, max_ratio=5.0, jobs=1) -> list:
    """Uniform-in-eps moment bounds.

    For each eps and p: E sup_t |u_eps|^p, int_0^T E|v_eps|^p dt, and
    sup_t E|v_eps|^2.  A quantity passes when every value is finite and the
    max/min ratio over eps is at most ``max_ratio``.
    """
    eps_list = _check_eps_list(eps_list)
    p_list = [int(p) for p in p_list]
    if any(p < 1 for p in p_list):
        raise InvalidArgument("moment orders must be >= 1")
    dt = common_dt(dt_rule, eps_list)
    N = model.N
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["moments"]
    ids = range(replicas)

    def shard(i):
        eps = eps_list[i]
        sn = NoiseStream.for_replicas(seed, (study, SLOW), ids, N)
        fn = NoiseStream.for_replicas(seed, (study, FAST, i), ids, N)
        sup_u = np.zeros(replicas)
        int_v = {p: 0.0 for p in p_list}
        sup_ev2 = 0.0
        prev = None
        try:
            for n, t, u, v in iter_coupled(model, x, y, eps, T, dt, sn, fn):
                nu = np.linalg.norm(u, axis=1)
                nv = np.linalg.norm(v, axis=1)
                np.maximum(sup_u, nu, out=sup_u)
                ev = {p: float(np.mean(nv ** p)) for p in p_list}
                if prev is not None:
                    for p in p_list:
                        int_v[p] += 0.5 * (ev[p] + prev[p]) * dt
                prev = ev
                sup_ev2 = max(sup_ev2, float(np.mean(nv ** 2)))
        except NonFiniteError as exc:
            return {"eps": eps, "error": str(exc)}
        out = {"eps": eps, "sup_ev2": sup_ev2}
        for p in p_list:
            out[f"unifue_{p}"] = float(np.mean(sup_u ** p))
            out[f"unifve_{p}"] = int_v[p]
        return out

    rows = _map(shard, range(len(eps_list)), jobs)
    failed = [r for r in rows if "error" in r]
    reports = []

    def report(qid, p, key):
        if failed:
            return BoundReport(qid, p, eps_list, [math.nan] * len(eps_list), {}, False,
                               f"ratio <= {max_ratio}", {"errors": failed})
        vals = [r[key] for r in rows]
        ratio = _ratio(vals)
        return BoundReport(qid, p, eps_list, vals, {"sup": max(vals), "ratio": ratio},
                           bool(ratio <= max_ratio), f"ratio <= {max_ratio}")

    for p in p_list:
        reports.append(report("unifue", p, f"unifue_{p}"))
        reports.append(report("unifve", p, f"unifve_{p}"))
    reports.append(report("unifvebis", 2, "sup_ev2"))
    return reports


def holder_increment_study(model: ModelSpec, x, y, eps_list, h_list, T=1.0, replicas=200,
                           seed=0, dt_rule="eps/10", *, max_spread=0.3, jobs=1) -> BoundReport:
    """Fit log E|u(t+h) - u(t)|^2 against log h at t = T/2 for each eps.

    The fitted slope is 2*beta_hat; the report passes when every slope is
    positive and the spread across eps is at most ``max_spread``.
    """
    eps_list = _check_eps_list(eps_list)
    h_list = sorted(float(h) for h in h_list)
    if any(not 0 < h <= 1 for h in h_list):
        raise InvalidArgument("increments h must lie in (0, 1]")
    if len(h_list) < 2:
        raise InvalidArgument("need at least two increments to fit an exponent")
    dt = common_dt(dt_rule, eps_list)
    t_mid = T / 2
    n_mid = t_mid / dt
    offsets = [h / dt for h in h_list]
    for val, what in [(n_mid, "T/2")] + [(o, f"h = {h}") for o, h in zip(offsets, h_list)]:
        if abs(val - round(val)) > 1e-6 * max(1.0, val):
            raise InvalidArgument(f"{what} is not aligned with dt = {dt:g}")
    n_mid = int(round(n_mid))
    offsets = [int(round(o)) for o in offsets]
    T_run = (n_mid + max(offsets)) * dt
    N = model.N
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["holder"]
    ids = range(replicas)

    def shard(i):
        eps = eps_list[i]
        sn = NoiseStream.for_replicas(seed, (study, SLOW), ids, N)
        fn = NoiseStream.for_replicas(seed, (study, FAST, i), ids, N)
        base = None
        incs = {}
        want = {n_mid + o: o for o in offsets}
        for n, t, u, v in iter_coupled(model, x, y, eps, T_run, dt, sn, fn):
            if n == n_mid:
                base = u.copy()
            elif n in want:
                incs[want[n]] = float(np.mean(np.sum((u - base) ** 2, axis=1)))
        m = np.array([incs[o] for o in offsets])
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            return {"eps": eps, "slope": math.nan, "increments": m.tolist()}
        slope = float(np.polyfit(np.log(h_list), np.log(m), 1)[0])
        return {"eps": eps, "slope": slope, "increments": m.tolist()}

    rows = _map(shard, range(len(eps_list)), jobs)
    slopes = [r["slope"] for r in rows]
    finite = all(math.isfinite(s) for s in slopes)
    spread = max(slopes) - min(slopes) if finite else math.inf
    passed = bool(finite and min(slopes) > 0 and spread <= max_spread)
    return BoundReport("sola30", None, eps_list, slopes,
                       {"two_beta": slopes, "beta_hat": [s / 2 for s in slopes], "spread": spread,
                        "h_list": h_list},
                       passed, f"slopes > 0 and spread <= {max_spread}",
                       {"increments": {repr(r["eps"]): r["increments"] for r in rows}})


# -- Khasminskii studies --------------------------------------------------


def remainder_study(model: ModelSpec, x, y, eps_list, T=1.0, h=None, replicas=200, seed=0,
                    dt_rule="eps/10", bbar: Callable | None = None, kappa1=0.5, kappa2=1.0,
                    *, batch=50, jobs=1) -> StudyTable:
    """E sup_{t<=T} |R_eps(t)| for each eps (common slow noise across eps)."""
    eps_list = _check_eps_list(eps_list)
    N = model.N
    h = np.eye(N)[0] if h is None else np.asarray(h, dtype=float)
    if bbar is None:
        bbar = analytic_averaged(model).bbar if not model.g1_depends_on_fast else model.bbar_exact
        if bbar is None:
            raise InvalidArgument("no averaged drift available; pass bbar")
    dt = common_dt(dt_rule, eps_list)
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["remainder"]

    def shard(i):
        eps = eps_list[i]
        sups = []
        for ids in _batches(replicas, batch):
            tr = simulate_coupled(model, x, y, eps, T, dt, seed, replica_ids=ids,
                                  slow_key=(study, SLOW), fast_key=(study, FAST, i))
            R = remainder_path(model, tr, bbar, h)
            sups.append(np.max(np.abs(R), axis=0))
        sup = np.concatenate(sups)
        return sup

    sups = _map(shard, range(len(eps_list)), jobs)
    rows = []
    for eps, sup in zip(eps_list, sups):
        try:
            plan = build_partition(eps, kappa1, kappa2, T)
            delta, zeta = plan.delta, plan.zeta
        except InvalidArgument:
            delta = zeta = math.nan
        rows.append({"eps": eps, "delta_eps": delta, "zeta_eps": zeta,
                     "estimate": float(sup.mean()), "se": _sem(sup), "replicas": replicas})
    return StudyTable(["eps", "delta_eps", "zeta_eps", "estimate", "se", "replicas"], rows,
                      {"dt": dt, "T": T})


def gap_study(model: ModelSpec, avg: AveragedCoeffs, phi: CylindricalFn, eps_list, t1, t2, x,
              y=None, outer=32, inner=32, seed=0, dt_rule="eps/10", kappa1=0.5, kappa2=1.0,
              T=1.0, *, jobs=1) -> StudyTable:
    """Kolmogorov gap estimate for each eps."""
    eps_list = _check_eps_list(eps_list)
    dt = common_dt(dt_rule, eps_list)

    def shard(i):
        return kolmogorov_gap(model, avg, phi, eps_list[i], t1, t2, x, y, outer, inner, dt,
                              seed, eps_index=i)

    res = _map(shard, range(len(eps_list)), jobs)
    rows = []
    for eps, st in zip(eps_list, res):
        try:
            plan = build_partition(eps, kappa1, kappa2, T)
            delta, zeta = plan.delta, plan.zeta
        except InvalidArgument:
            delta = zeta = math.nan
        rows.append({"eps": eps, "delta_eps": delta, "zeta_eps": zeta, "estimate": st.estimate,
                     "se": st.se, "replicas": outer})
    return StudyTable(["eps", "delta_eps", "zeta_eps", "estimate", "se", "replicas"], rows,
                      {"dt": dt, "t1": t1, "t2": t2, "inner": inner})


def auxiliary_study(model: ModelSpec, x, y, eps_list, T=1.0, replicas=50, seed=0, kappa1=0.5,
                    kappa2=1.0, *, jobs=1) -> StudyTable:
    """sup_t E|v_hat - v|_H^2 for each eps, with dt aligned to the partition."""
    eps_list = _check_eps_list(eps_list)
    N = model.N
    x, y = _vec(x, N), _vec(y, N)
    study = STUDY["auxiliary"]

    def shard(i):
        eps = eps_list[i]
        plan = build_partition(eps, kappa1, kappa2, T)
        dt, _ = aligned_step(plan)
        tr = simulate_coupled(model, x, y, eps, T, dt, seed, replicas,
                              slow_key=(study, SLOW), fast_key=(study, FAST, i))
        aux = simulate_auxiliary(model, tr, plan)
        err = np.max(np.mean(np.sum((aux.v - tr.v) ** 2, axis=2), axis=1))
        return {"eps": eps, "delta_eps": plan.delta, "zeta_eps": plan.zeta,
                "estimate": float(err), "se": math.nan, "replicas": replicas}

    rows = _map(shard, range(len(eps_list)), jobs)
    return StudyTable(["eps", "delta_eps", "zeta_eps", "estimate", "se", "replicas"], rows, {})


# -- output ---------------------------------------------------------------


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]):
    """RFC-4180 CSV with '\\r\\n' line endings and round-trip float formatting."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False)
                    + "\n", encoding="utf-8")
    return path


def write_run_dir(out, config_text: str, tables: dict, verdict: dict, timing: dict | None = None):
    """Write ``config.json``, one CSV per table, ``verdict.json`` and ``timing.json``.

    Wall-clock times live only in ``timing.json`` so the CSVs and verdict are
    byte-identical across reruns.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_text, encoding="utf-8")
    for name, table in tables.items():
        write_csv(out / f"{name}.csv", table.columns, table.rows)
    write_json(out / "verdict.json", verdict)
    if timing is not None:
        write_json(out / "timing.json", timing)
    return out
