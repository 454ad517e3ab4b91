"""Acceptance suite: the eleven end-to-end criteria at their stated sizes.

Each criterion is a function returning ``(passed, detail)``; the pytest
wrappers print one ``PASS``/``FAIL`` line per criterion and assert.  Run
``python tests/test_acceptance.py`` to print the summary without pytest.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from twoscale.cli import main as cli_main
from twoscale.ergodics import (
    analytic_averaged,
    ergodic_average,
    estimate_bbar,
    estimate_mixing,
    estimated_averaged,
    fit_affine_bbar,
    invariant_mode_stats,
)
from twoscale.experiments import (
    convergence_study,
    gap_study,
    holder_increment_study,
    moment_bound_study,
    remainder_study,
    strictly_decreasing,
    weak_convergence_probe,
)
from twoscale.integrator import simulate_averaged
from twoscale.khasminskii import eval_L_av, quadratic_mode_fn
from twoscale.model import check_condition_m0, linear_test_model
from twoscale.spectral import check_hypothesis_h1
from twoscale.streams import FAST, SLOW, STUDY

EPS = [0.1, 0.02, 0.004]
N = 32
E1 = np.eye(N)[0]


def _timed(fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    return ok, detail, time.perf_counter() - t0


# -- criteria ---------------------------------------------------------------


def crit_01_ou_oracle():
    m = linear_test_model(N=8)
    mean, var = invariant_mode_stats(m, np.eye(8)[0], T=200, dt=1e-3, replicas=20, seed=0)
    k = np.arange(1, 9)
    z_mean = (mean.estimate[0] - 1 / 3) / mean.se[0]
    z_var = (var.estimate - 1 / (2 * k ** 2 + 1)) / var.se
    ok = abs(z_mean) <= 3 and bool(np.all(np.abs(z_var) <= 3))
    return ok, f"mode-1 mean {mean.estimate[0]:.5f} (z={z_mean:+.2f}); max |z| var {np.max(np.abs(z_var)):.2f}"


def crit_02_ergodic_rate():
    m = linear_test_model(N=8)
    Ts = [10, 40, 160, 640]
    errs = []
    for i, T in enumerate(Ts):
        st = ergodic_average(m, np.zeros(8), lambda v: v[:, 0] ** 2, T=T, dt=2e-3, replicas=100,
                             seed=0, key=(STUDY["ergodic"], FAST, i))
        errs.append(float(np.mean(np.abs(st.values - 1 / 3))))
    slope = float(np.polyfit(np.log(Ts), np.log(errs), 1)[0])
    return -0.65 <= slope <= -0.35, f"log-log slope {slope:.3f}; errors {[round(e, 4) for e in errs]}"


def crit_03_mixing():
    m = linear_test_model(N=N)
    fit = estimate_mixing(m, np.zeros(N), E1, -E1, T=3.0, dt=1e-3, replicas=4, seed=0)
    return abs(fit.rate - 1.5) <= 0.015, f"rate {fit.rate:.5f}, R^2 {fit.r_squared:.6f}"


def crit_04_m0_gate():
    out = []
    for lb2 in (0.5, 0.8):
        m = linear_test_model(N=N, b2_fast=-lb2)
        out.append(check_condition_m0(m, check_hypothesis_h1(m.slow, m.fast)))
    ok = (abs(out[0].m0 - 0.25) <= 1e-12 and out[0].passed
          and abs(out[1].m0 - 0.64) <= 1e-12 and not out[1].passed)
    return ok, f"M0 = {out[0].m0!r} ({out[0].passed}), {out[1].m0!r} ({out[1].passed})"


def crit_05_bbar_pipeline():
    m = linear_test_model(N=N)
    st = estimate_bbar(m, E1, T=100, dt=1e-2, replicas=10, seed=0)
    z = (st.estimate[0] - 1 / 3) / st.se[0]
    bbar, _, _ = fit_affine_bbar(m, np.zeros(N), 1.0, T=50, dt=1e-2, replicas=10, seed=1)
    est = estimated_averaged(m, E1[None], T=50, dt=1e-2, replicas=10, seed=1, bbar=bbar)
    exact = analytic_averaged(m)
    # independent slow noise for the two solves so their standard errors combine
    key = STUDY["averaged"]
    a = simulate_averaged(exact, E1, 1.0, 1e-3, seed=0, replicas=200, record_every=1000,
                          slow_key=(key, SLOW, 0)).u[-1, :, 0]
    b = simulate_averaged(est, E1, 1.0, 1e-3, seed=0, replicas=200, record_every=1000,
                          slow_key=(key, SLOW, 1)).u[-1, :, 0]
    se = math.hypot(a.std(ddof=1) / math.sqrt(a.size), b.std(ddof=1) / math.sqrt(b.size))
    diff = abs(a.mean() - b.mean())
    ok = abs(z) <= 3 and diff <= 3 * se
    return ok, (f"Bbar_1(e1) {st.estimate[0]:.5f} (z={z:+.2f}); E<u(1),e1> analytic {a.mean():.4f} "
                f"vs estimated {b.mean():.4f}, |diff|/SE {diff / se:.2f}")


def crit_06_averaging():
    m = linear_test_model(N=N)
    r = convergence_study(m, E1, None, EPS, T=1.0, replicas=200, seed=0, jobs=3)
    e = r.errors
    ok = strictly_decreasing(e) and e[-1] < 0.5 * e[0]
    return ok, "E sup|u_eps - u_bar| = " + ", ".join(f"{v:.4f}" for v in e)


def crit_07_remainder():
    m = linear_test_model(N=N)
    t = remainder_study(m, E1, None, EPS, T=1.0, replicas=200, seed=0, jobs=3)
    ctrl = linear_test_model(N=N, b1_slow=1.0, b1_fast=0.0)
    c = remainder_study(ctrl, E1, None, EPS, T=1.0, replicas=20, seed=0, jobs=3)
    est = t.column("estimate")
    zero = max(c.column("estimate"))
    ok = strictly_decreasing(est) and zero < 1e-12
    return ok, "E sup|R| = " + ", ".join(f"{v:.4f}" for v in est) + f"; control {zero:.1e}"


def crit_08_gap():
    m = linear_test_model(N=N)
    avg = analytic_averaged(m)
    phi = quadratic_mode_fn(N)
    lav = float(eval_L_av(phi, avg, E1)[0])
    t = gap_study(m, avg, phi, EPS, 0.1, 0.3, E1, outer=32, inner=32, seed=0, jobs=3)
    ctrl = linear_test_model(N=N, b1_slow=1.0, b1_fast=0.0)
    c = gap_study(ctrl, analytic_averaged(ctrl), phi, EPS, 0.1, 0.3, E1, outer=10, inner=10,
                  seed=0, jobs=3)
    est = t.column("estimate")
    zero = max(c.column("estimate"))
    ok = strictly_decreasing(est) and zero < 1e-12 and abs(lav + 1 / 3) <= 1e-9
    return ok, ("gap = " + ", ".join(f"{v:.5f}" for v in est)
                + f"; control {zero:.1e}; L_av phi(e1) = {lav:.12f}")


def crit_09_bounds():
    m = linear_test_model(N=N)
    reps = moment_bound_study(m, E1, None, EPS, (2, 4), T=1.0, replicas=200, seed=0, jobs=3)
    hold = holder_increment_study(m, E1, None, EPS, [0.01, 0.02, 0.05, 0.1], T=1.0,
                                  replicas=200, seed=0, jobs=3)
    ratios = {f"{r.quantity}_p{r.p}": round(r.constants["ratio"], 3) for r in reps}
    ok = all(r.passed for r in reps) and hold.passed
    return ok, (f"moment ratios {ratios}; 2*beta_hat {[round(s, 3) for s in hold.values]} "
                f"(spread {hold.constants['spread']:.3f})")


def crit_10_weak():
    m = linear_test_model(N=N, g1_const=2.0, g1_sin_fast=1.0)
    anchors = np.outer(np.linspace(-4.0, 4.0, 17), E1)
    avg = estimated_averaged(m, anchors, T=50, dt=1e-2, replicas=10, seed=0, bbar=m.bbar_exact)
    y = 50.0 * E1   # fast transient large enough to resolve the eps trend above MC noise
    r = weak_convergence_probe(m, avg, E1, y, EPS, T=1.0, replicas=1000, seed=0, jobs=3)
    series = {"ks": r.series("ks")}
    for f in r.functionals:
        series[f] = r.series(f"diff_{f}")
    ok = all(strictly_decreasing(v) for v in series.values())
    return ok, "; ".join(f"{k} " + ", ".join(f"{v:.4f}" for v in vals) for k, vals in series.items())


_DET_CONFIGS = {
    "simulate": {"study_params": {"replicas": 2}, "integrator": {"T": 0.2}},
    "fast": {"study_params": {"replicas": 2}, "integrator": {"T": 2.0}},
    "estimate": {"study_params": {"erg_T": 5.0, "erg_replicas": 3}},
    "remainder": {"study_params": {"eps_list": [0.1, 0.02], "replicas": 8}},
    "gap": {"study_params": {"eps_list": [0.1, 0.02], "outer": 10, "inner": 10}},
    "converge": {"study_params": {"eps_list": [0.1, 0.02], "replicas": 8}},
    "moments": {"study_params": {"eps_list": [0.1, 0.02], "replicas": 8}},
    "holder": {"study_params": {"eps_list": [0.1, 0.02], "replicas": 8}},
    "weak": {"model_params": {"g1_const": 2.0, "g1_sin_fast": 1.0},
             "study_params": {"eps_list": [0.1, 0.02], "replicas": 50, "erg_T": 5.0,
                              "erg_replicas": 3, "anchors": [-1.0, 0.0, 1.0]}},
    "check": {},
}


def crit_11_determinism(tmp: Path):
    bad = []
    for sub, extra in _DET_CONFIGS.items():
        cfg = {"model": "linear_test_model", "study": sub, "basis": {"N": 8}, **extra}
        path = tmp / f"{sub}.json"
        path.write_text(json.dumps(cfg))
        digests = []
        for k in range(2):
            out = tmp / f"{sub}-{k}"
            code = cli_main([sub, "--config", str(path), "--seed", "11", "--out", str(out),
                             "--jobs", "2"])
            if code == 2:
                bad.append(f"{sub}: exit 2")
            files = sorted(out.glob("*.csv"))
            digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files})
        if not digests[0] or digests[0] != digests[1]:
            bad.append(sub)
    return not bad, f"{len(_DET_CONFIGS)} studies re-run; mismatches: {bad or 'none'}"


LIMITS = {1: 120, 2: 180, 3: 30, 4: 1, 5: 180, 6: 600, 7: 300, 8: None, 9: 300, 10: 600,
          11: None}

CRITERIA = {
    1: ("OU oracle", crit_01_ou_oracle),
    2: ("ergodic rate", crit_02_ergodic_rate),
    3: ("mixing rate", crit_03_mixing),
    4: ("M0 gate", crit_04_m0_gate),
    5: ("Bbar estimator pipeline", crit_05_bbar_pipeline),
    6: ("averaging limit", crit_06_averaging),
    7: ("remainder", crit_07_remainder),
    8: ("Kolmogorov gap", crit_08_gap),
    9: ("a priori bounds", crit_09_bounds),
    10: ("weak probe", crit_10_weak),
    11: ("determinism", None),
}


def run_criterion(n, tmp=None):
    name, fn = CRITERIA[n]
    if n == 11:
        ok, detail, secs = _timed(lambda: crit_11_determinism(tmp))
    else:
        ok, detail, secs = _timed(fn)
    limit = LIMITS[n]
    if limit is not None and secs > limit:
        ok = False
        detail += f"; runtime {secs:.1f}s exceeds {limit}s"
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} ({name}): {detail} [{secs:.1f}s]"
    return ok, line


@pytest.mark.slow
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_acceptance(n, tmp_path, capsys):
    ok, line = run_criterion(n, tmp_path)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":  # pragma: no cover
    import sys
    import tempfile

    chosen = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = []
    with tempfile.TemporaryDirectory() as d:
        for n in chosen:
            ok, line = run_criterion(n, Path(d))
            print(line, flush=True)
            results.append(ok)
    sys.exit(0 if all(results) else 1)
