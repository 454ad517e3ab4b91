"""Command-line entry point: ``twoscale <subcommand> --config PATH [...]``.

Exit codes: 0 pass, 1 a study criterion failed, 2 usage/config error or a
model that fails the hypothesis gate.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .config import STUDIES, RunConfig, apply_override, config_from_dict, emit_config
from .errors import ConfigError, HypothesisGateError, InvalidArgument, StabilityViolation
from .ergodics import analytic_averaged, estimate_bbar, estimated_averaged
from .experiments import (
    StudyTable,
    convergence_study,
    default_jobs,
    gate_model,
    gap_study,
    holder_increment_study,
    moment_bound_study,
    remainder_study,
    strictly_decreasing,
    weak_convergence_probe,
    write_run_dir,
)
from .integrator import simulate_coupled, simulate_frozen_fast
from .khasminskii import quadratic_mode_fn
from .model import check_model, get_model
from .streams import FAST, SLOW, STUDY

log = logging.getLogger("twoscale")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _vector(spec, N):
    if spec is None:
        return np.zeros(N)
    if isinstance(spec, dict):
        v = np.zeros(N)
        v[spec["mode"] - 1] = spec["amplitude"]
        return v
    return np.asarray(spec, dtype=float)


def _anchors(cfg: RunConfig, N):
    amps = cfg["study_params"]["anchors"]
    amps = np.linspace(-4.0, 4.0, 17) if amps is None else np.asarray(amps, dtype=float)
    return np.outer(amps, np.eye(N)[0])


def _averaged(cfg: RunConfig, model, x):
    sp = cfg["study_params"]
    if sp["averaged"] == "analytic" and not model.g1_depends_on_fast:
        return analytic_averaged(model)
    kw = dict(T=sp["erg_T"], dt=sp["erg_dt"], replicas=sp["erg_replicas"], seed=cfg.seed)
    if model.g1_depends_on_fast:
        anchors = _anchors(cfg, model.N)
        bbar = model.bbar_exact if sp["averaged"] == "analytic" else None
        return estimated_averaged(model, anchors, bbar=bbar, **kw)
    return estimated_averaged(model, np.atleast_2d(x), x0=x, **kw)


def _table(rows, columns):
    return StudyTable(list(columns), rows)


# -- subcommand runners: each returns (tables, verdict) --------------------


def run_check(cfg, model, jobs):
    h1, h2, m0 = check_model(model, cfg.beta, cfg.rho, cfg["hypothesis"]["sample_count"],
                             cfg.seed)
    report = {"h1": h1.to_dict(), "h2": h2.to_dict(), "m0": m0.to_dict()}
    passed = bool(h1.passed and h2.passed and m0.passed)
    rows = [{"check": "h1", "passed": bool(h1.passed), "value": math.nan},
            {"check": "h2", "passed": bool(h2.passed), "value": math.nan},
            {"check": "m0", "passed": bool(m0.passed), "value": m0.m0}]
    print(json.dumps({"passed": passed, "m0": m0.m0, "drift_term": m0.drift_term,
                      "noise_term": m0.noise_term, "h1": h1.passed, "h2": h2.passed},
                     sort_keys=True))
    return {"check": _table(rows, ["check", "passed", "value"])}, {"passed": passed,
                                                                   "report": report}


def run_simulate(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    eps = sp["eps"]
    dt = cfg.dt_rule(eps)
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    tr = simulate_coupled(model, x, y, eps, it["T"], dt, cfg.seed, sp["replicas"],
                          record_every=sp["record_every"],
                          slow_key=(STUDY["simulate"], SLOW), fast_key=(STUDY["simulate"], FAST))
    return {"trajectory": tr}, {"passed": True, "eps": eps, "dt": dt, "steps": len(tr.times) - 1}


def run_fast(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    dt = cfg.dt_rule(1.0)
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    tr = simulate_frozen_fast(model, x, y, it["T"], dt, cfg.seed, sp["replicas"],
                              record_every=sp["record_every"], fast_key=(STUDY["fast"], FAST))
    return {"fast": tr}, {"passed": True, "dt": dt}


def run_estimate(cfg, model, jobs):
    sp = cfg["study_params"]
    x = _vector(sp["x"], model.N)
    st = estimate_bbar(model, x, sp["erg_T"], None, sp["erg_dt"], sp["erg_replicas"], cfg.seed)
    exact = model.bbar_exact(x[None, :])[0] if model.bbar_exact is not None else None
    rows = []
    ok = True
    for k in range(model.N):
        row = {"mode": k + 1, "estimate": float(st.estimate[k]), "se": float(st.se[k]),
               "exact": math.nan if exact is None else float(exact[k])}
        rows.append(row)
    if exact is not None:
        z = np.abs(st.estimate - exact) / np.maximum(st.se, 1e-300)
        ok = bool(z[0] <= 3.0)
    return ({"estimate": _table(rows, ["mode", "estimate", "se", "exact"])},
            {"passed": ok, "T": st.T, "T_b": st.T_b, "replicas": st.replicas})


def _decreasing_verdict(table: StudyTable):
    vals = table.column("estimate")
    return {"passed": strictly_decreasing(vals) if len(vals) > 1 else True, "estimates": vals}


def run_remainder(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    h = _vector(sp["h"], model.N)
    avg = _averaged(cfg, model, x)
    t = remainder_study(model, x, y, sp["eps_list"], it["T"], h, sp["replicas"], cfg.seed,
                        cfg.dt_rule, avg.bbar, sp["kappa1"], sp["kappa2"], jobs=jobs)
    return {"remainder": t}, _decreasing_verdict(t)


def run_gap(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    avg = _averaged(cfg, model, x)
    phi = quadratic_mode_fn(model.N)
    t = gap_study(model, avg, phi, sp["eps_list"], sp["t1"], sp["t2"], x, y, sp["outer"],
                  sp["inner"], cfg.seed, cfg.dt_rule, sp["kappa1"], sp["kappa2"], it["T"],
                  jobs=jobs)
    return {"gap": t}, _decreasing_verdict(t)


def run_converge(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    if model.g1_depends_on_fast:
        raise InvalidArgument("converge needs g1 independent of the fast variable; use 'weak'")
    # gate before any (possibly expensive) coefficient estimation
    gate_model(model, cfg.beta, cfg.rho, cfg["hypothesis"]["sample_count"])
    avg = _averaged(cfg, model, x)
    res = convergence_study(model, x, y, sp["eps_list"], it["T"], cfg.dt_rule, sp["replicas"],
                            cfg.seed, avg, gate=False, jobs=jobs)
    errs = res.errors
    passed = res.decreasing() if len(errs) > 1 else True
    verdict = {"passed": passed, "errors": errs, "coupling": res.coupling,
               "provenance": res.provenance, "dt": res.dt}
    if len(errs) > 1 and errs[0] > 0:
        verdict["last_over_first"] = errs[-1] / errs[0]
    return {"converge": res.table()}, verdict, res.timing()


def run_moments(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    reps = moment_bound_study(model, x, y, sp["eps_list"], sp["p_list"], it["T"], sp["replicas"],
                              cfg.seed, cfg.dt_rule, jobs=jobs)
    rows = []
    for r in reps:
        for e, v in zip(r.eps, r.values):
            rows.append({"quantity": r.quantity, "p": r.p, "eps": e, "value": v})
    verdict = {"passed": all(r.passed for r in reps), "reports": [r.to_dict() for r in reps]}
    return {"moments": _table(rows, ["quantity", "p", "eps", "value"])}, verdict


def run_holder(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    r = holder_increment_study(model, x, y, sp["eps_list"], sp["h_list"], it["T"],
                               sp["replicas"], cfg.seed, cfg.dt_rule, jobs=jobs)
    rows = [{"eps": e, "two_beta_hat": s} for e, s in zip(r.eps, r.values)]
    return {"holder": _table(rows, ["eps", "two_beta_hat"])}, {"passed": r.passed,
                                                                "report": r.to_dict()}


def run_weak(cfg, model, jobs):
    sp, it = cfg["study_params"], cfg["integrator"]
    x, y = _vector(sp["x"], model.N), _vector(sp["y"], model.N)
    gate_model(model, cfg.beta, cfg.rho, cfg["hypothesis"]["sample_count"])
    avg = _averaged(cfg, model, x)
    res = weak_convergence_probe(model, avg, x, y, sp["eps_list"], it["T"], None, sp["replicas"],
                                 cfg.seed, cfg.dt_rule, gate=False, jobs=jobs, clip=sp["clip"])
    series = {"ks": res.series("ks")}
    for f in res.functionals:
        series[f"diff_{f}"] = res.series(f"diff_{f}")
    passed = all(strictly_decreasing(v) for v in series.values()) if len(res.rows) > 1 else True
    return {"weak": res.table()}, {"passed": passed, **series}


RUNNERS = {
    "check": run_check,
    "simulate": run_simulate,
    "fast": run_fast,
    "estimate": run_estimate,
    "remainder": run_remainder,
    "gap": run_gap,
    "converge": run_converge,
    "moments": run_moments,
    "holder": run_holder,
    "weak": run_weak,
}


# -- plumbing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twoscale",
                                description="Slow-fast stochastic reaction-diffusion averaging "
                                            "simulator and statistical checks.")
    p.add_argument("subcommand", choices=STUDIES)
    p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads (default: $TWOSCALE_JOBS or logical cores)")
    p.add_argument("--out", default=None, metavar="DIR",
                   help="run directory (default: <config out>/<subcommand>)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path assignment into the config; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(path, subcommand, seed=None, overrides=()) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for ov in overrides:
        raw = apply_override(raw, ov)
    if seed is not None:
        raw["seed"] = seed
    if raw.get("study") not in (None, subcommand):
        log.info("config study %r replaced by subcommand %r", raw.get("study"), subcommand)
    raw["study"] = subcommand
    return config_from_dict(raw)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.subcommand, args.seed, args.override)
        model = get_model(cfg["model"], **cfg.model_kwargs())
        out = Path(args.out) if args.out else Path(cfg["out"]) / args.subcommand
        t0 = time.perf_counter()
        result = RUNNERS[args.subcommand](cfg, model, jobs)
    except HypothesisGateError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print(json.dumps(exc.report, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InvalidArgument, StabilityViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    tables, verdict = result[0], result[1]
    timing = {"total_seconds": time.perf_counter() - t0}
    if len(result) > 2:
        timing["shards"] = result[2]
    write_run_dir(out, emit_config(cfg), {k: t for k, t in tables.items()
                                          if isinstance(t, StudyTable)}, verdict, timing)
    for name, t in tables.items():
        if not isinstance(t, StudyTable):  # trajectories
            t.to_csv(out / f"{name}.csv")
    print(f"{args.subcommand}: {'PASS' if verdict['passed'] else 'FAIL'} -> {out}")
    return EXIT_PASS if verdict["passed"] else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
