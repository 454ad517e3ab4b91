"""Run configuration: JSON schema, defaults, validation and canonical form.

A config is a JSON object; unknown keys are rejected with the dotted path
of the offending key.  ``parse_config`` fills defaults so that
``parse(emit(parse(c))) == parse(c)``.
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, InvalidArgument
from .model import CATALOG

__all__ = [
    "RunConfig",
    "DtRule",
    "STUDIES",
    "parse_config",
    "config_from_dict",
    "emit_config",
    "apply_override",
]

STUDIES = ("check", "simulate", "fast", "estimate", "remainder", "gap", "converge",
           "moments", "holder", "weak")

_RULE = re.compile(r"^\s*eps\s*/\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*$")


@dataclass(frozen=True)
class DtRule:
    """Time step as a function of eps: either ``eps/K`` or a fixed number."""

    text: str

    def __post_init__(self):
        self.divisor()  # validate

    def divisor(self):
        m = _RULE.match(self.text)
        if m:
            k = float(m.group(1))
            if k <= 0:
                raise InvalidArgument(f"dt rule divisor must be positive: {self.text!r}")
            return k
        try:
            val = float(self.text)
        except ValueError:
            raise InvalidArgument(f"dt rule must be 'eps/K' or a number, got {self.text!r}") from None
        if not val > 0 or not math.isfinite(val):
            raise InvalidArgument(f"fixed dt must be positive, got {self.text!r}")
        return None

    def __call__(self, eps: float) -> float:
        k = self.divisor()
        return eps / k if k is not None else float(self.text)

    @classmethod
    def coerce(cls, rule) -> "DtRule":
        if isinstance(rule, DtRule):
            return rule
        if isinstance(rule, bool):
            raise InvalidArgument("dt rule cannot be a boolean")
        if isinstance(rule, (int, float)):
            return cls(repr(float(rule)))
        return cls(str(rule))


# Schema: key -> (default, validator).  Nested dicts are sections.
_INF = "inf"

_DEFAULTS = {
    "model": None,
    "model_params": {},
    "basis": {"N": 32, "L": math.pi, "shift_slow": 0.0, "shift_fast": 0.0, "M": None},
    "hypothesis": {"beta": [0.75, 0.75], "rho": [_INF, _INF], "sample_count": 1000},
    "integrator": {"T": 1.0, "dt_rule": "eps/10"},
    "study": None,
    "study_params": {
        "eps": 0.1,
        "eps_list": [0.1, 0.02, 0.004],
        "replicas": 200,
        "x": {"mode": 1, "amplitude": 1.0},
        "y": None,
        "h": {"mode": 1, "amplitude": 1.0},
        "p_list": [2, 4],
        "h_list": [0.01, 0.02, 0.05, 0.1],
        "t1": 0.1,
        "t2": 0.3,
        "outer": 32,
        "inner": 32,
        "kappa1": 0.5,
        "kappa2": 1.0,
        "averaged": "analytic",
        "erg_T": 50.0,
        "erg_dt": 0.01,
        "erg_replicas": 10,
        "anchors": None,
        "record_every": 1,
        "clip": 10.0,
    },
    "seed": 0,
    "out": "runs",
}


def _type_error(path, expected, value):
    return ConfigError(path, f"expected {expected}, got {type(value).__name__} {value!r}")


def _number(path, v, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _type_error(path, "number", v)
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be nonnegative, got {v}")
    return v


def _integer(path, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise _type_error(path, "integer", v)
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {v}")
    return int(v)


def _number_list(path, v, positive=False):
    if not isinstance(v, list) or not v:
        raise _type_error(path, "non-empty list", v)
    return [_number(f"{path}[{i}]", x, positive=positive) for i, x in enumerate(v)]


def _rho(path, v):
    if v == _INF:
        return _INF
    return _number(path, v, positive=True)


def _vector_spec(path, v, N):
    """None | list of N numbers | {"mode": k, "amplitude": a}."""
    if v is None:
        return None
    if isinstance(v, list):
        vals = [_number(f"{path}[{i}]", x) for i, x in enumerate(v)]
        if len(vals) != N:
            raise ConfigError(path, f"expected {N} coefficients, got {len(vals)}")
        return vals
    if isinstance(v, dict):
        extra = set(v) - {"mode", "amplitude"}
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")
        mode = _integer(f"{path}.mode", v.get("mode", 1), minimum=1)
        if mode > N:
            raise ConfigError(f"{path}.mode", f"mode {mode} exceeds N = {N}")
        amp = _number(f"{path}.amplitude", v.get("amplitude", 1.0))
        return {"mode": mode, "amplitude": amp}
    raise _type_error(path, "null, list or {mode, amplitude}", v)


def _merge(path, user, defaults):
    if not isinstance(user, dict):
        raise _type_error(path or "<root>", "object", user)
    out = {}
    for key in user:
        if key not in defaults:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    for key, dval in defaults.items():
        sub = f"{path}.{key}" if path else key
        if key in user:
            uval = user[key]
            if isinstance(dval, dict) and key != "model_params":
                out[key] = _merge(sub, uval, dval)
            else:
                out[key] = copy.deepcopy(uval)
        else:
            out[key] = copy.deepcopy(dval)
    return out


def _validate(c: dict) -> dict:
    if c["model"] is None:
        raise ConfigError("model", "required")
    if c["model"] not in CATALOG:
        raise ConfigError("model", f"unknown model {c['model']!r}; catalog: {sorted(CATALOG)}")
    if not isinstance(c["model_params"], dict):
        raise _type_error("model_params", "object", c["model_params"])
    for k, v in c["model_params"].items():
        if k in ("N", "L", "shift_slow", "shift_fast", "M"):
            raise ConfigError(f"model_params.{k}", "basis parameters belong in 'basis'")
        c["model_params"][k] = _number(f"model_params.{k}", v)
    if c["study"] is None:
        raise ConfigError("study", "required")
    if c["study"] not in STUDIES:
        raise ConfigError("study", f"unknown study {c['study']!r}; one of {list(STUDIES)}")

    b = c["basis"]
    b["N"] = _integer("basis.N", b["N"], minimum=1)
    b["L"] = _number("basis.L", b["L"], positive=True)
    b["shift_slow"] = _number("basis.shift_slow", b["shift_slow"], nonneg=True)
    b["shift_fast"] = _number("basis.shift_fast", b["shift_fast"], nonneg=True)
    if b["M"] is not None:
        b["M"] = _integer("basis.M", b["M"], minimum=b["N"])

    h = c["hypothesis"]
    for key in ("beta", "rho"):
        if not isinstance(h[key], list) or len(h[key]) != 2:
            raise _type_error(f"hypothesis.{key}", "list of two entries", h[key])
    h["beta"] = [_number(f"hypothesis.beta[{i}]", x, positive=True) for i, x in enumerate(h["beta"])]
    h["rho"] = [_rho(f"hypothesis.rho[{i}]", x) for i, x in enumerate(h["rho"])]
    for i, r in enumerate(h["rho"]):
        if r != _INF and r <= 2:
            raise ConfigError(f"hypothesis.rho[{i}]", "must exceed 2")
    h["sample_count"] = _integer("hypothesis.sample_count", h["sample_count"], minimum=100)

    it = c["integrator"]
    it["T"] = _number("integrator.T", it["T"], positive=True)
    rule = it["dt_rule"]
    if isinstance(rule, bool) or not isinstance(rule, (str, int, float)):
        raise _type_error("integrator.dt_rule", "'eps/K' or number", rule)
    try:
        it["dt_rule"] = DtRule.coerce(rule).text
    except InvalidArgument as exc:
        raise ConfigError("integrator.dt_rule", str(exc)) from None

    s = c["study_params"]
    N = b["N"]
    s["eps"] = _number("study_params.eps", s["eps"], positive=True)
    if s["eps"] > 1:
        raise ConfigError("study_params.eps", "must lie in (0, 1]")
    s["eps_list"] = _number_list("study_params.eps_list", s["eps_list"], positive=True)
    if any(e > 1 for e in s["eps_list"]):
        raise ConfigError("study_params.eps_list", "entries must lie in (0, 1]")
    if any(a <= b_ for a, b_ in zip(s["eps_list"], s["eps_list"][1:])):
        raise ConfigError("study_params.eps_list", "must be strictly decreasing")
    s["replicas"] = _integer("study_params.replicas", s["replicas"], minimum=1)
    for key in ("x", "y", "h"):
        s[key] = _vector_spec(f"study_params.{key}", s[key], N)
    s["p_list"] = [_integer(f"study_params.p_list[{i}]", p, minimum=1)
                   for i, p in enumerate(s["p_list"] if isinstance(s["p_list"], list)
                                         else _number_list("study_params.p_list", s["p_list"]))]
    s["h_list"] = _number_list("study_params.h_list", s["h_list"], positive=True)
    s["t1"] = _number("study_params.t1", s["t1"], nonneg=True)
    s["t2"] = _number("study_params.t2", s["t2"], nonneg=True)
    if s["t2"] < s["t1"]:
        raise ConfigError("study_params.t2", "must be >= t1")
    s["outer"] = _integer("study_params.outer", s["outer"], minimum=10)
    s["inner"] = _integer("study_params.inner", s["inner"], minimum=10)
    s["kappa1"] = _number("study_params.kappa1", s["kappa1"], positive=True)
    s["kappa2"] = _number("study_params.kappa2", s["kappa2"], positive=True)
    if s["averaged"] not in ("analytic", "estimated"):
        raise ConfigError("study_params.averaged", "must be 'analytic' or 'estimated'")
    s["erg_T"] = _number("study_params.erg_T", s["erg_T"], positive=True)
    s["erg_dt"] = _number("study_params.erg_dt", s["erg_dt"], positive=True)
    s["erg_replicas"] = _integer("study_params.erg_replicas", s["erg_replicas"], minimum=2)
    if s["anchors"] is not None:
        s["anchors"] = _number_list("study_params.anchors", s["anchors"])
    s["record_every"] = _integer("study_params.record_every", s["record_every"], minimum=1)
    s["clip"] = _number("study_params.clip", s["clip"], positive=True)

    c["seed"] = _integer("seed", c["seed"], minimum=0)
    if not isinstance(c["out"], str) or not c["out"]:
        raise _type_error("out", "non-empty string", c["out"])
    return c


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` is the canonical JSON-ready dict."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def study(self) -> str:
        return self.data["study"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def dt_rule(self) -> DtRule:
        return DtRule(self.data["integrator"]["dt_rule"])

    @property
    def beta(self):
        return tuple(self.data["hypothesis"]["beta"])

    @property
    def rho(self):
        return tuple(math.inf if r == _INF else r for r in self.data["hypothesis"]["rho"])

    def model_kwargs(self) -> dict:
        b = self.data["basis"]
        kw = dict(N=b["N"], L=b["L"], shift_slow=b["shift_slow"], shift_fast=b["shift_fast"],
                  M=b["M"])
        kw.update(self.data["model_params"])
        return kw

    def __eq__(self, other):
        return isinstance(other, RunConfig) and emit_config(self) == emit_config(other)

    def __hash__(self):
        return hash(emit_config(self))


def config_from_dict(d: dict) -> RunConfig:
    return RunConfig(_validate(_merge("", d, _DEFAULTS)))


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def emit_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def apply_override(d: dict, assignment: str) -> dict:
    """Apply ``a.b.c=VALUE`` to a raw config dict; VALUE is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError("<override>", f"expected KEY=VALUE, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError("<override>", "empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d = copy.deepcopy(d)
    node = d
    for i, p in enumerate(parts[:-1]):
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(parts[: i + 1]), "is not an object")
        node = nxt
    node[parts[-1]] = value
    return d
