"""Strict YAML run configuration.

Sections: ``domain``, ``operator``, ``measure``, ``numerics``, ``task`` and a
top-level ``seed``.  Physics-bearing sections (domain, operator, measure)
have no defaults; numerics and task entries default to the values in
``NUMERICS_DEFAULTS`` and ``TASK_DEFAULTS``.  Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import yaml

from .domain import DomainKind, DomainSpec
from .errors import ConfigError
from .expressions import custom_operator
from .measures import BoundaryMeasureSpec, measure_from_config
from .operators import BUILTIN_OPERATORS, CoefficientField, builtin_operator

SECTIONS = ("domain", "operator", "measure", "numerics", "task", "seed")

NUMERICS_DEFAULTS = {
    "h": 0.05,
    "n": None,  # fixed truncation; None means run the exhaustion
    "tau": 0.01,
    "dt": 0.01,
    "dt_invariant": 0.01,  # Monte Carlo step for long occupation runs
    "bin_h": 0.05,  # histogram spacing for occupation comparisons
    "tol": 1e-8,
    "max_n": 64,
    "window_radius": None,  # None means n0 + 1
    "particles": 10000,
    "tv_tol": 1e-3,
    "abel_kmax": 14,
    "jobs": 1,
}

TASK_DEFAULTS = {
    "lambda": 1.0,
    "t": 1.0,
    "times": [0.5, 1.0, 2.0],
    "initial": "constant",  # constant | indicator | expression
    "value": 1.0,
    "box": None,
    "expression": None,
    "x0": None,
    "x1": None,  # second start point for the uniqueness comparison
    "burn_in": 2.0,
    "horizon": 8.0,
    "segments": 4,
    "mode": "all",  # invariant: abel | stationary | evolve-compare | all
}

_DOMAIN_KEYS = {"kind", "radius", "dim"}
_OPERATOR_KEYS = {"name", "alpha", "beta", "a", "b", "eta", "params"}
_POSITIVE = {"h", "tau", "dt", "dt_invariant", "bin_h", "tol", "tv_tol", "lambda", "t", "horizon", "window_radius"}


def _check_keys(section: str, d: dict, allowed):
    if not isinstance(d, dict):
        raise ConfigError("expected a mapping", section)
    for k in d:
        if k not in allowed:
            raise ConfigError("unknown key", f"{section}.{k}")


def _validate_measure(m: dict):
    if not isinstance(m, dict) or len(m) != 1 or next(iter(m)) not in ("atoms", "density"):
        raise ConfigError("expected exactly one of atoms or density", "measure")
    if "atoms" in m:
        if not isinstance(m["atoms"], list) or not m["atoms"]:
            raise ConfigError("atoms must be a nonempty list", "measure.atoms")
        for i, a in enumerate(m["atoms"]):
            _check_keys(f"measure.atoms[{i}]", a, {"weight", "point", "scale"})
            if "weight" not in a:
                raise ConfigError("missing", f"measure.atoms[{i}].weight")
    else:
        d = m["density"]
        _check_keys("measure.density", d, {"name", "radius", "center", "scale", "k"})
        if "name" not in d:
            raise ConfigError("missing", "measure.density.name")


@dataclass(frozen=True)
class RunConfig:
    domain: dict
    operator: dict
    measure: dict
    numerics: dict
    task: dict
    seed: int

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        for k in raw:
            if k not in SECTIONS:
                raise ConfigError("unknown section", k)
        for k in ("domain", "operator", "measure"):
            if k not in raw:
                raise ConfigError("required section missing", k)
        dom = copy.deepcopy(raw["domain"])
        _check_keys("domain", dom, _DOMAIN_KEYS)
        for k in ("kind", "radius"):
            if k not in dom:
                raise ConfigError("missing", f"domain.{k}")
        try:
            DomainKind(dom["kind"])
        except ValueError as exc:
            raise ConfigError(f"unknown kind {dom['kind']!r}", "domain.kind") from exc
        dom.setdefault("dim", 1)
        opr = copy.deepcopy(raw["operator"])
        _check_keys("operator", opr, _OPERATOR_KEYS)
        if opr.get("name") not in (*BUILTIN_OPERATORS, "custom"):
            raise ConfigError(f"unknown operator {opr.get('name')!r}", "operator.name")
        meas = copy.deepcopy(raw["measure"])
        _validate_measure(meas)
        num = copy.deepcopy(NUMERICS_DEFAULTS)
        given = raw.get("numerics") or {}
        _check_keys("numerics", given, NUMERICS_DEFAULTS)
        num.update(given)
        task = copy.deepcopy(TASK_DEFAULTS)
        given = raw.get("task") or {}
        _check_keys("task", given, TASK_DEFAULTS)
        task.update(given)
        for sec, d in (("numerics", num), ("task", task)):
            for k in _POSITIVE & set(d):
                v = d[k]
                if v is None:
                    continue
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                    raise ConfigError(f"must be a positive number, got {v!r}", f"{sec}.{k}")
        for k in ("max_n", "particles", "abel_kmax", "jobs"):
            if not isinstance(num[k], int) or num[k] < 1:
                raise ConfigError("must be a positive integer", f"numerics.{k}")
        if num["n"] is not None and (not isinstance(num["n"], int) or num["n"] < 1):
            raise ConfigError("must be a positive integer", "numerics.n")
        if task["initial"] not in ("constant", "indicator", "expression"):
            raise ConfigError(f"unknown initial data {task['initial']!r}", "task.initial")
        if task["mode"] not in ("abel", "stationary", "evolve-compare", "all"):
            raise ConfigError(f"unknown mode {task['mode']!r}", "task.mode")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("must be a nonnegative integer", "seed")
        cfg = cls(dom, opr, meas, num, task, seed)
        # build once so physics errors surface as config errors
        cfg.build_domain()
        cfg.build_operator()
        cfg.build_measure()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(
            {"domain": self.domain, "operator": self.operator, "measure": self.measure,
             "numerics": self.numerics, "task": self.task, "seed": self.seed}
        )

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def from_yaml(cls, text: str) -> RunConfig:
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> RunConfig:
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def with_seed(self, seed: int | None) -> RunConfig:
        if seed is None:
            return self
        d = self.to_dict()
        d["seed"] = seed
        return RunConfig.from_dict(d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def dim(self) -> int:
        return int(self.domain["dim"])

    def build_domain(self) -> DomainSpec:
        try:
            return DomainSpec(DomainKind(self.domain["kind"]), float(self.domain["radius"]), int(self.domain["dim"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "domain") from exc

    def build_operator(self) -> CoefficientField:
        o = self.operator
        try:
            if o["name"] == "custom":
                return custom_operator(o, self.dim, o.get("params"))
            return builtin_operator(o["name"], self.dim, o.get("alpha"), o.get("beta"))
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "operator") from exc

    def build_measure(self) -> BoundaryMeasureSpec:
        try:
            spec = measure_from_config(self.measure, self.dim)
            spec.validate(self.build_domain())
            return spec
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc), "measure") from exc


PRESETS = ("ou1d", "ou2d", "bm1d")


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}", "preset")
    text = resources.files("nonlocal_diffusion").joinpath("presets", f"{name}.yaml").read_text()
    return RunConfig.from_yaml(text)
