"""Experiment configuration: a sectioned key = value file.

Grammar (INI, parsed with configparser, interpolation off, keys case-sensitive):

    [run]        kind, seed, replicas, threads, out
    [domain]     spec, N, depth
    [params]     experiment parameters (see PARAMS)
    [tolerance]  assertion tolerances (see TOLERANCES)

Lists are comma separated.  Keys not known for the chosen kind are rejected.
`serialize` writes the canonical form: fixed section order, sorted keys, every
value spelled out (defaults included), floats in repr form.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace

from .lattice import DomainError, DomainSpec, discretize

KINDS = ("green-table", "sample-field", "cluster-law", "intensity-fit", "max-histogram",
         "liouville", "freezing", "curves-audit", "concentric-audit")

SECTIONS = ("run", "domain", "params", "tolerance")


class ConfigError(ValueError):
    """Invalid configuration; `problems` lists (field, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.problems))


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


# name -> (parser, default)
RUN = {"kind": (str, None), "seed": (int, 0), "replicas": (int, 1), "threads": (int, 1), "out": (str, "out")}

# which domain keys a kind accepts, and their defaults
DOMAIN = {
    "green-table": {"spec": "0,1,0,1", "N": 0, "depth": 3},
    "sample-field": {"spec": "0,1,0,1", "N": 64, "depth": 0},
    "cluster-law": {},
    "intensity-fit": {"spec": "0,1,0,1", "N": 128},
    "max-histogram": {"spec": "0,1,0,1", "N": 64},
    "liouville": {"spec": "0,1,0,1", "N": 64},
    "freezing": {"spec": "0,1,0,1", "N": 64},
    "curves-audit": {},
    "concentric-audit": {"depth": 3},
}

PARAMS = {
    "green-table": {},
    "sample-field": {"samples": (int, 1), "level": (float, 1.0), "r": (float, 4.0)},
    "cluster-law": {"r": (float, 8.0), "budget": (int, 10_000), "keep": (int, 100)},
    "intensity-fit": {"r": (float, 16.0), "samples": (int, 20), "window": (_floats, (-6.0, 0.0)),
                      "bootstrap": (int, 1000)},
    "max-histogram": {"samples": (int, 500), "bins": (int, 8)},
    # beta is given in units of the critical value
    "liouville": {"samples": (int, 100), "beta": (_floats, (1.5, 2.5))},
    "freezing": {"samples": (int, 200), "beta": (_floats, (1.5, 2.5)),
                 "window": (_floats, (-2.0, 4.0)), "points": (int, 241)},
    "curves-audit": {"paths": (int, 20_000), "steps": (int, 256), "closed_paths": (int, 100_000),
                     "closed_steps": (int, 64)},
    "concentric-audit": {"samples": (int, 200)},
}

TOLERANCES = {
    "green-table": {"residual": 1e-10},
    "sample-field": {},
    "cluster-law": {},
    "intensity-fit": {"slope_rel": 0.15},
    "max-histogram": {},
    "liouville": {},
    "freezing": {"sup": 0.05},
    "curves-audit": {"sigmas": 3.0},
    "concentric-audit": {"covariance": 1e-8, "walk": 1e-9},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    replicas: int = 1
    threads: int = 1
    out: str = "out"
    domain: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        validate(cfg)
        return cfg

    @property
    def spec(self) -> DomainSpec:
        return DomainSpec.parse(self.domain.get("spec", "0,1,0,1"))

    def digest(self) -> str:
        """Hash of the canonical text; the output directory is not part of the experiment."""
        return hashlib.sha256(serialize(self, portable=True).encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(section, key, parser, raw, problems):
    try:
        return parser(raw)
    except (TypeError, ValueError):
        problems.append((f"{section}.{key}", f"cannot parse {raw!r}"))
        return None


def parse(text: str, overrides: dict | None = None, kind: str | None = None) -> ExperimentConfig:
    """Parse config text; `overrides` maps 'section.key' to raw strings applied on top.
    `kind` fills in run.kind when the text leaves it out."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError([("file", str(e).splitlines()[0])]) from None
    raw = {s: dict(cp[s]) for s in cp.sections()}
    if kind is not None:
        raw.setdefault("run", {}).setdefault("kind", kind)
    for dotted, val in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError([(dotted, "override must look like section.key=value")])
        s, k = dotted.split(".", 1)
        raw.setdefault(s, {})[k] = val
    return from_mapping(raw)


def from_mapping(raw: dict) -> ExperimentConfig:
    problems = []
    for s in raw:
        if s not in SECTIONS:
            problems.append((s, "unknown section"))
    run = raw.get("run", {})
    kind = run.get("kind")
    if kind is None:
        problems.append(("run.kind", "missing"))
        raise ConfigError(problems)
    if kind not in KINDS:
        problems.append(("run.kind", f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}"))
        raise ConfigError(problems)
    vals = {}
    for k, v in run.items():
        if k not in RUN:
            problems.append((f"run.{k}", "unknown key"))
        elif k != "kind":
            vals[k] = _coerce("run", k, RUN[k][0], v, problems)
    dom = dict(DOMAIN[kind])
    for k, v in raw.get("domain", {}).items():
        if k not in dom:
            problems.append((f"domain.{k}", f"unknown key for {kind}"))
        else:
            dom[k] = v if k == "spec" else _coerce("domain", k, int, v, problems)
    given = raw.get("domain", {})
    # N and depth are alternatives: setting one switches the other off
    if "N" in dom and "depth" in dom:
        if "N" in given and "depth" not in given:
            dom["depth"] = 0
        elif "depth" in given and "N" not in given:
            dom["N"] = 0
    params = {k: d for k, (_, d) in PARAMS[kind].items()}
    for k, v in raw.get("params", {}).items():
        if k not in PARAMS[kind]:
            problems.append((f"params.{k}", f"unknown key for {kind}"))
        else:
            params[k] = _coerce("params", k, PARAMS[kind][k][0], v, problems)
    tol = dict(TOLERANCES[kind])
    for k, v in raw.get("tolerance", {}).items():
        if k not in tol:
            problems.append((f"tolerance.{k}", f"unknown key for {kind}"))
        else:
            tol[k] = _coerce("tolerance", k, float, v, problems)
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(kind=kind, domain=dom, params=params, tolerance=tol, **vals)
    validate(cfg)
    return cfg


def default_config(kind: str) -> ExperimentConfig:
    return from_mapping({"run": {"kind": kind}})


def validate(cfg: ExperimentConfig) -> None:
    """Range checks on every parameter the experiment will read."""
    p = []
    if cfg.kind not in KINDS:
        raise ConfigError([("run.kind", f"unknown kind {cfg.kind!r}")])
    if not 0 <= cfg.seed < 2**64:
        p.append(("run.seed", "must be an unsigned 64-bit integer"))
    if cfg.replicas < 1:
        p.append(("run.replicas", "must be at least 1"))
    if cfg.threads < 1:
        p.append(("run.threads", "must be at least 1"))
    if cfg.kind in ("green-table", "curves-audit") and cfg.replicas != 1:
        p.append(("run.replicas", f"{cfg.kind} is not replicated; use 1"))
    d = cfg.domain
    if "spec" in d:
        try:
            spec = DomainSpec.parse(d["spec"])
            if d.get("N", 0) > 0 and len(discretize(spec, d["N"])) == 0:
                p.append(("domain", f"spec {d['spec']!r} has no lattice points at N = {d['N']}"))
        except (DomainError, ValueError, ZeroDivisionError) as e:
            p.append(("domain.spec", str(e)))
    if cfg.kind == "green-table":
        if (d["N"] > 0) == (d["depth"] > 0):
            p.append(("domain", "give exactly one of N or depth"))
        if d["depth"] > 6:
            p.append(("domain.depth", "dense tables are capped at depth 6"))
        if d["N"] > 80:
            p.append(("domain.N", "dense tables are capped at N = 80"))
    elif cfg.kind == "sample-field":
        if (d["N"] > 0) == (d["depth"] > 0):
            p.append(("domain", "give exactly one of N or depth"))
        if d["N"] and d["N"] < 3:
            p.append(("domain.N", "must be at least 3"))
        if d["depth"] and not 2 <= d["depth"] <= 8:
            p.append(("domain.depth", "must be in 2..8"))
    elif cfg.kind == "concentric-audit":
        if not 1 <= d["depth"] <= 6:
            p.append(("domain.depth", "must be in 1..6"))
    elif "N" in d and d["N"] < 3:
        p.append(("domain.N", "must be at least 3"))
    for k, v in cfg.params.items():
        if k in ("samples", "budget", "paths", "closed_paths", "bootstrap", "points") and v < 1:
            p.append((f"params.{k}", "must be positive"))
        if k in ("steps", "closed_steps", "bins") and v < 1:
            p.append((f"params.{k}", "must be positive"))
        if k == "keep" and v < 0:
            p.append(("params.keep", "must be nonnegative"))
        if k == "r" and v <= 0:
            p.append(("params.r", "must be positive"))
        if k == "window" and (len(v) != 2 or v[0] >= v[1]):
            p.append(("params.window", "needs lo, hi with lo < hi"))
        if k == "beta" and (not v or min(v) <= 0):
            p.append(("params.beta", "needs positive values"))
    if cfg.kind == "freezing" and len(cfg.params["beta"]) != 2:
        p.append(("params.beta", "freezing compares exactly two values"))
    if cfg.kind == "cluster-law" and cfg.params["r"] > 256:
        p.append(("params.r", "must be at most 256"))
    for k, v in cfg.tolerance.items():
        if not v > 0:
            p.append((f"tolerance.{k}", "must be positive"))
    if p:
        raise ConfigError(p)


def serialize(cfg: ExperimentConfig, portable: bool = False) -> str:
    """Canonical text.  portable=True leaves out `out` and `threads`, which never change results."""
    lines = ["[run]", f"kind = {cfg.kind}"]
    for k in sorted(RUN):
        if k != "kind" and not (portable and k in ("out", "threads")):
            lines.append(f"{k} = {_fmt(getattr(cfg, k))}")
    for name, vals in (("domain", cfg.domain), ("params", cfg.params), ("tolerance", cfg.tolerance)):
        lines.append("")
        lines.append(f"[{name}]")
        for k in sorted(vals):
            lines.append(f"{k} = {_fmt(vals[k])}")
    return "\n".join(lines) + "\n"
