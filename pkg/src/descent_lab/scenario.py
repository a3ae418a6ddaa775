"""Scenario configs: validation, resolution into geometric objects, suite
execution and report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, catalog, dsl
from .charts import Chart, ChartDomain, ChartedManifold, Hypersurface
from .descent import (DEFAULT_TOLERANCES, DescentReport, SuiteConfig, add_trapping_stage, descent_suite,
                      isometry_suite, sample_trapping, spray_descent_suite)
from .lifts import SmoothChartMap, tangent_map
from .riemann import MetricField, geodesic_spray
from .sprays import DEFAULT_HORIZON, DEFAULT_TOL, SprayField, check_spray_axioms

EXIT_CODES = {"confirmed": 0, "hypothesis-fail": 1, "inconclusive": 1, "conclusion-fail": 2, "error": 3}
EXIT_INVALID_CONFIG = 4

BUILTIN_MANIFOLDS = {
    "line": lambda: catalog.euclidean(1),
    "plane": lambda: catalog.euclidean(2),
    "torus": catalog.torus,
    "sphere": catalog.sphere,
    "half-plane": catalog.half_plane,
}
BUILTIN_METRICS = {
    "flat": None,  # resolved against the manifold
    "round": catalog.round_metric,
    "scaled-round": lambda: catalog.round_metric(4.0),
    "hyperbolic": catalog.hyperbolic_metric,
    "twisted": catalog.twisted_metric,
}

DEFAULTS = {"samples": 1000, "seed": 0, "tol": DEFAULT_TOL, "horizon": DEFAULT_HORIZON,
            "trapping_samples": 100, "jacobi_trials": 20}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


def load_schema(name: str) -> dict:
    text = resources.files("descent_lab").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


# -- validation ----------------------------------------------------------------------

def validate_config(cfg) -> list[str]:
    """Schema errors, expression diagnostics and suite requirements."""
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    validator = jsonschema.Draft202012Validator(load_schema("config"))
    diags = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
             for e in sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))]
    if diags:
        return diags
    if "scenario" in cfg and cfg["scenario"] not in catalog.catalog():
        return [f"scenario: unknown builtin {cfg['scenario']!r}"]
    dim = _config_dim(cfg)
    if dim is None:
        return ["manifold: give a builtin, a dim with charts, or a builtin scenario"]
    chart_ids = _config_charts(cfg)
    man = cfg.get("manifold", {})
    for i, c in enumerate(man.get("charts", [])):
        for j, src in enumerate(c.get("positive", [])):
            diags += [f"manifold/charts/{i}/positive/{j}: {d}" for d in dsl.validate({"h": src}, "level", dim)]
        if "box" in c and len(c["box"]) != dim:
            diags.append(f"manifold/charts/{i}/box: needs {dim} intervals")
    for i, t in enumerate(man.get("transitions", [])):
        diags += [f"manifold/transitions/{i}: {d}" for d in dsl.validate(t["exprs"], "transition", dim)]
        for end in ("from", "to"):
            if t[end] not in chart_ids:
                diags.append(f"manifold/transitions/{i}/{end}: unknown chart {t[end]!r}")
    for key, role in (("metric", "metric"), ("target_metric", "metric"), ("spray", "spray"),
                      ("target_spray", "spray")):
        diags += _bundle_diags(cfg.get(key), key, role, dim, chart_ids)
    for key in ("map", "inverse_map"):
        m = cfg.get(key)
        if m is None:
            continue
        if len([k for k in m if k in ("exprs", "base_map", "charts", "base_charts")]) != 1:
            diags.append(f"{key}: give exactly one of exprs, base_map, charts, base_charts")
            continue
        for sub, role in (("exprs", "map"), ("base_map", "base-map")):
            if sub in m:
                diags += [f"{key}/{sub}: {d}" for d in dsl.validate(m[sub], role, dim)]
        for sub, role in (("charts", "map"), ("base_charts", "base-map")):
            for cid, src in m.get(sub, {}).items():
                if cid not in chart_ids:
                    diags.append(f"{key}/{sub}: unknown chart {cid!r}")
                diags += [f"{key}/{sub}/{cid}: {d}" for d in dsl.validate(src, role, dim)]
    hs = cfg.get("hypersurface")
    if hs is not None:
        if ("exprs" in hs) == ("charts" in hs):
            diags.append("hypersurface: give exactly one of exprs, charts")
        if "exprs" in hs:
            diags += [f"hypersurface/exprs: {d}" for d in dsl.validate(hs["exprs"], "level", dim)]
        for cid, src in hs.get("charts", {}).items():
            if cid not in chart_ids:
                diags.append(f"hypersurface/charts: unknown chart {cid!r}")
            diags += [f"hypersurface/charts/{cid}: {d}" for d in dsl.validate(src, "level", dim)]
    if "anchor" in cfg:
        if len(cfg["anchor"]["x"]) != dim:
            diags.append(f"anchor/x: needs {dim} coordinates")
        if cfg["anchor"].get("chart", chart_ids[0]) not in chart_ids:
            diags.append(f"anchor/chart: unknown chart {cfg['anchor']['chart']!r}")
    for i, p in enumerate(cfg.get("pinned", [])):
        if len(p) != 4 * dim:
            diags.append(f"pinned/{i}: an order-2 point needs {4 * dim} coordinates")
    if not diags:
        diags += _suite_requirements(cfg)
    return diags


def _config_dim(cfg):
    man = cfg.get("manifold")
    if man is None:
        return catalog.scenario(cfg["scenario"]).manifold.dim if "scenario" in cfg else None
    if "builtin" in man:
        return BUILTIN_MANIFOLDS[man["builtin"]]().dim
    if "dim" in man and "charts" in man:
        return man["dim"]
    return None


def _config_charts(cfg):
    man = cfg.get("manifold")
    if man is None:
        return catalog.scenario(cfg["scenario"]).manifold.chart_ids
    if "builtin" in man:
        return BUILTIN_MANIFOLDS[man["builtin"]]().chart_ids
    return [c["id"] for c in man["charts"]]


def _bundle_diags(b, key, role, dim, chart_ids):
    if b is None:
        return []
    given = [k for k in ("builtin", "exprs", "charts") if k in b]
    if len(given) != 1:
        return [f"{key}: give exactly one of builtin, exprs, charts"]
    if "builtin" in b:
        if role != "metric" or b["builtin"] not in BUILTIN_METRICS:
            return [f"{key}/builtin: unknown builtin {b['builtin']!r}"]
        return []
    if "exprs" in b:
        return [f"{key}/exprs: {d}" for d in dsl.validate(b["exprs"], role, dim)]
    out = []
    for cid, src in b["charts"].items():
        if cid not in chart_ids:
            out.append(f"{key}/charts: unknown chart {cid!r}")
        out += [f"{key}/charts/{cid}: {d}" for d in dsl.validate(src, role, dim)]
    missing = set(chart_ids) - set(b["charts"])
    if missing:
        out.append(f"{key}/charts: missing charts {sorted(missing)}")
    return out


def _suite_requirements(cfg):
    base = catalog.scenario(cfg["scenario"]) if "scenario" in cfg else None
    suite = cfg.get("suite") or (base.suite if base else None)
    if suite is None:
        return ["suite: required when no builtin scenario is given"]
    has = lambda key, attr: key in cfg or (base is not None and getattr(base, attr) is not None)
    need = {"descent": [("map", "F")],
            "spray-theorem": [("map", "F"), ("hypersurface", "sigma")],
            "isometry-theorem": [("map", "F"), ("metric", "metric"), ("target_metric", "target_metric"),
                                 ("hypersurface", "sigma"), ("anchor", "anchor")],
            "trapping-only": [("hypersurface", "sigma")]}[suite]
    out = [f"{key}: required by the {suite} suite" for key, attr in need if not has(key, attr)]
    if suite in ("spray-theorem", "trapping-only") and not (has("spray", "spray") or has("metric", "metric")):
        out.append(f"spray: the {suite} suite needs a spray or a metric")
    return out


# -- resolution ------------------------------------------------------------------------

def _manifold(cfg, base):
    man = cfg.get("manifold")
    if man is None:
        return base.manifold
    if "builtin" in man:
        return BUILTIN_MANIFOLDS[man["builtin"]]()
    n = man["dim"]
    charts = {}
    for c in man["charts"]:
        pos = tuple(catalog.exprs("level", n, {"h": src}) for src in c.get("positive", []))
        center = tuple(c["center"]) if "center" in c else None
        box = tuple(tuple(iv) for iv in c["box"]) if "box" in c else None
        charts[c["id"]] = Chart(c["id"], ChartDomain(n, c.get("radius"), center, pos), box)
    trans = {(t["from"], t["to"]): catalog.exprs("transition", n, t["exprs"])
             for t in man.get("transitions", [])}
    return ChartedManifold("custom", n, charts, trans)


def _per_chart(entry, role, M):
    if "exprs" in entry:
        fn = catalog.exprs(role, M.dim, entry["exprs"])
        return {c: fn for c in M.chart_ids}
    return {c: catalog.exprs(role, M.dim, src) for c, src in entry["charts"].items()}


def _metric(entry, M):
    if "builtin" in entry:
        if entry["builtin"] == "flat":
            return catalog.flat_metric(M)
        g = BUILTIN_METRICS[entry["builtin"]]()
        if g.manifold.chart_ids != M.chart_ids:
            raise ConfigError([f"builtin metric {entry['builtin']!r} needs charts {g.manifold.chart_ids}"])
        return MetricField(M, g.g, g.name)
    return MetricField(M, _per_chart(entry, "metric", M), "g")


def _map(entry, M):
    if "exprs" in entry or "charts" in entry:
        body = _per_chart(entry, "map", M)
        return SmoothChartMap(M, M, 1, body, {c: c for c in body}, "F")
    sub = {"exprs": entry["base_map"]} if "base_map" in entry else {"charts": entry["base_charts"]}
    body = _per_chart(sub, "base-map", M)
    return tangent_map(SmoothChartMap(M, M, 0, body, {c: c for c in body}, "phi"))


def resolve(cfg: dict):
    """Config -> (Scenario, SuiteConfig, echo of the resolved config)."""
    diags = validate_config(cfg)
    if diags:
        raise ConfigError(diags)
    base = catalog.scenario(cfg["scenario"]) if "scenario" in cfg else None
    M = _manifold(cfg, base)
    sc = replace(base) if base is not None else catalog.Scenario("custom", M, cfg["suite"], None)
    sc.manifold = M
    if "suite" in cfg:
        sc.suite = cfg["suite"]
    if "metric" in cfg:
        sc.metric = _metric(cfg["metric"], M)
        sc.spray = geodesic_spray(sc.metric)
    if "target_metric" in cfg:
        sc.target_metric = _metric(cfg["target_metric"], M)
        sc.target_spray = geodesic_spray(sc.target_metric)
    if "spray" in cfg:
        sc.spray = SprayField(M, _per_chart(cfg["spray"], "spray", M), "S")
    if "target_spray" in cfg:
        sc.target_spray = SprayField(M, _per_chart(cfg["target_spray"], "spray", M), "S~")
    if sc.target_spray is None:
        sc.target_spray = sc.spray
    if "map" in cfg:
        sc.F = _map(cfg["map"], M)
        sc.F_inverse = None
    if "inverse_map" in cfg:
        sc.F_inverse = _map(cfg["inverse_map"], M)
    if "hypersurface" in cfg:
        hs = cfg["hypersurface"]
        level = _per_chart(hs, "level", M)
        sc.sigma = Hypersurface(M, level, hs.get("gradient_floor", 1e-3), "Sigma")
    if "anchor" in cfg:
        sc.anchor = (cfg["anchor"].get("chart", M.chart_ids[0]), tuple(cfg["anchor"]["x"]))
    if "pinned" in cfg:
        sc.pinned = [tuple(p) for p in cfg["pinned"]]
    settings = {k: cfg.get(k, v) for k, v in DEFAULTS.items()}
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(cfg.get("tolerances", {}))
    suite_cfg = SuiteConfig(samples=settings["samples"], seed=settings["seed"], tol=settings["tol"],
                            horizon=settings["horizon"], tolerances=tolerances,
                            jacobi_trials=settings["jacobi_trials"],
                            trapping_samples=settings["trapping_samples"],
                            pinned=tuple(tuple(p) for p in sc.pinned))
    echo = dict(cfg)
    echo.update(settings)
    echo["suite"] = sc.suite
    echo["tolerances"] = tolerances
    if sc.pinned:
        echo["pinned"] = [list(p) for p in sc.pinned]
    return sc, suite_cfg, echo


# -- running ------------------------------------------------------------------------------

@dataclass
class RunReport:
    scenario: str | None
    suite: str
    verdict: str
    exit_code: int
    config: dict
    stages: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    expected_exit: int | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return _clean({"schema_version": 1, "tool_version": __version__, "scenario": self.scenario,
                       "suite": self.suite, "verdict": self.verdict, "exit_code": self.exit_code,
                       "expected_exit": self.expected_exit, "error": self.error,
                       "config": self.config, "stages": self.stages, "timing": self.timing})

    def defects(self) -> dict:
        return {s["stage"]: s["defect"] for s in self.stages}


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def trapping_suite(S: SprayField, sigma, config: SuiteConfig) -> DescentReport:
    report = DescentReport("trapping-only", seed=config.seed)
    if config.samples <= 0:
        report.add("sampling", "hypothesis", None, 0.0, {"inconclusive": True}, False)
        return report.finish()
    ax = check_spray_axioms(S, np.random.default_rng(config.seed), 200)
    report.add("spray_axioms", "hypothesis", max(ax["homogeneity_defect"], ax["structure_defect"]),
               config.tolerances["spray_axioms"], ax)
    t = time.perf_counter()
    trap = sample_trapping(S, sigma, np.random.default_rng(config.seed), config)
    report.timing["trapping"] = time.perf_counter() - t
    add_trapping_stage(report, trap)
    return report.finish()


def execute(sc, suite_cfg: SuiteConfig) -> DescentReport:
    if sc.suite == "descent":
        return descent_suite(sc.F, suite_cfg, sc.F_inverse)
    if sc.suite == "trapping-only":
        return trapping_suite(sc.spray, sc.sigma, suite_cfg)
    if sc.suite == "spray-theorem":
        return spray_descent_suite(sc.F, sc.spray, sc.target_spray, sc.sigma, suite_cfg, sc.F_inverse)
    cid, x = sc.anchor
    return isometry_suite(sc.F, sc.metric, sc.target_metric, sc.spray, sc.target_spray, sc.sigma,
                          (cid, np.asarray(x, float)), suite_cfg, sc.F_inverse)


def run(cfg: dict) -> RunReport:
    """Resolve and execute a config.  Raises :class:`ConfigError` on invalid
    input; execution failures become an ``error`` report with exit code 3."""
    sc, suite_cfg, echo = resolve(cfg)
    expected = sc.expected_exit if "scenario" in cfg and sc.suite == catalog.scenario(cfg["scenario"]).suite else None
    t = time.perf_counter()
    try:
        rep = execute(sc, suite_cfg)
    except Exception as exc:  # reported, not raised: exit code 3
        return RunReport(cfg.get("scenario"), sc.suite, "error", EXIT_CODES["error"], echo,
                         timing={"total": time.perf_counter() - t}, expected_exit=expected,
                         error=f"{type(exc).__name__}: {exc}")
    timing = dict(rep.timing)
    timing["total"] = time.perf_counter() - t
    return RunReport(cfg.get("scenario"), sc.suite, rep.verdict, EXIT_CODES[rep.verdict], echo,
                     rep.stages, timing, expected)


def run_scenario(name: str, **overrides) -> RunReport:
    cfg = {"scenario": name}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return run(cfg)


# -- emission ----------------------------------------------------------------------------------

def to_json(report: RunReport) -> str:
    return json.dumps(report.as_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "role", "defect", "tolerance", "verdict"])
    for s in report.as_dict()["stages"]:
        w.writerow([s["stage"], s["role"], "" if s["defect"] is None else repr(s["defect"]),
                    repr(s["tolerance"]), "pass" if s["passed"] else "fail"])
    return buf.getvalue()


def emit(report: RunReport, path, fmt: str = "json") -> Path:
    if fmt not in ("json", "csv-summary"):
        raise ValueError(f"unknown format {fmt!r}")
    text = to_json(report) if fmt == "json" else to_csv(report)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return path
