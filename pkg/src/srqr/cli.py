"""Command line experiment runner.

    srqr --config experiment.yaml --out results/ [--threads N] [--verbose]

Configs are YAML files validated against a strict JSON schema before any
computation.  Every run writes ``manifest.json`` listing each artifact with
its sha256.  Environment variables SRQR_CONFIG, SRQR_OUT, SRQR_THREADS and
SRQR_VERBOSE supply defaults for the matching flags.

Exit codes: 0 success, 1 certification failure, 2 invalid config,
3 numerical failure (partial manifest written), 4 IO failure.
"""
import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import _accel, certify as certify_mod
from .distortion import eigen_distortion, metric_distortion
from .manifolds import (
    ChartDomainError, ContractViolation, LensSpec, heisenberg_chart, on_branch_locus,
    random_sphere, to_real,
)
from .map_zoo import (
    DomainError, InfiniteFamily, NotContact, antipodal, identity, lens_multi_twist, loxodromic,
    multi_twist, rotation,
)
from .mm_derivative import DEFAULT_SCHEDULE, NonConvergent, hom_distortion, pansu_derivative
from .trap_dynamics import TrapConstructionError, build_trap, conformal_ball_index, julia_approx
from .tukia_structure import build_structure, invariance_residual, lens_grid

log = logging.getLogger("srqr")

EXIT_OK, EXIT_CERTIFY, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
SCHEMA_VERSION = 1
ENV_PREFIX = "SRQR_"
NUMERIC_ERRORS = (ArithmeticError, np.linalg.LinAlgError, ContractViolation, ChartDomainError,
                  DomainError, InfiniteFamily, NotContact, NonConvergent, TrapConstructionError)

KINDS = ["distortion-sweep", "trap-build", "julia", "pansu-sweep", "tukia-build", "certify-all"]

_MAP = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["multi-twist", "lens-multi-twist", "rotation", "identity",
                          "antipodal", "loxodromic"]},
        "a": {"type": "integer", "minimum": 1},
        "angles": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "d": {"type": "number"},
        "p": {"type": "integer", "minimum": 1},
        "q": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    },
}

_LENS = {
    "a": {"type": "integer", "minimum": 2},
    "p": {"type": "integer", "minimum": 1},
    "q": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
}

_COMMON = {
    "kind": {"enum": KINDS},
    "seed": {"type": "integer", "minimum": 0},
    "out": {"type": "string"},
    "threads": {"type": "integer", "minimum": 1},
    "verbose": {"type": "boolean"},
}

_KIND_PROPS = {
    "distortion-sweep": ({
        "map": _MAP,
        "points": {"type": "integer", "minimum": 1},
        "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                  "minItems": 2},
    }, ["map", "points"]),
    "trap-build": ({**_LENS, "overrides": {
        "type": "object", "additionalProperties": False,
        "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                       for k in ("R", "rho_U", "rho_V")}}}, []),
    "julia": ({**_LENS, "depth": {"type": "integer", "minimum": 0, "maximum": 8},
               "per_ball": {"type": "integer", "minimum": 1}}, ["depth"]),
    "pansu-sweep": ({
        "map": _MAP,
        "points": {"type": "integer", "minimum": 1},
        "h_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                       "minItems": 3},
    }, ["map", "points"]),
    "tukia-build": ({**_LENS,
                     "grid": {"type": "object", "additionalProperties": False,
                              "required": ["n"],
                              "properties": {"n": {"type": "integer", "minimum": 2,
                                                   "multipleOf": 2},
                                             "refine": {"type": "integer", "minimum": 1}}},
                     "N": {"type": "integer", "minimum": 1},
                     "window": {"type": "integer", "minimum": 1}}, ["grid"]),
    "certify-all": ({
        "criteria": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 10},
                     "minItems": 1, "uniqueItems": True},
        "tolerances": {"type": "object", "additionalProperties": False,
                       "patternProperties": {"^([1-9]|10)$": {
                           "type": "object",
                           "additionalProperties": {"type": ["number", "integer"]}}}},
    }, []),
}


def schema_for(kind):
    props, req = _KIND_PROPS[kind]
    return {"type": "object", "additionalProperties": False, "required": ["kind"] + req,
            "properties": {**_COMMON, **props}}


class ConfigError(ValueError):
    pass


def validate(cfg):
    """Schema check; raises ConfigError with a readable message."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(cfg, {"type": "object", "required": ["kind"],
                                  "properties": {"kind": {"enum": KINDS}}})
        jsonschema.validate(cfg, schema_for(cfg["kind"]))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}") from None
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"not valid YAML: {e}") from None
    return validate(cfg if cfg is not None else {})


def make_map(d):
    k = d["kind"]
    if k == "multi-twist":
        return multi_twist(d.get("a", 2))
    if k == "lens-multi-twist":
        return lens_multi_twist(d.get("a", 2), LensSpec(d.get("p", 2), tuple(d.get("q", (1, 1)))))
    if k == "rotation":
        return rotation(d.get("angles", [0.3, 1.1]))
    if k == "identity":
        return identity()
    if k == "antipodal":
        return antipodal()
    return loxodromic(d.get("d", 0.5))


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

class Artifacts:
    """Single writer for the output directory; records hashes for the manifest."""

    def __init__(self, out):
        self.out = Path(out)
        self.files = []

    def write(self, name, text):
        data = text.encode("utf-8")
        path = self.out / name
        path.write_bytes(data)
        self.files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(),
                           "bytes": len(data)})
        log.info("wrote %s", path)

    def json(self, name, obj):
        self.write(name, json.dumps(obj, sort_keys=True, indent=1) + "\n")

    def manifest(self, cfg, status, extra=None):
        body = {"schema_version": SCHEMA_VERSION, "kind": cfg.get("kind"), "status": status,
                "config_sha256": hashlib.sha256(
                    json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
                "backend": _accel.backend_name(), "files": list(self.files)}
        if extra:
            body.update(extra)
        data = json.dumps(body, sort_keys=True, indent=1) + "\n"
        (self.out / "manifest.json").write_text(data, encoding="utf-8")


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x):
    return f"{float(x):.12g}"


def _sample(cfg, n, tol=1e-3):
    rng = np.random.default_rng(cfg.get("seed", 0))
    z = random_sphere(rng, 4 * n + 8)
    return z[~on_branch_locus(z, tol)][:n]


def _pmap(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _trap(cfg):
    spec = LensSpec(cfg.get("p", 2), tuple(cfg.get("q", (1, 1))))
    return build_trap(cfg.get("a", 2), spec, cfg.get("overrides"))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_distortion_sweep(cfg, art, threads):
    m = make_map(cfg["map"])
    radii = cfg.get("radii", [0.04, 0.02, 0.01, 0.005])
    z = _sample(cfg, cfg["points"])
    reports = _pmap(lambda x: metric_distortion(m, x, radii), list(z), threads)
    art.write("distortion.csv", "".join(
        r.csv(i) if i == 0 else r.csv(i).split("\n", 1)[1] for i, r in enumerate(reports)))
    rows = []
    for i, (x, r) in enumerate(zip(z, reports)):
        lm, lp = eigen_distortion(m, x)
        rows.append([i] + [_f(v) for v in to_real(x)] + [_f(r.H), _f(lm), _f(lp)])
    art.write("summary.csv", _csv(["point_id", "x1", "y1", "x2", "y2", "H", "lambda_minus",
                                   "lambda_plus"], rows))
    return {"H_max": max(r.H for r in reports)}


def run_trap_build(cfg, art, threads):
    u = _trap(cfg)
    body = {"schema_version": SCHEMA_VERSION, "config": u.config.to_json(),
            "diagnostics": certify_mod._plain(u.diagnostics)}
    art.json("trap.json", certify_mod._plain(body))
    rows = [[k, bool(v["ok"]), _f(v["value"]), _f(v["bound"])]
            for k, v in sorted(u.config.conditions.items())]
    art.write("conditions.csv", _csv(["condition", "holds", "value", "bound"], rows))
    return {"R": u.config.R}


def run_julia(cfg, art, threads):
    u = _trap(cfg)
    cloud = julia_approx(u, cfg["depth"], per_ball=cfg.get("per_ball", 8))
    art.json("julia.json", certify_mod._plain(cloud.to_json()))
    inside = conformal_ball_index(u, cloud.points) > 0
    rows = [[int(lv)] + [_f(v) for v in to_real(p)] + [int(b)]
            for p, lv, b in zip(cloud.points, cloud.levels, inside)]
    art.write("julia.csv", _csv(["depth", "x1", "y1", "x2", "y2", "in_conformal_ball"], rows))
    art.write("julia_chart.csv", cloud.chart_csv(heisenberg_chart(u.config.xs[1])))
    if cloud.violations:
        raise ArithmeticError(f"{cloud.violations} Julia points left the conformal balls")
    return {"points": int(len(cloud.points)), "violations": cloud.violations}


def run_pansu_sweep(cfg, art, threads):
    m = make_map(cfg["map"])
    sched = cfg.get("h_schedule", list(DEFAULT_SCHEDULE))
    z = _sample(cfg, cfg["points"], 1e-2)
    homs = _pmap(lambda x: pansu_derivative(m, x, sched, raise_on_fail=False), list(z), threads)
    rows = []
    for i, (x, H) in enumerate(zip(z, homs)):
        rows.append([i] + [_f(v) for v in to_real(x)] + [_f(v) for v in H.A.ravel()]
                    + [_f(H.tau), _f(H.residual), _f(H.graded_defect), _f(hom_distortion(H)),
                       int(H.converged), _f(H.cauchy[-1])])
    art.write("pansu.csv", _csv(["point_id", "x1", "y1", "x2", "y2", "a11", "a12", "a21", "a22",
                                 "tau", "residual", "graded_defect", "hom_distortion",
                                 "converged", "final_cauchy"], rows))
    nonconv = sum(not H.converged for H in homs)
    if nonconv:
        raise NonConvergent(next(H for H in homs if not H.converged))
    return {"points": len(homs)}


def run_tukia_build(cfg, art, threads):
    u = _trap(cfg)
    g = cfg["grid"]
    grid, params = lens_grid(u.config.a, u.config.spec.p, g["n"], g.get("refine", 1))
    cs = build_structure(u, grid, cfg.get("N", 8), cfg.get("window"), params)
    art.json("structure.json", cs.to_json())
    rep = invariance_residual(cs, u.g)
    art.write("residual.csv", rep.csv(cs.grid))
    summary = {"mean": rep.mean, "median": rep.median, "max": rep.max,
               "excluded": int(rep.excluded.sum()), "K": cs.K, "radius_bound": cs.radius_bound,
               "max_radius": float(cs.radius[cs.valid].max())}
    art.json("residual_summary.json", summary)
    return summary


def run_certify(cfg, art, threads):
    results = certify_mod.certify(cfg.get("criteria"), cfg.get("seed", 0),
                                  cfg.get("tolerances"))
    report = {"schema_version": SCHEMA_VERSION,
              "passed": all(r.passed for r in results),
              "criteria": [r.to_json() for r in results]}
    art.json("certify.json", report)
    for r in results:
        print(r.line())
    return {"passed": report["passed"]}


RUNNERS = {"distortion-sweep": run_distortion_sweep, "trap-build": run_trap_build,
           "julia": run_julia, "pansu-sweep": run_pansu_sweep, "tukia-build": run_tukia_build,
           "certify-all": run_certify}


def run(cfg, out, threads=1):
    """Validate, execute and write the manifest; returns an exit code."""
    try:
        validate(cfg)
    except ConfigError as e:
        log.error("invalid config: %s", e)
        return EXIT_SCHEMA
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        log.error("cannot create output directory: %s", e)
        return EXIT_IO
    _accel.set_threads(threads)
    art = Artifacts(out)
    try:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            summary = RUNNERS[cfg["kind"]](cfg, art, threads)
    except OSError as e:
        log.error("IO failure: %s", e)
        return EXIT_IO
    except NUMERIC_ERRORS as e:
        log.error("numerical failure: %s", e)
        try:
            art.manifest(cfg, "numerical-failure", {"error": str(e)})
        except OSError:
            return EXIT_IO
        return EXIT_NUMERIC
    try:
        status = "ok"
        if cfg["kind"] == "certify-all" and not summary["passed"]:
            status = "certification-failed"
        art.manifest(cfg, status)
    except OSError as e:
        log.error("cannot write manifest: %s", e)
        return EXIT_IO
    return EXIT_CERTIFY if status == "certification-failed" else EXIT_OK


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def parse_args(argv=None):
    ap = argparse.ArgumentParser(prog="srqr", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", default=_env("CONFIG"), help="YAML experiment file")
    ap.add_argument("--out", default=_env("OUT"), help="output directory")
    ap.add_argument("--threads", type=int, default=int(_env("THREADS", "1")))
    ap.add_argument("--verbose", action="store_true",
                    default=_env("VERBOSE", "0").lower() in ("1", "true", "yes"))
    return ap.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.config:
        log.error("no config given (--config or %sCONFIG)", ENV_PREFIX)
        return EXIT_SCHEMA
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        log.error("invalid config: %s", e)
        return EXIT_SCHEMA
    except OSError as e:
        log.error("cannot read config: %s", e)
        return EXIT_IO
    out = args.out or cfg.get("out") or "srqr-out"
    threads = args.threads if args.threads else cfg.get("threads", 1)
    return run(cfg, out, threads)


if __name__ == "__main__":
    sys.exit(main())
