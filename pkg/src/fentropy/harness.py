"""Experiment configuration, registry and reproducible runs.

Configurations are plain ``key = value`` text with a ``schema`` line.  Every
key is typed and validated before anything is computed; unknown keys are
rejected.  A run writes CSV tables, a JSON verdict and a ``manifest.json``
holding the configuration hash, versions, wall time and output checksums.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "parse_config",
    "load_config",
    "serialize",
    "config_hash",
    "task_rng",
    "list_experiments",
    "build_model",
    "run",
]

SCHEMA_VERSION = 1

KINDS = ("entropy", "gibbs", "sweep", "certificate", "basin", "audit")


class ConfigError(ValueError):
    """Invalid configuration text or values."""


# --- schema ------------------------------------------------------------------

_ALL = KINDS
_EST = ("entropy", "gibbs", "sweep", "audit")
_MEAS = ("entropy", "gibbs", "audit")

# key: (type, default, kinds, choices)
_SCHEMA = {
    "kind": ("str", None, _ALL, KINDS),
    "model": ("str", None, _ALL, ("cat", "cat2", "t3", "dfa", "skew")),
    "seed": ("int", 0, _ALL, None),
    "out_dir": ("str", "fe_out", _ALL, None),
    "matrix": ("ints", None, _ALL, None),
    "base": ("str", None, _ALL, ("cat", "cat2", "t3")),
    "eps": ("float", 0.0, _ALL, None),
    "bumps": ("str", "", _ALL, None),
    "fiber": ("str", "contracting", _ALL, ("contracting", "rigid", "custom")),
    "fiber_alpha": ("float", None, _ALL, None),
    "fiber_terms": ("str", "", _ALL, None),
    # measures
    "measure": ("str", "birkhoff", _MEAS, ("birkhoff", "ustate", "atomic")),
    "samples": ("int", 100_000, _MEAS + ("basin",), None),
    "burn_in": ("int", 100, _MEAS + ("basin",), None),
    "seed_point": ("floats", None, _MEAS + ("basin",), None),
    "atomic_point": ("floats", None, _MEAS, None),
    "plaques": ("int", 400, _EST + ("certificate",), None),
    "iterations": ("int", 20, _EST + ("certificate",), None),
    "samples_per_step": ("int", 25, _EST + ("certificate",), None),
    "plaque_radius": ("float", 0.1, _EST + ("certificate",), None),
    # estimator
    "R": ("float", 0.29, _EST, None),
    "lambda": ("float", 0.38, _EST, None),
    "lambda_p": ("float", 0.6, _EST, None),
    "m_max": ("int", 8, _EST, None),
    "atlas_hint": ("int", 64, _EST, None),
    "quantizer_fraction": ("float", 0.0625, _EST, None),
    "sensitivity_fractions": ("floats", (), ("entropy",), None),
    "chart_rule": ("str", "voronoi", _EST, ("voronoi", "point", "cell")),
    "cell_fraction": ("float", 0.1, _EST, None),
    "miller_madow": ("bool", False, _EST, None),
    "target_tol": ("float", 0.05, ("entropy",), None),
    "tol": ("float", 0.06, ("gibbs", "sweep"), None),
    "slack": ("float", 0.08, ("sweep",), None),
    "eps_grid": ("floats", (0.0, 0.005, 0.01, 0.02), ("sweep",), None),
    "eps_threshold": ("float", 0.02, ("sweep",), None),
    "i_max": ("int", 8, ("audit",), None),
    "bad_partition": ("bool", False, ("audit",), None),
    # certificates
    "direction": ("str", "contracting", ("certificate",), ("contracting", "expanding")),
    "N_grid": ("ints", (1, 2, 4, 8), ("certificate",), None),
    "floor": ("float", 1e-8, ("certificate",), None),
    "perturb_eps": ("floats", (0.005, 0.01), ("certificate",), None),
    "expect": ("str", "pass", ("certificate",), ("pass", "fail")),
    "hyperbolic_points": ("int", 0, ("certificate",), None),
    "hyperbolic_horizon": ("int", 10_000, ("certificate",), None),
    # basin
    "grid": ("ints", (50, 50, 20), ("basin",), None),
    "census_horizon": ("int", 1000, ("basin",), None),
    "census_tol": ("float", 0.05, ("basin",), None),
    "dictionary_K": ("int", 2, ("basin",), None),
    "min_fraction": ("float", 0.95, ("basin",), None),
}


@dataclass
class ExperimentConfig:
    """Validated configuration; ``given`` lists the keys set explicitly."""

    values: dict
    given: tuple

    @property
    def kind(self) -> str:
        return self.values["kind"]

    def __getitem__(self, key):
        return self.values[key]


def _convert(key, typ, raw):
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if typ == "ints":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if typ == "floats":
            return tuple(float(t) for t in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        On syntax errors, a missing or wrong schema version, unknown or
        misplaced keys, or invalid values.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip().strip('"')
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val
    if "schema" not in raw:
        raise ConfigError("missing 'schema' line")
    if raw.pop("schema") != str(SCHEMA_VERSION):
        raise ConfigError(f"unsupported schema version (expected {SCHEMA_VERSION})")
    for req in ("kind", "model"):
        if req not in raw:
            raise ConfigError(f"missing required key {req!r}")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    values = {}
    for key, val in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        typ, _, kinds, choices = _SCHEMA[key]
        if kind not in kinds:
            raise ConfigError(f"key {key!r} does not apply to kind {kind!r}")
        v = _convert(key, typ, val)
        if choices is not None and v not in choices:
            raise ConfigError(f"{key}: {v!r} is not one of {', '.join(choices)}")
        values[key] = v
    given = tuple(sorted(values))
    for key, (typ, default, kinds, _) in _SCHEMA.items():
        if kind in kinds and key not in values:
            values[key] = default
    cfg = ExperimentConfig(values, given)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _validate(cfg: ExperimentConfig):
    v = cfg.values
    k = cfg.kind

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    if v["model"] == "t3" and v.get("matrix") is not None:
        need(len(v["matrix"]) == 9, "matrix needs 9 integers")
    if v["model"] == "dfa":
        need(v.get("base") in (None, "cat", "cat2", "t3"), "dfa base must be cat, cat2 or t3")
    if v["model"] == "skew" and v["fiber"] == "custom":
        need(bool(v["fiber_terms"]) or v["fiber_alpha"] is not None, "custom fibre needs fiber_terms or fiber_alpha")
    _parse_bumps(v["bumps"])
    _parse_fiber_terms(v["fiber_terms"])
    if k in _EST:
        need(0 < v["lambda"] < v["lambda_p"] < 1, "need 0 < lambda < lambda_p < 1")
        need(0 < v["R"] < 0.5, "R must lie in (0, 0.5)")
        need(v["m_max"] >= 2, "m_max must be >= 2")
        need(v["atlas_hint"] >= 4, "atlas_hint must be >= 4")
        need(0 < v["quantizer_fraction"] <= 1, "quantizer_fraction must lie in (0, 1]")
        need(0 < v["cell_fraction"] <= 1, "cell_fraction must lie in (0, 1]")
        need(v["plaques"] >= 1 and v["iterations"] >= 0 and v["samples_per_step"] >= 1,
             "plaque sampling sizes must be positive")
        need(0 < v["plaque_radius"] <= 0.25, "plaque_radius must lie in (0, 0.25]")
    if k in _MEAS:
        if v["measure"] == "birkhoff":
            need(v["samples"] >= 1000, "birkhoff samples must be >= 1000")
        if v["measure"] == "atomic":
            need(v["atomic_point"] is not None, "atomic measure needs atomic_point")
    if k == "sweep":
        need(0.0 in v["eps_grid"], "eps_grid must contain 0")
        need(v["model"] in ("cat", "cat2", "t3", "dfa"), "sweeps perturb a linear base model")
    if k in ("gibbs", "sweep"):
        need(v["tol"] >= 0, "tol must be >= 0")
    if k == "certificate":
        need(all(n >= 1 for n in v["N_grid"]) and v["N_grid"], "N_grid must hold positive integers")
        need(all(e > 0 for e in v["perturb_eps"]), "perturb_eps must be positive")
        need(v["hyperbolic_points"] >= 0, "hyperbolic_points must be >= 0")
        need(1 <= v["hyperbolic_horizon"] <= 10 ** 6, "hyperbolic_horizon must lie in [1, 1e6]")
    if k == "basin":
        need(v["census_tol"] > 0, "census_tol must be positive")
        need(v["census_horizon"] >= 1, "census_horizon must be >= 1")
        need(1 <= v["dictionary_K"] <= 6, "dictionary_K must lie in [1, 6]")
    if k == "audit":
        need(v["i_max"] >= 0, "i_max must be >= 0")
        need(not v["bad_partition"] or v["measure"] == "atomic",
             "bad_partition needs an atomic measure to place on the moved sphere")


def _fmt_value(typ, v):
    if typ in ("ints", "floats"):
        return " ".join(repr(x) if typ == "floats" else str(x) for x in v)
    if typ == "bool":
        return "true" if v else "false"
    if typ == "float":
        return repr(v)
    return str(v)


def serialize(cfg: ExperimentConfig, full: bool = False) -> str:
    """Canonical text: schema, kind, model, then the other keys sorted.

    Only explicitly given keys are written unless ``full``.
    """
    keys = [k for k in (sorted(cfg.values) if full else cfg.given) if cfg.values[k] is not None]
    order = [k for k in ("kind", "model") if k in keys] + sorted(k for k in keys if k not in ("kind", "model"))
    lines = [f"schema = {SCHEMA_VERSION}"]
    for k in order:
        lines.append(f"{k} = {_fmt_value(_SCHEMA[k][0], cfg.values[k])}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical text with defaults filled in (output location excluded)."""
    vals = dict(cfg.values)
    vals.pop("out_dir", None)
    tmp = ExperimentConfig(vals, tuple(sorted(vals)))
    return hashlib.sha256(serialize(tmp, full=True).encode()).hexdigest()


def task_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream for a named task, derived from the master seed."""
    digest = hashlib.sha256(label.encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + words))


# --- registry ------------------------------------------------------------------

_REGISTRY = (
    ("entropy", "partial-entropy formula through plaque-refined small-boundary partitions",
     ("model",), "Estimate h along the unstable foliation and write the (m, H_m/m) sequence."),
    ("gibbs", "Ruelle inequality and its equality case for Gibbs u-states",
     ("model",), "Compare partial entropy with the integral of log Jac^u and classify the residual."),
    ("sweep", "upper semi-continuity of partial entropy under C^1 perturbation",
     ("model", "eps_grid"), "Perturbation sweep of h, log Jac^u and residuals with one shared partition."),
    ("certificate", "mostly contracting and mostly expanding centre criteria",
     ("model", "direction"), "Centre certificate on u-state approximants and its openness under perturbation."),
    ("basin", "uniqueness of the physical measure and the volume of its basin",
     ("model", "grid"), "Assign grid points to candidate measures by finite-time averages."),
    ("audit", "small-boundary partition construction",
     ("model",), "Build a small-boundary partition and audit its boundary decay."),
)


def list_experiments() -> list:
    """Catalogue of experiment kinds in a fixed order."""
    out = []
    for name, anchor, required, desc in _REGISTRY:
        optional = sorted(k for k, spec in _SCHEMA.items() if name in spec[2] and k not in required and k != "kind")
        out.append({"name": name, "anchor": anchor, "required": list(required), "optional": optional,
                    "description": desc})
    return out


# --- model construction ------------------------------------------------------------

def _parse_bumps(text):
    from .dynamics import Bump

    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split()
        try:
            comp, amp = int(parts[0]), float(parts[1])
            rest = parts[2:]
            phase = float(rest[-1]) if len(rest) in (3, 4) and "." in rest[-1] else 0.0
            ks = rest[:-1] if len(rest) in (3, 4) and "." in rest[-1] else rest
            if not ks:
                raise ValueError
            out.append(Bump(comp, amp, tuple(int(k) for k in ks), phase))
        except (IndexError, ValueError):
            raise ConfigError(f"bump {chunk!r}: expected 'component amplitude k1 .. kd [phase]'") from None
    return tuple(out)


def _parse_fiber_terms(text):
    from .dynamics import FiberTerm

    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split()
        try:
            amp, k1, k2, q = float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])
            phase = float(parts[4]) if len(parts) > 4 else 0.0
        except (IndexError, ValueError):
            raise ConfigError(f"fibre term {chunk!r}: expected 'amplitude kx1 kx2 q [phase]'") from None
        out.append(FiberTerm(amp, (k1, k2), q, phase))
    return tuple(out)


def _linear(name, matrix=None):
    from .dynamics import cat_map, linear_automorphism, t3_automorphism

    if name == "cat":
        return cat_map()
    if name == "cat2":
        return linear_automorphism([[5, 3], [3, 2]], (1, 0, 1), name="cat2", params=())
    if name == "t3":
        return t3_automorphism(np.reshape(matrix, (3, 3))) if matrix else t3_automorphism()
    raise ConfigError(f"{name!r} is not a linear base model")


def build_model(values: dict, eps: Optional[float] = None):
    """Model named by a configuration; ``eps`` overrides the perturbation size."""
    from .dynamics import FiberSpec, FiberTerm, dfa_perturbation, skew_product

    name = values["model"]
    e = values.get("eps", 0.0) if eps is None else eps
    bumps = _parse_bumps(values.get("bumps", "")) or None
    if name in ("cat", "cat2", "t3"):
        model = _linear(name, values.get("matrix"))
    elif name == "dfa":
        return dfa_perturbation(_linear(values.get("base") or "cat", values.get("matrix")), e, bumps)
    else:
        base = _linear(values.get("base") or "cat2")
        fiber = values.get("fiber", "contracting")
        if fiber == "contracting":
            spec = FiberSpec(0.0, (FiberTerm(0.1),))
        elif fiber == "rigid":
            alpha = values.get("fiber_alpha")
            spec = FiberSpec((math.sqrt(5) - 1) / 2 if alpha is None else alpha, ())
        else:
            spec = FiberSpec(values.get("fiber_alpha") or 0.0, _parse_fiber_terms(values.get("fiber_terms", "")))
        model = skew_product(base, spec)
    if e:
        model = dfa_perturbation(model, e, bumps)
    return model


# --- run ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    kind: str
    versions: dict
    wall_time: float
    outputs: list
    passed: bool
    out_dir: str
    verdict: dict = field(default_factory=dict)


def _versions():
    import scipy

    return {"fentropy": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _csv(header, rows) -> str:
    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if v is None:
            return ""
        return str(v)

    lines = [",".join(header)] + [",".join(cell(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serialisable")


def _measure(values, model, label="measure"):
    from .measures import EmpiricalMeasure, birkhoff_measure, u_state_approximant

    seed = values["seed"]
    kind = values.get("measure", "birkhoff")
    if kind == "atomic":
        return EmpiricalMeasure.dirac(np.asarray(values["atomic_point"], dtype=float), seed=seed,
                                      map_id=model.name, params=model.params)
    if kind == "ustate":
        rng = task_rng(seed, label + ":ustate")
        return u_state_approximant(model, values["plaques"], values["iterations"], values["samples_per_step"],
                                   values["plaque_radius"], seed=int(rng.integers(2 ** 31)))
    z = values.get("seed_point")
    if z is None:
        z = task_rng(seed, label + ":seed_point").random(model.dimension)
    if len(z) != model.dimension:
        raise ConfigError(f"seed_point needs {model.dimension} coordinates")
    return birkhoff_measure(model, z, values["burn_in"], values["samples"], seed=seed)


def _estimator_setup(values, model, measures, slot_label="partition"):
    from .foliation import build_atlas
    from .partitions import small_boundary_partition

    atlas = build_atlas(model, values["atlas_hint"], quantizer_fraction=values["quantizer_fraction"],
                        seed=int(task_rng(values["seed"], "atlas").integers(2 ** 31)))
    part = small_boundary_partition(measures, values["R"], values["lambda"], values["lambda_p"],
                                    seed=int(task_rng(values["seed"], slot_label).integers(2 ** 31)))
    return atlas, part


def _target_entropy(model):
    if model.matrix is None:
        return None
    ev = np.abs(np.linalg.eigvals(model.matrix))
    return float(np.log(ev.max()))


def _estimate(values, model, mu, atlas, part, **kw):
    from .entropy import partial_entropy

    return partial_entropy(model, mu, atlas, part, values["m_max"], chart_rule=values["chart_rule"],
                           cell_fraction=values["cell_fraction"], miller_madow=values["miller_madow"], **kw)


def _run_entropy(cfg, files):
    from .foliation import build_atlas

    v = cfg.values
    model = build_model(v)
    mu = _measure(v, model)
    atlas, part = _estimator_setup(v, model, [mu])
    est = _estimate(v, model, mu, atlas, part)
    rows = [(m, hm, inc, k) for (m, hm), inc, k in zip(est.sequence, est.increments, est.cells)]
    files["entropy_sequence.csv"] = _csv(("m", "h_m", "increment", "cells"), rows)
    target = _target_entropy(model)
    rel = None if target is None or target == 0 else abs(est.h - target) / target
    sens = []
    for qf in v["sensitivity_fractions"]:
        a2 = build_atlas(model, v["atlas_hint"], quantizer_fraction=qf,
                         seed=int(task_rng(v["seed"], "atlas").integers(2 ** 31)))
        try:
            e2 = _estimate(v, model, mu, a2, part)
            sens.append((qf, a2.w, e2.h, e2.m_star, e2.cells[e2.m_star - 1], ""))
        except (RuntimeError, ValueError) as exc:
            sens.append((qf, a2.w, None, None, None, f"{type(exc).__name__}: {exc}"))
    if sens:
        files["quantizer_sensitivity.csv"] = _csv(("fraction", "scale", "h", "m_star", "cells", "error"), sens)
    ok = est.monotone_ok and (rel is None or rel <= v["target_tol"])
    verdict = {"h": est.h, "m_star": est.m_star, "target": target, "relative_error": rel,
               "monotone_ok": est.monotone_ok, "violations": est.violations, "tolerance": est.tolerance,
               "truncated_at": est.truncated_at, "samples": est.samples, "descriptor": est.descriptor,
               "target_tol": v["target_tol"], "passed": ok}
    return ok, verdict


def _run_gibbs(cfg, files):
    from .entropy import gibbs_report

    v = cfg.values
    model = build_model(v)
    mu = _measure(v, model)
    atlas, part = _estimator_setup(v, model, [mu])
    rep = gibbs_report(model, mu, atlas, part, v["m_max"], v["tol"], chart_rule=v["chart_rule"],
                       cell_fraction=v["cell_fraction"], miller_madow=v["miller_madow"])
    files["gibbs.csv"] = _csv(("h", "jac", "residual", "verdict", "tol", "m_star", "samples"),
                              [(rep.h.h, rep.jac_integral, rep.residual, rep.verdict, rep.tol, rep.h.m_star,
                                rep.h.samples)])
    ok = rep.verdict != "violation" and rep.h.monotone_ok
    verdict = {"h": rep.h.h, "jac": rep.jac_integral, "residual": rep.residual, "verdict": rep.verdict,
               "tol": rep.tol, "monotone_ok": rep.h.monotone_ok, "sequence": rep.h.sequence, "passed": ok}
    return ok, verdict


def _run_sweep(cfg, files):
    from .entropy import SWEEP_COLUMNS, SweepConfig, semicontinuity_sweep
    from .measures import worker_count

    v = cfg.values
    sc = SweepConfig(R=v["R"], lam=v["lambda"], lam_p=v["lambda_p"], m_max=v["m_max"], atlas_hint=v["atlas_hint"],
                     plaques=v["plaques"], iterations=v["iterations"], samples_per_step=v["samples_per_step"],
                     plaque_radius=v["plaque_radius"], seed=int(task_rng(v["seed"], "sweep").integers(2 ** 31)),
                     tol=v["tol"], slack=v["slack"], eps_threshold=v["eps_threshold"], chart_rule=v["chart_rule"],
                     quantizer_fraction=v["quantizer_fraction"], workers=worker_count())
    base = dict(v)
    res = semicontinuity_sweep(lambda e: build_model(base, eps=e), v["eps_grid"], sc)
    files["sweep.csv"] = res.csv_text()
    ok = res.semicontinuity_ok and res.residuals_ok and not any(f["eps"] == 0.0 for f in res.failures)
    verdict = {"semicontinuity_ok": res.semicontinuity_ok, "residuals_ok": res.residuals_ok,
               "failures": res.failures, "slack": v["slack"], "tol": v["tol"], "columns": list(SWEEP_COLUMNS),
               "sequences": {repr(e): est.sequence for e, est in res.estimates.items()},
               "monotone_ok": all(est.monotone_ok for est in res.estimates.values()), "passed": ok}
    return ok, verdict


def _run_certificate(cfg, files):
    from .entropy import center_certificate, certificate_holds
    from .measures import hyperbolic_time_density, stratified_grid, u_state_approximant

    v = cfg.values
    model = build_model(v)

    def ustates(m, label):
        rng = task_rng(v["seed"], label)
        return [u_state_approximant(m, v["plaques"], v["iterations"], v["samples_per_step"], v["plaque_radius"],
                                    seed=int(rng.integers(2 ** 31)))]

    mus = ustates(model, "ustate:0")
    cert = center_certificate(model, mus, v["direction"], v["N_grid"], floor=v["floor"])
    rows = [(v["direction"], N, 0, vals[0]) for N, vals in cert.table]
    files["certificate.csv"] = _csv(("direction", "N", "measure", "integral"), rows)
    open_rows = []
    openness = None
    if cert.passed and v["perturb_eps"]:
        openness = True
        for e in sorted(v["perturb_eps"])[:2]:
            pm = build_model(v, eps=e)
            holds, vals = certificate_holds(pm, ustates(pm, f"ustate:{e!r}"), v["direction"], cert.N, cert.a / 2)
            open_rows.append((e, cert.N, cert.a / 2, vals[0], holds))
            openness = openness and holds
        files["openness.csv"] = _csv(("eps", "N", "a", "integral", "holds"), open_rows)
    density = None
    if cert.passed and v["direction"] == "expanding" and v["hyperbolic_points"] > 0:
        rng = task_rng(v["seed"], "hyperbolic")
        n = v["hyperbolic_points"]
        X = stratified_grid(model.dimension, max(1, round(n ** (1 / model.dimension))), rng)[:n]
        dens = hyperbolic_time_density(model, X, cert.a, v["hyperbolic_horizon"], block=cert.N)
        files["hyperbolic_times.csv"] = _csv(("point", "density"), list(enumerate(dens.tolist())))
        density = float(dens.min())
    achieved = cert.passed and (openness is None or openness) and (density is None or density > 0)
    ok = achieved if v["expect"] == "pass" else not cert.passed
    verdict = {"direction": v["direction"], "passed_certificate": cert.passed, "N": cert.N, "a": cert.a,
               "integrals": cert.integrals, "openness": openness, "min_hyperbolic_density": density,
               "expect": v["expect"], "passed": ok}
    return ok, verdict


def _run_basin(cfg, files):
    from .measures import basin_census, worker_count

    v = cfg.values
    model = build_model(v)
    vals = dict(v)
    vals["measure"] = "birkhoff"
    cand = _measure(vals, model, "candidate")
    grid = v["grid"] if len(v["grid"]) == model.dimension else (v["grid"][0],) * model.dimension
    census = basin_census(model, tuple(grid), [cand], v["census_horizon"], v["census_tol"], K=v["dictionary_K"],
                          seed=int(task_rng(v["seed"], "census").integers(2 ** 31)), workers=worker_count())
    rows = [(i, f) for i, f in enumerate(census.fractions)] + [("unresolved", census.unresolved)]
    files["basin.csv"] = _csv(("candidate", "fraction"), rows)
    ok = census.fractions[0] >= v["min_fraction"]
    verdict = {"fractions": census.fractions, "unresolved": census.unresolved, "grid": list(census.grid),
               "tol": census.tol, "K": census.K, "horizon": census.horizon, "min_fraction": v["min_fraction"],
               "passed": ok}
    return ok, verdict


def _run_audit(cfg, files):
    from .partitions import FinitePartition, boundary_decay_audit, small_boundary_partition

    v = cfg.values
    model = build_model(v)
    mu = _measure(v, model)
    part = small_boundary_partition([mu], v["R"], v["lambda"], v["lambda_p"],
                                    seed=int(task_rng(v["seed"], "partition").integers(2 ** 31)))
    if v["bad_partition"]:
        part = _sphere_through(part, mu.points[int(np.argmax(mu.weights))])
    rep = boundary_decay_audit(part, mu, v["i_max"])
    files["audit.csv"] = _csv(("i", "width", "mass", "bound", "ok"), rep.table)
    files["partition.json"] = part.to_json() + "\n"
    files["samples.csv"] = None  # written by EmpiricalMeasure.to_csv
    verdict = {"passed": rep.passed, "failures": rep.failures, "constant": rep.constant, "balls": part.ball_count}
    return rep.passed, verdict, mu


def _sphere_through(part, x):
    """One-ball partition whose sphere passes through ``x``.

    It carries the constant the construction gives a single unobstructed ball
    (``t = 1``, ``D = 1``), a claim the audit should refute when ``x`` is heavy.
    """
    from .partitions import FinitePartition

    c = np.mod(np.asarray(x, dtype=float) + 0.375 * part.R / math.sqrt(x.size), 1.0)
    r = 0.375 * part.R
    return FinitePartition(c[None, :], np.array([r]), part.R, part.lam, part.lam_p, part.n_max,
                           np.ones(1), [1.0], {"adversarial": True, "through": np.asarray(x).tolist()})


_RUNNERS = {"entropy": _run_entropy, "gibbs": _run_gibbs, "sweep": _run_sweep, "certificate": _run_certificate,
            "basin": _run_basin, "audit": _run_audit}


def run(cfg: ExperimentConfig, out_dir=None) -> RunRecord:
    """Run an experiment and write its outputs and ``manifest.json``.

    Nothing is written when the computation raises.
    """
    t0 = time.perf_counter()
    files = {}
    out = _RUNNERS[cfg.kind](cfg, files)
    mu = None
    if cfg.kind == "audit":
        ok, verdict, mu = out
    else:
        ok, verdict = out
    target = Path(out_dir if out_dir is not None else cfg.values["out_dir"])
    target.mkdir(parents=True, exist_ok=True)
    files["config.txt"] = serialize(cfg)
    files["verdict.json"] = _json(dict(verdict, kind=cfg.kind, config_hash=config_hash(cfg)))
    manifest = []
    for name in sorted(files):
        path = target / name
        if files[name] is None:
            mu.to_csv(path)
        else:
            path.write_text(files[name], encoding="utf-8", newline="\n")
        data = path.read_bytes()
        manifest.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    rec = RunRecord(config_hash(cfg), cfg.kind, _versions(), time.perf_counter() - t0, manifest, bool(ok),
                    str(target), verdict)
    (target / "manifest.json").write_text(_json({
        "config_hash": rec.config_hash, "kind": rec.kind, "versions": rec.versions, "wall_time": rec.wall_time,
        "outputs": rec.outputs, "passed": rec.passed, "workers": int(os.environ.get("FE_WORKERS", "1") or 1),
    }), encoding="utf-8")
    return rec
