"""Partial entropy along the unstable foliation and checks built on it.

The estimator conditions the join of future partitions on the plaque
refinement of a small-boundary partition and reports

    h = min_m (1/m) H( A_1 v ... v A_m | A^F ),

where ``A_j`` is the small-boundary partition read at time ``j`` and ``A^F``
its refinement by quantised local plaques at time 0.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import DominationError, MapModel, splitting_batch, unstable_log_jacobian_batch
from .measures import EmpiricalMeasure, parallel_map, restricted_growth
from .partitions import (
    FinitePartition,
    boundary_decay_audit,
    compact_labels,
    label_conditional_entropy,
    label_entropy,
    refine_with_plaques,
)

__all__ = [
    "EntropyEstimate",
    "GibbsReport",
    "CenterCertificate",
    "SweepConfig",
    "SweepResult",
    "PreconditionError",
    "UndersamplingError",
    "UndersamplingWarning",
    "partial_entropy",
    "jacobian_integral",
    "gibbs_report",
    "center_certificate",
    "certificate_holds",
    "semicontinuity_sweep",
    "SWEEP_COLUMNS",
]


class PreconditionError(ValueError):
    """Raised when a partition or atlas does not meet the estimator's requirements."""


class UndersamplingError(RuntimeError):
    """Raised when the first refinement already has too many occupied cells."""


class UndersamplingWarning(UserWarning):
    pass


@dataclass
class EntropyEstimate:
    """Estimated partial entropy with the full ``(m, H_m / m)`` sequence."""

    h: float
    sequence: list
    m_star: int
    samples: int
    cells: list
    increments: list
    truncated_at: Optional[int]
    monotone_ok: bool
    violations: list
    tolerance: float
    descriptor: dict = field(default_factory=dict)


def partial_entropy(model: MapModel, mu: EmpiricalMeasure, atlas, part: FinitePartition, m_max: int = 8, *,
                    chart_rule: str = "voronoi", cell_fraction: float = 0.1, miller_madow: bool = False,
                    audit: bool = True, audit_slot: int = 0, audit_constant: Optional[float] = None,
                    refined_future: bool = False) -> EntropyEstimate:
    """Partial entropy of ``mu`` along the unstable foliation.

    For ``m = 1..m_max`` computes ``(1/m) H(A_1 v ... v A_m | A^F)`` with
    ``A_j`` the partition ``part`` at time ``j`` (or its plaque refinement when
    ``refined_future``).  The join is built incrementally.  When the number of
    occupied cells exceeds ``cell_fraction * samples`` the sequence is cut
    there with an :class:`UndersamplingWarning`.  Successive averages may rise
    by at most ``3 / sqrt(samples)``; larger rises are listed in ``violations``.

    Raises
    ------
    PreconditionError
        If ``m_max < 2``, the partition is not finer than the Lebesgue radius or
        it fails the boundary-decay audit for ``mu``.
    UndersamplingError
        If already ``m = 1`` is undersampled.
    """
    if m_max < 2:
        raise PreconditionError("m_max must be >= 2")
    if part.R >= atlas.r0:
        raise PreconditionError(f"partition diameter {part.R:.4g} is not below r0 = {atlas.r0:.4g}")
    if audit:
        rep = boundary_decay_audit(part, mu, 8, audit_slot, audit_constant)
        if not rep.passed:
            raise PreconditionError(f"partition fails the boundary-decay audit at i = {rep.failures}")
    base = refine_with_plaques(part, atlas, chart_rule)
    X, w = mu.points, mu.weights
    N = mu.size
    L0 = compact_labels(base(X))
    L = L0
    Y = X
    seq, cells, incs = [], [], []
    prev_H = 0.0
    truncated = None
    for m in range(1, m_max + 1):
        Y = model.f(Y)
        col = base(Y) if refined_future else part.bits(Y)
        L = compact_labels(np.concatenate([L[:, None], col], axis=1))
        k = int(L.max()) + 1
        # a single cell is resolved exactly whatever the sample size
        if k > 1 and k > cell_fraction * N:
            truncated = m
            if not seq:
                raise UndersamplingError(f"{k} occupied cells at m = 1 exceed {cell_fraction} x {N} samples")
            warnings.warn(f"sequence truncated at m = {m}: {k} cells for {N} samples", UndersamplingWarning,
                          stacklevel=2)
            break
        Hm, _, _ = label_conditional_entropy(L, L0, w, miller_madow, N)
        seq.append((m, Hm / m + 0.0))  # no signed zero
        cells.append(k)
        incs.append(Hm - prev_H)
        prev_H = Hm
    vals = [v for _, v in seq]
    j = int(np.argmin(vals))
    tol = 3.0 / math.sqrt(N)
    viol = [seq[i][0] for i in range(1, len(seq)) if vals[i] - vals[i - 1] > tol]
    desc = {
        "partition_balls": part.ball_count,
        "R": part.R,
        "r0": atlas.r0,
        "quantizer_scale": atlas.w,
        "chart_rule": chart_rule,
        "time0_cells": int(L0.max()) + 1,
    }
    return EntropyEstimate(float(vals[j]), seq, seq[j][0], N, cells, incs, truncated, not viol, viol, tol, desc)


def jacobian_integral(model: MapModel, mu: EmpiricalMeasure, horizon: int = 30, chunk: int = 20_000) -> float:
    """``mu``-average of ``log Jac^u``, summed chunk by chunk in a fixed order."""
    total = 0.0
    for lo in range(0, mu.size, chunk):
        X = mu.points[lo:lo + chunk]
        E = splitting_batch(model, X, horizon, bundles={"u"})["u"]
        total += float(mu.weights[lo:lo + chunk] @ unstable_log_jacobian_batch(model, X, E))
    return total


@dataclass
class GibbsReport:
    h: EntropyEstimate
    jac_integral: float
    residual: float
    verdict: str
    tol: float


def _verdict(residual, tol):
    if residual < -tol:
        return "violation"
    if residual > tol:
        return "strictly-subcritical"
    return "gibbs-consistent"


def gibbs_report(model: MapModel, mu: EmpiricalMeasure, atlas, part: FinitePartition, m_max: int = 8,
                 tol: float = 0.06, **kw) -> GibbsReport:
    """Compare partial entropy with ``int log Jac^u``; ``residual = jac - h``."""
    est = partial_entropy(model, mu, atlas, part, m_max, **kw)
    jac = jacobian_integral(model, mu)
    res = jac - est.h
    # with tol = 0 only an exact zero residual would count as consistent
    verdict = _verdict(res, tol) if tol > 0 else ("violation" if res < 0 else "strictly-subcritical")
    return GibbsReport(est, jac, res, verdict, tol)


# --- centre certificates -------------------------------------------------------

@dataclass
class CenterCertificate:
    N: Optional[int]
    a: Optional[float]
    integrals: list
    direction: str
    passed: bool
    table: list = field(default_factory=list)


def _certificate_integrals(model, u_states, direction, N, max_points, frame_horizon):
    if direction == "contracting":
        bundle, n = "cs", N
    elif direction == "expanding":
        bundle, n = "cu", -N
    else:
        raise ValueError(f"direction must be 'contracting' or 'expanding', not {direction!r}")
    out = []
    for mu in u_states:
        step = max(1, int(math.ceil(mu.size / max_points)))
        X = mu.points[::step]
        wt = mu.weights[::step] / mu.weights[::step].sum()
        out.append(float(wt @ restricted_growth(model, X, bundle, n, frame_horizon)) / N)
    return out


def center_certificate(model: MapModel, u_states: Sequence[EmpiricalMeasure], direction: str,
                       N_grid: Sequence[int], floor: float = 1e-8, max_points: int = 2000,
                       frame_horizon: int = 30) -> CenterCertificate:
    """Smallest ``N`` in ``N_grid`` with every ``int (1/N) log |Df^{+-N}|`` negative.

    ``contracting`` uses ``Df^N`` on ``E^cs``; ``expanding`` uses ``Df^{-N}`` on
    ``E^cu``.  Integrals above ``-floor`` count as zero (numerical floor).  On
    success ``a = N |worst integral| / 2``.
    """
    if not u_states:
        raise ValueError("at least one u-state is required")
    table = []
    for N in sorted(int(v) for v in N_grid):
        if N < 1:
            raise ValueError("N must be positive")
        vals = _certificate_integrals(model, u_states, direction, N, max_points, frame_horizon)
        table.append((N, vals))
        worst = max(vals)
        if worst < -floor:
            return CenterCertificate(N, N * abs(worst) / 2.0, vals, direction, True, table)
    return CenterCertificate(None, None, table[-1][1] if table else [], direction, False, table)


def certificate_holds(model: MapModel, u_states: Sequence[EmpiricalMeasure], direction: str, N: int, a: float,
                      max_points: int = 2000, frame_horizon: int = 30):
    """``(all integrals < -a/N, integrals)`` at a fixed ``(N, a)``."""
    vals = _certificate_integrals(model, u_states, direction, N, max_points, frame_horizon)
    return all(v < -a / N for v in vals), vals


# --- semi-continuity sweep ---------------------------------------------------------

SWEEP_COLUMNS = ("eps", "h", "jac", "residual", "m_star", "cells", "samples", "seed")


@dataclass
class SweepConfig:
    R: float = 0.29
    lam: float = 0.38
    lam_p: float = 0.6
    m_max: int = 8
    atlas_hint: int = 64
    quantizer_fraction: float = 0.0625
    cell_fraction: float = 0.1
    miller_madow: bool = False
    plaques: int = 400
    iterations: int = 20
    samples_per_step: int = 25
    plaque_radius: float = 0.1
    seed: int = 0
    tol: float = 0.06
    slack: float = 0.08
    eps_threshold: float = 0.02
    chart_rule: str = "voronoi"
    workers: int = 1


@dataclass
class SweepResult:
    rows: list
    failures: list
    semicontinuity_ok: bool
    residuals_ok: bool
    config: dict
    estimates: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        lines = [",".join(SWEEP_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[c]) for c in SWEEP_COLUMNS))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


_SWEEP = {}


def _sweep_measure(family, eps, cfg):
    from .measures import u_state_approximant

    model = family(eps)
    mu = u_state_approximant(model, cfg.plaques, cfg.iterations, cfg.samples_per_step, cfg.plaque_radius,
                             seed=cfg.seed)
    return model, mu


def _sweep_measure_task(eps):
    family, cfg = _SWEEP["args"]
    try:
        model, mu = _sweep_measure(family, eps, cfg)
        return eps, mu.points, None
    except (DominationError, ValueError, RuntimeError) as exc:
        return eps, None, f"{type(exc).__name__}: {exc}"


def _sweep_row_task(eps):
    from .foliation import build_atlas

    family, cfg = _SWEEP["args"]
    part, measures = _SWEEP["part"], _SWEEP["measures"]
    model = family(eps)
    mu = measures[eps]
    atlas = build_atlas(model, cfg.atlas_hint, quantizer_fraction=cfg.quantizer_fraction, seed=cfg.seed)
    slot = _SWEEP["slots"][eps]
    try:
        est = partial_entropy(model, mu, atlas, part, cfg.m_max, chart_rule=cfg.chart_rule, audit_slot=slot,
                              cell_fraction=cfg.cell_fraction, miller_madow=cfg.miller_madow)
    except (PreconditionError, UndersamplingError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    return est, jacobian_integral(model, mu), None


def semicontinuity_sweep(family: Callable[[float], MapModel], eps_grid: Sequence[float],
                         config: Optional[SweepConfig] = None) -> SweepResult:
    """Partial entropy, ``int log Jac^u`` and residual for each ``eps``.

    One partition, built from the approximants of every admissible ``eps``,
    serves all rows.  Rows whose map cannot be built (e.g. domination lost) are
    recorded in ``failures`` and skipped.  The semi-continuity check asks
    ``h(eps) <= h(0) + slack`` for ``eps <= eps_threshold``; the residual check
    asks ``|jac - h| <= slack`` on every admissible row.
    """
    from .measures import EmpiricalMeasure
    from .partitions import small_boundary_partition

    cfg = config or SweepConfig()
    grid = [float(e) for e in eps_grid]
    if 0.0 not in grid:
        raise ValueError("eps_grid must contain 0")
    grid = sorted(set(grid), key=lambda e: (e != 0.0, e))
    _SWEEP["args"] = (family, cfg)
    try:
        got = parallel_map(_sweep_measure_task, grid, cfg.workers)
        measures, failures = {}, []
        for eps, pts, err in got:
            if err is None:
                measures[eps] = EmpiricalMeasure.uniform(pts, provenance="leaf_pushforward", seed=cfg.seed)
            else:
                failures.append({"eps": eps, "error": err})
        ok_eps = [e for e in grid if e in measures]
        if 0.0 not in measures:
            raise RuntimeError("the unperturbed row failed; nothing to compare against")
        part = small_boundary_partition([measures[e] for e in ok_eps], cfg.R, cfg.lam, cfg.lam_p, seed=cfg.seed)
        _SWEEP.update(part=part, measures=measures, slots={e: k for k, e in enumerate(ok_eps)})
        results = parallel_map(_sweep_row_task, ok_eps, cfg.workers)
    finally:
        _SWEEP.clear()
    rows, estimates = [], {}
    for eps, (est, jac, err) in zip(ok_eps, results):
        if err is not None:
            failures.append({"eps": eps, "error": err})
            continue
        rows.append({"eps": eps, "h": est.h, "jac": jac, "residual": jac - est.h, "m_star": est.m_star,
                     "cells": est.cells[est.m_star - 1], "samples": est.samples, "seed": cfg.seed})
        estimates[eps] = est
    if not rows or rows[0]["eps"] != 0.0:
        raise RuntimeError("the unperturbed row failed; nothing to compare against")
    h0 = rows[0]["h"]
    semi = all(r["h"] <= h0 + cfg.slack for r in rows if r["eps"] <= cfg.eps_threshold)
    resid = all(abs(r["residual"]) <= cfg.slack for r in rows)
    return SweepResult(rows, failures, semi, resid, asdict(cfg), estimates)
