"""Finite partitions of the torus with small boundaries, and their entropies.

A partition is the common refinement of ball/complement pairs
``{B_r(c), B_r(c)^c}``.  A point's cell is the bit pattern of the balls that
contain it.  Radii are picked so that thin annuli around every sphere carry
exponentially little mass for all supplied measures, which gives the
boundary-decay bound ``nu(B_{lam^i}(boundary)) <= C lam_p^i``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import MapModel, torus_distance

__all__ = [
    "FinitePartition",
    "CellIdFunction",
    "EntropyValue",
    "AuditResult",
    "PartitionError",
    "select_radius",
    "radius_select",
    "small_boundary_partition",
    "boundary_decay_audit",
    "refine_with_plaques",
    "dynamical_refinement",
    "compact_labels",
    "label_entropy",
    "partition_ids",
    "label_conditional_entropy",
    "entropy_of_partition",
    "conditional_entropy",
]

_BITS = 62


class PartitionError(RuntimeError):
    """Raised when no admissible radius or centre set exists."""


# --- radius selection --------------------------------------------------------

def _check_rates(lam, lam_p):
    if not 0.0 < lam < lam_p < 1.0:
        raise ValueError(f"need 0 < lambda < lambda_p < 1, got {lam}, {lam_p}")


def _tail_start(lam, lam_p, length):
    # smallest n0 with sum_{n >= n0} 4 (lam/lam_p)^n below the candidate interval length
    q = lam / lam_p
    n0 = 1
    while 4.0 * q ** n0 / (1.0 - q) >= length and n0 < 10_000:
        n0 += 1
    return n0


def select_radius(distances, weights, R: float, lam: float, lam_p: float, n_max: int = 8,
                  n_candidates: int = 48, d_slack: float = 1.5):
    """Radius ``r`` in ``(R/2, R)`` with ``mu([r - lam^n, r + lam^n]) <= D lam_p^n``.

    ``distances``/``weights`` describe a finite measure on ``[0, inf)``.  Candidates
    are scanned from the top of the interval down.  Those inside a bad set
    ``J_n = {r : mu([r - lam^n, r + lam^n]) > lam_p^n}`` for some ``n`` in the
    tail ``[n0, n_max]`` are rejected, where the tail is where the bad sets are
    too short to fill the interval.  Among the survivors the largest radius
    whose ``D = max(1, max_n mass_n / lam_p^n)`` is within ``d_slack`` times
    the best one wins.

    Returns
    -------
    r, D : float
    """
    _check_rates(lam, lam_p)
    if R <= 0:
        raise ValueError("R must be positive")
    d = np.asarray(distances, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(d, kind="stable")
    d, w = d[order], w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    frac = 1.0 - (np.arange(n_candidates) + 0.5) / n_candidates
    radii = R / 2 + (R / 2) * frac
    n = np.arange(n_max + 1)
    widths = lam ** n
    lo = np.searchsorted(d, radii[:, None] - widths[None, :], side="left")
    hi = np.searchsorted(d, radii[:, None] + widths[None, :], side="right")
    mass = cw[hi] - cw[lo]
    bound = lam_p ** n
    n0 = _tail_start(lam, lam_p, R / 2)
    tail = n >= n0
    bad = np.any((mass > bound[None, :]) & tail[None, :], axis=1)
    D = np.maximum(1.0, np.max(mass / bound[None, :], axis=1))
    D = np.where(bad, np.inf, D)
    if not np.isfinite(D).any():
        raise PartitionError("every candidate radius meets a bad set (sample pathology)")
    k = int(np.flatnonzero(D <= d_slack * D.min())[0])
    return float(radii[k]), float(D[k])


def _aggregate(measures):
    # nu = (1/K) sum_k nu_k / (k+1)^2
    K = len(measures)
    pts = np.concatenate([m.points for m in measures])
    w = np.concatenate([m.weights / (K * (k + 1) ** 2) for k, m in enumerate(measures)])
    return pts, w


def _default_n_max(measures, lam):
    N = max(m.points.shape[0] for m in measures)
    d = measures[0].points.shape[1]
    resolution = 0.5 * N ** (-1.0 / d)
    return max(8, int(math.ceil(math.log(resolution) / math.log(lam))))


def radius_select(center, measures, R: float, lam: float, lam_p: float, n_max: Optional[int] = None,
                  n_candidates: int = 48):
    """Radius about ``center`` for the aggregated measure of ``measures``.

    Returns ``(r, D)`` with ``r`` in ``(R/2, R)``.

    Raises
    ------
    ValueError
        If the rates are out of order or ``R >= 0.5``.
    """
    _check_rates(lam, lam_p)
    if not 0.0 < R < 0.5:
        raise ValueError("R must lie in (0, 0.5), the injectivity scale of the flat torus")
    if not measures:
        raise ValueError("no measures given")
    pts, w = _aggregate(measures)
    n_max = _default_n_max(measures, lam) if n_max is None else int(n_max)
    dist = torus_distance(pts, np.asarray(center, dtype=float)[None, :])
    return select_radius(dist, w, R, lam, lam_p, n_max, n_candidates)


# --- finite partitions -------------------------------------------------------

@dataclass
class FinitePartition:
    """Common refinement of the ball/complement pairs about ``centers``."""

    centers: np.ndarray
    radii: np.ndarray
    R: float
    lam: float
    lam_p: float
    n_max: int
    D: np.ndarray
    constants: list
    info: dict = field(default_factory=dict)

    @property
    def ball_count(self) -> int:
        return len(self.radii)

    @property
    def dimension(self) -> int:
        return self.centers.shape[1]

    def _dist(self, X, j):
        return torus_distance(X, self.centers[j][None, :])

    def bits(self, X) -> np.ndarray:
        """Cell words ``(N, W)``: bit ``j`` is set iff ``d(x, c_j) < r_j``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        W = (self.ball_count + _BITS - 1) // _BITS
        out = np.zeros((X.shape[0], W), dtype=np.int64)
        for j in range(self.ball_count):
            inside = self._dist(X, j) < self.radii[j]
            out[:, j // _BITS] |= inside.astype(np.int64) << (j % _BITS)
        return out

    def membership(self, X) -> np.ndarray:
        """Compact cell index of each point (labels are local to the call)."""
        return compact_labels(self.bits(X))

    def first_ball(self, X) -> np.ndarray:
        """Lowest index of a ball containing each point (-1 if uncovered)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], -1, dtype=np.int64)
        for j in range(self.ball_count - 1, -1, -1):
            out[self._dist(X, j) < self.radii[j]] = j
        return out

    def nearest_center(self, X) -> np.ndarray:
        """Index of the nearest centre (lowest index on ties)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        best = np.full(X.shape[0], np.inf)
        out = np.zeros(X.shape[0], dtype=np.int64)
        for j in range(self.ball_count):
            dj = self._dist(X, j)
            upd = dj < best
            best[upd] = dj[upd]
            out[upd] = j
        return out

    def boundary_distance(self, X) -> np.ndarray:
        """Exact distance to the union of the spheres, ``min_j |d(x, c_j) - r_j|``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], np.inf)
        for j in range(self.ball_count):
            np.minimum(out, np.abs(self._dist(X, j) - self.radii[j]), out=out)
        return out

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "radii": self.radii.tolist(),
            "R": self.R,
            "lambda": self.lam,
            "lambda_p": self.lam_p,
            "n_max": self.n_max,
            "D": self.D.tolist(),
            "constants": list(self.constants),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "FinitePartition":
        return cls(np.asarray(obj["centers"], dtype=float), np.asarray(obj["radii"], dtype=float),
                   float(obj["R"]), float(obj["lambda"]), float(obj["lambda_p"]), int(obj["n_max"]),
                   np.asarray(obj["D"], dtype=float), [float(c) for c in obj["constants"]])

    @classmethod
    def from_json(cls, text: str) -> "FinitePartition":
        return cls.from_dict(json.loads(text))


def small_boundary_partition(measures, R: float, lam: float, lam_p: float, *,
                             n_max: Optional[int] = None, n_candidates: int = 48,
                             check_points: int = 20_000, seed: int = 0, max_grid: int = 40) -> FinitePartition:
    """Small-boundary partition with cell diameters below ``R``.

    Balls are centred on a ``g^d`` grid, ``g`` increasing until sampled points of
    the torus and all sample points are covered.  Radii are selected in
    ``(R/4, R/2)`` so that every cell (inside some ball) has diameter below ``R``.
    The constant recorded for the measure in slot ``k`` is
    ``K (1 + k)^2 t D`` with ``t`` balls and ``D`` the largest radius constant.

    Raises
    ------
    ValueError
        On bad rates, ``R >= 0.5`` or an empty measure list.
    PartitionError
        If no grid up to ``max_grid`` covers the torus.
    """
    _check_rates(lam, lam_p)
    if not 0.0 < R < 0.5:
        raise ValueError("R must lie in (0, 0.5), the injectivity scale of the flat torus")
    if not measures:
        raise ValueError("no measures given")
    d = measures[0].points.shape[1]
    if any(m.points.shape[1] != d for m in measures):
        raise ValueError("measures live on tori of different dimension")
    pts, w = _aggregate(measures)
    n_max = _default_n_max(measures, lam) if n_max is None else int(n_max)
    rng = np.random.default_rng(seed)
    probe = np.concatenate([rng.random((check_points, d)), pts])
    g = max(2, int(math.ceil(math.sqrt(d) / R)))
    while g <= max_grid:
        grid = np.stack(np.meshgrid(*[np.arange(g)] * d, indexing="ij"), -1).reshape(-1, d)
        centers = (grid + 0.5) / g
        radii = np.empty(len(centers))
        Ds = np.empty(len(centers))
        covered = np.zeros(probe.shape[0], dtype=bool)
        for j, c in enumerate(centers):
            dist = torus_distance(pts, c[None, :])
            radii[j], Ds[j] = select_radius(dist, w, R / 2, lam, lam_p, n_max, n_candidates)
            covered |= torus_distance(probe, c[None, :]) < radii[j]
        if covered.all():
            K = len(measures)
            t = len(centers)
            Dmax = float(Ds.max())
            consts = [K * (1 + k) ** 2 * t * Dmax for k in range(K)]
            return FinitePartition(centers, radii, float(R), float(lam), float(lam_p), n_max, Ds, consts,
                                   info={"grid": g, "balls": t})
        g += 1
    raise PartitionError(f"no grid up to {max_grid} covers the torus at R={R}")


# --- audit -------------------------------------------------------------------

@dataclass
class AuditResult:
    passed: bool
    table: list
    failures: list
    constant: float


def boundary_decay_audit(p: FinitePartition, m, i_max: int = 8, slot: int = 0,
                         constant: Optional[float] = None) -> AuditResult:
    """Compare ``m(B_{lam^i}(boundary))`` with ``C lam_p^i`` for ``i = 0..i_max``.

    ``table`` rows are ``(i, width, mass, bound, ok)``.
    """
    C = p.constants[slot] if constant is None else float(constant)
    bd = p.boundary_distance(m.points)
    order = np.argsort(bd, kind="stable")
    bd_sorted = bd[order]
    cw = np.concatenate([[0.0], np.cumsum(m.weights[order])])
    rows, fails = [], []
    for i in range(i_max + 1):
        width = p.lam ** i
        mass = float(cw[np.searchsorted(bd_sorted, width, side="right")])
        bound = C * p.lam_p ** i
        ok = mass <= bound + 1e-12
        rows.append((i, width, mass, bound, ok))
        if not ok:
            fails.append(i)
    return AuditResult(not fails, rows, fails, C)


# --- cell id functions -------------------------------------------------------

@dataclass
class CellIdFunction:
    """Deterministic labelling ``(N, d) -> (N, columns)`` of integer ids."""

    fn: Callable
    description: str
    partition: Optional[FinitePartition] = None
    atlas: object = None

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.asarray(self.fn(X), dtype=np.int64)
        return out.reshape(X.shape[0], -1)


def partition_ids(p: FinitePartition) -> CellIdFunction:
    return CellIdFunction(p.bits, f"balls[{p.ball_count}]", partition=p)


def refine_with_plaques(p: FinitePartition, atlas, chart_rule: str = "voronoi") -> CellIdFunction:
    """Cells of ``p`` cut into quantised local plaques.

    The chart rule fixes the box whose transversal labels the plaques:

    ``"cell"``
        the box selected at the centre of the lowest-index ball containing the
        point, which depends on the cell only;
    ``"point"``
        the atlas chart selector at the point itself;
    ``"voronoi"``
        the box selected at the nearest ball centre ``c_j``, with transverse
        coordinates measured from the plaque through ``c_j``; the index ``j``
        joins the id.

    Each cell lies in a ball of radius below ``r0`` about any of its points, so
    every rule picks a box containing the whole cell.

    Raises
    ------
    ValueError
        If ``p.R >= atlas.r0`` or the rule is unknown.
    """
    from .foliation import plaque_id, transverse_coordinates

    if p.R >= atlas.r0:
        raise ValueError(f"partition diameter {p.R:.4g} is not below the Lebesgue radius {atlas.r0:.4g}")
    if chart_rule not in ("point", "cell", "voronoi"):
        raise ValueError(f"unknown chart rule {chart_rule!r}")
    center_chart = atlas.chart_selector(p.centers)
    if chart_rule == "voronoi":
        center_t = transverse_coordinates(atlas, p.centers, center_chart)

    def fn(X):
        if chart_rule == "point":
            box, cells = plaque_id(atlas, X)
            return np.concatenate([p.bits(X), box[:, None], cells], axis=1)
        if chart_rule == "cell":
            box, cells = plaque_id(atlas, X, boxes=center_chart[p.first_ball(X)])
            return np.concatenate([p.bits(X), box[:, None], cells], axis=1)
        j = p.nearest_center(X)
        T = transverse_coordinates(atlas, X, center_chart[j]) - center_t[j]
        cells = np.floor((T + 0.5 * atlas.w) / atlas.w).astype(np.int64)
        return np.concatenate([p.bits(X), j[:, None], cells], axis=1)

    return CellIdFunction(fn, f"plaques({chart_rule}) x balls[{p.ball_count}]", partition=p, atlas=atlas)


def dynamical_refinement(model: MapModel, base: CellIdFunction, m: int,
                         future: Optional[CellIdFunction] = None) -> CellIdFunction:
    """Join ``base(x), future(f x), ..., future(f^m x)``; ``future`` defaults to ``base``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    fut = base if future is None else future

    def fn(X):
        cols = [base(X)]
        Y = X
        for _ in range(m):
            Y = model.f(Y)
            cols.append(fut(Y))
        return np.concatenate(cols, axis=1)

    return CellIdFunction(fn, f"join_{m}({base.description})", partition=base.partition, atlas=base.atlas)


# --- entropy -----------------------------------------------------------------

@dataclass
class EntropyValue:
    value: float
    cells: int
    samples: int


def compact_labels(ids) -> np.ndarray:
    """Map rows of an integer id array to ``0..K-1`` (sorted row order)."""
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[:, None]
    if ids.shape[1] == 1:
        _, inv = np.unique(ids[:, 0], return_inverse=True)
    else:
        _, inv = np.unique(np.ascontiguousarray(ids), axis=0, return_inverse=True)
    return inv.ravel().astype(np.int64)


def _phi_sum(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def label_entropy(labels, weights) -> float:
    return _phi_sum(np.bincount(labels, weights=weights))


def label_conditional_entropy(xi, eta, weights, miller_madow: bool = False, samples: Optional[int] = None):
    """``H(xi | eta)`` two ways, ``(direct, chain)``; raises if they disagree beyond 1e-12."""
    joint = compact_labels(np.stack([eta, xi], axis=1))
    wj = np.bincount(joint, weights=weights)
    we = np.bincount(eta, weights=weights)
    # eta-cell of each joint cell
    first = np.zeros(wj.size, dtype=np.int64)
    first[joint] = eta
    pj = wj > 0
    cond = wj[pj] / we[first[pj]]
    direct = float(-np.sum(wj[pj] * np.log(cond)))
    chain = _phi_sum(wj) - _phi_sum(we)
    if abs(direct - chain) > 1e-12 * max(1.0, abs(direct)):
        raise AssertionError(f"direct {direct!r} and chain-rule {chain!r} conditional entropies disagree")
    if miller_madow:
        n = samples if samples is not None else weights.size
        corr = ((wj > 0).sum() - (we > 0).sum()) / (2.0 * n)
        direct += corr
        chain += corr
    return max(direct, 0.0), max(chain, 0.0), int((wj > 0).sum())


def entropy_of_partition(m, xi: CellIdFunction, miller_madow: bool = False) -> EntropyValue:
    """Plug-in ``sum phi(m(C))`` over occupied cells, ``phi(x) = -x log x``."""
    lab = compact_labels(xi(m.points))
    val = label_entropy(lab, m.weights)
    k = int(lab.max()) + 1
    if miller_madow:
        val += (k - 1) / (2.0 * m.points.shape[0])
    return EntropyValue(val, k, m.points.shape[0])


def conditional_entropy(m, xi: CellIdFunction, eta: CellIdFunction, miller_madow: bool = False) -> EntropyValue:
    """Mean conditional entropy ``H_m(xi | eta)``; checked against the chain rule."""
    a = compact_labels(xi(m.points))
    b = compact_labels(eta(m.points))
    direct, _, cells = label_conditional_entropy(a, b, m.weights, miller_madow, m.points.shape[0])
    return EntropyValue(direct, cells, m.points.shape[0])
