"""Unstable plaques and a finite foliation-box atlas.

Plaques are grown by iterating a short segment tangent to the estimated
unstable direction at a backward iterate and trimming it by arclength after
every step.  The atlas covers the torus with parallelepipeds written in the
splitting-adapted basis at their centres; each box carries a transverse
coordinate that is quantised into cells of width ``w``.

Only one-dimensional unstable bundles are supported.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import MapModel, splitting_batch, torus_distance, verify_domination, wrap

__all__ = [
    "Plaque",
    "FoliationAtlas",
    "FoliationDiscrepancy",
    "PlaqueGrowthError",
    "AtlasError",
    "grow_unstable_plaque",
    "grow_plaques_batch",
    "build_atlas",
    "plaque_id",
    "transverse_coordinates",
    "atlas_discrepancy",
]


class PlaqueGrowthError(RuntimeError):
    """Raised when the image of a segment is too short to be trimmed back."""


class AtlasError(ValueError):
    """Raised when boxes cannot cover the torus with a positive margin."""


# --- plaques -----------------------------------------------------------------

@dataclass
class Plaque:
    """Arclength-parameterised piece of unstable leaf through ``base``.

    ``points`` holds lifted coordinates (no wrap-around) at parameters ``s``;
    ``points[len(s) // 2]`` equals ``base``.
    """

    base: np.ndarray
    radius: float
    s: np.ndarray
    points: np.ndarray
    tangent: np.ndarray

    def param_lift(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(np.abs(s) > self.radius + 1e-12):
            raise ValueError("parameter outside the plaque")
        return np.stack([np.interp(s, self.s, self.points[:, j]) for j in range(self.points.shape[1])], axis=-1)

    def param(self, s):
        """Point of the plaque at arclength ``s`` (coordinates mod 1)."""
        return np.mod(self.param_lift(s), 1.0)

    def tangents(self) -> np.ndarray:
        """Unit tangents at the sample nodes (central differences)."""
        t = np.gradient(self.points, self.s, axis=0)
        return t / np.linalg.norm(t, axis=1, keepdims=True)


def _resample(P, radius, K):
    """Re-trim polylines ``P`` (N,M,d) to arclength ``[-radius, radius]`` about their middle node."""
    N, M, d = P.shape
    mid = M // 2
    seg = np.linalg.norm(np.diff(P, axis=1), axis=2)
    arc = np.concatenate([np.zeros((N, 1)), np.cumsum(seg, axis=1)], axis=1)
    arc -= arc[:, mid:mid + 1]
    if np.any(arc[:, 0] > -radius) or np.any(arc[:, -1] < radius):
        short = float(min(-arc[:, 0].min(), arc[:, -1].min()))
        raise PlaqueGrowthError(f"image half-length {short:.3g} below radius {radius:.3g}: expansion too weak")
    target = np.linspace(-radius, radius, K)
    span = arc[:, -1] - arc[:, 0] + 1.0
    offs = np.cumsum(np.concatenate([[0.0], span[:-1]]))
    flat = (arc - arc[:, :1] + offs[:, None]).ravel()
    tq = (target[None, :] - arc[:, :1] + offs[:, None]).ravel()
    idx = np.searchsorted(flat, tq, side="right").reshape(N, K) - np.arange(N)[:, None] * M
    idx = np.clip(idx, 1, M - 1)
    rows = np.arange(N)[:, None]
    a0, a1 = arc[rows, idx - 1], arc[rows, idx]
    frac = ((target[None, :] - a0) / np.where(a1 > a0, a1 - a0, 1.0))[..., None]
    out = P[rows, idx - 1] + frac * (P[rows, idx] - P[rows, idx - 1])
    out[:, K // 2] = P[:, mid]
    return out


def grow_plaques_batch(model: MapModel, X, radius: float, depth: int = 15, nodes: int = 65,
                       horizon: int = 30) -> np.ndarray:
    """Lifted plaque nodes ``(N, nodes, d)`` for every row of ``X``.

    The middle node of each plaque coincides with the corresponding row of ``X``.
    """
    if model.splitting_dims[2] != 1:
        raise NotImplementedError("plaques are implemented for one-dimensional E^u")
    if not 0 < radius <= 0.25:
        raise ValueError("radius must lie in (0, 0.25]")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if nodes % 2 == 0 or nodes < 5:
        raise ValueError("nodes must be odd and >= 5")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    Y = X
    for _ in range(depth):
        Y = model.finv(Y)
    eu = splitting_batch(model, Y, horizon, bundles={"u"})["u"][..., 0]
    s = np.linspace(-radius, radius, nodes)
    P = Y[:, None, :] + s[None, :, None] * eu[:, None, :]
    for _ in range(depth):
        P = model._lift(P.reshape(-1, d)).reshape(N, nodes, d)
        P = _resample(P, radius, nodes)
    # pin the middle node to X exactly; the rest moves with it
    return P - P[:, nodes // 2:nodes // 2 + 1, :] + X[:, None, :]


def grow_unstable_plaque(model: MapModel, x, radius: float, depth: int = 15, nodes: int = 257,
                         horizon: int = 30) -> Plaque:
    """Plaque of the unstable foliation through ``x`` by forward graph transform.

    Raises
    ------
    PlaqueGrowthError
        If some image is shorter than the requested radius on either side.
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    P = grow_plaques_batch(model, x[None, :], radius, depth, nodes, horizon)[0]
    s = np.linspace(-radius, radius, nodes)
    mid = nodes // 2
    t = P[mid + 1] - P[mid - 1]
    return Plaque(base=x, radius=float(radius), s=s, points=P, tangent=t / np.linalg.norm(t))


# --- atlas -------------------------------------------------------------------

@dataclass
class FoliationAtlas:
    """Parallelepiped boxes ``c_i + B_i [-h_i, h_i]^d`` in adapted coordinates.

    The first column of ``B_i`` is the unstable direction at ``c_i``; the others
    span the centre-stable bundle and form the transversal ``D_i``.
    """

    model: MapModel
    centers: np.ndarray
    bases: np.ndarray
    half_widths: np.ndarray
    r0: float
    w: float
    margin: float
    grid: int
    quantizer_ok: bool
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inverses = np.linalg.inv(self.bases)
        self.row_norms = np.linalg.norm(self.inverses, axis=2)
        d = self.centers.shape[1]
        self._shifts = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=float)

    @property
    def box_count(self) -> int:
        return self.centers.shape[0]

    @property
    def dimension(self) -> int:
        return self.centers.shape[1]

    def _coords(self, X, i):
        """Adapted coordinates of every translate of ``X`` near box ``i`` and their inner distances."""
        D = wrap(X - self.centers[i])[:, None, :] + self._shifts[None, :, :]
        A = D @ self.inverses[i].T
        inner = np.min((self.half_widths[i] - np.abs(A)) / self.row_norms[i], axis=2)
        return A, inner

    def inner_distances(self, X) -> np.ndarray:
        """``(N, k)`` distance from each point to the boundary of each box (negative outside)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.box_count))
        for i in range(self.box_count):
            out[:, i] = self._coords(X, i)[1].max(axis=1)
        return out

    def chart_selector(self, X) -> np.ndarray:
        """Box index maximising the distance to the box boundary (lowest index on ties)."""
        return np.argmax(self.inner_distances(X), axis=1)

    def adapted_coordinates(self, X, boxes) -> np.ndarray:
        """Adapted coordinates of ``X`` in the given boxes, using the deepest translate."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        boxes = np.asarray(boxes)
        out = np.empty_like(X)
        for i in np.unique(boxes):
            sel = boxes == i
            A, inner = self._coords(X[sel], i)
            out[sel] = A[np.arange(A.shape[0]), np.argmax(inner, axis=1)]
        return out

    def summary(self) -> dict:
        return {
            "model": self.model.descriptor(),
            "grid": self.grid,
            "boxes": self.box_count,
            "centers": self.centers.tolist(),
            "half_widths": self.half_widths.tolist(),
            "r0": self.r0,
            "margin": self.margin,
            "quantizer_scale": self.w,
            "quantizer_ok": self.quantizer_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _embedding_half_width(Binv, d):
    # the box embeds iff ||B^{-1} n||_inf > 2h for all nonzero integer n
    ns = np.array([n for n in itertools.product(range(-3, 4), repeat=d) if any(n)], dtype=float)
    return 0.49 * np.min(np.max(np.abs(ns @ Binv.T), axis=1))


def build_atlas(model: MapModel, box_count_hint: int, *, box_scale: Optional[float] = None,
                quantizer_fraction: float = 0.125, margin_fraction: float = 0.98,
                horizon: int = 30, check_points: int = 10_000, seed: int = 0,
                check_domination: bool = True) -> FoliationAtlas:
    """Cover ``T^d`` by foliation boxes on a ``g^d`` grid, ``g = round(hint^(1/d))``.

    Boxes take the largest half-width for which they still embed in the torus
    (or ``box_scale * sqrt(d) / g`` if smaller).  ``r0`` is ``margin_fraction``
    times the sampled overlap margin
    ``min_x max_i dist(x, boundary of B_i)``; the quantiser width is
    ``quantizer_fraction * r0``.

    Raises
    ------
    AtlasError
        If the grid has fewer than two boxes per side or the margin is not positive.
    """
    d = model.dimension
    if check_domination and not verify_domination(model, 64).passed:
        raise AtlasError("map fails the domination check")
    g = int(round(box_count_hint ** (1.0 / d)))
    if g < 2:
        raise AtlasError("a single box cannot chart the torus; increase box_count_hint")
    grid = np.stack(np.meshgrid(*[np.arange(g)] * d, indexing="ij"), -1).reshape(-1, d)
    centers = (grid + 0.5) / g
    fr = splitting_batch(model, centers, horizon, bundles={"u", "cs"})
    bases = np.concatenate([fr["u"], fr["cs"]], axis=2)
    hw = np.empty(len(centers))
    for i in range(len(centers)):
        cap = _embedding_half_width(np.linalg.inv(bases[i]), d)
        hw[i] = cap if box_scale is None else min(cap, box_scale * np.sqrt(d) / g)
    atlas = FoliationAtlas(model, centers, np.array(bases), hw, r0=0.0, w=0.0, margin=0.0, grid=g,
                           quantizer_ok=False)
    rng = np.random.default_rng(seed)
    pts = np.concatenate([rng.random((check_points, d)),
                          np.mod(centers + 0.5 / g, 1.0)])
    margin = float(np.max(atlas.inner_distances(pts), axis=1).min())
    if margin <= 0:
        raise AtlasError(f"overlap margin collapses ({margin:.3g}); increase box_count_hint")
    atlas.margin = margin
    atlas.r0 = margin_fraction * margin
    atlas.w = quantizer_fraction * atlas.r0
    atlas.quantizer_ok = _check_quantizer(atlas, rng)
    atlas.info["horizon"] = horizon
    return atlas


def _check_quantizer(atlas, rng, samples=16):
    # within its box each plaque must cross the transversal once: the unstable
    # coordinate is strictly monotone along the part of the plaque inside the box
    X = rng.random((samples, atlas.dimension))
    r = min(0.25, float(atlas.half_widths.max()))
    try:
        P = grow_plaques_batch(atlas.model, X, r, nodes=33)
    except PlaqueGrowthError:
        return False
    boxes = atlas.chart_selector(X)
    Q = _plaque_coordinates(atlas, X, P, boxes)
    for j in range(samples):
        inside = np.all(np.abs(Q[j]) <= atlas.half_widths[boxes[j]], axis=1)
        du = np.diff(Q[j, inside, 0])
        if du.size and not (np.all(du > 0) or np.all(du < 0)):
            return False
    return True


def _plaque_coordinates(atlas, X, P, boxes):
    """Adapted coordinates of plaque nodes, on the translate holding the base point."""
    mid = P.shape[1] // 2
    A = atlas.adapted_coordinates(X, boxes)
    Q = np.einsum("nij,nkj->nki", atlas.inverses[boxes], P - atlas.centers[boxes][:, None, :])
    return Q + (A - Q[:, mid])[:, None, :]


def _transverse(atlas: FoliationAtlas, X, boxes, nodes=33, chunk=20_000):
    """Transverse coordinates of the local plaque through each point of ``X``."""
    if atlas.model.is_linear:
        return atlas.adapted_coordinates(X, boxes)[:, 1:]
    out = np.empty((X.shape[0], atlas.dimension - 1))
    r = float(min(0.25, np.max(atlas.half_widths) + 1e-3))
    for lo in range(0, X.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        P = grow_plaques_batch(atlas.model, X[sl], r, nodes=nodes)
        Q = _plaque_coordinates(atlas, X[sl], P, boxes[sl])
        u = Q[..., 0]
        # crossing of u = 0 along the polyline, linear extrapolation off the ends
        sgn = np.sign(u)
        k = np.argmax(sgn[:, 1:] != sgn[:, :-1], axis=1)
        has = (sgn[np.arange(len(k)), k] != sgn[np.arange(len(k)), k + 1])
        k = np.where(has, k, np.where(np.abs(u[:, 0]) < np.abs(u[:, -1]), 0, nodes - 2))
        rows = np.arange(len(k))
        u0, u1 = u[rows, k], u[rows, k + 1]
        t = (u0 / np.where(u0 != u1, u0 - u1, 1.0))[:, None]
        out[sl] = Q[rows, k, 1:] + t * (Q[rows, k + 1, 1:] - Q[rows, k, 1:])
    return out


def transverse_coordinates(atlas: FoliationAtlas, X, boxes) -> np.ndarray:
    """Transverse coordinates ``(N, d - 1)`` of the local plaques through ``X`` in the given boxes."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _transverse(atlas, X, np.broadcast_to(np.asarray(boxes), (X.shape[0],)))


def plaque_id(atlas: FoliationAtlas, X, boxes=None):
    """``(box index, transverse cell ids)`` for one point or a batch.

    The box is ``atlas.chart_selector`` unless ``boxes`` is given.  The
    transverse cell of a point is ``floor((t + w/2) / w)`` for the transverse
    coordinate ``t`` of its local plaque.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    boxes = atlas.chart_selector(X) if boxes is None else np.broadcast_to(np.asarray(boxes), (X.shape[0],))
    T = _transverse(atlas, X, boxes)
    cells = np.floor((T + 0.5 * atlas.w) / atlas.w).astype(np.int64)
    if single:
        return int(boxes[0]), tuple(int(c) for c in cells[0])
    return boxes.astype(np.int64), cells


# --- discrepancy ---------------------------------------------------------------

@dataclass
class FoliationDiscrepancy:
    c0_gap: float
    c1_gap: float
    samples: int


def atlas_discrepancy(a1: FoliationAtlas, a2: FoliationAtlas, samples: int = 64, seed: int = 0,
                      nodes: int = 65) -> FoliationDiscrepancy:
    """Sup distance and sup tangent-angle gap of corresponding plaques of two atlases.

    Plaques through the same sample points are compared node by node in arclength.
    Box frames at the shared centres enter the angle gap as well.

    Raises
    ------
    ValueError
        If dimensions or box layouts differ.
    """
    if a1.dimension != a2.dimension:
        raise ValueError(f"dimension mismatch: {a1.dimension} vs {a2.dimension}")
    if a1.grid != a2.grid or not np.allclose(a1.centers, a2.centers):
        raise ValueError("atlases have different box layouts")
    rng = np.random.default_rng(seed)
    X = rng.random((samples, a1.dimension))
    r = min(0.25, 0.5 * min(a1.r0, a2.r0))
    P1 = grow_plaques_batch(a1.model, X, r, nodes=nodes)
    P2 = grow_plaques_batch(a2.model, X, r, nodes=nodes)
    c0 = float(np.max(torus_distance(P1, P2)))

    def unit(T):
        return T / np.linalg.norm(T, axis=-1, keepdims=True)

    def angle(t1, t2):
        # unsigned line angle via the rejection, exact zero for equal inputs
        rej = t1 - np.sum(t1 * t2, axis=-1, keepdims=True) * t2
        return np.arcsin(np.clip(np.linalg.norm(rej, axis=-1), 0.0, 1.0))

    c1 = float(np.max(angle(unit(np.gradient(P1, axis=1)), unit(np.gradient(P2, axis=1)))))
    c1 = max(c1, float(np.max(angle(a1.bases[:, :, 0], a2.bases[:, :, 0]))))
    return FoliationDiscrepancy(c0, c1, samples)
