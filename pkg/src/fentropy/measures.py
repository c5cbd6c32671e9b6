"""Empirical invariant measures and statistics computed from them.

Every routine here is a deterministic function of its inputs and seed.  Sums
over grids and orbits are evaluated in fixed-size chunks and merged in a
fixed order, so the results do not depend on how the work is split.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import MapModel, splitting_batch

__all__ = [
    "EmpiricalMeasure",
    "LyapunovReport",
    "BasinCensus",
    "birkhoff_measure",
    "leaf_pushforward_measure",
    "u_state_approximant",
    "stratified_grid",
    "character_dictionary",
    "dictionary_means",
    "weak_star_distance",
    "lyapunov_report",
    "restricted_growth",
    "worker_count",
    "parallel_map",
    "cu_log_sequence",
    "hyperbolic_times",
    "hyperbolic_time_density",
    "nonuniform_expansion_fraction",
    "basin_census",
]

PROVENANCES = ("birkhoff", "leaf_pushforward", "atomic", "product", "lebesgue")


@dataclass
class EmpiricalMeasure:
    """Weighted point sample on ``T^d``."""

    points: np.ndarray
    weights: np.ndarray
    provenance: str = "product"
    seed: int = 0
    map_id: str = ""
    params: tuple = ()

    def __post_init__(self):
        self.points = np.mod(np.atleast_2d(np.asarray(self.points, dtype=float)), 1.0)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] < 1:
            raise ValueError("an empirical measure needs at least one point")
        if self.weights.shape[0] != self.points.shape[0]:
            raise ValueError("one weight per point is required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def uniform(cls, points, **kw) -> "EmpiricalMeasure":
        points = np.atleast_2d(points)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n), **kw)

    @classmethod
    def dirac(cls, point, **kw) -> "EmpiricalMeasure":
        kw.setdefault("provenance", "atomic")
        return cls(np.atleast_2d(point), np.ones(1), **kw)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def effective_size(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def pushforward(self, model: MapModel) -> "EmpiricalMeasure":
        return EmpiricalMeasure(model.f(self.points), self.weights.copy(), self.provenance, self.seed,
                                self.map_id, self.params)

    def to_csv(self, path) -> None:
        """Header lines ``# key: value`` followed by ``x0,..,x{d-1},weight`` rows."""
        d = self.dimension
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# provenance: {self.provenance}\n")
            fh.write(f"# seed: {self.seed}\n")
            fh.write(f"# map: {self.map_id}\n")
            fh.write(f"# params: {' '.join(str(p) for p in self.params)}\n")
            fh.write(",".join([f"x{j}" for j in range(d)] + ["weight"]) + "\n")
            for row, w in zip(self.points, self.weights):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(w)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        meta = {}
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        k = 0
        while k < len(lines) and lines[k].startswith("#"):
            key, _, val = lines[k][1:].partition(":")
            meta[key.strip()] = val.strip()
            k += 1
        data = np.loadtxt(lines[k + 1:], delimiter=",", ndmin=2)
        params = tuple(meta.get("params", "").split()) if meta.get("params") else ()
        return cls(data[:, :-1], data[:, -1], meta.get("provenance", "product"), int(meta.get("seed", 0)),
                   meta.get("map", ""), params)


# --- constructions -----------------------------------------------------------

def birkhoff_measure(model: MapModel, seed_point, burn_in: int, n: int, seed: int = 0) -> EmpiricalMeasure:
    """Uniform weights on ``f^burn_in(z), ..., f^(burn_in + n - 1)(z)``."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    z = np.mod(np.asarray(seed_point, dtype=float).reshape(1, -1), 1.0)
    for _ in range(burn_in):
        z = np.mod(model._lift(z), 1.0)
    pts = np.empty((n, z.shape[1]))
    for i in range(n):
        pts[i] = z[0]
        z = np.mod(model._lift(z), 1.0)
    return EmpiricalMeasure(pts, np.full(n, 1.0 / n), "birkhoff", seed, model.name, model.params)


def leaf_pushforward_measure(model: MapModel, plaque, iterations: int, samples_per_step: int,
                             seed: int = 0) -> EmpiricalMeasure:
    """Cesaro tail of pushed-forward leaf Lebesgue on ``plaque``.

    ``samples_per_step`` stratified points on the plaque are iterated and the
    point masses at iterates ``ceil(n/2)..n`` are averaged.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if samples_per_step < 1:
        raise ValueError("samples_per_step must be >= 1")
    rng = np.random.default_rng(seed)
    u = (np.arange(samples_per_step) + rng.random(samples_per_step)) / samples_per_step
    Y = np.mod(plaque.param_lift(plaque.radius * (2 * u - 1)), 1.0)
    start = (iterations + 1) // 2
    tail = []
    for k in range(iterations + 1):
        if k >= start:
            tail.append(Y)
        if k < iterations:
            Y = model.f(Y)
    pts = np.concatenate(tail)
    return EmpiricalMeasure(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), "leaf_pushforward", seed,
                            model.name, model.params)


def u_state_approximant(model: MapModel, plaques: int, iterations: int, samples_per_step: int,
                        radius: float = 0.1, depth: int = 15, seed: int = 0) -> EmpiricalMeasure:
    """Equal-weight mixture of leaf push-forwards from plaques at stratified base points."""
    from .foliation import grow_plaques_batch

    rng = np.random.default_rng(seed)
    base = stratified_grid(model.dimension, max(1, round(plaques ** (1.0 / model.dimension))), rng)
    base = base[:plaques] if base.shape[0] >= plaques else np.concatenate(
        [base, rng.random((plaques - base.shape[0], model.dimension))])
    P = grow_plaques_batch(model, base, radius, depth=depth, nodes=65)
    s = np.linspace(-radius, radius, P.shape[1])
    k = base.shape[0]
    u = (np.arange(samples_per_step)[None, :] + rng.random((k, samples_per_step))) / samples_per_step
    t = radius * (2 * u - 1)
    Y = np.empty((k, samples_per_step, model.dimension))
    for i in range(k):
        for j in range(model.dimension):
            Y[i, :, j] = np.interp(t[i], s, P[i, :, j])
    Y = np.mod(Y.reshape(-1, model.dimension), 1.0)
    start = (iterations + 1) // 2
    tail = []
    for n in range(iterations + 1):
        if n >= start:
            tail.append(Y)
        if n < iterations:
            Y = model.f(Y)
    pts = np.concatenate(tail)
    return EmpiricalMeasure(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), "leaf_pushforward", seed,
                            model.name, model.params)


def stratified_grid(d: int, grid, rng) -> np.ndarray:
    """One jittered point in each cell of a ``grid`` (int or per-axis tuple) lattice."""
    shape = (grid,) * d if np.isscalar(grid) else tuple(grid)
    idx = np.stack(np.meshgrid(*[np.arange(g) for g in shape], indexing="ij"), -1).reshape(-1, d)
    return (idx + rng.random(idx.shape)) / np.asarray(shape, dtype=float)


# --- weak-* distance ---------------------------------------------------------

def character_dictionary(d: int, K: int = 4):
    """Frequencies of the half lattice ``0 < |k|_inf <= K`` (first nonzero entry positive)."""
    ks = []
    for k in itertools.product(range(-K, K + 1), repeat=d):
        nz = [v for v in k if v != 0]
        if nz and nz[0] > 0:
            ks.append(k)
    return np.array(ks, dtype=np.int64)


_SMOOTH_SHIFTS = (0.0, 0.25)


def _features(points, K, chunk=8192):
    """Per-point dictionary features ``(N, F)``; values lie in ``[-1/2, 1/2]`` or ``(0, 1)``."""
    d = points.shape[1]
    ks = character_dictionary(d, K)
    out = []
    for lo in range(0, points.shape[0], chunk):
        X = points[lo:lo + chunk]
        # e^{2 pi i k.x} as a product of per-coordinate powers
        base = np.exp(2j * np.pi * X)
        pw = np.empty((X.shape[0], d, 2 * K + 1), dtype=complex)
        pw[:, :, K] = 1.0
        for q in range(1, K + 1):
            pw[:, :, K + q] = pw[:, :, K + q - 1] * base
        pw[:, :, :K] = np.conj(pw[:, :, :K:-1])
        ch = pw[:, 0, ks[:, 0] + K]
        for j in range(1, d):
            ch = ch * pw[:, j, ks[:, j] + K]
        sm = [0.5 * (1 + np.tanh(4 * np.sin(2 * np.pi * (X[:, j] - c)))) for j in range(d) for c in _SMOOTH_SHIFTS]
        out.append(np.concatenate([0.5 * ch.real, 0.5 * ch.imag, np.stack(sm, axis=1)], axis=1))
    return np.concatenate(out)


def dictionary_means(m: EmpiricalMeasure, K: int = 4, chunk: int = 8192) -> np.ndarray:
    """Integrals of the scaled dictionary functions, summed chunk by chunk in order."""
    total = None
    for lo in range(0, m.size, chunk):
        F = _features(m.points[lo:lo + chunk], K)
        part = m.weights[lo:lo + chunk] @ F
        total = part if total is None else total + part
    return total


def weak_star_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure, K: int = 4) -> float:
    """Largest gap of integrals over the scaled dictionary, a value in ``[0, 1]``.

    Characters ``cos``/``sin(2 pi k.x)`` with ``|k|_inf <= K`` are halved and the
    smoothed coordinate indicators take values in ``(0, 1)``, so every
    dictionary function has oscillation at most one.
    """
    if m1.dimension != m2.dimension:
        raise ValueError("measures on tori of different dimension")
    return float(np.max(np.abs(dictionary_means(m1, K) - dictionary_means(m2, K))))


# --- exponents -----------------------------------------------------------------

@dataclass
class LyapunovReport:
    exponents: dict
    stderr: dict
    horizon: int
    samples: int


def _thin(m: EmpiricalMeasure, max_points: int):
    step = max(1, int(math.ceil(m.size / max_points)))
    idx = np.arange(0, m.size, step)
    w = m.weights[idx]
    return m.points[idx], w / w.sum()


def restricted_growth(model: MapModel, X, bundle: str, n: int, frame_horizon: int = 30) -> np.ndarray:
    """``log |Df^n restricted to E_bundle(x)|`` for ``n > 0``, or of ``Df^{-|n|}`` for ``n < 0``.

    The bundle is carried one step at a time and projected back onto its
    estimate at each orbit point, which keeps rounding errors from leaking
    into the dominating direction.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    orbit = [X]
    step = model.f if n > 0 else model.finv
    for _ in range(abs(n)):
        orbit.append(step(orbit[-1]))
    fr = splitting_batch(model, np.concatenate(orbit), frame_horizon)[bundle]
    E = np.asarray(fr).reshape(abs(n) + 1, N, d, -1)
    Q = E[0]
    M = np.broadcast_to(np.eye(Q.shape[-1]), (N,) + (Q.shape[-1],) * 2).copy()
    for j in range(abs(n)):
        if n > 0:
            V = model.df(orbit[j]) @ Q
        else:
            V = np.linalg.solve(model.df(orbit[j + 1]), Q)
        En = E[j + 1]
        V = En @ (En.swapaxes(-1, -2) @ V)
        Q, Rm = np.linalg.qr(V)
        M = Rm @ M
    return np.log(np.linalg.norm(M, ord=2, axis=(1, 2)))


def lyapunov_report(model: MapModel, mu: EmpiricalMeasure, horizon: int = 30, max_points: int = 2000,
                    frame_horizon: int = 30) -> LyapunovReport:
    """Per-bundle ``mu``-averages of ``(1/horizon) log |Df^horizon restricted|``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    X, w = _thin(mu, max_points)
    ds, dc, du = model.splitting_dims
    ex, se = {}, {}
    n_eff = 1.0 / np.sum(w ** 2)
    for name, dim in (("u", du), ("c", dc), ("s", ds)):
        if dim == 0:
            ex[name] = None
            se[name] = None
            continue
        val = restricted_growth(model, X, name, horizon, frame_horizon) / horizon
        mean = float(w @ val)
        var = float(w @ (val - mean) ** 2)
        ex[name] = mean
        se[name] = math.sqrt(var / n_eff)
    return LyapunovReport(ex, se, horizon, X.shape[0])


def cu_log_sequence(model: MapModel, X, horizon: int, frame_horizon: int = 30, block: int = 1) -> np.ndarray:
    """``l_j = log |Df^{-block} restricted to E^cu(f^(j block) x)|``, shape ``(N, horizon // block)``.

    ``E^cu`` is estimated at ``x`` and carried along the orbit by the derivative.
    """
    if block < 1:
        raise ValueError("block must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = splitting_batch(model, X, frame_horizon, bundles={"u", "cu"})["cu"]
    Q = np.array(Q)
    k = Q.shape[-1]
    Y = X
    out = np.empty((X.shape[0], horizon // block))
    for j in range(horizon // block):
        M = np.broadcast_to(np.eye(k), (X.shape[0], k, k)).copy()
        for _ in range(block):
            Q, Rm = np.linalg.qr(model.df(Y) @ Q)
            M = Rm @ M
            Y = model.f(Y)
        # Df^{-block} on E^cu at the block end is Q M^{-1} in these bases
        out[:, j] = np.log(np.linalg.norm(np.linalg.inv(M), ord=2, axis=(1, 2)))
    return out


def _hyperbolic_mask(ell, a):
    # n qualifies iff T_n <= T_i for all i < n, where T_i = sum_{j<=i} l_j + a i
    T = np.concatenate([np.zeros((ell.shape[0], 1)), np.cumsum(ell, axis=1)], axis=1)
    T = T + a * np.arange(T.shape[1])[None, :]
    prefmin = np.minimum.accumulate(T[:, :-1], axis=1)
    return T[:, 1:] <= prefmin + 1e-12


def hyperbolic_times(model: MapModel, x, a: float, horizon: int, frame_horizon: int = 30, block: int = 1) -> list:
    """Times ``n <= horizon`` (multiples of ``block``) whose trailing block averages of ``l`` are all ``<= -a``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if not 1 <= horizon <= 10 ** 6:
        raise ValueError("horizon must lie in [1, 1e6]")
    ell = cu_log_sequence(model, np.asarray(x, dtype=float)[None, :], horizon, frame_horizon, block)
    return [block * (int(n) + 1) for n in np.flatnonzero(_hyperbolic_mask(ell, a)[0])]


def hyperbolic_time_density(model: MapModel, X, a: float, horizon: int, frame_horizon: int = 30,
                            block: int = 1) -> np.ndarray:
    """Fraction of the ``horizon // block`` block ends that are hyperbolic times, per starting point."""
    ell = cu_log_sequence(model, X, horizon, frame_horizon, block)
    return _hyperbolic_mask(ell, a).mean(axis=1)


def nonuniform_expansion_fraction(model: MapModel, a: float, grid: int, horizon: int, seed: int = 0,
                                  frame_horizon: int = 30, block: int = 1) -> float:
    """Fraction of a jittered ``grid^d`` lattice whose mean block value of ``l`` is below ``-a``."""
    if grid < 10:
        raise ValueError("grid must be >= 10")
    rng = np.random.default_rng(seed)
    X = stratified_grid(model.dimension, grid, rng)
    hits = 0
    for lo in range(0, X.shape[0], 4096):
        ell = cu_log_sequence(model, X[lo:lo + 4096], horizon, frame_horizon, block)
        hits += int(np.count_nonzero(ell.mean(axis=1) < -a))
    return hits / X.shape[0]


def worker_count() -> int:
    """Worker count from ``FE_WORKERS`` (default 1)."""
    raw = os.environ.get("FE_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FE_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(fn, items, workers: int):
    """``[fn(i) for i in items]`` over forked workers; output order follows ``items``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(items))) as pool:
        return pool.map(fn, items, chunksize=1)


# --- basin census --------------------------------------------------------------

@dataclass
class BasinCensus:
    grid: tuple
    assignment: np.ndarray
    fractions: list
    unresolved: float
    tol: float
    K: int
    horizon: int
    info: dict = field(default_factory=dict)


def _census_chunk(model, X, targets, horizon, K, tol):
    acc = np.zeros((X.shape[0], targets.shape[1]))
    Y = X
    for _ in range(horizon):
        acc += _features(Y, K)
        Y = model.f(Y)
    acc /= horizon
    dist = np.max(np.abs(acc[:, None, :] - targets[None, :, :]), axis=2)
    within = dist <= tol
    out = np.full(X.shape[0], -1, dtype=np.int64)
    one = within.sum(axis=1) == 1
    out[one] = np.argmax(within[one], axis=1)
    return out


_SHARED = {}


def _census_worker(span):
    # state is inherited through fork; only the index span is pickled
    model, X, targets, horizon, K, tol = _SHARED["census"]
    lo, hi = span
    return _census_chunk(model, X[lo:hi], targets, horizon, K, tol)


def basin_census(model: MapModel, grid, candidates: Sequence[EmpiricalMeasure], horizon: int, tol: float,
                 K: int = 4, seed: int = 0, workers: Optional[int] = None, chunk: int = 5000) -> BasinCensus:
    """Assign each jittered grid point's length-``horizon`` time average to a candidate.

    A point is assigned to the unique candidate within ``tol`` in the dictionary
    distance; otherwise it is marked ``-1`` (unresolved).

    Raises
    ------
    ValueError
        If no candidates are given or two of them are within ``2 tol``.
    """
    if not candidates:
        raise ValueError("no candidate measures")
    for i, j in itertools.combinations(range(len(candidates)), 2):
        gap = weak_star_distance(candidates[i], candidates[j], K)
        if gap <= 2 * tol:
            raise ValueError(f"candidates {i} and {j} are only {gap:.3g} apart (need > {2 * tol})")
    rng = np.random.default_rng(seed)
    X = stratified_grid(model.dimension, grid, rng)
    targets = np.stack([dictionary_means(c, K) for c in candidates])
    spans = [(lo, min(lo + chunk, X.shape[0])) for lo in range(0, X.shape[0], chunk)]
    workers = workers if workers is not None else worker_count()
    _SHARED["census"] = (model, X, targets, horizon, K, tol)
    try:
        parts = parallel_map(_census_worker, spans, workers)
    finally:
        _SHARED.pop("census", None)
    assign = np.concatenate(parts)
    n = assign.size
    fractions = [float(np.count_nonzero(assign == i)) / n for i in range(len(candidates))]
    shape = (grid,) * model.dimension if np.isscalar(grid) else tuple(grid)
    return BasinCensus(shape, assign, fractions, float(np.count_nonzero(assign < 0)) / n, tol, K, horizon)
