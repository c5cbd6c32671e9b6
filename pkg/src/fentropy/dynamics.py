"""Explicit partially hyperbolic maps of T^2 and T^3.

Every evaluator accepts a single point of shape ``(d,)`` or a batch of shape
``(N, d)`` and returns an array of matching shape.  Points live in ``[0, 1)^d``;
each model also carries a lift to ``R^d`` so that curves can be followed
without wrap-around.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import subspace_angles

__all__ = [
    "MapModel",
    "SplittingFrame",
    "DominationReport",
    "Bump",
    "FiberTerm",
    "FiberSpec",
    "CocycleOverflowError",
    "DominationError",
    "wrap",
    "torus_distance",
    "linear_automorphism",
    "cat_map",
    "t3_automorphism",
    "dfa_perturbation",
    "skew_product",
    "derivative_cocycle",
    "cocycle_batch",
    "estimate_splitting",
    "splitting_batch",
    "unstable_log_jacobian",
    "unstable_log_jacobian_batch",
    "verify_domination",
]

T3_DEFAULT = ((0, 0, -1), (1, 0, 2), (0, 1, 1))
_FRAME_SEED = 20240611


class CocycleOverflowError(ArithmeticError):
    """Raised when a derivative product leaves the floating-point range."""


class DominationError(ValueError):
    """Raised when a constructed model fails the domination check."""


def wrap(d):
    """Representative of ``d`` modulo 1 in ``[-1/2, 1/2]``."""
    return d - np.round(d)


def torus_distance(a, b):
    """Flat-torus distance between points (broadcasts over leading axes)."""
    return np.sqrt((wrap(np.asarray(a) - np.asarray(b)) ** 2).sum(-1))


def _batch(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x, x.ndim == 1


class MapModel:
    """A torus diffeomorphism with its inverse, derivative and splitting type.

    Parameters
    ----------
    name : str
        Catalogue identifier.
    dimension : int
        Torus dimension ``d``.
    splitting_dims : tuple of int
        ``(d_s, d_c, d_u)``.
    lift, lift_inv : callable
        Maps ``(N, d) -> (N, d)`` on ``R^d`` covering ``f`` and ``f^{-1}``.
    jac : callable
        ``(N, d) -> (N, d, d)`` derivative of ``f``.
    params : tuple
        Parameters recorded in output headers.
    matrix : ndarray, optional
        Linear part when the model is a toral automorphism.
    power : int
        Iterate used by the frame estimator (adapted power).
    """

    def __init__(self, name, dimension, splitting_dims, lift, lift_inv, jac,
                 params=(), matrix=None, power=1, info=None):
        splitting_dims = tuple(int(v) for v in splitting_dims)
        if len(splitting_dims) != 3 or min(splitting_dims) < 0 or sum(splitting_dims) != dimension:
            raise ValueError(f"splitting {splitting_dims} does not sum to dimension {dimension}")
        self.name = name
        self.dimension = int(dimension)
        self.splitting_dims = splitting_dims
        self.params = tuple(params)
        self._lift = lift
        self._lift_inv = lift_inv
        self._jac = jac
        self.matrix = None if matrix is None else np.array(matrix, dtype=float)
        self.power = int(power)
        self.info = dict(info or {})
        self._frame_cache = {}

    def __repr__(self):
        return f"MapModel({self.name!r}, d={self.dimension}, splitting={self.splitting_dims})"

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None

    def lift(self, x):
        X, single = _batch(x)
        out = self._lift(X)
        return out[0] if single else out

    def lift_inv(self, x):
        X, single = _batch(x)
        out = self._lift_inv(X)
        return out[0] if single else out

    def f(self, x):
        return np.mod(self.lift(x), 1.0)

    def finv(self, x):
        return np.mod(self.lift_inv(x), 1.0)

    def df(self, x):
        X, single = _batch(x)
        out = self._jac(X)
        return out[0] if single else out

    def dfinv(self, y):
        """Derivative of ``f^{-1}`` at ``y``."""
        return np.linalg.inv(self.df(self.finv(y)))

    def iterate(self, x, n: int):
        """``f^n(x)`` for signed ``n``."""
        y = np.asarray(x, dtype=float)
        step = self.f if n >= 0 else self.finv
        for _ in range(abs(int(n))):
            y = step(y)
        return y

    def descriptor(self) -> dict:
        return {"model": self.name, "params": [float(p) if isinstance(p, (int, float, np.floating)) else p
                                               for p in self.params]}


def linear_automorphism(matrix, splitting_dims, name="linear", params=(), power=None) -> MapModel:
    """Toral automorphism ``x -> M x mod 1``."""
    M = np.array(matrix, dtype=float)
    d = M.shape[0]
    if M.shape != (d, d):
        raise ValueError("matrix must be square")
    Minv = np.linalg.inv(M)
    MT, MinvT = M.T.copy(), Minv.T.copy()

    def jac(X):
        return np.broadcast_to(M, (X.shape[0], d, d)).copy()

    if power is None:
        power = _adapted_power(M, splitting_dims)
    ev = np.linalg.eigvals(M)
    return MapModel(name, d, splitting_dims, lambda X: X @ MT, lambda X: X @ MinvT, jac,
                    params=params or tuple(M.ravel()), matrix=M, power=power,
                    info={"eigenvalues": ev})


def _adapted_power(M, splitting_dims, target=0.5, max_power=8) -> int:
    ev = np.sort(np.abs(np.linalg.eigvals(M)))
    ds, dc, du = splitting_dims
    gaps = []
    if ds and du:
        gaps.append(ev[ds - 1] / ev[ds] if ev[ds] > 0 else 0.0)
        gaps.append(ev[ds + dc - 1] / ev[ds + dc])
    ratio = max(gaps) if gaps else 1.0
    for p in range(1, max_power + 1):
        if ratio ** p <= target:
            return p
    return 1


def cat_map() -> MapModel:
    """The Arnold cat map ``[[2,1],[1,1]]`` on T^2."""
    return linear_automorphism([[2, 1], [1, 1]], (1, 0, 1), name="cat", params=())


def t3_automorphism(matrix=T3_DEFAULT) -> MapModel:
    """Linear partially hyperbolic automorphism of T^3 with splitting (1,1,1).

    Raises
    ------
    ValueError
        If the matrix is not a 3x3 integer matrix with determinant +-1 and three
        real eigenvalues with ``|l_s| < 1 < |l_c| < |l_u|``.
    """
    M = np.asarray(matrix)
    if M.shape != (3, 3):
        raise ValueError("t3 model needs a 3x3 matrix")
    if not np.allclose(M, np.round(M)):
        raise ValueError("t3 model needs an integer matrix")
    M = np.round(M).astype(float)
    det = np.linalg.det(M)
    if abs(abs(det) - 1.0) > 1e-9:
        raise ValueError(f"determinant {det:.6g} is not +-1")
    coeffs = np.poly(M)
    roots = np.roots(coeffs)
    if np.max(np.abs(roots.imag)) > 1e-9:
        raise ValueError("spectrum is not real")
    lam = np.sort(np.abs(roots.real))
    if not (lam[0] < 1 - 1e-9 and 1 + 1e-9 < lam[1] and lam[1] < lam[2] * (1 - 1e-9)):
        raise ValueError(f"spectrum moduli {lam} are not dominated")
    model = linear_automorphism(M, (1, 1, 1), name="t3", params=tuple(int(v) for v in M.ravel()))
    vals, vecs = np.linalg.eig(M)
    order = np.argsort(np.abs(vals.real))
    model.info["eigenvalues"] = vals.real[order]
    model.info["eigenvectors"] = vecs.real[:, order] / np.linalg.norm(vecs.real[:, order], axis=0)
    return model


# --- perturbations -----------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """Term ``amplitude * sin(2 pi k.x + phase) / (2 pi)`` added to one component."""

    component: int
    amplitude: float
    k: tuple
    phase: float = 0.0


def _bump_eval(bumps, X):
    d = X.shape[1]
    phi = np.zeros_like(X)
    dphi = np.zeros((X.shape[0], d, d))
    for b in bumps:
        k = np.asarray(b.k, dtype=float)
        arg = 2 * np.pi * (X @ k) + b.phase
        phi[:, b.component] += b.amplitude * np.sin(arg) / (2 * np.pi)
        dphi[:, b.component, :] += b.amplitude * np.cos(arg)[:, None] * k[None, :]
    return phi, dphi


def dfa_perturbation(base: MapModel, eps: float, bumps: Optional[Sequence[Bump]] = None,
                     check: bool = True, check_samples: int = 128) -> MapModel:
    """Additive trigonometric perturbation ``f_eps = f + eps * phi (mod 1)``.

    The sup-norm C^1 size ``eps * max(|phi|, |D phi|)`` over a grid is stored in
    ``model.info['c1_distance']``.  With ``check`` the domination verifier must
    pass, otherwise :class:`DominationError` is raised.
    """
    d = base.dimension
    if bumps is None:
        bumps = (Bump(0, 1.0, tuple([1] + [0] * (d - 1))),)
    bumps = tuple(bumps)
    for b in bumps:
        if len(b.k) != d or not 0 <= b.component < d:
            raise ValueError(f"bump {b} does not fit dimension {d}")
    eps = float(eps)

    def lift(X):
        phi, _ = _bump_eval(bumps, X)
        return base._lift(X) + eps * phi

    def jac(X):
        _, dphi = _bump_eval(bumps, X)
        return base._jac(X) + eps * dphi

    def lift_inv(Y, tol=1e-14, max_iter=200):
        # fixed point of x = f0^{-1}(y - eps phi(x)); the lift is chosen by continuity
        X = base._lift_inv(Y)
        if eps == 0.0:
            return X
        for _ in range(max_iter):
            phi, _ = _bump_eval(bumps, X)
            Xn = base._lift_inv(Y - eps * phi)
            err = np.max(np.abs(Xn - X)) if X.size else 0.0
            X = Xn
            if err < tol:
                break
        else:
            raise DominationError("inverse iteration did not converge (perturbation too large)")
        return X

    g = np.stack(np.meshgrid(*[np.linspace(0, 1, 33 if d == 2 else 13, endpoint=False)] * d,
                             indexing="ij"), -1).reshape(-1, d)
    phi, dphi = _bump_eval(bumps, g)
    c1 = abs(eps) * max(np.max(np.linalg.norm(phi, axis=1)), np.max(np.linalg.norm(dphi, axis=(1, 2), ord=2)))
    model = MapModel("dfa", d, base.splitting_dims, lift, lift_inv, jac,
                     params=(base.name, eps) + tuple((b.component, b.amplitude) + tuple(b.k) + (b.phase,)
                                                     for b in bumps),
                     matrix=base.matrix if eps == 0.0 else None, power=base.power,
                     info={"base": base, "eps": eps, "bumps": bumps, "c1_distance": float(c1)})
    if check and eps != 0.0:
        dets = np.linalg.det(jac(g))
        if np.any(np.sign(dets) != np.sign(dets[0])) or np.min(np.abs(dets)) < 1e-8:
            raise DominationError(f"eps={eps}: derivative degenerates, not a diffeomorphism")
        try:
            rep = verify_domination(model, check_samples, max_power=max(4, base.power + 2))
        except (np.linalg.LinAlgError, CocycleOverflowError, DominationError) as exc:
            raise DominationError(f"eps={eps}: domination check failed ({exc})") from exc
        if not rep.passed:
            raise DominationError(f"eps={eps}: domination lost (ratios {rep.worst_sc:.3g}, {rep.worst_cu:.3g})")
        model.info["domination"] = rep
    return model


@dataclass(frozen=True)
class FiberTerm:
    """Term ``amplitude * sin(2 pi (kx.x + q theta) + phase)`` of a fibre map."""

    amplitude: float
    kx: tuple = (0, 0)
    q: int = 1
    phase: float = 0.0


@dataclass(frozen=True)
class FiberSpec:
    """Fibre maps ``g_x(theta) = theta + alpha + sum of terms``."""

    alpha: float = 0.0
    terms: tuple = ()


def _fiber_eval(spec: FiberSpec, X, theta):
    p = np.zeros_like(theta)
    dth = np.zeros_like(theta)
    dx = np.zeros((theta.shape[0], X.shape[1]))
    for t in spec.terms:
        kx = np.asarray(t.kx, dtype=float)
        arg = 2 * np.pi * (X @ kx + t.q * theta) + t.phase
        s, c = np.sin(arg), np.cos(arg)
        p += t.amplitude * s
        dth += 2 * np.pi * t.q * t.amplitude * c
        dx += (2 * np.pi * t.amplitude * c)[:, None] * kx[None, :]
    return p, dth, dx


def skew_product(base: MapModel, fiber: FiberSpec) -> MapModel:
    """Skew product ``(x, theta) -> (f(x), g_x(theta))`` on T^2 x S^1.

    Raises
    ------
    ValueError
        If the base is not two-dimensional or some ``g_x'`` is not positive.
    """
    if base.dimension != 2:
        raise ValueError("skew products are built over T^2")
    for t in fiber.terms:
        if int(t.q) != t.q or len(t.kx) != 2 or any(int(k) != k for k in t.kx):
            raise ValueError(f"fibre term {t} has non-integer frequencies")
    gx = np.stack(np.meshgrid(np.linspace(0, 1, 24, endpoint=False), np.linspace(0, 1, 24, endpoint=False),
                              indexing="ij"), -1).reshape(-1, 2)
    th = np.linspace(0, 1, 96, endpoint=False)
    Xg = np.repeat(gx, th.size, axis=0)
    Tg = np.tile(th, gx.shape[0])
    _, dth, _ = _fiber_eval(fiber, Xg, Tg)
    if np.min(1.0 + dth) <= 0.0:
        raise ValueError("fibre maps are not orientation-preserving diffeomorphisms")
    P = sum(abs(t.amplitude) for t in fiber.terms)

    def lift(Z):
        x, th = Z[:, :2], Z[:, 2]
        p, _, _ = _fiber_eval(fiber, x, th)
        return np.concatenate([base._lift(x), (th + fiber.alpha + p)[:, None]], axis=1)

    def lift_inv(Z):
        y, u = Z[:, :2], Z[:, 2] - fiber.alpha
        x = base._lift_inv(y)
        # theta + p(x, theta) = u is increasing in theta; bracket then Newton
        lo, hi = u - P - 1e-12, u + P + 1e-12
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            p, _, _ = _fiber_eval(fiber, x, mid)
            up = mid + p > u
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        th = 0.5 * (lo + hi)
        for _ in range(4):
            p, dth, _ = _fiber_eval(fiber, x, th)
            th = np.clip(th - (th + p - u) / (1.0 + dth), lo, hi)
        return np.concatenate([x, th[:, None]], axis=1)

    def jac(Z):
        x, th = Z[:, :2], Z[:, 2]
        _, dth, dx = _fiber_eval(fiber, x, th)
        J = np.zeros((Z.shape[0], 3, 3))
        J[:, :2, :2] = base._jac(x)
        J[:, 2, :2] = dx
        J[:, 2, 2] = 1.0 + dth
        return J

    params = (base.name, fiber.alpha) + tuple((t.amplitude,) + tuple(t.kx) + (t.q, t.phase) for t in fiber.terms)
    return MapModel("skew", 3, (1, 1, 1), lift, lift_inv, jac, params=params, power=1,
                    info={"base": base, "fiber": fiber, "min_fiber_derivative": float(np.min(1.0 + dth)),
                          "max_fiber_derivative": float(np.max(1.0 + dth))})


# --- cocycles ----------------------------------------------------------------

def derivative_cocycle(model: MapModel, x, n: int) -> np.ndarray:
    """``D f^n(x)``: forward product for ``n > 0``, inverse cocycle for ``n < 0``.

    Raises
    ------
    CocycleOverflowError
        If an entry exceeds ``1e300``.
    ValueError
        If ``|n| > 10**6``.
    """
    n = int(n)
    if abs(n) > 10 ** 6:
        raise ValueError("|n| must not exceed 1e6")
    return cocycle_batch(model, np.asarray(x, dtype=float)[None, :], n)[0]


def cocycle_batch(model: MapModel, X, n: int) -> np.ndarray:
    """Vectorised :func:`derivative_cocycle` over points ``X`` of shape ``(N, d)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    C = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    if n == 0:
        return C
    if model.is_linear:
        M = model.matrix if n > 0 else np.linalg.inv(model.matrix)
        P = np.eye(d)
        for _ in range(abs(n)):
            P = M @ P
            if not np.all(np.abs(P) <= 1e300):
                raise CocycleOverflowError(f"cocycle overflow at |n|={abs(n)}")
        return np.broadcast_to(P, (N, d, d)).copy()
    Y = X.copy()
    for _ in range(abs(n)):
        if n > 0:
            C = model._jac(Y) @ C
            Y = np.mod(model._lift(Y), 1.0)
        else:
            Y = np.mod(model._lift_inv(Y), 1.0)
            C = np.linalg.solve(model._jac(Y), C)
        if not np.all(np.abs(C) <= 1e300):
            raise CocycleOverflowError(f"cocycle overflow at |n|={abs(n)}")
    return C


# --- splitting ---------------------------------------------------------------

@dataclass
class SplittingFrame:
    """Orthonormal bases of the estimated bundles at ``base``."""

    base: np.ndarray
    e_u: np.ndarray
    e_cs: np.ndarray
    e_c: Optional[np.ndarray] = None
    e_s: Optional[np.ndarray] = None
    e_cu: Optional[np.ndarray] = None
    residual: float = 0.0


def _generic_frame(d):
    q, _ = np.linalg.qr(np.random.default_rng(_FRAME_SEED).standard_normal((d, d)))
    return q


def _qr(V):
    Q, R = np.linalg.qr(V)
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    if np.any(diag < 1e-300):
        raise np.linalg.LinAlgError("degenerate frame (rank loss)")
    return Q


def _intersect(U, W, k):
    """Orthonormal basis of span(U) n span(W) (dimension k), batched."""
    M = np.concatenate([U, W], axis=-1)
    _, _, vh = np.linalg.svd(M)
    z = vh[..., -k:, :].swapaxes(-1, -2)[..., : U.shape[-1], :]
    Q, _ = np.linalg.qr(U @ z)
    return Q


def _fix_sign(Q):
    # deterministic orientation: largest component of each column positive
    idx = np.argmax(np.abs(Q), axis=-2)
    s = np.sign(np.take_along_axis(Q, idx[..., None, :], axis=-2))
    s[s == 0] = 1.0
    return Q * s


def splitting_batch(model: MapModel, X, horizon: int = 30, chunk: int = 8192, bundles=None) -> dict:
    """Estimated bundle bases at every point of ``X``.

    Returns a dict with arrays ``u`` ``(N,d,d_u)``, ``cu``, ``cs``, ``s`` and ``c``
    (present when the corresponding dimension is positive).  ``bundles`` may
    restrict the computation, e.g. ``{"u"}`` skips the backward pull-back.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    want = frozenset(bundles) if bundles is not None else frozenset({"u", "cu", "cs", "s", "c"})
    if model.is_linear:
        key = int(horizon)
        if key not in model._frame_cache:
            model._frame_cache[key] = _frames_chunk(model, np.zeros((1, d)), horizon, None)
        one = model._frame_cache[key]
        return {k: np.broadcast_to(v[0], (N,) + v.shape[1:]) for k, v in one.items() if k in want}
    parts = [_frames_chunk(model, X[i:i + chunk], horizon, want) for i in range(0, N, chunk)]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0] if k in want}


def _frames_chunk(model, X, horizon, want=None):
    N, d = X.shape
    ds, dc, du = model.splitting_dims
    steps = horizon * model.power
    want = want or {"u", "cu", "cs", "s", "c"}
    forward_needed = bool(want & {"u", "cu", "c"})
    backward_needed = bool(want & {"s", "cs", "c"})
    G = _generic_frame(d)
    out = {}
    if du + dc > 0 and forward_needed:
        back = [X]
        for _ in range(steps):
            back.append(model.finv(back[-1]))
        V = np.broadcast_to(G, (N, d, d)).copy()
        for k in range(steps, 0, -1):
            V = _qr(model.df(np.atleast_2d(back[k])) @ V)
        if du:
            out["u"] = _fix_sign(V[..., :du])
        if du + dc < d:
            out["cu"] = _fix_sign(V[..., : du + dc])
    if ds + dc > 0 and backward_needed:
        fwd = [X]
        for _ in range(steps):
            fwd.append(model.f(fwd[-1]))
        W = np.broadcast_to(G, (N, d, d)).copy()
        for k in range(steps, 0, -1):
            W = _qr(np.linalg.solve(model.df(np.atleast_2d(fwd[k - 1])), W))
        if ds:
            out["s"] = _fix_sign(W[..., :ds])
        out["cs"] = _fix_sign(W[..., : ds + dc])
    if "cu" not in out and "u" in out:
        out["cu"] = out["u"]
    if dc and "cs" in out and "cu" in out:
        if ds == 0:
            out["c"] = out["cs"]
        elif du == 0:
            out["c"] = out["cu"]
        else:
            out["c"] = _fix_sign(_intersect(out["cs"], out["cu"], dc))
    return out


def estimate_splitting(model: MapModel, x, horizon: int = 30) -> SplittingFrame:
    """Finite-horizon estimate of ``E^u``, ``E^cs`` (and ``E^c``, ``E^s``) at ``x``.

    ``residual`` is the largest principal angle between the horizon and
    horizon-1 estimates of the bundles (horizon 0 is the generic start frame).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = np.asarray(x, dtype=float)
    fr = _frames_chunk(model, x[None, :], horizon)
    res = 0.0
    prev = _frames_chunk(model, x[None, :], horizon - 1)
    for k in fr:
        if fr[k].shape[-1] < model.dimension:
            res = max(res, float(np.max(subspace_angles(fr[k][0], prev[k][0]))))
    get = lambda k: fr[k][0] if k in fr else None  # noqa: E731
    e_cs = get("cs")
    if e_cs is None:
        e_cs = np.zeros((model.dimension, 0))
    e_u = get("u")
    if e_u is None:
        e_u = np.zeros((model.dimension, 0))
    return SplittingFrame(base=x, e_u=e_u, e_cs=e_cs, e_c=get("c"), e_s=get("s"), e_cu=get("cu"), residual=res)


def unstable_log_jacobian(model: MapModel, x, frame: SplittingFrame) -> float:
    """``log |det Df(x)|_{E^u}|`` from the Gram determinant of the image frame."""
    x = np.asarray(x, dtype=float)
    if not np.allclose(frame.base, x, atol=1e-12):
        raise ValueError("frame is based at a different point")
    return float(unstable_log_jacobian_batch(model, x[None, :], frame.e_u[None])[0])


def unstable_log_jacobian_batch(model: MapModel, X, E_u) -> np.ndarray:
    """Batched ``log Jac^u`` given unstable bases ``E_u`` of shape ``(N, d, d_u)``."""
    img = model.df(np.atleast_2d(X)) @ E_u
    gram = img.swapaxes(-1, -2) @ img
    sign, logdet = np.linalg.slogdet(gram)
    return 0.5 * logdet


# --- domination --------------------------------------------------------------

@dataclass
class DominationReport:
    sample_count: int
    worst_sc: float
    worst_cu: float
    passed: bool
    power: Optional[int]
    table: list = field(default_factory=list)


def _restricted_norms(C, Q):
    s = np.linalg.svd(C @ Q, compute_uv=False)
    return s[..., 0], s[..., -1]


def verify_domination(model: MapModel, sample_count: int = 256, max_power: int = 4,
                      seed: int = 7, horizon: int = 30) -> DominationReport:
    """Check ``|Df^p v^s| / |Df^p v^c| <= 1/2`` and ``|Df^p v^c| / |Df^p v^u| <= 1/2``.

    Powers ``p = 1..max_power`` are tried in order and the first passing power is
    reported.  Without a centre bundle both ratios compare ``E^s`` with ``E^u``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.random((sample_count, model.dimension))
    fr = splitting_batch(model, X, horizon)
    ds, dc, du = model.splitting_dims
    table = []
    first = None
    best = (np.inf, np.inf)
    for p in range(1, max_power + 1):
        C = cocycle_batch(model, X, p)
        if ds == 0 or du == 0:
            sc = cu = np.inf
        elif dc == 0:
            smax, _ = _restricted_norms(C, fr["s"])
            _, umin = _restricted_norms(C, fr["u"])
            sc = cu = float(np.max(smax / umin))
        else:
            smax, _ = _restricted_norms(C, fr["s"])
            cmax, cmin = _restricted_norms(C, fr["c"])
            _, umin = _restricted_norms(C, fr["u"])
            sc = float(np.max(smax / cmin))
            cu = float(np.max(cmax / umin))
        table.append((p, sc, cu))
        if first is None and sc <= 0.5 and cu <= 0.5:
            first = p
            best = (sc, cu)
    if first is None:
        best = min(((sc, cu) for _, sc, cu in table), key=lambda t: max(t))
    return DominationReport(sample_count, best[0], best[1], first is not None, first, table)
