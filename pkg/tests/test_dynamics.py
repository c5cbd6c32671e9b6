import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import GOLDEN_SQ, LOG_CAT, T3_ROOTS
from fentropy.dynamics import (
    Bump, DominationError, FiberSpec, FiberTerm, cocycle_batch, derivative_cocycle, dfa_perturbation,
    estimate_splitting, linear_automorphism, skew_product, splitting_batch, t3_automorphism,
    torus_distance, unstable_log_jacobian, unstable_log_jacobian_batch, verify_domination, wrap,
)


def test_cat_fixed_point_and_half_point(cat):
    assert np.allclose(cat.f([0.0, 0.0]), [0.0, 0.0])
    assert np.allclose(cat.f([0.5, 0.5]), [0.5, 0.0])


def test_cat_unstable_eigenvalue(cat):
    ev = np.sort(np.abs(np.linalg.eigvals(cat.matrix)))
    assert ev[-1] == pytest.approx(GOLDEN_SQ, abs=1e-12)
    assert ev[-1] == pytest.approx(2.6180340, abs=1e-7)


def test_inverse_roundtrip(cat, t3, rng):
    for m in (cat, t3):
        X = rng.random((50, m.dimension))
        assert np.max(torus_distance(m.finv(m.f(X)), X)) < 1e-12


def test_t3_eigenvalues_match_closed_form_roots(t3):
    assert np.allclose(t3.info["eigenvalues"], T3_ROOTS, atol=1e-12)
    assert np.allclose(np.poly(t3.matrix), [1, -1, -2, 1])


@pytest.mark.parametrize("matrix", [np.eye(3, dtype=int), [[2, 1], [1, 1]]])
def test_t3_rejects_bad_matrices(matrix):
    with pytest.raises(ValueError):
        t3_automorphism(matrix)


def test_t3_rejects_non_unimodular():
    with pytest.raises(ValueError):
        t3_automorphism([[2, 0, 0], [0, 3, 0], [0, 0, 1]])


def test_dfa_zero_eps_is_base(cat, rng):
    m = dfa_perturbation(cat, 0.0)
    X = rng.random((200, 2))
    assert np.array_equal(m.f(X), cat.f(X))
    assert np.array_equal(m.df(X), cat.df(X))


def test_dfa_c1_distance_bound(cat):
    m = dfa_perturbation(cat, 0.01, [Bump(0, 1.0, (1, 0))])
    assert 0 < m.info["c1_distance"] <= 0.02


def test_dfa_large_eps_loses_domination(cat):
    with pytest.raises(DominationError):
        dfa_perturbation(cat, 10.0)


def test_dfa_inverse(cat, rng):
    m = dfa_perturbation(cat, 0.02)
    X = rng.random((100, 2))
    assert np.max(torus_distance(m.finv(m.f(X)), X)) < 1e-10


def test_cocycle_zero_and_linear_power(cat, rng):
    x = rng.random(2)
    assert np.array_equal(derivative_cocycle(cat, x, 0), np.eye(2))
    A = cat.matrix
    assert np.allclose(derivative_cocycle(cat, x, 3), A @ A @ A)
    assert np.allclose(derivative_cocycle(cat, x, -2), np.linalg.inv(A @ A))


def test_cocycle_bounds():
    m = t3_automorphism()
    with pytest.raises(ValueError):
        derivative_cocycle(m, [0.1, 0.2, 0.3], 10 ** 6 + 1)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 6), m=st.integers(0, 6), seed=st.integers(0, 2 ** 31 - 1))
def test_cocycle_identity_property(n, m, seed):
    model = dfa_perturbation(linear_automorphism([[2, 1], [1, 1]], (1, 0, 1), name="cat"), 0.02, check=False)
    x = np.random.default_rng(seed).random(2)
    lhs = derivative_cocycle(model, x, n + m)
    rhs = derivative_cocycle(model, model.iterate(x, m), n) @ derivative_cocycle(model, x, m)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


def test_cocycle_identity_batch(rng):
    # 10^3 random triples on a nonlinear model
    model = skew_product(linear_automorphism([[5, 3], [3, 2]], (1, 0, 1), name="cat2"),
                         FiberSpec(0.0, (FiberTerm(0.1),)))
    X = rng.random((1000, 3))
    n, m = 3, 2
    lhs = cocycle_batch(model, X, n + m)
    rhs = cocycle_batch(model, model.iterate(X, m), n) @ cocycle_batch(model, X, m)
    rel = np.linalg.norm(lhs - rhs, axis=(1, 2)) / np.linalg.norm(lhs, axis=(1, 2))
    assert rel.max() < 1e-9


def _angle(u, v):
    u, v = np.ravel(u), np.ravel(v)
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.sqrt(max(0.0, 1 - c * c)))


def test_cat_unstable_direction(cat, rng):
    vals, vecs = np.linalg.eig(cat.matrix)
    perron = vecs[:, np.argmax(np.abs(vals))]
    fr = estimate_splitting(cat, rng.random(2), 20)
    assert _angle(fr.e_u, perron) < 1e-8


def test_t3_directions(t3, rng):
    E = t3.info["eigenvectors"]
    fr = estimate_splitting(t3, rng.random(3), 30)
    assert _angle(fr.e_s, E[:, 0]) < 1e-6
    assert _angle(fr.e_c, E[:, 1]) < 1e-6
    assert _angle(fr.e_u, E[:, 2]) < 1e-6


def test_splitting_residual_decreases_geometrically(t3, rng):
    x = rng.random(3)
    res = [estimate_splitting(t3, x, h).residual for h in (1, 2, 4, 6, 8)]
    assert all(b < a for a, b in zip(res, res[1:]))
    hs = np.array([1, 2, 4, 6, 8])
    rho = np.exp(np.polyfit(hs, np.log(res), 1)[0])
    assert rho < 1


def test_unstable_log_jacobian_cat(cat, rng):
    X = rng.random((1000, 2))
    E = splitting_batch(cat, X, 30, bundles={"u"})["u"]
    vals = unstable_log_jacobian_batch(cat, X, E)
    assert np.allclose(vals, 0.9624237, atol=1e-7)
    assert np.var(vals) < 1e-16
    frame = estimate_splitting(cat, X[0])
    assert unstable_log_jacobian(cat, X[0], frame) == pytest.approx(LOG_CAT, abs=1e-12)


def test_log_jacobians_sum_to_zero(t3, rng):
    X = rng.random((100, 3))
    fr = splitting_batch(t3, X, 30)
    total = sum(unstable_log_jacobian_batch(t3, X, fr[b]) for b in ("u", "c", "s"))
    assert np.max(np.abs(total)) < 1e-8


def test_fully_expanding_jacobian_is_log_det(rng):
    m = linear_automorphism([[3, 1], [1, 2]], (0, 0, 2), name="expanding", power=1)
    X = rng.random((5, 2))
    E = np.broadcast_to(np.eye(2), (5, 2, 2))
    assert np.allclose(unstable_log_jacobian_batch(m, X, E), np.log(abs(np.linalg.det(m.matrix))))


def test_frame_at_wrong_point(cat):
    fr = estimate_splitting(cat, [0.1, 0.2])
    with pytest.raises(ValueError):
        unstable_log_jacobian(cat, [0.3, 0.2], fr)


def test_domination_cat(cat):
    rep = verify_domination(cat, 64, max_power=1)
    assert rep.passed and rep.power == 1
    assert rep.worst_sc == pytest.approx(1 / GOLDEN_SQ ** 2, abs=1e-9)


def test_domination_identity_fails():
    ident = linear_automorphism(np.eye(2), (1, 0, 1), name="identity", power=1)
    rep = verify_domination(ident, 32)
    assert not rep.passed and rep.power is None


def test_domination_dfa(cat):
    rep = verify_domination(dfa_perturbation(cat, 0.01), 128)
    assert rep.passed and rep.power <= 2


def test_skew_rigid_and_contracting_fibres():
    base = linear_automorphism([[5, 3], [3, 2]], (1, 0, 1), name="cat2")
    rigid = skew_product(base, FiberSpec(0.3, ()))
    assert np.allclose(rigid.df([[0.1, 0.2, 0.3]])[0, 2], [0, 0, 1])
    contracting = skew_product(base, FiberSpec(0.0, (FiberTerm(0.1),)))
    # theta = 1/2 is the attracting fibre fixed point with g' = 1 - 0.2 pi
    assert contracting.f([0.0, 0.0, 0.5])[2] == pytest.approx(0.5)
    assert contracting.df([0.0, 0.0, 0.5])[2, 2] == pytest.approx(1 - 0.2 * np.pi)
    with pytest.raises(ValueError):
        skew_product(base, FiberSpec(0.0, (FiberTerm(0.5),)))


def test_wrap_range():
    d = wrap(np.array([0.7, -0.7, 0.5, -0.2]))
    assert np.all(d >= -0.5) and np.all(d <= 0.5)
    assert np.allclose(d[:2], [-0.3, 0.3])
