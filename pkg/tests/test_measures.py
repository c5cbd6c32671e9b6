import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import LOG_CAT, T3_ROOTS
from fentropy.dynamics import FiberSpec, FiberTerm, linear_automorphism, skew_product
from fentropy.foliation import grow_unstable_plaque
from fentropy.measures import (
    EmpiricalMeasure, _hyperbolic_mask, basin_census, birkhoff_measure, character_dictionary, cu_log_sequence,
    dictionary_means, hyperbolic_time_density, hyperbolic_times, leaf_pushforward_measure, lyapunov_report,
    nonuniform_expansion_fraction, parallel_map, stratified_grid, u_state_approximant, weak_star_distance,
    worker_count,
)

CAT2 = [[5, 3], [3, 2]]


def _lebesgue(d=2, grid=300, seed=0):
    return EmpiricalMeasure.uniform(stratified_grid(d, grid, np.random.default_rng(seed)), provenance="lebesgue")


@pytest.fixture(scope="module")
def cat_birkhoff(cat):
    return birkhoff_measure(cat, [0.1234, 0.5678], 100, 100_000, seed=0)


def test_measure_validation():
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((2, 2)), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((2, 2)), np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((2, 2)), np.array([0.5, 0.5]), provenance="mystery")
    m = EmpiricalMeasure.uniform(np.array([[1.25, -0.25]]))
    assert np.allclose(m.points, [[0.25, 0.75]])


def test_csv_roundtrip(tmp_path, rng):
    pts = rng.random((7, 3))
    w = rng.random(7)
    m = EmpiricalMeasure(pts, w / w.sum(), provenance="birkhoff", seed=9, map_id="t3", params=(1, 2))
    m.to_csv(tmp_path / "m.csv")
    back = EmpiricalMeasure.from_csv(tmp_path / "m.csv")
    assert np.array_equal(back.points, m.points) and np.array_equal(back.weights, m.weights)
    assert back.provenance == "birkhoff" and back.seed == 9 and back.map_id == "t3"


def test_birkhoff_equidistributes(cat_birkhoff):
    X = cat_birkhoff.points
    for k in np.ndindex(7, 7):
        k = np.array(k) - 3
        if k.any():
            assert abs(np.mean(np.exp(2j * np.pi * (X @ k)))) < 0.02


def test_birkhoff_fixed_point_is_atomic(cat):
    m = birkhoff_measure(cat, [0.0, 0.0], 10, 1000)
    assert np.all(m.points == 0.0)
    assert weak_star_distance(m, EmpiricalMeasure.dirac([0.0, 0.0])) < 1e-12


def test_birkhoff_sample_count_check(cat):
    with pytest.raises(ValueError):
        birkhoff_measure(cat, [0.1, 0.2], 10, 999)


def test_two_seeds_agree(cat, cat_birkhoff):
    other = birkhoff_measure(cat, [0.7, 0.31], 100, 100_000, seed=1)
    assert weak_star_distance(cat_birkhoff, other) < 0.03


def test_birkhoff_pushforward_decay(cat):
    # the dictionary entries are bounded by 1/2, so the exact bound is 2 * (1/2) / n
    ns = np.array([10 ** 3, 10 ** 4, 10 ** 5])
    gaps = []
    for n in ns:
        m = birkhoff_measure(cat, [0.1234, 0.5678], 100, int(n))
        gaps.append(weak_star_distance(m, m.pushforward(cat)))
        assert gaps[-1] <= 1.0 / n + 1e-15
    slope = np.polyfit(np.log(ns), np.log(gaps), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_leaf_pushforward_approaches_lebesgue(cat):
    P = grow_unstable_plaque(cat, [0.3, 0.4], 0.1)
    mu = leaf_pushforward_measure(cat, P, 200, 1000, seed=1)
    assert weak_star_distance(mu, _lebesgue()) < 0.03


def test_leaf_pushforward_zero_iterations_stays_on_plaque(cat):
    P = grow_unstable_plaque(cat, [0.3, 0.4], 0.1)
    mu = leaf_pushforward_measure(cat, P, 0, 50, seed=2)
    e = P.tangent
    D = (mu.points - P.base + 0.5) % 1.0 - 0.5
    assert np.max(np.abs(D[:, 0] * e[1] - D[:, 1] * e[0])) < 1e-7
    assert np.max(np.linalg.norm(D, axis=1)) <= 0.1 + 1e-9


def test_contracting_fibre_ustate_has_negative_centre_exponent():
    model = skew_product(linear_automorphism(CAT2, (1, 0, 1), name="cat2"), FiberSpec(0.0, (FiberTerm(0.1),)))
    P = grow_unstable_plaque(model, [0.1, 0.2, 0.3], 0.1)
    mu = leaf_pushforward_measure(model, P, 40, 200)
    c = lyapunov_report(model, mu).exponents["c"]
    assert c == pytest.approx(math.log(1 - 0.2 * math.pi), abs=0.01)


def test_weak_star_identity_and_diracs():
    m = _lebesgue(grid=20)
    assert weak_star_distance(m, m) == 0.0
    d = weak_star_distance(EmpiricalMeasure.dirac([0.0, 0.0]), EmpiricalMeasure.dirac([0.5, 0.5]))
    # direct evaluation of the (1, 0) character: 0.5 cos(0) against 0.5 cos(pi)
    direct = abs(0.5 * math.cos(0.0) - 0.5 * math.cos(math.pi))
    assert d == pytest.approx(direct) and d > 0.5


def test_dictionary_shape():
    ks = character_dictionary(2, 2)
    means = dictionary_means(EmpiricalMeasure.dirac([0.0, 0.0]), 2)
    assert means.ndim == 1 and means.size >= 2 * len(ks)
    assert np.all(np.abs(means) <= 0.5 + 1e-15)


measures_2d = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.tuples(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True)), min_size=n,
             max_size=n),
    st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)))


def _mk(spec):
    pts, w = spec
    w = np.array(w)
    return EmpiricalMeasure(np.array(pts), w / w.sum())


@settings(max_examples=50, deadline=None)
@given(a=measures_2d, b=measures_2d, c=measures_2d)
def test_weak_star_is_pseudometric(a, b, c):
    A, B, C = _mk(a), _mk(b), _mk(c)
    dab, dbc, dac = weak_star_distance(A, B, 2), weak_star_distance(B, C, 2), weak_star_distance(A, C, 2)
    assert weak_star_distance(A, A, 2) == 0.0
    assert dab == pytest.approx(weak_star_distance(B, A, 2), abs=1e-15)
    assert dac <= dab + dbc + 1e-12
    assert 0.0 <= dab <= 1.0


def test_lyapunov_cat(cat, cat_birkhoff):
    rep = lyapunov_report(cat, cat_birkhoff)
    assert rep.exponents["u"] == pytest.approx(LOG_CAT, abs=0.01)
    assert rep.exponents["s"] == pytest.approx(-LOG_CAT, abs=0.01)
    assert rep.exponents["c"] is None


def test_lyapunov_t3_and_volume_sum(t3):
    mu = birkhoff_measure(t3, [0.1, 0.2, 0.3], 100, 5000)
    rep = lyapunov_report(t3, mu)
    for name, root in zip(("s", "c", "u"), T3_ROOTS):
        assert rep.exponents[name] == pytest.approx(math.log(abs(root)), abs=0.01)
    total = sum(rep.exponents.values())
    # linear model: stderr vanishes, so allow the frame-estimation floor
    assert abs(total) <= 2 * sum(rep.stderr.values()) + 1e-8


def test_lyapunov_rigid_rotation():
    model = skew_product(linear_automorphism(CAT2, (1, 0, 1), name="cat2"), FiberSpec(0.3, ()))
    rep = lyapunov_report(model, birkhoff_measure(model, [0.1, 0.2, 0.3], 100, 5000))
    assert rep.exponents["c"] == pytest.approx(0.0, abs=0.01)


def test_hyperbolic_times_uniform_cases(cat):
    assert hyperbolic_times(cat, [0.1, 0.2], 0.5, 20) == list(range(1, 21))
    assert hyperbolic_times(cat, [0.1, 0.2], 1.0, 20) == []
    with pytest.raises(ValueError):
        hyperbolic_times(cat, [0.1, 0.2], 0.5, 0)
    with pytest.raises(ValueError):
        hyperbolic_times(cat, [0.1, 0.2], -0.5, 10)


def test_hyperbolic_times_satisfy_definition(rng):
    # re-check every reported time against the trailing-window condition directly
    ell = rng.normal(-0.1, 0.5, size=(5, 200))
    a = 0.05
    mask = _hyperbolic_mask(ell, a)
    for i in range(ell.shape[0]):
        for n in range(1, 201):
            tails = [ell[i, n - k:n].sum() <= -a * k + 1e-12 for k in range(1, n + 1)]
            assert mask[i, n - 1] == all(tails)


def test_hyperbolic_density_t3_block(t3):
    # t3 expands the centre by |l_c| = 1.247; one-step norms on E^cu see the skewed frame,
    # two-step blocks already contract under Df^{-2}
    X = np.random.default_rng(3).random((8, 3))
    a = 0.5 * 2 * math.log(abs(T3_ROOTS[1]))
    dens = hyperbolic_time_density(t3, X, a, 10_000, block=2)
    assert dens.min() > 0
    assert cu_log_sequence(t3, X[:1], 10, block=2).shape == (1, 5)


def test_nonuniform_expansion(cat, t3):
    assert nonuniform_expansion_fraction(cat, 0.5, 10, 100) == 1.0
    assert nonuniform_expansion_fraction(cat, 2.0, 10, 100) == 0.0
    with pytest.raises(ValueError):
        nonuniform_expansion_fraction(cat, 0.5, 5, 100)


def test_nonuniform_expansion_t3_long_horizon(t3):
    assert nonuniform_expansion_fraction(t3, 0.2, 10, 10_000, block=2) >= 0.95


def test_basin_census_cat(cat):
    cand = birkhoff_measure(cat, [0.1234, 0.5678], 100, 100_000)
    census = basin_census(cat, (20, 20), [cand], 1000, 0.05, K=2)
    assert census.fractions[0] >= 0.99
    assert census.unresolved == pytest.approx(1 - census.fractions[0])


def test_basin_census_rejects_identical_candidates(cat):
    cand = birkhoff_measure(cat, [0.1234, 0.5678], 100, 2000)
    with pytest.raises(ValueError):
        basin_census(cat, (4, 4), [cand, cand], 10, 0.05)
    with pytest.raises(ValueError):
        basin_census(cat, (4, 4), [], 10, 0.05)


def test_basin_census_worker_independent(cat, monkeypatch):
    cand = birkhoff_measure(cat, [0.1234, 0.5678], 100, 5000)
    one = basin_census(cat, (12, 12), [cand], 100, 0.05, K=2, workers=1, chunk=40)
    two = basin_census(cat, (12, 12), [cand], 100, 0.05, K=2, workers=2, chunk=40)
    assert np.array_equal(one.assignment, two.assignment)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("FE_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("FE_WORKERS", "zero")
    with pytest.raises(ValueError):
        worker_count()
    assert parallel_map(abs, [-3, 2, -1], 2) == [3, 2, 1]


def test_u_state_approximant_size(cat):
    mu = u_state_approximant(cat, 16, 4, 5, seed=0)
    assert mu.size == 16 * 5 * 3
    assert mu.provenance == "leaf_pushforward"
