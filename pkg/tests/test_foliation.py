import numpy as np
import pytest
from scipy.spatial.distance import directed_hausdorff

from fentropy.dynamics import dfa_perturbation, t3_automorphism
from fentropy.foliation import (
    AtlasError, PlaqueGrowthError, atlas_discrepancy, build_atlas, grow_plaques_batch, grow_unstable_plaque,
    plaque_id, transverse_coordinates,
)


def _seg_dist(q, P):
    A, B = P[:-1], P[1:]
    AB = B - A
    t = np.clip(np.sum((q - A) * AB, 1) / np.sum(AB * AB, 1), 0, 1)
    return float(np.min(np.linalg.norm(A + t[:, None] * AB - q, axis=1)))


@pytest.fixture(scope="module")
def cat_atlas(cat):
    return build_atlas(cat, 16)


def _perron(cat, which=np.argmax):
    vals, vecs = np.linalg.eig(cat.matrix)
    return vecs[:, which(np.abs(vals))]


def test_cat_plaque_is_straight(cat):
    x = np.array([0.3, 0.6])
    P = grow_unstable_plaque(cat, x, 0.1)
    e = _perron(cat)
    D = P.points - x
    assert np.max(np.abs(D[:, 0] * e[1] - D[:, 1] * e[0])) < 1e-8
    assert np.allclose(P.points[len(P.s) // 2], x)
    assert np.allclose(P.param(0.0), x)


def test_dfa_plaque_close_to_linear(cat):
    x = np.array([0.3, 0.6])
    P = grow_unstable_plaque(cat, x, 0.1).points
    Q = grow_unstable_plaque(dfa_perturbation(cat, 0.01), x, 0.1).points
    assert max(directed_hausdorff(P, Q)[0], directed_hausdorff(Q, P)[0]) < 0.02


def test_plaque_depth_converges_geometrically(cat):
    m = dfa_perturbation(cat, 0.02)
    x = np.array([0.21, 0.77])
    prev, gaps = None, []
    for k in range(1, 6):
        P = grow_unstable_plaque(m, x, 0.1, depth=k).points
        if prev is not None:
            gaps.append(np.max(np.linalg.norm(P - prev, axis=1)))
        prev = P
    ratio = np.exp(np.polyfit(np.arange(len(gaps)), np.log(gaps), 1)[0])
    assert ratio < 1
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("eps,tol", [(0.0, 1e-6), (0.01, 1e-3)])
def test_plaque_invariance_and_expansion(cat, rng, eps, tol):
    m = dfa_perturbation(cat, eps)
    for x in rng.random((5, 2)):
        P = grow_unstable_plaque(m, x, 0.1)
        Q = grow_unstable_plaque(m, m.f(x), 0.1)
        img = m.lift(P.points)
        img = img - img[len(img) // 2] + Q.points[len(Q.points) // 2]
        assert max(_seg_dist(q, img) for q in Q.points) < tol
        ratio = np.sum(np.linalg.norm(np.diff(img, axis=0), axis=1)) / np.sum(
            np.linalg.norm(np.diff(P.points, axis=0), axis=1))
        assert ratio > 1.5


def test_plaque_argument_checks(cat):
    with pytest.raises(ValueError):
        grow_plaques_batch(cat, [[0.1, 0.1]], 0.3)
    with pytest.raises(ValueError):
        grow_plaques_batch(cat, [[0.1, 0.1]], 0.1, nodes=4)
    P = grow_unstable_plaque(cat, [0.1, 0.1], 0.1)
    with pytest.raises(ValueError):
        P.param(0.2)
    assert issubclass(PlaqueGrowthError, RuntimeError)


def test_atlas_cover_and_lebesgue_number(cat_atlas, rng):
    a = cat_atlas
    assert a.r0 > 0
    assert a.w == pytest.approx(a.r0 / 8)
    assert a.quantizer_ok
    X = rng.random((10_000, 2))
    depth = a.inner_distances(X).max(axis=1)
    assert np.all(depth >= a.r0)


def test_atlas_rejects_single_box(cat):
    with pytest.raises(AtlasError):
        build_atlas(cat, 1)


def test_atlas_self_discrepancy(cat_atlas):
    d = atlas_discrepancy(cat_atlas, cat_atlas)
    assert d.c0_gap < 1e-10 and d.c1_gap < 1e-10


def test_atlas_discrepancy_shrinks_with_eps(cat, cat_atlas):
    gaps = []
    for eps in (0.04, 0.02, 0.01):
        d = atlas_discrepancy(cat_atlas, build_atlas(dfa_perturbation(cat, eps), 16))
        gaps.append(d.c1_gap)
    assert all(b <= 1.2 * a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.5 * gaps[0]


def test_atlas_discrepancy_dimension_mismatch(cat_atlas):
    with pytest.raises(ValueError):
        atlas_discrepancy(cat_atlas, build_atlas(t3_automorphism(), 64))


def test_plaque_id_same_local_plaque(cat, cat_atlas, rng):
    a = cat_atlas
    for x in rng.random((10, 2)):
        box = a.chart_selector(x[None])[0]
        P = grow_unstable_plaque(cat, x, 0.2)
        ids = {plaque_id(a, P.param(s), boxes=box) for s in np.linspace(-a.r0 / 2, a.r0 / 2, 21)}
        assert ids == {plaque_id(a, x, boxes=box)}


def test_plaque_id_separates_transverse_offset(cat, cat_atlas):
    a = cat_atlas
    es = _perron(cat, np.argmin)
    x = a.centers[5]
    assert plaque_id(a, x) != plaque_id(a, np.mod(x + 0.1 * es, 1.0))


def test_plaque_id_pure_and_refines_boxes(cat_atlas, rng):
    X = rng.random((500, 2))
    b1, c1 = plaque_id(cat_atlas, X)
    b2, c2 = plaque_id(cat_atlas, X)
    assert np.array_equal(b1, b2) and np.array_equal(c1, c2)
    assert np.array_equal(b1, cat_atlas.chart_selector(X))
    ids = {}
    for b, c in zip(b1, c1[:, 0]):
        ids.setdefault((int(b), int(c)), set()).add(int(b))
    assert all(len(v) == 1 for v in ids.values())


def test_nonlinear_transverse_coordinates_constant_on_plaque(cat):
    m = dfa_perturbation(cat, 0.01)
    a = build_atlas(m, 16)
    x = a.centers[6]
    P = grow_unstable_plaque(m, x, 0.1)
    Y = P.param(np.linspace(-0.05, 0.05, 9))
    T = transverse_coordinates(a, Y, 6)
    assert np.ptp(T) < 1e-4
