import math

import numpy as np
import pytest
from scipy import stats

from clusterlab.geometry import (
    ALGEBRAIC_TOL,
    GEOMETRIC_TOL,
    SE2_ON_R2,
    Ball,
    Box,
    Euclidean,
    GeometryError,
    GeometryMismatchError,
    GroupElement,
    Hyperbolic2,
    Point,
    SE2OnR2,
    backend_for,
    group_act,
    group_compose,
    group_inverse,
    make_geometry,
    to_poincare,
)


def _random_hyperboloid(rng, n, scale=2.0):
    h = Hyperbolic2()
    return h.from_chart(scale * rng.standard_normal((n, 2)))


def _random_tangents(h, p, rng, scale=1.0):
    frames = h.tangent_basis(p)
    coeffs = scale * rng.standard_normal((p.shape[0], 2))
    return np.einsum("nk,nkc->nc", coeffs, frames)


def test_euclidean_distance_pythagoras():
    """Goal: (0,0) to (3,4) in the plane is 5."""
    e = Euclidean(2)
    assert e.distance(e.point([0, 0]), e.point([3, 4])) == pytest.approx(5.0, abs=1e-12)


def test_hyperbolic_distance_identity_and_unit_geodesic():
    """Goal: d(p, p) = 0 and the origin is at distance 1 from exp of a unit tangent."""
    h = Hyperbolic2()
    o = h.origin()
    assert h.distance(o, o) == pytest.approx(0.0, abs=GEOMETRIC_TOL)
    v = h.tangent(o, [0.0, 1.0, 0.0])
    q = h.exp_map(o, v)
    assert h.distance(o, q) == pytest.approx(1.0, abs=GEOMETRIC_TOL)


def test_mixing_geometries_is_an_error():
    """Goal: points of different geometries are never coerced."""
    e = Euclidean(2)
    h = Hyperbolic2()
    with pytest.raises(GeometryMismatchError):
        e.distance(e.point([0, 0]), h.origin())


def test_off_sheet_point_rejected():
    """Goal: hyperboloid points must satisfy <p,p> = -1 with p0 > 0."""
    with pytest.raises(GeometryError):
        Hyperbolic2().point([2.0, 0.0, 0.0])


@pytest.mark.parametrize("backend", [Euclidean(2), Euclidean(3), Hyperbolic2()], ids=lambda b: b.geometry_id)
def test_triangle_inequality_and_symmetry(backend):
    """Goal: metric axioms on 10^4 random triples."""
    rng = np.random.default_rng(1)
    n = 10_000
    if isinstance(backend, Hyperbolic2):
        p, q, r = (_random_hyperboloid(rng, n) for _ in range(3))
    else:
        p, q, r = (rng.normal(size=(n, backend.coord_dim)) for _ in range(3))
    pq = backend.distances(p, q)
    qp = backend.distances(q, p)
    assert np.all(pq >= 0)
    assert np.allclose(pq, qp, atol=1e-12)
    assert np.all(pq <= backend.distances(p, r) + backend.distances(r, q) + GEOMETRIC_TOL)


def test_euclidean_exp_and_zero_vector():
    """Goal: exp is p + v in the flat case and v = 0 is the identity."""
    e = Euclidean(2)
    p = e.point([1, 1])
    assert e.exp_map(p, e.tangent(p, [0.5, 0.0])).coords == (1.5, 1.0)
    assert e.exp_map(p, e.tangent(p, [0.0, 0.0])).coords == p.coords


def test_hyperbolic_exp_lands_on_sheet_and_preserves_length():
    """Goal: d(p, exp_p v) = |v| and the image stays on the sheet."""
    rng = np.random.default_rng(2)
    h = Hyperbolic2()
    p = _random_hyperboloid(rng, 10_000)
    v = _random_tangents(h, p, rng)
    q = h.exp(p, v)
    assert np.allclose(-q[:, 0] ** 2 + q[:, 1] ** 2 + q[:, 2] ** 2, -1.0, atol=1e-8)
    assert np.allclose(h.distances(p, q), h.norm(p, v), atol=1e-8)


def test_exp_requires_vector_based_at_point():
    """Goal: a tangent vector based elsewhere is rejected."""
    e = Euclidean(2)
    p, q = e.point([0, 0]), e.point([1, 0])
    with pytest.raises(GeometryError):
        e.exp_map(q, e.tangent(p, [1.0, 0.0]))


def test_parallel_transport_preserves_inner_products():
    """Goal: transport along the geodesic is an isometry of tangent spaces."""
    rng = np.random.default_rng(3)
    h = Hyperbolic2()
    p = _random_hyperboloid(rng, 2_000, scale=1.0)
    q = _random_hyperboloid(rng, 2_000, scale=1.0)
    u = _random_tangents(h, p, rng)
    w = _random_tangents(h, p, rng)
    tu, tw = h.transport(p, q, u), h.transport(p, q, w)
    assert np.allclose(h.inner(q, tu, tw), h.inner(p, u, w), atol=1e-8)
    # transported vectors are tangent at q
    assert np.allclose(-q[:, 0] * tu[:, 0] + q[:, 1] * tu[:, 1] + q[:, 2] * tu[:, 2], 0.0, atol=1e-8)


def test_parallel_transport_flat_and_trivial_cases():
    """Goal: Euclidean transport keeps components; p = q leaves v unchanged."""
    e = Euclidean(2)
    p, q = e.point([0, 0]), e.point([5, -2])
    v = e.tangent(p, [1.0, 2.0])
    moved = e.parallel_transport(p, q, v)
    assert moved.base == q and moved.components == (1.0, 2.0)

    h = Hyperbolic2()
    o = h.origin()
    t = h.tangent(o, [0.0, 0.3, -0.4])
    assert np.allclose(h.parallel_transport(o, o, t).array, t.array, atol=1e-12)


def test_sample_sphere_euclidean_mean_and_radius():
    """Goal: uniform circle samples are at distance r and average to the centre."""
    rng = np.random.default_rng(4)
    e = Euclidean(2)
    n, r = 100_000, 0.7
    p = np.array([[1.0, -2.0]])
    s = e.sphere(np.repeat(p, n, axis=0), r, rng)
    assert np.allclose(np.linalg.norm(s - p, axis=1), r, atol=GEOMETRIC_TOL)
    assert np.all(np.abs(s.mean(axis=0) - p[0]) <= 3 * r / math.sqrt(n))


def test_sample_sphere_angles_are_uniform():
    """Goal: chi-square on 16 angular bins does not reject at 0.001."""
    rng = np.random.default_rng(5)
    s = Euclidean(2).sphere(np.zeros((100_000, 2)), 1.0, rng)
    counts, _ = np.histogram(np.arctan2(s[:, 1], s[:, 0]), bins=16, range=(-math.pi, math.pi))
    assert stats.chisquare(counts).pvalue > 0.001


def test_sample_sphere_one_dimensional_is_two_points():
    """Goal: the 0-sphere is {p - r, p + r}, each with probability 1/2."""
    rng = np.random.default_rng(6)
    n = 20_000
    s = Euclidean(1).sphere(np.full((n, 1), 2.0), 0.5, rng)[:, 0]
    assert set(np.round(s, 12)) == {1.5, 2.5}
    freq = float(np.mean(s > 2.0))
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_sample_sphere_hyperbolic_radius_and_bad_radius():
    """Goal: hyperbolic sphere samples are at the requested distance; r <= 0 is an error."""
    rng = np.random.default_rng(7)
    h = Hyperbolic2()
    p = h.from_chart([[0.5, -0.3]])
    s = h.sphere(np.repeat(p, 1_000, axis=0), 1.3, rng)
    assert np.allclose(h.distances(np.repeat(p, 1_000, axis=0), s), 1.3, atol=GEOMETRIC_TOL)
    with pytest.raises(GeometryError):
        h.sample_sphere(h.origin(), 0.0, rng)


def test_group_identity_and_half_turn():
    """Goal: identity fixes points; rotation by pi about the origin is x -> -x."""
    g = SE2OnR2()
    p = g.point([0.3, -1.2])
    assert group_act(GroupElement.identity(), p).coords == p.coords
    half = GroupElement.rotation_about(math.pi, (0.0, 0.0))
    assert np.allclose(group_act(half, p).array, [-0.3, 1.2], atol=ALGEBRAIC_TOL)


def test_rotation_about_centre():
    """Goal: rotation_about(A, xi) acts as x -> A(x - xi) + xi and fixes xi."""
    g = GroupElement.rotation_about(math.pi / 2, (1.0, 1.0))
    assert np.allclose(g.apply([1.0, 1.0]), [[1.0, 1.0]], atol=ALGEBRAIC_TOL)
    assert np.allclose(g.apply([2.0, 1.0]), [[1.0, 2.0]], atol=ALGEBRAIC_TOL)


def test_group_axioms_and_isometry():
    """Goal: act(g o h) = act(g) act(h), g o g^-1 = e, and distances are preserved."""
    rng = np.random.default_rng(8)
    se2 = SE2OnR2()
    for _ in range(200):
        g = GroupElement(rng.uniform(-math.pi, math.pi), tuple(rng.normal(size=2)))
        h = GroupElement(rng.uniform(-math.pi, math.pi), tuple(rng.normal(size=2)))
        p = se2.point(rng.normal(size=2))
        q = se2.point(rng.normal(size=2))
        lhs = group_act(group_compose(g, h), p).array
        rhs = group_act(g, group_act(h, p)).array
        assert np.allclose(lhs, rhs, atol=1e-12)
        e = group_compose(g, group_inverse(g))
        assert abs(e.angle) <= ALGEBRAIC_TOL and np.allclose(e.translation, 0.0, atol=1e-12)
        assert se2.distance(group_act(g, p), group_act(g, q)) == pytest.approx(se2.distance(p, q), abs=1e-12)


def test_group_act_needs_se2_points():
    """Goal: acting on a non-SE(2) point is an error."""
    with pytest.raises(GeometryError):
        group_act(GroupElement.identity(), Euclidean(2).point([0, 0]))


def test_angles_are_wrapped_into_half_open_interval():
    """Goal: angles live in (-pi, pi]."""
    assert GroupElement(-math.pi, (0, 0)).angle == pytest.approx(math.pi)
    assert GroupElement(3 * math.pi / 2, (0, 0)).angle == pytest.approx(-math.pi / 2)


def test_regions_and_chart_dilation():
    """Goal: box/ball membership, volumes, and a dilation that contains the metric neighbourhood."""
    box = Box((0.0, 0.0), (1.0, 2.0))
    assert box.volume == pytest.approx(2.0)
    assert list(box.contains([[0.5, 0.5], [1.5, 0.5]])) == [True, False]
    ball = Ball((0.0, 0.0), 1.0)
    assert ball.volume == pytest.approx(math.pi)
    assert Euclidean(2).chart_dilation(box, 0.5) == Box((-0.5, -0.5), (1.5, 2.5))

    # every point within hyperbolic distance r of the box lies in the dilated chart box
    rng = np.random.default_rng(9)
    h = Hyperbolic2()
    window = Box((-0.5, -0.5), (0.5, 0.5))
    big = h.chart_dilation(window, 0.4)
    base = h.from_chart(window.sample_uniform(rng, 2_000))
    s = h.sphere(base, 0.4, rng)
    assert np.all(big.contains(h.to_chart(s)))
    with pytest.raises(GeometryError):
        Box((1.0,), (0.0,))


def test_poincare_conversion_and_backend_ids():
    """Goal: origin maps to the disk centre; ids rebuild the same backend kind."""
    h = Hyperbolic2()
    assert to_poincare(h.origin()) == (0.0, 0.0)
    x, y = to_poincare(h.point(h.from_chart([[3.0, 4.0]])[0]))
    assert x ** 2 + y ** 2 < 1.0
    assert isinstance(backend_for("euclidean(3)"), Euclidean) and backend_for("euclidean(3)").chart_dim == 3
    assert isinstance(backend_for(SE2_ON_R2), SE2OnR2)
    assert isinstance(make_geometry("hyperbolic2"), Hyperbolic2)
    with pytest.raises(GeometryError):
        make_geometry("sphere")


def test_point_value_type_is_immutable():
    """Goal: points are frozen values."""
    p = Point((1.0, 2.0), "euclidean(2)")
    with pytest.raises(AttributeError):
        p.coords = (0.0, 0.0)  # type: ignore[misc]
