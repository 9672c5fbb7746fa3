import math

import numpy as np
import pytest
from scipy import integrate
from structlog.testing import capture_logs

from clusterlab.clusters import (
    ClusterKernel,
    DensityUnavailableError,
    DimensionMismatchError,
    DiracComponent,
    GaussianComponent,
    GeodesicTransportPlacement,
    GroupActionPlacement,
    ParentClusterLaw,
    RadialAngularPlacement,
    RadialComponent,
    RotationComponent,
    SizeLaw,
    TangentGaussianComponent,
    TranslationPlacement,
    UniformBallComponent,
    cluster_log_density,
    group_action_shift,
    place_cluster,
    sample_cluster,
    sample_clusters,
    sample_parent,
    sample_parent_batch,
)
from clusterlab.configuration import ClusterVector
from clusterlab.geometry import Euclidean, GeometryError, Hyperbolic2, SE2OnR2

PLANE = Euclidean(2)
SE2 = SE2OnR2()


def _translation(component, size=None, geometry=PLANE):
    parent = ParentClusterLaw(size or SizeLaw.fixed(1), component)
    return ClusterKernel(parent, TranslationPlacement(geometry), geometry)


def _rotation_kernel(xi_mean, angle, xi_sigma=1.0, size=None):
    parent = ParentClusterLaw(size or SizeLaw.fixed(1), RotationComponent(xi_mean, xi_sigma, angle))
    return ClusterKernel(parent, GroupActionPlacement(SE2), SE2, declared_range=10.0)


# --- size laws ---------------------------------------------------------------------

def test_size_laws_normalised_and_fixed():
    """Goal: fixed(n) is a point mass; explicit vectors must sum to 1."""
    law = SizeLaw.fixed(3)
    assert law.is_degenerate() and law.mean == 3 and law.n_max == 3
    assert sum(law.probabilities) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        SizeLaw.explicit([0.5, 0.4])
    assert SizeLaw.explicit([0.25, 0.75]).log_prob(1) == pytest.approx(math.log(0.75))
    assert SizeLaw.explicit([0.25, 0.75]).log_prob(5) == -math.inf


def test_poisson_size_mean_and_truncation_warning():
    """Goal: poisson(3) truncated at 20 has mean 3; a harsh truncation is reported."""
    rng = np.random.default_rng(30)
    law = SizeLaw.poisson(3.0, n_max=20)
    assert law.truncated_mass < 1e-9
    n = 10_000
    draws = law.sample(rng, n)
    assert abs(draws.mean() - 3.0) <= 3 * math.sqrt(3.0 / n)
    with capture_logs() as logs:
        harsh = SizeLaw.poisson(3.0, n_max=4)
    assert harsh.truncated_mass > 1e-3
    assert any(e["event"] == "size_law_truncated" for e in logs)


def test_sample_parent_sizes():
    """Goal: fixed(1) gives one component, fixed(0) the empty cluster."""
    rng = np.random.default_rng(31)
    one = ParentClusterLaw(SizeLaw.fixed(1), GaussianComponent(1.0, 2))
    assert all(len(sample_parent(one, rng)) == 1 for _ in range(50))
    empty = ParentClusterLaw(SizeLaw.fixed(0), GaussianComponent(1.0, 2))
    w = sample_parent(empty, rng)
    assert len(w) == 0


# --- placement ---------------------------------------------------------------------

def test_translation_placement_example():
    """Goal: x = (1,1) with offsets (0.5,0), (-1,2) lands on (1.5,1), (0,3)."""
    kernel = _translation(GaussianComponent(1.0, 2), SizeLaw.fixed(2))
    w_bar = ClusterVector(np.array([[0.5, 0.0], [-1.0, 2.0]]), "euclidean")
    y = place_cluster(kernel, PLANE.point([1, 1]), w_bar)
    assert np.allclose(y.components, [[1.5, 1.0], [0.0, 3.0]])


@pytest.mark.parametrize(
    "kernel",
    [
        _translation(GaussianComponent(1.0, 2)),
        _rotation_kernel((0.0, 0.0), math.pi),
    ],
    ids=["translation", "group_action"],
)
def test_empty_parent_cluster_places_to_empty(kernel):
    """Goal: any variant maps the empty cluster to the empty cluster."""
    x = kernel.geometry.point([0.2, 0.3])
    out = place_cluster(kernel, x, ClusterVector(np.zeros((0, kernel.parent.component.width)), kernel.parent.space))
    assert len(out) == 0


def test_group_action_half_turn_example():
    """Goal: rotation by pi about xi = (1,0) sends x = (2,0) to 2 xi - x = (0,0)."""
    kernel = _rotation_kernel((1.0, 0.0), math.pi)
    w_bar = ClusterVector(np.array([[math.pi, 1.0, 0.0]]), "se2")
    y = place_cluster(kernel, SE2.point([2.0, 0.0]), w_bar)
    assert np.allclose(y.components, [[0.0, 0.0]], atol=1e-12)


def test_group_action_mean_is_two_m_minus_x():
    """Goal: A = -I and xi ~ N(m, I) give E y = 2m - x."""
    rng = np.random.default_rng(32)
    kernel = _rotation_kernel((0.5, -1.0), math.pi)
    n = 20_000
    x = np.array([[2.0, 1.0]])
    y, _ = sample_clusters(kernel, np.repeat(x, n, axis=0), rng)
    target = 2 * np.array([0.5, -1.0]) - x[0]
    assert np.all(np.abs(y.mean(axis=0) - target) <= 3 * 2.0 / math.sqrt(n))


def test_group_action_is_translation_of_base_cluster():
    """Goal: with the rotation fixed, eta_x is eta_0 moved by A x (and xi shifts by -(I-A)^{-1} A x)."""
    angle = math.pi / 3
    kernel = _rotation_kernel((0.3, 0.7), angle, xi_sigma=0.5, size=SizeLaw.fixed(4))
    x = np.array([1.5, -0.5])
    y_x = sample_cluster(kernel, SE2.point(x), np.random.default_rng(33)).components
    y_0 = sample_cluster(kernel, SE2.point([0.0, 0.0]), np.random.default_rng(33)).components
    shift = group_action_shift(angle, x)
    assert np.allclose(y_x - y_0, shift.point_shift, atol=1e-12)

    # the same point is reached from the origin by moving xi by the parameter shift
    w = sample_parent(kernel.parent, np.random.default_rng(34)).components
    moved = w.copy()
    moved[:, 1:] = w[:, 1:] - shift.parameter_shift
    at_x = kernel.place_batch(np.repeat(x[None, :], 4, axis=0), w)
    at_0 = kernel.place_batch(np.zeros((4, 2)), moved)
    assert np.allclose(at_x, at_0, atol=1e-12)
    with pytest.raises(GeometryError):
        group_action_shift(0.0, x)


def test_group_action_needs_se2_geometry():
    """Goal: the group action is only defined on the se2-on-r2 backend."""
    with pytest.raises(GeometryError):
        GroupActionPlacement(PLANE)


def test_radial_delta_law_places_on_unit_sphere():
    """Goal: r = 1 puts every point at distance 1 from its centre, in the plane and on H^2."""
    rng = np.random.default_rng(35)
    for geometry in (PLANE, Hyperbolic2()):
        parent = ParentClusterLaw(SizeLaw.fixed(3), RadialComponent("fixed", (1.0,)))
        kernel = ClusterKernel(parent, RadialAngularPlacement(geometry), geometry)
        x = geometry.from_chart([[0.2, -0.1]])
        centres = np.repeat(x, 200, axis=0)
        y, owner = sample_clusters(kernel, centres, rng)
        assert np.allclose(geometry.distances(centres[owner], y), 1.0, atol=1e-9)


def test_radial_angular_needs_rng():
    """Goal: the stochastic placement refuses to run without randomness."""
    parent = ParentClusterLaw(SizeLaw.fixed(1), RadialComponent("uniform", (0.0, 1.0)))
    kernel = ClusterKernel(parent, RadialAngularPlacement(PLANE), PLANE)
    with pytest.raises(ValueError):
        place_cluster(kernel, PLANE.point([0, 0]), ClusterVector(np.array([[0.5]]), "radii"))


def test_geodesic_transport_preserves_offset_norms():
    """Goal: on H^2, d(x, phi_x(w)) = |w| at the base point."""
    rng = np.random.default_rng(36)
    h = Hyperbolic2()
    base = h.origin().coords
    comp = TangentGaussianComponent(0.4, h, base)
    kernel = ClusterKernel(ParentClusterLaw(SizeLaw.fixed(2), comp), GeodesicTransportPlacement(h, base), h)
    x = h.from_chart(rng.normal(size=(500, 2)))
    w, owner = sample_parent_batch(kernel.parent, 500, rng)
    assert w.shape == (1_000, 3)
    placed = kernel.place_batch(x[owner], w)
    h.validate(placed)
    assert np.allclose(h.distances(x[owner], placed), comp.norms(w), atol=1e-9)


def test_translation_is_isometry():
    """Goal: pairwise distances inside a cluster survive the translation."""
    rng = np.random.default_rng(38)
    kernel = _translation(GaussianComponent(0.3, 2), SizeLaw.fixed(5))
    w = sample_parent(kernel.parent, rng)
    y = place_cluster(kernel, PLANE.point([4.0, -1.0]), w)
    i, j = np.triu_indices(5, k=1)
    assert np.allclose(
        np.linalg.norm(w.components[i] - w.components[j], axis=1),
        np.linalg.norm(y.components[i] - y.components[j], axis=1),
        atol=1e-9,
    )


def test_dimension_mismatch():
    """Goal: 3-D offsets cannot be placed around 2-D centres."""
    kernel = _translation(GaussianComponent(1.0, 3))
    with pytest.raises(DimensionMismatchError):
        kernel.place_batch(np.zeros((1, 2)), np.zeros((1, 3)))


# --- sampling ----------------------------------------------------------------------

def test_gaussian_cluster_mean_offset():
    """Goal: translation-Gaussian sigma = 0.1 has mean offset 0 within 3 sigma / sqrt(n)."""
    rng = np.random.default_rng(39)
    kernel = _translation(GaussianComponent(0.1, 2))
    n = 100_000
    x = np.array([[0.3, 0.6]])
    y, _ = sample_clusters(kernel, np.repeat(x, n, axis=0), rng)
    assert np.all(np.abs((y - x).mean(axis=0)) <= 3 * 0.1 / math.sqrt(n))


def test_sample_cluster_is_parent_then_place():
    """Goal: sample_cluster and place_cluster(sample_parent) agree byte for byte."""
    kernels = [
        _translation(UniformBallComponent(0.2, 2), SizeLaw.poisson(3.0, 20)),
        _rotation_kernel((0.0, 1.0), None, size=SizeLaw.fixed(3)),
        ClusterKernel(
            ParentClusterLaw(SizeLaw.fixed(3), RadialComponent("half_normal", (0.2,))),
            RadialAngularPlacement(PLANE),
            PLANE,
        ),
    ]
    for kernel in kernels:
        x = kernel.geometry.point([0.1, 0.2])
        a = sample_cluster(kernel, x, np.random.default_rng(40)).components
        r = np.random.default_rng(40)
        b = place_cluster(kernel, x, sample_parent(kernel.parent, r), r).components
        assert a.tobytes() == b.tobytes()


def test_dirac_component_is_the_centre():
    """Goal: Q = Dirac at the origin places every point on its centre."""
    rng = np.random.default_rng(41)
    kernel = _translation(DiracComponent((0.0, 0.0)), SizeLaw.fixed(2))
    centres = rng.random((10, 2))
    y, owner = sample_clusters(kernel, centres, rng)
    assert np.array_equal(y, centres[owner])


def test_cluster_range_defaults():
    """Goal: Gaussian kernels use 6 sigma; a declared range wins."""
    assert _translation(GaussianComponent(0.05, 2)).cluster_range == pytest.approx(0.3)
    assert _translation(UniformBallComponent(0.2, 2)).cluster_range == pytest.approx(0.2)
    assert _rotation_kernel((0, 0), None).cluster_range == 10.0


# --- densities ---------------------------------------------------------------------

def test_log_density_at_mode_and_gradient():
    """Goal: standard normal at its mode; gradient -(y - x) / sigma^2."""
    kernel = _translation(GaussianComponent(1.0, 1), geometry=Euclidean(1))
    x = Euclidean(1).point([0.0])
    value, grad = cluster_log_density(kernel, x, ClusterVector(np.array([[0.0]]), x.geometry_id))
    assert value == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert np.allclose(grad, 0.0)
    _, grad = cluster_log_density(kernel, x, ClusterVector(np.array([[1.0]]), x.geometry_id))
    assert grad[0, 0] == pytest.approx(-1.0)


def test_log_density_gradient_matches_finite_differences():
    """Goal: analytic gradient agrees with central differences (h = 1e-5) on 10^3 inputs."""
    rng = np.random.default_rng(42)
    kernel = _translation(GaussianComponent(0.7, 2), SizeLaw.fixed(3))
    h = 1e-5
    for _ in range(1_000):
        x = PLANE.point(rng.normal(size=2))
        y = rng.normal(size=(3, 2))
        _, grad = cluster_log_density(kernel, x, ClusterVector(y, PLANE.geometry_id))
        i, k = rng.integers(3), rng.integers(2)
        up, down = y.copy(), y.copy()
        up[i, k] += h
        down[i, k] -= h
        fd = (
            cluster_log_density(kernel, x, ClusterVector(up, PLANE.geometry_id))[0]
            - cluster_log_density(kernel, x, ClusterVector(down, PLANE.geometry_id))[0]
        ) / (2 * h)
        assert fd == pytest.approx(grad[i, k], rel=1e-6, abs=1e-8)


def test_log_density_integrates_to_one():
    """Goal: the one-point Gaussian density integrates to 1 over a 6 sigma range."""
    sigma = 0.3
    geometry = Euclidean(1)
    kernel = _translation(GaussianComponent(sigma, 1), geometry=geometry)
    x = geometry.point([0.5])
    total, _ = integrate.quad(
        lambda y: math.exp(cluster_log_density(kernel, x, ClusterVector(np.array([[y]]), geometry.geometry_id))[0]),
        0.5 - 6 * sigma,
        0.5 + 6 * sigma,
    )
    assert total == pytest.approx(1.0, abs=1e-4)


def test_density_unavailable_for_other_kernels():
    """Goal: only translation-Gaussian kernels have a density."""
    kernel = _translation(UniformBallComponent(0.2, 2))
    with pytest.raises(DensityUnavailableError):
        cluster_log_density(kernel, PLANE.point([0, 0]), ClusterVector(np.zeros((1, 2)), PLANE.geometry_id))
