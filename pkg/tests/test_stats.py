import math

import numpy as np
import pytest

from clusterlab.centres import (
    ConstantIntensity,
    GibbsCentres,
    LatticeCentres,
    PoissonCentres,
    ReferenceMeasure,
    ZeroPotential,
    sample_centres,
)
from clusterlab.clusters import ClusterKernel, DiracComponent, GaussianComponent, ParentClusterLaw, SizeLaw, TranslationPlacement
from clusterlab.configuration import Configuration
from clusterlab.geometry import Box, Euclidean
from clusterlab.process import ClusterProcessModel, sample_marked_replicas, sample_replicas
from clusterlab.stats import (
    EstimateWithError,
    EstimatorError,
    IndicatorProduct,
    IndicatorTest,
    SmoothBumpTest,
    cluster_laplace_theoretical,
    correlation_identity_check,
    duplicate_count,
    empirical_laplace,
    lyapunov_holds,
    marked_laplace_check,
    min_pairwise_distance,
    moment_class_check,
    moment_estimate,
    pair_correlation,
    pair_functional,
    poisson_laplace,
    two_sample_ks,
    z_score,
)

UNIT = Box((0.0, 0.0), (1.0, 1.0))
QUARTER = Box((0.0, 0.0), (0.5, 0.5))
PLANE = Euclidean(2)
GID = PLANE.geometry_id


def _reference(rate):
    return ReferenceMeasure(UNIT, ConstantIntensity(rate), max(rate, 1.0), PLANE)


def _model(rate=20.0, component=None, size=None, centres=None):
    reference = _reference(rate)
    parent = ParentClusterLaw(size or SizeLaw.fixed(1), component or GaussianComponent(0.05, 2))
    kernel = ClusterKernel(parent, TranslationPlacement(PLANE), PLANE)
    return ClusterProcessModel(PLANE, reference, centres or PoissonCentres(reference), kernel)


def _config(points):
    return Configuration(np.asarray(points, dtype=float).reshape(-1, 2), GID, UNIT)


def _poisson_samples(rate, n, seed):
    rng = np.random.default_rng(seed)
    process = PoissonCentres(_reference(rate))
    return [sample_centres(process, rng) for _ in range(n)]


# --- functionals -------------------------------------------------------------------

def test_pair_functional_examples():
    """Goal: 2 of 3 points in B give 2; the empty configuration gives 0."""
    f = IndicatorTest(1.0, QUARTER)
    assert pair_functional(f, _config([[0.1, 0.1], [0.4, 0.2], [0.9, 0.9]])) == 2.0
    assert pair_functional(f, _config([])) == 0.0


def test_empirical_laplace_trivial_cases():
    """Goal: empty samples and f = 0 both give exactly 1; one sample is refused."""
    empties = [_config([]) for _ in range(5)]
    est = empirical_laplace(empties, IndicatorTest(1.0, QUARTER))
    assert est.value == 1.0 and est.std_error == 0.0
    samples = _poisson_samples(10.0, 5, 80)
    assert empirical_laplace(samples, IndicatorTest(0.0, QUARTER)).value == 1.0
    with pytest.raises(EstimatorError):
        empirical_laplace(samples[:1], IndicatorTest(1.0, QUARTER))


def test_poisson_laplace_closed_form():
    """Goal: lambda = 50 and f = 1_[0,.5]^2 give exp(-12.5 (1 - e^-1)) empirically within 3 SE."""
    expected = math.exp(-12.5 * (1.0 - math.exp(-1.0)))
    f = IndicatorTest(1.0, QUARTER)
    assert poisson_laplace(_reference(50.0), f) == pytest.approx(expected, rel=1e-12)
    est = empirical_laplace(_poisson_samples(50.0, 10_000, 81), f)
    assert abs(est.value - expected) <= 3 * est.std_error


def test_poisson_laplace_quadrature_for_smooth_bump():
    """Goal: the quadrature route agrees with the empirical functional for a smooth f."""
    f = SmoothBumpTest((0.5, 0.5), 0.3, 2.0)
    value = poisson_laplace(_reference(30.0), f)
    est = empirical_laplace(_poisson_samples(30.0, 10_000, 82), f)
    assert abs(est.value - value) <= 3 * est.std_error


def test_laplace_is_monotone_in_f():
    """Goal: f <= g pointwise gives L(f) >= L(g) on shared samples."""
    samples = _poisson_samples(30.0, 200, 83)
    small = empirical_laplace(samples, IndicatorTest(0.5, QUARTER))
    big = empirical_laplace(samples, IndicatorTest(1.0, UNIT))
    assert small.value >= big.value


# --- theoretical cluster Laplace functional --------------------------------------------

def test_cluster_laplace_zero_and_gibbs():
    """Goal: f = 0 gives 1 exactly; Gibbs centres have no closed form."""
    rng = np.random.default_rng(84)
    model = _model()
    assert cluster_laplace_theoretical(model, IndicatorTest(0.0, QUARTER), rng, n_outer=64).value == 1.0
    gibbs = _model(centres=GibbsCentres(_reference(20.0), ZeroPotential(), mh_sweeps=5))
    with pytest.raises(EstimatorError, match="no closed form"):
        cluster_laplace_theoretical(gibbs, IndicatorTest(1.0, QUARTER), rng)


def test_cluster_laplace_dirac_reduces_to_poisson():
    """Goal: single points at the centre give G_x(f) = exp(-f(x)) and the Poisson closed form."""
    model = _model(rate=50.0, component=DiracComponent((0.0, 0.0)))
    f = IndicatorTest(1.0, QUARTER)
    est = cluster_laplace_theoretical(model, f, np.random.default_rng(85), n_outer=2 ** 14, n_inner=4)
    assert abs(est.value - poisson_laplace(_reference(50.0), f)) <= 3 * est.std_error


def test_cluster_laplace_matches_neyman_scott_samples():
    """Goal: Poisson(20) centres, poisson(3) sizes, sigma 0.05: both estimators agree within 3 joint SE."""
    model = _model(rate=20.0, size=SizeLaw.poisson(3.0, 30))
    f = IndicatorTest(1.0, QUARTER)
    rng = np.random.default_rng(86)
    theory = cluster_laplace_theoretical(model, f, rng, n_outer=2 ** 14, n_inner=64)
    empirical = empirical_laplace(sample_replicas(model, rng, 10_000), f)
    assert abs(theory.value - empirical.value) <= 3 * math.hypot(theory.std_error, empirical.std_error)


def test_cluster_laplace_lattice_product():
    """Goal: lattice centres give the finite product of G_x(f)."""
    lattice = LatticeCentres(_config([[0.25, 0.25], [0.75, 0.75]]))
    model = _model(component=DiracComponent((0.0, 0.0)), centres=lattice)
    f = IndicatorTest(1.0, QUARTER)
    est = cluster_laplace_theoretical(model, f, np.random.default_rng(87), n_inner=16)
    assert est.value == pytest.approx(math.exp(-1.0))
    assert est.std_error == 0.0


def test_marked_laplace_matches_centre_laplace():
    """Goal: the marked measure at sum f(y_i) equals the centre functional at fbar."""
    model = _model(rate=20.0, size=SizeLaw.poisson(2.0, 20), component=GaussianComponent(0.1, 2))
    f = IndicatorTest(1.0, QUARTER)
    rng_a, rng_b, rng_c = np.random.default_rng(88).spawn(3)
    marked = sample_marked_replicas(model, rng_a, 4_000)
    centres = [sample_centres(model.centres, r, window=model.plus_window) for r in rng_b.spawn(4_000)]
    record = marked_laplace_check(marked, centres, model.kernel, f, rng_c, n_inner=64)
    assert abs(record["z"]) <= 3


# --- moments -------------------------------------------------------------------------

def test_poisson_moments():
    """Goal: first and second moments of a Poisson count are lambda|B| and lambda|B| + (lambda|B|)^2."""
    samples = _poisson_samples(50.0, 10_000, 89)
    f = IndicatorTest(1.0, QUARTER)
    m = 12.5
    first = moment_estimate(samples, f, 1)
    second = moment_estimate(samples, f, 2)
    assert abs(first.value - m) <= 3 * first.std_error
    assert abs(second.value - (m + m * m)) <= 3 * second.std_error


def test_moments_of_empty_process_and_bad_order():
    """Goal: the empty process has all moments exactly 0; orders outside 1..4 are refused."""
    empties = [_config([]) for _ in range(4)]
    assert moment_estimate(empties, IndicatorTest(1.0, QUARTER), 2).value == 0.0
    with pytest.raises(EstimatorError):
        moment_estimate(empties, IndicatorTest(1.0, QUARTER), 5)


def test_moment_class_and_lyapunov():
    """Goal: bounded f on Poisson samples has finite, stable moments and the Lyapunov ordering holds."""
    samples = _poisson_samples(30.0, 2_000, 90)
    f = IndicatorTest(1.0, QUARTER)
    rows = moment_class_check(samples, f, max_order=2)
    assert [r["order"] for r in rows] == [1, 2]
    assert all(r["finite"] for r in rows)
    assert all(abs(r["z"]) <= 3 for r in rows)
    assert lyapunov_holds(samples, f, 1.0, 1.0)
    assert lyapunov_holds(samples, f, 0.5, 2.5)
    with pytest.raises(EstimatorError):
        lyapunov_holds(samples, f, 0.0, 1.0)


# --- correlation identities ----------------------------------------------------------

def test_first_order_correlation_identity():
    """Goal: Poisson, n = 1, phi = 1_B: E gamma(B) = theta(B)."""
    samples = _poisson_samples(40.0, 4_000, 91)
    record = correlation_identity_check(samples, IndicatorProduct((QUARTER,)), 1, np.random.default_rng(92), _reference(40.0))
    assert abs(record["z"]) <= 3
    assert record["rhs"] == pytest.approx(10.0, rel=0.05)


def test_second_order_correlation_identity():
    """Goal: disjoint B1, B2 give E sum over pairs = theta(B1) theta(B2)."""
    b1, b2 = QUARTER, Box((0.5, 0.5), (1.0, 1.0))
    samples = _poisson_samples(20.0, 4_000, 93)
    record = correlation_identity_check(samples, IndicatorProduct((b1, b2)), 2, np.random.default_rng(94), _reference(20.0))
    assert abs(record["z"]) <= 3
    assert abs(record["lhs"] - 25.0) <= 3 * record["se_lhs"]


def test_correlation_identity_lattice_and_limits():
    """Goal: a lattice gives its own sum exactly; no reference means no z; n = 3 is refused."""
    config = _config([[0.1, 0.1], [0.2, 0.3], [0.8, 0.8]])
    record = correlation_identity_check([config] * 3, IndicatorProduct((QUARTER,)), 1, np.random.default_rng(95))
    assert record["lhs"] == 2.0 and record["se_lhs"] == 0.0
    assert record["z"] is None and record["rhs"] is None
    with pytest.raises(EstimatorError):
        correlation_identity_check([config] * 3, IndicatorProduct((QUARTER,)), 3, np.random.default_rng(95))


def test_poisson_pair_correlation_is_one():
    """Goal: the edge-corrected estimate of g(r) is close to 1 for a Poisson process."""
    samples = _poisson_samples(100.0, 200, 96)
    g = pair_correlation(samples, np.array([0.1, 0.2]), bandwidth=0.03)
    assert np.all(np.abs(g - 1.0) < 0.1)
    with pytest.raises(EstimatorError):
        pair_correlation(samples, np.array([0.1]), bandwidth=0.0)


# --- small helpers --------------------------------------------------------------------

def test_distance_helpers_and_z_score():
    """Goal: duplicates and nearest distances are exact; z handles a zero SE."""
    config = _config([[0.1, 0.1], [0.1, 0.1], [0.4, 0.5]])
    assert duplicate_count(config) == 1
    assert min_pairwise_distance(config) == 0.0
    assert min_pairwise_distance(_config([[0.0, 0.0]])) is None
    assert z_score(1.0, 1.0, 0.0) == 0.0
    assert z_score(2.0, 1.0, 0.0) == math.inf
    assert z_score(2.0, 1.0, 0.3, 0.4) == pytest.approx(2.0)
    with pytest.raises(EstimatorError):
        EstimateWithError.from_values([1.0])


def test_two_sample_ks_separates_shifted_laws():
    """Goal: equal laws pass, a shift of one standard deviation fails."""
    rng = np.random.default_rng(97)
    a, b = rng.normal(size=2_000), rng.normal(size=2_000)
    assert two_sample_ks(a, b)["passed"]
    shifted = two_sample_ks(a, b + 1.0)
    assert not shifted["passed"] and shifted["n"] == 2_000
