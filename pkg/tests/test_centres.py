import math

import numpy as np
import pytest
from scipy import integrate

from clusterlab.centres import (
    ConstantIntensity,
    GibbsCentres,
    HardCorePotential,
    IntensityBoundError,
    LatticeCentres,
    LinearIntensity,
    PoissonCentres,
    ReferenceMeasure,
    StepIntensity,
    StraussPotential,
    ZeroPotential,
    gibbs_step,
    pair_potential_between,
    sample_centres,
)
from clusterlab.configuration import Configuration
from clusterlab.geometry import Box, Euclidean, Hyperbolic2
from clusterlab.stats import IndicatorTest, empirical_laplace, pair_correlation, poisson_laplace

UNIT = Box((0.0, 0.0), (1.0, 1.0))
PLANE = Euclidean(2)


def _reference(rate=50.0, intensity=None, bound=None, window=UNIT, geometry=PLANE):
    lam = intensity or ConstantIntensity(rate)
    return ReferenceMeasure(window, lam, bound if bound is not None else rate, geometry)


def test_poisson_mean_count():
    """Goal: lambda = 50 on the unit square gives mean count 50 within 3 SE over 10^4 replicas."""
    rng = np.random.default_rng(10)
    process = PoissonCentres(_reference(50.0))
    n = 10_000
    counts = np.array([len(sample_centres(process, rng)) for _ in range(n)])
    assert abs(counts.mean() - 50.0) <= 3 * math.sqrt(50.0 / n)


def test_poisson_disjoint_counts_uncorrelated():
    """Goal: counts in the left and right halves have correlation within 3 SE of zero."""
    rng = np.random.default_rng(11)
    process = PoissonCentres(_reference(50.0))
    n = 10_000
    left = np.empty(n)
    right = np.empty(n)
    for i in range(n):
        pts = sample_centres(process, rng).points
        left[i] = np.sum(pts[:, 0] < 0.5)
        right[i] = np.sum(pts[:, 0] >= 0.5)
    corr = np.corrcoef(left, right)[0, 1]
    assert abs(corr) <= 3 / math.sqrt(n)


def test_zero_intensity_gives_empty_configuration():
    """Goal: lambda = 0 never produces a point."""
    rng = np.random.default_rng(12)
    ref = ReferenceMeasure(UNIT, ConstantIntensity(0.0), 1.0, PLANE)
    assert all(len(sample_centres(PoissonCentres(ref), rng)) == 0 for _ in range(100))


def test_thinning_linear_intensity():
    """Goal: lambda(x) = 100 x1 on the unit square has mean count 50."""
    rng = np.random.default_rng(13)
    process = PoissonCentres(_reference(intensity=LinearIntensity(0.0, 100.0), bound=100.0))
    n = 4_000
    counts = np.array([len(sample_centres(process, rng)) for _ in range(n)])
    assert abs(counts.mean() - 50.0) <= 3 * math.sqrt(50.0 / n)


def test_intensity_above_bound_is_an_error():
    """Goal: thinning never clips a misdeclared bound silently."""
    rng = np.random.default_rng(14)
    process = PoissonCentres(_reference(intensity=LinearIntensity(0.0, 100.0), bound=50.0))
    with pytest.raises(IntensityBoundError) as exc:
        for _ in range(20):
            sample_centres(process, rng)
    assert exc.value.bound == 50.0
    assert exc.value.observed > 50.0


def test_step_intensity_mass_and_mean():
    """Goal: a non-smooth intensity has the piecewise mass and matching Poisson mean."""
    ref = _reference(intensity=StepIntensity(10.0, 90.0, 0.5), bound=90.0)
    assert ref.mass() == pytest.approx(50.0, rel=1e-4)
    rng = np.random.default_rng(15)
    n = 4_000
    counts = np.array([len(sample_centres(PoissonCentres(ref), rng)) for _ in range(n)])
    assert abs(counts.mean() - 50.0) <= 3 * math.sqrt(50.0 / n)


def test_reference_mass_on_hyperbolic_chart():
    """Goal: theta carries the volume density 1/sqrt(1+|u|^2) of the hyperboloid chart."""
    window = Box((-1.0, -1.0), (1.0, 1.0))
    ref = ReferenceMeasure(window, ConstantIntensity(3.0), 3.0, Hyperbolic2())
    expected, _ = integrate.dblquad(lambda y, x: 3.0 / math.sqrt(1 + x * x + y * y), -1, 1, -1, 1)
    assert ref.total_mass == pytest.approx(expected, rel=1e-7)


def test_hyperbolic_poisson_points_on_sheet():
    """Goal: centres are returned in hyperboloid coordinates inside the chart window."""
    rng = np.random.default_rng(16)
    window = Box((-1.0, -1.0), (1.0, 1.0))
    h = Hyperbolic2()
    cfg = sample_centres(PoissonCentres(ReferenceMeasure(window, ConstantIntensity(30.0), 30.0, h)), rng)
    assert cfg.points.shape[1] == 3
    h.validate(cfg.points)
    assert np.all(window.contains(h.to_chart(cfg.points)))


def test_lattice_is_returned_verbatim():
    """Goal: lattice centres, duplicates included, come back unchanged every call."""
    rng = np.random.default_rng(17)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    lattice = LatticeCentres(Configuration(pts, PLANE.geometry_id, UNIT))
    for _ in range(3):
        out = sample_centres(lattice, rng, window=UNIT.dilate(1.0))
        assert np.array_equal(out.points, pts)


def test_plus_sampling_window_override():
    """Goal: a dilated window puts centres outside the reference window."""
    rng = np.random.default_rng(18)
    big = UNIT.dilate(0.5)
    cfg = sample_centres(PoissonCentres(_reference(50.0)), rng, window=big)
    assert np.all(big.contains(cfg.points))
    assert not np.all(UNIT.contains(cfg.points))


def test_gibbs_zero_potential_matches_poisson():
    """Goal: with V = 0 the chain reproduces the Poisson count mean and Laplace functional."""
    rng = np.random.default_rng(19)
    ref = _reference(10.0)
    process = GibbsCentres(ref, ZeroPotential(), mh_sweeps=30)
    n = 400
    samples = [sample_centres(process, rng) for _ in range(n)]
    counts = np.array([len(s) for s in samples], dtype=float)
    assert abs(counts.mean() - 10.0) <= 3 * math.sqrt(10.0 / n)

    f = IndicatorTest(1.0, Box((0.0, 0.0), (0.5, 0.5)))
    est = empirical_laplace(samples, f)
    assert abs(est.value - poisson_laplace(ref, f)) <= 3 * est.std_error


def test_gibbs_hard_core_respects_radius():
    """Goal: no output pair is closer than the hard-core radius."""
    rng = np.random.default_rng(20)
    process = GibbsCentres(_reference(40.0), HardCorePotential(0.08), mh_sweeps=20)
    for _ in range(20):
        pts = sample_centres(process, rng).points
        if pts.shape[0] > 1:
            i, j = np.triu_indices(pts.shape[0], k=1)
            assert np.min(np.linalg.norm(pts[i] - pts[j], axis=1)) >= 0.08


def test_strauss_pair_correlation_below_one_at_short_range():
    """Goal: a repulsive Strauss process has g(r) < 1 inside the interaction radius."""
    rng = np.random.default_rng(21)
    process = GibbsCentres(_reference(60.0), StraussPotential(0.1, 0.1), mh_sweeps=20)
    samples = [sample_centres(process, rng) for _ in range(60)]
    g = pair_correlation(samples, np.array([0.05]), bandwidth=0.03)
    assert g[0] < 1.0


def test_gibbs_step_keeps_points_in_window_and_validates():
    """Goal: one sweep stays inside the window; bad parameters are rejected."""
    rng = np.random.default_rng(22)
    process = GibbsCentres(_reference(20.0), StraussPotential(0.05, 0.5))
    state = Configuration.empty(PLANE.geometry_id, UNIT, 2)
    for _ in range(5):
        state = gibbs_step(state, process, rng)
    assert len(state) > 0
    assert np.all(UNIT.contains(state.points))
    with pytest.raises(ValueError):
        GibbsCentres(_reference(20.0), ZeroPotential(), mh_sweeps=0)


def test_pair_potential_is_symmetric():
    """Goal: V(p, q) = V(q, p) for every family."""
    p, q = PLANE.point([0.0, 0.0]), PLANE.point([0.03, 0.04])
    for potential in (ZeroPotential(), HardCorePotential(0.1), StraussPotential(0.1, 0.5)):
        assert pair_potential_between(potential, PLANE, p, q) == pair_potential_between(potential, PLANE, q, p)
    assert pair_potential_between(StraussPotential(0.1, 0.5), PLANE, p, q) == pytest.approx(math.log(2.0))
