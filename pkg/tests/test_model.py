"""Model module: densities, sampling, ground truth, geometric constants.

Derived expectations are computed by independent oracles: quasi-random
integration for masses and volumes, direct Monte Carlo for ball masses, and
hand arithmetic for the uniform values.
"""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree
from scipy.stats import qmc

from knncluster.model import (
    BadMass,
    DegenerateGeometry,
    DimensionMismatch,
    OverlappingComponents,
    StraddlesBackground,
    cap_volume,
    density_at,
    geometry_quantities,
    ground_truth,
    lens_volume,
    make_ball_mixture,
    sample,
    unit_ball_volume,
)

TWO_OVER_PI = 2.0 / math.pi


# ---------------------------------------------------------------------------
# construction and density evaluation
# ---------------------------------------------------------------------------


def test_two_disks_density_value(two_disks):
    # mass / volume = 0.5 / (pi * 0.25)
    assert density_at(two_disks, np.array([0.0, 0.0])) == pytest.approx(TWO_OVER_PI, abs=1e-12)
    assert density_at(two_disks, np.array([3.0, 0.1])) == pytest.approx(TWO_OVER_PI, abs=1e-12)


def test_unit_interval_density_is_one():
    m = make_ball_mixture(1, [((0.0,), 0.5, 1.0)])
    assert density_at(m, np.array([0.2])) == pytest.approx(1.0, abs=1e-12)
    assert density_at(m, np.array([0.5])) == pytest.approx(1.0, abs=1e-12)


def test_outside_support_density_zero(two_disks):
    assert density_at(two_disks, np.array([10.0, 10.0])) == 0.0


def test_overlapping_components_rejected():
    with pytest.raises(OverlappingComponents):
        make_ball_mixture(2, [((0.0, 0.0), 1.0, 0.5), ((1.5, 0.0), 1.0, 0.5)])


def test_bad_mass_rejected():
    with pytest.raises(BadMass):
        make_ball_mixture(2, [((0.0, 0.0), 0.5, 0.4), ((3.0, 0.0), 0.5, 0.4)])


def test_straddling_background_rejected():
    with pytest.raises(StraddlesBackground):
        make_ball_mixture(
            2,
            [((0.0, 0.0), 0.5, 0.5), ((3.0, 0.0), 0.5, 0.3)],
            background={"box": [[-0.2, 4.0], [-2.0, 2.0]], "mass": 0.2},
        )


def test_dimension_mismatch(two_disks):
    with pytest.raises(DimensionMismatch):
        density_at(two_disks, np.array([0.0, 0.0, 0.0]))


def test_density_integrates_to_one_qmc(two_disks_noisy):
    # quasi-random integration over the background box (which contains the
    # support) must recover total mass 1 within 1%
    bounds = two_disks_noisy.background.bounds
    sampler = qmc.Halton(d=2, scramble=True, seed=5)
    pts = qmc.scale(sampler.random(2**20), bounds[:, 0], bounds[:, 1])
    box_volume = float(np.prod(bounds[:, 1] - bounds[:, 0]))
    integral = box_volume * float(np.mean(density_at(two_disks_noisy, pts)))
    assert integral == pytest.approx(1.0, abs=0.01)


def test_density_integrates_to_one_qmc_no_background(two_disks):
    lo, hi = np.array([-1.0, -1.0]), np.array([4.0, 1.0])
    sampler = qmc.Halton(d=2, scramble=True, seed=9)
    pts = qmc.scale(sampler.random(2**20), lo, hi)
    integral = float(np.prod(hi - lo)) * float(np.mean(density_at(two_disks, pts)))
    assert integral == pytest.approx(1.0, abs=0.01)


# ---------------------------------------------------------------------------
# cap / lens volumes (oracle: quadrature and interval arithmetic)
# ---------------------------------------------------------------------------


def test_cap_volume_1d_is_height():
    assert cap_volume(1, 0.5, 0.2) == pytest.approx(0.2, abs=1e-12)


def test_cap_volume_2d_matches_quadrature():
    # area of a circular cap by slicing: integrate chord lengths
    radius, height = 0.8, 0.3
    xs = np.linspace(radius - height, radius, 20001)
    chord = 2.0 * np.sqrt(np.maximum(radius**2 - xs**2, 0.0))
    expected = np.trapezoid(chord, xs)
    assert cap_volume(2, radius, height) == pytest.approx(expected, rel=1e-6)


def test_cap_volume_half_and_full():
    for d in (1, 2, 3, 5):
        full = unit_ball_volume(d) * 0.7**d
        assert cap_volume(d, 0.7, 0.7) == pytest.approx(full / 2.0, rel=1e-12)
        assert cap_volume(d, 0.7, 1.4) == pytest.approx(full, rel=1e-12)


def test_lens_volume_1d_interval_overlap():
    # intervals [-0.5, 0.5] and [0.3, 0.9] overlap on [0.3, 0.5]
    assert lens_volume(1, 0.5, 0.3, 0.6) == pytest.approx(0.2, abs=1e-12)


@pytest.mark.parametrize("d,r1,r2,dist", [(2, 0.5, 0.2, 0.5), (3, 1.0, 0.7, 1.2), (2, 0.5, 1.4, 0.5)])
def test_lens_volume_matches_monte_carlo(d, r1, r2, dist):
    rng = np.random.default_rng(42)
    n = 400_000
    # sample uniformly in ball 1, count membership in ball 2
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * (r1 * rng.random(n) ** (1.0 / d))[:, None]
    center2 = np.zeros(d)
    center2[0] = dist
    frac = np.mean(np.linalg.norm(pts - center2, axis=1) <= r2)
    expected = unit_ball_volume(d) * r1**d * frac
    got = lens_volume(d, r1, r2, dist)
    assert got == pytest.approx(expected, rel=0.02, abs=1e-4)


def test_lens_volume_disjoint_and_contained():
    assert lens_volume(2, 0.5, 0.5, 3.0) == 0.0
    assert lens_volume(2, 2.0, 0.5, 0.3) == pytest.approx(unit_ball_volume(2) * 0.25, rel=1e-12)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_sampling_mass_split(two_disks):
    cloud = sample(two_disks, 100_000, seed=7)
    frac = np.mean(cloud.points[:, 0] > 1.5)
    assert frac == pytest.approx(0.5, abs=0.01)


def test_sampling_single_point_in_support(two_disks):
    cloud = sample(two_disks, 1, seed=3)
    assert cloud.n == 1
    assert density_at(two_disks, cloud.points[0]) > 0.0


def test_sampling_deterministic(two_disks):
    a = sample(two_disks, 500, seed=123)
    b = sample(two_disks, 500, seed=123)
    assert np.array_equal(a.points, b.points)
    c = sample(two_disks, 500, seed=124)
    assert not np.array_equal(a.points, c.points)


def test_sampling_region_masses(two_disks_noisy):
    # empirical region frequencies within 4 * sqrt(q(1-q)/n) of the analytic
    # masses, for each ball and for the background remainder
    n = 100_000
    cloud = sample(two_disks_noisy, n, seed=11)
    ball_mass = 0.38 + two_disks_noisy.background_density * unit_ball_volume(2) * 0.35**2
    for center in ((0.0, 0.0), (3.0, 0.0)):
        inside = np.linalg.norm(cloud.points - np.array(center), axis=1) <= 0.35
        q = ball_mass
        assert abs(np.mean(inside) - q) <= 4.0 * math.sqrt(q * (1 - q) / n)
    # all points stay in the box (support equals the box here)
    bounds = two_disks_noisy.background.bounds
    assert np.all(cloud.points >= bounds[:, 0] - 1e-12)
    assert np.all(cloud.points <= bounds[:, 1] + 1e-12)


def test_sampling_rejects_bad_n(two_disks):
    with pytest.raises(ValueError):
        sample(two_disks, 0, seed=1)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def test_ground_truth_two_clusters(two_disks):
    cloud = sample(two_disks, 5000, seed=2)
    truth = ground_truth(two_disks, cloud, 0.5)
    assert truth.m == 2
    in_one = np.linalg.norm(cloud.points - np.array([0.0, 0.0]), axis=1) <= 0.5
    assert np.array_equal(truth.labels == 1, in_one)
    assert set(np.unique(truth.labels)) == {1, 2}


def test_ground_truth_level_above_max(two_disks):
    cloud = sample(two_disks, 100, seed=2)
    truth = ground_truth(two_disks, cloud, 0.7)
    assert truth.m == 0
    assert np.all(truth.labels == 0)


def test_ground_truth_background_points_labeled_zero(two_disks_noisy):
    cloud = sample(two_disks_noisy, 5000, seed=4)
    truth = ground_truth(two_disks_noisy, cloud, 0.5)
    dist1 = np.linalg.norm(cloud.points - np.array([0.0, 0.0]), axis=1)
    dist2 = np.linalg.norm(cloud.points - np.array([3.0, 0.0]), axis=1)
    outside = (dist1 > 0.35) & (dist2 > 0.35)
    assert np.all(truth.labels[outside] == 0)


def test_ground_truth_agrees_with_density(two_disks_noisy):
    # labeled i >= 1 implies density >= t; labeled 0 implies density < t
    cloud = sample(two_disks_noisy, 20_000, seed=6)
    t = 0.5
    truth = ground_truth(two_disks_noisy, cloud, t)
    dens = density_at(two_disks_noisy, cloud.points)
    assert np.all(dens[truth.labels > 0] >= t)
    assert np.all(dens[truth.labels == 0] < t)


# ---------------------------------------------------------------------------
# geometry quantities
# ---------------------------------------------------------------------------


def test_geometry_two_disks(two_disks):
    geo = geometry_quantities(two_disks, 0.5)
    assert geo.m == 2
    assert geo.eta_d == pytest.approx(math.pi, abs=1e-12)
    assert np.allclose(geo.u, 2.0)
    # a radius-2 ball around any point of disk 1 covers the disk entirely
    assert np.allclose(geo.rho, 0.5)
    assert np.allclose(geo.beta, 0.5)
    assert np.allclose(geo.p_max, TWO_OVER_PI)
    assert np.allclose(geo.nu_max, 0.5)
    assert np.allclose(geo.kappa, 0.5)
    assert np.allclose(geo.volume, math.pi * 0.25)
    # no background: enlargement adds no mass
    assert np.allclose(geo.beta_tilde, geo.beta)


def test_geometry_single_cluster_degenerate():
    m = make_ball_mixture(2, [((0.0, 0.0), 0.5, 1.0)])
    with pytest.raises(DegenerateGeometry):
        geometry_quantities(m, 0.5)


def test_geometry_eta_d_values():
    assert unit_ball_volume(2) == pytest.approx(math.pi, abs=1e-12)
    assert unit_ball_volume(1) == pytest.approx(2.0, abs=1e-12)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0, abs=1e-12)


def test_geometry_invariant_ordering(two_disks_noisy):
    geo = geometry_quantities(two_disks_noisy, 0.5)
    assert np.all(geo.beta > 0)
    assert np.all(geo.beta <= geo.beta_tilde)
    assert np.all(geo.beta_tilde <= 1.0)
    assert np.all(geo.rho <= geo.beta_tilde)
    assert np.all(geo.u > 0)
    assert np.all(geo.p_max >= 0.5)
    assert np.all((geo.overlap > 0) & (geo.overlap <= 1.0))


def test_geometry_level_too_close_to_background(two_disks_noisy):
    bg = two_disks_noisy.background_density
    with pytest.raises(ValueError):
        geometry_quantities(two_disks_noisy, t=bg * 1.5, eps_tilde=bg)


def test_geometry_rho_monte_carlo_close_disks():
    # u < 2r: the worst-case mass is a genuine lens; verify the analytic
    # value against direct Monte Carlo over probes on the far boundary
    model = make_ball_mixture(2, [((0.0, 0.0), 0.5, 0.5), ((1.2, 0.0), 0.5, 0.5)])
    geo = geometry_quantities(model, 0.6)
    assert geo.u[0] == pytest.approx(0.2, abs=1e-12)

    big = sample(model, 1_000_000, seed=99)
    tree = cKDTree(big.points)
    angles = np.linspace(0.5 * math.pi, 1.5 * math.pi, 1000)
    probes = 0.5 * np.column_stack([np.cos(angles), np.sin(angles)])
    counts = tree.query_ball_point(probes, r=float(geo.u[0]), return_length=True)
    mc_inf = counts.min() / big.n
    assert mc_inf == pytest.approx(geo.rho[0], rel=0.02)


def test_geometry_beta_tilde_annulus(two_disks_noisy):
    eps_tilde = 0.02
    geo = geometry_quantities(two_disks_noisy, 0.5, eps_tilde=eps_tilde)
    r = 0.35
    annulus = unit_ball_volume(2) * ((r + 2 * eps_tilde) ** 2 - r**2)
    expected = geo.beta + two_disks_noisy.background_density * annulus
    assert np.allclose(geo.beta_tilde, expected)


def test_geometry_deterministic(two_disks):
    a = geometry_quantities(two_disks, 0.5)
    b = geometry_quantities(two_disks, 0.5)
    assert np.array_equal(a.rho, b.rho)
    assert np.array_equal(a.u, b.u)
