"""Theory module: coefficients, optimal k, tail bounds, feasibility window.

The binomial tail oracle uses exact Fraction arithmetic; formula values are
checked against independent hand arithmetic spelled out in the tests.
"""

import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from knncluster.model import geometry_quantities, make_ball_mixture, unit_ball_volume
from knncluster.theory import (
    PreconditionFailed,
    SideMismatch,
    TheoryInputs,
    boundary_mass_constant,
    condition1_window,
    gamma_coefficient,
    hoeffding_tail,
    kl_divergence,
    max_radius_bound,
    omega_rates,
    optimal_k,
    wilson_interval,
)


def exact_binomial_tail(n: int, p: Fraction, k: int, side: str) -> Fraction:
    """Exact P(M >= k) or P(M <= k) for M ~ Bin(n, p), in rational arithmetic."""
    total = Fraction(0)
    rng = range(k, n + 1) if side == "upper" else range(0, k + 1)
    for j in rng:
        total += math.comb(n, j) * p**j * (1 - p) ** (n - j)
    return total


@pytest.fixture(scope="module")
def two_disks_geo():
    model = make_ball_mixture(2, [((0.0, 0.0), 0.5, 0.5), ((3.0, 0.0), 0.5, 0.5)])
    return geometry_quantities(model, t=2.0 / math.pi)


# ---------------------------------------------------------------------------
# gamma and optimal k
# ---------------------------------------------------------------------------


def test_gamma_hand_value():
    # rho=0.5, t=p_max, d=2: 0.5 / (2 + 1/16)
    assert gamma_coefficient(0.5, 1.0, 1.0, 2) == pytest.approx(0.5 / 2.0625, rel=1e-12)


def test_gamma_linear_in_rho():
    base = gamma_coefficient(0.4, 0.7, 1.0, 3)
    assert gamma_coefficient(0.2, 0.7, 1.0, 3) == pytest.approx(base / 2.0, rel=1e-12)
    assert gamma_coefficient(0.04, 0.7, 1.0, 3) == pytest.approx(base / 10.0, rel=1e-12)


def test_gamma_small_level_limit():
    # t / p_max -> 0 drives Gamma toward rho / 2
    assert gamma_coefficient(0.6, 1e-12, 1.0, 2) == pytest.approx(0.3, rel=1e-9)


def test_gamma_domain():
    with pytest.raises(ValueError):
        gamma_coefficient(0.0, 0.5, 1.0, 2)
    with pytest.raises(ValueError):
        gamma_coefficient(0.5, 2.0, 1.0, 2)


def test_optimal_k_hand_value():
    gamma = 0.5 / 2.0625
    result = optimal_k(1000, gamma)
    assert result.k_real == pytest.approx(999 * gamma + 1, rel=1e-12)
    assert result.k == 243
    assert not result.clamped


def test_optimal_k_clamped():
    result = optimal_k(10, 0.999)
    assert result.k == 9
    assert result.clamped


def test_optimal_k_two_points():
    assert optimal_k(2, 0.3).k == 1
    assert optimal_k(2, 0.9).k == 1


def test_optimal_k_linear_increment():
    gamma = 0.2424
    for n in (10, 100, 1000):
        diff = optimal_k(n, gamma).k_real - optimal_k(n - 1, gamma).k_real
        assert diff == pytest.approx(gamma, rel=1e-9)


# ---------------------------------------------------------------------------
# omega rates
# ---------------------------------------------------------------------------


def test_omega_noisefree_hand_value(two_disks_geo):
    inputs = TheoryInputs(geometry=two_disks_geo, n=1000)
    ob = omega_rates(inputs, "noisefree", "one-cluster", "mutual")
    # rho=0.5, t=p_max, d=2: 0.5 / (2*4^3 + 4) = 0.5 / 132
    assert np.allclose(ob.omega, 0.5 / 132.0)
    assert ob.prefactor == 3.0
    assert np.allclose(ob.bound(1000), 3.0 * math.exp(-999 * 0.5 / 132.0))


def test_omega_algebraic_identity(two_disks_geo):
    geo = two_disks_geo
    inputs = TheoryInputs(geometry=geo, n=500)
    ob = omega_rates(inputs, "noisefree", "one-cluster", "mutual")
    lhs = np.asarray(ob.omega) * (2.0 * 4.0 ** (geo.d + 1) * geo.p_max / geo.t + 4.0)
    assert np.allclose(lhs, geo.rho, rtol=1e-12)


def test_omega_symmetric_substitution(two_disks_geo):
    # equal clusters: rho_min == rho_i, so the symmetric rate is identical
    inputs = TheoryInputs(geometry=two_disks_geo, n=800)
    mut = omega_rates(inputs, "noisefree", "one-cluster", "mutual")
    sym = omega_rates(inputs, "noisefree", "one-cluster", "symmetric")
    assert np.allclose(mut.omega, sym.omega)
    assert sym.prefactor == two_disks_geo.m + 2


def test_omega_symmetric_uses_rho_min():
    model = make_ball_mixture(
        2, [((0.0, 0.0), 0.5, 0.5), ((3.0, 0.0), 0.5, 0.3), ((7.0, 0.0), 0.5, 0.2)]
    )
    geo = geometry_quantities(model, t=0.2 / (math.pi * 0.25))
    inputs = TheoryInputs(geometry=geo, n=500)
    sym = omega_rates(inputs, "noisefree", "one-cluster", "symmetric")
    denom = 2.0 * 4.0 ** (geo.d + 1) * geo.p_max / geo.t + 4.0
    assert np.allclose(sym.omega, geo.rho_min / denom)


def test_omega_noisy_min_selection(two_disks_geo):
    n = 1000
    # a tiny delta makes the delta/8 term the bottleneck
    inputs = TheoryInputs(geometry=two_disks_geo, n=n, delta=1e-4, eps=0.5, h=0.5)
    ob = omega_rates(inputs, "noisy", "one-cluster", "mutual")
    assert np.allclose(ob.omega, n / (n - 1.0) * 1e-4 / 8.0)
    assert ob.prefactor == 8.0


def test_omega_all_clusters_prefactors(two_disks_geo):
    inputs = TheoryInputs(geometry=two_disks_geo, n=400, delta=0.05, eps=0.1, h=0.2)
    m = two_disks_geo.m
    assert omega_rates(inputs, "noisefree", "all-clusters", "mutual").prefactor == 3 * m
    assert omega_rates(inputs, "noisy", "all-clusters", "mutual").prefactor == 3 * m + 5
    assert omega_rates(inputs, "noisy", "one-cluster", "symmetric").prefactor == m + 7
    scalar = omega_rates(inputs, "noisefree", "all-clusters", "mutual").omega
    assert np.isscalar(scalar) or np.ndim(scalar) == 0


def test_omega_noisy_needs_parameters(two_disks_geo):
    inputs = TheoryInputs(geometry=two_disks_geo, n=400)
    with pytest.raises(ValueError):
        omega_rates(inputs, "noisy", "one-cluster", "mutual")


# ---------------------------------------------------------------------------
# condition window
# ---------------------------------------------------------------------------


def test_condition1_window_two_disks(two_disks_geo):
    # independent spelling of both bounds for the two-disks geometry
    n = 5000
    t = 2.0 / math.pi
    p_max = t
    vol = math.pi * 0.25
    expected_low = math.ceil(4.0**3 * (p_max / t) * math.log(2 * p_max * vol * 8.0**2 * n))
    covering = (n - 1) * 2.0 * 4.0**2 * math.pi * p_max * min(2.0, 0.5) ** 2
    isolation = 0.5 * n / 2.0 - 2.0 * math.log(0.5 * n)
    expected_high = math.floor(min(covering, isolation))
    window = condition1_window(TheoryInputs(geometry=two_disks_geo, n=n))
    assert window.k_low == expected_low == 812
    assert window.k_high == expected_high == 1234
    assert window.feasible
    gamma = gamma_coefficient(0.5, t, p_max, 2)
    assert window.k_low <= optimal_k(n, gamma).k <= window.k_high


def test_condition1_window_tiny_n_infeasible(two_disks_geo):
    window = condition1_window(TheoryInputs(geometry=two_disks_geo, n=10))
    assert not window.feasible


def test_condition1_window_widens_with_n(two_disks_geo):
    widths = []
    for n in (2000, 4000, 8000, 16000):
        w = condition1_window(TheoryInputs(geometry=two_disks_geo, n=n))
        widths.append(w.k_high - w.k_low)
    assert all(b > a for a, b in zip(widths, widths[1:]))


# ---------------------------------------------------------------------------
# KL divergence and Hoeffding tail
# ---------------------------------------------------------------------------


def test_kl_identity_zero():
    assert kl_divergence(0.5, 0.5) == 0.0
    assert kl_divergence(0.123, 0.123) == pytest.approx(0.0, abs=1e-15)


def test_kl_hand_value():
    expected = 0.8 * math.log(1.6) + 0.2 * math.log(0.4)
    assert kl_divergence(0.8, 0.5) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.19274, abs=1e-5)


def test_kl_complement_symmetry():
    for alpha, p in ((0.3, 0.6), (0.9, 0.2), (0.01, 0.5)):
        assert kl_divergence(alpha, p) == pytest.approx(kl_divergence(1 - alpha, 1 - p), rel=1e-12)


def test_kl_boundary_extension():
    assert kl_divergence(0.0, 0.3) == pytest.approx(-math.log(0.7), rel=1e-12)
    assert kl_divergence(1.0, 0.3) == pytest.approx(-math.log(0.3), rel=1e-12)


def test_kl_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(200):
        alpha, p = rng.random(), rng.uniform(1e-6, 1 - 1e-6)
        assert kl_divergence(alpha, p) >= 0.0


def test_hoeffding_hand_value():
    bound = hoeffding_tail(10, 0.5, 8, "upper")
    assert bound == pytest.approx(math.exp(-10 * kl_divergence(0.8, 0.5)), rel=1e-12)
    exact = exact_binomial_tail(10, Fraction(1, 2), 8, "upper")
    assert exact == Fraction(56, 1024)
    assert bound >= float(exact)


def test_hoeffding_at_mean_is_one():
    assert hoeffding_tail(10, 0.5, 5, "upper") == pytest.approx(1.0, abs=1e-12)
    assert hoeffding_tail(10, 0.5, 5, "lower") == pytest.approx(1.0, abs=1e-12)


def test_hoeffding_lower_side():
    bound = hoeffding_tail(10, 0.5, 2, "lower")
    assert bound >= float(exact_binomial_tail(10, Fraction(1, 2), 2, "lower"))


def test_hoeffding_side_mismatch():
    with pytest.raises(SideMismatch):
        hoeffding_tail(10, 0.5, 2, "upper")
    with pytest.raises(SideMismatch):
        hoeffding_tail(10, 0.5, 8, "lower")


def hp_hoeffding_bound(n: int, p: Fraction, k: int):
    """The tail bound exp(-n * K(k/n || p)) in 50-digit arithmetic.

    At the endpoints k = 0 and k = n the bound *equals* the exact tail, so
    double-precision evaluation can land half an ulp below it; the
    domination statement is therefore checked in high precision.
    """
    mpmath.mp.dps = 50
    alpha = mpmath.mpf(k) / n
    pm = mpmath.mpf(p.numerator) / p.denominator
    if alpha == 0:
        div = -mpmath.log(1 - pm)
    elif alpha == 1:
        div = -mpmath.log(pm)
    else:
        div = alpha * mpmath.log(alpha / pm) + (1 - alpha) * mpmath.log((1 - alpha) / (1 - pm))
    return mpmath.exp(-n * div)


def test_hoeffding_dominates_exact_small():
    # focused version of the exhaustive acceptance check
    for n in (5, 12, 20):
        for tenths in (1, 3, 5, 7, 9):
            p = Fraction(tenths, 10)
            for k in range(n + 1):
                sides = []
                if Fraction(k, n) >= p:
                    sides.append("upper")
                if Fraction(k, n) <= p:
                    sides.append("lower")
                for side in sides:
                    exact = exact_binomial_tail(n, p, k, side)
                    hp = hp_hoeffding_bound(n, p, k)
                    slack = mpmath.mpf(10) ** -40
                    assert hp >= mpmath.mpf(exact.numerator) / exact.denominator - slack
                    # the float implementation tracks the high-precision value
                    assert hoeffding_tail(n, float(p), k, side) == pytest.approx(
                        float(hp), rel=1e-9
                    )


# ---------------------------------------------------------------------------
# maximal kNN radius bound
# ---------------------------------------------------------------------------


def test_max_radius_bound_boundary_case():
    # k - 1 = rho * (n - 1) / 2 makes the exponent vanish
    n, rho = 101, 0.5
    k = int(rho * (n - 1) / 2) + 1
    res = max_radius_bound(n, k, rho, 0.5)
    assert res.exponent == pytest.approx(0.0, abs=1e-12)
    assert res.bound == pytest.approx(1.0, abs=1e-12)
    assert not res.precondition_ok


def test_max_radius_bound_hand_value():
    res = max_radius_bound(1001, 50, 0.5, 0.6)
    assert res.exponent == pytest.approx(500 * (0.25 - 49.0 / 1000.0), rel=1e-12)
    assert res.bound == pytest.approx(math.exp(-100.5), rel=1e-12)
    assert res.precondition_ok


def test_max_radius_bound_monotone_in_k():
    bounds = [max_radius_bound(500, k, 0.4, 0.5).bound for k in range(1, 100, 7)]
    assert all(b > a for a, b in zip(bounds, bounds[1:]))


def test_max_radius_bound_strict_raises():
    with pytest.raises(PreconditionFailed):
        max_radius_bound(100, 90, 0.2, 0.5, strict=True)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def test_wilson_hand_values():
    p_hat, lo, hi = wilson_interval(0, 10)
    assert p_hat == 0.0
    assert lo == 0.0
    assert hi == pytest.approx(0.2775, abs=5e-4)
    p_hat, lo, hi = wilson_interval(10, 10)
    assert p_hat == 1.0
    assert lo == pytest.approx(0.7225, abs=5e-4)
    assert hi == 1.0
    p_hat, lo, hi = wilson_interval(5, 10)
    assert lo < 0.5 < hi
    assert (lo + hi) / 2.0 == pytest.approx(0.5, abs=1e-12)


def test_boundary_mass_constant(two_disks_geo):
    # two radius-0.5 disks: D_bar = p_bg * sum 2 * d * eta_d * r^(d-1)
    inputs = TheoryInputs(geometry=two_disks_geo, n=100, background_density=0.02)
    expected = 0.02 * 2 * (2 * 2 * unit_ball_volume(2) * 0.5)
    assert boundary_mass_constant(inputs) == pytest.approx(expected, rel=1e-12)
