"""Closed-form rate quantities for kNN-graph cluster identification.

Per-cluster coefficient and optimal neighbor count:

    Gamma = rho / (2 + (1/4^d) * (t / p_max)),        k_opt = (n-1) * Gamma + 1.

Failure-probability exponents (noise-free and noisy):

    Omega_noisefree = rho / (2 * 4^(d+1) * (p_max / t) + 4),
    Omega_noisy     = min(Omega_noisefree,
                          n/(n-1) * delta / 8,
                          n/(n-1) * C2 * h^d * eps^2),

with the failure probability bounded by ``prefactor * exp(-(n-1) * Omega)``.
The prefactor depends on the graph flavor and on whether one cluster or all
clusters are targeted; for the symmetric flavor (and for the all-clusters
scope) the per-cluster rho is replaced by the worst-case rho_min, and for
the all-clusters scope p_max is the global maximum.

The feasibility window on k combines a logarithmic lower bound with two
linear/upper constraints.  The exact multiplicative constant inside the
lower bound's logarithm is a reconstruction (the functional form is
unambiguous, the constant is not); treat k_low as correct up to its log
argument.

The C2 constant of the noisy-case density-estimation term is not derivable
in closed form; it is a configuration input (default 1.0) and is carried in
the returned objects so reports can state it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GeometryQuantities

__all__ = [
    "SideMismatch",
    "PreconditionFailed",
    "TheoryInputs",
    "OptimalK",
    "OmegaBound",
    "Condition1Window",
    "MaxRadiusBound",
    "gamma_coefficient",
    "optimal_k",
    "omega_rates",
    "condition1_window",
    "kl_divergence",
    "hoeffding_tail",
    "max_radius_bound",
    "boundary_mass_constant",
    "wilson_interval",
]

MODES = ("noisefree", "noisy")
SCOPES = ("one-cluster", "all-clusters")


class SideMismatch(Exception):
    """Tail side does not match the relation between k/n and p."""


class PreconditionFailed(Exception):
    """A bound's stated precondition is violated."""


@dataclass(frozen=True)
class TheoryInputs:
    """Geometry plus the sample-size and noisy-case parameters the rate
    formulas need."""

    geometry: GeometryQuantities
    n: int
    delta: float = 0.0
    eps: float = 0.0
    h: float = 0.0
    c2: float = 1.0
    background_density: float = 0.0


def gamma_coefficient(rho: float, t: float, p_max: float, d: int) -> float:
    """The coefficient Gamma = rho / (2 + (1/4^d) * (t / p_max)).

    For the all-clusters variant pass rho_min and the global p_max.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho = {rho} outside (0, 1]")
    if not 0.0 < t <= p_max:
        raise ValueError(f"need 0 < t <= p_max, got t = {t}, p_max = {p_max}")
    return rho / (2.0 + (t / p_max) / 4.0**d)


@dataclass(frozen=True)
class OptimalK:
    """Real-valued optimum (n-1) * Gamma + 1 and its integer rounding,
    clamped to the valid range [1, n-1]."""

    k_real: float
    k: int
    clamped: bool


def optimal_k(n: int, gamma: float) -> OptimalK:
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma = {gamma} outside (0, 1)")
    k_real = (n - 1) * gamma + 1.0
    k = int(round(k_real))
    clamped = k < 1 or k > n - 1
    return OptimalK(k_real=k_real, k=min(max(k, 1), n - 1), clamped=clamped)


@dataclass(frozen=True)
class OmegaBound:
    """Failure-rate exponent(s) with the matching bound prefactor.

    ``omega_at(n)`` returns the exponent coefficient at sample size n (the
    noisy variant carries n/(n-1) factors); ``bound(n)`` returns
    prefactor * exp(-(n-1) * omega).  For the one-cluster scope the values
    are arrays over clusters.
    """

    which: str
    scope: str
    flavor: str
    prefactor: float
    base_omega: np.ndarray | float
    delta_term: float
    kde_term: float
    n: int
    c2: float

    def omega_at(self, n: int | None = None):
        n = self.n if n is None else n
        if self.which == "noisefree":
            return self.base_omega
        scale = n / (n - 1.0)
        return np.minimum(
            self.base_omega, min(scale * self.delta_term, scale * self.kde_term)
        )

    @property
    def omega(self):
        return self.omega_at(self.n)

    def exponent(self, n: int | None = None):
        n = self.n if n is None else n
        return (n - 1.0) * self.omega_at(n)

    def bound(self, n: int | None = None):
        return self.prefactor * np.exp(-self.exponent(n))

    def curve(self, ns) -> np.ndarray:
        """Bound evaluated over a sequence of sample sizes."""
        return np.array([self.bound(int(n)) for n in ns])


def _prefactor(which: str, scope: str, flavor: str, m: int) -> float:
    if scope == "one-cluster":
        if flavor == "mutual":
            return 3.0 if which == "noisefree" else 8.0
        return float(m + 2) if which == "noisefree" else float(m + 7)
    # all-clusters: the symmetric variant carries the same prefactor
    return float(3 * m) if which == "noisefree" else float(3 * m + 5)


def omega_rates(
    inputs: TheoryInputs, which: str, scope: str = "one-cluster", flavor: str = "mutual"
) -> OmegaBound:
    """Omega exponents and the matching probability bound.

    ``which`` is 'noisefree' or 'noisy'; ``scope`` is 'one-cluster' (array
    over clusters) or 'all-clusters' (scalar); ``flavor`` is 'mutual' or
    'symmetric'.
    """
    if which not in MODES:
        raise ValueError(f"which must be one of {MODES}")
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    if flavor not in ("mutual", "symmetric"):
        raise ValueError("flavor must be 'mutual' or 'symmetric'")
    geo = inputs.geometry
    d = geo.d
    denom_scale = 2.0 * 4.0 ** (d + 1)

    if scope == "one-cluster":
        rho = geo.rho if flavor == "mutual" else np.full(geo.m, geo.rho_min)
        base = rho / (denom_scale * (geo.p_max / geo.t) + 4.0)
    else:
        base = geo.rho_min / (denom_scale * (geo.p_max_global / geo.t) + 4.0)

    delta_term = inputs.delta / 8.0
    kde_term = inputs.c2 * inputs.h**d * inputs.eps**2
    if which == "noisy" and (inputs.delta <= 0.0 or inputs.h <= 0.0 or inputs.eps <= 0.0):
        raise ValueError("noisy rates need positive delta, h, and eps")

    return OmegaBound(
        which=which,
        scope=scope,
        flavor=flavor,
        prefactor=_prefactor(which, scope, flavor, geo.m),
        base_omega=base,
        delta_term=delta_term,
        kde_term=kde_term,
        n=inputs.n,
        c2=inputs.c2,
    )


@dataclass(frozen=True)
class Condition1Window:
    """Feasible range of k: logarithmic lower bound, the smaller of the
    covering-radius and isolation upper bounds, and the verdict."""

    k_low: int
    k_high: int
    feasible: bool


def condition1_window(inputs: TheoryInputs, cluster: int | None = None) -> Condition1Window:
    """Feasibility window on k for a cluster (or, with ``cluster=None``, the
    intersection over all clusters).

    k_low is a reconstruction: ceil(4^(d+1) * (p_max/t) *
    log(2 * p_max * vol * 8^d * n)).  k_high is the minimum of the covering
    constraint (n-1) * 2 * 4^d * eta_d * p_max * min(u, nu_max)^d and the
    isolation constraint rho * n / 2 - 2 * log(beta_tilde * n).
    """
    geo = inputs.geometry
    n = inputs.n
    if n < 2:
        raise ValueError("n must be >= 2")
    d = geo.d

    idx = range(geo.m) if cluster is None else [cluster]
    lows, highs = [], []
    for i in idx:
        log_arg = 2.0 * geo.p_max[i] * geo.volume[i] * 8.0**d * n
        low = 4.0 ** (d + 1) * (geo.p_max[i] / geo.t) * math.log(log_arg)
        lows.append(max(1, math.ceil(low)))
        reach = min(geo.u[i], geo.nu_max[i])
        covering = (n - 1) * 2.0 * 4.0**d * geo.eta_d * geo.p_max[i] * reach**d
        isolation = geo.rho[i] * n / 2.0 - 2.0 * math.log(geo.beta_tilde[i] * n)
        highs.append(math.floor(min(covering, isolation)))
    k_low = max(lows)
    k_high = min(highs)
    return Condition1Window(k_low=k_low, k_high=k_high, feasible=k_low <= k_high)


def kl_divergence(alpha: float, p: float) -> float:
    """Kullback-Leibler divergence of the Bernoulli pairs (alpha, 1-alpha)
    and (p, 1-p), extended continuously to alpha in {0, 1}."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha = {alpha} outside [0, 1]")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p = {p} outside (0, 1)")
    if alpha == 0.0:
        return -math.log(1.0 - p)
    if alpha == 1.0:
        return -math.log(p)
    return alpha * math.log(alpha / p) + (1.0 - alpha) * math.log((1.0 - alpha) / (1.0 - p))


def hoeffding_tail(n: int, p: float, k: int, side: str) -> float:
    """Binomial tail bound exp(-n * K(k/n || p)).

    ``side='upper'`` bounds P(M >= k) and needs k/n >= p; ``side='lower'``
    bounds P(M <= k) and needs k/n <= p.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha = k / n
    if side == "upper":
        if alpha < p:
            raise SideMismatch(f"upper tail needs k/n >= p, got {alpha} < {p}")
    elif side == "lower":
        if alpha > p:
            raise SideMismatch(f"lower tail needs k/n <= p, got {alpha} > {p}")
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    return math.exp(-n * kl_divergence(alpha, p))


@dataclass(frozen=True)
class MaxRadiusBound:
    """Bound on the probability that the maximal kNN radius of an enlarged
    cluster reaches the separation distance u."""

    bound: float
    exponent: float
    precondition_ok: bool
    k_limit: float


def max_radius_bound(
    n: int, k: int, rho: float, beta_tilde: float, strict: bool = False
) -> MaxRadiusBound:
    """exp(-((n-1)/2) * (rho/2 - (k-1)/(n-1))), valid for
    k < rho * n / 2 - 2 * log(beta_tilde * n).

    The returned object reports whether that precondition holds; with
    ``strict=True`` a violation raises PreconditionFailed instead.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho = {rho} outside (0, 1]")
    if beta_tilde <= 0.0:
        raise ValueError("beta_tilde must be positive")
    k_limit = rho * n / 2.0 - 2.0 * math.log(beta_tilde * n)
    ok = k < k_limit
    if strict and not ok:
        raise PreconditionFailed(
            f"k = {k} >= rho*n/2 - 2*log(beta_tilde*n) = {k_limit:.6g}"
        )
    exponent = ((n - 1) / 2.0) * (rho / 2.0 - (k - 1) / (n - 1.0))
    return MaxRadiusBound(
        bound=math.exp(-exponent), exponent=exponent, precondition_ok=ok, k_limit=k_limit
    )


def boundary_mass_constant(inputs: TheoryInputs) -> float:
    """Leading coefficient of the boundary-strip mass: the background mass
    of the clusters' width-2*eps annuli is D_bar * eps + O(eps^2) with
    D_bar = sum_i p_bg * 2 * d * eta_d * r_i^(d-1)."""
    geo = inputs.geometry
    radii = geo.nu_max  # equals the ball radius for ball clusters
    per_cluster = 2.0 * geo.d * geo.eta_d * radii ** (geo.d - 1)
    return float(inputs.background_density * np.sum(per_cluster))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """Wilson score interval; returns (p_hat, lower, upper) at ~95% by
    default.  p_hat is the plain success fraction."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p_hat = successes / trials
    z2 = z * z
    center = (successes + z2 / 2.0) / (trials + z2)
    half = z / (trials + z2) * math.sqrt(successes * (trials - successes) / trials + z2 / 4.0)
    return p_hat, max(0.0, center - half), min(1.0, center + half)
