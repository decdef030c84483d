"""Synthetic densities with analytically known level-set clusters.

A density model is a mixture of uniform-on-ball components plus an optional
uniform background on an axis-aligned box.  Balls must be pairwise disjoint
and each ball must lie entirely inside or entirely outside the background
box, so that the density is piecewise constant with a known value on every
ball.  This keeps every geometric quantity used by the rate formulas (ball
masses, inter-cluster distances, worst-case ball-intersection masses)
available in closed form.

Sampling uses the counter-based Philox generator keyed by a 64-bit integer
seed, so clouds are bit-reproducible across runs and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

__all__ = [
    "ModelError",
    "OverlappingComponents",
    "BadMass",
    "StraddlesBackground",
    "DimensionMismatch",
    "DegenerateGeometry",
    "BallComponent",
    "BackgroundBox",
    "DensityModel",
    "PointCloud",
    "GroundTruth",
    "GeometryQuantities",
    "unit_ball_volume",
    "cap_volume",
    "lens_volume",
    "make_ball_mixture",
    "density_at",
    "sample",
    "ground_truth",
    "geometry_quantities",
]

MASS_TOLERANCE = 1e-12


class ModelError(Exception):
    """Base class for density-model construction and query errors."""


class OverlappingComponents(ModelError):
    """Two component balls intersect."""


class BadMass(ModelError):
    """Component masses (plus background) do not sum to one."""


class StraddlesBackground(ModelError):
    """A component ball partially overlaps the background box.

    Balls must be entirely inside or entirely outside the box; otherwise the
    density inside the ball is not constant and the closed-form geometry
    breaks down.
    """


class DimensionMismatch(ModelError):
    """Query point dimension does not match the model dimension."""


class DegenerateGeometry(ModelError):
    """Cluster geometry is undefined (fewer than two clusters, or an
    ill-posed level)."""


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d: pi^(d/2) / Gamma(d/2 + 1)."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def cap_volume(d: int, radius: float, height: float) -> float:
    """Volume of a hyperspherical cap of the given height, 0 <= h <= 2R.

    Uses the regularized incomplete beta function; height above the
    half-ball is handled by complementing.
    """
    if height <= 0.0:
        return 0.0
    if height >= 2.0 * radius:
        return unit_ball_volume(d) * radius**d
    if height > radius:
        full = unit_ball_volume(d) * radius**d
        return full - cap_volume(d, radius, 2.0 * radius - height)
    x = (2.0 * radius * height - height * height) / (radius * radius)
    return 0.5 * unit_ball_volume(d) * radius**d * float(betainc((d + 1) / 2.0, 0.5, x))


def lens_volume(d: int, r1: float, r2: float, center_dist: float) -> float:
    """Volume of the intersection of two d-balls with radii r1, r2 at the
    given center distance."""
    if center_dist >= r1 + r2:
        return 0.0
    if center_dist <= abs(r1 - r2):
        r = min(r1, r2)
        return unit_ball_volume(d) * r**d
    # distance from center 1 to the hyperplane containing the intersection
    c1 = (center_dist**2 - r2**2 + r1**2) / (2.0 * center_dist)
    h1 = r1 - c1
    h2 = r2 - (center_dist - c1)
    return cap_volume(d, r1, h1) + cap_volume(d, r2, h2)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class BallComponent:
    """One uniform-density ball: center in R^d, radius, probability mass."""

    center: np.ndarray
    radius: float
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "center", _freeze(np.asarray(self.center, dtype=float)))


@dataclass(frozen=True)
class BackgroundBox:
    """Uniform background on an axis-aligned box: bounds is (d, 2) [lo, hi]."""

    bounds: np.ndarray
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "bounds", _freeze(np.asarray(self.bounds, dtype=float)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))

    @property
    def density(self) -> float:
        return self.mass / self.volume


@dataclass(frozen=True)
class DensityModel:
    """Mixture of disjoint uniform balls plus optional uniform box background."""

    dimension: int
    components: tuple[BallComponent, ...]
    background: BackgroundBox | None = None
    model_id: str = "ball-mixture"

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def background_density(self) -> float:
        return self.background.density if self.background is not None else 0.0

    def ball_in_background(self, i: int) -> bool:
        """Whether ball i lies inside the background box (validated at
        construction to be all-in or all-out)."""
        if self.background is None:
            return False
        comp = self.components[i]
        lo, hi = self.background.bounds[:, 0], self.background.bounds[:, 1]
        return bool(
            np.all(comp.center - comp.radius >= lo) and np.all(comp.center + comp.radius <= hi)
        )

    def component_density(self, i: int) -> float:
        """Uniform density value inside ball i (background included when the
        ball sits inside the box)."""
        comp = self.components[i]
        own = comp.mass / (unit_ball_volume(self.dimension) * comp.radius**self.dimension)
        if self.ball_in_background(i):
            own += self.background_density
        return own

    def component_densities(self) -> np.ndarray:
        return np.array([self.component_density(i) for i in range(self.n_components)])


@dataclass(frozen=True)
class PointCloud:
    """n sample points in R^d with immutable coordinates and stable indices."""

    points: np.ndarray
    seed: int
    model_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """Per-point cluster labels against the level-t clusters of a model.

    Label 0 marks background; label i >= 1 marks the i-th cluster, where
    clusters are the components whose (constant) density reaches the level,
    in component order.  ``cluster_components`` maps cluster label i to the
    model component index holding it.
    """

    t: float
    labels: np.ndarray
    m: int
    cluster_components: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", _freeze(np.asarray(self.labels, dtype=np.int64)))

    def cluster_points(self, i: int) -> np.ndarray:
        """Indices of sample points in cluster i (1-based cluster label)."""
        return np.nonzero(self.labels == i)[0]


@dataclass(frozen=True)
class GeometryQuantities:
    """Per-cluster geometric constants feeding the rate formulas.

    Arrays are indexed by cluster (same order as GroundTruth labels 1..m):

    - ``beta``: probability mass of the cluster ball
    - ``beta_tilde``: mass of the cluster plus the background mass of its
      2*eps_tilde enlargement annulus
    - ``u``: distance from the cluster ball to the nearest other cluster ball
    - ``rho``: worst-case (boundary-point) mass of a radius-u ball
      intersected with the cluster; a valid lower bound on
      inf_x mu(B(x, u)) and exact when no background is present
    - ``p_max``: maximal (= uniform) density on the cluster
    - ``nu_max``, ``kappa``: maximal covering radius and minimal curvature
      radius; both equal the ball radius for ball clusters
    - ``overlap``: read-only diagnostic, vol(B(x,u) ∩ ball) / vol(B(x,u)) at
      the worst boundary point
    - ``volume``: Lebesgue volume of the cluster ball
    """

    d: int
    t: float
    eps_tilde: float
    m: int
    cluster_components: tuple[int, ...]
    beta: np.ndarray
    beta_tilde: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    p_max: np.ndarray
    nu_max: np.ndarray
    kappa: np.ndarray
    overlap: np.ndarray
    volume: np.ndarray
    eta_d: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "eta_d", unit_ball_volume(self.d))
        for name in ("beta", "beta_tilde", "u", "rho", "p_max", "nu_max", "kappa", "overlap", "volume"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))

    @property
    def rho_min(self) -> float:
        return float(np.min(self.rho))

    @property
    def p_max_global(self) -> float:
        return float(np.max(self.p_max))

    @property
    def beta_tilde_max(self) -> float:
        return float(np.max(self.beta_tilde))


def _ball_box_relation(center: np.ndarray, radius: float, bounds: np.ndarray) -> str:
    """Classify a ball against a box: 'inside', 'outside', or 'straddles'."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.all(center - radius >= lo) and np.all(center + radius <= hi):
        return "inside"
    nearest = np.clip(center, lo, hi)
    if np.linalg.norm(center - nearest) >= radius:
        return "outside"
    return "straddles"


def make_ball_mixture(
    d: int,
    components: list[tuple],
    background: dict | None = None,
    model_id: str = "ball-mixture",
) -> DensityModel:
    """Build a validated ball-mixture density.

    ``components`` is a list of (center, radius, mass) triples; ``background``
    is an optional mapping with keys ``box`` (per-dimension [lo, hi] pairs)
    and ``mass``.

    Raises OverlappingComponents if two balls intersect, BadMass if the
    masses do not sum to one, StraddlesBackground if a ball crosses the box
    boundary.
    """
    if d < 1:
        raise ValueError("dimension must be a positive integer")
    comps = []
    for center, radius, mass in components:
        center = np.asarray(center, dtype=float)
        if center.shape != (d,):
            raise DimensionMismatch(f"component center has shape {center.shape}, expected ({d},)")
        if radius <= 0.0 or mass <= 0.0:
            raise ValueError("component radii and masses must be strictly positive")
        comps.append(BallComponent(center=center, radius=float(radius), mass=float(mass)))

    bg = None
    if background is not None:
        bounds = np.asarray(background["box"], dtype=float)
        if bounds.shape != (d, 2):
            raise DimensionMismatch(f"background box has shape {bounds.shape}, expected ({d}, 2)")
        if np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ValueError("background box must have positive extent in every dimension")
        bg_mass = float(background["mass"])
        if bg_mass <= 0.0:
            raise ValueError("background mass must be strictly positive")
        bg = BackgroundBox(bounds=bounds, mass=bg_mass)

    total = sum(c.mass for c in comps) + (bg.mass if bg is not None else 0.0)
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise BadMass(f"masses sum to {total!r}, expected 1.0")

    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            dist = float(np.linalg.norm(comps[i].center - comps[j].center))
            if dist <= comps[i].radius + comps[j].radius:
                raise OverlappingComponents(
                    f"components {i} and {j}: center distance {dist:.6g} <= "
                    f"radius sum {comps[i].radius + comps[j].radius:.6g}"
                )

    if bg is not None:
        for i, c in enumerate(comps):
            if _ball_box_relation(c.center, c.radius, bg.bounds) == "straddles":
                raise StraddlesBackground(f"component {i} crosses the background box boundary")

    return DensityModel(dimension=d, components=tuple(comps), background=bg, model_id=model_id)


def density_at(model: DensityModel, x: np.ndarray) -> float | np.ndarray:
    """Evaluate the density at one point (shape (d,)) or a batch (n, d).

    Inside ball i the density is the component's uniform value (background
    included if the ball lies in the box); elsewhere it is the background
    density inside the box and zero outside.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != model.dimension:
        raise DimensionMismatch(f"query has shape {x.shape}, model dimension is {model.dimension}")

    out = np.zeros(pts.shape[0])
    if model.background is not None:
        lo, hi = model.background.bounds[:, 0], model.background.bounds[:, 1]
        in_box = np.all((pts >= lo) & (pts <= hi), axis=1)
        out[in_box] = model.background.density
    for i, comp in enumerate(model.components):
        in_ball = np.linalg.norm(pts - comp.center, axis=1) <= comp.radius
        out[in_ball] = model.component_density(i)
    return float(out[0]) if single else out


def sample(model: DensityModel, n: int, seed: int) -> PointCloud:
    """Draw n i.i.d. points from the model, deterministically for a seed.

    Components are chosen by mass; points inside a ball are drawn as
    radius * U^(1/d) along a normalized Gaussian direction (exact and
    rejection-free in any dimension); background points are uniform on the
    box.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))

    masses = [c.mass for c in model.components]
    if model.background is not None:
        masses.append(model.background.mass)
    cum = np.cumsum(masses)
    cum[-1] = 1.0  # guard against rounding at the top end

    choice = np.searchsorted(cum, rng.random(n), side="right")
    directions = rng.standard_normal((n, model.dimension))
    radial = rng.random(n)
    box_u = rng.random((n, model.dimension))

    pts = np.empty((n, model.dimension))
    for i, comp in enumerate(model.components):
        sel = choice == i
        if not np.any(sel):
            continue
        dirs = directions[sel]
        norms = np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
        r = comp.radius * radial[sel] ** (1.0 / model.dimension)
        pts[sel] = comp.center + dirs / norms * r[:, None]
    if model.background is not None:
        sel = choice == model.n_components
        if np.any(sel):
            lo = model.background.bounds[:, 0]
            hi = model.background.bounds[:, 1]
            pts[sel] = lo + box_u[sel] * (hi - lo)

    return PointCloud(points=pts, seed=seed, model_id=model.model_id)


def _cluster_indices(model: DensityModel, t: float) -> list[int]:
    return [i for i in range(model.n_components) if model.component_density(i) >= t]


def ground_truth(model: DensityModel, cloud: PointCloud, t: float) -> GroundTruth:
    """Label points against the level-t clusters of the model.

    A point gets label i >= 1 iff it lies in the ball of the i-th component
    whose density reaches t; all other points (background box, outside
    support, or in a below-level ball) get label 0.
    """
    if t <= 0.0:
        raise ValueError("level t must be positive")
    if cloud.dimension != model.dimension:
        raise DimensionMismatch("cloud dimension does not match model")
    clusters = _cluster_indices(model, t)
    labels = np.zeros(cloud.n, dtype=np.int64)
    for rank, comp_idx in enumerate(clusters, start=1):
        comp = model.components[comp_idx]
        inside = np.linalg.norm(cloud.points - comp.center, axis=1) <= comp.radius
        labels[inside] = rank
    return GroundTruth(t=t, labels=labels, m=len(clusters), cluster_components=tuple(clusters))


def geometry_quantities(
    model: DensityModel, t: float, eps_tilde: float | None = None
) -> GeometryQuantities:
    """Closed-form geometric constants of the level-t clusters.

    ``eps_tilde`` defaults to 0.05 * t.  Requires at least two clusters and
    t - 2*eps_tilde above the background density; raises DegenerateGeometry
    otherwise, or when a component's density falls in [t - 2*eps_tilde, t)
    (such a component is neither a cluster nor safely below the enlarged
    level).
    """
    if t <= 0.0:
        raise ValueError("level t must be positive")
    if eps_tilde is None:
        eps_tilde = 0.05 * t
    if eps_tilde < 0.0:
        raise ValueError("eps_tilde must be nonnegative")
    if t - 2.0 * eps_tilde <= model.background_density:
        raise ValueError(
            f"t - 2*eps_tilde = {t - 2 * eps_tilde:.6g} must exceed the "
            f"background density {model.background_density:.6g}"
        )

    clusters = _cluster_indices(model, t)
    m = len(clusters)
    if m < 2:
        raise DegenerateGeometry(f"need at least two clusters at level {t}, found {m}")
    densities = model.component_densities()
    for i in range(model.n_components):
        if i not in clusters and densities[i] >= t - 2.0 * eps_tilde:
            raise DegenerateGeometry(
                f"component {i} has density {densities[i]:.6g} in "
                f"[t - 2*eps_tilde, t); the enlarged level set is ill-posed"
            )

    d = model.dimension
    eta = unit_ball_volume(d)
    bg_density = model.background_density

    beta = np.empty(m)
    beta_tilde = np.empty(m)
    u = np.empty(m)
    rho = np.empty(m)
    p_max = np.empty(m)
    radii = np.empty(m)
    volume = np.empty(m)
    overlap = np.empty(m)

    for a, ci in enumerate(clusters):
        comp = model.components[ci]
        radii[a] = comp.radius
        volume[a] = eta * comp.radius**d
        p_max[a] = densities[ci]
        beta[a] = densities[ci] * volume[a]

        dists = [
            float(np.linalg.norm(comp.center - model.components[cj].center))
            - comp.radius
            - model.components[cj].radius
            for cj in clusters
            if cj != ci
        ]
        u[a] = min(dists)
        if u[a] <= 0.0:
            raise DegenerateGeometry(f"cluster {a + 1} has nonpositive separation u = {u[a]:.6g}")

        lens = lens_volume(d, comp.radius, u[a], comp.radius)
        rho[a] = densities[ci] * lens
        overlap[a] = min(lens / (eta * u[a] ** d), 1.0)

        annulus_mass = 0.0
        if model.background is not None and model.ball_in_background(ci):
            enlarged = comp.radius + 2.0 * eps_tilde
            annulus_mass = bg_density * eta * (enlarged**d - comp.radius**d)
        beta_tilde[a] = beta[a] + annulus_mass

    return GeometryQuantities(
        d=d,
        t=t,
        eps_tilde=float(eps_tilde),
        m=m,
        cluster_components=tuple(clusters),
        beta=beta,
        beta_tilde=beta_tilde,
        u=u,
        rho=rho,
        p_max=p_max,
        nu_max=radii,
        kappa=radii.copy(),
        overlap=overlap,
        volume=volume,
    )
