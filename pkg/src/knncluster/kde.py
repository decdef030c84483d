"""Kernel density estimation at sample points and the bandwidth schedules
used for exact identification.

The estimator is the standard Gaussian-kernel KDE including the self term:

    p_hat(X_i) = 1 / (n h^d) * sum_j K((X_i - X_j) / h),
    K(v) = (2 pi)^(-d/2) exp(-|v|^2 / 2).

The kernel is kept behind a single id so an alternative compact kernel can
be added later without touching callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DensityModel, PointCloud, density_at

__all__ = [
    "NonpositiveBandwidth",
    "DensityEstimate",
    "kde_at",
    "kde_at_samples",
    "sup_error",
    "interface_distance",
    "exact_id_schedule",
]

_CHUNK_BYTES = 2**26


class NonpositiveBandwidth(Exception):
    """Bandwidth must be strictly positive."""


@dataclass(frozen=True)
class DensityEstimate:
    """Per-point density estimates with the bandwidth and kernel id used."""

    values: np.ndarray
    h: float
    kernel: str = "gaussian"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _gaussian_kde(samples: np.ndarray, queries: np.ndarray, h: float) -> np.ndarray:
    n, d = samples.shape
    norm = 1.0 / (n * h**d * (2.0 * math.pi) ** (d / 2.0))
    out = np.empty(queries.shape[0])
    chunk = max(1, _CHUNK_BYTES // (8 * max(1, n)))
    inv_2h2 = 1.0 / (2.0 * h * h)
    for lo in range(0, queries.shape[0], chunk):
        hi = min(queries.shape[0], lo + chunk)
        diff = queries[lo:hi, None, :] - samples[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        out[lo:hi] = np.exp(-d2 * inv_2h2).sum(axis=1)
    return out * norm


def kde_at(cloud: PointCloud, h: float, queries: np.ndarray) -> np.ndarray:
    """Evaluate the Gaussian KDE built on the cloud at arbitrary points."""
    if h <= 0.0:
        raise NonpositiveBandwidth(f"h = {h}")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != cloud.dimension:
        raise ValueError("query dimension does not match the cloud")
    return _gaussian_kde(cloud.points, queries, h)


def kde_at_samples(cloud: PointCloud, h: float) -> DensityEstimate:
    """Gaussian KDE evaluated at the sample points themselves (self term
    included, so every estimate is at least K(0) / (n h^d) > 0)."""
    if h <= 0.0:
        raise NonpositiveBandwidth(f"h = {h}")
    values = _gaussian_kde(cloud.points, cloud.points, h)
    return DensityEstimate(values=values, h=float(h))


def interface_distance(model: DensityModel, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest density interface (a ball
    surface or a background box face)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist = np.full(points.shape[0], np.inf)
    for comp in model.components:
        to_surface = np.abs(np.linalg.norm(points - comp.center, axis=1) - comp.radius)
        np.minimum(dist, to_surface, out=dist)
    if model.background is not None:
        lo = model.background.bounds[:, 0]
        hi = model.background.bounds[:, 1]
        to_faces = np.minimum(np.abs(points - lo), np.abs(points - hi)).min(axis=1)
        np.minimum(dist, to_faces, out=dist)
    return dist


def sup_error(
    model: DensityModel,
    cloud: PointCloud,
    estimate: DensityEstimate,
    interior_margin: float | None = None,
) -> float:
    """Maximal absolute deviation |p_hat(X_i) - p(X_i)| over the samples.

    With ``interior_margin`` set, only samples at least that far from every
    density interface are considered (the estimator is biased right at the
    jumps, and the theory statements concern the inner part of a cluster).
    Returns nan if the margin excludes every sample.
    """
    if estimate.n != cloud.n:
        raise ValueError("estimate does not cover this cloud")
    truth = density_at(model, cloud.points)
    err = np.abs(estimate.values - truth)
    if interior_margin is not None:
        keep = interface_distance(model, cloud.points) >= interior_margin
        if not np.any(keep):
            return float("nan")
        err = err[keep]
    return float(np.max(err))


def exact_id_schedule(n: int, d: int, h0: float, eps0: float) -> tuple[float, float]:
    """Bandwidth and accuracy schedules for exact identification:

        h_n = h0 * (log n / n)^(1/(d+4)),
        eps_n = eps0 * (log n / n)^(2/(d+4)).
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if h0 <= 0.0 or eps0 <= 0.0:
        raise ValueError("h0 and eps0 must be positive")
    ratio = math.log(n) / n
    h_n = h0 * ratio ** (1.0 / (d + 4))
    eps_n = eps0 * ratio ** (2.0 / (d + 4))
    return h_n, eps_n
