"""End-to-end cluster identification pipelines and their assessment.

Noise-free pipeline: build the mutual or symmetric kNN graph; its connected
components are the clusters.

Noisy pipeline: build the graph, estimate the density at every sample,
remove points with estimate below t - eps together with their edges, take
connected components, and drop components with fewer than delta * n points.
Removal thresholds mirror the strict-< convention: a point is removed when
its estimate is strictly below the threshold, a component when its size is
strictly below delta * n.

``assess`` evaluates, against ground truth, the per-cluster rough
identification verdict (all cluster samples survive, they form one
connected component, and that component contains no other cluster's
points), the background/cluster point counts of the surviving graph, and
the diagnostic events used by the probability bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    ComponentPartition,
    NeighborhoodGraph,
    NeighborLists,
    build_graph,
    connected_components,
    knn_sets,
)
from .kde import DensityEstimate, kde_at_samples
from .model import DensityModel, GroundTruth, PointCloud, density_at

__all__ = [
    "MismatchedInputs",
    "ClusterResult",
    "IdentificationReport",
    "AssessContext",
    "PipelineArtifacts",
    "identify_noisefree",
    "identify_noisy",
    "run_pipeline",
    "prune_low_density",
    "remove_small_components",
    "assess",
    "write_labels",
]


class MismatchedInputs(Exception):
    """Result, truth, and context must refer to the same cloud."""


@dataclass(frozen=True)
class ClusterResult:
    """Outcome of a pipeline: survivors with their component partition, and
    the removed vertices split by removal cause.

    ``labels`` holds the component id per vertex and -1 for removed
    vertices; components are numbered by smallest contained vertex index.
    """

    n: int
    labels: np.ndarray
    component_sizes: np.ndarray
    removed_low_density: np.ndarray
    removed_small: np.ndarray

    @property
    def survivors(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def component_count(self) -> int:
        return self.component_sizes.shape[0]

    def component_members(self, comp: int) -> np.ndarray:
        return np.nonzero(self.labels == comp)[0]


@dataclass(frozen=True)
class PipelineArtifacts:
    """A pipeline run with its intermediates kept for assessment."""

    cloud: PointCloud
    lists: NeighborLists
    graph: NeighborhoodGraph
    estimate: DensityEstimate | None
    result: ClusterResult
    mode: str
    t: float | None = None
    eps: float = 0.0
    delta: float = 0.0


def prune_low_density(
    graph: NeighborhoodGraph, estimate: DensityEstimate, t_prime: float
) -> np.ndarray:
    """Mask of vertices kept by the density filter: estimate >= t_prime."""
    if estimate.n != graph.n:
        raise MismatchedInputs("estimate does not cover the graph vertices")
    return estimate.values >= t_prime


def remove_small_components(
    partition: ComponentPartition, delta: float, n: int
) -> np.ndarray:
    """Mask of vertices in components of size >= delta * n (strictly smaller
    components are dropped; a component of exactly delta * n stays)."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    keep = np.zeros(partition.labels.shape[0], dtype=bool)
    active = partition.labels >= 0
    big = partition.sizes >= delta * n
    keep[active] = big[partition.labels[active]]
    return keep


def _renumber(partition_labels: np.ndarray, keep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Restrict component labels to kept vertices, renumbering contiguously
    by smallest contained vertex index."""
    labels = np.full(partition_labels.shape[0], -1, dtype=np.int64)
    sizes: list[int] = []
    mapping: dict[int, int] = {}
    for v in range(partition_labels.shape[0]):
        if not keep[v]:
            continue
        old = int(partition_labels[v])
        if old not in mapping:
            mapping[old] = len(sizes)
            sizes.append(0)
        labels[v] = mapping[old]
        sizes[mapping[old]] += 1
    return labels, np.asarray(sizes, dtype=np.int64)


def run_pipeline(
    cloud: PointCloud,
    k: int,
    flavor: str = "mutual",
    mode: str = "noisefree",
    t: float | None = None,
    eps: float = 0.0,
    h: float | None = None,
    delta: float = 0.0,
) -> PipelineArtifacts:
    """Run the identification pipeline keeping intermediates.

    In noisy mode the density threshold is t - eps; a nonpositive threshold
    simply keeps every point (the estimates are nonnegative), so the noisy
    pipeline with eps >= t and delta = 0 coincides with the noise-free one.
    """
    lists = knn_sets(cloud, k)
    graph = build_graph(cloud, flavor, k, lists=lists)

    if mode == "noisefree":
        partition = connected_components(graph)
        labels, sizes = _renumber(partition.labels, np.ones(cloud.n, dtype=bool))
        result = ClusterResult(
            n=cloud.n,
            labels=labels,
            component_sizes=sizes,
            removed_low_density=np.zeros(cloud.n, dtype=bool),
            removed_small=np.zeros(cloud.n, dtype=bool),
        )
        return PipelineArtifacts(
            cloud=cloud, lists=lists, graph=graph, estimate=None, result=result, mode=mode
        )

    if mode != "noisy":
        raise ValueError(f"unknown mode {mode!r}")
    if t is None or h is None:
        raise ValueError("noisy mode needs the level t and a bandwidth h")

    estimate = kde_at_samples(cloud, h)
    kept_density = prune_low_density(graph, estimate, t - eps)
    partition = connected_components(graph, active=kept_density)
    kept_size = remove_small_components(partition, delta, cloud.n)
    labels, sizes = _renumber(partition.labels, kept_size)
    result = ClusterResult(
        n=cloud.n,
        labels=labels,
        component_sizes=sizes,
        removed_low_density=~kept_density,
        removed_small=kept_density & ~kept_size,
    )
    return PipelineArtifacts(
        cloud=cloud,
        lists=lists,
        graph=graph,
        estimate=estimate,
        result=result,
        mode=mode,
        t=t,
        eps=eps,
        delta=delta,
    )


def identify_noisefree(cloud: PointCloud, k: int, flavor: str = "mutual") -> ClusterResult:
    """Noise-free identification: graph components, nothing removed."""
    return run_pipeline(cloud, k, flavor=flavor, mode="noisefree").result


def identify_noisy(
    cloud: PointCloud,
    k: int,
    flavor: str,
    t: float,
    eps: float,
    h: float,
    delta: float,
) -> ClusterResult:
    """Noisy identification: graph, density estimate, prune below t - eps,
    components, drop components smaller than delta * n."""
    return run_pipeline(
        cloud, k, flavor=flavor, mode="noisy", t=t, eps=eps, h=h, delta=delta
    ).result


@dataclass(frozen=True)
class AssessContext:
    """Inputs assess needs beyond the result and the ground truth."""

    model: DensityModel
    artifacts: PipelineArtifacts


@dataclass(frozen=True)
class IdentificationReport:
    """Per-cluster identification verdicts, diagnostic events, and counts.

    Per-cluster arrays are indexed by cluster label - 1.  Events:

    - ``event_a``: the cluster's samples all pass the density filter and
      form a connected induced subgraph of the pruned graph
    - ``event_b``: strictly more than delta * n samples fall in the cluster
    - ``event_e``: strictly fewer than delta * n samples fall in the
      2*eps enlargement annuli around the clusters
    - ``event_d``: the density estimate is within eps of the true density
      at every sample
    - ``event_i``: no surviving edge joins the cluster's points to another
      cluster's points

    In noise-free mode events D and E are vacuously true.
    """

    m: int
    rough_identified: np.ndarray
    containing_component: np.ndarray  # component id, -1 when undefined
    all_points_survived: np.ndarray
    one_component: np.ndarray
    pure_component: np.ndarray
    event_a: np.ndarray
    event_b: np.ndarray
    event_e: bool
    event_d: bool
    event_i: np.ndarray
    n_cluster_points: int
    n_background_points: int
    ratio: float
    r_min: np.ndarray
    r_max_tilde: np.ndarray
    background_only_components: int
    mode: str

    @property
    def all_identified(self) -> bool:
        return bool(np.all(self.rough_identified))


def _connected_subset(graph: NeighborhoodGraph, vertices: np.ndarray, keep: np.ndarray) -> bool:
    """Whether the induced subgraph on ``vertices`` (all of which must be in
    ``keep``) is connected; empty and singleton sets count as connected."""
    if vertices.size <= 1:
        return True
    in_set = np.zeros(graph.n, dtype=bool)
    in_set[vertices] = True
    seen = np.zeros(graph.n, dtype=bool)
    stack = [int(vertices[0])]
    seen[vertices[0]] = True
    count = 0
    while stack:
        v = stack.pop()
        count += 1
        for w in graph.neighbors(v):
            if in_set[w] and keep[w] and not seen[w]:
                seen[w] = True
                stack.append(int(w))
    return count == vertices.size


def assess(result: ClusterResult, truth: GroundTruth, context: AssessContext) -> IdentificationReport:
    """Evaluate rough identification, point counts, events, and radii."""
    art = context.artifacts
    n = result.n
    if truth.labels.shape[0] != n or art.cloud.n != n:
        raise MismatchedInputs("result, truth, and context sizes differ")

    model = context.model
    m = truth.m
    labels = truth.labels
    comp_of = result.labels
    survivors = result.survivors
    noisy = art.mode == "noisy"
    eps = art.eps if noisy else 0.0

    rough = np.zeros(m, dtype=bool)
    containing = np.full(m, -1, dtype=np.int64)
    survived_all = np.zeros(m, dtype=bool)
    one_comp = np.zeros(m, dtype=bool)
    pure = np.zeros(m, dtype=bool)
    event_a = np.zeros(m, dtype=bool)
    event_b = np.zeros(m, dtype=bool)
    event_i = np.zeros(m, dtype=bool)
    r_min = np.full(m, np.nan)
    r_max_tilde = np.full(m, np.nan)

    kept_density = ~result.removed_low_density
    kth = art.lists.kth_distances()

    for c in range(m):
        pts = truth.cluster_points(c + 1)
        survived_all[c] = bool(pts.size) and bool(np.all(survivors[pts]))
        comps = np.unique(comp_of[pts][survivors[pts]])
        if survived_all[c] and comps.size == 1:
            one_comp[c] = True
            containing[c] = comps[0]
            members = result.component_members(int(comps[0]))
            others = (labels[members] != 0) & (labels[members] != c + 1)
            pure[c] = not bool(np.any(others))
        rough[c] = survived_all[c] and one_comp[c] and pure[c]

        # event A: all cluster samples pass the density filter and the
        # induced subgraph on them (in the pruned graph) is connected
        if pts.size:
            all_kept = bool(np.all(kept_density[pts]))
            event_a[c] = all_kept and _connected_subset(art.graph, pts, kept_density)
        else:
            event_a[c] = True
        event_b[c] = pts.size > art.delta * n

        if pts.size:
            r_min[c] = float(np.min(kth[pts]))
        comp_idx = truth.cluster_components[c]
        center = model.components[comp_idx].center
        radius = model.components[comp_idx].radius
        enlarged = np.linalg.norm(art.cloud.points - center, axis=1) <= radius + 2.0 * eps
        if np.any(enlarged):
            r_max_tilde[c] = float(np.max(kth[enlarged]))

        # event I: no surviving edge from this cluster into another cluster
        isolated = True
        for v in pts:
            if not survivors[v]:
                continue
            for w in art.graph.neighbors(int(v)):
                if survivors[w] and labels[w] != 0 and labels[w] != c + 1:
                    isolated = False
                    break
            if not isolated:
                break
        event_i[c] = isolated

    if noisy:
        strip = np.zeros(n, dtype=bool)
        for c in range(m):
            comp_idx = truth.cluster_components[c]
            center = model.components[comp_idx].center
            radius = model.components[comp_idx].radius
            dist = np.linalg.norm(art.cloud.points - center, axis=1)
            strip |= (dist > radius) & (dist <= radius + 2.0 * eps)
        event_e = bool(np.count_nonzero(strip) < art.delta * n)
        truth_density = density_at(model, art.cloud.points)
        event_d = bool(np.max(np.abs(art.estimate.values - truth_density)) <= eps)
    else:
        event_e = True
        event_d = True

    n_cluster = int(np.count_nonzero(survivors & (labels > 0)))
    n_background = int(np.count_nonzero(survivors & (labels == 0)))
    ratio = n_background / n_cluster if n_cluster > 0 else float("nan")

    bg_only = 0
    for comp in range(result.component_count):
        members = result.component_members(comp)
        if members.size and bool(np.all(labels[members] == 0)):
            bg_only += 1

    return IdentificationReport(
        m=m,
        rough_identified=rough,
        containing_component=containing,
        all_points_survived=survived_all,
        one_component=one_comp,
        pure_component=pure,
        event_a=event_a,
        event_b=event_b,
        event_e=event_e,
        event_d=event_d,
        event_i=event_i,
        n_cluster_points=n_cluster,
        n_background_points=n_background,
        ratio=ratio,
        r_min=r_min,
        r_max_tilde=r_max_tilde,
        background_only_components=bg_only,
        mode=art.mode,
    )


def write_labels(result: ClusterResult, fh) -> None:
    """Write one 'index label' line per point, label -1 for removed points."""
    for i, lab in enumerate(result.labels):
        fh.write(f"{i} {int(lab)}\n")
