"""Exact k-nearest-neighbor computation and neighborhood graphs.

Three unweighted undirected graph flavors over a point cloud:

- ``mutual``: edge (i, j) iff i is among j's k nearest neighbors AND j is
  among i's,
- ``symmetric``: the same with OR,
- ``epsilon``: edge iff the Euclidean distance is <= epsilon.

Distance ties are broken toward the smaller point index so results are
reproducible.  kNN uses a brute-force scan below ``BRUTE_FORCE_MAX`` points
and a kd-tree above; both backends implement the same tie rule and must
agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .model import PointCloud

__all__ = [
    "GraphError",
    "KOutOfRange",
    "NegativeEpsilon",
    "EmptySubset",
    "NeighborLists",
    "NeighborhoodGraph",
    "ComponentPartition",
    "knn_sets",
    "build_graph",
    "connected_components",
    "connected_components_unionfind",
    "knn_radii",
    "write_edge_list",
]

BRUTE_FORCE_MAX = 2000

FLAVORS = ("mutual", "symmetric", "epsilon")


class GraphError(Exception):
    """Base class for graph-construction errors."""


class KOutOfRange(GraphError):
    """k must satisfy 1 <= k <= n - 1."""


class NegativeEpsilon(GraphError):
    """epsilon must be nonnegative."""


class EmptySubset(GraphError):
    """Radius statistics need a nonempty vertex subset."""


@dataclass(frozen=True)
class NeighborLists:
    """Per-point ordered k-nearest-neighbor indices and distances."""

    indices: np.ndarray  # (n, k) int64
    distances: np.ndarray  # (n, k) float64, nondecreasing per row
    k: int

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    def kth_distances(self) -> np.ndarray:
        """Each point's distance to its k-th nearest neighbor."""
        return self.distances[:, -1]


@dataclass(frozen=True)
class NeighborhoodGraph:
    """Undirected unweighted graph in CSR form (no self-loops or multi-edges)."""

    n: int
    flavor: str
    parameter: float
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def edge_count(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """Edge list as an (m, 2) array with first column < second column."""
        src = np.repeat(np.arange(self.n), np.diff(self.indptr))
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])


@dataclass(frozen=True)
class ComponentPartition:
    """Connected-component labeling; inactive vertices carry label -1.

    Components are numbered contiguously from 0 in order of their smallest
    contained vertex index.
    """

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return self.sizes.shape[0]

    def members(self, comp: int) -> np.ndarray:
        return np.nonzero(self.labels == comp)[0]


def _validate_k(n: int, k: int) -> None:
    if not 1 <= k <= n - 1:
        raise KOutOfRange(f"k = {k} outside valid range [1, {n - 1}] for n = {n}")


def _knn_brute(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # difference-based squared distances (not the Gram-matrix shortcut) so
    # the brute and tree backends sort by bitwise-identical keys near ties
    n = points.shape[0]
    out_idx = np.empty((n, k), dtype=np.int64)
    out_d2 = np.empty((n, k))
    chunk = max(1, int(2**25 / max(1, n * points.shape[1])))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = points[lo:hi, None, :] - points[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.arange(lo, hi) - lo, np.arange(lo, hi)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]  # stable: ties -> smaller index
        out_idx[lo:hi] = order
        out_d2[lo:hi] = np.take_along_axis(d2, order, axis=1)
    return out_idx, np.sqrt(out_d2)


def _row_squared_dists(points: np.ndarray, i: int, cand: np.ndarray) -> np.ndarray:
    diff = points[cand] - points[i]
    return np.einsum("ij,ij->i", diff, diff)


def _knn_tree(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    tree = cKDTree(points)
    m = min(n, k + 2)
    dd, ii = tree.query(points, k=m)

    out_idx = np.empty((n, k), dtype=np.int64)
    out_d2 = np.empty((n, k))
    for i in range(n):
        cand = ii[i]
        d2 = _row_squared_dists(points, i, cand)
        order = np.lexsort((cand, d2))
        cand, d2 = cand[order], d2[order]
        keep = cand != i
        cand, d2 = cand[keep], d2[keep]
        # ties at the k-th distance may extend past the queried window
        if m < n and d2[k - 1] >= d2[-1] * (1.0 - 1e-12):
            radius = np.sqrt(d2[k - 1]) * (1.0 + 1e-9)
            cand = np.asarray(tree.query_ball_point(points[i], radius), dtype=np.int64)
            d2 = _row_squared_dists(points, i, cand)
            order = np.lexsort((cand, d2))
            cand, d2 = cand[order], d2[order]
            keep = cand != i
            cand, d2 = cand[keep], d2[keep]
        out_idx[i] = cand[:k]
        out_d2[i] = d2[:k]
    return out_idx, np.sqrt(out_d2)


def knn_sets(cloud: PointCloud, k: int, backend: str = "auto") -> NeighborLists:
    """Exact k nearest neighbors of every point, ties broken by smaller index.

    ``backend`` is 'auto' (brute force below BRUTE_FORCE_MAX points, kd-tree
    above), 'brute', or 'tree'; all backends return identical lists.
    """
    _validate_k(cloud.n, k)
    if backend == "auto":
        backend = "brute" if cloud.n <= BRUTE_FORCE_MAX else "tree"
    if backend == "brute":
        idx, dist = _knn_brute(cloud.points, k)
    elif backend == "tree":
        idx, dist = _knn_tree(cloud.points, k)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    idx.flags.writeable = False
    dist.flags.writeable = False
    return NeighborLists(indices=idx, distances=dist, k=k)


def _adjacency_from_lists(lists: NeighborLists, mutual: bool) -> sparse.csr_matrix:
    n = lists.n
    rows = np.repeat(np.arange(n), lists.k)
    cols = lists.indices.ravel()
    directed = sparse.csr_matrix(
        (np.ones(rows.shape[0], dtype=bool), (rows, cols)), shape=(n, n)
    )
    if mutual:
        adj = directed.multiply(directed.T)
    else:
        adj = (directed + directed.T).astype(bool)
    adj = sparse.csr_matrix(adj)
    adj.sort_indices()
    return adj


def _adjacency_epsilon(points: np.ndarray, eps: float) -> sparse.csr_matrix:
    n = points.shape[0]
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps, output_type="ndarray")  # dist <= eps inclusive
    if pairs.shape[0] == 0:
        return sparse.csr_matrix((n, n), dtype=bool)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sparse.csr_matrix((np.ones(rows.shape[0], dtype=bool), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return adj


def build_graph(
    cloud: PointCloud,
    flavor: str,
    parameter: float,
    lists: NeighborLists | None = None,
) -> NeighborhoodGraph:
    """Build the neighborhood graph of the requested flavor.

    ``parameter`` is k for the kNN flavors and epsilon for the epsilon
    flavor.  Precomputed NeighborLists may be passed to avoid recomputing
    the kNN sets.
    """
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}, expected one of {FLAVORS}")
    if flavor == "epsilon":
        eps = float(parameter)
        if eps < 0.0:
            raise NegativeEpsilon(f"epsilon = {eps}")
        adj = _adjacency_epsilon(cloud.points, eps)
    else:
        k = int(parameter)
        if lists is None:
            lists = knn_sets(cloud, k)
        elif lists.k != k:
            raise ValueError(f"precomputed lists have k = {lists.k}, requested {k}")
        adj = _adjacency_from_lists(lists, mutual=(flavor == "mutual"))
    indptr = adj.indptr.astype(np.int64)
    indices = adj.indices.astype(np.int64)
    indptr.flags.writeable = False
    indices.flags.writeable = False
    return NeighborhoodGraph(
        n=cloud.n, flavor=flavor, parameter=parameter, indptr=indptr, indices=indices
    )


def connected_components(
    graph: NeighborhoodGraph, active: np.ndarray | None = None
) -> ComponentPartition:
    """Connected components by iterative depth-first search.

    ``active`` optionally restricts to a vertex mask; inactive vertices get
    label -1 and edges incident to them are ignored.
    """
    n = graph.n
    if active is None:
        active = np.ones(n, dtype=bool)
    else:
        active = np.asarray(active, dtype=bool)
        if active.shape != (n,):
            raise ValueError("active mask length must equal the vertex count")

    labels = np.full(n, -1, dtype=np.int64)
    sizes: list[int] = []
    comp = 0
    for start in range(n):
        if not active[start] or labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = comp
        size = 0
        while stack:
            v = stack.pop()
            size += 1
            for w in graph.neighbors(v):
                if active[w] and labels[w] < 0:
                    labels[w] = comp
                    stack.append(int(w))
        sizes.append(size)
        comp += 1
    return ComponentPartition(labels=labels, sizes=np.asarray(sizes, dtype=np.int64))


def connected_components_unionfind(
    graph: NeighborhoodGraph, active: np.ndarray | None = None
) -> ComponentPartition:
    """Connected components by union-find; same numbering convention as the
    depth-first implementation (oracle twin for testing)."""
    n = graph.n
    if active is None:
        active = np.ones(n, dtype=bool)
    else:
        active = np.asarray(active, dtype=bool)
        if active.shape != (n,):
            raise ValueError("active mask length must equal the vertex count")

    parent = np.arange(n, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for v in range(n):
        if not active[v]:
            continue
        for w in graph.neighbors(v):
            if w > v and active[w]:
                rv, rw = find(v), find(int(w))
                if rv != rw:
                    # root at the smaller index keeps numbering deterministic
                    if rv < rw:
                        parent[rw] = rv
                    else:
                        parent[rv] = rw

    labels = np.full(n, -1, dtype=np.int64)
    sizes: list[int] = []
    root_to_comp: dict[int, int] = {}
    for v in range(n):
        if not active[v]:
            continue
        r = find(v)
        if r not in root_to_comp:
            root_to_comp[r] = len(sizes)
            sizes.append(0)
        labels[v] = root_to_comp[r]
        sizes[root_to_comp[r]] += 1
    return ComponentPartition(labels=labels, sizes=np.asarray(sizes, dtype=np.int64))


def knn_radii(lists: NeighborLists, subset: np.ndarray) -> tuple[float, float]:
    """Minimal and maximal k-th-neighbor distance over a vertex subset."""
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise EmptySubset("knn_radii needs a nonempty subset")
    kth = lists.kth_distances()[subset]
    return float(np.min(kth)), float(np.max(kth))


def write_edge_list(graph: NeighborhoodGraph, fh) -> None:
    """Write edges as 'i j' lines with i < j (debugging export)."""
    for i, j in graph.edges():
        fh.write(f"{i} {j}\n")
