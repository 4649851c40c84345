"""Graph-based clustering of curve series.

The pipeline is: build an approximate shortest Hamiltonian path by greedy
Kruskal-style edge selection (degree <= 2, no cycles), prune path edges above
a threshold, and read clusters off the connected components.  The threshold
is chosen either by a robust median/MAD rule or by a BIC descent over the
sorted edge weights.  Purity and a stricter variant that penalizes cluster
count misestimation score a clustering against ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputValidationError, NumericalError
from .series import SeriesPanel, distance_matrix

__all__ = [
    "WeightedEdge",
    "HamiltonianPath",
    "Clustering",
    "build_hamiltonian_path",
    "path_from_distance_matrix",
    "prune_and_components",
    "purity",
    "strict_purity",
    "naive_threshold",
    "bic_threshold_select",
    "clustering_from_labels",
    "cluster_panel",
]

GROUND_TRUTH = "ground truth"

# Sample variance of the kept edge weights is floored before taking its log
# so that panels of identical series do not produce log(0).
_VARIANCE_FLOOR = 1e-12


class WeightedEdge(NamedTuple):
    u: int
    v: int
    w: float


@dataclass(frozen=True)
class HamiltonianPath:
    """Ordered vertex sequence with the K-1 distances along consecutive edges."""

    order: tuple[int, ...]
    edge_weights: np.ndarray

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        weights = np.asarray(self.edge_weights, dtype=np.float64)
        weights = np.array(weights, copy=True)
        weights.setflags(write=False)
        if sorted(order) != list(range(len(order))):
            raise InputValidationError("order must be a permutation of 0..K-1")
        if weights.size != len(order) - 1:
            raise InputValidationError(
                f"expected {len(order) - 1} edge weights, got {weights.size}"
            )
        if np.any(weights < 0):
            raise InputValidationError("edge weights must be non-negative")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "edge_weights", weights)

    @property
    def K(self) -> int:
        return len(self.order)

    def total_weight(self) -> float:
        return float(np.sum(self.edge_weights))


@dataclass(frozen=True)
class Clustering:
    """A partition of region indices 0..K-1 into clusters 1..L.

    ``assignment[j]`` is the cluster id of region j.  ``threshold`` records
    the pruning threshold that produced the partition, or the marker string
    ``"ground truth"`` for label-derived partitions.
    """

    assignment: tuple[int, ...]
    threshold: float | str

    def __post_init__(self):
        assignment = tuple(int(c) for c in self.assignment)
        if not assignment:
            raise InputValidationError("empty clustering")
        ids = sorted(set(assignment))
        if ids != list(range(1, len(ids) + 1)):
            raise InputValidationError(
                f"cluster ids must be contiguous 1..L, got {ids}"
            )
        object.__setattr__(self, "assignment", assignment)

    @property
    def K(self) -> int:
        return len(self.assignment)

    @property
    def num_clusters(self) -> int:
        return max(self.assignment)

    def members(self, cluster_id: int) -> tuple[int, ...]:
        return tuple(j for j, c in enumerate(self.assignment) if c == cluster_id)

    def as_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.num_clusters)]
        for j, c in enumerate(self.assignment):
            sets[c - 1].add(j)
        return sets


def clustering_from_labels(labels: Sequence[int]) -> Clustering:
    """Build a ground-truth Clustering from arbitrary integer labels."""
    remap: dict[int, int] = {}
    assignment = []
    for lab in labels:
        if lab not in remap:
            remap[lab] = len(remap) + 1
        assignment.append(remap[lab])
    return Clustering(assignment=tuple(assignment), threshold=GROUND_TRUTH)


def path_from_distance_matrix(D: np.ndarray) -> HamiltonianPath:
    """Greedy Kruskal-style approximate shortest Hamiltonian path.

    Edges are visited in nondecreasing weight (ties broken by smaller (u, v));
    an edge is accepted iff it creates no cycle and keeps both endpoint
    degrees <= 2.  Selection stops after K-1 acceptances, which by
    construction form a single path.
    """
    D = np.asarray(D, dtype=np.float64)
    K = D.shape[0]
    if D.ndim != 2 or D.shape[1] != K:
        raise InputValidationError("distance matrix must be square")
    if K < 2:
        raise InputValidationError("need at least 2 vertices to build a path")

    iu, iv = np.triu_indices(K, k=1)
    weights = D[iu, iv]
    # lexsort keys are applied last-key-first: weight, then u, then v
    order = np.lexsort((iv, iu, weights))

    parent = list(range(K))
    degree = [0] * K
    adjacency: list[list[tuple[int, float]]] = [[] for _ in range(K)]

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    accepted = 0
    for idx in order:
        u, v, w = int(iu[idx]), int(iv[idx]), float(weights[idx])
        if degree[u] >= 2 or degree[v] >= 2:
            continue
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        parent[ru] = rv
        degree[u] += 1
        degree[v] += 1
        adjacency[u].append((v, w))
        adjacency[v].append((u, w))
        accepted += 1
        if accepted == K - 1:
            break
    if accepted != K - 1:
        raise NumericalError("path construction failed to select K-1 edges")

    # walk the path from the lowest-index endpoint for determinism
    endpoints = [i for i in range(K) if degree[i] == 1]
    start = min(endpoints)
    path = [start]
    edge_w = []
    prev = -1
    node = start
    while len(path) < K:
        nxt = [(n, w) for n, w in adjacency[node] if n != prev]
        nxt.sort()
        n, w = nxt[0]
        path.append(n)
        edge_w.append(w)
        prev, node = node, n
    return HamiltonianPath(order=tuple(path), edge_weights=np.array(edge_w))


def build_hamiltonian_path(panel: SeriesPanel) -> HamiltonianPath:
    """Approximate shortest Hamiltonian path over a panel's curve distances."""
    if panel.K < 2:
        raise InputValidationError("need K >= 2 series to build a path")
    return path_from_distance_matrix(distance_matrix(panel))


def prune_and_components(path: HamiltonianPath, theta: float) -> Clustering:
    """Drop path edges heavier than ``theta``; components become clusters.

    Because the input graph is a path, components are the maximal runs of
    consecutive path vertices whose connecting edges all weigh <= theta.
    Isolated vertices form singleton clusters.
    """
    if theta < 0:
        raise InputValidationError("theta must be non-negative")
    assignment = [0] * path.K
    cluster = 1
    assignment[path.order[0]] = cluster
    for s, w in enumerate(path.edge_weights):
        if w > theta:
            cluster += 1
        assignment[path.order[s + 1]] = cluster
    return Clustering(assignment=tuple(assignment), threshold=float(theta))


def _check_same_universe(found: Clustering, truth: Clustering) -> None:
    if found.K != truth.K:
        raise InputValidationError(
            f"clusterings cover different universes: {found.K} vs {truth.K} regions"
        )


def purity(found: Clustering, truth: Clustering) -> float:
    """(1/K) * sum over clusters of the largest overlap with any true class."""
    _check_same_universe(found, truth)
    truth_sets = truth.as_sets()
    total = 0
    for cluster in found.as_sets():
        total += max(len(cluster & cls) for cls in truth_sets)
    return total / found.K


def strict_purity(found: Clustering, truth: Clustering) -> float:
    """Purity minus |L - N| / max(L, N), penalizing cluster-count errors."""
    _check_same_universe(found, truth)
    L = found.num_clusters
    N = truth.num_clusters
    return purity(found, truth) - abs(L - N) / max(L, N)


def naive_threshold(path: HamiltonianPath) -> float:
    """Outlier-style threshold: median + 2.5 * (1.483 * MAD) of the edge weights."""
    x = path.edge_weights
    if x.size < 2:
        raise InputValidationError(
            "need at least 2 edge weights; use the BIC selector or a trivial "
            "clustering for smaller panels"
        )
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    return med + 2.5 * (1.483 * mad)


def _edge_bic(x_kept: np.ndarray, L: int, K: int) -> float:
    # The log-variance term is scaled by the number of kept edges (the sample
    # the variance is computed from), not the fixed K - 1.  A fixed multiplier
    # rewards discarding the largest kept edge for the variance shrink alone
    # and systematically over-splits tight clusters.
    var = float(np.var(x_kept, ddof=1)) if x_kept.size >= 2 else 0.0
    var = max(var, _VARIANCE_FLOOR)
    return x_kept.size * math.log(var) + 2.0 * L * math.log(K - 1)


def bic_threshold_select(
    path: HamiltonianPath,
) -> tuple[Clustering, float, list[tuple[float, float, int]]]:
    """Choose the pruning threshold by BIC descent over sorted edge weights.

    Starting from the all-inclusive clustering at the largest edge weight,
    thresholds walk down through the s-th largest weight; each step is
    accepted while the BIC strictly improves, and the walk stops at the first
    non-improvement.  Returns the accepted clustering, its threshold, and the
    (theta, bic, L) trace for diagnostics.
    """
    K = path.K
    if K < 3:
        raise InputValidationError("BIC threshold selection needs K >= 3")
    x = path.edge_weights
    desc = np.sort(x)[::-1]  # desc[s-1] is the s-th largest weight

    theta = float(desc[0])
    kept = x[x <= theta]
    best = Clustering(assignment=tuple([1] * K), threshold=theta)
    best_bic = _edge_bic(kept, 1, K)
    trace = [(theta, best_bic, 1)]

    for s in range(2, K - 1):
        theta_s = float(desc[s - 1])
        kept = x[x <= theta_s]
        if kept.size < 2:
            break  # no sample variance; treated as non-improving
        candidate = prune_and_components(path, theta_s)
        bic = _edge_bic(kept, candidate.num_clusters, K)
        trace.append((theta_s, bic, candidate.num_clusters))
        if bic < best_bic:
            best, best_bic = candidate, bic
        else:
            break
    return best, float(best.threshold), trace


def cluster_panel(panel: SeriesPanel) -> tuple[Clustering, float, list]:
    """Cluster a panel, handling the degenerate K = 1 and K = 2 cases.

    K = 1 is the trivial single cluster; K = 2 applies the median/MAD rule
    degenerately (the sole edge equals its own median, so both regions join
    one cluster); K >= 3 runs the BIC selection.
    """
    if panel.K == 1:
        return Clustering(assignment=(1,), threshold=0.0), 0.0, []
    path = build_hamiltonian_path(panel)
    if panel.K == 2:
        theta = float(path.edge_weights[0])
        return prune_and_components(path, theta), theta, []
    return bic_threshold_select(path)
