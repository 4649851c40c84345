"""Path construction, threshold pruning, purity scores, and BIC selection."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csas import (
    Clustering,
    CurveSeries,
    HamiltonianPath,
    InputValidationError,
    SeriesPanel,
    bic_threshold_select,
    build_hamiltonian_path,
    cluster_panel,
    clustering_from_labels,
    naive_threshold,
    prune_and_components,
    purity,
    strict_purity,
)
from csas.clustering import path_from_distance_matrix
from csas.series import distance_matrix


def constant_panel(levels):
    return SeriesPanel(
        series=tuple(
            CurveSeries(region_id=f"r{i}", values=np.full(5, float(lv)))
            for i, lv in enumerate(levels)
        )
    )


def random_distance_matrix(rng, K):
    M = rng.uniform(0.1, 10.0, size=(K, K))
    D = (M + M.T) / 2.0
    np.fill_diagonal(D, 0.0)
    return D


def exact_shortest_path_weight(D):
    """Brute-force shortest Hamiltonian path weight (K <= 8)."""
    K = D.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(K)):
        if perm[0] > perm[-1]:
            continue  # each path counted once
        w = sum(D[perm[s], perm[s + 1]] for s in range(K - 1))
        best = min(best, w)
    return best


def path_invariants_hold(path, K):
    degree = [0] * K
    for s in range(K - 1):
        degree[path.order[s]] += 1
        degree[path.order[s + 1]] += 1
    return (
        sorted(path.order) == list(range(K))
        and path.edge_weights.size == K - 1
        and max(degree) <= 2
    )


class TestHamiltonianPath:
    def test_two_vertices(self):
        panel = constant_panel([0.0, 3.0])
        path = build_hamiltonian_path(panel)
        assert sorted(path.order) == [0, 1]
        assert path.edge_weights[0] == pytest.approx(3.0)

    def test_three_levels_visits_in_order(self):
        path = build_hamiltonian_path(constant_panel([0.0, 1.0, 10.0]))
        assert path.order in ((0, 1, 2), (2, 1, 0))
        assert path.total_weight() == pytest.approx(10.0)
        np.testing.assert_allclose(sorted(path.edge_weights), [1.0, 9.0])

    def test_k6_structure(self):
        rng = np.random.default_rng(0)
        panel = SeriesPanel(
            series=tuple(
                CurveSeries(region_id=f"r{i}", values=rng.normal(size=10))
                for i in range(6)
            )
        )
        path = build_hamiltonian_path(panel)
        assert path_invariants_hold(path, 6)

    def test_single_series_rejected(self):
        with pytest.raises(InputValidationError):
            build_hamiltonian_path(constant_panel([1.0]))

    def test_heuristic_never_beats_exact_optimum(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            K = int(rng.integers(3, 9))
            D = random_distance_matrix(rng, K)
            path = path_from_distance_matrix(D)
            assert path_invariants_hold(path, K)
            assert path.total_weight() >= exact_shortest_path_weight(D) - 1e-9

    def test_order_is_permutation_checked(self):
        with pytest.raises(InputValidationError):
            HamiltonianPath(order=(0, 0, 1), edge_weights=[1.0, 2.0])


class TestPruneAndComponents:
    def path(self, weights, K=None):
        K = K or len(weights) + 1
        return HamiltonianPath(order=tuple(range(K)), edge_weights=np.asarray(weights))

    def test_high_threshold_one_cluster(self):
        c = prune_and_components(self.path([0.5, 2.0, 1.0]), theta=2.0)
        assert c.num_clusters == 1

    def test_low_threshold_all_singletons(self):
        c = prune_and_components(self.path([0.5, 2.0, 1.0]), theta=0.4)
        assert c.num_clusters == 4

    def test_spec_example(self):
        c = prune_and_components(self.path([0.1, 5.0, 0.2]), theta=1.0)
        assert c.as_sets() == [{0, 1}, {2, 3}]

    def test_components_match_bruteforce_on_random_paths(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            K = int(rng.integers(2, 9))
            order = tuple(rng.permutation(K))
            weights = rng.uniform(0, 5, size=K - 1)
            path = HamiltonianPath(order=order, edge_weights=weights)
            thetas = set(weights) | {w + 1e-9 for w in weights} | {w - 1e-9 for w in weights}
            for theta in thetas:
                if theta < 0:
                    continue
                got = prune_and_components(path, theta)
                # brute force: union-find over the surviving path edges
                parent = list(range(K))

                def find(x):
                    while parent[x] != x:
                        x = parent[x]
                    return x

                for s, w in enumerate(weights):
                    if w <= theta:
                        parent[find(order[s])] = find(order[s + 1])
                roots = [find(j) for j in range(K)]
                same_got = [
                    got.assignment[i] == got.assignment[j]
                    for i in range(K) for j in range(K)
                ]
                same_exp = [roots[i] == roots[j] for i in range(K) for j in range(K)]
                assert same_got == same_exp

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_monotone_refinement_in_theta(self, data):
        K = data.draw(st.integers(min_value=2, max_value=10))
        weights = data.draw(
            st.lists(st.floats(min_value=0, max_value=5), min_size=K - 1, max_size=K - 1)
        )
        t1 = data.draw(st.floats(min_value=0, max_value=5))
        t2 = data.draw(st.floats(min_value=0, max_value=5))
        t1, t2 = min(t1, t2), max(t1, t2)
        path = HamiltonianPath(order=tuple(range(K)), edge_weights=weights)
        fine = prune_and_components(path, t1)
        coarse = prune_and_components(path, t2)
        for cid in range(1, fine.num_clusters + 1):
            members = fine.members(cid)
            assert len({coarse.assignment[j] for j in members}) == 1


class TestPurity:
    def test_perfect_clustering(self):
        truth = clustering_from_labels([1, 1, 2, 2])
        found = Clustering(assignment=(1, 1, 2, 2), threshold=0.5)
        assert purity(found, truth) == 1.0
        assert strict_purity(found, truth) == 1.0

    def test_singletons_against_one_class(self):
        truth = clustering_from_labels([1, 1, 1, 1])
        found = Clustering(assignment=(1, 2, 3, 4), threshold=0.0)
        assert purity(found, truth) == 1.0
        # the strict score penalizes the cluster-count miss down to 1/L
        assert strict_purity(found, truth) == pytest.approx(0.25, abs=1e-12)

    def test_crossed_pairs(self):
        truth = clustering_from_labels([1, 1, 2, 2])
        found = Clustering(assignment=(1, 2, 1, 2), threshold=0.5)
        assert purity(found, truth) == pytest.approx(0.5, abs=1e-12)

    def test_merged_clusters(self):
        truth = clustering_from_labels([1, 1, 2, 2])
        found = Clustering(assignment=(1, 1, 1, 1), threshold=9.0)
        assert purity(found, truth) == pytest.approx(0.5, abs=1e-12)
        assert strict_purity(found, truth) == pytest.approx(0.0, abs=1e-12)

    def test_strict_never_exceeds_purity(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            K = int(rng.integers(2, 12))
            truth = clustering_from_labels(rng.integers(0, 4, size=K))
            found = clustering_from_labels(rng.integers(0, 4, size=K))
            p, s = purity(found, truth), strict_purity(found, truth)
            assert s <= p + 1e-15
            if found.num_clusters == truth.num_clusters:
                assert s == p

    def test_mismatched_universes(self):
        with pytest.raises(InputValidationError):
            purity(clustering_from_labels([1, 2]), clustering_from_labels([1, 2, 3]))


class TestNaiveThreshold:
    def path(self, weights):
        return HamiltonianPath(
            order=tuple(range(len(weights) + 1)), edge_weights=np.asarray(weights)
        )

    def test_constant_weights(self):
        assert naive_threshold(self.path([2.0, 2.0, 2.0])) == pytest.approx(2.0)

    def test_single_outlier(self):
        theta = naive_threshold(self.path([1.0, 1.0, 1.0, 1.0, 10.0]))
        assert theta == pytest.approx(1.0)

    def test_arithmetic_example(self):
        theta = naive_threshold(self.path([1.0, 2.0, 3.0, 4.0, 5.0]))
        assert theta == pytest.approx(3.0 + 2.5 * 1.483, abs=1e-12)  # 6.7075

    def test_needs_two_edges(self):
        with pytest.raises(InputValidationError):
            naive_threshold(self.path([1.0]))


class TestBicThresholdSelect:
    def test_two_tight_groups(self):
        rng = np.random.default_rng(2)
        series = []
        for i in range(5):
            series.append(CurveSeries(f"a{i}", rng.normal(0.0, 0.003, size=20)))
        for i in range(5):
            series.append(CurveSeries(f"b{i}", 10.0 + rng.normal(0.0, 0.003, size=20)))
        panel = SeriesPanel(series=tuple(series))
        found, theta, trace = bic_threshold_select(build_hamiltonian_path(panel))
        truth = clustering_from_labels([0] * 5 + [1] * 5)
        assert found.num_clusters == 2
        assert strict_purity(found, truth) == 1.0

    def test_identical_series_stay_together(self):
        panel = constant_panel([3.0] * 6)
        found, theta, trace = bic_threshold_select(build_hamiltonian_path(panel))
        assert found.num_clusters == 1

    def test_trace_is_reproducible(self):
        rng = np.random.default_rng(9)
        panel = SeriesPanel(
            series=tuple(
                CurveSeries(f"r{i}", rng.normal(size=15)) for i in range(8)
            )
        )
        path = build_hamiltonian_path(panel)
        first = bic_threshold_select(path)
        second = bic_threshold_select(path)
        assert first[1] == second[1]
        assert first[2] == second[2]
        assert first[0].assignment == second[0].assignment

    def test_requires_k_at_least_3(self):
        path = HamiltonianPath(order=(0, 1), edge_weights=[1.0])
        with pytest.raises(InputValidationError):
            bic_threshold_select(path)


class TestClusterPanel:
    def test_k1_trivial(self):
        found, theta, trace = cluster_panel(constant_panel([1.0]))
        assert found.assignment == (1,)

    def test_k2_joins_single_cluster(self):
        found, theta, trace = cluster_panel(constant_panel([0.0, 4.0]))
        assert found.num_clusters == 1
        assert theta == pytest.approx(4.0)
