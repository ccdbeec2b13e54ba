import numpy as np
import pytest

from afvkit import cluster as cl
from afvkit.dataset_ops import AfvTable
from afvkit.features import FeatureLayout
from afvkit.metrics import ConfusionMatrix


def _cm(counts, labels=None):
    counts = np.asarray(counts, dtype=np.int64)
    if labels is None:
        labels = tuple(range(counts.shape[0]))
    return ConfusionMatrix(counts, tuple(labels))


def test_pairwise_rates_perfect_separation():
    cm = _cm([[99, 0, 0], [0, 10, 0], [0, 0, 10]])
    assert cl.pairwise_rates(cm, 1, 2) == (0.0, 0.0)


def test_pairwise_rates_coin_flip():
    cm = _cm([[99, 0, 0], [0, 5, 5], [0, 5, 5]])
    assert cl.pairwise_rates(cm, 1, 2) == (0.5, 0.5)


def test_pairwise_rates_match_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(30):
        counts = rng.integers(1, 50, size=(4, 4))
        cm = _cm(counts)
        for i in (1, 2, 3):
            for j in (1, 2, 3):
                if i == j:
                    continue
                fnr, fpr = cl.pairwise_rates(cm, i, j)
                assert fnr == counts[i, j] / (counts[i, i] + counts[i, j])
                assert fpr == counts[j, i] / (counts[j, j] + counts[j, i])


def test_pairwise_rates_rejects_clean_class():
    cm = _cm(np.eye(3, dtype=int) * 5)
    with pytest.raises(ValueError, match="attack labels"):
        cl.pairwise_rates(cm, 0, 1)


def test_reference_attack_table_clustering():
    """High mutual confusion among {2,3,5,6,8,10} merges them under parent 2."""
    k = 12
    confused = {2, 3, 5, 6, 8, 10}
    counts = np.zeros((k, k), dtype=np.int64)
    np.fill_diagonal(counts, 100)
    for i in confused:
        for j in confused:
            if i != j:
                counts[i, j] = 40  # pairwise fnr = 40/140 > 0.2
    cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
    for lab in range(k):
        expected = 2 if lab in confused else lab
        assert cmap[lab] == expected
    assert cmap.attack_cluster_count == 6
    assert cmap.members(2) == (2, 3, 5, 6, 8, 10)


def test_zero_confusion_identity_map():
    k = 12
    counts = np.eye(k, dtype=np.int64) * 50
    cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
    assert all(cmap[lab] == lab for lab in range(k))
    assert cmap.cluster_count == k


def test_chain_confusion_is_transitive():
    counts = np.zeros((4, 4), dtype=np.int64)
    np.fill_diagonal(counts, 10)
    counts[1, 2] = counts[2, 1] = 9  # 1 <-> 2
    counts[2, 3] = counts[3, 2] = 9  # 2 <-> 3
    cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
    assert cmap[1] == cmap[2] == cmap[3] == 1
    assert cmap[0] == 0


def test_clean_class_never_merges():
    counts = np.zeros((3, 3), dtype=np.int64)
    np.fill_diagonal(counts, 10)
    counts[0, 1] = counts[1, 0] = 50  # heavy clean/attack confusion
    cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
    assert cmap[0] == 0
    assert cmap[1] == 1


def _bfs_components(counts, threshold):
    k = counts.shape[0]
    adj = {i: set() for i in range(k)}
    for i in range(1, k):
        for j in range(1, k):
            if i == j:
                continue
            row_i = counts[i, i] + counts[i, j]
            row_j = counts[j, j] + counts[j, i]
            if row_i == 0 or row_j == 0:
                continue
            fnr = counts[i, j] / row_i
            fpr = counts[j, i] / row_j
            if fnr > threshold or fpr > threshold:
                adj[i].add(j)
                adj[j].add(i)
    parent = {}
    for start in range(k):
        if start in parent:
            continue
        frontier = [start]
        component = set()
        while frontier:
            node = frontier.pop()
            if node in component:
                continue
            component.add(node)
            frontier.extend(adj[node] - component)
        root = min(component)
        for node in component:
            parent[node] = root
    return parent


def test_union_find_matches_bfs_reachability_on_random_matrices():
    rng = np.random.default_rng(1)
    for _ in range(50):
        counts = rng.integers(0, 30, size=(12, 12))
        np.fill_diagonal(counts, rng.integers(20, 120, size=12))
        cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
        ref = _bfs_components(counts, 0.2)
        assert cmap.parent == ref


def test_merging_monotone_in_threshold():
    rng = np.random.default_rng(2)
    for _ in range(20):
        counts = rng.integers(0, 25, size=(8, 8))
        np.fill_diagonal(counts, rng.integers(20, 80, size=8))
        cm = _cm(counts)
        coarse = cl.build_cluster_map(cm, threshold=0.1)
        fine = cl.build_cluster_map(cm, threshold=0.4)
        # pairs merged at the higher threshold stay merged at the lower one
        for a in range(8):
            for b in range(8):
                if fine[a] == fine[b]:
                    assert coarse[a] == coarse[b]


def _table(labels, class_names=None):
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if class_names is None:
        class_names = {int(v): f"c{int(v)}" for v in np.unique(labels)}
    layout = FeatureLayout((("core", "f0"), ("core", "f1")))
    return AfvTable(np.zeros((n, 2)), labels, np.ones(n, bool), layout, class_names)


def test_relabel_identity():
    t = _table([0, 1, 2, 1])
    cmap = cl.ClusterMap({0: 0, 1: 1, 2: 2})
    out = cl.relabel(t, cmap)
    assert np.array_equal(out.labels, t.labels)
    assert out.class_names == t.class_names


def test_relabel_merges_completely():
    t = _table([0, 5, 2, 5, 5])
    cmap = cl.ClusterMap({0: 0, 2: 2, 5: 2})
    out = cl.relabel(t, cmap)
    assert not np.any(out.labels == 5)
    assert np.sum(out.labels == 2) == 4
    assert 5 not in out.class_names


def test_relabel_uncovered_label():
    t = _table([0, 3])
    with pytest.raises(ValueError, match="not covered"):
        cl.relabel(t, cl.ClusterMap({0: 0, 1: 1}))


def test_relabel_random_tables_match_bfs_closure():
    rng = np.random.default_rng(3)
    for _ in range(50):
        counts = rng.integers(0, 20, size=(6, 6))
        np.fill_diagonal(counts, rng.integers(10, 60, size=6))
        cmap = cl.build_cluster_map(_cm(counts), threshold=0.2)
        ref = _bfs_components(counts, 0.2)
        labels = rng.integers(0, 6, size=40)
        out = cl.relabel(_table(labels), cmap)
        expected = np.array([ref[int(v)] for v in labels])
        assert np.array_equal(out.labels, expected)


def test_cluster_map_partition_properties():
    cmap = cl.ClusterMap({0: 0, 1: 1, 2: 2, 3: 2, 5: 2})
    for lab, parent in cmap.parent.items():
        assert cmap.parent[parent] == parent  # parents map to themselves
        assert parent <= lab


def test_cluster_map_text_round_trip(tmp_path):
    cmap = cl.ClusterMap({0: 0, 1: 1, 2: 2, 3: 2, 4: 4})
    path = tmp_path / "map.txt"
    cl.save_cluster_map(cmap, str(path))
    back = cl.load_cluster_map(str(path))
    assert back.parent == cmap.parent
