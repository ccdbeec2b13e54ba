"""Confusion-driven merging of confounded attack classes.

Attack pairs whose pairwise false-negative or false-positive rate exceeds
a threshold get an edge; connected components (union-find) become one
composite class whose parent is the lowest label in the component. The
clean class never participates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset_ops import AfvTable
from .metrics import ConfusionMatrix

DEFAULT_THRESHOLD = 0.2


class UnionFind:
    """Disjoint sets with path compression; the root is the minimum member."""

    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        if x not in self.parent:
            self.parent[x] = x
        if self.parent[x] != x:
            self.parent[x] = self.find(self.parent[x])
        return self.parent[x]

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        lo, hi = (ra, rb) if ra < rb else (rb, ra)
        self.parent[hi] = lo


@dataclass
class ClusterMap:
    parent: dict[int, int]

    def __post_init__(self):
        for lab, par in self.parent.items():
            if self.parent.get(par, par) != par:
                raise ValueError("parent map is not flattened")
            if par > lab:
                raise ValueError("parent must be the lowest label of its cluster")

    def __getitem__(self, label: int) -> int:
        return self.parent[label]

    @property
    def cluster_count(self) -> int:
        """Number of distinct clusters, the clean class included."""
        return len(set(self.parent.values()))

    @property
    def attack_cluster_count(self) -> int:
        """Number of distinct attack clusters (the clean class not counted)."""
        return len({p for lab, p in self.parent.items() if lab > 0})

    def members(self, parent_label: int) -> tuple[int, ...]:
        return tuple(sorted(lab for lab, p in self.parent.items() if p == parent_label))


def pairwise_rates(cm: ConfusionMatrix, i: int, j: int) -> tuple[float, float]:
    """(fnr_ij, fpr_ij) from the 2x2 confusion restricted to attack labels i, j."""
    if i == j:
        raise ValueError("need two distinct labels")
    if i <= 0 or j <= 0:
        raise ValueError("pairwise rates are defined for attack labels only")
    idx = {lab: k for k, lab in enumerate(cm.labels)}
    ii, jj = idx[i], idx[j]
    row_i = cm.counts[ii, ii] + cm.counts[ii, jj]
    row_j = cm.counts[jj, jj] + cm.counts[jj, ii]
    if row_i == 0 or row_j == 0:
        raise ValueError(f"empty restricted rows for pair ({i}, {j})")
    fnr = float(cm.counts[ii, jj]) / float(row_i)
    fpr = float(cm.counts[jj, ii]) / float(row_j)
    return fnr, fpr


def build_cluster_map(cm: ConfusionMatrix, threshold: float = DEFAULT_THRESHOLD) -> ClusterMap:
    """Transitive closure over attack pairs confused beyond the threshold."""
    if len(cm.labels) < 2:
        raise ValueError("need at least 2 classes")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    uf = UnionFind()
    for lab in cm.labels:
        uf.find(int(lab))
    attacks = sorted(int(lab) for lab in cm.labels if lab > 0)
    for a_pos, i in enumerate(attacks):
        for j in attacks[a_pos + 1 :]:
            try:
                fnr, fpr = pairwise_rates(cm, i, j)
            except ValueError:
                continue  # no evaluated rows for this pair, no evidence to merge
            if fnr > threshold or fpr > threshold:
                uf.union(i, j)
    return ClusterMap({int(lab): uf.find(int(lab)) for lab in cm.labels})


def relabel(table: AfvTable, cluster_map: ClusterMap) -> AfvTable:
    """Replace every row label by its cluster parent; class names follow."""
    labels = table.labels.copy()
    for lab in np.unique(labels):
        if int(lab) not in cluster_map.parent:
            raise ValueError(f"label {int(lab)} not covered by the cluster map")
        labels[table.labels == lab] = cluster_map[int(lab)]
    names = {}
    for lab, name in table.class_names.items():
        parent = cluster_map.parent.get(lab, lab)
        if parent == lab:
            names[lab] = name
    for lab in np.unique(labels):
        names.setdefault(int(lab), table.class_names.get(int(lab), str(int(lab))))
    return replace(table, labels=labels, class_names=names)


def relabel_predictions(labels: np.ndarray, cluster_map: ClusterMap) -> np.ndarray:
    out = np.asarray(labels).copy()
    for i, lab in enumerate(out):
        out[i] = cluster_map.parent.get(int(lab), int(lab))
    return out


# two-column text format: label parent


def cluster_map_to_text(cluster_map: ClusterMap) -> str:
    lines = ["# format afv-cluster-map", "# version 1", "label parent"]
    for lab in sorted(cluster_map.parent):
        lines.append(f"{lab} {cluster_map.parent[lab]}")
    return "\n".join(lines) + "\n"


def cluster_map_from_text(text: str) -> ClusterMap:
    parent = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("label"):
            continue
        lab_s, par_s = line.split()
        parent[int(lab_s)] = int(par_s)
    if not parent:
        raise ValueError("empty cluster map")
    return ClusterMap(parent)


def save_cluster_map(cluster_map: ClusterMap, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(cluster_map_to_text(cluster_map))


def load_cluster_map(path: str) -> ClusterMap:
    with open(path, "r", encoding="utf-8") as f:
        return cluster_map_from_text(f.read())
