"""AFV table preparation.

Holds extracted feature vectors with labels, success flags and train/test
tags, and implements range normalization, epsilon-ball synthetic
augmentation, stratified splitting, weakened-strain merging, and the
failed-attack policies. Also reads/writes the delimited AFV table format.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureLayout

TABLE_VERSION = 1
RANGE_GUARD = 1e-12
FAILED_ATTACK_POLICIES = ("drop", "keep", "centroid")


@dataclass
class AfvTable:
    values: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    attack_success: np.ndarray  # (n,) bool
    layout: FeatureLayout
    class_names: dict[int, str] = field(default_factory=dict)
    split: np.ndarray | None = None  # per-row "train"/"test", or None before split

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attack_success = np.asarray(self.attack_success, dtype=bool)
        n = self.values.shape[0]
        if self.values.ndim != 2 or self.values.shape[1] != len(self.layout):
            raise ValueError("value columns must match layout")
        if self.labels.shape != (n,) or self.attack_success.shape != (n,):
            raise ValueError("labels/attack_success length must match rows")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype="<U5")
            if self.split.shape != (n,):
                raise ValueError("split length must match rows")
        for lab in np.unique(self.labels):
            if int(lab) not in self.class_names:
                raise ValueError(f"label {int(lab)} has no class_name entry")

    def __len__(self) -> int:
        return self.values.shape[0]

    def select(self, mask: np.ndarray) -> "AfvTable":
        idx = np.flatnonzero(mask)
        return AfvTable(
            self.values[idx],
            self.labels[idx],
            self.attack_success[idx],
            self.layout,
            dict(self.class_names),
            None if self.split is None else self.split[idx],
        )

    def train_rows(self) -> "AfvTable":
        if self.split is None:
            raise ValueError("table has no split yet")
        return self.select(self.split == "train")

    def test_rows(self) -> "AfvTable":
        if self.split is None:
            raise ValueError("table has no split yet")
        return self.select(self.split == "test")


@dataclass
class Normalizer:
    feat_min: np.ndarray
    feat_max: np.ndarray

    def __post_init__(self):
        self.feat_min = np.asarray(self.feat_min, dtype=np.float64)
        self.feat_max = np.asarray(self.feat_max, dtype=np.float64)
        if np.any(self.feat_min > self.feat_max):
            raise ValueError("feat_min must not exceed feat_max")


def fit_range_normalizer(train_values: np.ndarray) -> Normalizer:
    """Per-feature min/max fitted on training rows only."""
    x = np.asarray(train_values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty training set")
    return Normalizer(x.min(axis=0), x.max(axis=0))


def apply_normalizer(values: np.ndarray, norm: Normalizer) -> np.ndarray:
    """Map into the training range: (x - min) / (max - min); no clamping."""
    x = np.asarray(values, dtype=np.float64)
    span = np.maximum(norm.feat_max - norm.feat_min, RANGE_GUARD)
    return (x - norm.feat_min) / span


def normalize_table(table: AfvTable, norm: Normalizer) -> AfvTable:
    return replace(table, values=apply_normalizer(table.values, norm))


def augment_epsilon_ball(
    table: AfvTable,
    epsilon: float,
    copies: int = 1,
    seed: int = 0,
    only_split: str | None = None,
) -> AfvTable:
    """Append jittered copies: x* = x + sigma_j * rho * epsilon, rho ~ U[-1, 1].

    sigma_j is the per-feature standard deviation over the whole table
    population. Original rows keep their order and bits; copies inherit
    label, success flag and split tag. ``only_split`` restricts which rows
    get copies (the population for sigma_j stays the full table).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if copies < 0:
        raise ValueError("copies must be non-negative")
    if copies == 0:
        return table
    sigma = table.values.std(axis=0)
    if only_split is None:
        base_idx = np.arange(len(table))
    else:
        if table.split is None:
            raise ValueError("table has no split yet")
        base_idx = np.flatnonzero(table.split == only_split)
    rng = np.random.default_rng(seed)
    new_vals = [table.values]
    new_labels = [table.labels]
    new_success = [table.attack_success]
    new_split = None if table.split is None else [table.split]
    for _ in range(copies):
        base = table.values[base_idx]
        if epsilon == 0.0:
            jittered = base.copy()  # exact identity, no float round-trip
        else:
            rho = rng.uniform(-1.0, 1.0, size=base.shape)
            jittered = base + sigma * rho * epsilon
        new_vals.append(jittered)
        new_labels.append(table.labels[base_idx])
        new_success.append(table.attack_success[base_idx])
        if new_split is not None:
            new_split.append(table.split[base_idx])
    return AfvTable(
        np.vstack(new_vals),
        np.concatenate(new_labels),
        np.concatenate(new_success),
        table.layout,
        dict(table.class_names),
        None if new_split is None else np.concatenate(new_split),
    )


def split(table: AfvTable, train_fraction: float = 0.7, seed: int = 0) -> AfvTable:
    """Stratified train/test split with a seeded shuffle.

    Per class, round(train_fraction * n_class) rows go to train, clamped so
    both sides of every stratum stay non-empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    tags = np.full(len(table), "test", dtype="<U5")
    for lab in np.unique(table.labels):
        idx = np.flatnonzero(table.labels == lab)
        if idx.size < 2:
            raise ValueError(f"class {int(lab)} has fewer than 2 rows")
        n_train = int(train_fraction * idx.size + 0.5)
        n_train = min(max(n_train, 1), idx.size - 1)
        chosen = rng.permutation(idx)[:n_train]
        tags[chosen] = "train"
    return replace(table, split=tags)


def merge_strains(table: AfvTable, strain_map: dict[int, int]) -> AfvTable:
    """Fold weakened-strain labels into their parent attack class."""
    labels = table.labels.copy()
    names = dict(table.class_names)
    for strain, parent in strain_map.items():
        if parent not in table.class_names:
            raise ValueError(f"dangling parent label {parent}")
        labels[labels == strain] = parent
        names.pop(strain, None)
    return replace(table, labels=labels, class_names=names)


def apply_failed_attack_policy(table: AfvTable, policy: str) -> AfvTable:
    """Handle rows whose attack did not flip the protected model.

    drop: remove failed attack rows. keep: leave them under their attack
    label. centroid: relabel each failed row to clean or its attack label,
    whichever centroid (clean rows vs successful rows of that attack) is
    closer in Euclidean distance.
    """
    if policy not in FAILED_ATTACK_POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {FAILED_ATTACK_POLICIES}")
    failed = ~table.attack_success & (table.labels != 0)
    if policy == "keep" or not np.any(failed):
        return replace(table)
    if policy == "drop":
        return table.select(~failed)
    clean_rows = table.values[table.labels == 0]
    if clean_rows.shape[0] == 0:
        raise ValueError("centroid policy needs clean rows")
    clean_centroid = clean_rows.mean(axis=0)
    labels = table.labels.copy()
    for lab in np.unique(table.labels[failed]):
        ok = (table.labels == lab) & table.attack_success
        row_idx = np.flatnonzero((table.labels == lab) & failed)
        if not np.any(ok):
            continue  # no successful examples of this attack, keep the label
        attack_centroid = table.values[ok].mean(axis=0)
        for i in row_idx:
            d_clean = float(np.linalg.norm(table.values[i] - clean_centroid))
            d_attack = float(np.linalg.norm(table.values[i] - attack_centroid))
            if d_clean <= d_attack:
                labels[i] = 0
    return replace(table, labels=labels)


# ---------------------------------------------------------------------------
# delimited table format (header comments + CSV)


def table_to_text(table: AfvTable) -> str:
    lines = [
        "# format afv-table",
        f"# version {TABLE_VERSION}",
        f"# column_groups {' '.join(g for g, _ in table.layout.entries)}",
    ]
    for lab in sorted(table.class_names):
        lines.append(f"# class {lab} {table.class_names[lab]}")
    lines.append("label,attack_success,split," + ",".join(table.layout.names))
    for i in range(len(table)):
        tag = "-" if table.split is None else table.split[i]
        row = [str(int(table.labels[i])), "1" if table.attack_success[i] else "0", tag]
        row.extend(repr(float(v)) for v in table.values[i])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def table_from_text(text: str) -> AfvTable:
    groups: list[str] = []
    class_names: dict[int, str] = {}
    header: list[str] | None = None
    rows: list[list[str]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 2)
            if parts[0] == "format" and parts[1] != "afv-table":
                raise ValueError("not an AFV table file")
            if parts[0] == "version" and int(parts[1]) != TABLE_VERSION:
                raise ValueError("unsupported table version")
            if parts[0] == "column_groups":
                groups = (parts[1] + (" " + parts[2] if len(parts) > 2 else "")).split()
            if parts[0] == "class":
                class_names[int(parts[1])] = parts[2]
            continue
        if header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    if header is None or header[:3] != ["label", "attack_success", "split"]:
        raise ValueError("missing AFV table header row")
    names = header[3:]
    if len(groups) != len(names):
        raise ValueError("column_groups does not match feature columns")
    layout = FeatureLayout(tuple(zip(groups, names)))
    n = len(rows)
    values = np.empty((n, len(names)))
    labels = np.empty(n, dtype=np.int64)
    success = np.empty(n, dtype=bool)
    tags = np.empty(n, dtype="<U5")
    for i, row in enumerate(rows):
        labels[i] = int(row[0])
        success[i] = row[1] == "1"
        tags[i] = row[2]
        values[i] = [float(v) for v in row[3:]]
    split_col = None if np.all(tags == "-") else tags
    return AfvTable(values, labels, success, layout, class_names, split_col)


def save_table(table: AfvTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(table_to_text(table))


def load_table(path: str) -> AfvTable:
    with open(path, "r", encoding="utf-8") as f:
        return table_from_text(f.read())
