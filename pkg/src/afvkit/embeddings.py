"""Optional AFV-space embedding features.

PCA(2) and LDA(2) coordinates plus radius-nearest-neighbor class-vote
probabilities, fitted on training rows only and appended to each AFV.
The symmetric eigenproblems are solved with a cyclic Jacobi rotation
sweep; AFV dimensionality is small enough that dense is fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureLayout, FeatureToggles

RNN_DEFAULT_RADIUS = 3.0
RNN_MAX_REFERENCE = 5000
MODEL_VERSION = 1


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and column eigenvectors of a symmetric matrix."""
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("need a square matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(float(np.abs(a).max()), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= 1e-14 * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def _deterministic_sign(vectors: np.ndarray) -> np.ndarray:
    # Flip each row so its largest-magnitude entry is positive.
    out = vectors.copy()
    for i in range(out.shape[0]):
        k = int(np.argmax(np.abs(out[i])))
        if out[i, k] < 0:
            out[i] = -out[i]
    return out


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (2, d), orthonormal rows
    explained_variance: np.ndarray  # (2,), descending

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.explained_variance = np.asarray(self.explained_variance, dtype=np.float64)
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(2), atol=1e-8):
            raise ValueError("components must be orthonormal")
        if self.explained_variance[0] + 1e-12 < self.explained_variance[1]:
            raise ValueError("explained_variance must be descending")


@dataclass
class LdaModel:
    mean: np.ndarray  # (d,)
    directions: np.ndarray  # (2, d), unit rows
    ridge: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("LDA directions must be non-zero")


@dataclass
class RnnIndex:
    reference: np.ndarray  # (m, d), range-normalized rows
    labels: np.ndarray  # (m,)
    radius: float
    feat_min: np.ndarray  # (d,) range-normalization bounds from training rows
    feat_max: np.ndarray
    classes: tuple[int, ...]

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not np.all(np.isfinite(self.reference)):
            raise ValueError("reference rows must be finite")


def fit_pca(train_rows: np.ndarray) -> PcaModel:
    """Top-2 principal directions of the sample covariance."""
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least 3 training rows")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    if float(np.trace(cov)) <= 1e-24:
        raise ValueError("degenerate input: all rows identical")
    eigvals, eigvecs = jacobi_eigh(cov)
    comps = _deterministic_sign(eigvecs[:, :2].T)
    return PcaModel(mean, comps, np.maximum(eigvals[:2], 0.0))


def transform_pca(model: PcaModel, rows: np.ndarray) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != model.mean.size:
        raise ValueError("PCA dimension mismatch")
    return (x - model.mean) @ model.components.T


def fit_lda(train_rows: np.ndarray, labels: np.ndarray) -> LdaModel:
    """Top-2 discriminant directions of (S_w + ridge*I)^-1 S_b."""
    x = np.asarray(train_rows, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("LDA needs at least 2 classes")
    d = x.shape[1]
    mean = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in classes:
        rows = x[y == c]
        if rows.shape[0] < 2:
            raise ValueError(f"class {c} needs at least 2 samples")
        mu_c = rows.mean(axis=0)
        centered = rows - mu_c
        s_w += centered.T @ centered
        gap = (mu_c - mean)[:, None]
        s_b += rows.shape[0] * (gap @ gap.T)
    ridge = 1e-6 * max(float(np.trace(s_w)), 1e-12) / d
    # reduce the generalized problem to a symmetric one via Cholesky
    chol = np.linalg.cholesky(s_w + ridge * np.eye(d))
    inv_l = np.linalg.inv(chol)
    sym = inv_l @ s_b @ inv_l.T
    sym = 0.5 * (sym + sym.T)
    _, eigvecs = jacobi_eigh(sym)
    directions = (inv_l.T @ eigvecs[:, :2]).T
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = _deterministic_sign(directions / np.maximum(norms, 1e-300))
    return LdaModel(mean, directions, ridge)


def transform_lda(model: LdaModel, rows: np.ndarray) -> np.ndarray:
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[-1] != model.mean.size:
        raise ValueError("LDA dimension mismatch")
    return (x - model.mean) @ model.directions.T


def fit_rnn_index(
    train_rows: np.ndarray,
    labels: np.ndarray,
    radius: float = RNN_DEFAULT_RADIUS,
    max_reference: int = RNN_MAX_REFERENCE,
    seed: int = 0,
) -> RnnIndex:
    """Radius-NN reference set on range-normalized training rows."""
    x = np.asarray(train_rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty training rows")
    feat_min = x.min(axis=0)
    feat_max = x.max(axis=0)
    if x.shape[0] > max_reference:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(x.shape[0], size=max_reference, replace=False))
        x, y = x[keep], y[keep]
    span = np.maximum(feat_max - feat_min, 1e-12)
    normalized = (x - feat_min) / span
    return RnnIndex(normalized, y, radius, feat_min, feat_max, tuple(int(c) for c in np.unique(y)))


def rnn_votes(query_afv: np.ndarray, index: RnnIndex) -> np.ndarray:
    """Class-vote probabilities inside the radius ball around one AFV.

    The query is range-normalized with the index's own bounds; an empty
    ball yields the uniform vector.
    """
    q = np.asarray(query_afv, dtype=np.float64)
    if q.shape != (index.reference.shape[1],):
        raise ValueError("RNN dimension mismatch")
    span = np.maximum(index.feat_max - index.feat_min, 1e-12)
    qn = (q - index.feat_min) / span
    dist2 = np.sum((index.reference - qn) ** 2, axis=1)
    inside = index.labels[dist2 <= index.radius**2]
    k = len(index.classes)
    if inside.size == 0:
        return np.full(k, 1.0 / k)
    return np.array([np.count_nonzero(inside == c) for c in index.classes]) / inside.size


def rnn_votes_matrix(rows: np.ndarray, index: RnnIndex) -> np.ndarray:
    return np.stack([rnn_votes(r, index) for r in np.asarray(rows, dtype=np.float64)])


def append_embeddings(
    values: np.ndarray,
    layout: FeatureLayout,
    toggles: FeatureToggles,
    pca: PcaModel | None = None,
    lda: LdaModel | None = None,
    rnn: RnnIndex | None = None,
) -> tuple[np.ndarray, FeatureLayout]:
    """Append enabled embedding columns to an AFV matrix; layout follows."""
    x = np.asarray(values, dtype=np.float64)
    parts = [x]
    extra: list[tuple[str, str]] = []
    if toggles.pca:
        if pca is None:
            raise ValueError("pca toggle enabled but no fitted model given")
        parts.append(transform_pca(pca, x))
        extra += [("pca", "pca_0"), ("pca", "pca_1")]
    if toggles.lda:
        if lda is None:
            raise ValueError("lda toggle enabled but no fitted model given")
        parts.append(transform_lda(lda, x))
        extra += [("lda", "lda_0"), ("lda", "lda_1")]
    if toggles.rnn_votes:
        if rnn is None:
            raise ValueError("rnn toggle enabled but no fitted index given")
        parts.append(rnn_votes_matrix(x, rnn))
        extra += [("rnn", f"rnn_vote_{c}") for c in rnn.classes]
    if not extra:
        return x, layout
    return np.hstack(parts), layout.extend(extra)


# ---------------------------------------------------------------------------
# text serialization, same key/value style as the baseline profile


def _fmt(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(a, dtype=np.float64).ravel())


def pca_to_text(model: PcaModel) -> str:
    return "\n".join(
        [
            "format afv-pca-model",
            f"version {MODEL_VERSION}",
            f"dim {model.mean.size}",
            f"mean {_fmt(model.mean)}",
            f"component_0 {_fmt(model.components[0])}",
            f"component_1 {_fmt(model.components[1])}",
            f"explained_variance {_fmt(model.explained_variance)}",
        ]
    ) + "\n"


def lda_to_text(model: LdaModel) -> str:
    return "\n".join(
        [
            "format afv-lda-model",
            f"version {MODEL_VERSION}",
            f"dim {model.mean.size}",
            f"ridge {model.ridge!r}",
            f"mean {_fmt(model.mean)}",
            f"direction_0 {_fmt(model.directions[0])}",
            f"direction_1 {_fmt(model.directions[1])}",
        ]
    ) + "\n"


def rnn_to_text(index: RnnIndex) -> str:
    lines = [
        "format afv-rnn-index",
        f"version {MODEL_VERSION}",
        f"dim {index.reference.shape[1]}",
        f"rows {index.reference.shape[0]}",
        f"radius {index.radius!r}",
        f"classes {' '.join(str(c) for c in index.classes)}",
        f"feat_min {_fmt(index.feat_min)}",
        f"feat_max {_fmt(index.feat_max)}",
        f"labels {' '.join(str(int(v)) for v in index.labels)}",
    ]
    for row in index.reference:
        lines.append(f"row {_fmt(row)}")
    return "\n".join(lines) + "\n"


def _parse_kv(text: str, expect_format: str) -> tuple[dict[str, str], list[str]]:
    fields: dict[str, str] = {}
    rows: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "row":
            rows.append(rest)
        else:
            fields[key] = rest
    if fields.get("format") != expect_format:
        raise ValueError(f"not a {expect_format} file")
    if int(fields["version"]) != MODEL_VERSION:
        raise ValueError("unsupported model version")
    return fields, rows


def pca_from_text(text: str) -> PcaModel:
    fields, _ = _parse_kv(text, "afv-pca-model")
    arr = lambda k: np.array(fields[k].split(), dtype=np.float64)
    return PcaModel(
        arr("mean"),
        np.stack([arr("component_0"), arr("component_1")]),
        arr("explained_variance"),
    )


def lda_from_text(text: str) -> LdaModel:
    fields, _ = _parse_kv(text, "afv-lda-model")
    arr = lambda k: np.array(fields[k].split(), dtype=np.float64)
    return LdaModel(
        arr("mean"),
        np.stack([arr("direction_0"), arr("direction_1")]),
        float(fields["ridge"]),
    )


def rnn_from_text(text: str) -> RnnIndex:
    fields, rows = _parse_kv(text, "afv-rnn-index")
    arr = lambda k: np.array(fields[k].split(), dtype=np.float64)
    reference = np.stack([np.array(r.split(), dtype=np.float64) for r in rows])
    return RnnIndex(
        reference,
        np.array(fields["labels"].split(), dtype=np.int64),
        float(fields["radius"]),
        arr("feat_min"),
        arr("feat_max"),
        tuple(int(c) for c in fields["classes"].split()),
    )
