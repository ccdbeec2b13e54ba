"""Evaluation metrics and report emission.

Confusion matrices, per-class precision/recall/F1, macro-F1 over attack
classes, the CLEAN-bit detection metrics, grid aggregation (mean/max
accuracy), and deterministic CSV/SVG report files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true, cols = predicted
    labels: tuple[int, ...]
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError("confusion matrix must be square over the label set")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def name_of(self, label: int) -> str:
        return self.class_names.get(label, str(label))


@dataclass
class RunMetrics:
    clf_accuracy: float
    dtc_accuracy: float
    c0_f1: float
    avg_f1: float  # macro-F1 over attack classes only
    macro_f1_all: float  # macro-F1 including the clean class, for comparison
    per_class: list[tuple[int, float, float, float]]  # (label, P, R, F1)
    tpr: float
    fpr: float
    fnr: float
    confusion: ConfusionMatrix


def confusion(true_labels, pred_labels, labels) -> ConfusionMatrix:
    """Tally a confusion matrix over an explicit label vocabulary.

    ``labels`` is either the number of classes K (vocabulary 0..K-1) or an
    explicit sequence of labels.
    """
    if isinstance(labels, (int, np.integer)):
        vocab = tuple(range(int(labels)))
    else:
        vocab = tuple(int(v) for v in labels)
    index = {lab: i for i, lab in enumerate(vocab)}
    t = np.asarray(true_labels).ravel()
    p = np.asarray(pred_labels).ravel()
    if t.shape != p.shape:
        raise ValueError("true/pred length mismatch")
    counts = np.zeros((len(vocab), len(vocab)), dtype=np.int64)
    for ti, pi in zip(t, p):
        if int(ti) not in index or int(pi) not in index:
            raise ValueError(f"label outside vocabulary: true={ti} pred={pi}")
        counts[index[int(ti)], index[int(pi)]] += 1
    return ConfusionMatrix(counts, vocab)


def _prf(counts: np.ndarray, i: int) -> tuple[float, float, float]:
    tp = float(counts[i, i])
    predicted = float(counts[:, i].sum())
    actual = float(counts[i, :].sum())
    precision = tp / predicted if predicted > 0 else 0.0
    recall = tp / actual if actual > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def classification_metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy plus per-class P/R/F1 and the macro aggregates."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    accuracy = float(np.trace(cm.counts)) / cm.total
    per_class = []
    attack_f1 = []
    all_f1 = []
    c0_f1 = 0.0
    for i, lab in enumerate(cm.labels):
        p, r, f1 = _prf(cm.counts, i)
        per_class.append((lab, p, r, f1))
        all_f1.append(f1)
        if lab == 0:
            c0_f1 = f1
        else:
            attack_f1.append(f1)
    return {
        "accuracy": accuracy,
        "per_class": per_class,
        "c0_f1": c0_f1,
        "avg_f1": float(np.mean(attack_f1)) if attack_f1 else 0.0,
        "macro_f1_all": float(np.mean(all_f1)),
    }


def detection_metrics(true_labels, pred_labels) -> tuple[float, float, float, float]:
    """CLEAN-bit detection: (accuracy, TPR, FPR, FNR).

    A sample is flagged ATTACK when its predicted label is non-zero, so a
    row classified as the wrong attack still counts as detected.
    """
    t = np.asarray(true_labels).ravel() != 0
    p = np.asarray(pred_labels).ravel() != 0
    n_attack = int(t.sum())
    n_clean = int((~t).sum())
    if n_attack == 0 or n_clean == 0:
        raise ValueError("detection rates undefined without both clean and attack rows")
    tpr = float(np.sum(t & p)) / n_attack
    fpr = float(np.sum(~t & p)) / n_clean
    accuracy = float(np.mean(t == p))
    return accuracy, tpr, fpr, 1.0 - tpr


def evaluate_run(true_labels, pred_labels, labels, class_names=None) -> RunMetrics:
    cm = confusion(true_labels, pred_labels, labels)
    if class_names:
        cm.class_names = dict(class_names)
    clf = classification_metrics(cm)
    dtc_accuracy, tpr, fpr, fnr = detection_metrics(true_labels, pred_labels)
    return RunMetrics(
        clf_accuracy=clf["accuracy"],
        dtc_accuracy=dtc_accuracy,
        c0_f1=clf["c0_f1"],
        avg_f1=clf["avg_f1"],
        macro_f1_all=clf["macro_f1_all"],
        per_class=clf["per_class"],
        tpr=tpr,
        fpr=fpr,
        fnr=fnr,
        confusion=cm,
    )


def aggregate_runs(runs: list[RunMetrics]) -> dict:
    """Mean and max accuracy per mode across grid runs (MuAcc/MxAcc)."""
    if not runs:
        raise ValueError("need at least one run")
    clf = [r.clf_accuracy for r in runs]
    dtc = [r.dtc_accuracy for r in runs]
    return {
        "clf_muacc": float(np.mean(clf)),
        "clf_mxacc": float(np.max(clf)),
        "dtc_muacc": float(np.mean(dtc)),
        "dtc_mxacc": float(np.max(dtc)),
        "n_runs": len(runs),
    }


# ---------------------------------------------------------------------------
# report files


def write_confusion_csv(cm: ConfusionMatrix, path: str) -> None:
    names = [cm.name_of(lab) for lab in cm.labels]
    lines = [
        "# labels " + " ".join(str(lab) for lab in cm.labels),
        "true\\pred," + ",".join(names),
    ]
    for i, lab in enumerate(cm.labels):
        lines.append(cm.name_of(lab) + "," + ",".join(str(int(v)) for v in cm.counts[i]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_confusion_csv(path: str) -> ConfusionMatrix:
    """Read back a confusion CSV written by write_confusion_csv."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    labels: list[int] | None = None
    names: list[str] = []
    rows = []
    for ln in lines:
        if ln.startswith("# labels"):
            labels = [int(v) for v in ln.split()[2:]]
        elif ln.startswith("true\\pred"):
            names = ln.split(",")[1:]
        elif not ln.startswith("#"):
            rows.append([int(v) for v in ln.split(",")[1:]])
    if labels is None or not names:
        raise ValueError("not a confusion CSV")
    cm = ConfusionMatrix(np.asarray(rows, dtype=np.int64), tuple(labels))
    cm.class_names = {lab: name for lab, name in zip(labels, names)}
    return cm


def read_roc_csv(path: str) -> list[tuple[float, float]]:
    """(tpr, fpr) pairs from a roc.csv file."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("run,tpr,fpr"):
        raise ValueError("not a ROC CSV")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        out.append((float(parts[1]), float(parts[2])))
    return out


def write_per_class_csv(run: RunMetrics, path: str) -> None:
    lines = ["label,class,precision,recall,f1"]
    for lab, p, r, f1 in run.per_class:
        lines.append(f"{lab},{run.confusion.name_of(lab)},{p!r},{r!r},{f1!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def write_roc_csv(runs: list[RunMetrics], path: str) -> None:
    lines = ["run,tpr,fpr,dtc_accuracy,clf_accuracy"]
    for i, r in enumerate(runs):
        lines.append(f"{i},{r.tpr!r},{r.fpr!r},{r.dtc_accuracy!r},{r.clf_accuracy!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _svg_header(width: int, height: int) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
    )


def svg_confusion_heatmap(cm: ConfusionMatrix, path: str, cell: int = 36) -> None:
    """Self-contained grayscale heatmap, one rect per confusion cell."""
    k = len(cm.labels)
    margin = 80
    size = margin + k * cell + 20
    peak = max(1, int(cm.counts.max()))
    parts = [_svg_header(size, size)]
    for i in range(k):
        for j in range(k):
            shade = int(255 - 215 * (cm.counts[i, j] / peak))
            color = f"rgb({shade},{shade},255)"
            x, y = margin + j * cell, margin + i * cell
            parts.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{color}" stroke="black" stroke-width="0.5"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" font-size="10" '
                f'text-anchor="middle">{int(cm.counts[i, j])}</text>'
            )
    for i, lab in enumerate(cm.labels):
        name = cm.name_of(lab)
        parts.append(
            f'<text x="{margin - 6}" y="{margin + i * cell + cell / 2 + 4}" '
            f'font-size="10" text-anchor="end">{name}</text>'
        )
        parts.append(
            f'<text x="{margin + i * cell + cell / 2}" y="{margin - 8}" font-size="10" '
            f'text-anchor="middle" transform="rotate(-45 {margin + i * cell + cell / 2} '
            f'{margin - 8})">{name}</text>'
        )
    parts.append('<text x="10" y="20" font-size="12">rows: true, columns: predicted</text>')
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts))


def svg_roc_scatter(runs: list[RunMetrics], path: str, size: int = 360) -> None:
    """TPR-vs-FPR scatter, one operating point per run."""
    margin = 50
    span = size - 2 * margin
    parts = [_svg_header(size, size)]

    def sx(fpr):
        return margin + fpr * span

    def sy(tpr):
        return size - margin - tpr * span

    parts.append(
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" '
        f'y2="{size - margin}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{size - margin}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{sx(0)}" y1="{sy(0)}" x2="{sx(1)}" y2="{sy(1)}" '
        f'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for r in runs:
        parts.append(
            f'<circle class="run" cx="{sx(r.fpr):.2f}" cy="{sy(r.tpr):.2f}" r="4" '
            f'fill="navy" fill-opacity="0.6"/>'
        )
    parts.append(f'<text x="{size / 2}" y="{size - 12}" font-size="12" text-anchor="middle">FPR</text>')
    parts.append(f'<text x="14" y="{size / 2}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {size / 2})">TPR</text>')
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts))


def emit_report(runs: list[RunMetrics] | RunMetrics, out_dir: str) -> list[str]:
    """Write the CSV/SVG report set; returns the created file paths."""
    if isinstance(runs, RunMetrics):
        runs = [runs]
    if not runs:
        raise ValueError("need at least one run")
    os.makedirs(out_dir, exist_ok=True)
    created = []

    def target(stem: str, i: int | None = None) -> str:
        name = stem if i is None else f"{stem}_{i:03d}"
        return os.path.join(out_dir, name)

    for i, run in enumerate(runs):
        suffix = None if len(runs) == 1 else i
        p = target("confusion", suffix) + ".csv"
        write_confusion_csv(run.confusion, p)
        created.append(p)
        p = target("per_class_metrics", suffix) + ".csv"
        write_per_class_csv(run, p)
        created.append(p)
        p = target("confusion_heatmap", suffix) + ".svg"
        svg_confusion_heatmap(run.confusion, p)
        created.append(p)
    roc = os.path.join(out_dir, "roc.csv")
    write_roc_csv(runs, roc)
    created.append(roc)
    scatter = os.path.join(out_dir, "roc_scatter.svg")
    svg_roc_scatter(runs, scatter)
    created.append(scatter)
    return created
