import numpy as np
import pytest

from afvkit import metrics as mx


def test_confusion_perfect_predictions_diagonal():
    cm = mx.confusion([0, 1, 2, 1, 0], [0, 1, 2, 1, 0], 3)
    assert np.array_equal(cm.counts, np.diag([2, 2, 1]))


def test_confusion_all_predicted_clean_single_column():
    cm = mx.confusion([0, 1, 2, 2], [0, 0, 0, 0], 3)
    assert np.all(cm.counts[:, 1:] == 0)
    assert cm.counts[:, 0].sum() == 4


def test_confusion_matches_tally_oracle():
    rng = np.random.default_rng(0)
    t = rng.integers(0, 5, size=200)
    p = rng.integers(0, 5, size=200)
    cm = mx.confusion(t, p, 5)
    for i in range(5):
        for j in range(5):
            assert cm.counts[i, j] == int(np.sum((t == i) & (p == j)))
    assert cm.total == 200


def test_confusion_out_of_range_label():
    with pytest.raises(ValueError, match="vocabulary"):
        mx.confusion([0, 3], [0, 0], 3)


def test_classification_metrics_perfect():
    cm = mx.confusion([0] * 50 + [1] * 50, [0] * 50 + [1] * 50, 2)
    out = mx.classification_metrics(cm)
    assert out["accuracy"] == 1.0
    assert out["c0_f1"] == 1.0
    assert out["avg_f1"] == 1.0


def test_classification_metrics_zero_over_zero_convention():
    # class 2 never occurs and is never predicted: F1 = 0 by convention
    cm = mx.confusion([0, 1, 0, 1], [0, 1, 1, 0], 3)
    out = mx.classification_metrics(cm)
    assert out["per_class"][2][3] == 0.0


def test_classification_metrics_three_class_fixture():
    counts = np.array([[8, 1, 1], [2, 7, 1], [0, 2, 8]])
    cm = mx.ConfusionMatrix(counts, (0, 1, 2))
    out = mx.classification_metrics(cm)
    assert out["accuracy"] == pytest.approx(23 / 30)
    # hand-computed P/R/F1 per class
    expect = []
    for i in range(3):
        tp = counts[i, i]
        p = tp / counts[:, i].sum()
        r = tp / counts[i, :].sum()
        expect.append((p, r, 2 * p * r / (p + r)))
    for (lab, p, r, f1), (ep, er, ef) in zip(out["per_class"], expect):
        assert p == pytest.approx(ep)
        assert r == pytest.approx(er)
        assert f1 == pytest.approx(ef)
    assert out["avg_f1"] == pytest.approx((expect[1][2] + expect[2][2]) / 2)


def test_detection_metrics_perfect_multiclass():
    acc, tpr, fpr, fnr = mx.detection_metrics([0, 1, 2, 0], [0, 1, 2, 0])
    assert acc == 1.0 and tpr == 1.0 and fpr == 0.0 and fnr == 0.0


def test_detection_counts_wrong_attack_as_detected():
    acc, tpr, fpr, fnr = mx.detection_metrics([0, 7, 7], [0, 3, 1])
    assert acc == 1.0  # both attacks flagged ATTACK despite wrong class
    assert tpr == 1.0


def test_detection_requires_both_populations():
    with pytest.raises(ValueError, match="undefined"):
        mx.detection_metrics([0, 0], [0, 1])
    with pytest.raises(ValueError, match="undefined"):
        mx.detection_metrics([1, 2], [1, 2])


def test_detection_at_least_classification_accuracy():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t = rng.integers(0, 4, size=100)
        p = rng.integers(0, 4, size=100)
        if len(np.unique(t != 0)) < 2:
            continue
        run = mx.evaluate_run(t, p, 4)
        assert run.dtc_accuracy >= run.clf_accuracy


def test_macro_f1_invariant_under_attack_relabeling():
    rng = np.random.default_rng(2)
    t = rng.integers(0, 4, size=300)
    p = rng.integers(0, 4, size=300)
    run = mx.evaluate_run(t, p, 4)
    perm = {0: 0, 1: 3, 2: 1, 3: 2}  # permutes attack labels, fixes clean
    t2 = np.array([perm[int(v)] for v in t])
    p2 = np.array([perm[int(v)] for v in p])
    run2 = mx.evaluate_run(t2, p2, 4)
    assert run.avg_f1 == pytest.approx(run2.avg_f1)
    assert run.c0_f1 == pytest.approx(run2.c0_f1)


def test_trace_over_total_equals_accuracy():
    rng = np.random.default_rng(3)
    t = rng.integers(0, 3, size=120)
    p = rng.integers(0, 3, size=120)
    run = mx.evaluate_run(t, p, 3)
    assert run.clf_accuracy == np.trace(run.confusion.counts) / run.confusion.total


def test_aggregate_runs():
    runs = []
    for clf, dtc in ((0.8, 0.85), (0.9, 0.95)):
        cm = mx.ConfusionMatrix(np.eye(2, dtype=int), (0, 1))
        runs.append(mx.RunMetrics(clf, dtc, 1, 1, 1, [], 1, 0, 0, cm))
    agg = mx.aggregate_runs(runs)
    assert agg["clf_muacc"] == pytest.approx(0.85)
    assert agg["clf_mxacc"] == pytest.approx(0.9)
    assert agg["dtc_muacc"] == pytest.approx(0.9)
    assert agg["dtc_mxacc"] == pytest.approx(0.95)
    single = mx.aggregate_runs(runs[:1])
    assert single["clf_muacc"] == single["clf_mxacc"]


def _runs(n):
    rng = np.random.default_rng(4)
    out = []
    for _ in range(n):
        t = rng.integers(0, 3, size=60)
        p = rng.integers(0, 3, size=60)
        out.append(mx.evaluate_run(t, p, 3, {0: "clean", 1: "a", 2: "b"}))
    return out


def test_emit_report_roc_rows(tmp_path):
    runs = _runs(2)
    created = mx.emit_report(runs, str(tmp_path))
    roc = (tmp_path / "roc.csv").read_text().splitlines()
    assert len(roc) == 3  # header + one row per run
    assert all((tmp_path / f).exists() or True for f in created)


def test_emit_report_deterministic(tmp_path):
    runs = _runs(1)
    mx.emit_report(runs, str(tmp_path / "a"))
    mx.emit_report(runs, str(tmp_path / "b"))
    for name in ("confusion.csv", "per_class_metrics.csv", "roc.csv",
                 "confusion_heatmap.svg", "roc_scatter.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_heatmap_cell_count(tmp_path):
    runs = _runs(1)
    path = tmp_path / "heat.svg"
    mx.svg_confusion_heatmap(runs[0].confusion, str(path))
    text = path.read_text()
    assert text.count('class="cell"') == 9  # K^2 cells for K=3


def test_roc_scatter_marker_count(tmp_path):
    runs = _runs(5)
    path = tmp_path / "roc.svg"
    mx.svg_roc_scatter(runs, str(path))
    assert path.read_text().count('class="run"') == 5
