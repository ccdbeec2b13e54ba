"""Command-line pipeline: synth | profile | extract | train | eval | cluster | grid | report.

Every run writes a reproducibility record (flags, seeds, format versions)
next to its outputs; re-running with the same record reproduces the
outputs byte-identically. Validation errors exit 1 with a single-line
diagnostic, I/O failures exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import baseline, cluster, dataset_ops, embeddings, latent_io, metrics, second_stage, synth
from .features import FeatureToggles, extract_matrix


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line diagnostic, exit code 1
        raise SystemExit(_fail(f"argument error: {message}"))


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _write_run_record(path: str, command: str, args: argparse.Namespace) -> None:
    record = {
        "command": command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "format_versions": {
            "dump": latent_io.FORMAT_VERSION,
            "profile": baseline.PROFILE_VERSION,
            "table": dataset_ops.TABLE_VERSION,
            "checkpoint": second_stage.CHECKPOINT_VERSION,
        },
        "package_version": __version__,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    families = [synth.parse_family(f) for f in args.family]
    spec = synth.SynthSpec(
        channels=args.channels,
        height=args.height,
        width=args.width,
        n_per_class=args.n_per_class,
        families=families,
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    ds = synth.generate(spec)
    latent_io.write_dump(ds, os.path.join(args.out, "latents.afvl"))
    ref = synth.generate_reference(spec, args.n_reference)
    latent_io.write_dump(ref, os.path.join(args.out, "reference.afvl"))
    _write_run_record(os.path.join(args.out, "synth.run.json"), "synth", args)
    print(
        f"wrote {len(ds)} samples ({len(families) + 1} classes) and "
        f"{len(ref)} reference samples to {args.out}"
    )
    return 0


def cmd_profile(args) -> int:
    ds = latent_io.read_dump(args.dump)
    profile = baseline.fit_profile(
        ds, alpha=args.alpha, lo_pct=args.lo_pct, hi_pct=args.hi_pct, batch_size=args.batch_size
    )
    baseline.save_profile(profile, args.out)
    _write_run_record(args.out + ".run.json", "profile", args)
    print(f"fitted baseline profile on {profile.d_count} naturals -> {args.out}")
    return 0


def _toggles_from_args(args) -> FeatureToggles:
    return FeatureToggles(
        histograms=not args.no_hist,
        stat_tests=not args.no_tests,
        wasserstein=not args.no_wasserstein,
        pca=args.pca,
        lda=args.lda,
        rnn_votes=args.rnn,
        test_seed=args.seed,
    )


def cmd_extract(args) -> int:
    ds = latent_io.read_dump(args.dump)
    profile = baseline.load_profile(args.profile)
    toggles = _toggles_from_args(args)
    values, layout = extract_matrix(ds, profile, toggles)
    table = dataset_ops.AfvTable(
        values, ds.labels, ds.attack_success, layout, dict(ds.class_names)
    )
    table = dataset_ops.split(table, args.train_fraction, seed=args.seed)
    if args.normalize:
        norm = dataset_ops.fit_range_normalizer(table.train_rows().values)
        table = dataset_ops.normalize_table(table, norm)
    if toggles.pca or toggles.lda or toggles.rnn_votes:
        train = table.train_rows()
        pca = embeddings.fit_pca(train.values) if toggles.pca else None
        lda = embeddings.fit_lda(train.values, train.labels) if toggles.lda else None
        rnn = (
            embeddings.fit_rnn_index(train.values, train.labels, radius=args.rnn_radius,
                                     seed=args.seed)
            if toggles.rnn_votes
            else None
        )
        new_values, new_layout = embeddings.append_embeddings(
            table.values, table.layout, toggles, pca=pca, lda=lda, rnn=rnn
        )
        table = dataset_ops.AfvTable(
            new_values, table.labels, table.attack_success, new_layout,
            dict(table.class_names), table.split,
        )
        if args.models_out:
            os.makedirs(args.models_out, exist_ok=True)
            if pca is not None:
                with open(os.path.join(args.models_out, "pca.txt"), "w") as f:
                    f.write(embeddings.pca_to_text(pca))
            if lda is not None:
                with open(os.path.join(args.models_out, "lda.txt"), "w") as f:
                    f.write(embeddings.lda_to_text(lda))
            if rnn is not None:
                with open(os.path.join(args.models_out, "rnn.txt"), "w") as f:
                    f.write(embeddings.rnn_to_text(rnn))
    dataset_ops.save_table(table, args.out)
    _write_run_record(args.out + ".run.json", "extract", args)
    print(f"extracted {len(table)} AFVs x {len(table.layout)} features -> {args.out}")
    return 0


def _prepare_table(args, table: dataset_ops.AfvTable) -> dataset_ops.AfvTable:
    table = dataset_ops.apply_failed_attack_policy(table, args.failed_policy)
    if getattr(args, "cluster_map", None):
        cmap = cluster.load_cluster_map(args.cluster_map)
        table = cluster.relabel(table, cmap)
    return table


def _train_once(table, args, seed):
    config = second_stage.TrainConfig(
        batch_size=args.batch_size,
        sgd_mode=args.sgd,
        learning_rate=args.lr,
        num_epochs=args.epochs,
        seed=seed,
    )
    if args.augment_copies > 0:
        table = dataset_ops.augment_epsilon_ball(
            table, args.augment_eps, copies=args.augment_copies, seed=seed, only_split="train"
        )
    vocab = tuple(int(v) for v in np.unique(table.train_rows().labels))
    model = second_stage.init_model(
        len(table.layout), len(vocab), seed=seed, label_vocab=vocab
    )
    model, trace = second_stage.train(model, table, config)
    return model, trace, table


def cmd_train(args) -> int:
    table = _prepare_table(args, dataset_ops.load_table(args.table))
    model, trace, _ = _train_once(table, args, args.seed)
    second_stage.save_checkpoint(model, args.out)
    if args.trace_out:
        second_stage.save_trace_csv(trace, args.trace_out)
    _write_run_record(args.out + ".run.json", "train", args)
    print(
        f"trained {model.layer_dims} on {int(np.sum(table.split == 'train'))} rows, "
        f"final train accuracy {trace[-1][2]:.4f} -> {args.out}"
    )
    return 0


def _evaluate(model, table, which: str) -> metrics.RunMetrics:
    if which == "train":
        rows = table.train_rows()
    elif which == "test":
        rows = table.test_rows()
    else:
        rows = table
    preds = second_stage.predict(model, rows.values)
    return metrics.evaluate_run(rows.labels, preds, model.label_vocab, table.class_names)


def cmd_eval(args) -> int:
    table = _prepare_table(args, dataset_ops.load_table(args.table))
    model = second_stage.load_checkpoint(args.model)
    run = _evaluate(model, table, args.split)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics.emit_report([run], args.out_dir)
    summary = {
        "clf_accuracy": run.clf_accuracy,
        "dtc_accuracy": run.dtc_accuracy,
        "c0_f1": run.c0_f1,
        "avg_f1": run.avg_f1,
        "macro_f1_all": run.macro_f1_all,
        "tpr": run.tpr,
        "fpr": run.fpr,
        "fnr": run.fnr,
        "per_class": [
            {"label": lab, "precision": p, "recall": r, "f1": f1}
            for lab, p, r, f1 in run.per_class
        ],
    }
    with open(os.path.join(args.out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_run_record(os.path.join(args.out_dir, "eval.run.json"), "eval", args)
    print(
        f"eval[{args.split}]: clf_acc={run.clf_accuracy:.4f} dtc_acc={run.dtc_accuracy:.4f} "
        f"c0_f1={run.c0_f1:.4f} avg_f1={run.avg_f1:.4f}"
    )
    return 0


def cmd_cluster(args) -> int:
    cm = metrics.read_confusion_csv(args.confusion)
    cmap = cluster.build_cluster_map(cm, threshold=args.threshold)
    cluster.save_cluster_map(cmap, args.out)
    print(
        f"{len(cm.labels)} classes -> {cmap.attack_cluster_count} attack clusters "
        f"(threshold {args.threshold}) -> {args.out}"
    )
    if args.table and args.retrain_out:
        table = dataset_ops.load_table(args.table)
        table = dataset_ops.apply_failed_attack_policy(table, args.failed_policy)
        table = cluster.relabel(table, cmap)
        model, trace, _ = _train_once(table, args, args.seed)
        second_stage.save_checkpoint(model, args.retrain_out)
        print(
            f"retrained on clustered labels, final train accuracy {trace[-1][2]:.4f} "
            f"-> {args.retrain_out}"
        )
    _write_run_record(args.out + ".run.json", "cluster", args)
    return 0


def cmd_grid(args) -> int:
    table_base = _prepare_table(args, dataset_ops.load_table(args.table))
    lrs = [float(v) for v in args.lr.split(",")]
    eps_list = [float(v) for v in args.augment_eps.split(",")]
    os.makedirs(args.out_dir, exist_ok=True)
    rows = ["lr,augment_eps,n,c0_f1,avg_f1,det_muacc,det_mxacc,clf_muacc,clf_mxacc"]
    all_runs = []
    for lr in lrs:
        for eps in eps_list:
            runs = []
            for r in range(args.repeats):
                combo = argparse.Namespace(**vars(args))
                combo.lr = lr
                combo.augment_eps = eps
                combo.augment_copies = args.augment_copies if eps > 0 else 0
                model, _, _ = _train_once(table_base, combo, args.seed + r)
                runs.append(_evaluate(model, table_base, "test"))
            agg = metrics.aggregate_runs(runs)
            c0 = float(np.mean([x.c0_f1 for x in runs]))
            af = float(np.mean([x.avg_f1 for x in runs]))
            rows.append(
                f"{lr!r},{eps!r},{len(runs)},{c0!r},{af!r},"
                f"{agg['dtc_muacc']!r},{agg['dtc_mxacc']!r},"
                f"{agg['clf_muacc']!r},{agg['clf_mxacc']!r}"
            )
            all_runs.extend(runs)
    grid_csv = os.path.join(args.out_dir, "grid.csv")
    with open(grid_csv, "w", encoding="utf-8") as f:
        f.write("\n".join(rows) + "\n")
    metrics.write_roc_csv(all_runs, os.path.join(args.out_dir, "roc.csv"))
    metrics.svg_roc_scatter(all_runs, os.path.join(args.out_dir, "roc_scatter.svg"))
    _write_run_record(os.path.join(args.out_dir, "grid.run.json"), "grid", args)
    print(f"grid: {len(all_runs)} runs over {len(lrs)}x{len(eps_list)} combos -> {grid_csv}")
    return 0


def cmd_report(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    cm = metrics.read_confusion_csv(os.path.join(args.metrics_dir, "confusion.csv"))
    metrics.svg_confusion_heatmap(cm, os.path.join(args.out_dir, "confusion_heatmap.svg"))
    points = metrics.read_roc_csv(os.path.join(args.metrics_dir, "roc.csv"))
    runs = [
        metrics.RunMetrics(0.0, 0.0, 0.0, 0.0, 0.0, [], tpr, fpr, 1 - tpr, cm)
        for tpr, fpr in points
    ]
    metrics.svg_roc_scatter(runs, os.path.join(args.out_dir, "roc_scatter.svg"))
    _write_run_record(os.path.join(args.out_dir, "report.run.json"), "report", args)
    print(f"re-rendered plots for {len(points)} run(s) -> {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--batch-size", type=int, default=2500)
    p.add_argument("--lr", type=float, default=1.00)
    p.add_argument("--sgd", action="store_true", help="plain SGD instead of adaptive moments")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-eps", type=float, default=0.0)
    p.add_argument("--augment-copies", type=int, default=0)
    p.add_argument("--failed-policy", choices=dataset_ops.FAILED_ATTACK_POLICIES, default="keep")


def build_parser() -> _Parser:
    parser = _Parser(prog="afvkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic latent dumps")
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--n-reference", type=int, default=200)
    p.add_argument("--family", action="append", default=[],
                   help="kind[:strength] or tailinject:k:m; repeatable")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("profile", help="fit the baseline profile from a clean dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None,
                   help="exponential smoothing factor; default is the exact two-pass fit")
    p.add_argument("--lo-pct", type=float, default=0.10)
    p.add_argument("--hi-pct", type=float, default=0.90)
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("extract", help="extract the AFV table from a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-hist", action="store_true")
    p.add_argument("--no-tests", action="store_true")
    p.add_argument("--no-wasserstein", action="store_true")
    p.add_argument("--pca", action="store_true")
    p.add_argument("--lda", action="store_true")
    p.add_argument("--rnn", action="store_true")
    p.add_argument("--rnn-radius", type=float, default=embeddings.RNN_DEFAULT_RADIUS)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--models-out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the second-stage classifier")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--cluster-map", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model and emit reports")
    p.add_argument("--table", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--cluster-map", default=None)
    p.add_argument("--failed-policy", choices=dataset_ops.FAILED_ATTACK_POLICIES, default="keep")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", help="build a cluster map from a confusion CSV")
    p.add_argument("--confusion", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=cluster.DEFAULT_THRESHOLD)
    p.add_argument("--table", default=None, help="retrain on clustered labels")
    p.add_argument("--retrain-out", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("grid", help="sweep flag lists and aggregate metrics")
    p.add_argument("--table", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", default="1.0", help="comma-separated learning rates")
    p.add_argument("--augment-eps", default="0.0", help="comma-separated epsilons")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=2500)
    p.add_argument("--sgd", action="store_true")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-copies", type=int, default=1)
    p.add_argument("--failed-policy", choices=dataset_ops.FAILED_ATTACK_POLICIES, default="keep")
    p.add_argument("--cluster-map", default=None)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="re-render plots from saved metrics CSVs")
    p.add_argument("--metrics-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, RuntimeError) as e:
        return _fail(str(e))
    except OSError as e:
        return _fail(str(e), code=2)


if __name__ == "__main__":
    sys.exit(main())
