"""Command-line runner.

Verbs: ``gen`` (synthetic dataset), ``affinity`` (pair construction),
``train`` (config-driven experiment producing all artifacts), ``eval``
(retrieval report for a saved model), ``compare`` (two-arm deltas).
Defaults follow the usual experimental protocol (100 positive / 500
negative neighbors per point, schedule multiplier 1.4, starting penalty
0.3 for the cut solver and 0.01 for the quad solver).
"""

import argparse
import json
import sys

import numpy as np

from .corpus import (SyntheticSpec, build_pseudolabel_affinities,
                     build_supervised_affinities, gen_synthetic, load_dataset,
                     save_affinities_csv, save_dataset_bhd1, save_dataset_csv)
from .experiment import compare_arms, run_experiment
from .hstep import HashModel, hash_apply
from .retrieval import GroundTruth, retrieval_report
from .corpus import exact_knn_indices, prepare_metric_features


def _add_gen(sub):
    p = sub.add_parser("gen", help="generate a labeled synthetic dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "bhd1"), default="csv")
    p.add_argument("--out", required=True)


def _add_affinity(sub):
    p = sub.add_parser("affinity", help="build and save an affinity pair list")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("csv", "bhd1"), default="csv")
    p.add_argument("--label-column", action="store_true",
                   help="treat the final CSV column as integer labels")
    p.add_argument("--mode", choices=("supervised", "pseudolabel"),
                   default="supervised")
    p.add_argument("--kappa-pos", type=int, default=100)
    p.add_argument("--kappa-neg", type=int, default=500)
    p.add_argument("--metric", choices=("euclidean", "cosine"),
                   default="euclidean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


def _add_train(sub):
    p = sub.add_parser("train", help="run a config-driven experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None,
                   help="override the config's output directory")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a saved model on data files")
    p.add_argument("--model", required=True)
    p.add_argument("--base", required=True, help="base (database) dataset file")
    p.add_argument("--queries", required=True, help="query dataset file")
    p.add_argument("--format", choices=("csv", "bhd1"), default="csv")
    p.add_argument("--label-column", action="store_true")
    p.add_argument("--gt-mode", choices=("same-label", "knn"),
                   default="same-label")
    p.add_argument("--knn-k", type=int, default=100)
    p.add_argument("--metric", choices=("euclidean", "cosine"),
                   default="euclidean")
    p.add_argument("--k-grid", type=int, nargs="+",
                   default=[1, 5, 10, 50, 100, 500])
    p.add_argument("--out", required=True, help="report JSON path")


def _add_compare(sub):
    p = sub.add_parser("compare", help="deltas between two experiment arms")
    p.add_argument("baseline", help="baseline arm directory (e.g. out/two_step)")
    p.add_argument("candidate", help="candidate arm directory (e.g. out/mac)")
    p.add_argument("--out", default=None, help="optional summary JSON path")


def _cmd_gen(args):
    spec = SyntheticSpec(classes=args.classes, per_class=args.per_class,
                         dim=args.dim, separation=args.separation,
                         noise=args.noise, seed=args.seed)
    data = gen_synthetic(spec)
    if args.format == "csv":
        save_dataset_csv(args.out, data, with_labels=True)
    else:
        save_dataset_bhd1(args.out, data)
        labels_path = args.out + ".labels.csv"
        with open(labels_path, "w") as fh:
            fh.write("\n".join(str(int(v)) for v in data.labels) + "\n")
        print(f"labels written to {labels_path}")
    print(f"wrote {data.num_points} x {data.dim} dataset to {args.out}")
    return 0


def _cmd_affinity(args):
    data = load_dataset(args.data, args.format, args.label_column)
    if args.mode == "supervised":
        graph = build_supervised_affinities(data, args.kappa_pos,
                                            args.kappa_neg, args.seed)
    else:
        graph = build_pseudolabel_affinities(data, args.kappa_pos,
                                             args.kappa_neg, args.metric,
                                             args.seed)
    save_affinities_csv(args.out, graph)
    print(f"wrote {graph.num_pairs} pairs to {args.out}")
    return 0


def _cmd_train(args):
    artifacts = run_experiment(args.config, output_dir=args.output_dir)
    for name, path in sorted(artifacts.items()):
        print(f"{name}: {path}")
    return 0


def _build_file_truth(base, queries, args):
    if args.gt_mode == "same-label":
        if base.labels is None or queries.labels is None:
            raise ValueError("same-label ground truth needs --label-column")
        return GroundTruth(
            [np.flatnonzero(base.labels == lab) for lab in queries.labels],
            allow_empty=True)
    bf = prepare_metric_features(base.features, args.metric)
    qf = prepare_metric_features(queries.features, args.metric)
    d2 = (np.einsum("ij,ij->i", qf, qf)[:, None]
          + np.einsum("ij,ij->i", bf, bf)[None, :] - 2.0 * (qf @ bf.T))
    order = np.argsort(d2, axis=1, kind="stable")
    return GroundTruth([order[q, :args.knn_k] for q in range(len(qf))])


def _cmd_eval(args):
    model = HashModel.load(args.model)
    base = load_dataset(args.base, args.format, args.label_column)
    queries = load_dataset(args.queries, args.format, args.label_column)
    truth = _build_file_truth(base, queries, args)
    report = retrieval_report(hash_apply(model, base),
                              hash_apply(model, queries),
                              truth, k_grid=args.k_grid)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    print(f"report written to {args.out}")
    return 0


def _cmd_compare(args):
    summary = compare_arms(args.baseline, args.candidate)
    text = json.dumps(summary, indent=1, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="binhash",
        description="learn and evaluate binary hash functions")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_gen(sub)
    _add_affinity(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_compare(sub)
    args = parser.parse_args(argv)
    handlers = {"gen": _cmd_gen, "affinity": _cmd_affinity,
                "train": _cmd_train, "eval": _cmd_eval,
                "compare": _cmd_compare}
    try:
        return handlers[args.verb](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
