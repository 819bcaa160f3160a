"""Config-driven experiment pipeline and the two-arm comparison.

One experiment: ingest or synthesize data, split, build affinities, run the
requested arm(s) (two-step baseline and/or the joint penalty optimization,
sharing the same initial codes), evaluate retrieval on the test queries
against the train base, and write artifacts: per-arm trace CSV, retrieval
report (JSON + CSV), serialized model, and an experiment manifest. All
randomness is fanned out from the master seed by named purpose, so a rerun
with the same config is byte-identical.
"""

import csv
import json
import os
from dataclasses import replace

import numpy as np

from . import __version__, _kernels
from .config import canonical_json, config_hash, load_config, resolve_config
from .corpus import (AffinityGraph, Dataset, SyntheticSpec, adapt_affinities,
                     build_pseudolabel_affinities, build_supervised_affinities,
                     gen_synthetic, load_dataset, make_split)
from .hstep import ClassifierConfig, HashModel, IdentityMap, hash_apply, make_rbf_map
from .losses import LossSpec
from .mac import MacConfig, emit_trace, mac_optimize, two_step
from .retrieval import build_ground_truth, retrieval_report
from .util import subseed

ARM_NAMES = ("two_step", "mac")


def _build_dataset(cfg):
    ds = cfg["dataset"]
    if "path" in ds:
        return load_dataset(ds["path"], ds["format"], ds.get("label_column", True))
    synth = ds["synthetic"]
    return gen_synthetic(SyntheticSpec(
        classes=synth["classes"], per_class=synth["per_class"],
        dim=synth["dim"], separation=synth["separation"],
        noise=synth["noise"], seed=subseed(cfg["seed"], "synthetic")))


def _resolve_split(cfg, n):
    sizes = {}
    for role in ("train", "validation", "test"):
        v = cfg["split"][role]
        sizes[role] = int(round(v * n)) if isinstance(v, float) and v <= 1.0 \
            else int(v)
    total = sum(sizes.values())
    if total > n:
        raise ValueError(f"split sizes {sizes} exceed the {n} available points")
    return make_split(n, sizes["train"], sizes["validation"], sizes["test"],
                      subseed(cfg["seed"], "split"))


def _build_affinities(cfg, train_data):
    aff = cfg["affinity"]
    seed = subseed(cfg["seed"], "affinity")
    if aff["mode"] == "supervised":
        graph = build_supervised_affinities(
            train_data, aff["kappa_pos"], aff["kappa_neg"], seed)
    else:
        graph = build_pseudolabel_affinities(
            train_data, aff["kappa_pos"], aff["kappa_neg"], aff["metric"], seed)
    return graph, adapt_affinities(graph, cfg["loss"]["kind"], train_data)


def _mac_config(cfg):
    mu1 = cfg["mac"]["mu1"]
    return MacConfig(
        mu1=mu1 if mu1 in (None, "auto") else float(mu1),
        alpha=cfg["mac"]["alpha"],
        max_outer=cfg["mac"]["max_outer"],
        solver=cfg["solver"],
        zstep_maxit=cfg["mac"]["zstep_maxit"],
        validation_gate=cfg["mac"]["validation_gate"],
        gate_k=cfg["mac"]["gate_k"],
        init=cfg["mac"]["init"],
        classifier=ClassifierConfig(
            C=cfg["classifier"]["C"],
            loss_mode=cfg["classifier"]["loss_mode"],
            max_epochs=cfg["classifier"]["max_epochs"],
            tol=cfg["classifier"]["tol"],
            seed=subseed(cfg["seed"], "classifier"),
        ),
        init_seed=subseed(cfg["seed"], "init_codes"),
        record_timings=cfg["record_timings"],
    )


def _write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "parameter", "value"])
        for k, v in sorted(report["precision_at_k"].items()):
            writer.writerow(["precision_at_k", k, repr(v)])
        for r, v in enumerate(report["radius_precision"]):
            writer.writerow(["radius_precision", r, repr(v)])
        for r, v in enumerate(report["radius_recall"]):
            writer.writerow(["radius_recall", r, repr(v)])
        writer.writerow(["radius_excluded_queries", "",
                         report["radius_excluded_queries"]])
        writer.writerow(["effective_bits_base", "",
                         repr(report["effective_bits_base"])])
        writer.writerow(["effective_bits_query", "",
                         repr(report["effective_bits_query"])])


def _evaluate_model(model, dataset, split, cfg, spec):
    base_codes = hash_apply(model, dataset.features[split.train])
    query_codes = hash_apply(model, dataset.features[split.test])
    truth = build_ground_truth(
        dataset, split, mode=cfg["metrics"]["gt_mode"],
        metric=cfg["affinity"]["metric"],
        knn_k=cfg["metrics"]["knn_k"])
    return retrieval_report(base_codes, query_codes, truth,
                            k_grid=cfg["metrics"]["k_grid"])


def run_experiment(cfg_or_path, output_dir=None):
    """Run the configured pipeline; returns a dict of artifact paths.

    Identical config + seed reruns produce byte-identical artifacts (wall
    times are recorded only when ``record_timings`` is on, which breaks
    that property by nature).
    """
    if isinstance(cfg_or_path, (str, os.PathLike)):
        cfg = load_config(cfg_or_path)
    else:
        cfg = resolve_config(cfg_or_path)
    outdir = output_dir or cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)

    dataset = _build_dataset(cfg)
    split = _resolve_split(cfg, dataset.num_points)
    train_data = dataset.subset(split.train)
    raw_graph, graph = _build_affinities(cfg, train_data)
    spec = LossSpec(cfg["loss"]["kind"], cfg["loss"]["b"], cfg["loss"]["lambda"])

    mac_cfg = _mac_config(cfg)
    if cfg["feature_map"]["kind"] == "rbf":
        fmap = make_rbf_map(train_data, cfg["feature_map"]["centers"],
                            subseed(cfg["seed"], "rbf_centers"))
        mac_cfg = replace(mac_cfg, feature_map=fmap)

    from .mac import pca_init_codes  # local import to avoid cycle at module load

    z_init = pca_init_codes(train_data.features, spec.b, mac_cfg.init,
                            mac_cfg.init_seed)

    arms = ARM_NAMES if cfg["arm"] == "both" else (cfg["arm"],)
    artifacts = {"manifest": os.path.join(outdir, "manifest.json")}
    summaries = {}
    for arm in arms:
        arm_dir = os.path.join(outdir, arm)
        os.makedirs(arm_dir, exist_ok=True)
        if arm == "two_step":
            model, trace = two_step(dataset, spec, graph, spec.b, mac_cfg,
                                    split, z_init=z_init)
        else:
            model, _, trace = mac_optimize(dataset, spec, graph, spec.b,
                                           mac_cfg, split, z_init=z_init)
        report = _evaluate_model(model, dataset, split, cfg, spec)
        trace_path = os.path.join(arm_dir, "trace.csv")
        emit_trace(trace, trace_path)
        model_path = os.path.join(arm_dir, "model.json")
        model.save(model_path)
        report_path = os.path.join(arm_dir, "report.json")
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        _write_report_csv(os.path.join(arm_dir, "report.csv"), report)
        artifacts[arm] = arm_dir
        final = trace.final()
        summaries[arm] = {
            "final_loss": final.loss,
            "final_violations": final.violations,
            "val_precision": final.val_precision,
            "iterations": len(trace),
        }

    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "master_seed": cfg["seed"],
        "subseeds": {name: subseed(cfg["seed"], name) for name in
                     ("synthetic", "split", "affinity", "classifier",
                      "rbf_centers", "init_codes")},
        "arms": list(arms),
        "backend": _kernels.BACKEND,
        "package_version": __version__,
        "num_points": dataset.num_points,
        "num_pairs": int(raw_graph.num_pairs),
        "summaries": summaries,
    }
    with open(artifacts["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return artifacts


def _load_arm(arm_dir):
    from .mac import load_trace

    trace_path = os.path.join(arm_dir, "trace.csv")
    report_path = os.path.join(arm_dir, "report.json")
    manifest_path = os.path.join(os.path.dirname(os.path.abspath(arm_dir)),
                                 "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing experiment manifest {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(report_path) as fh:
        report = json.load(fh)
    return load_trace(trace_path), report, manifest


_SHARED_SECTIONS = ("seed", "dataset", "split", "affinity", "loss",
                    "classifier", "feature_map")


def compare_arms(baseline_dir, candidate_dir):
    """Deltas (candidate minus baseline) of loss and retrieval metrics.

    Both arms must come from experiments over identical data, affinities,
    and initializer: the comparison refuses mismatched manifests.
    """
    base_trace, base_report, base_manifest = _load_arm(baseline_dir)
    cand_trace, cand_report, cand_manifest = _load_arm(candidate_dir)
    for section in _SHARED_SECTIONS:
        if base_manifest["config"][section] != cand_manifest["config"][section]:
            raise ValueError(
                f"mismatched experiment manifests: section {section!r} differs")
    base_final = base_trace.final()
    cand_final = cand_trace.final()
    delta_pk = {}
    for k, v in cand_report["precision_at_k"].items():
        if k in base_report["precision_at_k"]:
            delta_pk[k] = v - base_report["precision_at_k"][k]
    n_r = min(len(base_report["radius_precision"]),
              len(cand_report["radius_precision"]))
    out = {
        "delta_final_loss": cand_final.loss - base_final.loss,
        "delta_precision_at_k": delta_pk,
        "delta_radius_precision": [
            cand_report["radius_precision"][r] - base_report["radius_precision"][r]
            for r in range(n_r)],
        "delta_radius_recall": [
            cand_report["radius_recall"][r] - base_report["radius_recall"][r]
            for r in range(n_r)],
        "loss_le_baseline": cand_final.loss <= base_final.loss,
    }
    if (base_final.val_precision is not None
            and cand_final.val_precision is not None):
        out["delta_val_precision"] = (cand_final.val_precision
                                      - base_final.val_precision)
        out["val_precision_ge_baseline"] = (
            cand_final.val_precision >= base_final.val_precision)
    return out
