"""Experiment configuration: JSON schema, validation, canonical hashing.

Configs are plain JSON trees. Validation is strict: unknown keys anywhere
are hard errors, and every problem is collected and reported in one pass so
a bad config never starts computing.
"""

import copy
import hashlib
import json

_NUMBER = (int, float)

DEFAULTS = {
    "seed": 0,
    "arm": "both",
    "output_dir": "runs/experiment",
    "record_timings": False,
    "dataset": {
        "synthetic": {
            "classes": 10,
            "per_class": 100,
            "dim": 32,
            "separation": 4.0,
            "noise": 1.0,
        },
    },
    "split": {"train": 0.7, "validation": 0.1, "test": 0.2},
    "loss": {"kind": "ksh", "b": 16, "lambda": 1.0},
    "affinity": {
        "mode": "supervised",
        "kappa_pos": 100,
        "kappa_neg": 500,
        "metric": "euclidean",
    },
    "solver": "cut",
    "mac": {
        "mu1": None,
        "alpha": 1.4,
        "max_outer": 40,
        "zstep_maxit": 5,
        "validation_gate": True,
        "gate_k": 50,
        "init": "pca",
    },
    "classifier": {
        "C": 10.0,
        "loss_mode": "hinge",
        "max_epochs": 200,
        "tol": 1e-4,
    },
    "feature_map": {"kind": "identity", "centers": 500},
    "metrics": {
        "k_grid": [1, 5, 10, 50, 100, 500],
        "gt_mode": "same-label",
        "knn_k": 100,
    },
}

_DATASET_FILE_KEYS = {"path", "format", "label_column"}
_DATASET_SYNTH_KEYS = set(DEFAULTS["dataset"]["synthetic"])


def _walk_unknown(cfg, template, path, errors):
    for key, value in cfg.items():
        if key not in template:
            errors.append(f"unknown key {'.'.join(path + [key])!r}")
            continue
        if isinstance(template[key], dict) and isinstance(value, dict):
            _walk_unknown(value, template[key], path + [key], errors)


def _merge(defaults, overrides):
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key in out and isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(raw):
    """Return the list of problems with a raw config dict (empty if valid)."""
    errors = []
    if not isinstance(raw, dict):
        return ["config root must be a JSON object"]

    # the dataset section takes either a synthetic block or a file block
    template = copy.deepcopy(DEFAULTS)
    template["dataset"] = {
        "synthetic": DEFAULTS["dataset"]["synthetic"],
        "path": "", "format": "", "label_column": False,
    }
    _walk_unknown(raw, template, [], errors)

    ds = raw.get("dataset", DEFAULTS["dataset"])
    if isinstance(ds, dict):
        if "synthetic" in ds and "path" in ds:
            errors.append("dataset: give either 'synthetic' or 'path', not both")
        if "path" not in ds and "synthetic" not in ds:
            errors.append("dataset: needs a 'synthetic' block or a 'path'")
        if "format" in ds and ds["format"] not in ("csv", "bhd1"):
            errors.append("dataset.format must be 'csv' or 'bhd1'")

    merged = _merge(DEFAULTS, raw if isinstance(raw, dict) else {})

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    check(isinstance(merged["seed"], int), "seed must be an integer")
    check(merged["arm"] in ("two_step", "mac", "both"),
          "arm must be 'two_step', 'mac', or 'both'")
    check(merged["solver"] in ("cut", "quad"), "solver must be 'cut' or 'quad'")
    loss = merged["loss"]
    check(loss["kind"] in ("ksh", "bre", "esplh", "ee"),
          "loss.kind must be one of ksh, bre, esplh, ee")
    check(isinstance(loss["b"], int) and 1 <= loss["b"] <= 64,
          "loss.b must be an integer in [1, 64]")
    check(isinstance(loss["lambda"], _NUMBER) and loss["lambda"] > 0,
          "loss.lambda must be > 0")
    aff = merged["affinity"]
    check(aff["mode"] in ("supervised", "pseudolabel"),
          "affinity.mode must be 'supervised' or 'pseudolabel'")
    check(isinstance(aff["kappa_pos"], int) and aff["kappa_pos"] >= 0,
          "affinity.kappa_pos must be a nonnegative integer")
    check(isinstance(aff["kappa_neg"], int) and aff["kappa_neg"] >= 0,
          "affinity.kappa_neg must be a nonnegative integer")
    check(aff["metric"] in ("euclidean", "cosine"),
          "affinity.metric must be 'euclidean' or 'cosine'")
    mac = merged["mac"]
    check(mac["mu1"] is None or mac["mu1"] == "auto"
          or (isinstance(mac["mu1"], _NUMBER) and mac["mu1"] > 0),
          "mac.mu1 must be null, 'auto', or a positive number")
    check(isinstance(mac["alpha"], _NUMBER) and mac["alpha"] > 1,
          "mac.alpha must be > 1")
    check(isinstance(mac["max_outer"], int) and mac["max_outer"] >= 1,
          "mac.max_outer must be >= 1")
    check(isinstance(mac["zstep_maxit"], int) and mac["zstep_maxit"] >= 0,
          "mac.zstep_maxit must be >= 0")
    check(mac["init"] in ("pca", "random"), "mac.init must be 'pca' or 'random'")
    clf = merged["classifier"]
    check(isinstance(clf["C"], _NUMBER) and clf["C"] > 0,
          "classifier.C must be > 0")
    check(clf["loss_mode"] in ("hinge", "squared_hinge"),
          "classifier.loss_mode must be 'hinge' or 'squared_hinge'")
    fm = merged["feature_map"]
    check(fm["kind"] in ("identity", "rbf"),
          "feature_map.kind must be 'identity' or 'rbf'")
    check(isinstance(fm["centers"], int) and fm["centers"] >= 1,
          "feature_map.centers must be >= 1")
    met = merged["metrics"]
    check(met["gt_mode"] in ("same-label", "knn"),
          "metrics.gt_mode must be 'same-label' or 'knn'")
    check(isinstance(met["k_grid"], list) and met["k_grid"]
          and all(isinstance(k, int) and k >= 1 for k in met["k_grid"]),
          "metrics.k_grid must be a nonempty list of positive integers")
    split = merged["split"]
    for role in ("train", "validation", "test"):
        check(isinstance(split[role], _NUMBER) and split[role] >= 0,
              f"split.{role} must be a nonnegative number")
    return errors


def load_config(path):
    """Parse, validate, and default-fill a config file."""
    with open(path) as fh:
        raw = json.load(fh)
    return resolve_config(raw)


def resolve_config(raw):
    errors = validate_config(raw)
    if errors:
        raise ValueError(
            "invalid config:\n" + "\n".join(f"  - {e}" for e in errors))
    merged = _merge(DEFAULTS, raw)
    if "path" in raw.get("dataset", {}):
        merged["dataset"] = {
            "path": raw["dataset"]["path"],
            "format": raw["dataset"].get("format", "csv"),
            "label_column": raw["dataset"].get("label_column", True),
        }
    return merged


def canonical_json(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
