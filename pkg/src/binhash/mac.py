"""Joint optimization of codes and hash function under a rising penalty.

The driver alternates fitting the hash function to the current codes with
re-optimizing the codes under mu * ||z_n - h(x_n)||^2, over an exponential
penalty schedule mu_i = mu_1 alpha^(i-1). The run stops when the codes
equal the hash outputs (after that, neither step can change anything) or
at the iteration cap. An optional validation gate rolls back any outer
iteration whose validation precision drops below the last accepted one,
which guarantees the reported model is never worse than the initializer
on the validation set.

Free codes (mu = 0) double as the initializer and as the two-step
baseline: optimize codes ignoring the hash function, then fit the hash
function once.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .corpus import SplitSpec
from .hstep import ClassifierConfig, IdentityMap, fit_hash, hash_apply
from .losses import constraint_violations, total_loss
from .retrieval import hamming_distances, precision_at_k
from .util import sign_pm1, validate_codes
from .zstep import build_blocks, zstep_cut, zstep_quad

logger = logging.getLogger(__name__)

_SOLVERS = ("cut", "quad")
# paper-setting starting penalties per solver, used when mu1 is not given
_DEFAULT_MU1 = {"cut": 0.3, "quad": 0.01}

TRACE_COLUMNS = ("iter", "mu", "loss", "EZ", "penalty", "violations",
                 "val_precision", "accepted", "seconds")


@dataclass(frozen=True)
class MacConfig:
    """Driver settings: schedule, solver, inner repeats, validation gate.

    ``mu1`` may be a positive number, None (the solver's default starting
    penalty), or "auto" (probe the smallest penalty that moves any bit of
    the free codes, then start there).
    """

    mu1: Optional[object] = None
    alpha: float = 1.4
    max_outer: int = 40
    solver: str = "cut"
    zstep_maxit: int = 5
    validation_gate: bool = False
    gate_k: int = 50
    init: str = "pca"
    free_sweeps: int = 50  # the initializer runs until no change or this cap
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    feature_map: Optional[object] = None
    init_seed: int = 0
    record_timings: bool = False

    def __post_init__(self):
        if self.mu1 is not None and self.mu1 != "auto" and not self.mu1 > 0:
            raise ValueError("mu1 must be > 0, None, or 'auto'")
        if not self.alpha > 1:
            raise ValueError("schedule multiplier alpha must be > 1")
        if self.solver not in _SOLVERS:
            raise ValueError(f"solver must be one of {_SOLVERS}")
        if self.max_outer < 1 or self.zstep_maxit < 0:
            raise ValueError("max_outer >= 1 and zstep_maxit >= 0 required")
        if self.init not in ("pca", "random"):
            raise ValueError("init must be 'pca' or 'random'")

    @property
    def mu_start(self):
        if self.mu1 is None:
            return _DEFAULT_MU1[self.solver]
        if self.mu1 == "auto":
            raise ValueError("auto mu1 must be resolved by the driver first")
        return float(self.mu1)


@dataclass
class TraceRow:
    iteration: int
    mu: float
    loss: float
    ez: float
    penalty: float
    violations: int
    val_precision: Optional[float]
    accepted: bool
    seconds: float


@dataclass
class MacTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def final(self):
        accepted = [r for r in self.rows if r.accepted]
        return accepted[-1] if accepted else None


def emit_trace(trace, path, fmt="csv"):
    """Write the per-iteration trace; floats keep full round-trip precision."""
    if fmt != "csv":
        raise ValueError("only the csv trace format is supported")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in trace.rows:
            writer.writerow([
                r.iteration, repr(r.mu), repr(r.loss), repr(r.ez),
                repr(r.penalty), r.violations,
                "" if r.val_precision is None else repr(r.val_precision),
                int(r.accepted), repr(r.seconds),
            ])


def load_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: not a trace file")
    out = MacTrace()
    for row in rows[1:]:
        out.rows.append(TraceRow(
            iteration=int(row[0]), mu=float(row[1]), loss=float(row[2]),
            ez=float(row[3]), penalty=float(row[4]), violations=int(row[5]),
            val_precision=None if row[6] == "" else float(row[6]),
            accepted=bool(int(row[7])), seconds=float(row[8]),
        ))
    return out


def pca_init_codes(X, b, how="pca", seed=0):
    """Deterministic label-free initial codes: signs of the top principal
    projections (rows past the feature rank fall back to +1)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if how == "random":
        return np.where(
            np.random.default_rng(seed).random((b, n)) < 0.5, -1, 1
        ).astype(np.int8)
    Xc = X - X.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    k = min(b, vt.shape[0])
    Z = np.ones((b, n), dtype=np.int8)
    if k:
        Z[:k] = sign_pm1((Xc @ vt[:k].T).T)
    return Z


def _training_view(dataset, split):
    if split is None:
        idx = np.arange(dataset.num_points)
    else:
        idx = np.asarray(split.train, dtype=np.int64)
    X = dataset.features[idx]
    labels = None if dataset.labels is None else dataset.labels[idx]
    return X, labels


def _make_blocks(labels, graph):
    if labels is not None:
        return build_blocks(labels=labels)
    return build_blocks(graph=graph)


def free_codes(spec, graph, b, z_init, solver, sweeps, blocks=None):
    """Minimize the affinity loss over the codes alone (mu = 0)."""
    if solver not in _SOLVERS:
        raise ValueError(f"solver must be one of {_SOLVERS}")
    Z = validate_codes(z_init, b=b, n=graph.num_points)
    if sweeps == 0:
        return Z.copy()
    if solver == "cut":
        if blocks is None:
            blocks = build_blocks(graph=graph)
        return zstep_cut(spec, Z, graph, Z, 0.0, sweeps, blocks)
    for _ in range(sweeps):
        Z_next, _ = zstep_quad(spec, Z, graph, Z, 0.0)
        if np.array_equal(Z_next, Z):
            break
        Z = Z_next
    return Z


def _val_precision(model, dataset, split, val_truth, base_codes, gate_k):
    if split is None or len(split.validation) == 0 or val_truth is None:
        return None
    val_codes = hash_apply(model, dataset.features[split.validation])
    dists = hamming_distances(base_codes, val_codes)
    order = np.argsort(dists, axis=1, kind="stable")
    k = min(gate_k, base_codes.shape[1])
    vals = [precision_at_k(order[q, :k], val_truth[q])
            for q in range(order.shape[0])]
    return float(np.mean(vals))


def _same_label_val_truth(dataset, split):
    base_labels = dataset.labels[split.train]
    truths = []
    for q in split.validation:
        truths.append(np.flatnonzero(base_labels == dataset.labels[q]))
    return truths


def _resolve_val_truth(dataset, split, val_truth, needed):
    if split is None or len(split.validation) == 0:
        return val_truth
    if val_truth is None:
        if dataset.labels is None:
            if needed:
                raise ValueError(
                    "validation precision needs labels or an explicit val_truth")
            return None
        val_truth = _same_label_val_truth(dataset, split)
    return val_truth


def two_step(dataset, spec, graph, b, cfg, split=None, val_truth=None,
             z_init=None):
    """Free codes, then a single hash fit: the baseline and initializer.

    Returns (model, trace) with a one-row trace.
    """
    X, labels = _training_view(dataset, split)
    if graph.num_points != len(X):
        raise ValueError("affinity graph must index the training points")
    t0 = time.perf_counter() if cfg.record_timings else 0.0
    if z_init is None:
        z_init = pca_init_codes(X, b, cfg.init, cfg.init_seed)
    blocks = _make_blocks(labels, graph) if cfg.solver == "cut" else None
    zfree = free_codes(spec, graph, b, z_init, cfg.solver, cfg.free_sweeps,
                       blocks)
    model = fit_hash(X, zfree, cfg.classifier, cfg.feature_map or IdentityMap())
    h_codes = hash_apply(model, X)
    val_truth = _resolve_val_truth(dataset, split, val_truth, True)
    prec = _val_precision(model, dataset, split, val_truth, h_codes, cfg.gate_k)
    viol = constraint_violations(zfree, h_codes)
    row = TraceRow(
        iteration=0, mu=0.0,
        loss=total_loss(spec, h_codes, graph),
        ez=total_loss(spec, zfree, graph),
        penalty=0.0, violations=viol, val_precision=prec, accepted=True,
        seconds=time.perf_counter() - t0 if cfg.record_timings else 0.0,
    )
    return model, MacTrace([row])


def estimate_mu1(spec, graph, z_free, h_codes, solver="cut", blocks=None,
                 probe_grid=None, zstep_maxit=1):
    """Smallest probe penalty whose single code-update step moves any bit
    away from the free codes; grid maximum (with a warning) when none does."""
    if probe_grid is None:
        probe_grid = [1e-3 * 2.0**k for k in range(21)]
    z_free = validate_codes(z_free)
    if solver == "cut" and blocks is None:
        blocks = build_blocks(graph=graph)
    for mu in probe_grid:
        if solver == "cut":
            z_new = zstep_cut(spec, z_free, graph, h_codes, mu, zstep_maxit,
                              blocks)
        else:
            z_new, _ = zstep_quad(spec, z_free, graph, h_codes, mu)
        if not np.array_equal(z_new, z_free):
            return float(mu)
    logger.warning(
        "no probe penalty in [%g, %g] changed the free codes; using the "
        "grid maximum", probe_grid[0], probe_grid[-1])
    return float(probe_grid[-1])


def mac_optimize(dataset, spec, graph, b, cfg, split=None, val_truth=None,
                 z_init=None, lp_log=None):
    """Full alternation over the exponential penalty schedule.

    Initializes from the free codes, then per outer iteration: fit the
    hash function (kept as-is when the codes already equal its outputs,
    where a refit cannot improve the zero misclassification count), check
    the validation gate, run the code step with up to ``zstep_maxit``
    inner cycles, and stop once the codes equal the hash outputs.

    Returns (model, codes, trace) for the last accepted iteration.
    ``lp_log``, when given, collects (iteration, mu, [penalized objective
    after each accepted bit/block update]) for the inner steps.
    """
    X, labels = _training_view(dataset, split)
    if graph.num_points != len(X):
        raise ValueError("affinity graph must index the training points")
    if cfg.validation_gate and (split is None or len(split.validation) == 0):
        raise ValueError("the validation gate needs a nonempty validation set")
    val_truth = _resolve_val_truth(dataset, split, val_truth,
                                   cfg.validation_gate)

    if z_init is None:
        z_init = pca_init_codes(X, b, cfg.init, cfg.init_seed)
    blocks = _make_blocks(labels, graph) if cfg.solver == "cut" else None
    Z = free_codes(spec, graph, b, z_init, cfg.solver, cfg.free_sweeps, blocks)

    if cfg.mu1 == "auto":
        probe_model = fit_hash(X, Z, cfg.classifier,
                               cfg.feature_map or IdentityMap())
        mu_start = estimate_mu1(spec, graph, Z,
                                hash_apply(probe_model, X),
                                solver=cfg.solver, blocks=blocks)
    else:
        mu_start = cfg.mu_start

    trace = MacTrace()
    acc_model = acc_Z = acc_h_codes = None
    acc_prec = None
    prev_model = None
    prev_h_codes = None
    fit_cache = (None, None, None, None)  # codes, model, outputs, precision

    for it in range(1, cfg.max_outer + 1):
        t0 = time.perf_counter() if cfg.record_timings else 0.0
        mu = mu_start * cfg.alpha ** (it - 1)

        # the fit is a deterministic function of the codes: reuse the model
        # when the codes already equal its outputs (a refit cannot improve
        # the zero misclassification count) or simply repeat
        if prev_model is not None and np.array_equal(Z, prev_h_codes):
            model, h_codes = prev_model, prev_h_codes
            prec = _val_precision(model, dataset, split, val_truth, h_codes,
                                  cfg.gate_k)
        elif fit_cache[0] is not None and np.array_equal(Z, fit_cache[0]):
            _, model, h_codes, prec = fit_cache
        else:
            model = fit_hash(X, Z, cfg.classifier,
                             cfg.feature_map or IdentityMap())
            h_codes = hash_apply(model, X)
            prec = _val_precision(model, dataset, split, val_truth, h_codes,
                                  cfg.gate_k)
            fit_cache = (Z.copy(), model, h_codes, prec)

        if cfg.validation_gate and acc_prec is not None and prec < acc_prec:
            viol = constraint_violations(Z, h_codes)
            trace.rows.append(TraceRow(
                iteration=it, mu=mu,
                loss=total_loss(spec, h_codes, graph),
                ez=total_loss(spec, Z, graph),
                penalty=mu * 4.0 * viol, violations=viol,
                val_precision=prec, accepted=False,
                seconds=time.perf_counter() - t0 if cfg.record_timings else 0.0,
            ))
            # ignore this step entirely and move on to the next penalty value
            model, h_codes, Z = acc_model, acc_h_codes, acc_Z.copy()
            prev_model, prev_h_codes = model, h_codes
            continue

        lp_trace = [] if lp_log is not None else None
        if cfg.solver == "cut":
            Z = zstep_cut(spec, Z, graph, h_codes, mu, cfg.zstep_maxit,
                          blocks, lp_trace=lp_trace)
        else:
            for _ in range(cfg.zstep_maxit):
                Z_next, _ = zstep_quad(spec, Z, graph, h_codes, mu,
                                       lp_trace=lp_trace)
                if np.array_equal(Z_next, Z):
                    break
                Z = Z_next
        if lp_log is not None:
            lp_log.append((it, mu, lp_trace))

        viol = constraint_violations(Z, h_codes)
        trace.rows.append(TraceRow(
            iteration=it, mu=mu,
            loss=total_loss(spec, h_codes, graph),
            ez=total_loss(spec, Z, graph),
            penalty=mu * 4.0 * viol, violations=viol,
            val_precision=prec, accepted=True,
            seconds=time.perf_counter() - t0 if cfg.record_timings else 0.0,
        ))
        acc_model, acc_Z, acc_h_codes = model, Z.copy(), h_codes
        if cfg.validation_gate:
            acc_prec = prec
        prev_model, prev_h_codes = model, h_codes
        if viol == 0:
            break

    return acc_model, acc_Z, trace
