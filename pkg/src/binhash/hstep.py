"""Fitting the hash function to a code matrix.

Each bit row is an independent binary classification problem: features in,
+-1 targets out, with a high misclassification penalty pushing the
surrogate toward the 0/1 loss the alternation actually needs. The bias is
an augmented constant feature. Two deterministic trainers:

- squared_hinge (default): primal Newton-CG on the piecewise-quadratic
  objective; converges to the minimizer in a handful of steps and is the
  reference for everything downstream (near-exact minimizers keep the
  refits stable as the code targets drift between iterations).
- hinge: dual coordinate descent with seeded per-epoch visiting orders.
  Exact hinge geometry, but coordinate descent creeps on strongly coupled
  samples, so budget epochs generously.

A shared RBF feature map in front of the linear classifiers gives the
kernel variant.
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .util import sign_pm1, validate_codes

_LOSS_MODES = ("hinge", "squared_hinge")


@dataclass(frozen=True)
class ClassifierConfig:
    """Per-bit trainer settings."""

    C: float = 10.0
    loss_mode: str = "squared_hinge"
    max_epochs: int = 200
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("regularization strength C must be > 0")
        if self.loss_mode not in _LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {_LOSS_MODES}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


class IdentityMap:
    """Pass-through feature map."""

    kind = "identity"

    def transform(self, X):
        return np.asarray(X, dtype=np.float64)

    def to_dict(self):
        return {"kind": self.kind}


class RBFMap:
    """Gaussian radial basis features phi_j(x) = exp(-||x - c_j||^2 / (2 s^2))."""

    kind = "rbf"

    def __init__(self, centers, sigma):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.sigma = float(sigma)
        if not self.sigma > 0:
            raise ValueError("RBF bandwidth must be > 0")

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        xx = np.einsum("ij,ij->i", X, X)[:, None]
        cc = np.einsum("ij,ij->i", self.centers, self.centers)[None, :]
        d2 = xx + cc - 2.0 * (X @ self.centers.T)
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-d2 / (2.0 * self.sigma**2))

    def to_dict(self):
        return {"kind": self.kind, "sigma": repr(self.sigma),
                "centers": [[repr(v) for v in row] for row in self.centers]}


def feature_map_from_dict(d):
    if d["kind"] == "identity":
        return IdentityMap()
    if d["kind"] == "rbf":
        centers = np.array([[float(v) for v in row] for row in d["centers"]])
        return RBFMap(centers, float(d["sigma"]))
    raise ValueError(f"unknown feature map kind {d['kind']!r}")


def make_rbf_map(dataset, num_centers, seed):
    """RBF map with centers sampled from the training points (seeded) and
    bandwidth set to the mean pairwise distance of the first 300 points."""
    n = dataset.num_points
    if num_centers > n:
        raise ValueError(f"cannot sample {num_centers} centers from {n} points")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=num_centers, replace=False)
    head = dataset.features[: min(300, n)]
    if len(head) < 2:
        raise ValueError("bandwidth estimation needs at least 2 points")
    diff2 = (
        np.einsum("ij,ij->i", head, head)[:, None]
        + np.einsum("ij,ij->i", head, head)[None, :]
        - 2.0 * (head @ head.T)
    )
    np.maximum(diff2, 0.0, out=diff2)
    iu = np.triu_indices(len(head), k=1)
    sigma = float(np.sqrt(diff2[iu]).mean())
    if sigma == 0.0:
        raise ValueError("all bandwidth-estimation points are identical")
    return RBFMap(dataset.features[idx], sigma)


@dataclass
class HashModel:
    """Per-bit linear classifiers behind a shared feature map.

    Prediction for bit i is sign(w_i . phi(x) + c_i) with sign(0) := +1.
    """

    feature_map: object
    weights: np.ndarray  # (b, map dim)
    biases: np.ndarray   # (b,)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        self.biases = np.asarray(self.biases, dtype=np.float64).ravel()
        if self.weights.shape[0] != len(self.biases):
            raise ValueError("one bias per bit row required")
        if not np.isfinite(self.weights).all() or not np.isfinite(self.biases).all():
            raise ValueError("model parameters must be finite")

    @property
    def num_bits(self):
        return self.weights.shape[0]

    def save(self, path):
        record = {
            "format_version": 1,
            "feature_map": self.feature_map.to_dict(),
            "weights": [[repr(v) for v in row] for row in self.weights],
            "biases": [repr(v) for v in self.biases],
        }
        with open(path, "w") as fh:
            json.dump(record, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            record = json.load(fh)
        if record.get("format_version") != 1:
            raise ValueError("unsupported model format version")
        weights = np.array([[float(v) for v in row] for row in record["weights"]])
        biases = np.array([float(v) for v in record["biases"]])
        return cls(feature_map_from_dict(record["feature_map"]), weights, biases)


_NEWTON_GRAD_TOL = 1e-6
_CG_MAX = 200


def _newton_squared_hinge(Xa, targets, C, max_iter):
    """Primal Newton-CG minimizer of (1/(2C))||w||^2 + sum max(0, 1-m)^2.

    The objective is piecewise quadratic with a well-defined generalized
    Hessian on the active set; conjugate-gradient Newton steps with an
    Armijo backtracking line search reach the minimizer in a few
    iterations. Fully deterministic (no sampling anywhere).
    """
    n, d = Xa.shape
    lam = 1.0 / C
    tX = Xa * targets[:, None]
    w = np.zeros(d)

    def value(wv):
        m = 1.0 - tX @ wv
        act = m > 0.0
        return 0.5 * lam * float(wv @ wv) + float(m[act] @ m[act])

    f = value(w)
    for _ in range(max_iter):
        m = 1.0 - tX @ w
        act = m > 0.0
        grad = lam * w - 2.0 * (tX[act].T @ m[act])
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= _NEWTON_GRAD_TOL * max(1.0, float(np.linalg.norm(w))):
            break
        x_act = Xa[act]
        direction = np.zeros(d)
        r = -grad.copy()
        p = r.copy()
        rr = float(r @ r)
        for _ in range(_CG_MAX):
            hp = lam * p + 2.0 * (x_act.T @ (x_act @ p))
            alpha = rr / float(p @ hp)
            direction += alpha * p
            r -= alpha * hp
            rr_new = float(r @ r)
            if rr_new**0.5 < 1e-8 * gnorm:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        slope = float(grad @ direction)
        step = 1.0
        f_new = value(w + direction)
        while f_new > f + 1e-4 * step * slope and step > 1e-12:
            step *= 0.5
            f_new = value(w + step * direction)
        w = w + step * direction
        f = f_new
    return w


def train_bit_classifier(features, targets, cfg):
    """Train one bit's linear classifier on +-1 targets.

    Minimizes (1/(2C))||w||^2 + sum loss(1 - t (w.x + c)) with the
    configured misclassification surrogate; deterministic given the
    config. Returns (weights, bias).
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a nonempty 2-D feature matrix")
    if len(targets) != len(X):
        raise ValueError("one target per sample required")
    if not np.isin(targets, (-1.0, 1.0)).all():
        raise ValueError("targets must be -1 or +1")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    Xa = np.hstack([X, np.ones((len(X), 1))])
    if cfg.loss_mode == "squared_hinge":
        w_aug = _newton_squared_hinge(Xa, targets, cfg.C, cfg.max_epochs)
    else:
        rng = np.random.default_rng(cfg.seed)
        n_orders = min(cfg.max_epochs, 64)
        orders = np.stack([rng.permutation(len(X)) for _ in range(n_orders)])
        w_aug, _ = _kernels.dcd_linear(
            Xa, targets, cfg.C, cfg.max_epochs, cfg.tol,
            np.ascontiguousarray(orders, dtype=np.int64), False,
        )
    return w_aug[:-1], float(w_aug[-1])


def hinge_objective(weights, bias, features, targets, cfg):
    """The trainer's primal objective, for refit comparisons."""
    margins = 1.0 - targets * (features @ weights + bias)
    np.maximum(margins, 0.0, out=margins)
    hinge = float(margins @ margins) if cfg.loss_mode == "squared_hinge" \
        else float(margins.sum())
    reg = 0.5 / cfg.C * (float(weights @ weights) + bias * bias)
    return reg + hinge


def fit_hash(dataset_or_features, Z, cfg, feature_map=None):
    """Fit the b per-bit classifiers to a code matrix.

    Bit i's classifier depends only on (features, row i, cfg), so
    duplicated rows give identical classifiers and permuting rows permutes
    the classifiers.
    """
    X = getattr(dataset_or_features, "features", dataset_or_features)
    feature_map = feature_map or IdentityMap()
    phi = feature_map.transform(X)
    Z = validate_codes(Z, n=len(phi))
    b = Z.shape[0]
    weights = np.empty((b, phi.shape[1]))
    biases = np.empty(b)
    for i in range(b):
        weights[i], biases[i] = train_bit_classifier(phi, Z[i], cfg)
    return HashModel(feature_map, weights, biases)


def hash_apply(model, dataset_or_features):
    """Codes for a point set: column n is sign(W phi(x_n) + c)."""
    X = getattr(dataset_or_features, "features", dataset_or_features)
    phi = model.feature_map.transform(X)
    if phi.shape[1] != model.weights.shape[1]:
        raise ValueError(
            f"feature dimension {phi.shape[1]} does not match model "
            f"dimension {model.weights.shape[1]}"
        )
    activations = model.weights @ phi.T + model.biases[:, None]
    return sign_pm1(activations)
