"""Hamming-space search and retrieval metrics.

Distances are computed on bit-packed codes (XOR + population count).
Metrics follow the usual retrieval conventions: precision over the k
nearest codes, precision/recall over all codes within Hamming radius r
(a query retrieving nothing at radius r contributes zero precision), and
code utilization measured as the entropy of the empirical code
distribution.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .corpus import prepare_metric_features
from .util import validate_codes


def pack_codes(Z):
    """Bit-pack a (b, N) +-1 matrix into (N, ceil(b/64)) uint64 words."""
    Z = validate_codes(Z)
    b, n = Z.shape
    words = (b + 63) // 64
    bits = (Z > 0).T.astype(np.uint64)  # (N, b)
    packed = np.zeros((n, words), dtype=np.uint64)
    for i in range(b):
        packed[:, i // 64] |= bits[:, i] << np.uint64(i % 64)
    return packed


def hamming_distances(base_Z, query_Z):
    """(n_queries, n_base) Hamming distance matrix between code matrices."""
    base_Z = validate_codes(base_Z)
    query_Z = validate_codes(query_Z, b=base_Z.shape[0], name="query codes")
    return _kernels.hamming_cross(pack_codes(query_Z), pack_codes(base_Z))


def hamming_knn(base_Z, query_z, k):
    """Indices of the k Hamming-nearest base codes, ties to the lower index."""
    base_Z = validate_codes(base_Z)
    n_base = base_Z.shape[1]
    if k > n_base:
        raise ValueError(f"k = {k} exceeds the base size {n_base}")
    query_z = np.asarray(query_z).reshape(base_Z.shape[0], 1)
    dists = hamming_distances(base_Z, query_z)[0]
    order = np.argsort(dists, kind="stable")
    return order[:k]


def precision_at_k(retrieved, truth):
    """|retrieved intersect truth| / |retrieved|."""
    retrieved = np.asarray(retrieved)
    if len(retrieved) == 0:
        raise ValueError("retrieved list must be nonempty")
    truth = np.asarray(truth)
    return float(np.isin(retrieved, truth).sum()) / len(retrieved)


class RadiusPR(NamedTuple):
    precision: float
    recall: float
    excluded_queries: int


def pr_at_radius(base_Z, query_Z, truths, r):
    """Mean precision/recall of the radius-r retrieved sets.

    Queries with nothing within radius r contribute zero precision.
    Queries with an empty truth set are excluded from the recall mean and
    tallied in ``excluded_queries``.
    """
    base_Z = validate_codes(base_Z)
    b = base_Z.shape[0]
    if not 0 <= r <= b:
        raise ValueError(f"radius {r} outside 0..{b}")
    dists = hamming_distances(base_Z, query_Z)
    precisions = []
    recalls = []
    excluded = 0
    for q in range(dists.shape[0]):
        hit = np.flatnonzero(dists[q] <= r)
        truth = np.asarray(truths[q])
        if len(hit) == 0:
            precisions.append(0.0)
        else:
            precisions.append(float(np.isin(hit, truth).sum()) / len(hit))
        if len(truth) == 0:
            excluded += 1
        else:
            recalls.append(float(np.isin(hit, truth).sum()) / len(truth))
    recall = float(np.mean(recalls)) if recalls else 0.0
    return RadiusPR(float(np.mean(precisions)), recall, excluded)


def pr_curve(base_Z, query_Z, truths):
    """Radius sweep r = 0..b as a list of RadiusPR."""
    b = np.asarray(base_Z).shape[0]
    return [pr_at_radius(base_Z, query_Z, truths, r) for r in range(b + 1)]


def effective_bits(Z):
    """Shannon entropy (bits) of the empirical code distribution."""
    Z = validate_codes(Z)
    n = Z.shape[1]
    _, counts = np.unique(pack_codes(Z), axis=0, return_counts=True)
    p = counts / n
    return float(-(p * np.log2(p)).sum())


@dataclass
class GroundTruth:
    """Per-query sets of true-neighbor base indices."""

    truths: list
    allow_empty: bool = False

    def __post_init__(self):
        self.truths = [np.asarray(t, dtype=np.int64) for t in self.truths]
        if not self.allow_empty and any(len(t) == 0 for t in self.truths):
            raise ValueError("empty truth set (pass allow_empty=True to permit)")

    def __len__(self):
        return len(self.truths)

    def __getitem__(self, q):
        return self.truths[q]


def build_ground_truth(dataset, split, mode="same-label", metric="euclidean",
                       knn_k=None):
    """True neighbors of each test query among the train (base) points.

    ``same-label`` takes every base point sharing the query's label (the
    query itself is excluded when it is also a base point); ``knn`` takes
    the exact ``knn_k`` nearest base points under the metric. Truth indices
    are positions into the base (train) index list.
    """
    base = np.asarray(split.train, dtype=np.int64)
    queries = np.asarray(split.test, dtype=np.int64)
    if mode == "same-label":
        if dataset.labels is None:
            raise ValueError("same-label ground truth needs labels")
        base_labels = dataset.labels[base]
        truths = []
        for q in queries:
            hit = np.flatnonzero(base_labels == dataset.labels[q])
            hit = hit[base[hit] != q]
            truths.append(hit)
        return GroundTruth(truths, allow_empty=True)
    if mode == "knn":
        if not knn_k or knn_k < 1:
            raise ValueError("knn ground truth needs knn_k >= 1")
        if knn_k > len(base):
            raise ValueError(f"knn_k = {knn_k} exceeds the base size {len(base)}")
        feats = prepare_metric_features(dataset.features, metric)
        bf = feats[base]
        qf = feats[queries]
        d2 = (
            np.einsum("ij,ij->i", qf, qf)[:, None]
            + np.einsum("ij,ij->i", bf, bf)[None, :]
            - 2.0 * (qf @ bf.T)
        )
        # a query that is also a base point must not be its own neighbor
        for qi, q in enumerate(queries):
            self_pos = np.flatnonzero(base == q)
            d2[qi, self_pos] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        return GroundTruth([order[qi, :knn_k] for qi in range(len(queries))])
    raise ValueError(f"unknown ground-truth mode {mode!r}")


def precision_curve(base_Z, query_Z, truths, k_grid):
    """Mean precision@k over the queries, for each k in the grid."""
    base_Z = validate_codes(base_Z)
    dists = hamming_distances(base_Z, query_Z)
    order = np.argsort(dists, axis=1, kind="stable")
    out = {}
    for k in k_grid:
        if k > base_Z.shape[1]:
            continue
        vals = [precision_at_k(order[q, :k], truths[q])
                for q in range(order.shape[0])]
        out[int(k)] = float(np.mean(vals))
    return out


def retrieval_report(base_Z, query_Z, truths, k_grid=(1, 5, 10, 50, 100, 500)):
    """Precision@k curve, radius precision/recall curve, and code utilization."""
    curve = pr_curve(base_Z, query_Z, truths)
    return {
        "precision_at_k": precision_curve(base_Z, query_Z, truths, k_grid),
        "radius_precision": [p.precision for p in curve],
        "radius_recall": [p.recall for p in curve],
        "radius_excluded_queries": curve[0].excluded_queries,
        "effective_bits_base": effective_bits(base_Z),
        "effective_bits_query": effective_bits(query_Z),
    }
