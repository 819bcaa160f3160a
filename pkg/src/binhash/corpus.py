"""Dataset ingestion, train/validation/test splits, and affinity construction.

Affinities are stored as a flat list of directed pairs ``(n, m, y)``; loss
sums run over the stored list with each pair counted once. Supervised
affinities sample same/different-label neighbors at random; unsupervised
data gets distance-based pseudolabels (exact nearest neighbors as positives,
random non-neighbors as negatives).
"""

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BHD1_MAGIC = b"BHD1"
_BHD1_DTYPES = {4: np.float32, 8: np.float64}


@dataclass
class Dataset:
    """Feature matrix with optional integer class labels."""

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D (N, D) matrix")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError("dataset must have N >= 1 points and D >= 1 dims")
        if not np.isfinite(self.features).all():
            bad = np.argwhere(~np.isfinite(self.features))[0]
            raise ValueError(
                f"non-finite feature value at row {bad[0] + 1}, column {bad[1] + 1}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels must have length N")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != (n,):
                raise ValueError("ids must have length N")

    @property
    def num_points(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        """Row subset as a new Dataset (labels/ids carried along)."""
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[indices], labels, self.ids[indices])


@dataclass
class AffinityGraph:
    """Sparse pair list (n, m, y) over point indices 0..N-1.

    ``y`` holds the similar/dissimilar label (+1/-1), a nonnegative target
    distance, or the attraction weight, depending on the loss the graph is
    used with; ``y_neg`` carries the separate repulsion weight when a loss
    needs one.
    """

    n_idx: np.ndarray
    m_idx: np.ndarray
    y: np.ndarray
    num_points: int
    y_neg: Optional[np.ndarray] = None

    def __post_init__(self):
        self.n_idx = np.ascontiguousarray(self.n_idx, dtype=np.int64)
        self.m_idx = np.ascontiguousarray(self.m_idx, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if not (len(self.n_idx) == len(self.m_idx) == len(self.y)):
            raise ValueError("pair arrays must have equal length")
        if self.y_neg is not None:
            self.y_neg = np.ascontiguousarray(self.y_neg, dtype=np.float64)
            if len(self.y_neg) != len(self.y):
                raise ValueError("y_neg must match the pair count")
        n = self.num_points
        if len(self.n_idx):
            if self.n_idx.min() < 0 or self.n_idx.max() >= n:
                raise ValueError("pair index n out of range")
            if self.m_idx.min() < 0 or self.m_idx.max() >= n:
                raise ValueError("pair index m out of range")
            if (self.n_idx == self.m_idx).any():
                raise ValueError("self pairs (n == m) are not allowed")
            key = self.n_idx * n + self.m_idx
            if len(np.unique(key)) != len(key):
                raise ValueError("duplicate (n, m) pairs are not allowed")

    @property
    def num_pairs(self):
        return len(self.n_idx)

    def pos_counts(self):
        """Similar-pair count per point (pairs with y > 0)."""
        return np.bincount(self.n_idx[self.y > 0], minlength=self.num_points)

    def neg_counts(self):
        """Dissimilar-pair count per point (pairs with y < 0, or y_neg > 0)."""
        if self.y_neg is not None:
            mask = self.y_neg > 0
        else:
            mask = self.y < 0
        return np.bincount(self.n_idx[mask], minlength=self.num_points)


@dataclass
class SplitSpec:
    """Index sets for the train/validation/test roles."""

    train: np.ndarray
    validation: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.validation = np.asarray(self.validation, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        if len(np.intersect1d(self.train, self.validation)):
            raise ValueError("train and validation indices must be disjoint")


def make_split(n, train, validation, test, seed):
    """Random disjoint split of 0..n-1 into the three roles (seeded)."""
    if train + validation + test > n:
        raise ValueError(
            f"split sizes sum to {train + validation + test} > {n} points"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return SplitSpec(
        train=np.sort(perm[:train]),
        validation=np.sort(perm[train : train + validation]),
        test=np.sort(perm[train + validation : train + validation + test]),
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_dataset_bhd1(path, dataset, dtype="f64"):
    """Write the dense-binary format: magic, u32 N, u32 D, u8 itemsize, rows."""
    code = {"f32": 4, "f64": 8}[dtype]
    arr = dataset.features.astype(_BHD1_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(BHD1_MAGIC)
        fh.write(struct.pack("<IIB", dataset.num_points, dataset.dim, code))
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C"))


def _load_bhd1(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 13:
        raise ValueError(f"{path}: truncated header (no data rows)")
    if blob[:4] != BHD1_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}, expected {BHD1_MAGIC!r}")
    n, d, code = struct.unpack("<IIB", blob[4:13])
    if n < 1 or d < 1:
        raise ValueError(f"{path}: header declares empty matrix ({n} x {d}): no data rows")
    if code not in _BHD1_DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code} (expected 4 or 8)")
    dt = np.dtype(_BHD1_DTYPES[code]).newbyteorder("<")
    expected = n * d * dt.itemsize
    payload = blob[13:]
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    values = np.frombuffer(payload, dtype=dt).astype(np.float64).reshape(n, d)
    if not np.isfinite(values).all():
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(
            f"{path}: non-finite value at row {bad[0] + 1}, column {bad[1] + 1}"
        )
    return Dataset(values)


def _looks_like_header(row):
    for tok in row:
        try:
            float(tok)
        except ValueError:
            return True
    return False


def _load_csv(path, label_column):
    with open(path, "r", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(t.strip() for t in row)]
    if rows and _looks_like_header(rows[0]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    if label_column and width < 2:
        raise ValueError(f"{path}: need at least 2 columns when the last is a label")
    feats = []
    labels = [] if label_column else None
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(
                f"{path}: row {r} has {len(row)} columns, expected {width}"
            )
        try:
            vals = [float(tok) for tok in row]
        except ValueError:
            bad = next(i for i, tok in enumerate(row, start=1)
                       if not _is_float(tok))
            raise ValueError(f"{path}: unparseable value at row {r}, column {bad}")
        for c, v in enumerate(vals, start=1):
            if not np.isfinite(v):
                raise ValueError(f"{path}: non-finite value at row {r}, column {c}")
        if label_column:
            lab = vals[-1]
            if lab != int(lab):
                raise ValueError(f"{path}: non-integer label at row {r}")
            labels.append(int(lab))
            vals = vals[:-1]
        feats.append(vals)
    return Dataset(np.array(feats, dtype=np.float64),
                   None if labels is None else np.array(labels, dtype=np.int64))


def _is_float(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def load_dataset(path, fmt="csv", label_column=False):
    """Load a dataset from disk.

    ``fmt`` is "csv" (optional header row, one point per row, optional final
    integer label column selected by ``label_column``) or "bhd1" (the dense
    little-endian binary format). Non-finite values are rejected with the
    offending row/column named.
    """
    if fmt == "bhd1":
        return _load_bhd1(path)
    if fmt == "csv":
        return _load_csv(path, label_column)
    raise ValueError(f"unknown dataset format {fmt!r} (expected 'csv' or 'bhd1')")


def save_dataset_csv(path, dataset, with_labels=True):
    """Write CSV, one point per row, with the label as final column if present."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    include_labels = with_labels and dataset.labels is not None
    for i in range(dataset.num_points):
        row = [repr(v) for v in dataset.features[i]]
        if include_labels:
            row.append(str(int(dataset.labels[i])))
        writer.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# affinity construction
# ---------------------------------------------------------------------------


def build_supervised_affinities(dataset, kappa_pos, kappa_neg, seed):
    """Random same-label positives and different-label negatives per point.

    For each point, up to ``kappa_pos`` partners with the same label get
    y = +1 and up to ``kappa_neg`` partners with a different label get
    y = -1, sampled uniformly without replacement (whole pool when it is
    smaller). Deterministic given the seed.
    """
    if dataset.labels is None:
        raise ValueError("supervised affinities need labels")
    labels = dataset.labels
    n = dataset.num_points
    classes, counts = np.unique(labels, return_counts=True)
    if kappa_pos > 0 and (counts < 2).any():
        small = classes[counts < 2][0]
        raise ValueError(f"class {small} has fewer than 2 members")
    if kappa_neg > 0 and len(classes) < 2:
        raise ValueError("negative pairs need at least 2 classes")
    rng = np.random.default_rng(seed)
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    ns, ms, ys = [], [], []
    for i in range(n):
        same = by_class[labels[i]]
        same = same[same != i]
        diff_count = n - len(same) - 1
        if kappa_pos > 0 and len(same):
            take = min(kappa_pos, len(same))
            chosen = rng.choice(same, size=take, replace=False)
            ns.extend([i] * take)
            ms.extend(chosen.tolist())
            ys.extend([1.0] * take)
        if kappa_neg > 0 and diff_count:
            diff = np.flatnonzero(labels != labels[i])
            take = min(kappa_neg, len(diff))
            chosen = rng.choice(diff, size=take, replace=False)
            ns.extend([i] * take)
            ms.extend(chosen.tolist())
            ys.extend([-1.0] * take)
    return AffinityGraph(np.array(ns, dtype=np.int64), np.array(ms, dtype=np.int64),
                         np.array(ys, dtype=np.float64), num_points=n)


def _pairwise_sq_dists(A, B):
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    d2 = aa + bb - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def prepare_metric_features(features, metric):
    """Feature preprocessing per metric: cosine mode centers and normalizes."""
    if metric == "euclidean":
        return np.asarray(features, dtype=np.float64)
    if metric == "cosine":
        x = np.asarray(features, dtype=np.float64)
        x = x - x.mean(axis=0, keepdims=True)
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return x / norms
    raise ValueError(f"unknown metric {metric!r}")


def exact_knn_indices(features, k, metric="euclidean"):
    """Exact k nearest neighbors per point (self excluded, ties to lower index).

    Returns an (N, k) int array ordered by increasing distance.
    """
    x = prepare_metric_features(features, metric)
    d2 = _pairwise_sq_dists(x, x)
    np.fill_diagonal(d2, np.inf)
    # stable argsort on distance gives the lower index on exact ties
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def build_pseudolabel_affinities(dataset, kappa_pos, kappa_neg, metric, seed):
    """Distance-based pseudolabels for unsupervised data.

    Positives (y = +1) are the exact ``kappa_pos`` nearest neighbors under
    the metric; negatives (y = -1) are drawn uniformly from the complement
    of {self} + positives. Cosine mode centers and normalizes features first.
    """
    n = dataset.num_points
    if kappa_pos >= n:
        raise ValueError(f"kappa_pos = {kappa_pos} must be < N = {n}")
    if n <= kappa_pos + 1:
        raise ValueError("need N > kappa_pos + 1 points")
    nn = exact_knn_indices(dataset.features, kappa_pos, metric)
    rng = np.random.default_rng(seed)
    ns, ms, ys = [], [], []
    for i in range(n):
        pos = nn[i]
        ns.extend([i] * len(pos))
        ms.extend(pos.tolist())
        ys.extend([1.0] * len(pos))
        if kappa_neg > 0:
            excluded = np.zeros(n, dtype=bool)
            excluded[i] = True
            excluded[pos] = True
            pool = np.flatnonzero(~excluded)
            take = min(kappa_neg, len(pool))
            if take:
                chosen = rng.choice(pool, size=take, replace=False)
                ns.extend([i] * take)
                ms.extend(chosen.tolist())
                ys.extend([-1.0] * take)
    return AffinityGraph(np.array(ns, dtype=np.int64), np.array(ms, dtype=np.int64),
                         np.array(ys, dtype=np.float64), num_points=n)


def adapt_affinities(graph, kind, dataset=None):
    """Rewrite +-1 pair labels into the form a given loss consumes.

    KSH/eSPLH use the +-1 labels as-is. BRE replaces y with half the squared
    feature distance of the pair (needs the dataset). EE splits the labels
    into attraction weights y (1 for positives) and repulsion weights y_neg
    (1 for negatives).
    """
    kind = kind.lower()
    if kind in ("ksh", "esplh"):
        if not np.isin(graph.y, (-1.0, 1.0)).all():
            raise ValueError(f"{kind} needs +-1 pair labels")
        return graph
    if kind == "bre":
        if dataset is None:
            raise ValueError("BRE affinities need the dataset for distances")
        diff = dataset.features[graph.n_idx] - dataset.features[graph.m_idx]
        y = 0.5 * np.einsum("ij,ij->i", diff, diff)
        return AffinityGraph(graph.n_idx.copy(), graph.m_idx.copy(), y,
                             num_points=graph.num_points)
    if kind == "ee":
        y_pos = (graph.y > 0).astype(np.float64)
        y_neg = (graph.y < 0).astype(np.float64)
        return AffinityGraph(graph.n_idx.copy(), graph.m_idx.copy(), y_pos,
                             num_points=graph.num_points, y_neg=y_neg)
    raise ValueError(f"unknown loss kind {kind!r}")


def save_affinities_csv(path, graph):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["n", "m", "y"] + (["y_neg"] if graph.y_neg is not None else [])
        writer.writerow(header)
        for p in range(graph.num_pairs):
            row = [int(graph.n_idx[p]), int(graph.m_idx[p]), repr(float(graph.y[p]))]
            if graph.y_neg is not None:
                row.append(repr(float(graph.y_neg[p])))
            writer.writerow(row)


def load_affinities_csv(path, num_points):
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    header = rows[0]
    has_yneg = len(header) == 4
    ns, ms, ys, yns = [], [], [], []
    for row in rows[1:]:
        ns.append(int(row[0]))
        ms.append(int(row[1]))
        ys.append(float(row[2]))
        if has_yneg:
            yns.append(float(row[3]))
    return AffinityGraph(
        np.array(ns, dtype=np.int64), np.array(ms, dtype=np.int64),
        np.array(ys, dtype=np.float64), num_points=num_points,
        y_neg=np.array(yns, dtype=np.float64) if has_yneg else None)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Seeded Gaussian-cluster generator parameters."""

    classes: int = 10
    per_class: int = 100
    dim: int = 32
    separation: float = 4.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1:
            raise ValueError("need at least 1 class")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if self.per_class < 1 or self.dim < 1:
            raise ValueError("per_class and dim must be >= 1")


def gen_synthetic(spec):
    """Gaussian clusters at seeded random centers, pairwise >= separation apart."""
    rng = np.random.default_rng(spec.seed)
    scale = max(spec.separation, 1.0)
    centers = None
    for _ in range(1000):
        cand = rng.standard_normal((spec.classes, spec.dim)) * scale
        if spec.classes == 1:
            centers = cand
            break
        d2 = _pairwise_sq_dists(cand, cand)
        np.fill_diagonal(d2, np.inf)
        if d2.min() >= spec.separation**2:
            centers = cand
            break
    if centers is None:
        raise ValueError(
            f"could not place {spec.classes} centers >= {spec.separation} apart "
            "after 1000 resamples"
        )
    feats = np.empty((spec.classes * spec.per_class, spec.dim))
    labels = np.empty(spec.classes * spec.per_class, dtype=np.int64)
    for c in range(spec.classes):
        lo = c * spec.per_class
        feats[lo : lo + spec.per_class] = centers[c] + spec.noise * rng.standard_normal(
            (spec.per_class, spec.dim)
        )
        labels[lo : lo + spec.per_class] = c
    return Dataset(feats, labels)
