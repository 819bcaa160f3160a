"""Optimizing the binary codes given the hash outputs and penalty weight.

Per-bit alternation: restricting the loss to one bit row gives an exact
binary quadratic z' A z' + const (A assembled from the surrogate
coefficients), plus the penalty mu ||z - h_i||^2. Two solvers:

- quad: spectral initialization (smallest eigenvector of a bordered
  matrix), then a bound-constrained QP over [-1,1]^N, binarized by sign.
  A candidate row is kept only if the penalized objective does not
  increase, so the step is monotone by construction.
- cut: exact minimization over blocks of points via s-t min cut, valid
  when within-block coefficients are attractive (a <= 0); each block
  update can only lower the penalized objective.

Convention: a stored pair contributes a/4 to both A[n,m] and A[m,n], so
z' A z' + const equals the per-bit loss sum over the stored pair list
exactly, and the bit objective differs from the full penalized loss by a
constant. That makes per-bit accept/reject decisions equivalent to
decisions on the full objective.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from . import _kernels
from .losses import pairwise_coefficients, penalty_objective
from .util import sign_pm1, validate_codes

logger = logging.getLogger(__name__)

_DENSE_EIG_LIMIT = 64
_EIG_TOL = 1e-6
_EIG_MAXITER = 2000
_QP_PGTOL = 1e-5
_QP_MAXITER = 500
_EIG_SEED = 0x5EED  # fixed start vector for the iterative eigensolver


@dataclass
class BitProblem:
    """One bit's quadratic subproblem.

    ``A`` is symmetric with zero diagonal and the affinity sparsity
    pattern; ``pair_a`` keeps the per-stored-pair coefficients the block
    solver and energy checks consume; ``const`` makes
    z A z + const + mu ||z - h||^2 equal to the penalized loss restricted
    to this bit (up to the other bits' constant terms).
    """

    A: sp.csr_matrix
    h: np.ndarray
    mu: float
    const: float
    pair_n: np.ndarray
    pair_m: np.ndarray
    pair_a: np.ndarray

    @property
    def num_points(self):
        return len(self.h)


class _MatrixPattern:
    """Precomputed symmetric sparsity structure of the coefficient matrix.

    The affinity pattern is fixed while coefficient values change per bit,
    so the CSR structure and the pair-to-slot reduction are built once and
    refilled in O(P).
    """

    def __init__(self, graph):
        n = graph.num_points
        rows = np.concatenate([graph.n_idx, graph.m_idx])
        cols = np.concatenate([graph.m_idx, graph.n_idx])
        order = np.lexsort((cols, rows))
        r_sorted = rows[order]
        c_sorted = cols[order]
        boundary = np.ones(len(order), dtype=bool)
        boundary[1:] = (np.diff(r_sorted) != 0) | (np.diff(c_sorted) != 0)
        starts = np.flatnonzero(boundary)
        uniq_r = r_sorted[starts]
        uniq_c = c_sorted[starts]
        self.n = n
        self.order = order
        self.starts = starts
        self.indices = uniq_c.astype(np.int32)
        self.indptr = np.zeros(n + 1, dtype=np.int32)
        np.add.at(self.indptr, uniq_r + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)

    def build(self, pair_values):
        doubled = np.concatenate([pair_values, pair_values])
        data = np.add.reduceat(doubled[self.order], self.starts)
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.n, self.n))


def assemble_bit_problem(spec, Z, graph, i, h_codes, mu, dots=None,
                         pattern=None):
    """Build the bit-``i`` subproblem from the current codes."""
    Z = validate_codes(Z, b=spec.b, n=graph.num_points)
    h_codes = validate_codes(h_codes, b=spec.b, n=graph.num_points, name="h_codes")
    if not 0 <= i < spec.b:
        raise IndexError(f"bit index {i} out of range for b = {spec.b}")
    a, c = pairwise_coefficients(spec, Z, graph, i, dots=dots)
    if pattern is None:
        pattern = _MatrixPattern(graph)
    A = pattern.build(0.25 * a)
    return BitProblem(A=A, h=h_codes[i].copy(), mu=float(mu),
                      const=math.fsum(c), pair_n=graph.n_idx,
                      pair_m=graph.m_idx, pair_a=a)


def bit_objective(prob, z):
    """Quadratic-form value of a +-1 assignment of the bit row."""
    zf = np.asarray(z, dtype=np.float64)
    quad = float(zf @ (prob.A @ zf))
    mismatches = int(np.sum(np.asarray(z) != prob.h))
    return quad + prob.const + prob.mu * 4.0 * mismatches


def _box_objective_grad(prob, z, A=None):
    Az = (A if A is not None else prob.A) @ z
    diff = z - prob.h
    f = float(z @ Az) + prob.const + prob.mu * float(diff @ diff)
    g = 2.0 * Az + 2.0 * prob.mu * diff
    return f, g


def spectral_init(prob, v0=None):
    """Binary starting point from the smallest eigenvector of the bordered
    matrix [[A, -mu/2 h], [-mu/2 h', 0]].

    The eigenvector is sign-normalized so its border component is
    nonnegative, then the first N entries are truncated by sign
    (sign(0) := +1). ``v0`` seeds the iterative eigensolver (a fixed
    pseudorandom vector by default). Falls back to sign(h) with a logged
    warning when the eigensolver does not converge.
    """
    n = prob.num_points
    hf = prob.h.astype(np.float64)
    border = -0.5 * prob.mu * hf
    if n + 1 <= _DENSE_EIG_LIMIT:
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = prob.A.toarray() if sp.issparse(prob.A) else prob.A
        B[:n, n] = border
        B[n, :n] = border
        _, vecs = np.linalg.eigh(B)
        v = vecs[:, 0]
    else:
        B = sp.bmat(
            [[prob.A, border[:, None]], [border[None, :], None]], format="csr"
        )
        if v0 is None:
            v0 = np.random.default_rng(_EIG_SEED).standard_normal(n + 1)
        try:
            _, vecs = eigsh(B, k=1, which="SA", v0=v0, maxiter=_EIG_MAXITER,
                            tol=_EIG_TOL)
        except ArpackNoConvergence:
            logger.warning(
                "eigensolver did not converge within %d iterations; "
                "starting the QP from sign(h) instead", _EIG_MAXITER)
            return prob.h.copy()
        v = vecs[:, 0]
    if v[n] < 0:
        v = -v
    return sign_pm1(v[:n])


def solve_relaxed_qp(prob, z0):
    """Bound-constrained QP over [-1,1]^N from a feasible start.

    Projected gradient descent along the projection arc with an Armijo
    backtracking line search and Barzilai-Borwein step seeding; stops when
    the projected gradient's infinity norm drops to 1e-5 or at the
    iteration cap. Never returns a point worse than ``z0``.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if np.abs(z0).max(initial=0.0) > 1.0:
        raise ValueError("QP start must lie inside the [-1, 1] box")
    z = z0.copy()
    f0, g = _box_objective_grad(prob, z)
    f = f0
    t = 1.0 / max(1.0, float(np.abs(g).max()))
    for _ in range(_QP_MAXITER):
        pg = z - np.clip(z - g, -1.0, 1.0)
        if float(np.abs(pg).max()) <= _QP_PGTOL:
            break
        step = t
        f_new = g_new = d = None
        for _ in range(40):
            z_new = np.clip(z - step * g, -1.0, 1.0)
            d = z_new - z
            f_new, g_new = _box_objective_grad(prob, z_new)
            if f_new <= f + 1e-4 * float(g @ d):
                break
            step *= 0.5
        if f_new is None or f_new >= f:
            break
        y = g_new - g
        sy = float(d @ y)
        if sy > 1e-16:
            t = float(d @ d) / sy
            t = min(max(t, 1e-10), 1e10)
        else:
            t = 1.0
        z, f, g = z_new, f_new, g_new
    if f > f0:
        return z0.copy()
    return z


def zstep_quad(spec, Z, graph, h_codes, mu, lp_trace=None):
    """One pass of the quadratic-surrogate bit updates.

    For each bit in ascending order: assemble, spectral-initialize, solve
    the relaxed QP, binarize by sign, and keep the new row only when the
    penalized objective does not increase ("skip rule"). Returns the new
    codes and the per-bit accepted flags. ``lp_trace``, when given, gets
    the penalized objective appended after every bit decision.
    """
    Z = validate_codes(Z, b=spec.b, n=graph.num_points).copy()
    h_codes = validate_codes(h_codes, b=spec.b, n=graph.num_points, name="h_codes")
    lp_cur = penalty_objective(spec, Z, graph, h_codes, mu)
    accepted = np.zeros(spec.b, dtype=bool)
    dots = _kernels.pair_dots(Z, graph.n_idx, graph.m_idx)
    pattern = _MatrixPattern(graph)
    for i in range(spec.b):
        prob = assemble_bit_problem(spec, Z, graph, i, h_codes, mu, dots=dots,
                                    pattern=pattern)
        # warm-start the eigensolver from the incumbent row
        v0 = np.concatenate([Z[i].astype(np.float64), [1.0]])
        z0 = spectral_init(prob, v0=v0)
        zq = solve_relaxed_qp(prob, z0.astype(np.float64))
        cand = sign_pm1(zq)
        if np.array_equal(cand, Z[i]):
            accepted[i] = True
        else:
            s_rest = dots - Z[i, graph.n_idx].astype(np.int32) \
                * Z[i, graph.m_idx].astype(np.int32)
            old = Z[i].copy()
            Z[i] = cand
            cand_dots = (s_rest + Z[i, graph.n_idx].astype(np.int32)
                         * Z[i, graph.m_idx].astype(np.int32)).astype(np.int32)
            lp_new = penalty_objective(spec, Z, graph, h_codes, mu,
                                       dots=cand_dots)
            if lp_new <= lp_cur:
                accepted[i] = True
                lp_cur = lp_new
                dots = cand_dots
            else:
                Z[i] = old
        if lp_trace is not None:
            lp_trace.append(lp_cur)
    return Z, accepted


# ---------------------------------------------------------------------------
# blocks and the graph-cut solver
# ---------------------------------------------------------------------------


@dataclass
class Blocks:
    """Groups of point indices covering 0..N-1 (label classes or
    positive-neighbor components)."""

    groups: list
    num_points: int

    def __post_init__(self):
        cover = np.concatenate([np.asarray(g) for g in self.groups]) \
            if self.groups else np.array([], dtype=np.int64)
        if len(np.unique(cover)) != self.num_points:
            raise ValueError("blocks must cover every point")


def build_blocks(labels=None, graph=None, num_points=None):
    """Blocks for the cut solver: one per label class, or the connected
    components of the positive-pair graph when labels are unavailable."""
    if labels is not None:
        labels = np.asarray(labels)
        groups = [np.flatnonzero(labels == c).astype(np.int64)
                  for c in np.unique(labels)]
        return Blocks(groups=groups, num_points=len(labels))
    if graph is None:
        raise ValueError("need labels or an affinity graph")
    n = num_points if num_points is not None else graph.num_points
    parent = np.arange(n)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for p in range(graph.num_pairs):
        if graph.y[p] > 0:
            ra, rb = find(int(graph.n_idx[p])), find(int(graph.m_idx[p]))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    groups = [np.flatnonzero(roots == r).astype(np.int64)
              for r in np.unique(roots)]
    return Blocks(groups=groups, num_points=n)


def _split_nonsubmodular(groups, point_block, pair_n, pair_m, pair_a):
    """Move one endpoint of each attractive-condition violation (a > 0
    within a block) into a singleton block. Returns the fixed groups."""
    bn = point_block[pair_n]
    bm = point_block[pair_m]
    violating = np.flatnonzero((bn == bm) & (bn >= 0) & (pair_a > 0))
    if not len(violating):
        return groups, point_block, False
    groups = [np.asarray(g).copy() for g in groups]
    point_block = point_block.copy()
    moved = set()
    for p in violating:
        u, v = int(pair_n[p]), int(pair_m[p])
        if u in moved or v in moved or point_block[u] != point_block[v]:
            continue
        out = max(u, v)
        logger.warning(
            "within-block pair (%d, %d) is repulsive (a = %g); moving point "
            "%d to a singleton block for this bit", u, v, pair_a[p], out)
        old = point_block[out]
        groups[old] = groups[old][groups[old] != out]
        point_block[out] = len(groups)
        groups.append(np.array([out], dtype=np.int64))
        moved.add(out)
    return groups, point_block, True


def _cut_block(num_local, edge_u, edge_v, edge_a, unary):
    """Exact minimizer of sum (a/2) z_u z_v + sum unary_n z_n over +-1.

    Attractive couplings only (a <= 0). Reduction to s-t min cut: an
    internal edge of capacity -a is cut when its endpoints take different
    signs; terminal edges encode the unary cost difference 2|U|. Nodes on
    the source side map to -1, so unary ties resolve to +1.
    """
    pos = unary > 0
    neg = unary < 0
    src_cap = np.where(pos, 2.0 * unary, 0.0)
    snk_cap = np.where(neg, -2.0 * unary, 0.0)
    side = _kernels.mincut_side(
        num_local,
        np.ascontiguousarray(edge_u, dtype=np.int64),
        np.ascontiguousarray(edge_v, dtype=np.int64),
        np.ascontiguousarray(-edge_a, dtype=np.float64),
        np.ascontiguousarray(src_cap, dtype=np.float64),
        np.ascontiguousarray(snk_cap, dtype=np.float64),
    )
    return np.where(side == 1, -1, 1).astype(np.int8)


def _block_energy(edge_u, edge_v, edge_a, unary, bits):
    bf = bits.astype(np.float64)
    pair_term = float(np.dot(0.5 * edge_a, bf[edge_u] * bf[edge_v]))
    return pair_term + float(np.dot(unary, bf))


def min_cut_block(prob, block, z):
    """Exact restricted minimizer of one block's bits via min cut.

    ``z`` is the full current bit row; out-of-block entries act as fixed
    context. Raises when a within-block pair is repulsive (the block
    builder guarantees this does not happen for supported losses).
    """
    block = np.asarray(block, dtype=np.int64)
    z = np.asarray(z)
    n = prob.num_points
    local = -np.ones(n, dtype=np.int64)
    local[block] = np.arange(len(block))
    in_n = local[prob.pair_n]
    in_m = local[prob.pair_m]
    both = (in_n >= 0) & (in_m >= 0)
    if (prob.pair_a[both] > 0).any():
        bad = np.flatnonzero(both & (prob.pair_a > 0))[0]
        raise ValueError(
            f"pair ({prob.pair_n[bad]}, {prob.pair_m[bad]}) inside the block "
            f"is repulsive (a = {prob.pair_a[bad]:g}); cannot cut")
    unary = -2.0 * prob.mu * prob.h[block].astype(np.float64)
    cross_n = (in_n >= 0) & (in_m < 0)
    np.add.at(unary, in_n[cross_n],
              0.5 * prob.pair_a[cross_n] * z[prob.pair_m[cross_n]])
    cross_m = (in_m >= 0) & (in_n < 0)
    np.add.at(unary, in_m[cross_m],
              0.5 * prob.pair_a[cross_m] * z[prob.pair_n[cross_m]])
    return _cut_block(len(block), in_n[both], in_m[both],
                      prob.pair_a[both], unary)


def _block_cache(groups, point_block, pair_n, pair_m, n):
    """Static per-block pair structure: in-block edges in local indices,
    cross pairs with the local index of the inside endpoint."""
    local = -np.ones(n, dtype=np.int64)
    for g in groups:
        local[g] = np.arange(len(g))
    bn = point_block[pair_n]
    bm = point_block[pair_m]
    cache = []
    for gi, g in enumerate(groups):
        both = np.flatnonzero((bn == gi) & (bm == gi))
        cn = np.flatnonzero((bn == gi) & (bm != gi))
        cm = np.flatnonzero((bm == gi) & (bn != gi))
        cache.append((
            g,
            both, local[pair_n[both]], local[pair_m[both]],
            cn, local[pair_n[cn]], pair_m[cn],
            cm, local[pair_m[cm]], pair_n[cm],
        ))
    return cache


def zstep_cut(spec, Z, graph, h_codes, mu, sweeps, blocks, lp_trace=None):
    """Alternating exact block minimization of each bit row.

    For each bit in ascending order and each block in order, the block's
    bits are replaced by the restricted minimizer; a replacement is applied
    only when it strictly lowers the restricted energy, so the penalized
    objective never increases across any single block update. Sweeps repeat
    until no bit changes or ``sweeps`` rounds ran.
    """
    Z = validate_codes(Z, b=spec.b, n=graph.num_points).copy()
    h_codes = validate_codes(h_codes, b=spec.b, n=graph.num_points, name="h_codes")
    n = graph.num_points
    base_groups = [np.asarray(g, dtype=np.int64) for g in blocks.groups]
    base_point_block = np.empty(n, dtype=np.int64)
    for gi, g in enumerate(base_groups):
        base_point_block[g] = gi
    pair_n, pair_m = graph.n_idx, graph.m_idx
    base_cache = _block_cache(base_groups, base_point_block, pair_n, pair_m, n)
    base_in_pairs = np.concatenate([c[1] for c in base_cache]) \
        if base_cache else np.array([], dtype=np.int64)
    dots = _kernels.pair_dots(Z, pair_n, pair_m)

    for _ in range(sweeps):
        changed = False
        for i in range(spec.b):
            a, _ = pairwise_coefficients(spec, Z, graph, i, dots=dots)
            s_rest = dots - Z[i, pair_n].astype(np.int32) * Z[i, pair_m].astype(np.int32)
            if (a[base_in_pairs] > 0).any():
                # rare safety path: rebuild the partition with violators
                # moved to singleton blocks for this bit only
                groups, point_block, _ = _split_nonsubmodular(
                    base_groups, base_point_block, pair_n, pair_m, a)
                cache = _block_cache(groups, point_block, pair_n, pair_m, n)
            else:
                cache = base_cache
            zi = Z[i].astype(np.float64)
            h_i = h_codes[i].astype(np.float64)
            bit_changed = False
            for (g, both, eu, ev, cn, cn_loc, cn_out,
                 cm, cm_loc, cm_out) in cache:
                if not len(g):
                    continue
                ea = a[both]
                unary = -2.0 * mu * h_i[g]
                np.add.at(unary, cn_loc, 0.5 * a[cn] * zi[cn_out])
                np.add.at(unary, cm_loc, 0.5 * a[cm] * zi[cm_out])
                old_bits = Z[i, g]
                new_bits = _cut_block(len(g), eu, ev, ea, unary)
                if not np.array_equal(new_bits, old_bits):
                    e_old = _block_energy(eu, ev, ea, unary, old_bits)
                    e_new = _block_energy(eu, ev, ea, unary, new_bits)
                    if e_new < e_old:
                        Z[i, g] = new_bits
                        zi[g] = new_bits
                        changed = True
                        bit_changed = True
                if lp_trace is not None:
                    lp_trace.append(
                        penalty_objective(spec, Z, graph, h_codes, mu))
            if bit_changed:
                dots = (s_rest + Z[i, pair_n].astype(np.int32)
                        * Z[i, pair_m].astype(np.int32)).astype(np.int32)
        if not changed:
            break
    return Z
