"""Affinity-based loss family on binary codes.

All four supported losses depend on a code pair only through the inner
product s = z_n . z_m (equivalently the Hamming distance, since
||z_n - z_m||^2 = 2(b - s) for +-1 vectors):

- KSH:    (s - b y)^2                      with y in {-1, +1}
- BRE:    ((2(b - s))/b - y)^2             with y >= 0 a target distance
- eSPLH:  exp(-(y s)/b)                    with y in {-1, +1}
- EE:     y 2(b - s) + lam y_neg exp(-2(b - s))   attraction/repulsion pair

Because of that structure, restricting any of them to a single bit (all
other bits fixed) is an exact binary quadratic: with a = l(1,1) - l(1,-1)
and c = (l(1,1) + l(1,-1))/2, the identity 0.5 z1 z2 a + c reproduces the
restricted loss on all four sign combinations. Every code-optimization
solver in this package consumes those (a, c) coefficients.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .util import validate_codes

KIND_CODES = {"ksh": _kernels.KSH, "bre": _kernels.BRE,
              "esplh": _kernels.ESPLH, "ee": _kernels.EE}


@dataclass(frozen=True)
class LossSpec:
    """Loss kind, code length in bits, and the EE repulsion weight."""

    kind: str
    b: int
    lam: float = 1.0

    def __post_init__(self):
        if self.kind.lower() not in KIND_CODES:
            raise ValueError(
                f"unknown loss kind {self.kind!r}; expected one of "
                f"{sorted(KIND_CODES)}"
            )
        object.__setattr__(self, "kind", self.kind.lower())
        if self.b < 1:
            raise ValueError("code length b must be >= 1")
        if self.kind == "ee" and not self.lam > 0:
            raise ValueError("EE needs a repulsion weight lam > 0")

    @property
    def kind_code(self):
        return KIND_CODES[self.kind]


class SurrogateCoeff(NamedTuple):
    """Per-bit quadratic coefficients: 0.5 z1 z2 a + const = restricted loss."""

    a: float
    const: float


def _pair_y_arrays(spec, graph):
    if spec.kind == "ee":
        if graph.y_neg is None:
            raise ValueError("EE loss needs a graph with y_neg weights")
        return graph.y, graph.y_neg
    return graph.y, np.zeros_like(graph.y)


def _scalar_loss(spec, s, y):
    b = spec.b
    if spec.kind == "ksh":
        return float((s - b * y) ** 2)
    if spec.kind == "bre":
        return float((2.0 * (b - s) / b - y) ** 2)
    if spec.kind == "esplh":
        return math.exp(-(y * s) / b)
    y_pos, y_neg = y
    d2 = 2.0 * (b - s)
    return float(y_pos * d2 + spec.lam * y_neg * math.exp(-d2))


def pair_loss(spec, z_n, z_m, y):
    """Loss of one code pair.

    ``y`` is a scalar affinity, except for the EE loss where it is an
    ``(attraction, repulsion)`` pair. Code entries must be exactly +-1.
    """
    z_n = np.asarray(z_n).ravel()
    z_m = np.asarray(z_m).ravel()
    if len(z_n) != spec.b or len(z_m) != spec.b:
        raise ValueError(
            f"code length mismatch: got {len(z_n)} and {len(z_m)}, spec.b = {spec.b}"
        )
    for z in (z_n, z_m):
        if not np.isin(z, (-1, 1)).all():
            raise ValueError("code entries must be -1 or +1")
    if spec.kind == "ee" and np.ndim(y) == 0:
        raise ValueError("EE loss takes y as an (attraction, repulsion) pair")
    s = int(np.dot(z_n.astype(np.int64), z_m.astype(np.int64)))
    return _scalar_loss(spec, s, y)


def total_loss(spec, Z, graph, dots=None):
    """Sum of pair losses over the stored pair list (compensated summation).

    ``dots`` may carry precomputed pair dot products; the result is
    identical either way since the dot products are exact integers.
    """
    Z = validate_codes(Z, b=spec.b, n=graph.num_points)
    if graph.num_pairs == 0:
        return 0.0
    y, y_neg = _pair_y_arrays(spec, graph)
    if dots is None:
        dots = _kernels.pair_dots(Z, graph.n_idx, graph.m_idx)
    losses = _kernels.pair_losses(spec.kind_code, spec.b, spec.lam, dots,
                                  y, y_neg)
    return math.fsum(losses)


def constraint_violations(Z, h_codes):
    """Total Hamming mismatch between the codes and the hash outputs."""
    return int(np.sum(np.asarray(Z) != np.asarray(h_codes)))


def penalty_objective(spec, Z, graph, h_codes, mu, dots=None):
    """Loss plus mu * sum_n ||z_n - h(x_n)||^2.

    For +-1 vectors the squared distance is 4x the Hamming distance, so the
    penalty term is 4 mu times the total number of mismatched bits.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    Z = validate_codes(Z, b=spec.b)
    h_codes = validate_codes(h_codes, b=spec.b, n=Z.shape[1], name="h_codes")
    return (total_loss(spec, Z, graph, dots=dots)
            + mu * (4.0 * constraint_violations(Z, h_codes)))


def bit_surrogate(spec, Z, i, pair):
    """Exact quadratic coefficients for bit ``i`` of one stored pair.

    ``pair`` is (n, m, y). Evaluates the pair loss with bit i of each code
    forced to each sign, checks the sign-flip symmetry the quadratic form
    relies on, and returns SurrogateCoeff(a, const).
    """
    n, m, y = pair
    Z = validate_codes(Z, b=spec.b)
    if not 0 <= i < spec.b:
        raise ValueError(f"bit index {i} out of range for b = {spec.b}")

    def with_bits(sn, sm):
        zn = Z[:, n].copy()
        zm = Z[:, m].copy()
        zn[i] = sn
        zm[i] = sm
        return pair_loss(spec, zn, zm, y)

    l_pp = with_bits(1, 1)
    l_pm = with_bits(1, -1)
    l_mm = with_bits(-1, -1)
    l_mp = with_bits(-1, 1)
    if not (math.isclose(l_pp, l_mm, rel_tol=1e-12, abs_tol=1e-12)
            and math.isclose(l_pm, l_mp, rel_tol=1e-12, abs_tol=1e-12)):
        raise AssertionError(
            "loss is not symmetric under joint sign flips of one bit; "
            "the quadratic surrogate does not apply"
        )
    return SurrogateCoeff(a=l_pp - l_pm, const=0.5 * (l_pp + l_pm))


def pairwise_coefficients(spec, Z, graph, i, dots=None):
    """Vectorized surrogate coefficients (a, const) for bit ``i``, all pairs.

    ``dots``, when given, must be the current pair dot products (the solvers
    maintain them incrementally instead of recomputing per bit).
    """
    Z = validate_codes(Z, b=spec.b, n=graph.num_points)
    y, y_neg = _pair_y_arrays(spec, graph)
    if dots is None:
        dots = _kernels.pair_dots(Z, graph.n_idx, graph.m_idx)
    zi = Z[i]
    s_rest = (dots - zi[graph.n_idx].astype(np.int32)
              * zi[graph.m_idx].astype(np.int32)).astype(np.int32)
    return _kernels.bit_coeffs(spec.kind_code, spec.b, spec.lam, s_rest, y, y_neg)
