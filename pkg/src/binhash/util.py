"""Shared helpers: sign conventions, code validation, seed fan-out."""

import hashlib

import numpy as np


def sign_pm1(x):
    """Sign with the global tie rule sign(0) := +1, as int8."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def validate_codes(Z, b=None, n=None, name="codes"):
    """Check a (b, N) code matrix for +-1 entries and expected shape."""
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise ValueError(f"{name} must be 2-D (bits x points), got shape {Z.shape}")
    if b is not None and Z.shape[0] != b:
        raise ValueError(f"{name} has {Z.shape[0]} bit rows, expected {b}")
    if n is not None and Z.shape[1] != n:
        raise ValueError(f"{name} has {Z.shape[1]} columns, expected {n}")
    if not np.isin(Z, (-1, 1)).all():
        raise ValueError(f"{name} entries must all be -1 or +1")
    return np.ascontiguousarray(Z, dtype=np.int8)


def subseed(master_seed, purpose):
    """Derive a named sub-seed from the master seed via a keyed hash.

    Adding a new named consumer never perturbs the draws of existing ones.
    """
    digest = hashlib.sha256(f"{int(master_seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
