"""Shared small helpers: seed derivation, slope fits, Richardson tables."""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master_seed, *tags):
    """Derive a child seed from a master seed and a tuple of tags.

    Hash-based so the derivation is independent of how work is partitioned
    into batches and stable across library versions.
    """
    payload = repr((int(master_seed),) + tuple(tags)).encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def rng_from(master_seed, *tags):
    return np.random.default_rng(child_seed(master_seed, *tags))


def log_slope(x, y):
    """OLS slope of log(y) against log(x), with standard error.

    Returns (slope, stderr). Non-positive y entries are rejected.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("log_slope needs positive data")
    return _ols_slope(np.log(x), np.log(y))


def _ols_slope(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = len(u)
    um, vm = u.mean(), v.mean()
    suu = np.sum((u - um) ** 2)
    slope = np.sum((u - um) * (v - vm)) / suu
    resid = v - vm - slope * (u - um)
    if n > 2:
        se = np.sqrt(np.sum(resid**2) / (n - 2) / suu)
    else:
        se = np.inf
    return slope, se


def semilog_slope(x, y):
    """OLS slope of log(y) against x (decay-rate fit)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("semilog_slope needs positive y")
    return _ols_slope(np.asarray(x, dtype=float), np.log(y))


def richardson(values, ratio=2.0):
    """Richardson-extrapolate a sequence of first-order estimates.

    ``values[i]`` is the estimate at step size ``eps0 / ratio**i``. Builds the
    standard extrapolation table and returns the highest-order corner.
    """
    col = [np.asarray(v, dtype=float) for v in values]
    level = 1
    while len(col) > 1:
        factor = ratio**level
        col = [(factor * col[i + 1] - col[i]) / (factor - 1.0) for i in range(len(col) - 1)]
        level += 1
    return col[0]
