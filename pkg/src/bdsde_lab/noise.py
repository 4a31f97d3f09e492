"""Seeded Brownian path generation, time reversal, backward integration, shifts.

A NoisePath stores one realization of the truncated Q-Wiener process as
component columns B[:, j] = sqrt(lambda_j) * beta_j (standard Brownian beta_j)
together with one d-dimensional forward Brownian path W. All sampling is a
pure function of (seed, grid, lambdas).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace

import numpy as np

from .utils import child_seed

_FMT_VERSION = 1


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("need t_end > t_start")
        if self.n_steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self):
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def index(self, t, atol=1e-9):
        k = (t - self.t_start) / self.dt
        ki = int(round(k))
        if abs(k - ki) > atol / self.dt or ki < 0 or ki > self.n_steps:
            raise ValueError(f"time {t} is not on the grid")
        return ki

    def subgrid(self, t_lo, t_hi):
        """Inclusive index window plus the TimeGrid covering [t_lo, t_hi]."""
        ia, ib = self.index(t_lo), self.index(t_hi)
        if ib <= ia:
            raise ValueError("empty window")
        return ia, ib, TimeGrid(self.times[ia], self.times[ib], ib - ia)


@dataclass(frozen=True)
class NoisePath:
    grid: TimeGrid
    B: np.ndarray          # (n_steps+1, N) scaled components sqrt(lambda_j) beta_j
    W: np.ndarray          # (n_steps+1, d)
    lambdas: tuple
    seed: int
    reversal_anchor: float | None = None
    trace_bound: float | None = None

    @property
    def n_components(self):
        return self.B.shape[1]

    @property
    def d(self):
        return self.W.shape[1]

    def b_increments(self, ia=0, ib=None):
        ib = self.grid.n_steps if ib is None else ib
        return np.diff(self.B[ia : ib + 1], axis=0)

    def w_increments(self, ia=0, ib=None):
        ib = self.grid.n_steps if ib is None else ib
        return np.diff(self.W[ia : ib + 1], axis=0)

    def window(self, t_lo, t_hi):
        """Restriction to [t_lo, t_hi], values re-anchored to zero at t_lo."""
        ia, ib, sub = self.grid.subgrid(t_lo, t_hi)
        return NoisePath(
            grid=sub,
            B=self.B[ia : ib + 1] - self.B[ia],
            W=self.W[ia : ib + 1] - self.W[ia],
            lambdas=self.lambdas, seed=self.seed,
            reversal_anchor=self.reversal_anchor, trace_bound=self.trace_bound,
        )


def sample_qwiener(lambdas, N, grid: TimeGrid, seed, d=1, trace_bound=None):
    """Sample a KL-truncated Q-Wiener path and an independent W path.

    Column j of B carries sqrt(lambda_j) times a standard Brownian path; W has
    unit variance per dimension. Deterministic in (seed, grid, lambdas).
    """
    lambdas = tuple(float(v) for v in lambdas)
    if N > len(lambdas):
        raise ValueError(f"truncation N={N} exceeds the eigenvalue list ({len(lambdas)})")
    lam = np.array(lambdas[:N])
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    if np.any(np.diff(lam) > 1e-12):
        raise ValueError("eigenvalues must be nonincreasing")
    if trace_bound is not None and sum(lambdas) > trace_bound:
        raise ValueError("stored eigenvalues already exceed the declared trace bound")

    rng_b = np.random.default_rng(child_seed(seed, "qwiener-b"))
    rng_w = np.random.default_rng(child_seed(seed, "qwiener-w"))
    sdt = np.sqrt(grid.dt)
    db = rng_b.standard_normal((grid.n_steps, N)) * sdt * np.sqrt(lam)
    dw = rng_w.standard_normal((grid.n_steps, d)) * sdt
    B = np.vstack([np.zeros((1, N)), np.cumsum(db, axis=0)])
    W = np.vstack([np.zeros((1, d)), np.cumsum(dw, axis=0)])
    return NoisePath(grid=grid, B=B, W=W, lambdas=lambdas[:N], seed=int(seed),
                     trace_bound=trace_bound)


def sample_w_increments(grid: TimeGrid, d, n_paths, seed):
    """Independent forward-noise increments (n_steps, n_paths, d) for a path bundle."""
    rng = np.random.default_rng(child_seed(seed, "w-bundle"))
    return rng.standard_normal((grid.n_steps, n_paths, d)) * np.sqrt(grid.dt)


def coarsen(path: NoisePath, factor):
    """Restriction of the path to every factor-th grid point.

    Paths are generated once at the finest grid; coarser grids subsample so
    every cross-solver comparison sees the identical noise realization.
    """
    factor = int(factor)
    if path.grid.n_steps % factor != 0:
        raise ValueError("grid is not divisible by the coarsening factor")
    return NoisePath(
        grid=TimeGrid(path.grid.t_start, path.grid.t_end, path.grid.n_steps // factor),
        B=path.B[::factor].copy(), W=path.W[::factor].copy(),
        lambdas=path.lambdas, seed=path.seed,
        reversal_anchor=path.reversal_anchor, trace_bound=path.trace_bound,
    )


def reverse_time(path: NoisePath, t_prime):
    """Time-reverse the backward components: Bhat_s = B_{T'-s} - B_{T'}.

    The reversed path lives on [0, T' - t_start]; W is carried over on the
    same window unchanged. Applying the reversal twice with the same T'
    restores the original values.
    """
    m = path.grid.index(t_prime)
    if m < 1:
        raise ValueError("reversal anchor must be after the grid start")
    rev = path.B[m::-1] - path.B[m]
    sub = TimeGrid(0.0, m * path.grid.dt, m)
    return NoisePath(grid=sub, B=rev, W=path.W[: m + 1].copy(), lambdas=path.lambdas,
                     seed=path.seed, reversal_anchor=float(t_prime),
                     trace_bound=path.trace_bound)


def backward_ito_integral(integrand, path: NoisePath, window=None):
    """Right-endpoint Riemann sum sum_k g(t_{k+1}) (Bhat_{k+1} - Bhat_k).

    ``integrand`` is aligned to the path grid with shape (n_steps+1,),
    (n_steps+1, N) for per-component integrands, or with extra leading axes
    (..., n_steps+1, N) which are preserved. The backward convention
    evaluates at the right endpoint of each increment; the forward Ito
    integral uses the left endpoint.
    """
    ia, ib = 0, path.grid.n_steps
    if window is not None:
        ia, ib, _ = path.grid.subgrid(*window)
    db = np.diff(path.B[ia : ib + 1], axis=0)  # (K, N)
    g = np.asarray(integrand, dtype=float)
    if g.shape[-1] == path.grid.n_steps + 1 and g.ndim == 1:
        g = g[:, None] * np.ones((1, path.n_components))
    if g.shape[-2] != path.grid.n_steps + 1:
        raise ValueError("integrand is not aligned to the path grid")
    g_right = g[..., ia + 1 : ib + 1, :]
    return np.sum(g_right * db, axis=(-2, -1))


def forward_ito_integral(integrand, path: NoisePath, window=None):
    """Left-endpoint Riemann sum against the stored B columns."""
    ia, ib = 0, path.grid.n_steps
    if window is not None:
        ia, ib, _ = path.grid.subgrid(*window)
    db = np.diff(path.B[ia : ib + 1], axis=0)
    g = np.asarray(integrand, dtype=float)
    if g.ndim == 1:
        g = g[:, None] * np.ones((1, path.n_components))
    g_left = g[..., ia:ib, :]
    return np.sum(g_left * db, axis=(-2, -1))


MODES = ("theta_prime", "theta_double_prime", "theta_hat")


@dataclass(frozen=True)
class ShiftedPath:
    """Lazy view of a shifted NoisePath; materialize() yields the values."""

    base: NoisePath
    shift_r: float
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def materialize(self):
        return apply_shift(self.base, self.shift_r, self.mode)


def apply_shift(path: NoisePath, r, mode):
    """Shift operators: theta'_r shifts only Bhat, theta''_r only W, theta-hat both.

    Shifts are restricted to integer multiples of dt; values are re-anchored
    so the shifted path starts at zero. The shifted path lives on the grid
    [t_start, t_end - r].
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if r < 0:
        raise ValueError("shift must be nonnegative; use a two-sided path for negative times")
    m = int(round(r / path.grid.dt))
    if abs(m * path.grid.dt - r) > 1e-9:
        raise ValueError("shift must be an integer multiple of dt")
    if m > path.grid.n_steps - 1:
        raise ValueError("shifted window exits the stored horizon")
    K = path.grid.n_steps - m
    grid = TimeGrid(path.grid.t_start, path.grid.t_end - r, K) if m else path.grid
    B, W = path.B, path.W
    if mode in ("theta_prime", "theta_hat"):
        B = path.B[m : m + K + 1] - path.B[m]
    else:
        B = path.B[: K + 1]
    if mode in ("theta_double_prime", "theta_hat"):
        W = path.W[m : m + K + 1] - path.W[m]
    else:
        W = path.W[: K + 1]
    return NoisePath(grid=grid, B=B.copy(), W=W.copy(), lambdas=path.lambdas,
                     seed=path.seed, reversal_anchor=path.reversal_anchor,
                     trace_bound=path.trace_bound)


@dataclass(frozen=True)
class TwoSidedNoise:
    """Two one-sided paths glued at 0: positive side B_t, negative side B_{-t}.

    The negative side is exactly the reversed-at-zero backward path
    Bhat_s = B_{-s} needed by the pull-back experiment.
    """

    pos: NoisePath
    neg: NoisePath

    @property
    def lambdas(self):
        return self.pos.lambdas

    def bhat_path(self):
        """NoisePath for s -> B_{-s} on [0, T_neg]."""
        return self.neg

    def value_at(self, t):
        if t >= 0:
            return self.pos.B[self.pos.grid.index(t)]
        return self.neg.B[self.neg.grid.index(-t)]


def sample_two_sided(lambdas, N, t_max, n_steps, seed, d=1):
    pos = sample_qwiener(lambdas, N, TimeGrid(0.0, t_max, n_steps), child_seed(seed, "pos"), d=d)
    neg = sample_qwiener(lambdas, N, TimeGrid(0.0, t_max, n_steps), child_seed(seed, "neg"), d=d)
    return TwoSidedNoise(pos=pos, neg=neg)


# -- serialization ------------------------------------------------------------

def save_noise_path(path: NoisePath, target):
    """Versioned flat binary layout: header (seed, grid, N, lambdas), body rows."""
    buf = target if hasattr(target, "write") else open(target, "wb")
    try:
        K, N = path.grid.n_steps, path.n_components
        header = struct.pack(
            "<IqddIIIi",
            _FMT_VERSION, path.seed, path.grid.t_start, path.grid.t_end,
            K, N, path.d,
            -1 if path.reversal_anchor is None else int(path.grid.index(path.reversal_anchor)),
        )
        buf.write(header)
        buf.write(np.asarray(path.lambdas, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(path.B, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(path.W, dtype="<f8").tobytes())
    finally:
        if not hasattr(target, "write"):
            buf.close()


def load_noise_path(source):
    buf = source if hasattr(source, "read") else open(source, "rb")
    try:
        fmt = "<IqddIIIi"
        version, seed, t0, t1, K, N, d, anchor_idx = struct.unpack(
            fmt, buf.read(struct.calcsize(fmt)))
        if version != _FMT_VERSION:
            raise ValueError(f"unsupported noise path format version {version}")
        lambdas = tuple(np.frombuffer(buf.read(8 * N), dtype="<f8"))
        B = np.frombuffer(buf.read(8 * (K + 1) * N), dtype="<f8").reshape(K + 1, N).copy()
        W = np.frombuffer(buf.read(8 * (K + 1) * d), dtype="<f8").reshape(K + 1, d).copy()
        grid = TimeGrid(t0, t1, K)
        anchor = None if anchor_idx < 0 else grid.times[anchor_idx]
        return NoisePath(grid=grid, B=B, W=W, lambdas=lambdas, seed=seed,
                         reversal_anchor=anchor)
    finally:
        if not hasattr(source, "read"):
            buf.close()
