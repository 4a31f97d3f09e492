"""Backward time-stepping with regression-based conditional expectations.

One common backward-noise realization is shared by all Monte Carlo paths
(the forward noise W is i.i.d. across paths), so each conditional
expectation is a least-squares regression on basis functions of the forward
state alone and the backward increments enter the regression target as known
values. The solved panel is the object measurable with respect to the fixed
backward noise; an ensemble loop over independent backward realizations
provides law-level statistics.

The time discretization (explicit drift at the right Y-endpoint with an
optional fixed-point refinement, right-endpoint backward increments,
covariance read-out of the martingale integrand) is a choice of this
implementation; no scheme is prescribed by the underlying theory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import euler_maruyama_flow, FlowPanel
from .noise import NoisePath, TimeGrid, sample_w_increments
from .regression import RegressionBasis, build_step
from .utils import child_seed
from .weights import SpatialGrid, WeightSpec, cloud_rms


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    window: tuple
    n_paths: int
    basis: RegressionBasis
    picard: int = 2
    seed: int = 0
    starts: np.ndarray | None = None
    terminal_z: str = "hgrad"    # "hgrad" | "zero"
    blowup_guard: float = 1e6

    def with_window(self, window):
        return SolverConfig(window=window, n_paths=self.n_paths, basis=self.basis,
                            picard=self.picard, seed=self.seed, starts=self.starts,
                            terminal_z=self.terminal_z, blowup_guard=self.blowup_guard)


@dataclass
class SolutionPanel:
    """(Y, Z) indexed by (time step, path) plus the flow and noise references."""

    grid: TimeGrid
    Y: np.ndarray                  # (K+1, M)
    Z: np.ndarray                  # (K+1, M, d)
    flow: FlowPanel
    noise: NoisePath
    basis: RegressionBasis
    coeff_fields: list             # per-step regression coefficients for read-out
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.Y.shape[1]

    @property
    def starts(self):
        return self.flow.starts

    def field_at(self, step, points):
        """Evaluate the fitted conditional-expectation function u(t_step, .)."""
        coeffs = self.coeff_fields[step]
        if coeffs is None:
            raise SolverError("panel was solved without stored field coefficients")
        return self.basis.design(np.atleast_2d(points)) @ coeffs

    def diagonal_field(self, grid: SpatialGrid, step=0):
        return self.field_at(step, grid.nodes())

    def value_norms(self, weight: WeightSpec):
        """Per-time rho-weighted RMS of Y over the path cloud."""
        w = 1.0 / weight.rho(self.flow.starts)
        w = w / w.sum()
        Y = np.where(np.isfinite(self.Y), self.Y, 0.0)
        return np.sqrt(np.sum(Y**2 * w[None, :], axis=1))


def _terminal_z(coeffs, terminal_fn, x_T, mode):
    M, d = x_T.shape
    if mode == "zero":
        return np.zeros((M, d))
    grad = np.empty((M, d))
    delta = 1e-4 * (1.0 + np.abs(x_T))
    for axis in range(d):
        e = np.zeros((M, d))
        e[:, axis] = delta[:, axis]
        grad[:, axis] = (
            np.asarray(terminal_fn(x_T + e)) - np.asarray(terminal_fn(x_T - e))
        ) / (2.0 * delta[:, axis])
    sig = np.asarray(coeffs.sigma(x_T), dtype=float)
    return np.einsum("mji,mj->mi", sig, grad)


def tile_starts(nodes, n_paths):
    """Deterministic tiling of grid nodes into a start cloud of size n_paths."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    reps = int(np.ceil(n_paths / nodes.shape[0]))
    return np.tile(nodes, (reps, 1))[:n_paths]


def _backward_sweep(coeffs, noise, config, starts, dw, terminal, drift, store_fields):
    """Shared backward recursion; noise.grid is the solve window."""
    sub = noise.grid
    K, dt, times = sub.n_steps, sub.dt, sub.times
    h = terminal if terminal is not None else coeffs.h
    f = drift if drift is not None else coeffs.f

    flow = euler_maruyama_flow(coeffs, starts, sub, dw, guard=config.blowup_guard)
    X, valid = flow.X, flow.valid
    if not np.any(valid):
        raise SolverError("every forward path tripped the blow-up guard")
    db = noise.b_increments()
    g_list = coeffs.g[: min(len(coeffs.g), noise.n_components)]

    M = starts.shape[0]
    Y = np.full((K + 1, M), np.nan)
    Z = np.zeros((K + 1, M, noise.d))
    Y[K] = np.asarray(h(X[K]), dtype=float)
    Z[K] = _terminal_z(coeffs, h, X[K], config.terminal_z)
    if not np.all(np.isfinite(Y[K][valid])):
        raise SolverError("terminal values are not finite")

    coeff_fields = [None] * (K + 1)
    max_cond = 1.0

    for k in range(K - 1, -1, -1):
        step = build_step(config.basis, X[k][valid])
        max_cond = max(max_cond, step.cond)

        y_next = Y[k + 1][valid]
        g_sum = np.zeros_like(y_next)
        for j, gj in enumerate(g_list):
            gv = np.asarray(gj(times[k + 1], X[k + 1][valid], y_next), dtype=float)
            g_sum += gv * db[k, j]

        m_hat = step.fit_values(y_next)
        c_hat = step.fit_values(y_next - g_sum)
        f_expl = np.asarray(f(times[k], X[k][valid], y_next), dtype=float)
        y_fit = c_hat + dt * step.fit_values(f_expl)
        for _ in range(config.picard):
            y_fit = c_hat + dt * np.asarray(f(times[k], X[k][valid], y_fit), dtype=float)
        if not np.all(np.isfinite(y_fit)):
            raise SolverError(
                f"non-finite Y at step {k}; a polynomial drift requires truncation"
            )

        z_target = (y_next - m_hat)[:, None] * dw[k][valid] / dt
        Y[k][valid] = y_fit
        Z[k][valid] = step.fit_values(z_target)
        if store_fields:
            coeff_fields[k] = step.fit_coeffs(y_fit)

    if store_fields:
        coeff_fields[K] = build_step(config.basis, X[K][valid]).fit_coeffs(Y[K][valid])

    meta = {"dt": dt, "n_noise": len(g_list), "n_dropped": flow.n_blown,
            "picard": config.picard, "max_cond": float(max_cond), "seed": config.seed}
    return SolutionPanel(grid=sub, Y=Y, Z=Z, flow=flow, noise=noise,
                         basis=config.basis, coeff_fields=coeff_fields, meta=meta)


def solve_bdsde_lsmc(coeffs, noise: NoisePath, config: SolverConfig, *,
                     terminal=None, drift=None, store_fields=True):
    """Solve the backward equation on config.window against the shared noise.

    ``terminal`` overrides coeffs.h; ``drift`` overrides f, e.g. with a
    TruncatedDrift. Raises SolverError on rank-deficient regressions and on
    non-finite iterates (polynomial blow-up with an untruncated drift).
    """
    t_lo, t_hi = config.window
    ia, ib, sub = noise.grid.subgrid(t_lo, t_hi)
    window_noise = noise.window(t_lo, t_hi)

    if config.starts is not None:
        starts = tile_starts(config.starts, config.n_paths)
    else:
        starts = np.zeros((config.n_paths, noise.d))
    dw = sample_w_increments(sub, noise.d, starts.shape[0], child_seed(config.seed, "w"))
    panel = _backward_sweep(coeffs, window_noise, config, starts, dw, terminal, drift,
                            store_fields)
    panel.meta["window"] = (float(t_lo), float(t_hi))
    return panel


def solve_bdsde_ensemble(coeffs, noise_factory, config: SolverConfig, n_realizations, **kw):
    """Outer loop over independent backward-noise realizations (law-level statistics)."""
    panels = []
    for i in range(n_realizations):
        cfg = config.with_window(config.window)
        cfg.seed = child_seed(config.seed, "ensemble", i)
        panels.append(solve_bdsde_lsmc(coeffs, noise_factory(i), cfg, **kw))
    return panels


def representation_field(panel: SolutionPanel, grid: SpatialGrid, steps=None):
    """u(t_k, .) on the grid from the per-step fitted regression functions.

    The fitted function at an interior step estimates the conditional
    expectation given the forward state, i.e. the field value at that time;
    the diagonal of the solved panel is its step-0 slice.
    """
    nodes = grid.nodes()
    steps = list(range(panel.grid.n_steps + 1)) if steps is None else list(steps)
    out = np.empty((len(steps), nodes.shape[0]))
    for row, k in enumerate(steps):
        out[row] = panel.field_at(k, nodes)
    return out


def flow_identity_check(coeffs, noise: NoisePath, config: SolverConfig, s,
                        weight: WeightSpec, *, restart_subsample=2,
                        terminal=None, drift=None):
    """Weighted relative deviation of the restarted solve from the diagonal identity.

    The first solve runs on [t, T]; the second restarts at s from the
    simulated states X_s under the same noise. With an aligned restart both
    recursions are bitwise identical, so the restarted solve runs on a
    ``restart_subsample``-times coarser grid to expose the O(dt)
    discretization error of the identity.
    """
    t_lo, t_hi = config.window
    base = solve_bdsde_lsmc(coeffs, noise, config, terminal=terminal, drift=drift)
    ks = base.grid.index(s)
    y_at_s = base.Y[ks]
    x_at_s = base.flow.X[ks]

    ia, ib, fine = noise.grid.subgrid(s, t_hi)
    step = int(restart_subsample)
    if step < 1 or fine.n_steps % step != 0:
        raise SolverError("restart window is not divisible by the subsample factor")
    coarse = TimeGrid(s, t_hi, fine.n_steps // step)

    dw_full = sample_w_increments(base.grid, noise.d, base.n_paths, child_seed(config.seed, "w"))
    dw_tail = dw_full[ks:]
    dw_coarse = dw_tail.reshape(coarse.n_steps, step, base.n_paths, noise.d).sum(axis=1)
    db_tail = noise.b_increments(ia, ib)
    db_coarse = db_tail.reshape(coarse.n_steps, step, -1).sum(axis=1)
    coarse_noise = NoisePath(
        grid=coarse,
        B=np.vstack([np.zeros((1, noise.n_components)), np.cumsum(db_coarse, axis=0)]),
        W=np.zeros((coarse.n_steps + 1, noise.d)),
        lambdas=noise.lambdas, seed=noise.seed,
    )
    restarted = _backward_sweep(coeffs, coarse_noise, config, x_at_s, dw_coarse,
                                terminal, drift, store_fields=False)
    dev = cloud_rms(restarted.Y[0] - y_at_s, base.flow.starts, weight)
    scale = cloud_rms(y_at_s, base.flow.starts, weight)
    return dev / max(scale, 1e-300)
