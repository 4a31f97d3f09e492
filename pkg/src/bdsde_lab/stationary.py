"""Discounted infinite-horizon solves, the stationarity shift test, pull-back runs.

The infinite-horizon equation is approximated by finite-horizon solves with
zero terminal data on a geometric ladder of horizons; the discount enters
only through the reporting norms. Shifts are restricted to grid multiples of
dt so the shift identities stay exact. The pull-back experiment realizes the
solution started ever earlier from h through the backward grid solver on
[0, T] driven by the negative-time side of a two-sided master path, which is
the same backward path for every horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .ladders import LadderReport, _diff_norms
from .noise import NoisePath, TimeGrid, TwoSidedNoise, apply_shift, sample_qwiener
from .solver import SolverConfig, solve_bdsde_lsmc
from .spde import solve_backward_spde_fd
from .utils import child_seed, semilog_slope
from .weights import SpatialGrid, WeightSpec, cloud_rms, weighted_lp_norm


def check_discount_condition(mu_rate, K, p, L_list, l_tail=0.0):
    """Exact discount-rate inequality from the constants.

    ``mu_rate`` is the positive dissipativity rate (the negated monotonicity
    constant of the drift). Returns (passed, margin) with
    margin = 2 mu - K - p(2p-1) sum_j L_j.
    """
    total = float(sum(L_list)) + float(l_tail)
    margin = 2.0 * mu_rate - K - p * (2 * p - 1) * total
    return (mu_rate > 0 and K > 0 and margin > 0), margin


def largest_passing_discount(mu_rate, p, L_list, l_tail=0.0, headroom=0.1):
    """Largest K passing the discount condition with the given relative margin."""
    bound = 2.0 * mu_rate - p * (2 * p - 1) * (float(sum(L_list)) + float(l_tail))
    if bound <= 0:
        raise ValueError("no discount rate passes for these constants")
    return (1.0 - headroom) * bound


def _zero_terminal(x):
    return np.zeros(np.atleast_2d(x).shape[0])


def default_horizons(mu_rate, t0=0.0, factors=(2.0, 4.0, 8.0, 16.0)):
    """Geometric horizon ladder T_i = t0 + factors/mu matched to the decay rate."""
    if mu_rate <= 0:
        raise ValueError("horizon ladder needs a positive dissipativity rate")
    return [t0 + f / mu_rate for f in factors]


def solve_infinite_horizon(coeffs, noise: NoisePath, config: SolverConfig, horizons,
                           weight: WeightSpec, discount_K, *, drift=None, cauchy_tol=1e-2):
    """Horizon-truncation ladder with zero terminal data.

    Solves on [t, T_i] for each horizon, reports discounted-norm Cauchy
    differences on the overlap plus the exact zero-extension tail, and
    returns the largest-horizon panel as the limit candidate. A ladder that
    is not Cauchy at the largest horizon is reported, not fatal.
    """
    t0 = config.window[0]
    horizons = sorted(float(T) for T in horizons)
    panels = []
    for T in horizons:
        cfg = config.with_window((t0, T))
        panels.append(solve_bdsde_lsmc(coeffs, noise, cfg, terminal=_zero_terminal,
                                       drift=drift))
    diffs_m, diffs_s = [], []
    w = 1.0 / weight.rho(panels[0].flow.starts)
    w = w / w.sum()
    for a, b in zip(panels[1:], panels[:-1]):
        m, s = _diff_norms(a, b, weight, discount_K=discount_K)
        nb = b.Y.shape[0]
        tail_Y = np.where(np.isfinite(a.Y[nb:]), a.Y[nb:], 0.0)
        if tail_Y.size:
            # the shorter rung extends by zero beyond its horizon
            times_tail = a.grid.times[nb:]
            sq = np.sum(tail_Y**2 * w[None, :], axis=1) * np.exp(-discount_K * times_tail)
            m = float(np.sqrt(m**2 + np.trapezoid(sq, times_tail)))
            s = max(s, float(np.sqrt(np.max(sq))))
        diffs_m.append(m)
        diffs_s.append(s)
    rate, se = np.nan, np.nan
    pos = [(T, d) for T, d in zip(horizons[:-1], diffs_m) if d > 0]
    if len(pos) >= 2:
        rate, se = semilog_slope(*zip(*pos))
    decreasing = all(b <= a + 1e-15 for a, b in zip(diffs_m, diffs_m[1:]))
    report = LadderReport(parameter="T", values=horizons, diff_m_norm=diffs_m,
                          diff_s_norm=diffs_s, fitted_rate=rate, fitted_rate_se=se,
                          cauchy=decreasing and (not diffs_m or diffs_m[-1] <= cauchy_tol),
                          extras={"discount_K": discount_K})
    return panels[-1], report


@dataclass
class StationarityStats:
    pathwise: list                  # rows {"r": shift, "rel_dev": deviation}
    ks_statistic: float
    ks_pvalue: float
    sample_variance: float
    theory_variance: float | None
    n_master: int

    @property
    def variance_rel_error(self):
        if not self.theory_variance:
            return np.nan
        return abs(self.sample_variance - self.theory_variance) / self.theory_variance


def stationarity_test(coeffs, *, dt, horizon, shifts, lambdas, n_components, basis,
                      n_paths, master_seed, weight: WeightSpec, starts, picard=2,
                      t_pair=(0.0, 1.0), n_master=500, theory_variance=None, drift=None,
                      d=1):
    """Pathwise shift identity plus a two-sample distributional test.

    (a) For each shift r, the solve under the backward-shifted noise is
    compared with the solve started at r under the unshifted noise, both from
    one master path; the deviation is zero up to scheme tolerance for
    on-grid shifts. (b) Across independent master paths, the start-point
    values at the two times in ``t_pair`` are compared with a two-sample KS
    test and, when a closed form is supplied, against the exact Gaussian
    variance.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    max_shift = max([0.0] + [float(r) for r in shifts])
    span = horizon + max(max_shift, max(t_pair))
    n_steps = int(round(span / dt))
    master = sample_qwiener(lambdas, n_components, TimeGrid(0.0, span, n_steps),
                            master_seed, d=d)
    cfg = SolverConfig(window=(0.0, horizon), n_paths=n_paths, basis=basis,
                       picard=picard, seed=child_seed(master_seed, "stationarity"),
                       starts=starts)

    pathwise = []
    ref_panel = solve_bdsde_lsmc(coeffs, master, cfg, terminal=_zero_terminal, drift=drift)
    for r in shifts:
        shifted = apply_shift(master, float(r), "theta_prime")
        a = solve_bdsde_lsmc(coeffs, shifted, cfg, terminal=_zero_terminal, drift=drift)
        b = solve_bdsde_lsmc(coeffs, master, cfg.with_window((float(r), float(r) + horizon)),
                             terminal=_zero_terminal, drift=drift)
        dev = cloud_rms(a.Y[0] - b.Y[0], a.flow.starts, weight)
        scale = max(cloud_rms(b.Y[0], b.flow.starts, weight), 1e-300)
        pathwise.append({"r": float(r), "rel_dev": dev / scale,
                         "bitwise_equal": bool(np.array_equal(a.Y[0], b.Y[0]))})
    del ref_panel

    t_a, t_b = t_pair
    span_b = t_b + horizon
    n_steps_b = int(round(span_b / dt))
    samples_a = np.empty(n_master)
    samples_b = np.empty(n_master)
    for i in range(n_master):
        m_i = sample_qwiener(lambdas, n_components, TimeGrid(0.0, span_b, n_steps_b),
                             child_seed(master_seed, "master", i), d=d)
        cfg_i = SolverConfig(window=(t_a, t_a + horizon), n_paths=n_paths, basis=basis,
                             picard=picard, seed=child_seed(master_seed, "solve", i),
                             starts=starts[:1])
        pa = solve_bdsde_lsmc(coeffs, m_i, cfg_i, terminal=_zero_terminal, drift=drift)
        pb = solve_bdsde_lsmc(coeffs, m_i, cfg_i.with_window((t_b, t_b + horizon)),
                              terminal=_zero_terminal, drift=drift)
        samples_a[i] = pa.Y[0][0]
        samples_b[i] = pb.Y[0][0]
    ks = stats.ks_2samp(samples_a, samples_b)
    pooled = np.concatenate([samples_a, samples_b])
    return StationarityStats(
        pathwise=pathwise, ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        sample_variance=float(np.var(pooled, ddof=1)),
        theory_variance=theory_variance, n_master=n_master,
    )


@dataclass
class PullbackSeries:
    horizons: list
    fields: np.ndarray            # (n_horizons, n_nodes): solution at the reference time
    diff_norms: list
    fitted_rate: float
    fitted_rate_se: float
    candidate_distance: float
    candidate_field: np.ndarray

    def rows(self):
        out = []
        for i, d in enumerate(self.diff_norms):
            out.append({"T": self.horizons[i + 1], "diff_norm": d,
                        "fitted_rate": self.fitted_rate,
                        "candidate_distance": self.candidate_distance})
        return out


def pullback_experiment(coeffs, h_init, horizons, two_sided: TwoSidedNoise,
                        grid: SpatialGrid, weight: WeightSpec, *,
                        candidate_config: SolverConfig | None = None,
                        discount_K=None, drift=None):
    """Pull-back convergence of the grid solution started ever earlier from h.

    Starting from h at time -T with the master noise and evaluating at time 0
    equals, after the time change, solving the backward equation on [0, T]
    with terminal value h against the fixed backward path s -> B_{-s}. The
    series is compared in the weighted L2 norm and against the
    infinite-horizon Monte Carlo candidate solved on the same backward path.
    """
    bhat = two_sided.bhat_path()
    horizons = sorted(float(T) for T in horizons)
    if horizons[-1] > bhat.grid.t_end + 1e-9:
        raise ValueError("pull-back window exits the stored two-sided path")
    fields = []
    for T in horizons:
        seq = solve_backward_spde_fd(coeffs, bhat, grid, terminal=h_init, drift=drift,
                                     window=(0.0, T))
        fields.append(seq.values[0])
    fields = np.asarray(fields)

    diffs = [weighted_lp_norm(b - a, 2, weight, grid)
             for a, b in zip(fields[:-1], fields[1:])]
    rate, se = np.nan, np.nan
    pos = [(T, d) for T, d in zip(horizons[:-1], diffs) if d > 0]
    if len(pos) >= 2:
        rate, se = semilog_slope(*zip(*pos))

    candidate_field = np.full(grid.nodes().shape[0], np.nan)
    distance = np.nan
    if candidate_config is not None:
        cfg = candidate_config.with_window((0.0, horizons[-1]))
        panel = solve_bdsde_lsmc(coeffs, bhat, cfg, terminal=_zero_terminal, drift=drift)
        candidate_field = panel.field_at(0, grid.nodes())
        distance = weighted_lp_norm(fields[-1] - candidate_field, 2, weight, grid)
    return PullbackSeries(horizons=horizons, fields=fields, diff_norms=diffs,
                          fitted_rate=rate, fitted_rate_se=se,
                          candidate_distance=float(distance),
                          candidate_field=candidate_field)
