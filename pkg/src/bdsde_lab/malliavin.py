"""Backward-noise derivative estimation and the compactness moduli.

The derivative of the solution in the direction of backward-noise component
j solves a linear backward equation on [s, theta]: its value at s = theta is
the noise coefficient evaluated along the base solution, the drift slope is
frozen from the base solve, and the derivative vanishes for times beyond
theta. Derivatives are taken with respect to the backward noise only.

An independent bump-and-resimulate oracle perturbs the stored backward path
by a step profile up to theta and re-solves with the identical forward
noise; Richardson extrapolation across the bump sizes removes the leading
nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .noise import NoisePath
from .regression import build_step
from .solver import SolverConfig, SolutionPanel, solve_bdsde_lsmc
from .utils import child_seed, log_slope, richardson
from .weights import SpatialGrid, WeightSpec, cloud_rms


@dataclass
class MalliavinPanel:
    """Derivative values D[theta slice][time step][path] for one noise component."""

    thetas: list
    component: int
    D: np.ndarray                # (n_thetas, K+1, M)
    DZ: np.ndarray | None
    provenance: dict = field(default_factory=dict)
    coeff_fields: list | None = None   # per (theta, step) regression coefficients

    def slice_at(self, theta):
        for i, th in enumerate(self.thetas):
            if abs(th - theta) < 1e-12:
                return self.D[i]
        raise KeyError(theta)


def solve_malliavin_linearized(panel: SolutionPanel, thetas, coeffs, *, component=0,
                               drift_slope=None, store_fields=False):
    """Solve the linear backward equation for the derivative at each theta.

    ``drift_slope`` overrides the y-slope of the drift (e.g. the clamped
    slope of a truncated drift); by default coeffs.df_dy is frozen along the
    base solution. Values are exactly zero for time steps beyond theta.
    """
    grid = panel.grid
    K, dt, times = grid.n_steps, grid.dt, grid.times
    X, valid = panel.flow.X, panel.flow.valid
    M = panel.n_paths
    db = panel.noise.b_increments(0, K)
    slope = drift_slope if drift_slope is not None else coeffs.df_dy
    gj = coeffs.g[component]
    dg_list = coeffs.dg_dy if coeffs.dg_dy else ()
    dw = _reconstruct_dw(panel)

    thetas = [float(t) for t in thetas]
    out = np.zeros((len(thetas), K + 1, M))
    out_z = np.zeros((len(thetas), K + 1, M, noise.d))
    coeff_store = [] if store_fields else None

    for ti, theta in enumerate(thetas):
        m = grid.index(theta)
        D = np.zeros((K + 1, M))
        DZ = np.zeros((K + 1, M, noise.d))
        y_base = panel.Y[m][valid]
        D[m][valid] = np.asarray(gj(theta, X[m][valid], y_base), dtype=float)
        fields = [None] * (K + 1)
        for k in range(m - 1, -1, -1):
            step = build_step(panel.basis, X[k][valid])
            d_next = D[k + 1][valid]
            y_next = panel.Y[k + 1][valid]
            g_term = np.zeros_like(d_next)
            for j, dgj in enumerate(dg_list[: panel.meta.get("n_noise", len(dg_list))]):
                dgv = np.asarray(dgj(times[k + 1], X[k + 1][valid], y_next), dtype=float)
                g_term += dgv * d_next * db[k, j]
            slope_v = np.asarray(slope(times[k], X[k][valid], y_next), dtype=float)
            target = d_next + dt * slope_v * d_next - g_term
            m_hat = step.fit_values(d_next)
            d_fit = step.fit_values(target)
            D[k][valid] = d_fit
            DZ[k][valid] = step.fit_values((d_next - m_hat)[:, None] * dw[k][valid] / dt)
            if store_fields:
                fields[k] = step.fit_coeffs(d_fit)
        out[ti] = D
        out_z[ti] = DZ
        if store_fields:
            coeff_store.append(fields)

    return MalliavinPanel(thetas=thetas, component=component, D=out, DZ=out_z,
                          provenance={"method": "linearized-solve"},
                          coeff_fields=coeff_store)


def _reconstruct_dw(panel: SolutionPanel):
    from .noise import sample_w_increments

    return sample_w_increments(panel.grid, panel.noise.d, panel.n_paths,
                               child_seed(panel.meta["seed"], "w"))


def bump_oracle(coeffs, noise: NoisePath, config: SolverConfig, thetas, *,
                component=0, eps_list=(1e-3, 5e-4, 2.5e-4), terminal=None, drift=None,
                roundoff_floor=1e-13):
    """Directional-derivative estimate by bump-and-resimulate.

    Adds the step profile eps * 1_{[0, theta]} to the stored backward
    component and re-solves with the same seed (identical forward noise);
    returns Richardson-extrapolated (Y^eps - Y)/eps panels per theta.
    Differences falling below the round-off floor are reported.
    """
    base = solve_bdsde_lsmc(coeffs, noise, config, terminal=terminal, drift=drift,
                            store_fields=False)
    t_lo, t_hi = config.window
    thetas = [float(t) for t in thetas]
    K, M = base.grid.n_steps, base.n_paths
    out = np.zeros((len(thetas), K + 1, M))
    warnings = []

    for ti, theta in enumerate(thetas):
        m_global = noise.grid.index(theta)
        estimates = []
        for eps in eps_list:
            bumped_B = noise.B.copy()
            bumped_B[: m_global + 1, component] += eps
            bumped = NoisePath(grid=noise.grid, B=bumped_B, W=noise.W, lambdas=noise.lambdas,
                               seed=noise.seed, reversal_anchor=noise.reversal_anchor,
                               trace_bound=noise.trace_bound)
            pert = solve_bdsde_lsmc(coeffs, bumped, config, terminal=terminal, drift=drift,
                                    store_fields=False)
            delta = (pert.Y - base.Y) / eps
            if np.nanmax(np.abs(pert.Y - base.Y)) < roundoff_floor:
                warnings.append({"theta": theta, "eps": eps,
                                 "issue": "difference below round-off floor"})
            estimates.append(np.where(np.isfinite(delta), delta, 0.0))
        out[ti] = richardson(estimates)
    return MalliavinPanel(thetas=thetas, component=component, D=out, DZ=None,
                          provenance={"method": "bump-oracle", "eps_list": tuple(eps_list),
                                      "warnings": warnings})


@dataclass
class CompactnessReport:
    family_param: list
    cond1_stats: list            # time-integrated H1-type statistic per family member
    cond2_stats: list            # D^{1,2}-type statistic per family member
    cond1_trend: dict
    cond2_trend: dict
    shift_moduli: list           # rows {"h": , "modulus": }
    shift_slope: float
    shift_slope_se: float
    malliavin_moduli: list       # rows {"h": , "hprime": , "modulus": }
    malliavin_slope: float
    malliavin_slope_se: float
    end_window_trend: list       # condition (3i)/(4i) samples over shrinking windows

    def slope_ci(self, se_mult=2.0):
        return (self.shift_slope - se_mult * self.shift_slope_se,
                self.shift_slope + se_mult * self.shift_slope_se)


def _trend_test(params, values):
    """One-sided increasing-trend test: slope of value against parameter."""
    from scipy import stats as st

    x = np.asarray(params, dtype=float)
    y = np.asarray(values, dtype=float)
    res = st.linregress(x, y)
    # one-sided p-value for slope > 0
    t_stat = res.slope / res.stderr if res.stderr > 0 else np.inf * np.sign(res.slope)
    df = len(x) - 2
    p_one_sided = 1.0 - st.t.cdf(t_stat, df) if df > 0 else np.nan
    return {"slope": float(res.slope), "stderr": float(res.stderr),
            "p_increasing": float(p_one_sided),
            "increasing_at_95": bool(p_one_sided < 0.05 if np.isfinite(p_one_sided) else False)}


def _phi_pairing(field_values, phi_vals, qw):
    return field_values @ (phi_vals * qw)


def compactness_diagnostics(panels_by_param, weight: WeightSpec, grid: SpatialGrid,
                            battery, *, h_steps=(2, 4, 8, 16), window_fracs=(0.3, 0.2, 0.1),
                            malliavin_by_param=None, theta_quad=None,
                            hprime_steps=None):
    """Estimate the four relative-compactness statistics over a solution family.

    ``panels_by_param`` maps the family parameter (truncation level) to a
    solved panel; all panels share the identical noise. Expectations are
    Monte Carlo means over the forward noise at the fixed backward
    realization; callers average the returned moduli over backward-noise
    realizations for law-level statements. The end-window statistics of the
    compactness criterion are reported as a trend over a few window sizes,
    not as a verdict.
    """
    params = sorted(panels_by_param)
    if len(params) == 1:
        import warnings as _w

        _w.warn("compactness family has a single member; suprema degenerate")
    first = panels_by_param[params[0]]
    K = first.grid.n_steps
    dt = first.grid.dt
    times = first.grid.times
    nodes = grid.nodes()
    qw = grid.quad_weights()
    w_cloud = 1.0 / weight.rho(first.flow.starts)
    w_cloud = w_cloud / w_cloud.sum()

    # condition (1): time-integrated weighted (|Y|^2 + |Z|^2) statistic
    cond1 = []
    for p in params:
        panel = panels_by_param[p]
        Y = np.where(np.isfinite(panel.Y), panel.Y, 0.0)
        Zs = np.where(np.isfinite(panel.Z), panel.Z, 0.0)
        dens = np.sum((Y**2 + np.sum(Zs**2, axis=2)) * w_cloud[None, :], axis=1)
        cond1.append(float(np.trapezoid(dens, times)))

    # condition (2): |u^phi|^2 + int ||D_theta u^phi||^2 dtheta, integrated in s
    cond2 = []
    phi0 = next(iter(battery.values()))
    phi_vals = phi0(nodes)
    for p in params:
        panel = panels_by_param[p]
        u_phi = np.array([_phi_pairing(panel.field_at(k, nodes), phi_vals, qw)
                          for k in range(K + 1)])
        d_part = 0.0
        if malliavin_by_param is not None:
            mal = malliavin_by_param[p]
            d_phi_sq = np.zeros(K + 1)
            for i, theta in enumerate(mal.thetas):
                d_field = np.array([
                    _phi_pairing(_cloud_to_grid(panel, mal.D[i, k], nodes), phi_vals, qw)
                    for k in range(K + 1)
                ])
                d_phi_sq += d_field**2 * _theta_weight(mal.thetas, i)
            d_part = float(np.trapezoid(d_phi_sq, times))
        cond2.append(float(np.trapezoid(u_phi**2, times)) + d_part)

    cond1_trend = _trend_test(params, cond1)
    cond2_trend = _trend_test(params, cond2)

    # condition (3ii): time-shift modulus of u^phi on the interior window
    alpha = int(0.1 * K)
    beta = K - max(h_steps) - alpha
    shift_rows = []
    u_phi_first = np.array([_phi_pairing(first.field_at(k, nodes), phi_vals, qw)
                            for k in range(K + 1)])
    for m in h_steps:
        seg = slice(alpha, beta)
        gaps = (u_phi_first[alpha + m : beta + m] - u_phi_first[seg]) ** 2
        shift_rows.append({"h": m * dt, "modulus": float(np.sum(gaps) * dt)})
    shift_slope, shift_se = log_slope([r["h"] for r in shift_rows],
                                      [max(r["modulus"], 1e-300) for r in shift_rows])

    # condition (4ii): Malliavin-shift modulus, sampled on the theta grid
    mal_rows = []
    mal_slope, mal_se = np.nan, np.nan
    if malliavin_by_param is not None:
        mal = malliavin_by_param[params[-1]]
        panel = panels_by_param[params[-1]]
        hps = hprime_steps if hprime_steps is not None else h_steps
        d_phi = np.array([
            [_phi_pairing(_cloud_to_grid(panel, mal.D[i, k], nodes), phi_vals, qw)
             for k in range(K + 1)]
            for i in range(len(mal.thetas))
        ])
        th_idx = np.array([first.grid.index(t) for t in mal.thetas])
        for m in hps:
            vals = []
            for i, ki in enumerate(th_idx):
                js = np.nonzero(np.abs(th_idx - (ki + m)) == 0)[0]
                if not len(js):
                    continue
                j = js[0]
                seg_lo, seg_hi = alpha, beta
                gap = (d_phi[j, seg_lo + m : seg_hi + m] - d_phi[i, seg_lo:seg_hi]) ** 2
                vals.append(np.sum(gap) * dt)
            if vals:
                mal_rows.append({"h": m * dt, "hprime": m * dt,
                                 "modulus": float(np.mean(vals))})
        if len(mal_rows) >= 2:
            mal_slope, mal_se = log_slope([r["h"] + r["hprime"] for r in mal_rows],
                                          [max(r["modulus"], 1e-300) for r in mal_rows])

    # conditions (3i)/(4i): mass outside shrinking interior windows, as a trend
    end_rows = []
    for frac in window_fracs:
        lo = int(frac * K)
        hi = K - lo
        outside = np.concatenate([u_phi_first[:lo], u_phi_first[hi:]])
        end_rows.append({"window_frac": frac,
                         "outside_mass": float(np.sum(outside**2) * dt)})

    return CompactnessReport(
        family_param=[float(p) for p in params],
        cond1_stats=cond1, cond2_stats=cond2,
        cond1_trend=cond1_trend, cond2_trend=cond2_trend,
        shift_moduli=shift_rows, shift_slope=float(shift_slope),
        shift_slope_se=float(shift_se),
        malliavin_moduli=mal_rows, malliavin_slope=float(mal_slope),
        malliavin_slope_se=float(mal_se),
        end_window_trend=end_rows,
    )


def _cloud_to_grid(panel: SolutionPanel, values, nodes):
    """Project per-path values onto the grid through the panel's basis."""
    step = build_step(panel.basis, panel.flow.starts[panel.flow.valid])
    coeffs = step.fit_coeffs(values[panel.flow.valid])
    return panel.basis.design(np.atleast_2d(nodes)) @ coeffs


def _theta_weight(thetas, i):
    """Trapezoid weight of theta_i in the quadrature over the theta grid."""
    if len(thetas) == 1:
        return 1.0
    if i == 0:
        return 0.5 * (thetas[1] - thetas[0])
    if i == len(thetas) - 1:
        return 0.5 * (thetas[-1] - thetas[-2])
    return 0.5 * (thetas[i + 1] - thetas[i - 1])


def oracle_agreement(linearized: MalliavinPanel, oracle: MalliavinPanel, panel,
                     weight: WeightSpec, *, s_steps=None):
    """Relative disagreement of the two derivative estimators per theta."""
    rows = []
    starts = panel.flow.starts
    for i, theta in enumerate(linearized.thetas):
        m = panel.grid.index(theta)
        steps = s_steps if s_steps is not None else range(0, m + 1)
        devs, scales = [], []
        for k in steps:
            if k > m:
                continue
            devs.append(cloud_rms(linearized.D[i, k] - oracle.D[i, k], starts, weight))
            scales.append(cloud_rms(oracle.D[i, k], starts, weight))
        scale = max(np.mean(scales), 1e-300)
        rows.append({"theta": float(theta),
                     "rel_disagreement": float(np.mean(devs) / scale)})
    return rows
