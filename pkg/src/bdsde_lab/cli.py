"""Configuration-driven experiment runner.

One YAML config file per run; no positional parameters beyond the subcommand
and the config path, plus --seed and --out overrides. Unknown keys are
rejected. Every run writes a manifest echoing the fully resolved config and
every output file; reruns with identical config and seed are byte-identical.

Exit codes: 0 success, 2 config/schema violation, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import yaml

from . import coefficients as co
from . import presets as pr
from .conditions import Sampler, check_conditions
from .forward import euler_maruyama_flow
from .io_utils import write_csv, write_error_record, write_field_csv, write_manifest
from .ladders import drift_ladder, noise_dimension_ladder
from .malliavin import bump_oracle, compactness_diagnostics, oracle_agreement, \
    solve_malliavin_linearized
from .noise import TimeGrid, sample_qwiener, sample_two_sided, sample_w_increments
from .regression import RegressionBasis
from .solver import SolverConfig, solve_bdsde_lsmc, representation_field, tile_starts
from .spde import default_battery, solve_backward_spde_fd, weak_form_residual, \
    correspondence_error
from .stationary import (check_discount_condition, default_horizons, pullback_experiment,
                         solve_infinite_horizon, stationarity_test)
from .truncation import TruncatedDrift
from .utils import child_seed
from .weights import SpatialGrid, WeightSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

EXPERIMENTS = (
    "check-conditions", "simulate-forward", "solve-bdsde", "drift-ladder",
    "noise-ladder", "solve-spde", "correspondence", "infinite-horizon",
    "stationarity", "pullback", "malliavin", "compactness",
)


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


_GLOBAL_KEYS = {
    "experiment", "seed", "out", "preset", "preset_args", "coefficients", "overrides",
    "weight", "grid", "timegrid", "noise", "paths", "basis", "picard", "truncation",
}
_EXPERIMENT_KEYS = {
    "check-conditions": {"sampler", "discount"},
    "simulate-forward": {"starts"},
    "solve-bdsde": {"field_times"},
    "drift-ladder": {"ladder"},
    "noise-ladder": {"ladder"},
    "solve-spde": {"residual", "field_times"},
    "correspondence": {"compare_grid", "field_times"},
    "infinite-horizon": {"discount", "ladder"},
    "stationarity": {"discount", "stationarity"},
    "pullback": {"discount", "pullback"},
    "malliavin": {"malliavin"},
    "compactness": {"compactness", "ladder"},
}

_DEFAULTS = {
    "seed": 0,
    "out": None,
    "paths": 4096,
    "picard": 2,
    "truncation": None,
    "basis": {"family": "poly", "degree": 3, "ridge": 1e-8},
    "grid": {"R": 4.0, "h_x": 0.1},
    "timegrid": {"t0": 0.0, "T": 1.0, "dt": 0.01},
    "noise": {"lambdas": [1.0], "N": 1},
}


def _reject_unknown(mapping, allowed, context):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}; "
                          f"allowed: {sorted(allowed)}")


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "experiment" not in raw:
        raise ConfigError("config is missing the 'experiment' key")
    exp = raw["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; known: {list(EXPERIMENTS)}")
    _reject_unknown(raw, _GLOBAL_KEYS | _EXPERIMENT_KEYS[exp], "config root")
    cfg = dict(_DEFAULTS)
    cfg.update(raw)
    return cfg


def build_coefficients(cfg):
    if "preset" in cfg and "coefficients" in cfg:
        raise ConfigError("give either 'preset' or 'coefficients', not both")
    if "preset" in cfg:
        kwargs = cfg.get("preset_args", {}) or {}
        try:
            coeffs = pr.get_preset(cfg["preset"], **kwargs)
        except (KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
    elif "coefficients" in cfg:
        coeffs = _inline_coefficients(cfg["coefficients"])
    else:
        raise ConfigError("config needs a 'preset' or an inline 'coefficients' block")
    if "overrides" in cfg and cfg["overrides"]:
        coeffs = _apply_overrides(coeffs, cfg["overrides"])
    return coeffs


_COEFF_KEYS = {"f_poly", "g", "b", "sigma", "h", "p", "mu", "L", "f0"}


def _make_g_specs(specs):
    gs, dgs, ljs = [], [], []
    for spec in specs:
        if isinstance(spec, (int, float)):
            g, dg, lj = co.constant_g(float(spec))
        elif "const" in spec:
            g, dg, lj = co.constant_g(float(spec["const"]))
        elif "affine" in spec:
            c, a = spec["affine"]
            g, dg, lj = co.affine_g(float(c), float(a))
        else:
            raise ConfigError(f"unknown g spec {spec!r}")
        gs.append(g)
        dgs.append(dg)
        ljs.append(lj)
    return tuple(gs), tuple(dgs), tuple(ljs)


def _make_b(spec, d):
    kind = spec.get("kind", "zero") if isinstance(spec, dict) else spec
    if kind == "zero":
        return co.zero_drift(d)
    if kind == "linear":
        return co.linear_drift(float(spec["rate"]), d)
    raise ConfigError(f"unknown drift spec {spec!r}")


def _make_sigma(spec, d):
    if isinstance(spec, (int, float)):
        return co.constant_sigma(float(spec), d)
    kind = spec.get("kind", "const")
    if kind == "const":
        return co.constant_sigma(float(spec["value"]), d)
    if kind == "proportional":
        return co.proportional_sigma(float(spec["value"]), d)
    raise ConfigError(f"unknown sigma spec {spec!r}")


def _make_h(spec):
    if isinstance(spec, dict):
        if "const" in spec:
            c = float(spec["const"])
            return lambda x: np.full(np.atleast_2d(x).shape[0], c)
        raise ConfigError(f"unknown h spec {spec!r}")
    if spec not in pr.H_PRESETS:
        raise ConfigError(f"unknown h preset {spec!r}; known: {sorted(pr.H_PRESETS)}")
    return pr.H_PRESETS[spec]


def _inline_coefficients(block, d=1):
    _reject_unknown(block, _COEFF_KEYS, "coefficients block")
    if "f_poly" not in block:
        raise ConfigError("inline coefficients need 'f_poly'")
    f, df = co.polynomial_reaction(block["f_poly"])
    g, dg, lj = _make_g_specs(block.get("g", []))
    f0 = pr._f0_one if block.get("f0", "one") == "one" else pr._f0_zero
    return co.CoefficientSet(
        b=_make_b(block.get("b", "zero"), d),
        sigma=_make_sigma(block.get("sigma", 1.0), d),
        f=f, df_dy=df, f0=f0, g=g, dg_dy=dg,
        h=_make_h(block.get("h", "identity")),
        L=float(block.get("L", 1.0)), L_j=lj,
        mu=float(block.get("mu", 0.0)), p=int(block.get("p", 2)),
        name="inline",
    )


def _apply_overrides(coeffs, block, d=1):
    _reject_unknown(block, _COEFF_KEYS, "overrides block")
    fields = {}
    if "f_poly" in block:
        fields["f"], fields["df_dy"] = co.polynomial_reaction(block["f_poly"])
    if "g" in block:
        fields["g"], fields["dg_dy"], fields["L_j"] = _make_g_specs(block["g"])
    if "b" in block:
        fields["b"] = _make_b(block["b"], d)
    if "sigma" in block:
        fields["sigma"] = _make_sigma(block["sigma"], d)
    if "h" in block:
        fields["h"] = _make_h(block["h"])
    for key in ("p", "mu", "L"):
        if key in block:
            fields[key] = block[key]
    base = {f: getattr(coeffs, f) for f in
            ("b", "sigma", "f", "df_dy", "f0", "g", "dg_dy", "h", "L", "L_j",
             "l_tail_sq", "mu", "p", "name")}
    base.update(fields)
    return co.CoefficientSet(**base)


def build_weight(cfg, coeffs):
    block = cfg.get("weight")
    if block:
        _reject_unknown(block, {"q", "d", "p"}, "weight block")
        return WeightSpec(q=float(block["q"]), d=int(block.get("d", 1)),
                          p=block.get("p"))
    return WeightSpec(q=float(1 + 8 * coeffs.p + 1), d=1, p=coeffs.p)


def build_grid(cfg):
    block = cfg["grid"]
    _reject_unknown(block, {"R", "h_x", "d"}, "grid block")
    return SpatialGrid(d=int(block.get("d", 1)), R=float(block["R"]), h_x=float(block["h_x"]))


def build_timegrid(cfg):
    block = cfg["timegrid"]
    _reject_unknown(block, {"t0", "T", "dt"}, "timegrid block")
    t0, T, dt = float(block.get("t0", 0.0)), float(block["T"]), float(block["dt"])
    n = int(round((T - t0) / dt))
    if abs(n * dt - (T - t0)) > 1e-9:
        raise ConfigError("timegrid span must be an integer multiple of dt")
    return TimeGrid(t0, T, n)


def build_basis(cfg, grid: SpatialGrid):
    block = cfg["basis"]
    _reject_unknown(block, {"family", "degree", "ridge", "knots", "span"}, "basis block")
    family = block.get("family", "poly")
    ridge = float(block.get("ridge", 1e-8))
    if family == "poly":
        return RegressionBasis(family="poly", degree=int(block.get("degree", 3)),
                               ridge=ridge, scale=max(grid.R / 2.0, 1.0))
    if family == "piecewise_linear":
        n_knots = int(block.get("knots", 33))
        span = float(block.get("span", grid.R * 1.1))
        return RegressionBasis(family="piecewise_linear",
                               knots=tuple(np.linspace(-span, span, n_knots)), ridge=ridge)
    raise ConfigError(f"unknown basis family {family!r}")


def build_noise(cfg, tgrid, seed, d=1):
    block = cfg["noise"]
    _reject_unknown(block, {"lambdas", "N", "trace_bound"}, "noise block")
    lambdas = tuple(float(v) for v in block["lambdas"])
    N = int(block.get("N", len(lambdas)))
    return sample_qwiener(lambdas, N, tgrid, child_seed(seed, "master-noise"), d=d,
                          trace_bound=block.get("trace_bound"))


def _solver_config(cfg, grid, seed):
    return SolverConfig(
        window=(cfg["timegrid"].get("t0", 0.0), cfg["timegrid"]["T"]),
        n_paths=int(cfg["paths"]), basis=build_basis(cfg, grid),
        picard=int(cfg["picard"]), seed=child_seed(seed, "solver"),
        starts=grid.nodes(),
    )


def _maybe_truncated(cfg, coeffs):
    if cfg.get("truncation") is None:
        return None
    return TruncatedDrift(coeffs.f, coeffs.df_dy, float(cfg["truncation"]))


# -- experiment dispatchers ---------------------------------------------------

def _run_check_conditions(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    sampler_block = cfg.get("sampler", {}) or {}
    _reject_unknown(sampler_block, {"n_samples", "x_range", "y_range", "seed"}, "sampler")
    sampler = Sampler(n_samples=int(sampler_block.get("n_samples", 10_000)),
                      x_range=float(sampler_block.get("x_range", 5.0)),
                      y_range=float(sampler_block.get("y_range", 5.0)),
                      seed=int(sampler_block.get("seed", seed)))
    discount = (cfg.get("discount") or {}).get("K")
    report = check_conditions(coeffs, sampler, weight=weight, discount_K=discount)
    outputs = []
    path = os.path.join(out, "conditions.txt")
    with open(path, "w") as fh:
        fh.write(report.to_text())
    outputs.append(path)
    path = os.path.join(out, "conditions.json")
    with open(path, "w") as fh:
        fh.write(report.to_json())
    outputs.append(path)
    ok = report.all_pass
    return outputs, {"all_pass": ok}, EXIT_OK if ok else EXIT_NUMERICAL


def _run_simulate_forward(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    starts = tile_starts(grid.nodes(), int(cfg["paths"]))
    dw = sample_w_increments(tgrid, grid.d, starts.shape[0], child_seed(seed, "w"))
    panel = euler_maruyama_flow(coeffs, starts, tgrid, dw)
    rows = []
    for k, t in enumerate(tgrid.times):
        rows.append({"t": t, "mean": float(panel.X[k, :, 0].mean()),
                     "var": float(panel.X[k, :, 0].var()),
                     "n_invalid": int(np.sum(~panel.valid))})
    outputs = [write_csv(os.path.join(out, "flow_moments.csv"), rows,
                         ["t", "mean", "var", "n_invalid"])]
    return outputs, {"n_blown": panel.n_blown}, EXIT_OK


def _run_solve_bdsde(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    config = _solver_config(cfg, grid, seed)
    panel = solve_bdsde_lsmc(coeffs, noise, config, drift=_maybe_truncated(cfg, coeffs))
    norms = panel.value_norms(weight)
    rows = [{"t": t, "y_norm": float(n),
             "z_norm": float(np.sqrt(np.nanmean(panel.Z[k] ** 2)))}
            for k, (t, n) in enumerate(zip(panel.grid.times, norms))]
    outputs = [write_csv(os.path.join(out, "panel_norms.csv"), rows,
                         ["t", "y_norm", "z_norm"])]
    field_steps = _field_steps(cfg, panel.grid)
    fields = representation_field(panel, grid, steps=field_steps)
    outputs.append(write_field_csv(os.path.join(out, "field.csv"),
                                   panel.grid.times[field_steps], grid.nodes(), fields))
    return outputs, {"max_cond": panel.meta["max_cond"],
                     "n_dropped": panel.meta["n_dropped"]}, EXIT_OK


def _field_steps(cfg, tgrid):
    times = cfg.get("field_times")
    if not times:
        return [0, tgrid.n_steps // 2, tgrid.n_steps]
    return [tgrid.index(float(t)) for t in times]


def _run_drift_ladder(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    ladder_block = cfg.get("ladder") or {}
    _reject_unknown(ladder_block, {"n_list", "cauchy_tol"}, "ladder block")
    n_list = ladder_block.get("n_list")
    if not n_list:
        raise ConfigError("drift-ladder needs ladder.n_list")
    report = drift_ladder(coeffs, n_list, noise, _solver_config(cfg, grid, seed), weight,
                          cauchy_tol=float(ladder_block.get("cauchy_tol", 1e-3)))
    outputs = [write_csv(os.path.join(out, "ladder.csv"), report.rows(),
                         ["n", "diff_M_norm", "diff_S_norm", "fitted_rate"])]
    return outputs, {"cauchy": report.cauchy, "sup_Y": report.extras["sup_Y"]}, EXIT_OK


def _run_noise_ladder(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    ladder_block = cfg.get("ladder") or {}
    _reject_unknown(ladder_block, {"N_list", "cauchy_tol"}, "ladder block")
    N_list = ladder_block.get("N_list")
    if not N_list:
        raise ConfigError("noise-ladder needs ladder.N_list")
    report = noise_dimension_ladder(coeffs, N_list, noise, _solver_config(cfg, grid, seed),
                                    weight,
                                    cauchy_tol=float(ladder_block.get("cauchy_tol", 1e-3)))
    rows = report.rows()
    for row, tail, ratio in zip(rows, report.extras["tail_sums"],
                                report.extras["sq_over_tail"]):
        row["tail_sum"] = tail
        row["sq_diff_over_tail"] = ratio
    outputs = [write_csv(os.path.join(out, "ladder.csv"), rows,
                         ["N", "diff_M_norm", "diff_S_norm", "tail_sum",
                          "sq_diff_over_tail", "fitted_rate"])]
    return outputs, {"cauchy": report.cauchy}, EXIT_OK


def _run_solve_spde(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    seq = solve_backward_spde_fd(coeffs, noise, grid, drift=_maybe_truncated(cfg, coeffs))
    steps = _field_steps(cfg, tgrid)
    outputs = [write_field_csv(os.path.join(out, "field.csv"), seq.times[steps],
                               grid.nodes(), seq.values[steps])]
    residual_block = cfg.get("residual", {}) or {}
    _reject_unknown(residual_block, {"enabled", "n_times"}, "residual block")
    stats = {}
    if residual_block.get("enabled", True):
        battery = default_battery(grid)
        n_times = int(residual_block.get("n_times", 4))
        t_idx = np.linspace(0, tgrid.n_steps - 1, n_times).astype(int)
        rows = weak_form_residual(seq, battery, coeffs, noise.window(tgrid.t_start, tgrid.t_end),
                                  t_indices=t_idx, drift=_maybe_truncated(cfg, coeffs))
        outputs.append(write_csv(os.path.join(out, "residuals.csv"), rows,
                                 ["phi", "t_index", "t", "residual", "u_phi",
                                  "grad_term", "div_term", "f_term", "g_term"]))
        stats["max_abs_residual"] = float(max(abs(r["residual"]) for r in rows))
    return outputs, stats, EXIT_OK


def _run_correspondence(cfg, out, seed):
    compare = cfg.get("compare_grid")
    grid = build_grid(cfg)
    if compare:
        _reject_unknown(compare, {"R", "h_x", "d"}, "compare_grid block")
        if (float(compare["R"]), float(compare["h_x"])) != (grid.R, grid.h_x):
            raise ConfigError(
                f"correspondence requires matching grids: solver grid (R={grid.R}, "
                f"h_x={grid.h_x}) vs compare grid (R={compare['R']}, h_x={compare['h_x']})"
            )
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    td = _maybe_truncated(cfg, coeffs)
    seq = solve_backward_spde_fd(coeffs, noise, grid, drift=td)
    panel = solve_bdsde_lsmc(coeffs, noise, _solver_config(cfg, grid, seed), drift=td)
    steps = _field_steps(cfg, tgrid) if cfg.get("field_times") else range(
        0, tgrid.n_steps + 1, max(1, tgrid.n_steps // 50))
    worst, rows = correspondence_error(seq, panel, weight, grid, steps=steps)
    outputs = [write_csv(os.path.join(out, "correspondence.csv"), rows,
                         ["t", "abs_error", "rel_error"])]
    return outputs, {"max_rel_error": worst}, EXIT_OK


def _run_infinite_horizon(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    ladder_block = cfg.get("ladder") or {}
    _reject_unknown(ladder_block, {"horizons", "cauchy_tol"}, "ladder block")
    discount = cfg.get("discount") or {}
    _reject_unknown(discount, {"K"}, "discount block")
    mu_rate = -coeffs.mu
    horizons = ladder_block.get("horizons") or default_horizons(mu_rate, tgrid.t_start)
    K_disc = float(discount.get("K", mu_rate))
    passed, margin = check_discount_condition(mu_rate, K_disc, coeffs.p, coeffs.L_j)
    if not passed:
        raise NumericalFailure(f"discount condition fails (margin {margin:.4g})")
    span = TimeGrid(tgrid.t_start, max(horizons), int(round((max(horizons) - tgrid.t_start)
                                                            / tgrid.dt)))
    noise = build_noise(cfg, span, seed)
    config = _solver_config(cfg, grid, seed)
    candidate, report = solve_infinite_horizon(coeffs, noise, config, horizons, weight,
                                               K_disc, drift=_maybe_truncated(cfg, coeffs))
    outputs = [write_csv(os.path.join(out, "ladder.csv"), report.rows(),
                         ["T", "diff_M_norm", "diff_S_norm", "fitted_rate"])]
    field = candidate.field_at(0, grid.nodes())
    outputs.append(write_field_csv(os.path.join(out, "candidate_field.csv"),
                                   np.array([tgrid.t_start]), grid.nodes(), field[None, :]))
    return outputs, {"cauchy": report.cauchy, "discount_margin": margin,
                     "fitted_rate": report.fitted_rate}, EXIT_OK


def _run_stationarity(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    block = cfg.get("stationarity") or {}
    _reject_unknown(block, {"shifts", "horizon", "t_pair", "n_master", "theory_variance"},
                    "stationarity block")
    noise_block = cfg["noise"]
    stats = stationarity_test(
        coeffs, dt=tgrid.dt, horizon=float(block.get("horizon", tgrid.t_end)),
        shifts=[float(r) for r in block.get("shifts", [0.0, 0.5])],
        lambdas=tuple(float(v) for v in noise_block["lambdas"]),
        n_components=int(noise_block.get("N", len(noise_block["lambdas"]))),
        basis=build_basis(cfg, grid), n_paths=int(cfg["paths"]),
        master_seed=child_seed(seed, "stationarity"), weight=weight,
        starts=grid.nodes(), picard=int(cfg["picard"]),
        t_pair=tuple(float(v) for v in block.get("t_pair", (0.0, 1.0))),
        n_master=int(block.get("n_master", 500)),
        theory_variance=block.get("theory_variance"),
    )
    outputs = [write_csv(os.path.join(out, "pathwise.csv"), stats.pathwise,
                         ["r", "rel_dev", "bitwise_equal"])]
    summary = {"ks_statistic": stats.ks_statistic, "ks_pvalue": stats.ks_pvalue,
               "sample_variance": stats.sample_variance,
               "variance_rel_error": stats.variance_rel_error}
    outputs.append(write_csv(os.path.join(out, "twosample.csv"), [summary],
                             list(summary)))
    return outputs, summary, EXIT_OK


def _run_pullback(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    block = cfg.get("pullback") or {}
    _reject_unknown(block, {"horizons", "h"}, "pullback block")
    mu_rate = -coeffs.mu
    horizons = block.get("horizons") or default_horizons(mu_rate)
    h_init = _make_h(block.get("h", "tanh"))
    noise_block = cfg["noise"]
    two_sided = sample_two_sided(
        tuple(float(v) for v in noise_block["lambdas"]),
        int(noise_block.get("N", len(noise_block["lambdas"]))),
        max(horizons), int(round(max(horizons) / tgrid.dt)),
        child_seed(seed, "two-sided"),
    )
    config = _solver_config(cfg, grid, seed)
    series = pullback_experiment(coeffs, h_init, horizons, two_sided, grid, weight,
                                 candidate_config=config,
                                 drift=_maybe_truncated(cfg, coeffs))
    outputs = [write_csv(os.path.join(out, "pullback.csv"), series.rows(),
                         ["T", "diff_norm", "fitted_rate", "candidate_distance"])]
    outputs.append(write_field_csv(os.path.join(out, "pullback_fields.csv"),
                                   np.asarray(series.horizons), grid.nodes(), series.fields))
    return outputs, {"fitted_rate": series.fitted_rate,
                     "candidate_distance": series.candidate_distance}, EXIT_OK


def _run_malliavin(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    noise = build_noise(cfg, tgrid, seed)
    block = cfg.get("malliavin") or {}
    _reject_unknown(block, {"thetas", "component", "eps_list"}, "malliavin block")
    thetas = [float(t) for t in (block.get("thetas") or
                                 np.linspace(tgrid.t_start + 0.2 * (tgrid.t_end - tgrid.t_start),
                                             tgrid.t_end, 5))]
    component = int(block.get("component", 1)) - 1
    config = _solver_config(cfg, grid, seed)
    td = _maybe_truncated(cfg, coeffs)
    panel = solve_bdsde_lsmc(coeffs, noise, config, drift=td)
    lin = solve_malliavin_linearized(panel, thetas, coeffs, component=component,
                                     drift_slope=td.deriv if td else None)
    orc = bump_oracle(coeffs, noise, config, thetas, component=component,
                      eps_list=tuple(block.get("eps_list", (1e-3, 5e-4, 2.5e-4))), drift=td)
    rows = oracle_agreement(lin, orc, panel, weight)
    outputs = [write_csv(os.path.join(out, "agreement.csv"), rows,
                         ["theta", "rel_disagreement"])]
    return outputs, {"max_rel_disagreement":
                     float(max(r["rel_disagreement"] for r in rows))}, EXIT_OK


def _run_compactness(cfg, out, seed):
    coeffs = build_coefficients(cfg)
    weight = build_weight(cfg, coeffs)
    grid = build_grid(cfg)
    tgrid = build_timegrid(cfg)
    block = cfg.get("compactness") or {}
    _reject_unknown(block, {"h_steps", "n_realizations", "thetas"}, "compactness block")
    ladder_block = cfg.get("ladder") or {}
    n_list = ladder_block.get("n_list", [1.0, 2.0, 4.0, 8.0])
    h_steps = tuple(int(v) for v in block.get("h_steps", (2, 4, 8, 16)))
    n_real = int(block.get("n_realizations", 4))
    battery = default_battery(grid)
    config = _solver_config(cfg, grid, seed)

    slopes, reports = [], []
    for i in range(n_real):
        noise = build_noise(cfg, tgrid, child_seed(seed, "real", i))
        panels = {}
        for n in n_list:
            td = TruncatedDrift(coeffs.f, coeffs.df_dy, float(n))
            cfg_i = config.with_window(config.window)
            cfg_i.seed = child_seed(seed, "solve", i)
            panels[float(n)] = solve_bdsde_lsmc(coeffs, noise, cfg_i, drift=td)
        reports.append(compactness_diagnostics(panels, weight, grid, battery,
                                               h_steps=h_steps))
    mean_moduli = {h: np.mean([r.shift_moduli[k]["modulus"] for r in reports])
                   for k, h in enumerate(h_steps)}
    from .utils import log_slope
    slope, se = log_slope([h * tgrid.dt for h in h_steps],
                          [mean_moduli[h] for h in h_steps])
    rows = [{"h": h * tgrid.dt, "modulus": mean_moduli[h], "slope": slope} for h in h_steps]
    outputs = [write_csv(os.path.join(out, "moduli.csv"), rows, ["h", "modulus", "slope"])]
    stat_rows = []
    for k, n in enumerate(reports[-1].family_param):
        stat_rows.append({"n": n, "cond1": reports[-1].cond1_stats[k],
                          "cond2": reports[-1].cond2_stats[k]})
    outputs.append(write_csv(os.path.join(out, "family_stats.csv"), stat_rows,
                             ["n", "cond1", "cond2"]))
    return outputs, {"shift_slope": float(slope), "slope_se": float(se),
                     "cond1_increasing": reports[-1].cond1_trend["increasing_at_95"],
                     "cond2_increasing": reports[-1].cond2_trend["increasing_at_95"]}, EXIT_OK


_RUNNERS = {
    "check-conditions": _run_check_conditions,
    "simulate-forward": _run_simulate_forward,
    "solve-bdsde": _run_solve_bdsde,
    "drift-ladder": _run_drift_ladder,
    "noise-ladder": _run_noise_ladder,
    "solve-spde": _run_solve_spde,
    "correspondence": _run_correspondence,
    "infinite-horizon": _run_infinite_horizon,
    "stationarity": _run_stationarity,
    "pullback": _run_pullback,
    "malliavin": _run_malliavin,
    "compactness": _run_compactness,
}


def run(config_path, seed_override=None, out_override=None):
    """Execute one experiment; returns the process exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    cfg["seed"] = seed
    out = out_override or cfg.get("out") or os.environ.get("BDSDE_LAB_OUT") or "."
    cfg["out"] = out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    runner = _RUNNERS[cfg["experiment"]]
    try:
        outputs, results, code = runner(cfg, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        write_error_record(out, EXIT_CONFIG, str(exc))
        return EXIT_CONFIG
    except (NumericalFailure,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_error_record(out, EXIT_NUMERICAL, str(exc))
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        write_error_record(out, EXIT_IO, str(exc))
        return EXIT_IO
    except Exception as exc:  # numerical library failures land here
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_error_record(out, EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL

    manifest = write_manifest(out, cfg, outputs, extra=results)
    print(f"wrote {len(outputs)} artifact(s) + {os.path.basename(manifest)} to {out}")
    return code


def list_presets():
    rows = pr.preset_table()
    print(f"{'name':<18} {'p':>2} {'mu':>6} {'g-components':>12}  description")
    for name, p, mu, n_noise, desc in rows:
        print(f"{name:<18} {p:>2} {mu:>6.2f} {n_noise:>12}  {desc}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="bdsde-lab",
                                     description="BDSDE/SPDE numerical experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("config")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    sub.add_parser("list-presets", help="list built-in coefficient presets")
    args = parser.parse_args(argv)
    if args.command == "list-presets":
        return list_presets()
    return run(args.config, seed_override=args.seed, out_override=args.out)


if __name__ == "__main__":
    sys.exit(main())
