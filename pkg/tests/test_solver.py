import numpy as np
import pytest

from bdsde_lab.coefficients import (CoefficientSet, constant_g, constant_sigma,
                                    polynomial_reaction, zero_drift)
from bdsde_lab.noise import TimeGrid, sample_qwiener
from bdsde_lab.presets import cubic_monotone, gamma_constant_g, heat, linear_mu
from bdsde_lab.regression import RankDeficientError, RegressionBasis
from bdsde_lab.solver import (SolverConfig, flow_identity_check, representation_field,
                              solve_bdsde_lsmc, tile_starts)
from bdsde_lab.truncation import TruncatedDrift
from bdsde_lab.utils import log_slope
from bdsde_lab.weights import SpatialGrid, WeightSpec, cloud_rms


def _frozen_coeffs(gammas=(), h=None):
    """b = 0, sigma = 0: deterministic flow for exactness checks."""
    f, df = polynomial_reaction([0.0])
    g, dg, lj = zip(*(constant_g(c) for c in gammas)) if gammas else ((), (), ())
    return CoefficientSet(
        b=zero_drift(1), sigma=constant_sigma(0.0, 1), f=f, df_dy=df,
        f0=lambda s, x: np.zeros(np.atleast_2d(x).shape[0]),
        g=tuple(g), dg_dy=tuple(dg),
        h=h or (lambda x: np.atleast_2d(x)[:, 0]), L=1.0, L_j=tuple(lj),
    )


GRID = SpatialGrid(1, 3.0, 0.5)
WEIGHT = WeightSpec(q=6.0, d=1)
BASIS = RegressionBasis(family="poly", degree=3, ridge=1e-8, scale=2.0)


def _config(n_paths=130, window=(0.0, 1.0), seed=0, **kw):
    return SolverConfig(window=window, n_paths=n_paths, basis=BASIS, seed=seed,
                        starts=GRID.nodes(), **kw)


def test_deterministic_constant_problem_exact():
    # f=0, g=0, b=0, sigma=0, h(x)=x: Y_s = x and Z = 0 for all s, exact up to
    # the mandated ridge floor (one shrink factor 1/(1+1e-8) per step)
    coeffs = _frozen_coeffs()
    K = 50
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, K), seed=1)
    panel = solve_bdsde_lsmc(coeffs, noise, _config())
    xs = panel.flow.starts[:, 0]
    floor = 2 * K * BASIS.ridge * np.max(np.abs(xs))
    for k in range(K + 1):
        assert panel.Y[k] == pytest.approx(xs, abs=floor)
    assert np.allclose(panel.Z[:K], 0.0, atol=floor)


def test_scalar_ode_decay():
    # f(y) = -y, h = 1: Y_s = e^{-(T-s)} within O(dt)
    f, df = polynomial_reaction([0.0, -1.0])
    coeffs = _frozen_coeffs(h=lambda x: np.ones(np.atleast_2d(x).shape[0]))
    coeffs = coeffs.with_drift(f, df)
    K = 200
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, K), seed=1)
    panel = solve_bdsde_lsmc(coeffs, noise, _config())
    times = panel.grid.times
    expected = np.exp(-(1.0 - times))
    err = np.max(np.abs(panel.Y[:, 0] - expected))
    assert err < 3.0 / K


def test_terminal_condition_bitwise():
    coeffs = gamma_constant_g()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 20), seed=2)
    cfg = _config()
    panel = solve_bdsde_lsmc(coeffs, noise, cfg)
    assert np.array_equal(panel.Y[-1], coeffs.h(panel.flow.X[-1]))
    assert np.all(np.isfinite(panel.Z[-1]))


def test_gamma_constant_analytic_per_path():
    # f=0, g=gamma, b=0, sigma=1, h(x)=x: Y_s = X_s - gamma (Bhat_T - Bhat_s), Z=1.
    # Oracle: E[X_T | F_s^W] = X_s.
    gamma = 0.5
    coeffs = gamma_constant_g(gamma=gamma)
    K, M = 100, 4000
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, K), seed=3)
    cfg = _config(n_paths=M, seed=4)
    panel = solve_bdsde_lsmc(coeffs, noise, cfg)
    bhat = noise.B[:, 0]
    for k in (0, K // 2, K - 1):
        analytic = panel.flow.X[k, :, 0] - gamma * (bhat[-1] - bhat[k])
        rel = cloud_rms(panel.Y[k] - analytic, panel.flow.starts, WEIGHT) / \
            max(cloud_rms(analytic, panel.flow.starts, WEIGHT), 1e-300)
        assert rel < 0.03
        z_err = cloud_rms(panel.Z[k, :, 0] - 1.0, panel.flow.starts, WEIGHT)
        assert z_err < 0.15


def test_scaling_equivariance_linear_regime():
    # doubling h, f, g doubles Y and Z in the g-linear, f-linear regime
    gamma = 0.4
    coeffs = gamma_constant_g(gamma=gamma)
    doubled = gamma_constant_g(gamma=2 * gamma)
    doubled = CoefficientSet(
        b=doubled.b, sigma=doubled.sigma, f=doubled.f, df_dy=doubled.df_dy,
        f0=doubled.f0, g=doubled.g, dg_dy=doubled.dg_dy,
        h=lambda x: 2.0 * np.atleast_2d(x)[:, 0], L=1.0, L_j=doubled.L_j,
    )
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 50), seed=5)
    cfg = _config(n_paths=500, seed=6)
    a = solve_bdsde_lsmc(coeffs, noise, cfg)
    b = solve_bdsde_lsmc(doubled, noise, cfg)
    assert np.allclose(b.Y[:50], 2.0 * a.Y[:50], atol=1e-9)
    assert np.allclose(np.nan_to_num(b.Z), 2.0 * np.nan_to_num(a.Z), atol=1e-9)


def test_monotone_stability_ceiling():
    # for monotone f and g=0 the discrete sup-norm respects the moment-type
    # ceiling max|h| + T sup|f(.,.,0)|
    coeffs = cubic_monotone(gammas=())
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 100), seed=7)
    td = TruncatedDrift(coeffs.f, coeffs.df_dy, 4.0)
    panel = solve_bdsde_lsmc(coeffs, noise, _config(n_paths=400, seed=8), drift=td)
    ceiling = np.max(np.abs(coeffs.h(panel.flow.X[-1]))) + 1.0 * 0.0 + 0.05
    assert np.nanmax(np.abs(panel.Y)) <= ceiling


def test_exponential_transform_equivalence():
    # solving the mu-shifted problem and mapping back reproduces Y
    mu_mono = -1.0  # monotonicity constant of f(y) = -y + 2
    c = 2.0
    f, df = polynomial_reaction([c, -1.0])
    gamma = 0.3
    base = _frozen_coeffs(gammas=(gamma,), h=lambda x: np.ones(np.atleast_2d(x).shape[0]))
    base = CoefficientSet(b=base.b, sigma=base.sigma, f=f, df_dy=df, f0=base.f0,
                          g=base.g, dg_dy=base.dg_dy, h=base.h, L=3.0, L_j=base.L_j,
                          mu=mu_mono)
    T = 1.0

    def f_t(s, x, y):
        return np.exp(mu_mono * s) * f(s, x, np.exp(-mu_mono * s) * np.asarray(y)) \
            - mu_mono * np.asarray(y)

    def df_t(s, x, y):
        return df(s, x, np.exp(-mu_mono * s) * np.asarray(y)) - mu_mono

    def g_t(s, x, y):
        return np.exp(mu_mono * s) * gamma * np.ones(np.shape(np.asarray(y)))

    def dg_t(s, x, y):
        return np.zeros(np.shape(np.asarray(y)))

    def h_t(x):
        return np.exp(mu_mono * T) * base.h(x)

    transformed = CoefficientSet(b=base.b, sigma=base.sigma, f=f_t, df_dy=df_t,
                                 f0=base.f0, g=(g_t,), dg_dy=(dg_t,), h=h_t,
                                 L=3.0, L_j=(0.0,), mu=0.0)
    K = 400
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, T, K), seed=9)
    cfg = _config(n_paths=130, seed=10)
    direct = solve_bdsde_lsmc(base, noise, cfg)
    tilde = solve_bdsde_lsmc(transformed, noise, cfg)
    mapped = np.exp(-mu_mono * direct.grid.times)[:, None] * tilde.Y
    err = np.nanmax(np.abs(mapped - direct.Y))
    assert err < 5.0 / K


def test_determinism_identical_seed_config():
    coeffs = gamma_constant_g()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 30), seed=11)
    cfg = _config(n_paths=260, seed=12)
    a = solve_bdsde_lsmc(coeffs, noise, cfg)
    b = solve_bdsde_lsmc(coeffs, noise, cfg)
    assert np.array_equal(np.nan_to_num(a.Y), np.nan_to_num(b.Y))
    assert np.array_equal(np.nan_to_num(a.Z), np.nan_to_num(b.Z))


def test_too_few_paths_hard_error():
    coeffs = gamma_constant_g()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 10), seed=13)
    cfg = SolverConfig(window=(0.0, 1.0), n_paths=3, basis=BASIS, seed=0,
                       starts=GRID.nodes())
    with pytest.raises(RankDeficientError):
        solve_bdsde_lsmc(coeffs, noise, cfg)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_untruncated_polynomial_blowup_aborts_with_advice():
    from bdsde_lab.solver import SolverError

    coeffs = cubic_monotone(gammas=())
    # +y^3 drift explodes backward without truncation
    f, df = polynomial_reaction([0.0, 0.0, 0.0, 30.0])
    bad = coeffs.with_drift(f, df)
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 4.0, 40), seed=14)
    big_h = lambda x: 10.0 + np.abs(np.atleast_2d(x)[:, 0])
    with pytest.raises(SolverError, match="truncation"):
        solve_bdsde_lsmc(bad, noise, _config(window=(0.0, 4.0), seed=15),
                         terminal=big_h)


def test_representation_field_trivial_cases():
    # f=0, g=0, h(x)=x, b=sigma=0: u(t, x) = x
    coeffs = _frozen_coeffs()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 20), seed=16)
    panel = solve_bdsde_lsmc(coeffs, noise, _config())
    fields = representation_field(panel, GRID, steps=[0, 10, 20])
    nodes = GRID.nodes()[:, 0]
    for row in fields:
        assert row == pytest.approx(nodes, abs=1e-5)

    # f(y) = -y, g=0, h = 1: u(t, x) = e^{-(T-t)} for all x
    f, df = polynomial_reaction([0.0, -1.0])
    flat = _frozen_coeffs(h=lambda x: np.ones(np.atleast_2d(x).shape[0])).with_drift(f, df)
    K = 100
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, K), seed=17)
    panel = solve_bdsde_lsmc(flat, noise, _config())
    fields = representation_field(panel, GRID, steps=[0, K // 2])
    assert fields[0] == pytest.approx(np.exp(-1.0), abs=3.0 / K)
    assert fields[1] == pytest.approx(np.exp(-0.5), abs=3.0 / K)


def test_representation_field_heat_kernel():
    # heat case: u(t, .) matches the Gaussian convolution
    # exp(-x^2/2) * N(0, s^2) = exp(-x^2/(2(1+s^2))) / sqrt(1+s^2), s^2 = 2(T-t)
    coeffs = heat()
    grid = SpatialGrid(1, 5.0, 0.25)
    K, M = 100, 20_000
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 0.5, K), seed=18)
    basis = RegressionBasis(family="piecewise_linear",
                            knots=tuple(np.linspace(-8.0, 8.0, 33)), ridge=1e-8)
    cfg = SolverConfig(window=(0.0, 0.5), n_paths=M, basis=basis, seed=19,
                       starts=grid.nodes())
    panel = solve_bdsde_lsmc(coeffs, noise, cfg)
    nodes = grid.nodes()[:, 0]
    weight = WeightSpec(q=6.0, d=1)
    from bdsde_lab.weights import weighted_lp_norm

    for step, t in ((0, 0.0), (K // 2, 0.25)):
        s2 = 2.0 * (0.5 - t)
        expected = np.exp(-nodes**2 / (2.0 * (1.0 + s2))) / np.sqrt(1.0 + s2)
        got = panel.field_at(step, grid.nodes())
        err = weighted_lp_norm(got - expected, 2, weight, grid)
        scale = weighted_lp_norm(expected, 2, weight, grid)
        assert err / scale < 0.05


def test_flow_identity_trivial_zero():
    coeffs = _frozen_coeffs()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 40), seed=20)
    dev = flow_identity_check(coeffs, noise, _config(), 0.5, WEIGHT, restart_subsample=1)
    assert dev == 0.0


def test_flow_identity_linear_case_within_tolerance():
    coeffs = gamma_constant_g()
    noise = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 200), seed=21)
    cfg = _config(n_paths=2000, seed=22)
    dev = flow_identity_check(coeffs, noise, cfg, 0.5, WEIGHT, restart_subsample=2)
    assert dev < 2e-2


def test_tile_starts_deterministic():
    nodes = np.array([[0.0], [1.0], [2.0]])
    tiled = tile_starts(nodes, 7)
    assert tiled.shape == (7, 1)
    assert np.array_equal(tiled[:3], nodes)
    assert np.array_equal(tiled[3:6], nodes)
