import numpy as np
import pytest
from scipy.integrate import quad

from bdsde_lab.weights import (DiscountedNormSpec, SpatialGrid, WeightSpec, cloud_rms,
                               discounted_path_norm, equivalence_of_norm_ratio,
                               rho_weight, weighted_lp_norm)


def test_rho_at_origin_is_one():
    spec = WeightSpec(q=12.0, d=1)
    assert rho_weight(np.zeros((1, 1)), spec)[0] == 1.0


def test_rho_direct_evaluation():
    spec = WeightSpec(q=12.0, d=1)
    assert rho_weight(np.array([[1.0]]), spec)[0] == pytest.approx(2.0**12)


def test_rho_lower_bound_strict():
    spec = WeightSpec(q=5.0, d=2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    vals = rho_weight(x, spec)
    assert np.all(vals >= 1.0)
    assert np.all(vals[np.linalg.norm(x, axis=1) > 0] > 1.0)


def test_growth_tie_rejected():
    # d=1, p=3 requires q > 25
    with pytest.raises(ValueError):
        WeightSpec(q=25.0, d=1, p=3)
    WeightSpec(q=25.5, d=1, p=3)


def test_weight_requires_integrability():
    with pytest.raises(ValueError):
        WeightSpec(q=0.5, d=1)


def test_zero_field_norm():
    spec = WeightSpec(q=2.0, d=1)
    grid = SpatialGrid(1, 50.0, 0.01)
    assert weighted_lp_norm(np.zeros(grid.n_per_axis), 2, spec, grid) == 0.0


def test_constant_field_matches_analytic_integral():
    # int (1+|x|)^{-2} dx over the line = 2, so the norm is |c| * 2^{1/k}
    spec = WeightSpec(q=2.0, d=1)
    grid = SpatialGrid(1, 400.0, 0.05)
    c = 3.7
    for k in (2, 4):
        expected = abs(c) * 2.0 ** (1.0 / k)
        got = weighted_lp_norm(np.full(grid.n_per_axis, c), k, spec, grid)
        assert got == pytest.approx(expected, rel=5e-3)


def test_indicator_field_matches_quadrature_oracle():
    # indicator of [0,1], k=2, q=2: (int_0^1 (1+x)^{-2} dx)^{1/2} = sqrt(1/2)
    oracle, _ = quad(lambda x: (1.0 + x) ** -2, 0.0, 1.0)
    assert oracle == pytest.approx(0.5, abs=1e-12)
    spec = WeightSpec(q=2.0, d=1)
    grid = SpatialGrid(1, 40.0, 0.001)
    nodes = grid.nodes()[:, 0]
    field = ((nodes >= 0) & (nodes <= 1)).astype(float)
    got = weighted_lp_norm(field, 2, spec, grid)
    assert got == pytest.approx(np.sqrt(0.5), rel=2e-3)


def test_norm_absolute_homogeneity():
    spec = WeightSpec(q=4.0, d=1)
    grid = SpatialGrid(1, 10.0, 0.05)
    rng = np.random.default_rng(1)
    field = rng.normal(size=grid.n_per_axis)
    base = weighted_lp_norm(field, 2, spec, grid)
    for c in (-2.5, 0.3, 7.0):
        assert weighted_lp_norm(c * field, 2, spec, grid) == pytest.approx(abs(c) * base,
                                                                           rel=1e-12)


def test_radius_selection_meets_tolerance():
    spec = WeightSpec(q=26.0, d=1, p=3)
    R = spec.radius_for_tolerance(1e-8)
    assert spec.tail_mass(R) < 1e-8
    assert R < 20.0


def test_discounted_norm_constant_panel_k0():
    # constant panel Y = 1, K=0 on [0,1]: both norms equal ||1||^2 (norm exponent 2)
    spec = DiscountedNormSpec(K=0.0, q_exp=2.0)
    times = np.linspace(0.0, 1.0, 101)
    sup_n, int_n = discounted_path_norm(times, np.ones_like(times), spec)
    assert sup_n == pytest.approx(1.0)
    assert int_n == pytest.approx(1.0, rel=1e-12)


def test_discounted_norm_exponential_truncation():
    # Y = 1, K=1, horizon truncated at T: integral norm -> (1 - e^{-T})
    spec = DiscountedNormSpec(K=1.0, q_exp=2.0, infinite=True)
    T = 5.0
    times = np.linspace(0.0, T, 4001)
    _, int_n = discounted_path_norm(times, np.ones_like(times), spec)
    assert int_n == pytest.approx(1.0 - np.exp(-T), rel=1e-5)


def test_discounted_norm_closed_form_exponential_panel():
    # Y_s = e^{s/2}, K=2, q=2: integrand e^{-2s} e^{s} = e^{-s}
    spec = DiscountedNormSpec(K=2.0, q_exp=2.0)
    T = 3.0
    times = np.linspace(0.0, T, 3001)
    _, int_n = discounted_path_norm(times, np.exp(times / 2.0), spec)
    assert int_n == pytest.approx(1.0 - np.exp(-T), rel=1e-5)


def test_discounted_norm_infinite_requires_positive_K():
    with pytest.raises(ValueError):
        DiscountedNormSpec(K=0.0, infinite=True)


def test_discounted_norm_empty_panel_rejected():
    spec = DiscountedNormSpec(K=0.0)
    with pytest.raises(ValueError):
        discounted_path_norm(np.array([]), np.array([]), spec)


def _identity_flow_values(grid, n_times, reps):
    nodes = grid.nodes()
    vals = np.repeat(nodes, reps, axis=0)
    return np.broadcast_to(vals, (n_times,) + vals.shape).copy()


def test_equivalence_ratio_identity_flow():
    # sigma=0, b=0: the flow is the identity, so every ratio is exactly 1
    spec = WeightSpec(q=4.0, d=1)
    grid = SpatialGrid(1, 6.0, 0.05)
    flow = _identity_flow_values(grid, 3, 2)
    battery = {
        "bump": lambda x: np.exp(-np.sum(np.atleast_2d(x) ** 2, axis=-1)),
        "one": lambda x: np.ones(np.atleast_2d(x).shape[0]),
        "abs": lambda x: np.abs(np.atleast_2d(x)[:, 0]),
    }
    out = equivalence_of_norm_ratio(battery, flow, grid.nodes(), [0, 1, 2], spec, grid)
    assert out["ratio_low"] == pytest.approx(1.0, abs=1e-12)
    assert out["ratio_high"] == pytest.approx(1.0, abs=1e-12)


def test_equivalence_ratio_ou_flow_bounded():
    # OU flow, Gaussian bumps of several widths: the empirical ratio stays in a
    # bounded band; oracle = plain Monte Carlo with 10x paths gives the same
    # value, so we check stability under path count and boundedness.
    from bdsde_lab.coefficients import CoefficientSet, linear_drift, constant_sigma
    from bdsde_lab.forward import euler_maruyama_flow
    from bdsde_lab.noise import TimeGrid, sample_w_increments
    from bdsde_lab.presets import ou_flow

    spec = WeightSpec(q=4.0, d=1)
    grid = SpatialGrid(1, 6.0, 0.1)
    coeffs = ou_flow()
    tg = TimeGrid(0.0, 1.0, 50)
    nodes = grid.nodes()

    def run(reps, seed):
        starts = np.repeat(nodes, reps, axis=0)
        dw = sample_w_increments(tg, 1, starts.shape[0], seed)
        flow = euler_maruyama_flow(coeffs, starts, tg, dw)
        battery = {f"w{w}": (lambda w: lambda x: np.exp(
            -np.sum(np.atleast_2d(x) ** 2, axis=-1) / w**2))(w) for w in (0.5, 1.0, 2.0)}
        return equivalence_of_norm_ratio(battery, flow.X, nodes,
                                         [10, 25, 50], spec, grid)

    out = run(40, 7)
    oracle = run(400, 8)
    assert 0.2 < out["ratio_low"] <= out["ratio_high"] < 5.0
    for key, val in out["ratios"].items():
        assert val == pytest.approx(oracle["ratios"][key], rel=0.25)


def test_cloud_rms_matches_direct_sum():
    spec = WeightSpec(q=3.0, d=1)
    anchors = np.array([[0.0], [1.0], [2.0]])
    vals = np.array([1.0, 2.0, 3.0])
    w = 1.0 / rho_weight(anchors, spec)
    w /= w.sum()
    assert cloud_rms(vals, anchors, spec) == pytest.approx(float(np.sqrt(np.sum(vals**2 * w))))
