import io

import numpy as np
import pytest
from scipy import stats

from bdsde_lab.noise import (NoisePath, TimeGrid, apply_shift, backward_ito_integral,
                             forward_ito_integral, load_noise_path, reverse_time,
                             sample_qwiener, sample_two_sided, sample_w_increments,
                             save_noise_path, ShiftedPath)


def test_timegrid_basics():
    tg = TimeGrid(0.0, 1.0, 10)
    assert tg.dt == pytest.approx(0.1)
    assert tg.index(0.3) == 3
    with pytest.raises(ValueError):
        tg.index(0.35)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.5, 10)


def test_paths_start_at_zero():
    path = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 100), seed=3, d=2)
    assert np.all(path.B[0] == 0.0)
    assert np.all(path.W[0] == 0.0)


def test_single_component_increment_variance():
    # N=1, lambda=1: increment variance over dt equals dt (1e5 draws, 1% level)
    tg = TimeGrid(0.0, 1.0, 10)
    n_draws = 100_000
    incs = []
    for i in range(50):
        p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 2000), seed=1000 + i)
        incs.append(np.diff(p.B[:, 0]))
    incs = np.concatenate(incs)[:n_draws]
    dt = 1.0 / 2000
    # chi-square bounds for the variance at the 1% level
    n = len(incs)
    s2 = np.var(incs)
    lo = stats.chi2.ppf(0.005, n - 1) / (n - 1)
    hi = stats.chi2.ppf(0.995, n - 1) / (n - 1)
    assert lo < s2 / dt < hi


def test_eigenvalue_scaling_of_component_variances():
    # lambda = (4, 1): component variances at time 1 are 4 and 1 (statistical)
    vals = np.array([
        sample_qwiener((4.0, 1.0), 2, TimeGrid(0.0, 1.0, 50), seed=i).B[-1]
        for i in range(4000)
    ])
    v = vals.var(axis=0)
    assert v[0] == pytest.approx(4.0, rel=0.1)
    assert v[1] == pytest.approx(1.0, rel=0.1)


def test_same_seed_bit_identical():
    tg = TimeGrid(0.0, 2.0, 321)
    a = sample_qwiener((1.0, 0.5), 2, tg, seed=99, d=2)
    b = sample_qwiener((1.0, 0.5), 2, tg, seed=99, d=2)
    assert np.array_equal(a.B, b.B)
    assert np.array_equal(a.W, b.W)


def test_truncation_and_eigenvalue_validation():
    tg = TimeGrid(0.0, 1.0, 10)
    with pytest.raises(ValueError):
        sample_qwiener((1.0,), 2, tg, seed=0)
    with pytest.raises(ValueError):
        sample_qwiener((1.0, -0.1), 2, tg, seed=0)
    with pytest.raises(ValueError):
        sample_qwiener((0.5, 1.0), 2, tg, seed=0)  # increasing


def test_kl_tail_variance():
    # difference of truncations N' < N has per-time variance sum_{N'<j<=N} lambda_j
    lambdas = (1.0, 0.5, 0.25, 0.125)
    t_eval = 1.0
    total = []
    for i in range(3000):
        p = sample_qwiener(lambdas, 4, TimeGrid(0.0, 1.0, 20), seed=i)
        total.append(p.B[-1, 2:].sum())  # components dropped when truncating at N'=2
    got = np.var(total)
    assert got == pytest.approx((0.25 + 0.125) * t_eval, rel=0.15)


def test_reverse_time_endpoint_zero():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 64), seed=5)
    rev = reverse_time(p, 1.0)
    assert np.all(rev.B[0] == 0.0)
    assert rev.reversal_anchor == 1.0


def test_reverse_time_deterministic_injected_path():
    # injected B_s = s gives Bhat_s = (T'-s) - T' = -s
    tg = TimeGrid(0.0, 1.0, 10)
    B = tg.times[:, None].copy()
    p = NoisePath(grid=tg, B=B, W=np.zeros((11, 1)), lambdas=(1.0,), seed=0)
    rev = reverse_time(p, 1.0)
    assert np.allclose(rev.B[:, 0], -tg.times)


def test_reverse_time_involution():
    p = sample_qwiener((1.0, 0.3), 2, TimeGrid(0.0, 2.0, 100), seed=11)
    back = reverse_time(reverse_time(p, 2.0), 2.0)
    assert np.allclose(back.B, p.B, atol=1e-14)


def test_reverse_time_anchor_must_be_on_grid():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 10), seed=0)
    with pytest.raises(ValueError):
        reverse_time(p, 0.55)


def test_backward_integral_constant_integrand():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 128), seed=2)
    gamma = 1.7
    g = np.full((129, 1), gamma)
    val = backward_ito_integral(g, p, window=(0.25, 1.0))
    expected = gamma * (p.B[-1, 0] - p.B[p.grid.index(0.25), 0])
    assert val == pytest.approx(expected, rel=1e-12)


def test_backward_integral_zero_integrand():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 16), seed=2)
    assert backward_ito_integral(np.zeros((17, 1)), p) == 0.0


def test_backward_forward_identity_per_path():
    # backward integral of g against Bhat equals minus the forward integral of
    # the time-reflected integrand against B, per path to 1e-12 relative
    rng = np.random.default_rng(42)
    K = 100
    tg = TimeGrid(0.0, 1.0, K)
    for trial in range(100):
        path = sample_qwiener((1.0, 0.5), 2, tg, seed=10_000 + trial)
        g = rng.standard_normal((K + 1, 2))
        bwd = backward_ito_integral(g, path, window=(0.0, 1.0))
        rev = reverse_time(path, 1.0)   # B_s = Bhat_{T'-s} - Bhat_{T'}
        fwd = forward_ito_integral(g[::-1], rev, window=(0.0, 1.0))
        assert bwd == pytest.approx(-fwd, rel=1e-12, abs=1e-14)


def test_shift_zero_is_identity():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 32), seed=1, d=2)
    s = apply_shift(p, 0.0, "theta_hat")
    assert np.array_equal(s.B, p.B)
    assert np.array_equal(s.W, p.W)


def test_shift_composition():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 4.0, 400), seed=8, d=1)
    for mode in ("theta_prime", "theta_double_prime", "theta_hat"):
        ab = apply_shift(apply_shift(p, 0.5, mode), 1.0, mode)
        once = apply_shift(p, 1.5, mode)
        K = ab.grid.n_steps
        assert np.allclose(ab.B, once.B[: K + 1], atol=1e-14)
        assert np.allclose(ab.W, once.W[: K + 1], atol=1e-14)


def test_shift_modes_move_the_right_component():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 2.0, 200), seed=9, d=1)
    sp = apply_shift(p, 0.5, "theta_prime")
    assert np.allclose(sp.W, p.W[:151])
    assert not np.allclose(sp.B, p.B[:151])
    sd = apply_shift(p, 0.5, "theta_double_prime")
    assert np.allclose(sd.B, p.B[:151])


def test_shift_preserves_increment_variance():
    # probability preservation: shifted increments have the same empirical
    # variance as unshifted (two-sample variance test)
    incs_base, incs_shift = [], []
    for i in range(400):
        p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 2.0, 100), seed=i)
        incs_base.append(np.diff(p.B[:50, 0]))
        incs_shift.append(np.diff(apply_shift(p, 1.0, "theta_prime").B[:50, 0]))
    a = np.concatenate(incs_base)
    b = np.concatenate(incs_shift)
    # Levene test is robust for equality of variances
    assert stats.levene(a, b).pvalue > 0.01


def test_shift_must_align_with_grid():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 10), seed=0)
    with pytest.raises(ValueError):
        apply_shift(p, 0.05, "theta_prime")
    with pytest.raises(ValueError):
        apply_shift(p, 2.0, "theta_prime")


def test_shifted_path_view_materializes():
    p = sample_qwiener((1.0,), 1, TimeGrid(0.0, 1.0, 10), seed=0)
    view = ShiftedPath(base=p, shift_r=0.2, mode="theta_prime")
    assert np.array_equal(view.materialize().B, apply_shift(p, 0.2, "theta_prime").B)


def test_two_sided_negative_side_is_bhat():
    ts = sample_two_sided((1.0,), 1, 2.0, 100, seed=4)
    bhat = ts.bhat_path()
    assert np.array_equal(bhat.B, ts.neg.B)
    assert np.array_equal(ts.value_at(-1.0), ts.neg.B[ts.neg.grid.index(1.0)])


def test_w_bundle_shape_and_determinism():
    tg = TimeGrid(0.0, 1.0, 20)
    a = sample_w_increments(tg, 2, 7, seed=5)
    b = sample_w_increments(tg, 2, 7, seed=5)
    assert a.shape == (20, 7, 2)
    assert np.array_equal(a, b)


def test_binary_round_trip():
    p = sample_qwiener((1.0, 0.25), 2, TimeGrid(0.0, 1.5, 60), seed=77, d=2)
    buf = io.BytesIO()
    save_noise_path(p, buf)
    buf.seek(0)
    q = load_noise_path(buf)
    assert np.array_equal(p.B, q.B)
    assert np.array_equal(p.W, q.W)
    assert q.lambdas == p.lambdas
    assert q.seed == p.seed
    assert q.grid == p.grid
