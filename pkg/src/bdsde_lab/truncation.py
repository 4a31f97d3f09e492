"""C^1 clamp of the polynomial drift with linear extension beyond the band."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def project_pi(y, n):
    """Clamp to [-n, n]: inf(n, |y|) * y/|y|, with 0 at the origin."""
    if n <= 0:
        raise ValueError("truncation level must be positive")
    return np.clip(np.asarray(y, dtype=float), -n, n)


@dataclass(frozen=True)
class TruncatedDrift:
    """Drift f replaced by f_n: exact for |y| <= n, linear extension outside.

    f_n(s,x,y) = f(s,x,Pi_n(y)) + d_yf(s,x, n sign(y)) (y - n sign(y)) for |y| > n,
    which is C^1 with matching one-sided slopes at |y| = n. The level n may be
    any positive real so ladders can refine geometrically.
    """

    f: object
    df_dy: object
    n: float

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("truncation level must be positive")

    def __call__(self, s, x, y):
        y = np.asarray(y, dtype=float)
        yc = project_pi(y, self.n)
        inner = np.asarray(self.f(s, x, yc), dtype=float)
        excess = y - yc
        outside = excess != 0.0
        if not np.any(outside):
            return inner
        slope = np.asarray(self.df_dy(s, x, yc), dtype=float)
        return inner + slope * excess

    def deriv(self, s, x, y):
        """d_y f_n = d_y f evaluated at the clamped argument."""
        yc = project_pi(np.asarray(y, dtype=float), self.n)
        return np.asarray(self.df_dy(s, x, yc), dtype=float)


def truncate_drift_eval(td: TruncatedDrift, s, x, y):
    return td(s, x, y)


def verify_truncation_conditions(td: TruncatedDrift, coeffs, sampler):
    """Sampled check of the inherited growth/Lipschitz/monotonicity conditions.

    Returns a ConditionReport with entries for the linear-growth bound
    |f_n| <= L(|f0| + (2 (n ^ |y|)^{p-1} + 1)|y|), the x-continuity bound and
    the pair monotonicity, the latter sampled on pairs straddling the clamp
    boundary.
    """
    from .conditions import ConditionEntry, ConditionReport, Sampler

    sampler = sampler if isinstance(sampler, Sampler) else Sampler(**sampler)
    rng = sampler.rng("truncation")
    s_vals = sampler.sample_times(rng)
    x_vals = sampler.sample_points(rng)
    entries = []

    # (H.1)': growth of f_n against the truncated bound.
    y = sampler.sample_values(rng)
    witnesses, worst = [], np.inf
    for sv in s_vals:
        fn = td(sv, x_vals, _bcast(y, x_vals))
        f0 = np.abs(np.asarray(coeffs.f0(sv, x_vals), dtype=float))
        yb = np.abs(_bcast(y, x_vals))
        bound = coeffs.L * (f0 + (2.0 * np.minimum(td.n, yb) ** (coeffs.p - 1) + 1.0) * yb)
        slack = bound - np.abs(fn)
        worst = min(worst, float(slack.min()))
        bad = np.nonzero(slack < -sampler.atol)[0]
        witnesses += [(float(sv), x_vals[i].tolist(), float(yb[i])) for i in bad[:3]]
    entries.append(ConditionEntry("H.1'", "fail" if witnesses else "sampled-pass",
                                  witnesses[:5], worst))

    # (H.2)'-type x continuity: |f_n(x1,y) - f_n(x2,y)| <= 3L(1+|y|^p)|x1-x2|.
    x2 = sampler.sample_points(rng)
    witnesses, worst = [], np.inf
    for sv in s_vals:
        yb = _bcast(y, x_vals)
        gap = np.abs(td(sv, x_vals, yb) - td(sv, x2, yb))
        dist = np.linalg.norm(x_vals - x2, axis=1)
        bound = 3.0 * coeffs.L * (1.0 + np.abs(yb) ** coeffs.p) * dist
        slack = bound - gap
        worst = min(worst, float(slack.min()))
        bad = np.nonzero(slack < -sampler.atol)[0]
        witnesses += [(float(sv), x_vals[i].tolist(), x2[i].tolist()) for i in bad[:3]]
    entries.append(ConditionEntry("H.2'", "fail" if witnesses else "sampled-pass",
                                  witnesses[:5], worst))

    # (H.3)': pair monotonicity, pairs straddling the clamp boundary included.
    y1 = sampler.sample_values(rng)
    y2 = sampler.sample_values(rng)
    straddle = rng.uniform(0.5, 1.5, size=len(y1)) * td.n * np.sign(rng.standard_normal(len(y1)))
    y1 = np.concatenate([y1, straddle])
    y2 = np.concatenate([y2, -straddle * rng.uniform(0.2, 2.0, size=len(straddle))])
    witnesses, worst = [], np.inf
    x_mono = sampler.sample_points(rng, len(y1))
    for sv in s_vals:
        prod = (y1 - y2) * (td(sv, x_mono, y1) - td(sv, x_mono, y2))
        slack = -prod
        worst = min(worst, float(slack.min()))
        bad = np.nonzero(slack < -sampler.atol)[0]
        witnesses += [(float(sv), float(y1[i]), float(y2[i])) for i in bad[:3]]
    entries.append(ConditionEntry("H.3'", "fail" if witnesses else "sampled-pass",
                                  witnesses[:5], worst))

    return ConditionReport(entries=entries)


def _bcast(y, x):
    y = np.asarray(y, dtype=float)
    if y.shape[0] != x.shape[0]:
        reps = int(np.ceil(x.shape[0] / y.shape[0]))
        y = np.tile(y, reps)[: x.shape[0]]
    return y
