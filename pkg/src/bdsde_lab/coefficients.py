"""Problem data: drift, diffusion, reaction and backward-noise coefficients.

Vectorization convention (d = spatial dimension, M = batch size):

    b(x):          (M, d) -> (M, d)
    sigma(x):      (M, d) -> (M, d, d)
    f(s, x, y):    scalar, (M, d), (M,) -> (M,)
    g_j(s, x, y):  scalar, (M, d), (M,) -> (M,)
    h(x):          (M, d) -> (M,)

The monotonicity constant ``mu`` is the upper constant in
(y1-y2)(f(y1)-f(y2)) <= mu |y1-y2|^2; dissipative drifts have mu <= 0 and
their positive decay rate is -mu.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CoefficientSet:
    b: object
    sigma: object
    f: object
    df_dy: object
    f0: object
    g: tuple = ()
    dg_dy: tuple = ()
    h: object = None
    L: float = 1.0
    L_j: tuple = ()
    l_tail_sq: float = 0.0
    mu: float = 0.0
    p: int = 2
    name: str = ""

    def __post_init__(self):
        self.g = tuple(self.g)
        self.dg_dy = tuple(self.dg_dy)
        self.L_j = tuple(float(v) for v in self.L_j)
        if len(self.L_j) != len(self.g):
            raise ValueError("need one Lipschitz constant per backward-noise coefficient")
        if self.dg_dy and len(self.dg_dy) != len(self.g):
            raise ValueError("dg_dy must match g in length")
        if self.p < 2:
            raise ValueError("growth order p must be >= 2")
        if self.l_tail_sq < 0:
            raise ValueError("declared tail bound must be nonnegative")
        if not np.isfinite(sum(v**2 for v in self.L_j) + self.l_tail_sq):
            raise ValueError("sum of squared Lipschitz constants must be finite")

    @property
    def n_noise(self):
        return len(self.g)

    def lipschitz_sum(self):
        """Sum_j L_j (plain sum, as used by the discount-rate condition)."""
        return float(sum(self.L_j) + np.sqrt(self.l_tail_sq) * 0.0)

    def lipschitz_sq_sum(self):
        return float(sum(v**2 for v in self.L_j) + self.l_tail_sq)

    def restricted(self, n_components):
        """Copy with only the first n backward-noise components active."""
        if n_components > len(self.g):
            raise ValueError("cannot restrict to more components than stored")
        return CoefficientSet(
            b=self.b, sigma=self.sigma, f=self.f, df_dy=self.df_dy, f0=self.f0,
            g=self.g[:n_components], dg_dy=self.dg_dy[:n_components] if self.dg_dy else (),
            h=self.h, L=self.L, L_j=self.L_j[:n_components], l_tail_sq=self.l_tail_sq,
            mu=self.mu, p=self.p, name=self.name,
        )

    def with_drift(self, f, df_dy, name=None):
        return CoefficientSet(
            b=self.b, sigma=self.sigma, f=f, df_dy=df_dy, f0=self.f0,
            g=self.g, dg_dy=self.dg_dy, h=self.h, L=self.L, L_j=self.L_j,
            l_tail_sq=self.l_tail_sq, mu=self.mu, p=self.p,
            name=name if name is not None else self.name,
        )


# -- small constructors used by presets and inline config specs --------------

def zero_drift(d=1):
    def b(x):
        return np.zeros_like(np.atleast_2d(x), dtype=float)
    return b


def linear_drift(rate, d=1):
    def b(x):
        return rate * np.atleast_2d(np.asarray(x, dtype=float))
    return b


def constant_sigma(value, d=1):
    def sigma(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = value
        return out
    return sigma


def proportional_sigma(value, d=1):
    """sigma(x) = value * diag(x); multiplicative noise for benchmarks."""
    def sigma(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = value * x
        return out
    return sigma


def polynomial_reaction(coeffs_y):
    """f(s, x, y) = sum_k coeffs_y[k] y^k, together with its y-derivative."""
    coeffs_y = tuple(float(c) for c in coeffs_y)
    dcoeffs = tuple(k * c for k, c in enumerate(coeffs_y))[1:]

    def f(s, x, y):
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), coeffs_y)

    def df(s, x, y):
        if not dcoeffs:
            return np.zeros_like(np.asarray(y, dtype=float))
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), dcoeffs)

    return f, df


def constant_g(value):
    def g(s, x, y):
        return np.full(np.shape(np.asarray(y)), float(value))

    def dg(s, x, y):
        return np.zeros(np.shape(np.asarray(y)))

    return g, dg, 0.0  # Lipschitz constant in (s, x, y)


def affine_g(const, slope):
    def g(s, x, y):
        return const + slope * np.asarray(y, dtype=float)

    def dg(s, x, y):
        return np.full(np.shape(np.asarray(y)), float(slope))

    return g, dg, abs(float(slope))
