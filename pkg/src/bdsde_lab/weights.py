"""Polynomial weight, weighted spatial norms and discounted path-space norms.

All norms in this package are rho^{-1}-weighted with rho(x) = (1+|x|)^q.
Spatial integrals are truncated to [-R, R]^d with R chosen so the rho^{-1}
tail mass beyond R is below a configured tolerance, then evaluated with
trapezoidal quadrature on a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class WeightSpec:
    """Weight exponent q, spatial dimension d and growth order p.

    The growth-condition tie q > d + 8p is enforced when p is declared.
    Passing p=None gives a free-standing weight usable for norm computation
    alone; then only integrability (q > d) is required.
    """

    q: float
    d: int = 1
    p: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("spatial dimension d must be >= 1")
        if self.q <= self.d:
            raise ValueError(f"need q > d for an integrable weight, got q={self.q}, d={self.d}")
        if self.p is not None:
            if self.p < 2:
                raise ValueError("growth order p must be >= 2")
            if self.q <= self.d + 8 * self.p:
                raise ValueError(
                    f"weight exponent q={self.q} rejected: need q > d + 8p = {self.d + 8 * self.p}"
                )

    def rho(self, x):
        return rho_weight(x, self)

    def rho_inv(self, x):
        return 1.0 / rho_weight(x, self)

    def tail_mass(self, R):
        """Exact rho^{-1} mass outside the ball |x|_inf <= R (d=1) / upper bound (d>1)."""
        # d=1: 2 * int_R^inf (1+x)^{-q} dx. d>1: crude union bound, adequate
        # for radius selection.
        one_sided = (1.0 + R) ** (1.0 - self.q) / (self.q - 1.0)
        return 2.0 * self.d * one_sided

    def radius_for_tolerance(self, tol=1e-8):
        """Smallest grid radius whose weighted tail mass is below tol."""
        R = 1.0
        while self.tail_mass(R) >= tol:
            R *= 1.5
            if R > 1e6:
                raise ValueError("weight tail does not reach tolerance at a sane radius")
        return R


def rho_weight(x, spec: WeightSpec):
    """Evaluate rho(x) = (1+|x|)^q, |x| the Euclidean norm. Vectorized over rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        r = np.abs(x)
    elif x.ndim == 1 and spec.d == 1:
        r = np.abs(x)
    else:
        r = np.linalg.norm(np.atleast_2d(x), axis=-1)
    return (1.0 + r) ** spec.q


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform tensor grid on [-R, R]^d used for quadrature and FD solves."""

    d: int
    R: float
    h_x: float

    def __post_init__(self):
        if self.R <= 0 or self.h_x <= 0:
            raise ValueError("R and h_x must be positive")
        if self.d not in (1, 2):
            raise ValueError("grids are implemented for d in {1, 2}")

    @property
    def n_per_axis(self):
        return int(round(2.0 * self.R / self.h_x)) + 1

    @property
    def axis(self):
        return np.linspace(-self.R, self.R, self.n_per_axis)

    def nodes(self):
        """All grid nodes, shape (n_nodes, d)."""
        if self.d == 1:
            return self.axis[:, None]
        xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def quad_weights(self):
        """Trapezoidal quadrature weights aligned with nodes(), shape (n_nodes,)."""
        w1 = np.full(self.n_per_axis, self.h_x)
        w1[0] = w1[-1] = 0.5 * self.h_x
        if self.d == 1:
            return w1
        return np.outer(w1, w1).ravel()

    def interior_mask(self):
        if self.d == 1:
            m = np.ones(self.n_per_axis, dtype=bool)
            m[0] = m[-1] = False
            return m
        m2 = np.ones((self.n_per_axis, self.n_per_axis), dtype=bool)
        m2[0, :] = m2[-1, :] = m2[:, 0] = m2[:, -1] = False
        return m2.ravel()


def weighted_lp_norm(values, k, spec: WeightSpec, grid: SpatialGrid):
    """Discrete weighted L^k norm (int |l|^k rho^{-1} dx)^{1/k} on the grid."""
    values = np.asarray(values, dtype=float)
    nodes = grid.nodes()
    if values.shape[0] != nodes.shape[0]:
        raise ValueError(f"field has {values.shape[0]} values but grid has {nodes.shape[0]} nodes")
    if k < 2:
        raise ValueError("norm exponent k must be >= 2")
    w = grid.quad_weights() / rho_weight(nodes, spec)
    return float(np.sum(np.abs(values) ** k * w) ** (1.0 / k))


def weighted_l2_inner(values_a, values_b, spec: WeightSpec, grid: SpatialGrid):
    nodes = grid.nodes()
    w = grid.quad_weights() / rho_weight(nodes, spec)
    return float(np.sum(np.asarray(values_a) * np.asarray(values_b) * w))


def cloud_rms(values, anchors, spec: WeightSpec):
    """rho^{-1}-weighted root mean square of per-path values.

    ``anchors`` are the spatial points carrying the weight (typically the
    start points of a Monte Carlo cloud). Used for panel-vs-panel
    comparisons; relative errors do not depend on the normalization.
    """
    values = np.asarray(values, dtype=float)
    w = 1.0 / rho_weight(anchors, spec)
    w = w / np.sum(w)
    return float(np.sqrt(np.sum(values**2 * w)))


@dataclass(frozen=True)
class DiscountedNormSpec:
    """Discount rate K and exponent for the e^{-Ks}-weighted path norms."""

    K: float
    q_exp: float = 2.0
    horizon: tuple[float, float] | None = None  # (t, T); None = taken from the panel
    infinite: bool = False

    def __post_init__(self):
        if self.infinite and self.K <= 0:
            raise ValueError("infinite horizons require a positive discount rate K")
        if self.K < 0:
            raise ValueError("discount rate K must be >= 0")


def discounted_path_norm(times, space_norms, spec: DiscountedNormSpec):
    """Discrete sup- and integral-type discounted norms of a path of norms.

    ``space_norms[k]`` is the spatial norm of the process at ``times[k]``.
    Returns (sup_norm, integral_norm) where

        sup_norm      = sup_k  e^{-K t_k} ||.||^q
        integral_norm = int    e^{-K s} ||.||^q ds   (trapezoid in time)
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(space_norms, dtype=float)
    if times.size == 0 or vals.size == 0:
        raise ValueError("empty panel")
    if spec.horizon is not None:
        lo, hi = spec.horizon
        mask = (times >= lo - 1e-12) & (times <= hi + 1e-12)
        if not np.any(mask):
            raise ValueError("panel time grid lies outside the norm horizon")
        times, vals = times[mask], vals[mask]
    weighted = np.exp(-spec.K * times) * vals**spec.q_exp
    sup_norm = float(np.max(weighted))
    integral_norm = float(np.trapezoid(weighted, times)) if len(times) > 1 else 0.0
    return sup_norm, integral_norm


def equivalence_of_norm_ratio(phi_battery, flow_values, start_nodes, times_idx, spec: WeightSpec,
                              grid: SpatialGrid):
    """Empirical two-sided bound check for the flow-composed weighted norms.

    For each test function phi and each requested time index, computes

        E[int |phi(X_s^{t,x})| rho^{-1}(x) dx] / E[int |phi(x)| rho^{-1}(x) dx],

    the expectation estimated by averaging over the Monte Carlo paths in
    ``flow_values`` (shape (n_times, n_paths, d); the paths at index i start
    from ``start_nodes[i % n_nodes]``). Returns a dict with the per-(phi, t)
    ratios and their min/max over the battery.
    """
    nodes = grid.nodes()
    w = grid.quad_weights() / rho_weight(nodes, spec)
    n_nodes = nodes.shape[0]
    n_paths = flow_values.shape[1]
    if n_paths % n_nodes != 0:
        raise ValueError("path cloud must tile the grid nodes")
    reps = n_paths // n_nodes

    ratios = {}
    for name, phi in phi_battery.items():
        denom = float(np.sum(np.abs(phi(nodes)) * w))
        if denom == 0.0:
            raise ValueError(f"test function {name!r} vanishes on the grid")
        for k in times_idx:
            vals = np.abs(phi(flow_values[k]))  # (n_paths,)
            per_node = vals.reshape(n_nodes, reps).mean(axis=1)
            num = float(np.sum(per_node * w))
            ratios[(name, int(k))] = num / denom
    vals = np.array(list(ratios.values()))
    return {"ratios": ratios, "ratio_low": float(vals.min()), "ratio_high": float(vals.max()),
            "samples": len(vals)}
