"""Least-squares conditional-expectation estimator on basis functions of X."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import solve_triangular


class RankDeficientError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegressionBasis:
    """Global polynomial or local piecewise-linear regression basis.

    family "poly": total-degree monomials of the (centered, scaled)
    coordinates up to ``degree``. family "piecewise_linear": hat functions on
    the sorted ``knots`` (d=1 only), with constant extrapolation beyond the
    end knots. ``ridge`` regularizes the fit in the orthonormalized
    coordinates, so in-span targets are reproduced to relative accuracy
    ~ridge per step.
    """

    family: str = "poly"
    degree: int = 3
    knots: tuple = ()
    ridge: float = 1e-8
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("poly", "piecewise_linear"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.family == "poly" and self.degree < 0:
            raise ValueError("polynomial degree must be >= 0")
        if self.family == "piecewise_linear":
            if len(self.knots) < 2:
                raise ValueError("piecewise-linear basis needs at least two knots")
            if np.any(np.diff(self.knots) <= 0):
                raise ValueError("knots must be strictly increasing")

    def n_basis(self, d):
        if self.family == "piecewise_linear":
            return len(self.knots)
        count = 0
        for deg in range(self.degree + 1):
            count += sum(1 for _ in combinations_with_replacement(range(d), deg))
        return count

    def design(self, x):
        """Design matrix (M, n_basis) for points x of shape (M, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.family == "piecewise_linear":
            return self._design_hats(x)
        z = (x - self.center) / self.scale
        M, d = z.shape
        cols = [np.ones(M)]
        for deg in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(d), deg):
                col = np.ones(M)
                for axis in combo:
                    col = col * z[:, axis]
                cols.append(col)
        return np.column_stack(cols)

    def _design_hats(self, x):
        if x.shape[1] != 1:
            raise ValueError("piecewise-linear basis is implemented for d=1")
        knots = np.asarray(self.knots, dtype=float)
        xc = np.clip(x[:, 0], knots[0], knots[-1])
        idx = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, len(knots) - 2)
        left = knots[idx]
        width = knots[idx + 1] - left
        frac = (xc - left) / width
        A = np.zeros((x.shape[0], len(knots)))
        rows = np.arange(x.shape[0])
        A[rows, idx] = 1.0 - frac
        A[rows, idx + 1] = frac
        return A


@dataclass
class RegressionStep:
    """Orthonormalized design for one time step; reused for many targets.

    Basis functions with no support on the path cloud are dropped from the
    fit and carry zero coefficients in the read-out.
    """

    Q: np.ndarray
    R: np.ndarray
    keep: np.ndarray
    n_basis: int
    shrink: float
    cond: float

    def fit_values(self, targets):
        proj = self.Q.T @ targets
        return self.Q @ (proj * self.shrink)

    def fit_coeffs(self, targets):
        proj = (self.Q.T @ targets) * self.shrink
        beta_kept = solve_triangular(self.R, proj, lower=False)
        if self.keep.all():
            return beta_kept
        beta = np.zeros((self.n_basis,) + np.shape(targets)[1:])
        beta[self.keep] = beta_kept
        return beta


def build_step(basis: RegressionBasis, x, min_paths_factor=1):
    A = basis.design(x)
    M, n_b = A.shape
    col_norms = np.linalg.norm(A, axis=0)
    keep = col_norms > 0.0
    if M < int(np.sum(keep)) * min_paths_factor:
        raise RankDeficientError(f"{M} paths cannot support {int(np.sum(keep))} basis functions")
    Q, R = np.linalg.qr(A[:, keep])
    diag = np.abs(np.diag(R))
    cond = float(diag.max() / max(diag.min(), 1e-300))
    if cond > 1e14:
        raise RankDeficientError(
            f"design matrix effectively rank deficient after regularization (cond {cond:.2e})"
        )
    return RegressionStep(Q=Q, R=R, keep=keep, n_basis=n_b,
                          shrink=1.0 / (1.0 + basis.ridge), cond=cond)
