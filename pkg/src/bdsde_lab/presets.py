"""Built-in coefficient presets for the experiment runner and tests."""

from __future__ import annotations

import numpy as np

from .coefficients import (
    CoefficientSet,
    affine_g,
    constant_g,
    constant_sigma,
    linear_drift,
    polynomial_reaction,
    zero_drift,
)


def _h_identity(x):
    return np.atleast_2d(np.asarray(x, dtype=float))[:, 0]


def _h_tanh(x):
    return np.tanh(np.atleast_2d(np.asarray(x, dtype=float))[:, 0])


def _h_gauss_bump(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.exp(-0.5 * np.sum(x**2, axis=-1))


def _h_inv_quad(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return 1.0 / (1.0 + np.sum(x**2, axis=-1))


def _f0_zero(s, x):
    return np.zeros(np.atleast_2d(np.asarray(x)).shape[0])


def _f0_one(s, x):
    return np.ones(np.atleast_2d(np.asarray(x)).shape[0])


H_PRESETS = {
    "identity": _h_identity,
    "tanh": _h_tanh,
    "gauss-bump": _h_gauss_bump,
    "inv-quad": _h_inv_quad,
}


def cubic_monotone(d=1, gammas=(0.3, 0.15)):
    """f(y) = -y^3 with p = 3: the polynomial-growth dissipative benchmark."""
    f, df = polynomial_reaction([0.0, 0.0, 0.0, -1.0])
    g, dg, Lj = zip(*(constant_g(c) for c in gammas)) if gammas else ((), (), ())
    return CoefficientSet(
        b=zero_drift(d), sigma=constant_sigma(1.0, d), f=f, df_dy=df, f0=_f0_one,
        g=tuple(g), dg_dy=tuple(dg), h=_h_inv_quad, L=3.0, L_j=tuple(Lj),
        mu=0.0, p=3, name="cubic-monotone",
    )


def linear_mu(d=1, mu_rate=1.0, c=2.0, sigma_value=1.0, gammas=()):
    """f(y) = -mu y + c: dissipative linear drift with explicit fixed point c/mu."""
    f, df = polynomial_reaction([c, -mu_rate])
    g, dg, Lj = zip(*(constant_g(v) for v in gammas)) if gammas else ((), (), ())
    return CoefficientSet(
        b=zero_drift(d), sigma=constant_sigma(sigma_value, d), f=f, df_dy=df, f0=_f0_one,
        g=tuple(g), dg_dy=tuple(dg), h=_h_identity, L=abs(c) + abs(mu_rate), L_j=tuple(Lj),
        mu=-mu_rate, p=2, name="linear-mu",
    )


def gamma_constant_g(d=1, gamma=0.5):
    """f = 0, g = gamma constant, b = 0, sigma = 1, h(x) = x: exactly solvable."""
    f, df = polynomial_reaction([0.0])
    g, dg, Lj = constant_g(gamma)
    return CoefficientSet(
        b=zero_drift(d), sigma=constant_sigma(1.0, d), f=f, df_dy=df, f0=_f0_zero,
        g=(g,), dg_dy=(dg,), h=_h_identity, L=1.0, L_j=(Lj,),
        mu=0.0, p=2, name="gamma-constant-g",
    )


def heat(d=1, gammas=()):
    """f = 0, g = 0, sigma = sqrt(2), Gaussian-bump terminal value."""
    f, df = polynomial_reaction([0.0])
    g, dg, Lj = zip(*(constant_g(c) for c in gammas)) if gammas else ((), (), ())
    return CoefficientSet(
        b=zero_drift(d), sigma=constant_sigma(np.sqrt(2.0), d), f=f, df_dy=df, f0=_f0_zero,
        g=tuple(g), dg_dy=tuple(dg), h=_h_gauss_bump, L=1.0, L_j=tuple(Lj),
        mu=0.0, p=2, name="heat",
    )


def ou_flow(d=1):
    """Ornstein-Uhlenbeck forward flow, trivial backward data."""
    f, df = polynomial_reaction([0.0])
    return CoefficientSet(
        b=linear_drift(-1.0, d), sigma=constant_sigma(1.0, d), f=f, df_dy=df, f0=_f0_zero,
        g=(), dg_dy=(), h=_h_identity, L=1.0, L_j=(),
        mu=0.0, p=2, name="ou-flow",
    )


def noise_ladder_coeffs(n_components=8, d=1):
    """g_j = 2^{-j} constants: the noise-dimension ladder benchmark."""
    base = gamma_constant_g(d)
    gammas = [2.0 ** (-(j + 1)) for j in range(n_components)]
    gs, dgs, Ljs = zip(*(constant_g(c) for c in gammas))
    return CoefficientSet(
        b=base.b, sigma=base.sigma, f=base.f, df_dy=base.df_dy, f0=base.f0,
        g=gs, dg_dy=dgs, h=base.h, L=1.0, L_j=Ljs, mu=0.0, p=2,
        name="noise-ladder",
    )


PRESETS = {
    "cubic-monotone": cubic_monotone,
    "linear-mu": linear_mu,
    "gamma-constant-g": gamma_constant_g,
    "heat": heat,
    "ou-flow": ou_flow,
}


def get_preset(name, **kwargs):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)


def preset_table():
    """Rows (name, p, mu, n_noise, description) for the CLI listing."""
    rows = []
    descriptions = {
        "cubic-monotone": "f=-y^3, p=3, monotone with mu=0",
        "linear-mu": "f=-mu*y+c, fixed point c/mu, dissipative",
        "gamma-constant-g": "f=0, constant g, exactly solvable",
        "heat": "f=0, g=0, sigma=sqrt(2), Gaussian bump data",
        "ou-flow": "OU forward flow benchmark",
    }
    for name in sorted(PRESETS):
        c = PRESETS[name]()
        rows.append((name, c.p, c.mu, len(c.g), descriptions[name]))
    return rows
