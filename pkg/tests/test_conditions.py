import json

import numpy as np
import pytest

from bdsde_lab.coefficients import polynomial_reaction
from bdsde_lab.conditions import ConditionEntry, Sampler, check_conditions
from bdsde_lab.presets import (cubic_monotone, gamma_constant_g, heat, linear_mu,
                               ou_flow, get_preset, preset_table)
from bdsde_lab.weights import WeightSpec


SAMPLER = Sampler(n_samples=2000, seed=7)


def test_monotone_cubic_passes():
    coeffs = cubic_monotone()
    report = check_conditions(coeffs, SAMPLER)
    assert report.entry("H.1").status == "sampled-pass"
    assert report.entry("H.3").status == "sampled-pass"
    assert report.entry("H.6").status == "sampled-pass"


def test_antimonotone_cubic_fails_with_witness():
    coeffs = cubic_monotone()
    f, df = polynomial_reaction([0.0, 0.0, 0.0, +1.0])  # +y^3: monotonicity violated
    bad = coeffs.with_drift(f, df)
    report = check_conditions(bad, SAMPLER)
    entry = report.entry("H.3")
    assert entry.status == "fail"
    assert len(entry.witnesses) >= 1


def test_discount_condition_margin():
    # mu=2, K=1, p=2, sum L_j = 0.1: margin 2*2 - 1 - 6*0.1 = 2.4
    coeffs = linear_mu(mu_rate=2.0, c=0.0)
    from bdsde_lab.coefficients import affine_g

    g, dg, lj = affine_g(0.0, 0.1)
    withg = type(coeffs)(
        b=coeffs.b, sigma=coeffs.sigma, f=coeffs.f, df_dy=coeffs.df_dy, f0=coeffs.f0,
        g=(g,), dg_dy=(dg,), h=coeffs.h, L=coeffs.L, L_j=(lj,), mu=-2.0, p=2,
    )
    report = check_conditions(withg, SAMPLER, discount_K=1.0)
    entry = report.entry("H.9")
    assert entry.status == "pass"
    assert entry.margin == pytest.approx(2.4)


def test_discount_condition_boundary_fails():
    coeffs = linear_mu(mu_rate=0.5, c=0.0)
    report = check_conditions(coeffs, SAMPLER, discount_K=1.0)
    assert report.entry("H.9").status == "fail"
    assert report.entry("H.9").margin == pytest.approx(0.0)


def test_noise_free_sufficient_condition():
    coeffs = linear_mu(mu_rate=1.0, c=0.0)
    report = check_conditions(coeffs, SAMPLER, discount_K=1.5)
    assert report.entry("H.9").status == "pass"          # 2*1 - 1.5 > 0


def test_determinism_given_seed():
    coeffs = cubic_monotone()
    a = check_conditions(coeffs, SAMPLER)
    b = check_conditions(coeffs, SAMPLER)
    assert a.to_json() == b.to_json()


def test_fail_entry_requires_witness():
    with pytest.raises(ValueError):
        ConditionEntry("H.1", "fail", [])


def test_h4_integrability_and_time_exponent():
    coeffs = gamma_constant_g()
    weight = WeightSpec(q=18.0, d=1, p=2)
    probe = {"starts": np.linspace(-2, 2, 9)[:, None], "T": 1.0, "n_steps": 128,
             "n_paths": 128, "delta_steps": (4, 8, 16)}
    report = check_conditions(coeffs, SAMPLER, weight=weight, flow_probe=probe)
    entry = report.entry("H.4")
    assert entry.status == "sampled-pass"


def test_report_serialization_round_trip():
    coeffs = heat()
    report = check_conditions(coeffs, SAMPLER)
    parsed = json.loads(report.to_json())
    assert "H.1" in parsed and "status" in parsed["H.1"]
    text = report.to_text()
    assert "H.6" in text


def test_nonfinite_coefficient_becomes_witness_not_crash():
    coeffs = cubic_monotone()

    def bad_f(s, x, y):
        out = np.asarray(coeffs.f(s, x, y), dtype=float).copy()
        out[np.abs(y) > 4.9] = np.nan
        return out

    report = check_conditions(coeffs.with_drift(bad_f, coeffs.df_dy), SAMPLER)
    assert report.entry("H.1").status == "fail"
    assert report.entry("H.1").witnesses


def test_every_preset_passes_its_condition_set():
    # running the checker is the oracle for the preset table
    for name, p, mu, n_noise, _ in preset_table():
        coeffs = get_preset(name)
        weight = WeightSpec(q=1 + 8 * coeffs.p + 1, d=1, p=coeffs.p)
        report = check_conditions(coeffs, SAMPLER, weight=weight)
        for entry in report.entries:
            if name == "heat" and entry.name == "H.6":
                pass  # sigma = sqrt(2) is elliptic; no exemption needed
            assert entry.status != "fail", f"{name}: {entry.name} failed"


def test_preset_table_contents():
    rows = preset_table()
    assert len(rows) == 5
    cubic = [r for r in rows if r[0] == "cubic-monotone"][0]
    assert cubic[1] == 3 and cubic[2] == 0.0
