import dataclasses
import math

import numpy as np
import pytest

from twoscale.errors import InvalidArgument
from twoscale.model import (
    check_condition_m0,
    check_hypothesis_h2,
    check_model,
    gaussian_invariant_law,
    get_model,
    linear_test_model,
    m0_value,
    nemytskii,
    pseudo_spectral_gram,
)
from twoscale.spectral import check_hypothesis_h1


def test_nemytskii_projection_map(lin8):
    g = lin8.grid
    v = g.to_grid(np.eye(8)[0])
    u = np.zeros_like(v)
    np.testing.assert_array_equal(nemytskii(lin8, "b1", u, v, g.points), v)
    np.testing.assert_array_equal(nemytskii(lin8, "b2", u, u, g.points), np.zeros_like(v))
    np.testing.assert_array_equal(nemytskii(lin8, "g2", u, v, g.points), np.ones_like(v))


def test_nemytskii_errors(lin8):
    g = lin8.grid
    with pytest.raises(InvalidArgument):
        nemytskii(lin8, "b3", np.zeros(g.M), np.zeros(g.M), g.points)
    with pytest.raises(InvalidArgument):
        nemytskii(lin8, "b1", np.zeros(g.M), np.zeros(g.M + 1), g.points)


def test_h2_linear_model(lin8):
    rep = check_hypothesis_h2(lin8, 1000, 0)
    assert rep.passed
    assert rep.measured_lb2 <= 0.5 * 1.01
    # affine map: the quotient is the slope up to rounding
    assert rep.measured_lb2 == pytest.approx(0.5, abs=1e-12)
    assert rep.measured_lg2 == 0.0
    assert rep.growth_exponent == pytest.approx(0.0, abs=1e-12)


def test_h2_flags_large_lb2():
    rep = check_hypothesis_h2(linear_test_model(N=8, b2_fast=-2.0))
    assert not rep.passed
    assert any("gap" in v for v in rep.violations)


def test_h2_flags_understated_constant(lin8):
    liar = dataclasses.replace(lin8, lb2=0.1)
    assert not check_hypothesis_h2(liar).passed


def test_h2_flags_g1_floor():
    m = linear_test_model(N=8, g1_const=2.0, g1_sin_fast=1.0)
    assert check_hypothesis_h2(m).passed
    bad = dataclasses.replace(m, delta=1.5)
    assert not check_hypothesis_h2(bad).passed


def _h1(model):
    return check_hypothesis_h1(model.slow, model.fast)


@pytest.mark.parametrize("b2_fast, expected, ok", [(0.0, 0.0, True), (-0.5, 0.25, True),
                                                    (-0.8, 0.64, False)])
def test_m0_examples(b2_fast, expected, ok):
    m = linear_test_model(N=8, b2_fast=b2_fast)
    rep = check_condition_m0(m, _h1(m))
    assert rep.m0 == pytest.approx(expected, abs=1e-12)
    assert rep.noise_term == 0.0
    assert rep.passed is ok


def test_m0_monotone_in_constants():
    grid = np.linspace(0.0, 0.9, 10)
    for lg2 in (0.0, 0.3):
        vals = [sum(m0_value(l, lg2, 1.0, 0.75, math.inf, 2.0, 1.0)) for l in grid]
        assert np.all(np.diff(vals) >= 0)
    for rho in (math.inf, 4.0):
        vals = [sum(m0_value(0.2, g, 1.0, 0.75, rho, 2.0, 1.5)) for g in grid]
        assert np.all(np.diff(vals) >= 0)


def test_m0_finite_rho_formula():
    # direct transcription of the contraction constant at rho = 4
    lb2, lg2, lam, beta, rho, zeta, kappa = 0.3, 0.2, 1.0, 0.75, 4.0, 2.0, 1.5
    e = beta * (rho - 2) / rho
    want = (lb2 / lam) ** 2 + lg2 ** 2 * (beta / math.e) ** e * zeta ** ((rho - 2) / rho) \
        * kappa ** (2 / rho) * (rho / (lam * (rho + 2))) ** (1 - e)
    assert sum(m0_value(lb2, lg2, lam, beta, rho, zeta, kappa)) == pytest.approx(want, rel=1e-14)


def test_check_model_linear():
    h1, h2, m0 = check_model(linear_test_model(N=8))
    assert h1.passed and h2.passed and m0.passed
    assert h1.m0 == 0.25


def test_invariant_law_linear(lin8):
    x = np.eye(8)[0]
    mean, var = gaussian_invariant_law(lin8, x)
    k = np.arange(1, 9)
    np.testing.assert_allclose(mean, x / (2 * k ** 2 + 1), rtol=1e-12)
    np.testing.assert_allclose(var, 1 / (2 * k ** 2 + 1), rtol=1e-12)


def test_exact_bbar_linear(lin8):
    x = np.random.default_rng(0).normal(size=(3, 8))
    k = np.arange(1, 9)
    np.testing.assert_allclose(lin8.bbar_exact(x), x / (2 * k ** 2 + 1), rtol=1e-12, atol=1e-15)


def test_gram_constant_multiplier(lin8):
    S = pseudo_spectral_gram(lin8, np.zeros(8), np.zeros(8))
    np.testing.assert_allclose(S, np.eye(8), atol=1e-12)


def test_catalog():
    assert get_model("bistable", N=4).name == "bistable"
    assert get_model("additive_fast", N=4).N == 4
    with pytest.raises(InvalidArgument):
        get_model("nope")
    with pytest.raises(InvalidArgument):
        get_model("linear_test_model", bogus=1)


def test_model_validation(lin8):
    with pytest.raises(InvalidArgument):
        dataclasses.replace(lin8, gamma=1.0)
