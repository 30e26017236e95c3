import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from spsplab.geometry import Band, Box, point, sample_band
from spsplab.lemmas import (budget_bounded, budget_growth, budget_lipschitz, containment_level,
                            robustness_margins, s_star, ultimate_radius, underestimation_alphas)
from spsplab.oracles import ErrorModel, gradient_oracle, perturb
from spsplab.problems import builtin, make_lyapunov


def radial(fn):
    return lambda Y, D: fn(np.asarray(D))


def test_containment_trivial():
    res = containment_level(radial(lambda d: d ** 2), point([0.0]), 0.0, 1.0, 2.0)
    assert res.l2 == pytest.approx(1.0) and res.l1 == pytest.approx(1.0)
    assert res.level == pytest.approx(0.9) and res.certified


def test_containment_disconnected_sublevel():
    phi = radial(lambda d: np.minimum(d ** 2, (d - 3) ** 2 + 0.5))
    res = containment_level(phi, point([0.0]), 0.0, 1.0, 5.0)
    assert res.l1 < res.l2
    assert res.l2 == pytest.approx(1.0)
    assert res.l1 == pytest.approx(0.5, abs=1e-6)
    # dense scan: every point with phi <= level is within distance 1
    y = np.linspace(-5, 5, 1_000_001)
    vals = np.minimum(y ** 2, (np.abs(y) - 3) ** 2 + 0.5)
    assert np.all(np.abs(y[vals <= res.level]) < 1.0)


def test_containment_box_attractor_2d():
    A = Box([-0.5, -0.5], [0.5, 0.5])
    res = containment_level(radial(lambda d: d ** 2), A, 0.2, 0.5, 2.0)
    assert res.certified and res.level == pytest.approx(0.9 * 0.49, rel=1e-9)


def test_containment_reports_violator_on_coarse_grid():
    # a narrow dip outside the shell, centred on a node of the refined
    # (half-spacing, quarter-offset) sweep and between nodes of the coarse grid
    h = 0.01
    centre = 100 * h + h / 4

    def phi(Y, D):
        D = np.asarray(D)
        return D ** 2 - 0.99 * np.exp(-((D - centre) / 5e-4) ** 2) * D ** 2

    res = containment_level(phi, point([0.0]), 0.0, 0.5, 2.0, grid_resolution=h)
    assert not res.certified and res.violator is not None


def test_containment_preconditions():
    with pytest.raises(ValueError):
        containment_level(radial(lambda d: d), point([0.0]), 0.5, 1.0, 1.2)
    with pytest.raises(ValueError):
        containment_level(radial(lambda d: d - 1.5), point([0.0]), 0.0, 1.0, 2.0)


def test_underestimation_formulas():
    u = underestimation_alphas(0.5, 1.0, 2.0)
    assert u.alpha_q == 0.125 and u.alpha_l == 0.25
    v = underestimation_alphas(0.5, 2.0, 2.0)
    assert v.alpha_q == 0.0625 and v.alpha_l == 0.125
    assert u.quadratic_coeff == 0.125 and u.linear_coeff == 0.25
    assert u.combined == (0.125, 0.0625)
    with pytest.raises(ValueError):
        underestimation_alphas(0.0, 1.0, 1.0)


def test_underestimation_holds_on_band():
    res = containment_level(radial(lambda d: d ** 2), point([0.0, 0.0]), 0.0, 1.0, 3.0)
    u = underestimation_alphas(res.level, 1.0, 3.0)
    Y = sample_band(Band(point([0.0, 0.0]), 3.0, 1.0), 10_000, 0)
    D = np.linalg.norm(Y, axis=1)
    assert np.all(D ** 2 - u.alpha_q * D ** 2 >= -1e-9)
    assert np.all(D ** 2 - u.alpha_l * D >= -1e-9)


def test_budget_growth_examples():
    bud = budget_growth(0.5, 4.0, 0.0, 1.0)
    assert bud.params["alpha_sup"] == 0.5
    assert bud.alpha_max == pytest.approx(0.5 / 1.01)
    big = budget_growth(0.5, 4.0, 1.0, 1e6)
    assert big.binding == "alpha_growth"


def test_budget_growth_root_matches_bisection():
    bud = budget_growth(0.5, 4.0, 1.0, 0.1)
    root = brentq(lambda a: a * (1 - 2 * a) - 0.1, 0.0, 0.25, xtol=1e-15)
    assert bud.components["alpha_1"] == pytest.approx(root, abs=1e-10)
    assert bud.alpha_max <= 0.5


def test_budget_bounded_examples():
    bud = budget_bounded(0.5, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.1)
    assert bud.components["alpha_q"] == pytest.approx(0.125)
    assert bud.components["alpha_1"] == pytest.approx(math.sqrt(0.1 / (0.5 * 4)))
    assert bud.params["K_phi"] == pytest.approx(1.01 * 0.5 * 4)
    assert budget_bounded(0.5, 1e6, 0.0, 1.0, 2.0, 0.0, 1.0, 0.1).alpha_max < 1e-6
    with pytest.raises(ValueError):
        budget_bounded(0.5, 2.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.1)


def test_budget_lipschitz_examples():
    bud = budget_lipschitz(0.5, 1.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 0.1)
    assert bud.components["alpha_q"] == pytest.approx(0.125)
    zero = budget_lipschitz(0.5, 3.0, 0.0, 0.0, 0.7, 2.0, 0.0, 1.0, 0.1)
    assert zero.components["alpha_q"] == pytest.approx(0.7 / (2 * 4 * 0.5 * 9))
    assert zero.params["kappa"] > 0


@settings(max_examples=100, deadline=None)
@given(w=st.floats(0.1, 2), L=st.floats(0.1, 5), s=st.floats(0, 3), b=st.floats(0, 2),
       bo=st.floats(1e-3, 2), R=st.floats(0.1, 2))
def test_lipschitz_alpha1_matches_bisection(w, L, s, b, bo, R):
    bud = budget_lipschitz(w, L, s, b, 1.0, 2 * R + 1, 0.0, R, bo)
    g = lambda a: a * b + 2 * w * a * a * L * L * R * R + 2 * w * a * a * s - bo  # noqa: E731
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
    root = brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-15)
    assert bud.components["alpha_1"] == pytest.approx(root, abs=1e-10)
    assert bud.alpha_max == min(bud.components.values())


def test_budget_w_functions():
    bud = budget_lipschitz(0.5, 1.0, 0.0, 0.0, 0.9, 2.0, 0.0, 1.0, 0.1)
    W = bud.W(bud.alpha_max)
    assert np.all(W(None, np.array([1.0, 1.5, 2.0])) > 0)
    g = budget_growth(0.5, 4.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        g.W(0.1)
    assert g.W(0.1, radial(lambda d: d))(None, np.array([2.0]))[0] == pytest.approx(
        0.1 * 2 * (1 - 0.1 * 2))


def test_s_star():
    f, A = builtin("quadratic")
    assert s_star(gradient_oracle(f), A) == 0.0
    V = make_lyapunov("squared-distance", A)
    o = perturb(gradient_oracle(f), ErrorModel(0.3, 0.0), A, V)
    assert s_star(o, A) == pytest.approx(0.09)


def test_ultimate_radius_monotone():
    bud = budget_bounded(0.5, 2.0, 0.1, 1.0, 2.0, 0.0, 1.0, 0.1)
    radii = [ultimate_radius(bud, a) for a in (0.2, 0.1, 0.05, 0.0)]
    assert np.all(np.diff(radii) <= 0) and radii[-1] == pytest.approx(1.0)


def test_robustness_formulas():
    m = robustness_margins(1.0, 2.0, 1.0, 0.0, 0.0)
    assert m.a_max == 0.25 and m.r_max == 0.125
    assert m.b_hat(0.0, 0.0) == 0.0
    m2 = robustness_margins(1.0, 2.0, 1.0, 0.3, 0.5)
    assert m2.b_hat(0.1, 0.2) == pytest.approx(0.3 + 0.5 * (0.1 + 0.2 * 0.5))
    d = np.linspace(0.1, 2.0, 20)
    assert np.allclose(m.phi_hat(0.0, 0.0)(None, d), 0.25 * d + 0.125 * d ** 2)


@settings(max_examples=100, deadline=None)
@given(fa=st.floats(0, 0.999), fr=st.floats(0, 0.999))
def test_phi_hat_positive_inside_margins(fa, fr):
    m = robustness_margins(0.8, 3.0, 1.0, 0.0, 0.5)
    d = np.linspace(0.5, 3.0, 200)
    assert np.all(m.phi_hat(fa * m.a_max, fr * m.r_max)(None, d) > 0)
