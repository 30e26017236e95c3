import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spsplab.oracles import (ErrorModel, finite_difference_oracle, gradient_oracle,
                             oracle_bound, perturb, scaled, subgradient_oracle,
                             weighted_gradient_oracle)
from spsplab.problems import ScalarField, builtin, make_lyapunov


def test_gradient_oracle_examples():
    f, _ = builtin("quadratic")
    assert np.allclose(gradient_oracle(f).query([2.0, 0.0]), [[2.0, 0.0]])
    assert np.allclose(gradient_oracle(f).query([0.0, 0.0]), 0)
    g, _ = builtin("norm-cone", {"c": 2.0})
    assert np.allclose(gradient_oracle(g).query([0.0, 3.0]), [[0.0, 2.0]])


def test_subgradient_oracle_requires_convexity():
    f, _ = builtin("nonconvex-1d")
    with pytest.raises(ValueError):
        subgradient_oracle(f)
    q, _ = builtin("quadratic")
    assert len(subgradient_oracle(q).query([1.0, 2.0])) == 1


def test_query_is_deterministic():
    f, _ = builtin("max-affine")
    o = subgradient_oracle(f, 6)
    assert np.array_equal(o.query([0.0, 0.0], seed=3), o.query([0.0, 0.0], seed=3))


def test_weighted_gradient_examples():
    f, _ = builtin("quadratic")
    o = weighted_gradient_oracle(f, [np.diag([2.0, 1.0])])
    assert np.allclose(o.query([1.0, 1.0]), [[2.0, 1.0]])
    ident = weighted_gradient_oracle(f, [np.eye(2)])
    Y = np.random.default_rng(0).normal(size=(20, 2))
    assert np.allclose(ident.batch(Y), gradient_oracle(f).batch(Y))


def test_weighted_schedule_counter_and_eigenvalues():
    f, _ = builtin("quadratic")
    rng = np.random.default_rng(1)
    mats = []
    for _ in range(5):
        M = rng.normal(size=(2, 2))
        mats.append(M @ M.T + 0.1 * np.eye(2))
    o = weighted_gradient_oracle(f, mats)
    assert o.lambda_min == pytest.approx(min(np.linalg.eigvalsh(M)[0] for M in mats))
    y = np.array([[1.0, -0.5]])
    for t in range(7):
        assert np.allclose(o.batch(y)[0, 0], y[0] @ mats[min(t, 4)])
    assert o.counter == 7
    twin = o.clone()
    twin.batch(y)
    assert twin.counter == 8 and o.counter == 7
    with pytest.raises(ValueError):
        weighted_gradient_oracle(f, [np.array([[1.0, 0.0], [0.0, -1.0]])])
    with pytest.raises(ValueError):
        weighted_gradient_oracle(f, [np.array([[1.0, 1.0], [0.0, 1.0]])])


def test_weighted_gradient_keeps_descent():
    f, A = builtin("weighted-quadratic")
    H = np.array([[3.0, 1.0], [1.0, 0.5]])
    o = weighted_gradient_oracle(f, [H])
    Y = np.random.default_rng(2).normal(scale=4, size=(1000, 2))
    g = f.gradient(Y)
    ip = np.einsum("mn,mn->m", g, o.batch(Y)[:, 0])
    assert np.all(ip >= o.lambda_min * np.einsum("mn,mn->m", g, g) - 1e-9)


def test_finite_difference_examples():
    f, _ = builtin("quadratic", {"n": 1})
    o = finite_difference_oracle(f, 0.1)
    assert o.query([1.0])[0, 0] == pytest.approx(1.05, abs=1e-12)
    g = ScalarField("affine", 2, lambda y: np.asarray(y) @ [2.0, -1.0] + 0.5,
                    lambda y: np.broadcast_to([2.0, -1.0], np.shape(y)))
    Y = np.random.default_rng(0).normal(size=(50, 2))
    assert np.allclose(finite_difference_oracle(g, 0.7).batch(Y)[:, 0], [2.0, -1.0])


def test_finite_difference_error_bound():
    f, _ = builtin("strongly-convex-quadratic", {"eigenvalues": [1.0, 4.0, 2.0]})
    o = finite_difference_oracle(f, 1e-3)
    Y = np.random.default_rng(3).uniform(-5, 5, size=(1000, 3))
    err = np.linalg.norm(o.batch(Y)[:, 0] - f.gradient(Y), axis=1)
    assert err.max() <= o.error_bound
    assert o.error_bound == pytest.approx(np.sqrt(3) * 1e-3 * 4)


def test_zero_error_is_identity():
    f, A = builtin("quadratic")
    base = gradient_oracle(f)
    assert perturb(base, ErrorModel(), A) is base


def test_worst_case_magnitude_and_direction():
    f, A = builtin("quadratic")
    o = perturb(gradient_oracle(f), ErrorModel(0.1, 0.0), A)
    y = np.array([5.0, 0.0])
    eta = o.query(y)[0] - f.gradient(y[None])[0]
    assert np.linalg.norm(eta) == pytest.approx(0.1)
    assert np.allclose(eta, [-0.1, 0.0])


def test_quantization_model_relative_error():
    # H(t) = I + Ht with |Ht| bounded gives eta = Ht grad J, |eta| <= |Ht| L dist
    f, A = builtin("strongly-convex-quadratic", {"eigenvalues": [1.0, 3.0]})
    Ht = np.array([[0.05, 0.02], [0.02, -0.04]])
    o = weighted_gradient_oracle(f, [np.eye(2) + Ht])
    r = np.linalg.norm(Ht, 2) * f.lipschitz_grad
    Y = np.random.default_rng(4).normal(scale=3, size=(1000, 2))
    eta = o.batch(Y)[:, 0] - f.gradient(Y)
    assert np.all(np.linalg.norm(eta, axis=1) <= r * A.distance(Y) + 1e-12)


@pytest.mark.parametrize("law", ["worst-case", "random-unit", "fixed-vector"])
@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 2), r=st.floats(0, 2), seed=st.integers(0, 2**31))
def test_error_bound_property(law, a, r, seed):
    f, A = builtin("max-affine")
    base = subgradient_oracle(f, 3)
    em = ErrorModel(a, r, law, vector=[1.0, -2.0] if law == "fixed-vector" else None)
    o = perturb(base, em, A, make_lyapunov("squared-distance", A))
    Y = np.random.default_rng(seed).normal(scale=4, size=(50, 2))
    Y[0] = 0.0
    diff = np.linalg.norm(o.batch(Y, seed) - base.batch(Y, seed), axis=-1)
    assert np.all(diff <= (a + r * A.distance(Y))[:, None] + 1e-12)


def test_error_model_validation():
    with pytest.raises(ValueError):
        ErrorModel(-1.0, 0.0)
    with pytest.raises(ValueError):
        ErrorModel(0.1, 0.0, "sideways")
    with pytest.raises(ValueError):
        ErrorModel(0.1, 0.0, "fixed-vector")


def test_scaled_and_bound():
    f, A = builtin("quadratic")
    neg = scaled(gradient_oracle(f), -1.0)
    assert np.allclose(neg.query([1.0, 2.0]), [[-1.0, -2.0]])
    pts = np.array([[3.0, 4.0], [0.0, 1.0]])
    assert oracle_bound(gradient_oracle(f), pts) == pytest.approx(5.0)
