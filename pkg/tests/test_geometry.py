import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from spsplab.geometry import (Affine, Ball, Band, Box, EmptyBandError, Halfspace, Intersection,
                              ProjectionError, WholeSpace, from_dict, point, radial_points,
                              sample_band, sample_neighborhood, sample_region)

coords = st.floats(-50, 50, allow_nan=False)
vec2 = arrays(np.float64, 2, elements=coords)

SETS = {
    "whole-space": WholeSpace(2),
    "box": Box([-1, -2], [1, 0.5]),
    "ball": Ball([0.5, -0.5], 1.5),
    "point": point([1.0, 2.0]),
    "halfspace": Halfspace([1.0, 2.0], 1.0),
    "affine": Affine([[1.0, 1.0]], [0.0, 1.0]),
    "intersection": Intersection([Ball([0, 0], 1.0), Halfspace([1.0, 1.0], 0.5)]),
}


def test_ball_projection_example():
    B = Ball([0, 0], 1)
    assert np.allclose(B.project(np.array([2.0, 0.0])), [1, 0])
    assert B.distance(np.array([2.0, 0.0])) == pytest.approx(1.0)


def grid_argmin(S, x, lo, hi, h):
    """Nearest member of a lattice of S, by brute force."""
    g = np.arange(lo, hi + h / 2, h)
    Z = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    Z = Z[S.contains(Z, tol=1e-12)]
    d = np.linalg.norm(Z - x, axis=1)
    return Z[np.argmin(d)], d.min()


def test_box_projection_matches_grid_search():
    S = Box([-1, -1], [1, 1])
    z, _ = grid_argmin(S, np.array([3.0, 0.5]), -1, 1, 0.01)
    assert np.allclose(S.project(np.array([3.0, 0.5])), [1, 0.5])
    assert np.allclose(z, [1, 0.5], atol=0.01)
    _, d = grid_argmin(S, np.array([3.0, 4.0]), -1, 1, 0.01)
    assert S.distance(np.array([3.0, 4.0])) == pytest.approx(math.hypot(2, 3))
    assert d == pytest.approx(math.hypot(2, 3), abs=0.01)


@pytest.mark.parametrize("name", sorted(SETS))
def test_members_are_fixed(name):
    S = SETS[name]
    x = S.project(np.random.default_rng(0).normal(scale=5, size=(200, 2)))
    assert np.allclose(S.project(x), x, atol=1e-10)
    assert np.all(S.contains(x))
    assert np.all(S.distance(x) <= 1e-10)


@pytest.mark.parametrize("name", sorted(SETS))
@settings(max_examples=60, deadline=None)
@given(x=vec2, z=vec2)
def test_nonexpansive_and_idempotent(name, x, z):
    S = SETS[name]
    px, pz = S.project(x), S.project(z)
    assert np.linalg.norm(px - pz) <= np.linalg.norm(x - z) + 1e-10
    assert np.linalg.norm(S.project(px) - px) <= 1e-10


@pytest.mark.parametrize("name", ["ball", "halfspace", "affine", "intersection"])
def test_projection_matches_constrained_solver(name):
    S = SETS[name]
    rng = np.random.default_rng(1)
    cons = {
        "ball": [{"type": "ineq", "fun": lambda z: 1.5 ** 2 - np.sum((z - [0.5, -0.5]) ** 2)}],
        "halfspace": [{"type": "ineq", "fun": lambda z: 1.0 - z @ [1.0, 2.0]}],
        "affine": [{"type": "eq", "fun": lambda z: z[1] - z[0] - 1.0}],
        "intersection": [{"type": "ineq", "fun": lambda z: 1.0 - z @ z},
                         {"type": "ineq", "fun": lambda z: 0.5 - z @ [1.0, 1.0]}],
    }[name]
    for x in rng.normal(scale=3, size=(20, 2)):
        ref = minimize(lambda z: np.sum((z - x) ** 2), x, constraints=cons, method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 500}).x
        assert np.allclose(S.project(x), ref, atol=1e-6)


def test_intersection_reports_residual():
    S = Intersection([Ball([0, 0], 1.0), Halfspace([1.0, 0.0], 0.0)], max_iter=2)
    with pytest.raises(ProjectionError) as exc:
        S.project(np.array([[3.0, 0.1]]))
    assert exc.value.residual > 0


def test_from_dict_roundtrip():
    for S in SETS.values():
        T = from_dict(S.to_dict(), 2)
        x = np.random.default_rng(2).normal(size=(30, 2)) * 3
        assert np.allclose(S.project(x), T.project(x))
    with pytest.raises(ValueError):
        from_dict({"kind": "torus"}, 2)


def test_invalid_sets():
    with pytest.raises(ValueError):
        Box([1, 0], [0, 1])
    with pytest.raises(ValueError):
        Ball([0, 0], -1)
    with pytest.raises(ValueError):
        Halfspace([0, 0], 1)


def test_band_samples():
    band = Band(point([0, 0]), 1.0, 0.5)
    Y = sample_band(band, 100, seed=3)
    r = np.linalg.norm(Y, axis=1)
    assert len(Y) == 100 and np.all((r >= 0.5) & (r <= 1.0))
    with pytest.raises(ValueError):
        Band(point([0, 0]), 0.5, 0.5)


def test_band_with_halfline_feasible():
    band = Band(point([0.0]), 2.0, 1.0, feasible=Halfspace([-1.0], 0.0))
    Y = sample_band(band, 500, seed=0)
    assert np.all((Y[:, 0] >= 1) & (Y[:, 0] <= 2))
    assert np.all(band.contains(Y))


def test_sampling_is_worker_invariant():
    band = Band(Ball([0, 0], 0.5), 3.0, 1.0, feasible=Box([-2, -2], [2, 2]))
    a = sample_band(band, 5000, seed=7, workers=1)
    b = sample_band(band, 5000, seed=7, workers=4)
    assert np.array_equal(a, b)


def test_empty_band_error():
    with pytest.raises(EmptyBandError) as exc:
        sample_region(point([0, 0]), 10, 0, d_lo=1.0, d_hi=2.0,
                      feasible=Halfspace([1.0, 0.0], -5.0), budget_factor=2)
    assert exc.value.acceptance_rate == 0


def test_neighborhood_of_point_is_point():
    Y = sample_neighborhood(point([1.0, 2.0]), 0.0, 5, seed=0)
    assert np.allclose(Y, [1.0, 2.0])


def test_radial_points_on_shell():
    A = Box([-1, -1], [1, 1])
    src = np.random.default_rng(0).normal(scale=4, size=(500, 2))
    P = radial_points(A, src, 0.7)
    assert np.allclose(A.distance(P), 0.7)
