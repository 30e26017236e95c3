"""Objectives, Lyapunov functions and their minimizer sets.

All callables are vectorized: they accept ``(n,)`` or ``(m, n)`` arrays.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .geometry import Ball, ConvexSet, point

TIE_TOL = 1e-9


def point_rng(seed, y):
    """Generator determined by ``seed`` and the exact bytes of ``y``."""
    y = np.ascontiguousarray(y, dtype=float)
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(y.tobytes())])


@dataclass(eq=False)
class ScalarField:
    """A real function on R^n with first-order information and metadata.

    ``subgradients(Y, seed, count)`` returns a padded ``(m, k, n)`` array of
    subgradients per point; rows may repeat. Smooth fields leave it unset and
    get ``gradient`` as the single element.
    """

    name: str
    dim: int
    value: Callable
    gradient: Callable
    subgradients: Callable | None = None
    lipschitz_grad: float | None = None
    strong_convexity: float | None = None
    minimum_value: float | None = None
    convex: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, y):
        return self.value(y)

    def subdifferential_batch(self, Y, seed=0, count=4):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self.subgradients is None:
            return self.gradient(Y)[:, None, :]
        return self.subgradients(Y, seed, count)

    def subdifferential_sample(self, y, seed=0, count=4):
        """Distinct sampled subgradients at the single point ``y``."""
        rows = self.subdifferential_batch(np.asarray(y, dtype=float)[None], seed, count)[0]
        return unique_rows(rows)


def unique_rows(rows):
    _, idx = np.unique(rows, axis=0, return_index=True)
    return rows[np.sort(idx)]


@dataclass(eq=False)
class LyapunovField:
    """Lyapunov candidate ``V`` for an attractor.

    ``flag`` is ``"squared-distance"`` (V = dist²/2), ``"objective-gap"``
    (V = J - J*) or ``"custom"``.
    """

    flag: str
    attractor: ConvexSet
    value: Callable
    gradient: Callable
    lipschitz_grad: float | None = None
    objective: ScalarField | None = None

    def __call__(self, y):
        return self.value(y)

    @property
    def dim(self):
        return self.attractor.dim


def make_lyapunov(flag, attractor, objective=None):
    if flag == "squared-distance":
        def value(y):
            return 0.5 * attractor.distance(y) ** 2

        def gradient(y):
            y = np.asarray(y, dtype=float)
            return y - attractor.project(y)

        # y - P(y) is firmly nonexpansive for convex sets.
        return LyapunovField(flag, attractor, value, gradient, 1.0, objective)
    if flag == "objective-gap":
        if objective is None or objective.minimum_value is None:
            raise ValueError("objective-gap Lyapunov function needs an objective with known J*")
        jstar = objective.minimum_value
        return LyapunovField(flag, attractor, lambda y: objective.value(y) - jstar,
                             objective.gradient, objective.lipschitz_grad, objective)
    raise ValueError(f"unknown Lyapunov flag {flag!r}")


def custom_lyapunov(attractor, value, gradient, lipschitz_grad=None):
    return LyapunovField("custom", attractor, value, gradient, lipschitz_grad)


def estimate_lipschitz(gradient, points, pairs=100_000, seed=0, inflate=1.1):
    """Largest sampled ``|grad(y1) - grad(y2)| / |y1 - y2|`` times ``inflate``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rng = np.random.default_rng(seed)
    i = rng.integers(len(points), size=pairs)
    j = rng.integers(len(points), size=pairs)
    keep = i != j
    dy = np.linalg.norm(points[i[keep]] - points[j[keep]], axis=-1)
    dg = np.linalg.norm(gradient(points[i[keep]]) - gradient(points[j[keep]]), axis=-1)
    ok = dy > 0
    return inflate * float(np.max(dg[ok] / dy[ok]))


# -- builtins ---------------------------------------------------------------

def _center(params, n):
    c = np.asarray(params.get("center", np.zeros(n)), dtype=float).reshape(-1)
    if c.size != n:
        raise ValueError(f"center has dimension {c.size}, expected {n}")
    return c


def _quadratic_form(name, matrix, center, params):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(matrix, matrix.T):
        raise ValueError("matrix must be symmetric")
    eig = np.linalg.eigvalsh(matrix)
    if eig[0] <= 0:
        raise ValueError("matrix must be positive definite")
    n = matrix.shape[0]

    def value(y):
        u = np.asarray(y, dtype=float) - center
        return 0.5 * np.einsum("...i,ij,...j->...", u, matrix, u)

    def gradient(y):
        return (np.asarray(y, dtype=float) - center) @ matrix

    field_ = ScalarField(name, n, value, gradient, lipschitz_grad=float(eig[-1]),
                         strong_convexity=float(eig[0]), minimum_value=0.0, convex=True,
                         params=dict(params, eigenvalues=eig.tolist()))
    return field_, point(center)


def _quadratic(params):
    n = int(params.get("n", 2))
    return _quadratic_form("quadratic", np.eye(n), _center(params, n), params)


def _strongly_convex_quadratic(params):
    if "eigenvalues" in params:
        eig = np.asarray(params["eigenvalues"], dtype=float).reshape(-1)
    else:
        c = float(params.get("c", 1.0))
        L = float(params.get("L", 4.0))
        n = int(params.get("n", 2))
        if not 0 < c <= L:
            raise ValueError("strongly-convex-quadratic needs 0 < c <= L")
        eig = np.linspace(c, L, n)
    if np.any(eig <= 0):
        raise ValueError("eigenvalues must be positive")
    return _quadratic_form("strongly-convex-quadratic", np.diag(eig),
                           _center(params, eig.size), params)


def _weighted_quadratic(params):
    matrix = np.asarray(params.get("matrix", [[2.0, 0.5], [0.5, 1.0]]), dtype=float)
    return _quadratic_form("weighted-quadratic", matrix, _center(params, matrix.shape[0]), params)


def _norm_cone(params):
    c = float(params.get("c", 1.0))
    if not c > 0:
        raise ValueError("norm-cone needs c > 0")
    n = int(params.get("n", len(params["center"]) if "center" in params else 2))
    attractor = Ball(_center(params, n), float(params.get("radius", 0.0)))

    def value(y):
        return c * attractor.distance(y)

    def gradient(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        v = y - attractor.project(y)
        d = np.linalg.norm(v, axis=-1, keepdims=True)
        return c * np.divide(v, d, out=np.zeros_like(v), where=d > 0)

    def subgradients(Y, seed, count):
        G = gradient(Y)
        k = 1 + max(int(count), 0) + 2 * n
        out = np.repeat(G[:, None, :], k, axis=1)
        on_set = attractor.distance(Y) <= TIE_TOL
        for i in np.flatnonzero(on_set):
            rng = point_rng(seed, Y[i])
            r_from_center = np.linalg.norm(Y[i] - attractor.center)
            if attractor.radius > 0 and r_from_center < attractor.radius - TIE_TOL:
                out[i] = 0.0  # interior: gradient is zero
                continue
            if attractor.radius > 0:
                # boundary: the outward normal cone truncated at norm c
                nrm = (Y[i] - attractor.center) / r_from_center
                t = np.concatenate([[0.0, 1.0], rng.uniform(size=k - 2)])
                out[i] = c * t[:, None] * nrm
            else:
                # apex: the whole ball of radius c
                extremes = np.concatenate([np.eye(n), -np.eye(n)])
                u = rng.normal(size=(count, n))
                u /= np.linalg.norm(u, axis=-1, keepdims=True)
                u *= rng.uniform(size=(count, 1)) ** (1.0 / n)
                out[i] = c * np.concatenate([np.zeros((1, n)), extremes, u])
        return out

    f = ScalarField("norm-cone", n, value, gradient, subgradients, minimum_value=0.0,
                    convex=True, params=dict(params, c=c))
    return f, attractor


def _max_affine_minimizer(A, b):
    """Unique minimizer of ``max_i a_i.y + b_i`` via linear programming."""
    m, n = A.shape
    # variables (y, t): minimize t subject to A y + b <= t
    A_ub = np.hstack([A, -np.ones((m, 1))])
    bounds = [(None, None)] * (n + 1)
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=-b, bounds=bounds, method="highs")
    if res.status != 0:
        raise ValueError("max-affine objective is unbounded below or infeasible")
    jstar = float(res.x[-1])
    y = res.x[:n]
    # the optimal face must be a single point
    A_face = np.vstack([A_ub, np.zeros(n + 1)])
    A_face[-1, -1] = 1.0
    b_face = np.concatenate([-b, [jstar + 1e-9]])
    for i in range(n):
        for sign in (1.0, -1.0):
            cost = np.zeros(n + 1)
            cost[i] = sign
            r = linprog(cost, A_ub=A_face, b_ub=b_face, bounds=bounds, method="highs")
            if r.status != 0 or abs(r.x[i] - y[i]) > 1e-6:
                raise ValueError("max-affine objective has a non-unique minimizer; "
                                 "only point minimizer sets are supported")
    return y, jstar


def _max_affine(params):
    if "slopes" in params:
        A = np.atleast_2d(np.asarray(params["slopes"], dtype=float))
        b = np.asarray(params.get("offsets", np.zeros(len(A))), dtype=float).reshape(-1)
    else:
        # default: the l1 norm on R^2
        A = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        b = np.zeros(4)
    if b.size != A.shape[0]:
        raise ValueError("slopes and offsets differ in length")
    m, n = A.shape
    xstar, jstar = _max_affine_minimizer(A, b)

    def pieces(y):
        return np.asarray(y, dtype=float) @ A.T + b

    def value(y):
        return np.max(pieces(y), axis=-1)

    def gradient(y):
        return A[np.argmax(pieces(y), axis=-1)]

    def subgradients(Y, seed, count):
        P = pieces(Y)
        active = P >= P.max(axis=-1, keepdims=True) - TIE_TOL
        k = m + max(int(count), 0)
        out = np.repeat(gradient(Y)[:, None, :], k, axis=1)
        for i in np.flatnonzero(active.sum(axis=-1) > 1):
            G = A[active[i]]
            weights = point_rng(seed, Y[i]).dirichlet(np.ones(len(G)), size=count)
            rows = np.concatenate([G, weights @ G])
            out[i, :len(rows)] = rows
            out[i, len(rows):] = G[0]
        return out

    f = ScalarField("max-affine", n, value, gradient, subgradients, minimum_value=jstar,
                    convex=True, params={"slopes": A.tolist(), "offsets": b.tolist()})
    return f, point(xstar)


def _nonconvex_1d(params):
    # J(u) = u^2 + k sin^2(u), u = y - x*. J'(u)/u = 2 + k sin(2u)/u, and
    # sin(x)/x >= -0.2173, so u J'(u) > 0 off x* whenever k < 4.6.
    k = float(params.get("amplitude", 3.0))
    if not 0 <= k < 4.6:
        raise ValueError("nonconvex-1d amplitude must lie in [0, 4.6)")
    center = _center(params, 1)

    def value(y):
        u = np.asarray(y, dtype=float)[..., 0] - center[0]
        return u ** 2 + k * np.sin(u) ** 2

    def gradient(y):
        u = np.asarray(y, dtype=float) - center
        return 2 * u + k * np.sin(2 * u)

    # J'' = 2 + 2k cos(2u) ranges over [2 - 2k, 2 + 2k]
    L = max(abs(2 - 2 * k), 2 + 2 * k)
    f = ScalarField("nonconvex-1d", 1, value, gradient, lipschitz_grad=L, minimum_value=0.0,
                    convex=False, params={"amplitude": k, "center": center.tolist()})
    return f, point(center)


BUILTINS = {
    "quadratic": _quadratic,
    "strongly-convex-quadratic": _strongly_convex_quadratic,
    "norm-cone": _norm_cone,
    "max-affine": _max_affine,
    "weighted-quadratic": _weighted_quadratic,
    "nonconvex-1d": _nonconvex_1d,
}


def builtin(name, params=None):
    """Return ``(field, minimizer_set)`` for a named example problem."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(dict(params or {}))


__all__ = ["ScalarField", "LyapunovField", "make_lyapunov", "custom_lyapunov", "builtin",
           "BUILTINS", "estimate_lipschitz", "unique_rows", "point_rng"]
