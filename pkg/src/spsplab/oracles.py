"""Search-direction oracles and the deterministic error wrapper.

An oracle answers a batch of query points ``Y`` of shape ``(m, n)`` with a
padded ``(m, k, n)`` array of directions; rows may repeat, so the sampled
subset of the direction set at ``Y[i]`` is ``unique(out[i])``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .problems import point_rng, unique_rows


class DirectionOracle:
    """Multi-valued search-direction map ``y ↦ Ψ(y)``.

    Metadata: ``bound`` (sup of ``|s|`` on the declared region), ``lipschitz``
    (for singleton oracles) and ``growth`` (``beta`` with
    ``|s|² <= beta ∇V(y).s``), all optional.
    """

    def __init__(self, fn, *, name, singleton, bound=None, lipschitz=None, growth=None):
        self._fn = fn
        self.name = name
        self.singleton = singleton
        self.bound = bound
        self.lipschitz = lipschitz
        self.growth = growth

    def batch(self, Y, seed=0):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return self._fn(Y, seed)

    def query(self, y, seed=0):
        """Distinct sampled directions at the single point ``y``, shape ``(k, n)``."""
        return unique_rows(self.batch(np.asarray(y, dtype=float)[None], seed)[0])

    def clone(self):
        """Independent copy for use by one worker."""
        return copy.copy(self)

    def __repr__(self):
        return f"DirectionOracle({self.name!r})"


def gradient_oracle(f):
    """Singleton oracle ``{∇f(y)}``."""
    return DirectionOracle(lambda Y, seed: f.gradient(Y)[:, None, :],
                           name=f"gradient({f.name})", singleton=True,
                           lipschitz=f.lipschitz_grad)


def subgradient_oracle(f, samples_per_query=4):
    """Sampled subdifferential: active extreme subgradients plus random convex combinations."""
    if not f.convex:
        raise ValueError("subgradient oracle requires a convex field")
    return DirectionOracle(lambda Y, seed: f.subdifferential_batch(Y, seed, samples_per_query),
                           name=f"subgradient({f.name})", singleton=f.subgradients is None,
                           lipschitz=f.lipschitz_grad if f.subgradients is None else None)


def scaled(oracle, factor):
    """Oracle returning ``factor * s`` for each direction ``s``."""
    return DirectionOracle(lambda Y, seed: factor * oracle.batch(Y, seed),
                           name=f"{factor}*{oracle.name}", singleton=oracle.singleton)


class WeightedGradientOracle(DirectionOracle):
    """Directions ``H(t) ∇f(y)`` with ``t`` the number of previous queries.

    The counter is per-instance state advanced once per call (a batch call is
    one query). The last matrix of the schedule is held once it is exhausted.
    Not safe for shared concurrent use; ``clone`` per worker.
    """

    def __init__(self, f, schedule):
        mats = [np.asarray(H, dtype=float) for H in schedule]
        if not mats:
            raise ValueError("empty weight schedule")
        eigs = []
        for H in mats:
            if H.shape != (f.dim, f.dim):
                raise ValueError(f"weight of shape {H.shape} for a {f.dim}-dimensional field")
            if not np.allclose(H, H.T):
                raise ValueError("weight matrices must be symmetric")
            lam = np.linalg.eigvalsh(H)
            if lam[0] <= 0:
                raise ValueError(f"weight matrix is not positive definite (min eigenvalue {lam[0]:.3e})")
            eigs.append(lam)
        self.schedule = mats
        self.eigenvalues = eigs
        self.lambda_min = float(min(e[0] for e in eigs))
        self.lambda_max = float(max(e[-1] for e in eigs))
        self.counter = 0
        lip = None if f.lipschitz_grad is None else self.lambda_max * f.lipschitz_grad
        super().__init__(self._directions, name=f"weighted-gradient({f.name})", singleton=True,
                         lipschitz=lip)
        self.field = f

    def _directions(self, Y, seed):
        H = self.schedule[min(self.counter, len(self.schedule) - 1)]
        self.counter += 1
        return (self.field.gradient(Y) @ H)[:, None, :]

    def clone(self):
        twin = copy.copy(self)
        twin._fn = twin._directions
        return twin


def weighted_gradient_oracle(f, weight_schedule):
    if isinstance(weight_schedule, np.ndarray) and weight_schedule.ndim == 2:
        weight_schedule = [weight_schedule]
    return WeightedGradientOracle(f, weight_schedule)


def finite_difference_oracle(f, mu):
    """Forward differences ``(f(y + mu e_i) - f(y)) / mu`` along the standard basis.

    ``error_bound`` is ``sqrt(n) mu L`` when ``f.lipschitz_grad`` is known.
    """
    mu = float(mu)
    if not mu > 0:
        raise ValueError("finite-difference step must be positive")
    n = f.dim
    basis = mu * np.eye(n)

    def directions(Y, seed):
        f0 = f.value(Y)
        shifted = f.value(Y[:, None, :] + basis)
        return ((shifted - f0[:, None]) / mu)[:, None, :]

    o = DirectionOracle(directions, name=f"forward-difference({f.name}, mu={mu:g})",
                        singleton=True)
    o.mu = mu
    o.error_bound = None if f.lipschitz_grad is None else math.sqrt(n) * mu * f.lipschitz_grad
    return o


LAWS = ("worst-case", "random-unit", "fixed-vector")


@dataclass
class ErrorModel:
    """Deterministic error with ``|eta(y)| <= a + r dist(y, A)``."""

    a: float = 0.0
    r: float = 0.0
    law: str = "worst-case"
    vector: np.ndarray | None = None

    def __post_init__(self):
        self.a = float(self.a)
        self.r = float(self.r)
        if self.a < 0 or self.r < 0:
            raise ValueError("error magnitudes a and r must be nonnegative")
        if self.law not in LAWS:
            raise ValueError(f"unknown error law {self.law!r}; choose from {LAWS}")
        if self.law == "fixed-vector":
            if self.vector is None:
                raise ValueError("fixed-vector law needs a vector")
            self.vector = np.asarray(self.vector, dtype=float)
            if not np.linalg.norm(self.vector) > 0:
                raise ValueError("fixed error vector must be nonzero")

    def magnitude(self, dist):
        return self.a + self.r * dist


def _unit(v, fallback):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = norm > 1e-300
    return np.where(ok, v / np.where(ok, norm, 1.0), fallback)


def perturb(base, em, attractor, lyapunov=None):
    """Oracle returning ``s + eta(y)`` for every ``s`` returned by ``base``.

    Worst-case law: ``|eta| = a + r dist`` pointing along ``-∇V(y)`` (``V`` the
    given Lyapunov function, else ``dist²/2`` to ``attractor``), falling back
    to ``-s/|s|`` where ``∇V`` vanishes and to ``-e_1`` where ``s`` does too.
    Random-unit law: uniform direction, magnitude uniform on ``[0, a + r dist]``,
    determined by ``(y, seed)``.
    """
    if em.a == 0 and em.r == 0:
        return base
    n = attractor.dim
    e1 = np.zeros(n)
    e1[0] = 1.0

    def directions(Y, seed):
        S = base.batch(Y, seed)
        dist = attractor.distance(Y)
        mag = em.magnitude(dist)
        if em.law == "worst-case":
            g = lyapunov.gradient(Y) if lyapunov is not None else Y - attractor.project(Y)
            g = np.broadcast_to(g[:, None, :], S.shape)
            fallback = _unit(S, e1)
            u = _unit(g, fallback)
            return S - mag[:, None, None] * u
        if em.law == "fixed-vector":
            u = em.vector / np.linalg.norm(em.vector)
            return S + (mag[:, None] * u)[:, None, :]
        eta = np.empty_like(Y)
        for i in range(len(Y)):
            rng = point_rng(seed, Y[i])
            v = rng.normal(size=n)
            eta[i] = rng.uniform() * mag[i] * v / np.linalg.norm(v)
        return S + eta[:, None, :]

    o = DirectionOracle(directions, name=f"{base.name}+eta(a={em.a:g}, r={em.r:g}, {em.law})",
                        singleton=base.singleton)
    o.base = base
    o.error_model = em
    if base.bound is not None:
        o.bound = None  # depends on the region through r; recompute via oracle_bound
    return o


def oracle_bound(oracle, points, seed=0):
    """Largest sampled ``|s|`` over ``points`` (an empirical bound ``B``)."""
    D = oracle.batch(points, seed)
    return float(np.max(np.linalg.norm(D, axis=-1)))
