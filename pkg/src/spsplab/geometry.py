"""Closed convex sets, exact projections, and sampling on bands.

Every set accepts a single point of shape ``(n,)`` or a batch of shape
``(m, n)`` and returns an array of the same shape.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

MEMBERSHIP_TOL = 1e-10
DYKSTRA_TOL = 1e-12
DYKSTRA_MAX_ITER = 100_000
SAMPLE_CHUNK = 1024


class ProjectionError(RuntimeError):
    """Cyclic projection onto an intersection did not reach tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


class EmptyBandError(RuntimeError):
    """Rejection sampling could not find enough points in a region."""

    def __init__(self, message, accepted, drawn):
        rate = accepted / drawn if drawn else 0.0
        super().__init__(f"{message}: accepted {accepted} of {drawn} draws "
                         f"(acceptance rate {rate:.2e})")
        self.accepted = accepted
        self.drawn = drawn
        self.acceptance_rate = rate


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coordinates")
    return x


def _vec(v, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


class ConvexSet:
    """Base class. Subclasses implement ``project`` and ``bounds``."""

    kind = "abstract"
    dim: int

    def project(self, x):
        raise NotImplementedError

    def distance(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.project(x), axis=-1)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return self.distance(x) <= tol

    def bounds(self):
        """Axis-aligned bounding box ``(lo, hi)`` or ``None`` if unbounded."""
        return None

    @property
    def compact(self):
        return self.bounds() is not None

    def circumradius(self):
        """Half-diagonal of the bounding box (an upper bound for balls)."""
        b = self.bounds()
        if b is None:
            return math.inf
        lo, hi = b
        return 0.5 * float(np.linalg.norm(hi - lo))

    def to_dict(self):
        raise NotImplementedError


@dataclass(eq=False)
class WholeSpace(ConvexSet):
    dim: int
    kind = "whole-space"

    def project(self, x):
        return _as_points(x).copy()

    def distance(self, x):
        x = _as_points(x)
        return np.zeros(x.shape[:-1])

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


@dataclass(eq=False)
class Box(ConvexSet):
    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        self.lo = _vec(self.lo, "lo")
        self.hi = _vec(self.hi, "hi")
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi differ in dimension")
        if np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi componentwise")

    @property
    def dim(self):
        return self.lo.size

    def project(self, x):
        return np.clip(_as_points(x), self.lo, self.hi)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        self.center = _vec(self.center, "center")
        self.radius = float(self.radius)
        if not self.radius >= 0:
            raise ValueError("ball radius must be >= 0")

    @property
    def dim(self):
        return self.center.size

    def project(self, x):
        x = _as_points(x)
        v = x - self.center
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
        return self.center + v * scale

    def distance(self, x):
        x = _as_points(x)
        return np.maximum(np.linalg.norm(x - self.center, axis=-1) - self.radius, 0.0)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return self.distance(x) <= tol

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def circumradius(self):
        return self.radius

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


def point(coords):
    """Singleton set, represented as a ball of radius zero."""
    return Ball(coords, 0.0)


@dataclass(eq=False)
class Halfspace(ConvexSet):
    """The set ``{x : normal . x <= offset}``."""

    normal: np.ndarray
    offset: float
    kind = "halfspace"

    def __post_init__(self):
        self.normal = _vec(self.normal, "normal")
        self.offset = float(self.offset)
        if not np.any(self.normal != 0):
            raise ValueError("halfspace normal must be nonzero")

    @property
    def dim(self):
        return self.normal.size

    def project(self, x):
        x = _as_points(x)
        excess = x @ self.normal - self.offset
        step = np.maximum(excess, 0.0) / (self.normal @ self.normal)
        return x - np.multiply.outer(step, self.normal)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x)
        return (x @ self.normal - self.offset) / np.linalg.norm(self.normal) <= tol

    def to_dict(self):
        return {"kind": self.kind, "normal": self.normal.tolist(), "offset": self.offset}


@dataclass(eq=False)
class Affine(ConvexSet):
    """The flat ``anchor + span(basis)``; ``basis`` rows span the direction space."""

    basis: np.ndarray
    anchor: np.ndarray
    _q: np.ndarray = field(init=False, repr=False)
    kind = "affine"

    def __post_init__(self):
        self.anchor = _vec(self.anchor, "anchor")
        basis = np.asarray(self.basis, dtype=float).reshape(-1, self.anchor.size)
        self.basis = basis
        if basis.shape[0] == 0:
            self._q = np.zeros((self.anchor.size, 0))
            return
        u, s, _ = np.linalg.svd(basis.T, full_matrices=False)
        rank = int(np.sum(s > 1e-12 * max(s.max(), 1.0)))
        self._q = u[:, :rank]

    @property
    def dim(self):
        return self.anchor.size

    def project(self, x):
        v = _as_points(x) - self.anchor
        return self.anchor + (v @ self._q) @ self._q.T

    def bounds(self):
        if self._q.shape[1] == 0:
            return self.anchor.copy(), self.anchor.copy()
        return None

    def to_dict(self):
        return {"kind": self.kind, "basis": self.basis.tolist(), "anchor": self.anchor.tolist()}


@dataclass(eq=False)
class Intersection(ConvexSet):
    """Intersection of closed convex sets, projected by Dykstra's cyclic scheme."""

    sets: list
    tol: float = DYKSTRA_TOL
    max_iter: int = DYKSTRA_MAX_ITER
    kind = "intersection"
    last_residual: float = field(default=0.0, init=False, repr=False)
    last_iterations: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        self.sets = list(self.sets)
        if not self.sets:
            raise ValueError("intersection of no sets")
        dims = {s.dim for s in self.sets}
        if len(dims) != 1:
            raise ValueError("intersection members differ in dimension")

    @property
    def dim(self):
        return self.sets[0].dim

    def project(self, x):
        x0 = _as_points(x)
        if len(self.sets) == 1:
            return self.sets[0].project(x0)
        x = x0.copy()
        increments = [np.zeros_like(x) for _ in self.sets]
        residual = math.inf
        for it in range(1, self.max_iter + 1):
            x_prev = x
            for i, s in enumerate(self.sets):
                y = s.project(x + increments[i])
                increments[i] = x + increments[i] - y
                x = y
            change = float(np.max(np.abs(x - x_prev))) if x.size else 0.0
            violation = max(float(np.max(s.distance(x), initial=0.0)) for s in self.sets)
            residual = max(change, violation)
            if residual <= self.tol:
                self.last_residual, self.last_iterations = residual, it
                return x
        self.last_residual, self.last_iterations = residual, self.max_iter
        raise ProjectionError(
            f"Dykstra projection did not converge in {self.max_iter} sweeps", residual)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_points(x)
        out = np.ones(x.shape[:-1], dtype=bool)
        for s in self.sets:
            out &= s.contains(x, tol)
        return out

    def bounds(self):
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for s in self.sets:
            b = s.bounds()
            if b is not None:
                lo = np.maximum(lo, b[0])
                hi = np.minimum(hi, b[1])
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo, hi
        return None

    def to_dict(self):
        return {"kind": self.kind, "sets": [s.to_dict() for s in self.sets]}


def project(S, x):
    """Nearest point of ``S`` to ``x``."""
    return S.project(x)


def distance(S, x):
    """Euclidean distance from ``x`` to ``S``."""
    return S.distance(x)


def from_dict(desc, dim=None):
    """Build a set from a plain mapping (the config-file representation)."""
    kind = desc.get("kind")
    if kind in ("whole-space", "whole_space", "rn"):
        return WholeSpace(int(desc.get("dim", dim)))
    if kind == "box":
        return Box(desc["lo"], desc["hi"])
    if kind == "ball":
        return Ball(desc["center"], desc.get("radius", 0.0))
    if kind == "point":
        return point(desc["center"])
    if kind == "halfspace":
        return Halfspace(desc["normal"], desc["offset"])
    if kind == "affine":
        return Affine(desc.get("basis", []), desc["anchor"])
    if kind == "intersection":
        return Intersection([from_dict(s, dim) for s in desc["sets"]])
    raise ValueError(f"unknown set kind {kind!r}")


@dataclass(eq=False)
class Band:
    """The region ``feasible ∩ {epsilon <= dist(y, attractor) <= sigma}``."""

    attractor: ConvexSet
    sigma: float
    epsilon: float = 0.0
    feasible: ConvexSet | None = None

    def __post_init__(self):
        self.sigma = float(self.sigma)
        self.epsilon = float(self.epsilon)
        if not self.attractor.compact:
            raise ValueError("band attractor must be compact")
        if self.epsilon < 0:
            raise ValueError("band epsilon must be >= 0")
        if not self.sigma > self.epsilon:
            raise ValueError(f"band requires sigma > epsilon (got sigma={self.sigma}, "
                             f"epsilon={self.epsilon})")
        if self.feasible is None:
            self.feasible = WholeSpace(self.attractor.dim)

    def contains(self, y):
        d = self.attractor.distance(y)
        return (d >= self.epsilon) & (d <= self.sigma) & self.feasible.contains(y)


def default_truncation(attractor):
    return 10.0 * attractor.circumradius() + 10.0


def _chunk_seed(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _sample_chunk(attractor, feasible, d_lo, d_hi, lo, hi, quota, rng, budget):
    accepted = []
    n_acc = drawn = 0
    batch = max(64, 2 * quota)
    while n_acc < quota:
        if drawn >= budget:
            raise EmptyBandError("region sampling budget exhausted", n_acc, drawn)
        y = rng.uniform(lo, hi, size=(batch, lo.size))
        drawn += batch
        d = attractor.distance(y)
        keep = (d >= d_lo) & (d <= d_hi) & feasible.contains(y, tol=0.0)
        if np.any(keep):
            accepted.append(y[keep])
            n_acc += int(keep.sum())
    return np.concatenate(accepted)[:quota]


def sample_region(attractor, count, seed, *, d_lo=0.0, d_hi, feasible=None,
                  workers=1, budget_factor=1000):
    """Uniform rejection samples from ``feasible ∩ {d_lo <= dist <= d_hi}``.

    Samples are drawn in fixed-size chunks, each with a seed derived from
    ``(seed, chunk index)``, so the output does not depend on ``workers``.
    """
    if count <= 0:
        return np.zeros((0, attractor.dim))
    if not math.isfinite(d_hi):
        raise ValueError("cannot sample an unbounded region; pass a finite truncation")
    feasible = feasible if feasible is not None else WholeSpace(attractor.dim)
    alo, ahi = attractor.bounds()
    lo, hi = alo - d_hi, ahi + d_hi
    fb = feasible.bounds()
    if fb is not None:
        lo, hi = np.maximum(lo, fb[0]), np.minimum(hi, fb[1])
        if np.any(lo > hi):
            raise EmptyBandError("feasible set misses the sampling box", 0, 0)
    n_chunks = -(-count // SAMPLE_CHUNK)
    quotas = [min(SAMPLE_CHUNK, count - j * SAMPLE_CHUNK) for j in range(n_chunks)]

    def run(j):
        return _sample_chunk(attractor, feasible, d_lo, d_hi, lo, hi, quotas[j],
                             _chunk_seed(seed, j), budget_factor * max(quotas[j], 64))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(j) for j in range(n_chunks)]
    return np.concatenate(parts)


def sample_band(band, count, seed, *, truncation=None, workers=1):
    """``count`` points of ``band``, reproducible from ``seed``.

    An infinite ``band.sigma`` is replaced by ``truncation`` (default: ten
    times the attractor circumradius plus ten).
    """
    sigma = band.sigma
    if not math.isfinite(sigma):
        sigma = truncation if truncation is not None else default_truncation(band.attractor)
        if sigma <= band.epsilon:
            raise ValueError("truncation radius must exceed epsilon")
    return sample_region(band.attractor, count, seed, d_lo=band.epsilon, d_hi=sigma,
                         feasible=band.feasible, workers=workers)


def sample_neighborhood(attractor, radius, count, seed, *, feasible=None, workers=1):
    """Points of ``feasible ∩ B̄_radius(attractor)``; radius 0 samples the attractor."""
    return sample_region(attractor, count, seed, d_lo=0.0, d_hi=float(radius),
                         feasible=feasible, workers=workers)


def radial_points(attractor, sources, radius):
    """Map each source point onto the shell ``{dist = radius}`` along its normal ray.

    Sources inside the attractor are dropped. For convex attractors every shell
    point is the image of the sources on its normal ray.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    p = attractor.project(sources)
    v = sources - p
    norm = np.linalg.norm(v, axis=-1)
    keep = norm > 1e-12
    return p[keep] + radius * v[keep] / norm[keep, None]
