"""Certificates for strictly pseudogradient search directions, and their
sampling-based verification.

A certificate is ``(sigma, epsilon, b, phi)``: on the band
``epsilon <= dist(y, A) <= sigma`` every direction satisfies
``∇V(y).s >= phi(y)`` with ``phi > 0``, and inside ``dist <= epsilon`` every
direction satisfies ``∇V(y).s >= -b``. ``phi`` is called as ``phi(Y, D)``
with ``D`` the distances of the rows of ``Y`` to the attractor.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import lemmas
from .geometry import Band, WholeSpace, default_truncation, sample_band, sample_neighborhood

MARGIN_TOL = 1e-9
N_WITNESSES = 10
EVAL_CHUNK = 2048


def classify(sigma, epsilon, b):
    """Name the strongest notion an ``(sigma, epsilon, b)`` triple witnesses."""
    practical = epsilon > 0 or b > 0
    if math.isinf(sigma):
        return "PSP" if practical else "SP"
    return "SPSP" if practical else "SSP"


@dataclass
class SpspCertificate:
    sigma: float
    epsilon: float
    b: float
    phi: Callable
    provenance: str = "empirical"
    params: dict = field(default_factory=dict)
    feasible: bool = True

    def __post_init__(self):
        if self.epsilon < 0 or self.b < 0:
            raise ValueError("epsilon and b must be nonnegative")
        if not self.sigma > self.epsilon:
            raise ValueError("certificate needs sigma > epsilon")

    @property
    def classification(self):
        return classify(self.sigma, self.epsilon, self.b)

    def weakened(self, *, sigma=None, epsilon=None, b=None):
        """Same ``phi`` with a smaller band and/or larger inner allowance."""
        return SpspCertificate(self.sigma if sigma is None else sigma,
                               self.epsilon if epsilon is None else epsilon,
                               self.b if b is None else b,
                               self.phi, self.provenance, dict(self.params))

    def to_dict(self):
        return {"feasible": True, "classification": self.classification,
                "sigma": self.sigma, "epsilon": self.epsilon, "b": self.b,
                "provenance": self.provenance, "params": self.params}


@dataclass
class Infeasible:
    """The requested errors violate the named inequality."""

    violated: str
    params: dict = field(default_factory=dict)
    feasible: bool = False

    def __bool__(self):
        return False

    def to_dict(self):
        return {"feasible": False, "violated": self.violated, "params": self.params}


# -- closed-form certificates ----------------------------------------------

def _dist_only(fn):
    return lambda Y, D: fn(np.asarray(D, dtype=float))


def gradient_norm_certificate(f, scale=1.0):
    """``phi = scale |∇J|²`` for ``{H ∇J}`` against ``V = J - J*`` (``scale`` = min eigenvalue of H)."""
    def phi(Y, D):
        g = f.gradient(Y)
        return scale * np.einsum("...i,...i->...", g, g)
    return SpspCertificate(math.inf, 0.0, 0.0, phi,
                           f"analytic(gradient-norm{'' if scale == 1 else ', weighted'})",
                           {"scale": scale})


def objective_gap_certificate(f):
    """``phi = J - J*`` for subgradients of a convex ``J`` against ``V = dist²/2``."""
    jstar = f.minimum_value
    if jstar is None:
        raise ValueError("objective-gap certificate needs J*")
    return SpspCertificate(math.inf, 0.0, 0.0, lambda Y, D: f.value(Y) - jstar,
                           "analytic(objective-gap)")


def strong_convexity_certificate(c):
    """``phi = (c/2) dist²`` for subgradients of a ``c``-strongly convex ``J``."""
    if not c > 0:
        raise ValueError("strong convexity modulus must be positive")
    return SpspCertificate(math.inf, 0.0, 0.0, _dist_only(lambda d: 0.5 * c * d ** 2),
                           "analytic(strongly-convex)", {"c": c})


def certify_linear_objective(c, a, r, sigma):
    """SSP certificate for ``J = c dist(y, X*)`` with errors ``(a, r)`` on ``B̄_sigma``."""
    if not c > 0 or not sigma > 0:
        raise ValueError("c and sigma must be positive")
    if a < 0 or r < 0:
        raise ValueError("a and r must be nonnegative")
    params = {"c": c, "a": a, "r": r, "sigma": sigma}
    if not a < c:
        return Infeasible("a<c", params)
    if not r < (c - a) / sigma:
        return Infeasible("r<(c-a)/sigma", params)
    # r d ((c-a)/r - d), written so that r = 0 is allowed
    phi = _dist_only(lambda d: (c - a) * d - r * d ** 2)
    return SpspCertificate(sigma, 0.0, 0.0, phi, "analytic(linear-objective)", params)


def certify_strongly_convex(c, a, r):
    """PSP certificate for a ``c``-strongly convex ``J`` with errors ``(a, r)``."""
    if not c > 0:
        raise ValueError("c must be positive")
    if a < 0 or r < 0:
        raise ValueError("a and r must be nonnegative")
    params = {"c": c, "a": a, "r": r}
    if not r < c / 2:
        return Infeasible("r<c/2", params)
    k = c - 2 * r
    eps = 2 * a / k
    b = a ** 2 / (2 * k)
    phi = _dist_only(lambda d: 0.5 * k * d * (d - eps))
    return SpspCertificate(math.inf, eps, b, phi, "analytic(strongly-convex-errors)", params)


def convex_growth_constant(J, attractor, epsilon_hat, sigma, resolution=None):
    """``c = min (J - J*)`` over the shell at distance ``epsilon_hat`` from ``X*``."""
    jstar = J.minimum_value
    res = lemmas.containment_level(lambda Y, D: J.value(Y) - jstar, attractor, epsilon=0.0,
                                   rho=epsilon_hat, sigma=sigma, grid_resolution=resolution)
    return res.l1, res


def certify_convex(J, attractor, a, r, sigma, epsilon_hat=None, resolution=None):
    """SPSP certificate for a convex ``J`` with errors ``(a, r)`` on ``B̄_sigma``.

    ``c`` is the minimum of ``J - J*`` on the shell at distance ``epsilon_hat``.
    When ``epsilon_hat`` is omitted and ``a > 0`` it is chosen as the fixed
    point ``epsilon_hat = sigma² a / (c(epsilon_hat) - sigma² r)``, so the
    quadratic underestimate covers the whole certified band; with ``a = 0`` it
    defaults to ``sigma / 10``.
    """
    if not J.convex or J.minimum_value is None:
        raise ValueError("certify_convex needs a convex field with known J*")
    if a < 0 or r < 0 or not sigma > 0:
        raise ValueError("need a, r >= 0 and sigma > 0")
    s2 = sigma ** 2
    if epsilon_hat is None:
        epsilon_hat = _consistent_epsilon_hat(J, attractor, a, r, sigma, resolution)
    c, res = convex_growth_constant(J, attractor, epsilon_hat, sigma, resolution)
    params = {"a": a, "r": r, "sigma": sigma, "c": c, "epsilon_hat": epsilon_hat,
              "grid_resolution": res.grid_resolution}
    if not r < c / s2:
        return Infeasible("r<c/sigma^2", params)
    if not a < (c - s2 * r) / sigma:
        return Infeasible("a<(c-sigma^2 r)/sigma", params)
    k = (c - s2 * r) / s2
    eps = s2 * a / (c - s2 * r)
    b = a * eps + r * eps ** 2
    phi = _dist_only(lambda d: k * d * (d - eps))
    return SpspCertificate(sigma, eps, b, phi, "analytic(convex-errors)", params)


def _consistent_epsilon_hat(J, attractor, a, r, sigma, resolution):
    if a == 0:
        return sigma / 10
    s2 = sigma ** 2
    jstar = J.minimum_value

    def gap(e):
        c = lemmas.shell_minimum(lambda Y, D: J.value(Y) - jstar, attractor, e,
                                 resolution or lemmas.default_resolution(attractor, sigma))
        if c <= s2 * r:
            return -math.inf
        return e - s2 * a / (c - s2 * r)

    lo, hi = 1e-9 * sigma, sigma * (1 - 1e-9)
    if gap(hi) < 0:
        return hi  # no consistent choice; the feasibility checks will report why
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return hi


# -- verification ------------------------------------------------------------

@dataclass
class VerificationReport:
    passed: bool
    band_samples: int
    inner_samples: int
    min_margin: float
    inner_margin: float
    phi_min: float
    witnesses: list
    seed: int
    truncation_radius: float | None
    certificate: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict, repr=False)  # per-sample (Y, S, margin, region)

    def to_dict(self):
        return {
            "pass": self.passed,
            "samples": self.band_samples,
            "inner_samples": self.inner_samples,
            "min_margin": self.min_margin,
            "inner_margin": self.inner_margin,
            "phi_min": self.phi_min,
            "witnesses": [{"y": w["y"].tolist(), "s": w["s"].tolist(), "margin": w["margin"],
                           "region": w["region"]} for w in self.witnesses],
            "seed": self.seed,
            "truncation_radius": self.truncation_radius,
            "certificate": self.certificate,
        }


def _inner_products(oracle, V, Y, seed):
    D = oracle.batch(Y, seed)
    g = V.gradient(Y)
    return np.einsum("mkn,mn->mk", D, g), D


def _evaluate(oracle, V, Y, seed, lower, region, workers):
    """Per-point worst margin ``min_s ∇V.s - lower`` and the arg-min direction."""
    chunks = [Y[i:i + EVAL_CHUNK] for i in range(0, len(Y), EVAL_CHUNK)]
    lows = [lower[i:i + EVAL_CHUNK] for i in range(0, len(Y), EVAL_CHUNK)]

    def run(args):
        o, Yc, lc = args
        ip, D = _inner_products(o, V, Yc, seed)
        j = np.argmin(ip, axis=1)
        rows = np.arange(len(Yc))
        return ip[rows, j] - lc, D[rows, j]

    jobs = [(oracle.clone() if workers > 1 else oracle, c, lc) for c, lc in zip(chunks, lows)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(run, jobs))
    else:
        out = [run(j) for j in jobs]
    if not out:
        return np.zeros(0), np.zeros((0, Y.shape[1]))
    return np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


def _worst(Y, S, margins, region, count):
    idx = np.argsort(margins, kind="stable")[:count]
    return [{"y": Y[i], "s": S[i], "margin": float(margins[i]), "region": region} for i in idx]


def verify(oracle, V, certificate, *, feasible=None, samples=10_000, inner_samples=None,
           seed=0, truncation=None, tol=MARGIN_TOL, workers=1):
    """Check a certificate on sampled band and inner points.

    Passes when the band margin ``∇V.s - phi`` and the inner margin
    ``∇V.s + b`` are ``>= -tol`` for every sampled direction and ``phi > 0``
    at every band sample. Infinite ``sigma`` is truncated to ``truncation``.
    """
    attractor = V.attractor
    feasible = feasible if feasible is not None else WholeSpace(attractor.dim)
    trunc = None
    sigma = certificate.sigma
    if math.isinf(sigma):
        trunc = truncation if truncation is not None else default_truncation(attractor)
        sigma = trunc
    band = Band(attractor, sigma, certificate.epsilon, feasible)
    Y = sample_band(band, samples, seed, workers=workers)
    D = attractor.distance(Y)
    phi = np.asarray(certificate.phi(Y, D), dtype=float)
    margins, S = _evaluate(oracle, V, Y, seed, phi, "band", workers)

    n_inner = max(samples // 4, 1) if inner_samples is None else inner_samples
    Yi = sample_neighborhood(attractor, certificate.epsilon, n_inner, seed + 1,
                             feasible=feasible, workers=workers)
    inner, Si = _evaluate(oracle, V, Yi, seed, np.full(len(Yi), -certificate.b), "inner", workers)

    min_margin = float(margins.min()) if len(margins) else math.inf
    inner_margin = float(inner.min()) if len(inner) else math.inf
    phi_min = float(phi.min()) if len(phi) else math.inf

    witnesses = _worst(Y, S, margins, "band", N_WITNESSES) + _worst(Yi, Si, inner, "inner",
                                                                     N_WITNESSES)
    if phi_min <= 0:
        witnesses += _worst(Y, S, phi, "phi-nonpositive", N_WITNESSES)
    witnesses.sort(key=lambda w: w["margin"])
    witnesses = witnesses[:N_WITNESSES]
    passed = min_margin >= -tol and inner_margin >= -tol and phi_min > 0
    detail = {"Y": np.concatenate([Y, Yi]), "S": np.concatenate([S, Si]),
              "margin": np.concatenate([margins, inner]),
              "region": ["band"] * len(Y) + ["inner"] * len(Yi)}
    return VerificationReport(passed, len(Y), len(Yi), min_margin, inner_margin, phi_min,
                              witnesses, seed, trunc, certificate.to_dict(), detail)


# -- Polyak's hierarchy -------------------------------------------------------

@dataclass
class PolyakClass:
    kind: str  # "strong-pseudogradient", "strict", "pseudogradient" or "none"
    tau_hat: float
    min_inner_product: float
    samples: int
    seed: int

    @property
    def rank(self):
        return POLYAK_ORDER.index(self.kind)

    def to_dict(self):
        return {"kind": self.kind, "tau_hat": self.tau_hat,
                "min_inner_product": self.min_inner_product, "samples": self.samples,
                "seed": self.seed}


POLYAK_ORDER = ("none", "pseudogradient", "strict", "strong-pseudogradient")


def classify_polyak(oracle, V, region, samples=10_000, seed=0, tol=MARGIN_TOL, truncation=None):
    """Strongest of Polyak's notions supported on samples of ``region`` (a Band).

    ``tau_hat = min ∇V.s / V`` over samples off the attractor.
    """
    Y = sample_band(region, samples, seed, truncation=truncation)
    ip, _ = _inner_products(oracle, V, Y, seed)
    worst = ip.min(axis=1)
    v = np.asarray(V.value(Y), dtype=float)
    off = v > 0
    tau = float(np.min(worst[off] / v[off])) if np.any(off) else math.inf
    m = float(worst.min())
    if tau > tol:
        kind = "strong-pseudogradient"
    elif m > tol:
        kind = "strict"
    elif m >= -tol:
        kind = "pseudogradient"
    else:
        kind = "none"
    return PolyakClass(kind, tau, m, len(Y), seed)
