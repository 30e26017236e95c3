"""Sublevel-set containment, band underestimation, step-size budgets and
robustness margins.

Functions ``phi`` passed here are called as ``phi(Y, D)`` with ``D`` the
distances of the rows of ``Y`` to the attractor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import default_truncation, radial_points

SHRINK = 0.9
STRICT = 1.01
MAX_GRID_POINTS = 4_000_000


def default_resolution(attractor, sigma):
    n = attractor.dim
    return sigma / {1: 5000, 2: 150, 3: 40}.get(n, 20)


def _grid(attractor, extent, h):
    """Regular grid of spacing ``h`` over the box of ``B̄_extent(attractor)``.

    Centered on the box midpoint so coordinate axes through it are sampled.
    """
    lo, hi = attractor.bounds()
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) + extent
    k = np.ceil(half / h).astype(int)
    count = int(np.prod(2 * k + 1))
    if count > MAX_GRID_POINTS:
        raise ValueError(f"grid of {count} points exceeds {MAX_GRID_POINTS}; "
                         "use a coarser grid_resolution")
    axes = [m + h * np.arange(-ki, ki + 1) for m, ki in zip(mid, k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _shell(attractor, radius, extent, h):
    return radial_points(attractor, _grid(attractor, max(extent, radius), h), radius)


def shell_minimum(phi, attractor, radius, resolution, extent=None):
    """Minimum of ``phi`` over the shell ``{dist = radius}``, discretized by a grid."""
    extent = radius if extent is None else extent
    pts = _shell(attractor, radius, extent, resolution)
    return float(np.min(phi(pts, np.full(len(pts), radius))))


@dataclass
class ContainmentResult:
    level: float
    l2: float
    l1: float
    grid_resolution: float
    certified: bool
    shrink: float = SHRINK
    argmin_l2: np.ndarray | None = None
    argmin_l1: np.ndarray | None = None
    violator: np.ndarray | None = None
    points: int = 0
    method: str = "grid"

    def to_dict(self):
        vec = lambda v: None if v is None else np.asarray(v).tolist()  # noqa: E731
        return {"level": self.level, "l2": self.l2, "l1": self.l1,
                "grid_resolution": self.grid_resolution, "certified": self.certified,
                "shrink": self.shrink, "argmin_l2": vec(self.argmin_l2),
                "argmin_l1": vec(self.argmin_l1), "violator": vec(self.violator),
                "points": self.points, "method": self.method}


def containment_level(phi, attractor, epsilon, rho, sigma=math.inf, grid_resolution=None, *,
                      seed=0, random_points=200_000):
    """Level ``l`` whose sublevel set of ``phi`` lies strictly inside ``B̄_{epsilon+rho}(A)``.

    ``l2`` is the minimum of ``phi`` on the shell at distance ``epsilon + rho``;
    ``l1`` is the minimum over points of the ``l2``-sublevel set at distance at
    least ``epsilon + rho`` (it differs from ``l2`` only when sublevel sets are
    disconnected); ``level = 0.9 l1``. Grids are used up to dimension 3 and the
    result is certified by sweeping a grid refined by half; beyond that the
    minima come from random search and the result is flagged uncertified.
    """
    if math.isinf(sigma):
        sigma = default_truncation(attractor)
    R = epsilon + rho
    if not rho > 0 or epsilon < 0:
        raise ValueError("need rho > 0 and epsilon >= 0")
    if R > sigma:
        raise ValueError(f"containment needs epsilon + rho <= sigma (got {R} > {sigma})")
    h = grid_resolution or default_resolution(attractor, sigma)
    n = attractor.dim
    if n <= 3:
        pts = _grid(attractor, sigma, h)
        method = "grid"
    else:
        lo, hi = attractor.bounds()
        pts = np.random.default_rng(seed).uniform(lo - sigma, hi + sigma,
                                                  size=(random_points, n))
        method = "random"
    d = attractor.distance(pts)
    inside = d <= sigma
    pts, d = pts[inside], d[inside]
    shell = radial_points(attractor, pts, R)
    f_shell = np.asarray(phi(shell, np.full(len(shell), R)), dtype=float)
    i2 = int(np.argmin(f_shell))
    l2 = float(f_shell[i2])

    f = np.asarray(phi(pts, d), dtype=float)
    outer = (d >= R) & (f <= l2)
    cand_vals = np.concatenate([f_shell[f_shell <= l2], f[outer]])
    cand_pts = np.concatenate([shell[f_shell <= l2], pts[outer]])
    i1 = int(np.argmin(cand_vals))
    l1 = float(cand_vals[i1])
    if not l1 > 0:
        raise ValueError(f"phi is not positive on the band (minimum {l1:.3e} at "
                         f"{cand_pts[i1].tolist()})")
    level = SHRINK * l1

    violator = None
    certified = False
    if method == "grid":
        fine = _grid(attractor, sigma, h / 2) + h / 4
        fd = attractor.distance(fine)
        fine, fd = fine[fd <= sigma], fd[fd <= sigma]
        ff = np.asarray(phi(fine, fd), dtype=float)
        bad = (fd >= R) & (ff <= level)
        if np.any(bad):
            violator = fine[np.flatnonzero(bad)[0]]
        else:
            certified = True
    return ContainmentResult(level, l2, l1, h, certified, SHRINK, shell[i2], cand_pts[i1],
                             violator, len(pts), method)


@dataclass
class Underestimation:
    alpha_q: float
    alpha_l: float
    quadratic_coeff: float
    linear_coeff: float
    combined: tuple

    def to_dict(self):
        return {"alpha_q": self.alpha_q, "alpha_l": self.alpha_l,
                "quadratic_coeff": self.quadratic_coeff, "linear_coeff": self.linear_coeff,
                "combined_linear": self.combined[0], "combined_quadratic": self.combined[1]}


def underestimation_alphas(c, K_phi, sigma_hat):
    """Gains below which ``phi >= alpha K_phi d²`` (resp. ``alpha K_phi d``) on a band.

    ``c`` is a containment level of ``phi`` inside the inner radius of the band.
    Also returns the ``K_phi = 1`` coefficients ``c/sigma_hat²``, ``c/sigma_hat``
    and the combined bound ``(c/(2 sigma_hat)) d + (c/(2 sigma_hat²)) d²``.
    """
    if not (c > 0 and K_phi > 0 and sigma_hat > 0):
        raise ValueError("c, K_phi and sigma_hat must be positive")
    return Underestimation(c / (K_phi * sigma_hat ** 2), c / (K_phi * sigma_hat),
                           c / sigma_hat ** 2, c / sigma_hat,
                           (c / (2 * sigma_hat), c / (2 * sigma_hat ** 2)))


# -- step-size budgets -------------------------------------------------------

def _smaller_root(p, q, target):
    """Largest ``alpha >= 0`` with ``q alpha + p alpha² <= target`` (p, q >= 0)."""
    if p == 0 and q == 0:
        return math.inf
    if p == 0:
        return target / q
    return 2 * target / (q + math.sqrt(q * q + 4 * p * target))


@dataclass
class StepSizeBudget:
    """``alpha_max`` with the binding constraints and the Lyapunov decrease data.

    ``theorem`` is ``"growth"``, ``"bounded"`` or ``"lipschitz"``.
    """

    theorem: str
    alpha_max: float
    components: dict
    params: dict = field(default_factory=dict)

    @property
    def binding(self):
        return min(self.components, key=self.components.get)

    def W(self, alpha, phi=None):
        """Decrease function ``W(Y, D)`` at gain ``alpha``."""
        p = self.params
        if self.theorem == "growth":
            if phi is None:
                raise ValueError("growth-condition W needs the certificate phi")
            factor = alpha * (1 - alpha * p["w"] * p["beta"])
            return lambda Y, D: factor * np.asarray(phi(Y, D), dtype=float)
        if self.theorem == "bounded":
            K, w, B = p["K_phi"], p["w"], p["B"]
            return lambda Y, D: alpha ** 2 * K * (np.asarray(D) ** 2 - w * B ** 2 / K)
        kappa, w, s_star = p["kappa"], p["w"], p["s_star"]
        return lambda Y, D: alpha ** 2 * kappa * (np.asarray(D) ** 2 - 2 * w * s_star / kappa)

    def inner_increase(self, alpha):
        """Bound on ``ΔV`` inside ``B̄_{epsilon_o+rho_o}`` at gain ``alpha``."""
        p = self.params
        if self.theorem == "growth":
            return alpha * p["b"] * max(1 - alpha * p["w"] * p["beta"], 0.0)
        if self.theorem == "bounded":
            return alpha * p["b"] + p["w"] * alpha ** 2 * p["B"] ** 2
        R = p["epsilon_o"] + p["rho_o"]
        return (alpha * p["b"] + 2 * p["w"] * alpha ** 2 * p["L"] ** 2 * R ** 2
                + 2 * p["w"] * alpha ** 2 * p["s_star"])

    def to_dict(self):
        return {"theorem": self.theorem, "alpha_max": self.alpha_max,
                "binding": self.binding, "components": self.components, "params": self.params}


def budget_growth(w, beta, b, b_o):
    """Budget under ``|s|² <= beta ∇V.s``.

    The decrease ``W = alpha phi (1 - alpha w beta)`` vanishes at
    ``alpha = 1/(w beta)``, so the cap used is ``1/(1.01 w beta)``; the
    supremum is kept in ``params["alpha_sup"]``.
    """
    if not (w > 0 and beta > 0 and b_o > 0) or b < 0:
        raise ValueError("need w, beta, b_o > 0 and b >= 0")
    wb = w * beta
    sup = 1 / wb
    if b == 0 or b / (4 * wb) <= b_o:
        alpha_1 = sup
    else:
        alpha_1 = 2 * b_o / (b + math.sqrt(b * b - 4 * b * wb * b_o))
    components = {"alpha_growth": 1 / (STRICT * wb), "alpha_1": alpha_1}
    return StepSizeBudget("growth", min(components.values()), components,
                          {"w": w, "beta": beta, "b": b, "b_o": b_o, "alpha_sup": sup,
                           "epsilon_o": 0.0})


def _check_geometry(sigma_o, epsilon_o, rho_o):
    if not rho_o > 0 or epsilon_o < 0:
        raise ValueError("need rho_o > 0 and epsilon_o >= 0")
    if not sigma_o > epsilon_o + rho_o:
        raise ValueError(f"need sigma_o > epsilon_o + rho_o (got {sigma_o} <= "
                         f"{epsilon_o + rho_o})")


def budget_bounded(w, B, b, c, sigma_o, epsilon_o, rho_o, b_o):
    """Budget under ``|s| <= B`` on ``B̄_{sigma_o}``; ``c`` is a containment level of phi."""
    _check_geometry(sigma_o, epsilon_o, rho_o)
    if not (w > 0 and B > 0 and c > 0 and b_o > 0) or b < 0:
        raise ValueError("need w, B, c, b_o > 0 and b >= 0")
    R = epsilon_o + rho_o
    alpha_q = c * R ** 2 / (sigma_o ** 2 * w * B ** 2)
    alpha_1 = _smaller_root(w * B ** 2, b, b_o)
    components = {"alpha_q": alpha_q, "alpha_1": alpha_1}
    return StepSizeBudget("bounded", min(components.values()), components,
                          {"w": w, "B": B, "b": b, "c": c, "sigma_o": sigma_o,
                           "epsilon_o": epsilon_o, "rho_o": rho_o, "b_o": b_o,
                           "K_phi": STRICT * w * B ** 2 / R ** 2})


def budget_lipschitz(w, L, s_star, b, c, sigma_o, epsilon_o, rho_o, b_o):
    """Budget for a singleton ``L``-Lipschitz ``s``; ``s_star = max_A |s|²``.

    ``K_phi`` is 1.01 times its infimum ``2wL² + 2w s_star/(epsilon_o+rho_o)²``
    and ``kappa = K_phi - 2wL²``, which stays positive when ``s_star = 0``.
    """
    _check_geometry(sigma_o, epsilon_o, rho_o)
    if not (w > 0 and L > 0 and c > 0 and b_o > 0) or b < 0 or s_star < 0:
        raise ValueError("need w, L, c, b_o > 0 and b, s_star >= 0")
    R = epsilon_o + rho_o
    K_inf = 2 * w * L ** 2 + 2 * w * s_star / R ** 2
    alpha_q = c / (sigma_o ** 2 * K_inf)
    K = STRICT * K_inf
    alpha_1 = _smaller_root(2 * w * L ** 2 * R ** 2 + 2 * w * s_star, b, b_o)
    components = {"alpha_q": alpha_q, "alpha_1": alpha_1}
    return StepSizeBudget("lipschitz", min(components.values()), components,
                          {"w": w, "L": L, "s_star": s_star, "b": b, "c": c,
                           "sigma_o": sigma_o, "epsilon_o": epsilon_o, "rho_o": rho_o,
                           "b_o": b_o, "K_phi": K, "kappa": K - 2 * w * L ** 2,
                           "kappa_lower": 2 * w * s_star / R ** 2})


def s_star(oracle, attractor, resolution=None, seed=0):
    """``max |s|²`` over the attractor, by a grid on it (exact for a point)."""
    lo, hi = attractor.bounds()
    if np.allclose(lo, hi):
        pts = lo[None]
    else:
        h = resolution or default_resolution(attractor, float(np.max(hi - lo)))
        pts = _grid(attractor, 0.0, h)
        pts = pts[attractor.contains(pts)]
    D = oracle.batch(pts, seed)
    return float(np.max(np.einsum("mkn,mkn->mk", D, D)))


def ultimate_radius(budget, alpha):
    """Radius of the smallest ``dist²/2`` sublevel set that is forward invariant
    once entered: ``sqrt(R² + 2 inner_increase(alpha))``, ``R = epsilon_o + rho_o``."""
    p = budget.params
    R = p["epsilon_o"] + p.get("rho_o", 0.0)
    return math.sqrt(R ** 2 + 2 * budget.inner_increase(alpha))


# -- robustness ---------------------------------------------------------------

@dataclass
class RobustnessMargins:
    """Error sizes under which a perturbed SPSP map stays SPSP."""

    a_max: float
    r_max: float
    c: float
    sigma_hat: float
    epsilon_hat: float
    L: float
    b: float

    def b_hat(self, a, r):
        return self.b + self.L * self.epsilon_hat * (a + r * self.epsilon_hat)

    def phi_hat(self, a, r):
        k1 = self.c / (2 * self.sigma_hat) - a * self.L
        k2 = self.c / (2 * self.sigma_hat ** 2) - r * self.L
        return lambda Y, D: k1 * np.asarray(D) + k2 * np.asarray(D) ** 2

    def within(self, a, r):
        return a < self.a_max and r < self.r_max

    def certificate(self, a, r):
        from .spsp import SpspCertificate

        return SpspCertificate(self.sigma_hat, self.epsilon_hat, self.b_hat(a, r),
                               self.phi_hat(a, r), "analytic(robustness)",
                               {"a": a, "r": r, "a_max": self.a_max, "r_max": self.r_max,
                                "c": self.c, "L": self.L})

    def to_dict(self):
        return {"a_max": self.a_max, "r_max": self.r_max, "c": self.c,
                "sigma_hat": self.sigma_hat, "epsilon_hat": self.epsilon_hat,
                "L_gradV": self.L, "b": self.b}


def robustness_margins(c, sigma_hat, L_gradV, b=0.0, epsilon_hat=0.0):
    """Strict bounds ``a < c/(2 sigma_hat L)``, ``r < c/(2 sigma_hat² L)`` and the
    perturbed certificate data. ``c`` is a containment level of the unperturbed
    ``phi`` inside ``B̄_{epsilon_hat}``."""
    if not (c > 0 and sigma_hat > 0 and L_gradV > 0):
        raise ValueError("c, sigma_hat and L_gradV must be positive")
    return RobustnessMargins(c / (2 * sigma_hat * L_gradV), c / (2 * sigma_hat ** 2 * L_gradV),
                             c, sigma_hat, epsilon_hat, L_gradV, b)


def practical_radius(alpha, budget_for, lo, hi, rtol=1e-6):
    """Smallest ``R`` in ``(lo, hi]`` whose budget ``budget_for(R)`` admits ``alpha``.

    ``budget_for`` maps the inner radius ``epsilon_o + rho_o`` to a
    StepSizeBudget whose ``alpha_max`` is nondecreasing in it. Returns
    ``(R, budget, ultimate_radius(budget, alpha))``, or ``None`` when even
    ``hi`` does not admit ``alpha``.
    """
    top = budget_for(hi)
    if top.alpha_max < alpha:
        return None
    best = top
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        try:
            bud = budget_for(mid)
        except ValueError:
            lo = mid
            continue
        if bud.alpha_max >= alpha:
            hi, best = mid, bud
        else:
            lo = mid
    return hi, best, ultimate_radius(best, alpha)
