"""Projected iteration ``y+ = P(y - alpha s)``, descent-lemma checks, the
one-step Lyapunov conditions and trial-based practical-stability certification."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import ProjectionError, WholeSpace, sample_region
from .problems import make_lyapunov

TOL = 1e-9
SELECTIONS = ("first", "worst-case", "random")
DEFAULT_HORIZON = 10_000
DEFAULT_TRIALS = 64
DELTA_RESOLUTION = 1e-3


class IterationError(RuntimeError):
    """Raised when an oracle or projection fails; ``record`` holds the steps done."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrajectoryRecord:
    iterates: np.ndarray
    alpha: float
    directions: np.ndarray
    seed: int
    oracle: str
    selection: str
    projected_start: bool
    unconstrained: bool
    V: np.ndarray | None = None
    dist: np.ndarray | None = None
    inner: np.ndarray | None = None  # ∇V(y(t)).s(t)

    @property
    def steps(self):
        return len(self.directions)

    @property
    def dV(self):
        return None if self.V is None else np.diff(self.V)

    @property
    def sq_norms(self):
        return np.einsum("ij,ij->i", self.directions, self.directions)

    def descent_rhs(self, w=0.5):
        """``-alpha ∇V.s + w alpha² |s|²`` per step."""
        return -self.alpha * self.inner + w * self.alpha ** 2 * self.sq_norms

    def to_dict(self):
        out = {"alpha": self.alpha, "steps": self.steps, "seed": self.seed,
               "oracle": self.oracle, "selection": self.selection,
               "projected_start": self.projected_start, "y0": self.iterates[0].tolist(),
               "y_final": self.iterates[-1].tolist()}
        if self.V is not None:
            out.update(V0=float(self.V[0]), V_final=float(self.V[-1]),
                       dist_final=float(self.dist[-1]))
        return out


def _select(S, selection, gradV, rng):
    """Pick one row of each ``S[i]`` (shape (m, k, n)) per the selection rule."""
    m = len(S)
    if selection == "first" or S.shape[1] == 1:
        return S[:, 0]
    if selection == "worst-case":
        idx = np.argmin(np.einsum("mkn,mn->mk", S, gradV), axis=1)
    else:
        idx = rng.integers(S.shape[1], size=m)
    return S[np.arange(m), idx]


def iterate(y0, oracle, feasible=None, alpha=0.1, horizon=100, selection="first",
            lyapunov=None, seed=0):
    """Run ``horizon`` steps from ``y0`` (projected onto ``feasible`` first if outside)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if selection not in SELECTIONS:
        raise ValueError(f"unknown selection {selection!r}; choose from {SELECTIONS}")
    if selection == "worst-case" and lyapunov is None:
        raise ValueError("worst-case selection needs a Lyapunov function")
    y = np.asarray(y0, dtype=float).reshape(-1)
    n = y.size
    feasible = feasible if feasible is not None else WholeSpace(n)
    projected = not bool(feasible.contains(y[None])[0])
    if projected:
        y = feasible.project(y[None])[0]
    rng = np.random.default_rng(seed)
    Y = np.empty((horizon + 1, n))
    S = np.empty((horizon, n))
    Y[0] = y
    t = 0
    try:
        for t in range(horizon):
            D = oracle.batch(Y[t][None], seed)
            g = lyapunov.gradient(Y[t][None]) if lyapunov is not None else None
            S[t] = _select(D, selection, g, rng)[0]
            nxt = feasible.project((Y[t] - alpha * S[t])[None])[0]
            if not np.all(np.isfinite(nxt)):
                raise FloatingPointError(f"non-finite iterate at step {t + 1}")
            Y[t + 1] = nxt
    except (ProjectionError, FloatingPointError, ValueError) as exc:
        rec = _record(Y[: t + 1], S[:t], alpha, seed, oracle, selection, projected,
                      feasible, lyapunov)
        raise IterationError(f"iteration aborted at step {t}: {exc}", rec) from exc
    return _record(Y, S, alpha, seed, oracle, selection, projected, feasible, lyapunov)


def _record(Y, S, alpha, seed, oracle, selection, projected, feasible, V):
    rec = TrajectoryRecord(Y, alpha, S, seed, oracle.name, selection, projected,
                           isinstance(feasible, WholeSpace))
    if V is not None:
        rec.V = V.value(Y)
        rec.dist = V.attractor.distance(Y)
        rec.inner = np.einsum("ij,ij->i", V.gradient(Y[:-1]), S) if len(S) else np.zeros(0)
    return rec


@dataclass
class DescentCheck:
    margins: np.ndarray
    worst: float
    step: int
    passed: bool
    w: float


def check_descent_lemma(traj, V, w_mode="half", tol=TOL):
    """Margins ``rhs - ΔV`` of ``ΔV <= -alpha ∇V.s + w alpha² |s|²`` along ``traj``.

    ``w_mode="half"`` (w = 1/2) needs ``V = dist²/2`` and allows projection;
    ``("lipschitz", L)`` (w = L) needs an unconstrained trajectory.
    """
    if w_mode == "half":
        if V.flag != "squared-distance":
            raise ValueError("w_mode 'half' requires the squared-distance Lyapunov function")
        w = 0.5
    elif isinstance(w_mode, tuple) and w_mode[0] == "lipschitz":
        if not traj.unconstrained:
            raise ValueError("w_mode 'lipschitz' requires an unconstrained iteration")
        w = float(w_mode[1])
        if not w > 0:
            raise ValueError("Lipschitz constant must be positive")
    else:
        raise ValueError(f"unknown w_mode {w_mode!r}")
    Y, S = traj.iterates, traj.directions
    if len(S) == 0:
        return DescentCheck(np.zeros(0), math.inf, -1, True, w)
    vals = V.value(Y)
    inner = np.einsum("ij,ij->i", V.gradient(Y[:-1]), S)
    rhs = -traj.alpha * inner + w * traj.alpha ** 2 * np.einsum("ij,ij->i", S, S)
    margins = rhs - np.diff(vals)
    k = int(np.argmin(margins))
    return DescentCheck(margins, float(margins[k]), k, bool(margins[k] >= -tol), w)


# -- one-step conditions ------------------------------------------------------

@dataclass
class ConditionReport:
    p1: bool
    p2: bool
    p3: bool
    min_W: float
    p2_margin: float
    p3_margin: float
    outer_samples: int
    inner_samples: int
    alpha: float
    witnesses: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.p1 and self.p2 and self.p3

    def to_dict(self):
        return {"pass": self.passed, "P1": self.p1, "P2": self.p2, "P3": self.p3,
                "alpha": self.alpha, "min_W": self.min_W, "p2_margin": self.p2_margin,
                "p3_margin": self.p3_margin, "outer_samples": self.outer_samples,
                "inner_samples": self.inner_samples, "witnesses": self.witnesses}


def one_step_change(V, oracle, feasible, alpha, Y, seed=0):
    """``V(P(y - alpha s)) - V(y)`` for every sampled direction, shape (m, k)."""
    D = oracle.batch(Y, seed)
    m, k, n = D.shape
    nxt = feasible.project((Y[:, None, :] - alpha * D).reshape(-1, n))
    return V.value(nxt).reshape(m, k) - V.value(Y)[:, None]


def check_spas_conditions(V, oracle, feasible, sigma_o, epsilon_o, rho_o, alpha, b_o, W,
                          samples=10_000, seed=0, inner_samples=None, tol=TOL, workers=1):
    """Check ``W > 0`` and ``ΔV <= -W`` on ``feasible ∩ {R <= dist <= sigma_o}`` and
    ``ΔV <= b_o`` on ``feasible ∩ B̄_R``, with ``R = epsilon_o + rho_o``."""
    R = epsilon_o + rho_o
    if not sigma_o > R:
        raise ValueError(f"need sigma_o > epsilon_o + rho_o (got {sigma_o} <= {R})")
    A = V.attractor
    feasible = feasible if feasible is not None else WholeSpace(A.dim)
    inner_samples = samples if inner_samples is None else inner_samples
    Yo = sample_region(A, samples, seed, d_lo=R, d_hi=sigma_o, feasible=feasible,
                       workers=workers)
    Yi = sample_region(A, inner_samples, seed + 1, d_lo=0.0, d_hi=R, feasible=feasible,
                       workers=workers)
    Do = A.distance(Yo)
    w_out = np.asarray(W(Yo, Do), dtype=float)
    dv_out = one_step_change(V, oracle, feasible, alpha, Yo, seed).max(axis=1)
    dv_in = one_step_change(V, oracle, feasible, alpha, Yi, seed).max(axis=1)
    p2m = -w_out - dv_out
    p3m = b_o - dv_in
    wit = {}
    i1, i2, i3 = int(np.argmin(w_out)), int(np.argmin(p2m)), int(np.argmin(p3m))
    p1 = bool(w_out[i1] > 0)
    p2 = bool(p2m[i2] >= -tol)
    p3 = bool(p3m[i3] >= -tol)
    if not p1:
        wit["P1"] = {"y": Yo[i1].tolist(), "W": float(w_out[i1])}
    if not p2:
        wit["P2"] = {"y": Yo[i2].tolist(), "dV": float(dv_out[i2]), "W": float(w_out[i2]),
                     "margin": float(p2m[i2])}
    if not p3:
        wit["P3"] = {"y": Yi[i3].tolist(), "dV": float(dv_in[i3]), "margin": float(p3m[i3])}
    return ConditionReport(p1, p2, p3, float(w_out[i1]), float(p2m[i2]), float(p3m[i3]),
                           len(Yo), len(Yi), alpha, wit)


# -- trial-based SPAS certification -------------------------------------------

def simulate_distances(starts, oracle, feasible, alpha, horizon, V, selection="worst-case",
                       seed=0, stop_radius=None):
    """Distances to the attractor along trajectories from each row of ``starts``.

    Returns ``(horizon + 1, trials)``. Diverged rows are frozen at ``inf``. With
    ``stop_radius`` the run ends at the first step where some row exceeds it
    (the remaining entries are ``nan``).
    """
    A = V.attractor
    Y = feasible.project(np.array(starts, dtype=float))
    m = len(Y)
    out = np.full((horizon + 1, m), np.nan)
    out[0] = A.distance(Y)
    alive = np.isfinite(out[0])
    rng = np.random.default_rng(seed)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            if stop_radius is not None and np.any(out[t] > stop_radius):
                break
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                out[t + 1:] = np.inf
                break
            Ya = Y[idx]
            D = oracle.batch(Ya, seed)
            g = V.gradient(Ya) if selection == "worst-case" else None
            s = _select(D, selection, g, rng)
            step = Ya - alpha * s
            ok = np.all(np.isfinite(step), axis=1)
            if np.any(ok):
                nxt = feasible.project(step[ok])
                fin = np.all(np.isfinite(nxt), axis=1)
                ok[np.flatnonzero(ok)[~fin]] = False
                Y[idx[ok]] = nxt[fin]
            alive[idx[~ok]] = False
            d = np.full(m, np.inf)
            d[alive] = A.distance(Y[alive])
            out[t + 1] = d
    return out


def _initial_conditions(attractor, feasible, radius, trials, seed):
    """Half on the shell ``dist = radius``, half inside, then projected onto ``feasible``."""
    rng = np.random.default_rng(seed)
    src = sample_region(attractor, trials, seed, d_lo=0.5, d_hi=1.0)
    p = attractor.project(src)
    v = src - p
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    frac = np.ones(trials)
    half = trials // 2
    frac[half:] = rng.uniform(size=trials - half) ** (1.0 / attractor.dim)
    return feasible.project(p + (radius * frac)[:, None] * v)


@dataclass
class SpasReport:
    alpha: float
    trials: int
    horizon: int
    seed: int
    rho_s: float
    delta_found: float | None
    escape_witness: dict | None
    sigma: float
    rho_a: float
    T_found: int | None
    straggler_witness: dict | None
    tail_radius: float
    trial_T: list = field(default_factory=list)

    @property
    def stable(self):
        return self.delta_found is not None

    @property
    def attractive(self):
        return self.T_found is not None

    @property
    def certified(self):
        return self.stable and self.attractive

    def to_dict(self):
        return {"alpha": self.alpha, "spas": self.certified, "trials": self.trials,
                "horizon": self.horizon, "seed": self.seed,
                "stability": {"rho_s": self.rho_s, "delta_found": self.delta_found,
                              "escape_witness": self.escape_witness},
                "attractivity": {"sigma": self.sigma, "rho_a": self.rho_a,
                                 "T_found": self.T_found,
                                 "straggler_witness": self.straggler_witness,
                                 "tail_radius": self.tail_radius}}


def _stability(oracle, feasible, V, alpha, rho_s, trials, horizon, selection, seed, resolution):
    A = V.attractor

    def escape(delta):
        starts = _initial_conditions(A, feasible, delta, trials, seed)
        d = simulate_distances(starts, oracle.clone(), feasible, alpha, horizon, V,
                               selection, seed, stop_radius=rho_s)
        bad = np.argwhere(d > rho_s)
        if bad.size == 0:
            return None
        t, i = bad[0]
        return {"delta": delta, "trial": int(i), "y0": starts[i].tolist(), "step": int(t),
                "dist": float(d[t, i])}

    if escape(rho_s) is None:
        return rho_s, None
    lo = resolution * rho_s
    wit = escape(lo)
    if wit is not None:
        return None, wit
    hi = rho_s
    while hi - lo > resolution * rho_s:
        mid = 0.5 * (lo + hi)
        w = escape(mid)
        if w is None:
            lo = mid
        else:
            hi, wit = mid, w
    return lo, wit


def _attractivity(oracle, feasible, V, alpha, sigma, rho_a, trials, horizon, selection, seed):
    starts = _initial_conditions(V.attractor, feasible, sigma, trials, seed + 1)
    d = simulate_distances(starts, oracle.clone(), feasible, alpha, horizon, V, selection, seed)
    outside = d > rho_a
    # first time after which each trial stays inside
    last_out = np.where(outside.any(axis=0),
                        horizon - np.argmax(outside[::-1], axis=0) + 1, 0)
    tail = float(np.max(d[horizon // 2:]))
    i = int(np.argmax(last_out))
    T = int(last_out[i])
    trial_T = [int(v) if v <= horizon else None for v in last_out]
    if T > horizon:
        wit = {"trial": i, "y0": starts[i].tolist(), "dist_final": float(d[-1, i])}
        return None, wit, tail, trial_T
    return T, None, tail, trial_T


def certify_spas(oracle, feasible, attractor, alpha_grid, *, sigma, rho_a, rho_s,
                 trials=DEFAULT_TRIALS, horizon=DEFAULT_HORIZON, seed=0, lyapunov=None,
                 selection="worst-case", resolution=DELTA_RESOLUTION, workers=1):
    """Trial-based practical stability and attractivity at each gain in ``alpha_grid``.

    Stability: bisection for the largest ``delta <= rho_s`` such that every trial
    from ``B̄_delta`` stays within ``rho_s`` for ``horizon`` steps. Attractivity:
    smallest ``T`` after which every trial from ``B̄_sigma`` is within ``rho_a``
    up to ``horizon``. ``rho_a`` may be a callable of ``alpha``. Escapes after
    the horizon are not detectable.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"unknown selection {selection!r}")
    V = lyapunov if lyapunov is not None else make_lyapunov("squared-distance", attractor)
    feasible = feasible if feasible is not None else WholeSpace(attractor.dim)

    def one(alpha):
        ra = float(rho_a(alpha)) if callable(rho_a) else float(rho_a)
        if not sigma > ra:
            raise ValueError(f"need sigma > rho_a (got {sigma} <= {ra})")
        delta, esc = _stability(oracle, feasible, V, alpha, rho_s, trials, horizon,
                                selection, seed, resolution)
        T, strag, tail, trial_T = _attractivity(oracle, feasible, V, alpha, sigma, ra,
                                                trials, horizon, selection, seed)
        return SpasReport(float(alpha), trials, horizon, seed, rho_s, delta,
                          esc, sigma, ra, T, strag, tail,
                          trial_T)

    alphas = [float(a) for a in alpha_grid]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, alphas))
    return [one(a) for a in alphas]
