"""Config-driven experiment runner.

    spsplab <subcommand> CONFIG.yaml [--set dotted.path=value ...] [--output DIR] [--workers N]

Subcommands: verify, certify, budget, robust, simulate, spas, lemma-b. Each
writes ``<subcommand>.json`` (summary) and ``<subcommand>.csv`` (detail) to
the output directory (``--output``, else ``output.directory`` in the config,
else ``$SPSPLAB_OUTPUT``, else ``./spsplab-out``) and prints one verdict line.

Exit codes: 0 success, 1 a check failed, 2 bad configuration, 3 internal error.

CSV columns:
    verify, robust   index, region, y0..y{n-1}, s0..s{n-1}, margin
    simulate         t, y0..y{n-1}, V, dV, dist, margin
    spas             trial, alpha, delta, T, verdict
    certify          d, phi
    budget           component, value
    lemma-b          d, phi, in_sublevel
"""

from __future__ import annotations

import argparse
import copy
import math
import os
import sys
import traceback

import numpy as np
import yaml

from . import dynamics, geometry, lemmas, oracles, problems, spsp
from ._io import write_csv, write_json

SUBCOMMANDS = ("verify", "certify", "budget", "robust", "simulate", "spas", "lemma-b")
ENV_OUTPUT = "SPSPLAB_OUTPUT"

DEFAULTS = {
    "name": None,
    "problem": {"builtin": None, "params": {}},
    "lyapunov": "squared-distance",
    "feasible": {"kind": "whole-space"},
    "oracle": {"kind": "gradient", "params": {},
               "error": {"a": 0.0, "r": 0.0, "law": "worst-case", "vector": None}},
    "certificate": {"kind": None, "params": {}},
    "budget": {"theorem": "lipschitz", "w": 0.5, "beta": None, "B": None, "L": None,
               "s_star": None, "b": 0.0, "b_o": 0.1, "c": None, "sigma_o": 2.0,
               "epsilon_o": 0.0, "rho_o": 1.0, "alpha_scale": 1.0},
    "lemma": {"phi": "certificate", "epsilon": 0.0, "rho": 1.0, "sigma": 2.0,
              "grid_resolution": None, "K_phi": 1.0, "sigma_hat": None},
    "robust": {"sigma_hat": 3.0, "epsilon_hat": 0.5, "a_fraction": 0.5, "r_fraction": 0.5},
    "dynamics": {"alpha": 0.1, "alpha_grid": None, "horizon": 10_000, "trials": 64,
                 "selection": "worst-case", "y0": None, "sigma": 2.0, "rho_a": None,
                 "rho_s": 1.0},
    "sampling": {"samples": 10_000, "seed": 0},
    "output": {"directory": None},
}

# radial test profiles phi(d) for lemma-b
PROFILES = {
    "squared-distance": lambda d: d ** 2,
    "disconnected": lambda d: np.minimum(d ** 2, (d - 3.0) ** 2 + 0.5),
}


class ConfigError(ValueError):
    pass


class CheckFailed(Exception):
    """A verification-type failure; carries the verdict line."""


# -- config ------------------------------------------------------------------

def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _line_index(node, prefix=(), out=None):
    """Map dotted paths to 1-based source lines from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[".".join(path)] = k.start_mark.line + 1
            _line_index(v, path, out)
    return out


def _set_path(cfg, dotted, raw):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    try:
        node[keys[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {dotted}: cannot parse value {raw!r}: {exc}") from None


def load_config(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
        lines = _line_index(yaml.compose(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(_where(path, lines, unknown[0], "unknown section"))
    cfg = _merge(DEFAULTS, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects dotted.path=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(cfg, k.strip(), v)
        lines[k.strip()] = "--set"
    validate(cfg, path, lines)
    return cfg


def _where(path, lines, key, msg):
    line = lines.get(key)
    loc = f"{path}:{line}" if isinstance(line, int) else f"{path} ({line})" if line else path
    return f"{loc}: {key}: {msg}"


def validate(cfg, path="<config>", lines=None):
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(_where(path, lines, key, msg))

    def number(key, lo=None, strict=False, allow_none=False, integer=False):
        sec, _, leaf = key.partition(".")
        v = cfg[sec][leaf]
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(key, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            fail(key, f"expected an integer, got {v!r}")
        if lo is not None and (v <= lo if strict else v < lo):
            fail(key, f"must be {'>' if strict else '>='} {lo}, got {v!r}")

    name = cfg["problem"].get("builtin")
    if name is None:
        fail("problem.builtin", "missing builtin name")
    if name not in problems.BUILTINS:
        fail("problem.builtin", f"unknown builtin {name!r}; choose from "
                                f"{sorted(problems.BUILTINS)}")
    if cfg["lyapunov"] not in ("squared-distance", "objective-gap"):
        fail("lyapunov", f"unknown Lyapunov flag {cfg['lyapunov']!r}")
    if cfg["oracle"]["kind"] not in ORACLES:
        fail("oracle.kind", f"unknown oracle {cfg['oracle']['kind']!r}; choose from "
                            f"{sorted(ORACLES)}")
    err = cfg["oracle"]["error"]
    for k in ("a", "r"):
        if not isinstance(err.get(k), (int, float)) or err[k] < 0:
            fail(f"oracle.error.{k}", f"must be a nonnegative number, got {err.get(k)!r}")
    if err.get("law") not in oracles.LAWS:
        fail("oracle.error.law", f"unknown law {err.get('law')!r}")
    kind = cfg["certificate"]["kind"]
    if kind is not None and kind not in CERTIFICATES:
        fail("certificate.kind", f"unknown certificate {kind!r}; choose from "
                                 f"{sorted(CERTIFICATES)}")
    if cfg["budget"]["theorem"] not in ("growth", "bounded", "lipschitz"):
        fail("budget.theorem", f"unknown theorem {cfg['budget']['theorem']!r}")
    if cfg["dynamics"]["selection"] not in dynamics.SELECTIONS:
        fail("dynamics.selection", f"unknown selection {cfg['dynamics']['selection']!r}")
    if cfg["lemma"]["phi"] not in ("certificate", *PROFILES):
        fail("lemma.phi", f"unknown profile {cfg['lemma']['phi']!r}")
    number("sampling.samples", 0, strict=True, integer=True)
    number("sampling.seed", 0, integer=True)
    number("dynamics.alpha", 0, strict=True)
    number("dynamics.horizon", 0, strict=True, integer=True)
    number("dynamics.trials", 0, strict=True, integer=True)
    number("dynamics.sigma", 0, strict=True)
    number("dynamics.rho_s", 0, strict=True)
    for key in ("budget.w", "budget.b_o", "budget.sigma_o", "budget.rho_o",
                "budget.alpha_scale", "lemma.rho", "lemma.sigma", "lemma.K_phi",
                "robust.sigma_hat", "robust.a_fraction", "robust.r_fraction"):
        number(key, 0, strict=True)
    for key in ("budget.b", "budget.epsilon_o", "lemma.epsilon", "robust.epsilon_hat"):
        number(key, 0)
    for key in ("budget.beta", "budget.B", "budget.L", "budget.c", "lemma.sigma_hat",
                "lemma.grid_resolution"):
        number(key, 0, strict=True, allow_none=True)
    number("budget.s_star", 0, allow_none=True)
    grid = cfg["dynamics"]["alpha_grid"]
    if grid is not None and (not isinstance(grid, list) or not grid or any(
            isinstance(a, bool) or not isinstance(a, (int, float)) or a <= 0 for a in grid)):
        fail("dynamics.alpha_grid", "must be a nonempty list of positive numbers")
    ra = cfg["dynamics"]["rho_a"]
    if ra is not None and ra != "ultimate" and (not isinstance(ra, (int, float)) or ra <= 0):
        fail("dynamics.rho_a", "must be a positive number or 'ultimate'")
    return cfg


# -- building blocks ---------------------------------------------------------

def _weighted(f, p):
    return oracles.weighted_gradient_oracle(f, p.get("weights", [np.eye(f.dim)]))


ORACLES = {
    "gradient": lambda f, p: oracles.gradient_oracle(f),
    "subgradient": lambda f, p: oracles.subgradient_oracle(f, int(p.get("samples_per_query", 4))),
    "weighted-gradient": _weighted,
    "finite-difference": lambda f, p: oracles.finite_difference_oracle(f, p.get("mu", 1e-6)),
    "scaled-gradient": lambda f, p: oracles.scaled(oracles.gradient_oracle(f),
                                                   float(p.get("factor", 1.0))),
}


class Context:
    """Objects built from one config, created on first use."""

    def __init__(self, cfg, workers=1):
        self.cfg = cfg
        self.workers = workers
        try:
            self.f, self.attractor = problems.builtin(cfg["problem"]["builtin"],
                                                      cfg["problem"]["params"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"problem.params: {exc}") from None
        n = self.f.dim
        try:
            self.feasible = geometry.from_dict(cfg["feasible"], n)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"feasible: {exc}") from None
        try:
            self.V = problems.make_lyapunov(cfg["lyapunov"], self.attractor, self.f)
        except ValueError as exc:
            raise ConfigError(f"lyapunov: {exc}") from None
        o = cfg["oracle"]
        try:
            self.base_oracle = ORACLES[o["kind"]](self.f, o.get("params") or {})
            e = o["error"]
            self.error = oracles.ErrorModel(e["a"], e["r"], e["law"], e.get("vector"))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"oracle: {exc}") from None
        self.oracle = oracles.perturb(self.base_oracle, self.error, self.attractor, self.V)
        self.samples = int(cfg["sampling"]["samples"])
        self.seed = int(cfg["sampling"]["seed"])

    def certificate(self):
        kind = self.cfg["certificate"]["kind"]
        if kind is None:
            raise ConfigError("certificate.kind: required by this subcommand")
        try:
            return CERTIFICATES[kind](self, dict(self.cfg["certificate"]["params"] or {}))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"certificate.params: {exc}") from None


def _err(ctx, p, key):
    return float(p.get(key, getattr(ctx.error, key)))


def _modulus(ctx, p):
    c = p.get("c", ctx.f.strong_convexity)
    if c is None:
        raise ConfigError("certificate.params.c: no strong convexity modulus known")
    return float(c)


CERTIFICATES = {
    "strongly-convex": lambda ctx, p: spsp.certify_strongly_convex(
        _modulus(ctx, p), _err(ctx, p, "a"), _err(ctx, p, "r")),
    "strong-convexity": lambda ctx, p: spsp.strong_convexity_certificate(_modulus(ctx, p)),
    "linear-objective": lambda ctx, p: spsp.certify_linear_objective(
        float(p.get("c", ctx.f.params.get("c", 1.0))), _err(ctx, p, "a"), _err(ctx, p, "r"),
        float(p.get("sigma", 2.0))),
    "convex": lambda ctx, p: spsp.certify_convex(
        ctx.f, ctx.attractor, _err(ctx, p, "a"), _err(ctx, p, "r"), float(p.get("sigma", 2.0)),
        p.get("epsilon_hat"), p.get("grid_resolution")),
    "gradient-norm": lambda ctx, p: spsp.gradient_norm_certificate(
        ctx.f, float(p.get("scale", getattr(ctx.base_oracle, "lambda_min", 1.0)))),
    "objective-gap": lambda ctx, p: spsp.objective_gap_certificate(ctx.f),
}


def _require(cert):
    if not cert:
        raise CheckFailed(f"FAIL infeasible: violated {cert.violated}")
    return cert


def _verification_rows(report, n):
    d = report.detail
    for i, (y, s, m, reg) in enumerate(zip(d["Y"], d["S"], d["margin"], d["region"])):
        yield [i, reg, *y, *s, m]


def _verification_header(n):
    return ["index", "region", *[f"y{i}" for i in range(n)], *[f"s{i}" for i in range(n)],
            "margin"]


# -- subcommands -------------------------------------------------------------

def cmd_verify(ctx, out):
    cert = _require(ctx.certificate())
    rep = spsp.verify(ctx.oracle, ctx.V, cert, feasible=ctx.feasible, samples=ctx.samples,
                      seed=ctx.seed, workers=ctx.workers)
    n = ctx.f.dim
    write_csv(out("csv"), _verification_header(n), _verification_rows(rep, n))
    summary = {"subcommand": "verify", "config": ctx.cfg, "report": rep.to_dict()}
    verdict = (f"verify: {'PASS' if rep.passed else 'FAIL'} min_margin={rep.min_margin:.6g} "
               f"inner_margin={rep.inner_margin:.6g} phi_min={rep.phi_min:.6g} "
               f"samples={rep.band_samples}")
    return summary, rep.passed, verdict


def cmd_certify(ctx, out):
    cert = ctx.certificate()
    summary = {"subcommand": "certify", "config": ctx.cfg, "certificate": cert.to_dict()}
    if not cert:
        write_csv(out("csv"), ["d", "phi"], [])
        return summary, False, f"certify: FAIL infeasible, violated {cert.violated}"
    top = cert.sigma if math.isfinite(cert.sigma) else geometry.default_truncation(ctx.attractor)
    Y = _ray(ctx.attractor, np.linspace(cert.epsilon, top, 201))
    phi = cert.phi(Y, ctx.attractor.distance(Y))
    write_csv(out("csv"), ["d", "phi"], zip(ctx.attractor.distance(Y), phi))
    return summary, True, (f"certify: OK {cert.classification} sigma={cert.sigma:.6g} "
                           f"epsilon={cert.epsilon:.6g} b={cert.b:.6g}")


def _ray(attractor, d):
    """Points at distances ``d`` along an outward normal ray of the attractor."""
    z = attractor.bounds()[1] + 1.0
    p = attractor.project(z[None])[0]
    v = (z - p) / np.linalg.norm(z - p)
    return p + np.asarray(d)[:, None] * v


def _phi_for_budget(ctx):
    if ctx.cfg["certificate"]["kind"] is not None:
        return _require(ctx.certificate())
    if ctx.f.strong_convexity is not None:
        return spsp.strong_convexity_certificate(ctx.f.strong_convexity)
    raise ConfigError("certificate.kind: required to build the descent function phi")


def make_budget(ctx):
    """StepSizeBudget and its decrease function from the ``budget`` section."""
    p = ctx.cfg["budget"]
    cert = _phi_for_budget(ctx)
    A = ctx.attractor
    w, b, b_o = p["w"], p["b"] if p["b"] else cert.b, p["b_o"]
    so, eo, ro = p["sigma_o"], p["epsilon_o"], p["rho_o"]
    try:
        if p["theorem"] == "growth":
            beta = p["beta"] or ctx.f.lipschitz_grad
            if beta is None:
                raise ConfigError("budget.beta: required (no Lipschitz constant known)")
            bud = lemmas.budget_growth(w, beta, b, b_o)
            bud.params.update(sigma_o=so, epsilon_o=eo, rho_o=ro)
            return bud, cert, containment(ctx, cert, eo, ro, so)
        cont = containment(ctx, cert, eo, ro, so)
        c = p["c"] or cont.level
        if p["theorem"] == "bounded":
            B = p["B"]
            if B is None:
                pts = geometry.sample_region(A, ctx.samples, ctx.seed, d_lo=0.0, d_hi=so,
                                             feasible=ctx.feasible)
                B = oracles.oracle_bound(ctx.oracle, pts, ctx.seed)
            return lemmas.budget_bounded(w, B, b, c, so, eo, ro, b_o), cert, cont
        L = p["L"] or ctx.oracle.lipschitz or ctx.base_oracle.lipschitz
        if L is None:
            raise ConfigError("budget.L: required (oracle has no Lipschitz constant)")
        s_star = p["s_star"]
        if s_star is None:
            s_star = lemmas.s_star(ctx.oracle, A, seed=ctx.seed)
        return lemmas.budget_lipschitz(w, L, s_star, b, c, so, eo, ro, b_o), cert, cont
    except ValueError as exc:
        raise ConfigError(f"budget: {exc}") from None


def containment(ctx, cert, epsilon, rho, sigma, resolution=None):
    return lemmas.containment_level(cert.phi, ctx.attractor, epsilon, rho, sigma, resolution)


def cmd_budget(ctx, out):
    bud, cert, cont = make_budget(ctx)
    p = bud.params
    alpha = bud.alpha_max * ctx.cfg["budget"]["alpha_scale"]
    rep = dynamics.check_spas_conditions(ctx.V, ctx.oracle, ctx.feasible, p["sigma_o"],
                                         p["epsilon_o"], p["rho_o"], alpha, p["b_o"],
                                         bud.W(alpha, cert.phi), samples=ctx.samples,
                                         seed=ctx.seed, workers=ctx.workers)
    write_csv(out("csv"), ["component", "value"],
              [*bud.components.items(), ("alpha_max", bud.alpha_max), ("alpha_checked", alpha)])
    summary = {"subcommand": "budget", "config": ctx.cfg, "budget": bud.to_dict(),
               "containment": cont.to_dict(), "conditions": rep.to_dict()}
    verdict = (f"budget: {'PASS' if rep.passed else 'FAIL'} {bud.theorem} "
               f"alpha_max={bud.alpha_max:.6g} ({bud.binding}) alpha={alpha:.6g} "
               f"P1={rep.p1} P2={rep.p2} P3={rep.p3}")
    return summary, rep.passed, verdict


def cmd_robust(ctx, out):
    cert = _require(ctx.certificate())
    p = ctx.cfg["robust"]
    sh, eh = p["sigma_hat"], p["epsilon_hat"]
    L = ctx.V.lipschitz_grad
    if L is None:
        raise ConfigError("lyapunov: needs a known Lipschitz constant of its gradient")
    try:
        cont = containment(ctx, cert, 0.0, eh, sh)
        m = lemmas.robustness_margins(cont.level, sh, L, cert.b, eh)
    except ValueError as exc:
        raise ConfigError(f"robust: {exc}") from None
    a, r = p["a_fraction"] * m.a_max, p["r_fraction"] * m.r_max
    law = ctx.cfg["oracle"]["error"]["law"]
    em = oracles.ErrorModel(a, r, law, ctx.cfg["oracle"]["error"].get("vector"))
    oracle = oracles.perturb(ctx.base_oracle, em, ctx.attractor, ctx.V)
    rc = m.certificate(a, r)
    rep = spsp.verify(oracle, ctx.V, rc, feasible=ctx.feasible, samples=ctx.samples,
                      seed=ctx.seed, workers=ctx.workers)
    n = ctx.f.dim
    write_csv(out("csv"), _verification_header(n), _verification_rows(rep, n))
    summary = {"subcommand": "robust", "config": ctx.cfg, "margins": m.to_dict(),
               "a": a, "r": r, "b_hat": m.b_hat(a, r), "report": rep.to_dict()}
    verdict = (f"robust: {'PASS' if rep.passed else 'FAIL'} a={a:.6g} (a_max={m.a_max:.6g}) "
               f"r={r:.6g} (r_max={m.r_max:.6g}) b_hat={m.b_hat(a, r):.6g} "
               f"min_margin={rep.min_margin:.6g} phi_min={rep.phi_min:.6g}")
    return summary, rep.passed, verdict


def cmd_simulate(ctx, out):
    d = ctx.cfg["dynamics"]
    y0 = d["y0"]
    if y0 is None:
        y0 = np.asarray(ctx.attractor.bounds()[1], dtype=float) + 1.0
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (ctx.f.dim,):
        raise ConfigError(f"dynamics.y0: expected {ctx.f.dim} coordinates")
    ok = True
    try:
        tr = dynamics.iterate(y0, ctx.oracle, ctx.feasible, d["alpha"], int(d["horizon"]),
                              d["selection"], ctx.V, ctx.seed)
        note = ""
    except dynamics.IterationError as exc:
        tr, ok, note = exc.record, False, f" aborted: {exc}"
    if ctx.V.flag == "squared-distance":
        mode = "half"
    elif tr.unconstrained and ctx.V.lipschitz_grad:
        mode = ("lipschitz", ctx.V.lipschitz_grad)
    else:
        mode = None
    chk = dynamics.check_descent_lemma(tr, ctx.V, mode) if mode else None
    margins = chk.margins if chk else np.full(tr.steps, np.nan)
    dV = np.concatenate([tr.dV, [np.nan]])
    marg = np.concatenate([margins, [np.nan]])
    rows = ([t, *tr.iterates[t], tr.V[t], dV[t], tr.dist[t], marg[t]]
            for t in range(len(tr.iterates)))
    write_csv(out("csv"), ["t", *[f"y{i}" for i in range(ctx.f.dim)], "V", "dV", "dist",
                           "margin"], rows)
    ok = ok and (chk is None or chk.passed)
    summary = {"subcommand": "simulate", "config": ctx.cfg, "trajectory": tr.to_dict(),
               "descent_lemma": None if chk is None else
               {"w": chk.w, "worst_margin": chk.worst, "step": chk.step, "pass": chk.passed}}
    verdict = (f"simulate: {'PASS' if ok else 'FAIL'} steps={tr.steps} "
               f"dist_final={tr.dist[-1]:.6g}"
               + ("" if chk is None else f" worst_descent_margin={chk.worst:.3g}") + note)
    return summary, ok, verdict


def cmd_spas(ctx, out):
    d = ctx.cfg["dynamics"]
    grid = d["alpha_grid"] or [d["alpha"]]
    ra = d["rho_a"]
    budget = None
    if ra in (None, "ultimate"):
        if ctx.V.flag != "squared-distance":
            raise ConfigError("dynamics.rho_a: 'ultimate' needs the squared-distance V")
        budget, _, _ = make_budget(ctx)
        ra = lambda alpha: lemmas.ultimate_radius(budget, alpha)  # noqa: E731
    try:
        reports = dynamics.certify_spas(ctx.oracle, ctx.feasible, ctx.attractor, grid,
                                        sigma=d["sigma"], rho_a=ra, rho_s=d["rho_s"],
                                        trials=int(d["trials"]), horizon=int(d["horizon"]),
                                        seed=ctx.seed, lyapunov=ctx.V,
                                        selection=d["selection"], workers=ctx.workers)
    except ValueError as exc:
        raise ConfigError(f"dynamics: {exc}") from None
    rows = []
    for rep in reports:
        for i, T in enumerate(rep.trial_T):
            rows.append([i, rep.alpha, rep.delta_found, T,
                         "certified" if rep.certified else "not-certified"])
    write_csv(out("csv"), ["trial", "alpha", "delta", "T", "verdict"], rows)
    ok = all(r.certified for r in reports)
    summary = {"subcommand": "spas", "config": ctx.cfg,
               "budget": None if budget is None else budget.to_dict(),
               "reports": [r.to_dict() for r in reports]}
    parts = " ".join(f"[alpha={r.alpha:.4g} delta={r.delta_found} T={r.T_found} "
                     f"rho_a={r.rho_a:.4g}]" for r in reports)
    return summary, ok, f"spas: {'PASS' if ok else 'FAIL'} {parts}"


def cmd_lemma_b(ctx, out):
    p = ctx.cfg["lemma"]
    if p["phi"] == "certificate":
        phi = _require(ctx.certificate()).phi
    else:
        prof = PROFILES[p["phi"]]
        phi = lambda Y, D: prof(np.asarray(D, dtype=float))  # noqa: E731
    try:
        cont = lemmas.containment_level(phi, ctx.attractor, p["epsilon"], p["rho"], p["sigma"],
                                        p["grid_resolution"])
        sh = p["sigma_hat"] or p["sigma"]
        und = lemmas.underestimation_alphas(cont.level, p["K_phi"], sh)
    except ValueError as exc:
        raise ConfigError(f"lemma: {exc}") from None
    R = p["epsilon"] + p["rho"]
    band = geometry.Band(ctx.attractor, sh, R)
    Y = geometry.sample_band(band, ctx.samples, ctx.seed, workers=ctx.workers)
    D = ctx.attractor.distance(Y)
    f = np.asarray(phi(Y, D), dtype=float)
    quad = float(np.min(f - und.alpha_q * p["K_phi"] * D ** 2))
    lin = float(np.min(f - und.alpha_l * p["K_phi"] * D))
    ok = cont.certified and quad >= -1e-9 and lin >= -1e-9
    ray = _ray(ctx.attractor, np.linspace(0.0, p["sigma"], 401))
    dist = ctx.attractor.distance(ray)
    vals = np.asarray(phi(ray, dist), dtype=float)
    write_csv(out("csv"), ["d", "phi", "in_sublevel"],
              zip(dist, vals, vals <= cont.level))
    summary = {"subcommand": "lemma-b", "config": ctx.cfg, "containment": cont.to_dict(),
               "underestimation": und.to_dict(),
               "band_check": {"samples": len(Y), "quadratic_margin": quad,
                              "linear_margin": lin}}
    verdict = (f"lemma-b: {'PASS' if ok else 'FAIL'} level={cont.level:.6g} l1={cont.l1:.6g} "
               f"l2={cont.l2:.6g} certified={cont.certified} alpha_q={und.alpha_q:.6g} "
               f"alpha_l={und.alpha_l:.6g}")
    return summary, ok, verdict


COMMANDS = {"verify": cmd_verify, "certify": cmd_certify, "budget": cmd_budget,
            "robust": cmd_robust, "simulate": cmd_simulate, "spas": cmd_spas,
            "lemma-b": cmd_lemma_b}


# -- entry point -------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="spsplab", description="SPSP certification experiments")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("config", help="YAML experiment file")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="PATH=VALUE", help="override a config leaf by dotted path")
    ap.add_argument("--output", help="output directory")
    ap.add_argument("--workers", type=int, default=1)
    return ap


def run(subcommand, config, overrides=(), output=None, workers=1, stream=None):
    """Run one subcommand; returns the exit code."""
    stream = stream or sys.stdout
    try:
        cfg = load_config(config, overrides)
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        ctx = Context(cfg, workers)
        outdir = (output or cfg["output"]["directory"] or os.environ.get(ENV_OUTPUT)
                  or "spsplab-out")
        os.makedirs(outdir, exist_ok=True)
        stem = os.path.join(outdir, cfg["name"] + "-" + subcommand if cfg["name"] else subcommand)
        paths = {"json": stem + ".json", "csv": stem + ".csv"}
        summary, ok, verdict = COMMANDS[subcommand](ctx, paths.get)
        summary["verdict"] = "pass" if ok else "fail"
        write_json(paths["json"], summary)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"{subcommand}: {exc}", file=stream)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 3
    print(verdict if ok else f"{verdict} (details: {paths['json']}, {paths['csv']})",
          file=stream)
    return 0 if ok else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.overrides, args.output, args.workers)


if __name__ == "__main__":
    sys.exit(main())
