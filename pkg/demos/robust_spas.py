"""Perturb an exact gradient, re-certify it, and watch the iterates settle.

The smaller the gain, the tighter the ball the iterates end up in.
Run: python3 demos/robust_spas.py   (about a minute)
"""

from spsplab.dynamics import certify_spas
from spsplab.lemmas import budget_bounded, containment_level, practical_radius, robustness_margins
from spsplab.oracles import ErrorModel, gradient_oracle, perturb
from spsplab.problems import builtin, make_lyapunov
from spsplab.spsp import strong_convexity_certificate

f, A = builtin("strongly-convex-quadratic", {"eigenvalues": [1.0, 2.0]})
V = make_lyapunov("squared-distance", A)
eps_hat, sigma = 0.5, 2.0

base = strong_convexity_certificate(1.0)
level = containment_level(base.phi, A, 0.0, eps_hat, sigma).level
m = robustness_margins(level, sigma, 1.0, 0.0, eps_hat)
print(f"error margins: a < {m.a_max:.4g}, r < {m.r_max:.4g}")

a, r = m.a_max / 2, m.r_max / 2
oracle = perturb(gradient_oracle(f), ErrorModel(a, r, "worst-case"), A, V)
robust = m.certificate(a, r)
B = f.lipschitz_grad * sigma + a + r * sigma


def budget_for(R):
    lvl = containment_level(robust.phi, A, eps_hat, R - eps_hat, sigma, sigma / 150).level
    return budget_bounded(0.5, B, robust.b, lvl, sigma, eps_hat, R - eps_hat, 0.1)


top = budget_for(1.0).alpha_max
grid = [top * k for k in (1.0, 0.6)]
radius = {al: practical_radius(al, budget_for, eps_hat, 1.0, 1e-4)[2] for al in grid}
for rep in certify_spas(oracle, None, A, grid, sigma=sigma, rho_a=radius.get, rho_s=1.0,
                        trials=16, horizon=8000):
    print(f"alpha={rep.alpha:.3g}: rho_a={rep.rho_a:.3f} T={rep.T_found} "
          f"largest final distance {rep.tail_radius:.3f} certified={rep.certified}")
