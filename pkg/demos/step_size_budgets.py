"""How large a step each budget allows, and what happens when it is exceeded.

Run: python3 demos/step_size_budgets.py
"""

from spsplab.dynamics import check_spas_conditions
from spsplab.lemmas import budget_lipschitz, containment_level
from spsplab.oracles import gradient_oracle
from spsplab.problems import builtin, make_lyapunov
from spsplab.spsp import gradient_norm_certificate

f, A = builtin("quadratic")
V = make_lyapunov("squared-distance", A)
phi = gradient_norm_certificate(f).phi
sigma, eps, rho, b_o = 2.0, 0.0, 1.0, 0.1

c = containment_level(phi, A, eps, rho, sigma).level
print(f"containment level c = {c:.4f}")
budget = budget_lipschitz(0.5, f.lipschitz_grad, 0.0, 0.0, c, sigma, eps, rho, b_o)
print(f"alpha_max = {budget.alpha_max:.4f} (binding: {budget.binding})")

for scale in (1.0, 4.0, 10.0):
    alpha = scale * budget.alpha_max
    rep = check_spas_conditions(V, gradient_oracle(f), None, sigma, eps, rho, alpha, b_o,
                                budget.W(alpha), samples=4000)
    print(f"  {scale:>4}x  alpha={alpha:.3f}  P1={rep.p1} P2={rep.p2} P3={rep.p3}")
