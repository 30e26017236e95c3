"""Build closed-form certificates for a few problems and check them by sampling.

Run: python3 demos/certificate_tour.py
"""

from spsplab.oracles import ErrorModel, gradient_oracle, perturb, subgradient_oracle
from spsplab.problems import builtin, make_lyapunov
from spsplab.spsp import (certify_convex, certify_linear_objective, certify_strongly_convex,
                          verify)

# A strongly convex quadratic with a biased, relatively noisy gradient.
f, A = builtin("strongly-convex-quadratic", {"eigenvalues": [1.0, 4.0]})
V = make_lyapunov("squared-distance", A)
cert = certify_strongly_convex(1.0, 0.2, 0.3)
print("strongly convex:", cert.classification, f"eps={cert.epsilon:.3f} b={cert.b:.4f}")
noisy = perturb(gradient_oracle(f), ErrorModel(0.2, 0.3), A, V)
print("  sampled check:", verify(noisy, V, cert, samples=5000).passed)

# Too much relative error and no certificate exists.
print("  r too large ->", certify_strongly_convex(1.0, 0.2, 0.6).violated)

# A sharp minimum: the error can be absorbed without any practical slack.
f, A = builtin("norm-cone", {"c": 2.0})
V = make_lyapunov("squared-distance", A)
cert = certify_linear_objective(2.0, 0.5, 0.1, 10.0)
o = perturb(subgradient_oracle(f), ErrorModel(0.5, 0.1), A, V)
print("norm cone:", cert.classification, "verified:", verify(o, V, cert, samples=5000).passed)

# A piecewise-linear objective: all four parameters are in play.
f, A = builtin("max-affine")
V = make_lyapunov("squared-distance", A)
cert = certify_convex(f, A, 0.02, 0.005, 5.0)
o = perturb(subgradient_oracle(f), ErrorModel(0.02, 0.005), A, V)
rep = verify(o, V, cert, samples=5000)
print("max-affine:", cert.classification, f"eps={cert.epsilon:.4f}", "verified:", rep.passed,
      f"worst margin {rep.min_margin:.2e}")
