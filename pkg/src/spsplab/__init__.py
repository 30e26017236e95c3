"""Certify and test strictly pseudogradient search directions for projected iterations."""

from .dynamics import (check_descent_lemma, check_spas_conditions, certify_spas, iterate,
                       IterationError, SpasReport, TrajectoryRecord)
from .geometry import (Affine, Ball, Band, Box, ConvexSet, Halfspace, Intersection,
                       ProjectionError, WholeSpace, point, sample_band)
from .lemmas import (budget_bounded, budget_growth, budget_lipschitz, containment_level,
                     robustness_margins, underestimation_alphas, ultimate_radius)
from .oracles import (ErrorModel, finite_difference_oracle, gradient_oracle, perturb,
                      subgradient_oracle, weighted_gradient_oracle)
from .problems import builtin, make_lyapunov
from .spsp import (SpspCertificate, certify_convex, certify_linear_objective,
                   certify_strongly_convex, classify_polyak, verify)

__version__ = "0.1.0"
