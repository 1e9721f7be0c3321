"""Monotone transport lab: canonical discrete transport matchings
(cyclically monotone, quantile-preserving, Knothe-Rosenblatt), numerical
monotonicity checkers, and structural-counterfactual couplings.
"""

from .measures import (DiscreteMeasure, Support1DView, load_measure, measure,
                       pushforward, quantile_1d, save_measure,
                       spherical_uniform_sample, support_1d, uniform_grid)
from .ot import (Assignment, CostSpec, CouplingPlan, barycentric_projection,
                 brute_force_assignment, cost_matrix, sinkhorn_plan,
                 solve_assignment)
from .matchings import (DiscreteMatching, cm_map, compose, identity_matching,
                        invert, kr_map, kr_via_eps, matching_cost,
                        matching_family, qp_map)
from .checks import (PointMap, PropertyReport, check_comonotone_1d,
                     check_cyclically_comonotone, check_cyclically_monotone,
                     check_diagonal_nondecreasing, check_diagonally_comonotone,
                     check_family_algebra, check_gradient_field,
                     check_triangular, jacobian_sparsity)
from .dsl import classify_mechanism, parse_expression, parse_scm, scm_to_text
from .scm import (ExogenousSpec, InterventionSpec, Mechanism, Scm,
                  counterfactual_family, counterfactual_map,
                  counterfactual_point, counterfactual_sample_matching,
                  interventional_sample, intervene, kr_scm_from_marginals,
                  linear_counterfactual, load_scm, recover_noise,
                  scm_from_equations, solve_forward, subsolution_map, validate)
from .errors import (DslSyntaxError, EvaluationError, FormatError, MtlError,
                     SolverError, ValidationError)

__version__ = "0.1.0"
