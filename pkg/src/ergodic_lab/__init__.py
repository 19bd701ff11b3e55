"""Numerical laboratory for ergodic BSDEs driven by weakly dissipative, reflected diffusions."""
from .bsde import BSDEConfig, DiscountedSolution, RegressionError, solve_discounted
from .control import (CostReport, FeedbackPolicy, build_hamiltonian, ergodic_cost,
                      ergodic_cost_girsanov, feedback_policy, make_control)
from .domain import ConvexDomain, beta, make_domain, penalization_drift
from .ergodic import (ErgodicSolution, LambdaConvergenceWarning, check_lambda_uniqueness,
                      ebsde_residual, richardson, vanishing_discount)
from .mixing import MixingReport, estimate_semigroup_gap
from .model import ControlSpec, DriverSpec, ModelSpec, make_driver, make_model
from .pde import (EllipticityError, NewtonDivergence, PDEError, PDEResult,
                  solve_discounted_pde, solve_ergodic_pde)
from .sde import (PathBundle, SimConfig, estimate_moments, simulate_penalized,
                  simulate_reflected, simulate_unreflected)

__version__ = "0.1.0"
