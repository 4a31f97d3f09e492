"""Numerical laboratory for BDSDEs with polynomial-growth drift and their SPDEs."""

from .coefficients import CoefficientSet
from .conditions import ConditionReport, Sampler, check_conditions
from .forward import FlowPanel, euler_maruyama_flow, flow_composition_check
from .ladders import LadderReport, drift_ladder, noise_dimension_ladder
from .malliavin import (MalliavinPanel, bump_oracle, compactness_diagnostics,
                        solve_malliavin_linearized)
from .noise import (NoisePath, TimeGrid, apply_shift, backward_ito_integral,
                    reverse_time, sample_qwiener, sample_two_sided, sample_w_increments)
from .regression import RegressionBasis
from .solver import (SolutionPanel, SolverConfig, flow_identity_check,
                     representation_field, solve_bdsde_lsmc)
from .spde import (FieldSequence, correspondence_error, default_battery,
                   forward_from_backward, solve_backward_spde_fd, weak_form_residual)
from .stationary import (PullbackSeries, check_discount_condition, pullback_experiment,
                         solve_infinite_horizon, stationarity_test)
from .truncation import TruncatedDrift, project_pi, truncate_drift_eval, \
    verify_truncation_conditions
from .weights import (DiscountedNormSpec, SpatialGrid, WeightSpec, discounted_path_norm,
                      equivalence_of_norm_ratio, rho_weight, weighted_lp_norm)

__version__ = "0.1.0"
