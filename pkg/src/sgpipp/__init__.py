"""Informative path planning with sparse Gaussian processes."""

from .env import Environment, Path, make_rng, path_length, resample_path, sample_uniform
from .errors import DegeneratePath, InfeasibleConstraint, InvalidArgument, IPPError, NumericalFailure, ResourceLimit
from .evaluate import Field, evaluate_paths, gp_posterior, greedy_mi_placement, rmse, sample_gp_field
from .kernel import RbfKernel
from .penalties import PenaltyConfig
from .plan import PastData, PlanResult, plan_multi, plan_single
from .route import assign_waypoints, hungarian, tsp_order, vrp_routes
from .sgp import InducingPaths, ObjectiveConfig, SgpModel, continuous_sgp_placement, elbo, elbo_grad, optimize
from .transform import SensingModel, aggregation_matrix, block_aggregation

__all__ = [
    "DegeneratePath", "Environment", "Field", "IPPError", "InducingPaths", "InfeasibleConstraint",
    "InvalidArgument", "NumericalFailure", "ObjectiveConfig", "PastData", "Path", "PenaltyConfig",
    "PlanResult", "RbfKernel", "ResourceLimit", "SensingModel", "SgpModel", "aggregation_matrix",
    "assign_waypoints", "block_aggregation", "continuous_sgp_placement", "elbo", "elbo_grad",
    "evaluate_paths", "gp_posterior", "greedy_mi_placement", "hungarian", "make_rng", "optimize",
    "path_length", "plan_multi", "plan_single", "resample_path", "rmse", "sample_gp_field",
    "sample_uniform", "tsp_order", "vrp_routes",
]
__version__ = "0.1.0"
