"""Gibbsian routeing in dense multihop networks: samplers, exact oracles and variational solvers."""

from .domain import (Grid, GridMeasure, GridMeasureK, IntensityDensity, PointConfig, Window, build_grid,
                     coarsen, sample_ppp)
from .energy import CongestionPenalty, HopEnergies, Trajectory, TrajectoryConfig
from .gibbs import BudgetExceeded, ModelParams, exact_gibbs, factorized_log_partition_beta0
from .kernel import HopKernel, hop_kernel
from .empirical import TrajectorySetting, bl_distance, setting_distance, trajectory_setting_of
from .variational import check_admissible, eval_functionals, eval_J
from .minimizer import poisson_mum, solve_beta0, solve_C_fixed_point
from .combinatorics import brute_force_class_count, count_terms, rate_comparison
from .mcmc import AnnealSchedule, run_chain

__all__ = [
    "AnnealSchedule", "BudgetExceeded", "CongestionPenalty", "Grid", "GridMeasure", "GridMeasureK",
    "HopEnergies", "HopKernel", "IntensityDensity", "ModelParams", "PointConfig", "Trajectory",
    "TrajectoryConfig", "TrajectorySetting", "Window", "bl_distance", "brute_force_class_count",
    "build_grid", "check_admissible", "coarsen", "count_terms", "eval_J", "eval_functionals",
    "exact_gibbs", "factorized_log_partition_beta0", "hop_kernel", "poisson_mum", "rate_comparison",
    "run_chain", "sample_ppp", "setting_distance", "solve_C_fixed_point", "solve_beta0",
    "trajectory_setting_of",
]
