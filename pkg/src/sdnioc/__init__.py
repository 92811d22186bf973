"""Inverse optimal control for linear-quadratic models with signal-dependent noise.

Forward problem: :func:`solve_gains` computes the agent's controller and
filter.  Inverse problem: :func:`log_likelihood_dataset` scores observed
trajectories and :func:`fit_mle` recovers cost parameters from them.
"""
from ._linalg import NumericalError
from .estimate import (Binding, FitError, FitResult, ParamSpec, apply_params, fit_mle,
                       minimize_dfo, neg_loglik_objective)
from .likelihood import (GaussianBelief, JointDynamics, build_joint_dynamics_full,
                         build_joint_dynamics_partial, condition_gaussian,
                         exact_plain_lqg_loglik, log_likelihood_dataset,
                         log_likelihood_trajectory, propagate_moment_matched, track_beliefs,
                         trajectory_moments)
from .metrics import (TimestepGaussianSummary, additive_noise_baseline, analytic_summary,
                      empirical_summary, fit_convergence_rate, log_rmse, mean_skl_over_time,
                      symmetrized_kl)
from .model import (ConfigError, CostModel, ExperimenterObservationModel, GainSchedule,
                    SystemModel, ValidationReport, fingerprint, load_model, save_model,
                    validate_model)
from .problems import (RandomProblemParams, ReachingParams, SaccadeParams, position_only,
                       random_problem, reaching_model, saccade_model, sample_lkj_cholesky)
from .simulate import (Trajectory, TrajectoryDataset, load_dataset_csv, rollout, rollout_batch,
                       save_dataset_csv)
from .solver import backward_pass, expected_cost, forward_pass, solve_gains

__version__ = "0.1.0"
