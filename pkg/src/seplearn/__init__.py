"""Separated learning and control for linear systems with an imperfect model.

A strategy is synthesized offline on the model, with the unknown plant's
expected trajectory left as parameter slots. Online, paired model/plant runs
learn the plant's conditional-mean response, which is then bound into the
strategy.
"""
from . import backend
from .errors import (AlreadyBound, ConfigError, DimensionMismatch, EmptyDensity, HorizonMismatch,
                     IndexOutOfHorizon, LengthMismatch, NonConvergence, NumericalFailure, RankDeficient,
                     SeplearnError, SingularNormalEquations, SingularObservationCov, SingularRiccati)
from .estimator import (BeliefMixture, GaussianBelief, InformationState, OutputDensityEstimate,
                        ResponseRegressor, factorize, filter_gains, info_state_update,
                        initial_information_state, kalman_init, kalman_step, learn_output_density)
from .lti import (Dims, EpisodeRecord, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem,
                  discrepancy_penalty, observe, problem1_cost, problem2_cost, step_model, step_plant,
                  validate_system)
from .sim import (MonteCarloReport, RngStreamSpec, closed_loop_learn, draw_primitives, run_episode,
                  run_monte_carlo)
from .solver import (CostReport, PlantResponse, SeparatedStrategy, StrategyParameterization,
                     bind_parameters, evaluate_strategy, export_strategy, import_strategy, lqr_gains,
                     matching_strategy, model_lqg, paired_riccati, solve_tracking_lq)

__version__ = "0.1.0"
