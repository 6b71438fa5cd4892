"""Incentive-aware repeated allocation under long-term cost constraints."""

from .agents import ConstantShift, QLearner, QLearningParams, QTable, Truthful, make_policy
from .duals import (FTRLUpdater, LossHistory, OFTRLFPUpdater, UpdaterParams, ZeroUpdater, ftrl_dual,
                    ftrl_regret_bound, predicted_gradient, solve_oftrlfp, vanilla_dual_step)
from .harness import (ExperimentPlan, MechanismSpec, TrialTrace, compare, fixed_point_diagnostics,
                      run_experiment, run_trial)
from .kernels import BACKEND
from .market import (ConfigError, EpochSchedule, InvalidScheduleError, MarketConfig, build_epoch_schedule,
                     clip_to_dual_region, reference_market, parse_schedule, sample_market, stream)
from .mechanism import (IncentiveAwareMechanism, VanillaPrimalDual, decide_round, exploration_allocate,
                        safety_check, standard_allocate)
from .metrics import ExperimentSummary, offline_optimal, regret, summarize, trial_metrics, violation

__version__ = "0.1.0"
