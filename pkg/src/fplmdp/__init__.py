"""Follow-the-perturbed-leader learners for adversarial MDPs with known dynamics."""
from .errors import *  # noqa: F401,F403
from .graph import AdmdpGraph, ClosedWalk, build_admdp, compute_period, critical_length, path_of_length
from .cycle_opt import best_cycle_overall, solve_best_cycle
from .fpl import CycleFpl, LambdaMode, estimate_switch_probability
from .stochastic import (
    CatchingPlan,
    StochasticMdp,
    build_catching_plan,
    diameter,
    expected_policy_loss,
    hitting_time_pmf,
    policy_state_distribution,
)
from .learner_det import best_policy_in_hindsight, run
from .learner_stoch import PolicyFpl, expected_catch_time_stats, run_stochastic, switch_policy
from .learner_oracle import EnumerationOracle, OracleFpl, estimate_oracle_switch_probability, run_oracle
from .adversary import AdversarySpec, gen_lower_bound_instance, make_losses
from .experiment import fit_regret_slope, run_experiment
from .records import RunRecord

__version__ = "0.1.0"
