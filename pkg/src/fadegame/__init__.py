"""Power-allocation games on fast-fading Gaussian interference channels."""

from .channel import ChannelModel, InfoIndexer, Variant, build_indexer, enumerate_states
from .bayes import BayesParams, PowerLevels, epsilon_ne_check, simulate
from .pareto import AugLagParams, SocialObjective, solve_bargaining, solve_pareto
from .policy import PolicyProfile, PowerPolicy, ProjectionMode, project, water_fill
from .rates import grad_rate, rate, rates, set_log_base
from .vi import SolveParams, classify_monotonicity, solve_ne, verify_ne

__all__ = [
    "AugLagParams",
    "BayesParams",
    "ChannelModel",
    "PowerLevels",
    "SocialObjective",
    "SolveParams",
    "classify_monotonicity",
    "epsilon_ne_check",
    "grad_rate",
    "rate",
    "rates",
    "set_log_base",
    "simulate",
    "solve_bargaining",
    "solve_ne",
    "solve_pareto",
    "verify_ne",
    "InfoIndexer",
    "PolicyProfile",
    "PowerPolicy",
    "ProjectionMode",
    "Variant",
    "build_indexer",
    "enumerate_states",
    "project",
    "water_fill",
]

__version__ = "0.1.0"
