"""Rare-event estimation for stochastic reaction networks by importance sampling
with controls derived from a Markovian projection of the network."""

from .estimators import EstimatorReport, IndicatorObservable, mc_estimate, merge_reports, plan_tolerance
from .hjb import HJBConfig, SigmoidFinal, ValueFunctionGrid, dp_value_oracle, solve_hjb_backward
from .importance import CrudePolicy, ScaledPolicy, is_mc_estimate, likelihood_step
from .network import ReactionNetwork, preset
from .projection import MPModel, Projection, fit_mp
from .simulate import RngStream, TimeGrid, ssa_exact_path, tau_leap_path

__version__ = "0.1.0"

__all__ = [
    "CrudePolicy", "EstimatorReport", "HJBConfig", "IndicatorObservable", "MPModel", "Projection",
    "ReactionNetwork", "RngStream", "ScaledPolicy", "SigmoidFinal", "TimeGrid", "ValueFunctionGrid",
    "dp_value_oracle", "fit_mp", "is_mc_estimate", "likelihood_step", "mc_estimate",
    "merge_reports", "plan_tolerance", "preset", "solve_hjb_backward", "ssa_exact_path",
    "tau_leap_path",
]
