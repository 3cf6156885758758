"""Optimal experimental designs through second-order cone programming."""

__version__ = "0.1.0"

from .bnb import BnBConfig, BnBResult, PairSymmetry, block_design_epsilon, solve_misocp
from .criteria import Criterion, compile_criterion, evaluate_fixed, solve_criterion
from .estimator import ExchangeDesign, OptimalDesign
from .heuristics import ExchangeConfig, kl_exchange
from .oracle import efficiency, kiefer_wolfowitz_certificate, phi_direct
from .workbench import DesignProblem, ObservationModel, WeightDomain

__all__ = [
    "BnBConfig", "BnBResult", "PairSymmetry", "block_design_epsilon", "solve_misocp",
    "Criterion", "compile_criterion", "evaluate_fixed", "solve_criterion",
    "ExchangeDesign", "OptimalDesign", "ExchangeConfig", "kl_exchange",
    "efficiency", "kiefer_wolfowitz_certificate", "phi_direct",
    "DesignProblem", "ObservationModel", "WeightDomain",
]
