"""Differentially private contextual MNL bandits."""
from .accountant import PrivacyLedger, ZcdpBudget, EpsDeltaBudget
from .mnl import RoundContext, best_assortment, choice_probabilities
from .policy import DPMNL, PolicyConfig, compute_T0, compute_confidence_width

__version__ = "0.1.0"
__all__ = [
    "DPMNL", "EpsDeltaBudget", "PolicyConfig", "PrivacyLedger", "RoundContext", "ZcdpBudget",
    "best_assortment", "choice_probabilities", "compute_T0", "compute_confidence_width",
]
