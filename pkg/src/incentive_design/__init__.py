"""Minimum-cost incentive design for finite-horizon replanning agents."""

from .mdp import (
    ABSORB,
    DecisionRule,
    Mdp,
    OccupancyProfile,
    Policy,
    Residence,
    StatePartition,
    Violation,
    expected_residence,
    make_absorbing,
    occupancy_profile,
    partition_states,
    policy_cost,
    reach_probability,
    validate_model,
)
from .scltl import Dfa, parse_scltl, to_dfa
from .lifting import ExpandedMdp, ProductMdp, expand, product
from .pipeline import SynthesisResult, synthesize

__all__ = [
    "ABSORB",
    "DecisionRule",
    "Dfa",
    "ExpandedMdp",
    "Mdp",
    "OccupancyProfile",
    "Policy",
    "ProductMdp",
    "Residence",
    "StatePartition",
    "SynthesisResult",
    "Violation",
    "expand",
    "expected_residence",
    "make_absorbing",
    "occupancy_profile",
    "parse_scltl",
    "partition_states",
    "policy_cost",
    "product",
    "reach_probability",
    "synthesize",
    "to_dfa",
    "validate_model",
]
