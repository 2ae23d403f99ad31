"""Perception-based beliefs for POMDP planning."""

from .belief import (
    EVIDENCE_FLOOR,
    EmptyPoolError,
    UncertaintyMode,
    UpdateResult,
    lift_vision_dist,
    multiplicative_pool,
    pbp_update,
    uncertainty_aware_update,
)
from .model import (
    Belief,
    EmptyBeliefError,
    InvalidActionError,
    ModelError,
    StateVar,
    VPomdpModel,
    mdp_value_iteration,
    propagate,
    standard_belief_update,
)
from .perception import (
    PerceptionOutput,
    PerceptionTable,
    SyntheticChannelSpec,
    VisionDataset,
    apply_tuq,
    apply_wuq,
    synthesize_channel,
    uncertainty_confidence,
    uncertainty_entropy,
)
from .planning_model import (
    CoverageError,
    EstimatedVisionObs,
    PlanningModel,
    build_planning_model,
    estimate_vision_obs_fn,
)

__all__ = [
    "Belief",
    "CoverageError",
    "EVIDENCE_FLOOR",
    "EmptyBeliefError",
    "EmptyPoolError",
    "EstimatedVisionObs",
    "InvalidActionError",
    "ModelError",
    "PerceptionOutput",
    "PerceptionTable",
    "PlanningModel",
    "StateVar",
    "SyntheticChannelSpec",
    "UncertaintyMode",
    "UpdateResult",
    "VPomdpModel",
    "VisionDataset",
    "apply_tuq",
    "apply_wuq",
    "build_planning_model",
    "estimate_vision_obs_fn",
    "lift_vision_dist",
    "mdp_value_iteration",
    "multiplicative_pool",
    "pbp_update",
    "propagate",
    "standard_belief_update",
    "synthesize_channel",
    "uncertainty_aware_update",
    "uncertainty_confidence",
    "uncertainty_entropy",
]

__version__ = "0.1.0"
