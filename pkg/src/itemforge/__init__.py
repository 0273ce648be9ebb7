"""Constraint-controlled generation of multiple-choice reading items.

Role-specialized generation agents revise drafts in a closed evaluate,
plan, revise loop until every feature constraint holds, and sequences of
constraint sets are calibrated into monotone difficulty levels through
symmetric pairwise comparisons.
"""

from .core import (
    CefrBand,
    DifficultyPreset,
    Factuality,
    FeatureConstraintSet,
    Item,
    ItemState,
    Stage,
    WordLevel,
    band_of,
    constraint_count,
)
from .calibration import builtin_preset

__version__ = "0.1.0"

__all__ = [
    "CefrBand",
    "DifficultyPreset",
    "Factuality",
    "FeatureConstraintSet",
    "Item",
    "ItemState",
    "Stage",
    "WordLevel",
    "band_of",
    "builtin_preset",
    "constraint_count",
    "__version__",
]
