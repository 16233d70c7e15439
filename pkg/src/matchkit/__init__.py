"""School-choice matching mechanisms, audits, simulation and preference
estimation."""

__version__ = "0.1.0"

from .core import (
    MTB,
    STB,
    UNASSIGNED,
    CutoffVector,
    Economy,
    Lottery,
    Matching,
    draw_lottery,
    pareto_dominates,
    validate_economy,
    validate_matching,
)
