"""Scan-to-model alignment: preprocessing, rough ICP and joint per-brick refinement."""

from .multi import (
    AlignmentResult,
    BrickModel,
    CorrespondenceParams,
    MultiBrickProblem,
    contact_pairs,
    jacobian_check,
    objective,
    solve_multi_brick,
)
from .pipeline import align_to_pile, build_multi_problem, model_clouds, register_pile
from .preprocess import preprocess_scan
from .rough import RoughAlignConfig, rough_align
from .solver import SolverConfig, damped_step

__all__ = [
    "AlignmentResult", "BrickModel", "CorrespondenceParams", "MultiBrickProblem", "contact_pairs",
    "jacobian_check", "objective", "solve_multi_brick", "align_to_pile", "build_multi_problem", "model_clouds", "register_pile",
    "preprocess_scan", "RoughAlignConfig", "rough_align", "SolverConfig", "damped_step",
]
