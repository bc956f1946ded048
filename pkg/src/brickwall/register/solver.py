"""Shared damped Gauss-Newton machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SolverConfig:
    pose_change_tol: float = 5e-8
    cost_change_tol: float = 1e-6
    max_iterations: int = 20
    damping_init: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 10.0
    max_damping_tries: int = 12

    def __post_init__(self):
        if self.pose_change_tol <= 0 or self.cost_change_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def damped_step(A: np.ndarray, g: np.ndarray, mu: float) -> np.ndarray:
    """Solve ``(A + mu * s * I) delta = -g`` with ``s = trace(A) / n``.

    The isotropic scale keeps the step covariant under rotations of the
    parameter blocks, unlike per-diagonal scaling.
    """
    n = len(g)
    s = np.trace(A) / n if n else 1.0
    if s <= 0:
        s = 1.0
    M = A + mu * s * np.eye(n)
    try:
        return -np.linalg.solve(M, g)
    except np.linalg.LinAlgError:
        return -np.linalg.lstsq(M, g, rcond=None)[0]
