"""Shared Newton-solve configuration and backtracking line search."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SolverConfig:
    max_iterations: int = 50
    # gradient tolerance = grad_tol_scale * sum(mass diagonal); callers with
    # no mass scale pass an absolute tolerance instead
    grad_tol_scale: float = 1e-6
    rel_decrease_tol: float = 1e-10
    armijo_c: float = 1e-4
    max_line_search_steps: int = 40


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_norm: float
    objective: float
    message: str = ""


class SolverFailure(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def backtracking_line_search(objective, x, fx, direction, slope, cfg: SolverConfig):
    """Armijo backtracking with step halving.

    Returns (x_new, f_new, step) or None when no acceptable step was found.
    slope is the directional derivative g . d (must be negative).
    """
    step = 1.0
    for _ in range(cfg.max_line_search_steps):
        x_new = x + step * direction
        f_new = objective(x_new)
        if f_new <= fx + cfg.armijo_c * step * slope:
            return x_new, f_new, step
        step *= 0.5
    return None
