"""
Linear solver for -Delta u + q u = g with homogeneous Dirichlet boundary.

The discrete operator A = -Delta_h + diag(q) is symmetric positive definite in
the grid's weighted inner product whenever q >= 0, and is solved matrix-free
with (optionally Jacobi-preconditioned) conjugate gradients.
"""

from dataclasses import dataclass, field
from typing import List, Optional
import logging
import math

import numpy as np

from .grid import Field, Grid, laplacian, laplacian_diagonal, norm_h1, norm_h2, norm_lp

logger = logging.getLogger(__name__)

DEFAULT_LINEAR_TOL = 1e-10
ABSOLUTE_TOL_FALLBACK = 1e-14
MAX_RESTARTS = 3
PRECONDITIONERS = (None, "jacobi")


class NonConvergence(RuntimeError):
    """CG reached its iteration cap before meeting the tolerance."""

    def __init__(self, message: str, residual_history: List[float]):
        super().__init__(message)
        self.residual_history = residual_history


class NegativeCoefficient(ValueError):
    """The zeroth-order coefficient q is negative somewhere (f' > 0 upstream)."""

    def __init__(self, min_value: float, count: int):
        super().__init__(
            f"Coefficient q is negative at {count} node(s) (min {min_value:.6g}); "
            f"the nonlinearity must satisfy -f' > 0"
        )
        self.min_value = min_value
        self.count = count


@dataclass(frozen=True, eq=False)
class LinearProblem:
    """-Delta u + q u = g on ``q.grid``."""

    q: Field
    g: Field

    def __post_init__(self):
        if self.q.grid != self.g.grid:
            raise ValueError("q and g must live on the same grid")

    @property
    def grid(self) -> Grid:
        return self.q.grid


@dataclass
class SolveReport:
    solution: Field
    cg_iterations: int
    final_residual: float
    h1_norm: float
    h2_norm: float
    g_l2_norm: float
    residual_history: List[float] = field(default_factory=list, repr=False)

    @property
    def regularity_ratio(self) -> float:
        """||u||_H2 / ||g||_L2, the observed constant of the regularity estimate."""
        if self.g_l2_norm == 0:
            return 0.0
        return self.h2_norm / self.g_l2_norm


def default_max_iter(grid: Grid) -> int:
    return 10 * grid.size + 100


def operator_apply(q: Field, u: Field) -> Field:
    """-Delta_h u + q u."""
    return -laplacian(u) + q * u


def _check_coefficient(q: Field):
    negative = q.values < 0
    if np.any(negative):
        raise NegativeCoefficient(float(q.values.min()), int(negative.sum()))


def solve_linear(
    problem: LinearProblem,
    tol: float = DEFAULT_LINEAR_TOL,
    max_iter: Optional[int] = None,
    initial_guess: Optional[Field] = None,
    preconditioner: Optional[str] = None,
) -> SolveReport:
    """
    Solve the linear boundary value problem by conjugate gradients.

    Args:
        problem: coefficient q >= 0 and right-hand side g on one grid
        tol: relative residual ||A u - g|| / ||g|| to reach (discrete L2)
        max_iter: total CG iteration cap (default 10 * unknowns + 100)
        initial_guess: starting iterate, zero by default
        preconditioner: None or "jacobi"

    Returns:
        SolveReport with the solution and its H1/H2 norms

    Raises:
        NegativeCoefficient: if any node of q is negative
        NonConvergence: if the cap is reached first
    """
    if not tol > 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    if preconditioner not in PRECONDITIONERS:
        raise ValueError(f"Unknown preconditioner {preconditioner!r}")
    _check_coefficient(problem.q)

    grid = problem.grid
    q, g = problem.q.values, problem.g.values
    max_iter = default_max_iter(grid) if max_iter is None else int(max_iter)
    g_norm = math.sqrt(grid.inner(g, g))

    if g_norm == 0.0:
        zero = Field.zeros(grid)
        return SolveReport(zero, 0, 0.0, 0.0, 0.0, 0.0, [0.0])

    target = max(tol * g_norm, ABSOLUTE_TOL_FALLBACK)
    inverse_diag = None
    if preconditioner == "jacobi":
        inverse_diag = 1.0 / (laplacian_diagonal(grid) + q)

    def apply(values):
        return operator_apply(problem.q, Field(grid, values)).values

    x = np.zeros(grid.shape) if initial_guess is None else initial_guess.values.copy()
    history = []
    iterations = 0
    for _ in range(MAX_RESTARTS + 1):
        r = g - apply(x)
        r_norm = math.sqrt(grid.inner(r, r))
        history.append(r_norm / g_norm)
        if r_norm <= target:
            break
        z = r if inverse_diag is None else inverse_diag * r
        p = z.copy()
        rz = grid.inner(r, z)
        while r_norm > target and iterations < max_iter:
            ap = apply(p)
            alpha = rz / grid.inner(p, ap)
            x += alpha * p
            r -= alpha * ap
            z = r if inverse_diag is None else inverse_diag * r
            rz_next = grid.inner(r, z)
            p = z + (rz_next / rz) * p
            rz = rz_next
            r_norm = math.sqrt(grid.inner(r, r))
            history.append(r_norm / g_norm)
            iterations += 1
        if iterations >= max_iter:
            break
        # the recursive residual drifts from the true one; re-check and restart from x

    true_residual = g - apply(x)
    relative = math.sqrt(grid.inner(true_residual, true_residual)) / g_norm
    if relative * g_norm > target:
        raise NonConvergence(
            f"CG did not reach relative residual {tol:g} in {iterations} iterations "
            f"(last {relative:.3e})",
            history,
        )

    solution = Field(grid, x)
    logger.debug(f"CG converged in {iterations} iterations, relative residual {relative:.3e}")
    return SolveReport(
        solution=solution,
        cg_iterations=iterations,
        final_residual=relative,
        h1_norm=norm_h1(solution),
        h2_norm=norm_h2(solution),
        g_l2_norm=norm_lp(problem.g, 2),
        residual_history=history,
    )
