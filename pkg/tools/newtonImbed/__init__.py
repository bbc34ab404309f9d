"""
Newton-imbedding Tool

Solves -Delta u = f(u) with zero boundary values by marching -Delta u = t f(u)
from t = 0 to t = 1 with Newton's method at every step, and provides the mesa
and bump probes for the composition map u -> f(u).
"""

from .grid import DomainSpec, Grid, Field, norm_lp, norm_h1, norm_h2
from .elliptic import LinearProblem, solve_linear
from .nonlinearity import make_arccot, make_heaviside_approx, parse_nonlinearity, check_assumptions
from .homotopy import NewtonConfig, Schedule, run, estimate_constants
from .analysis import MesaSpec, build_partition, mesa_h1_norm_sq, membership_verdict

__version__ = "0.1.0"
__all__ = [
    "DomainSpec", "Grid", "Field", "norm_lp", "norm_h1", "norm_h2",
    "LinearProblem", "solve_linear",
    "make_arccot", "make_heaviside_approx", "parse_nonlinearity", "check_assumptions",
    "NewtonConfig", "Schedule", "run", "estimate_constants",
    "MesaSpec", "build_partition", "mesa_h1_norm_sq", "membership_verdict",
]
