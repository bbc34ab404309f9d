"""
Nonlinearities f with their first two derivatives, and sampled checks of the
hypotheses the Newton-imbedding procedure needs: uniform bounds on f, f', f''
and strict decrease (-f' > 0).
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple
import logging
import math

import numpy as np

from .grid import Field

logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-5
DEFAULT_FD_RTOL = 1e-5
DEFAULT_SAMPLE_RANGE = (-1e6, 1e6)
DEFAULT_SAMPLES = 10_000

# max of 2s/(1+s^2)^2 over s, attained at s = 1/sqrt(3)
_ARCCOT_SECOND_PEAK = 3.0 * math.sqrt(3.0) / 16.0


def arccot(x):
    """Inverse cotangent with range (0, pi), continuous at 0."""
    return np.pi / 2.0 - np.arctan(x)


@dataclass(frozen=True)
class Nonlinearity:
    """f together with f', f'' (vectorized callables) and a claimed bound M."""

    f: Callable
    fp: Callable
    fpp: Callable
    bound_M: float
    name: str

    def value(self, u: Field) -> Field:
        return u.with_values(np.broadcast_to(self.f(u.values), u.values.shape))

    def slope(self, u: Field) -> Field:
        return u.with_values(np.broadcast_to(self.fp(u.values), u.values.shape))

    def curvature(self, u: Field) -> Field:
        return u.with_values(np.broadcast_to(self.fpp(u.values), u.values.shape))


@dataclass(frozen=True)
class ArccotFamily:
    """f(x) = A arccot((x - h)/eps) + k."""

    A: float
    h: float
    eps: float
    k: float

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError(f"Amplitude A must be positive, got {self.A}")
        if not self.eps > 0:
            raise ValueError(f"Width eps must be positive, got {self.eps}")

    def f(self, x):
        return self.A * arccot((np.asarray(x, dtype=float) - self.h) / self.eps) + self.k

    def fp(self, x):
        s = np.asarray(x, dtype=float) - self.h
        return -self.A * self.eps / (self.eps ** 2 + s ** 2)

    def fpp(self, x):
        s = np.asarray(x, dtype=float) - self.h
        return 2.0 * self.A * self.eps * s / (self.eps ** 2 + s ** 2) ** 2

    @property
    def bound(self) -> float:
        """Exact suprema of |f|, |f'|, |f''| combined."""
        return max(
            self.A * math.pi + abs(self.k),
            self.A / self.eps,
            2.0 * self.A * _ARCCOT_SECOND_PEAK / self.eps ** 2,
        )


def make_arccot(A: float, h: float, eps: float, k: float) -> Nonlinearity:
    family = ArccotFamily(A, h, eps, k)
    return Nonlinearity(
        f=family.f,
        fp=family.fp,
        fpp=family.fpp,
        bound_M=family.bound,
        name=f"arccot:{A:g},{h:g},{eps:g},{k:g}",
    )


def make_heaviside_approx(eps: float) -> Nonlinearity:
    """f_eps(x) = arccot(x/eps)/pi - 1, tending to 0 at -inf and -1 at +inf."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    nl = make_arccot(1.0 / math.pi, 0.0, eps, -1.0)
    return Nonlinearity(nl.f, nl.fp, nl.fpp, nl.bound_M, f"heaviside-approx:{eps:g}")


def make_constant(c: float) -> Nonlinearity:
    """f = c, f' = f'' = 0. Fails -f' > 0 but gives q = 0, which is accepted."""
    c = float(c)
    return Nonlinearity(
        f=lambda x: np.full(np.shape(x), c),
        fp=lambda x: np.zeros(np.shape(x)),
        fpp=lambda x: np.zeros(np.shape(x)),
        bound_M=max(abs(c), 1.0),
        name=f"const:{c:g}",
    )


def make_linear(mu: float) -> Nonlinearity:
    """f(x) = -mu x: decreasing but unbounded, the only solution is u = 0."""
    if not mu > 0:
        raise ValueError(f"Slope mu must be positive, got {mu}")
    mu = float(mu)
    return Nonlinearity(
        f=lambda x: -mu * np.asarray(x, dtype=float),
        fp=lambda x: np.full(np.shape(x), -mu),
        fpp=lambda x: np.zeros(np.shape(x)),
        bound_M=math.inf,
        name=f"linear:{mu:g}",
    )


def _floats(text: str, count: int, kind: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"Non-numeric parameters in {kind}:{text}")
    if len(values) != count:
        raise ValueError(f"{kind} expects {count} parameter(s), got {len(values)}")
    return values


def parse_nonlinearity(text: str) -> Nonlinearity:
    """Parse ``arccot:A,h,eps,k``, ``heaviside-approx:eps``, ``const:c`` or ``linear:mu``."""
    kind, _, params = text.partition(":")
    if kind == "arccot":
        return make_arccot(*_floats(params, 4, kind))
    if kind == "heaviside-approx":
        return make_heaviside_approx(*_floats(params, 1, kind))
    if kind == "const":
        return make_constant(*_floats(params, 1, kind))
    if kind == "linear":
        return make_linear(*_floats(params, 1, kind))
    raise ValueError(f"Unknown nonlinearity {text!r} (expected arccot, heaviside-approx, const or linear)")


@dataclass(frozen=True)
class Violation:
    assumption: str
    x: float
    detail: str


@dataclass
class AssumptionReport:
    name: str
    samples: int
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_assumption(self, assumption: str) -> List[Violation]:
        return [v for v in self.violations if v.assumption == assumption]

    def summary(self) -> str:
        if self.ok:
            return f"{self.name}: no violations in {self.samples} samples"
        counts = {}
        for v in self.violations:
            counts[v.assumption] = counts.get(v.assumption, 0) + 1
        parts = ", ".join(f"{k}: {n}" for k, n in sorted(counts.items()))
        return f"{self.name}: {len(self.violations)} violation(s) ({parts})"


def _sample_points(
    sample_range: Tuple[float, float], samples: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    lo, hi = sample_range
    points = np.linspace(lo, hi, samples)
    if rng is not None:
        points = np.concatenate((points, rng.uniform(lo, hi, samples)))
    extra = [lo, hi] + ([0.0] if lo <= 0.0 <= hi else [])
    return np.unique(np.concatenate((points, extra)))


def _derivative_mismatch(g, dg, x, step, rtol, scale):
    """Points where the central difference of g disagrees with dg.

    The allowed error is rtol*(|dg| + scale) plus twice the truncation term
    step^2/6 |g'''|, with g''' estimated from dg itself.
    """
    central = (g(x + step) - g(x - step)) / (2.0 * step)
    exact = dg(x)
    third = (dg(x + step) - 2.0 * dg(x) + dg(x - step)) / step ** 2
    allowed = rtol * (np.abs(exact) + scale) + step ** 2 / 3.0 * np.abs(third)
    return np.abs(central - exact) > allowed, central, exact


def check_assumptions(
    nl: Nonlinearity,
    sample_range: Tuple[float, float] = DEFAULT_SAMPLE_RANGE,
    samples: int = DEFAULT_SAMPLES,
    fd_step: float = DEFAULT_FD_STEP,
    fd_rtol: float = DEFAULT_FD_RTOL,
    rng: Optional[np.random.Generator] = None,
) -> AssumptionReport:
    """
    Sample f on ``sample_range`` and report every violation found.

    Checks |f|, |f'|, |f''| <= M (bound), f' < 0 (decrease), and central
    differences of f against f' and of f' against f'' (smoothness).
    Never raises on a violation; the report lists them.

    Args:
        nl: the nonlinearity to check
        sample_range: closed interval sampled uniformly, endpoints and 0 included
        samples: number of uniform sample points
        fd_step: central-difference step
        fd_rtol: relative tolerance of the derivative comparison
        rng: when given, ``samples`` further points are drawn uniformly from it

    Returns:
        AssumptionReport listing every violation found
    """
    if samples < 2:
        raise ValueError(f"Need at least 2 samples, got {samples}")
    x = _sample_points(sample_range, samples, rng)
    report = AssumptionReport(nl.name, len(x))
    M = nl.bound_M

    with np.errstate(all="ignore"):
        values = [np.broadcast_to(func(x), x.shape) for func in (nl.f, nl.fp, nl.fpp)]
    for label, vals in zip(("f", "f'", "f''"), values):
        bad = ~(np.abs(vals) <= M)
        for xi, vi in zip(x[bad], vals[bad]):
            report.violations.append(Violation("bound", float(xi), f"|{label}({xi:g})| = {abs(vi):.6g} > M = {M:g}"))
    if math.isinf(M):
        report.violations.append(Violation("bound", math.nan, "no finite uniform bound M is claimed"))

    slope = values[1]
    for xi, vi in zip(x[~(slope < 0)], slope[~(slope < 0)]):
        report.violations.append(Violation("decrease", float(xi), f"f'({xi:g}) = {vi:.6g} is not negative"))

    scale = M if math.isfinite(M) else 1.0
    checks = (("f'", nl.f, nl.fp), ("f''", nl.fp, nl.fpp))
    for label, g, dg in checks:
        with np.errstate(all="ignore"):
            bad, central, exact = _derivative_mismatch(g, dg, x, fd_step, fd_rtol, scale)
        for xi, ci, ei in zip(x[bad], central[bad], exact[bad]):
            report.violations.append(
                Violation("smoothness", float(xi), f"{label}({xi:g}) = {ei:.6g}, central difference {ci:.6g}")
            )

    if report.ok:
        logger.debug(report.summary())
    else:
        logger.warning(report.summary())
    return report
