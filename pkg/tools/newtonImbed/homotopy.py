"""
Newton-imbedding driver for -Delta u = f(u), u = 0 on the boundary.

The parameter t is marched from 0 to 1 through a schedule t_0 = 0 < ... < t_J = 1.
At each t_j the problem -Delta u = t_j f(u) is solved by undamped Newton
iterations started from the solution at t_{j-1}; every iteration is one linear
solve of -Delta u + q u = g. The trace records the H2 increments of the
iterations, from which the quadratic contraction constant K, the step constant
A and the admissible step width 1/(KA) are estimated.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple
import csv
import logging
import math

import numpy as np
from scipy.integrate import fixed_quad

from .elliptic import DEFAULT_LINEAR_TOL, LinearProblem, SolveReport, solve_linear
from .grid import Field, Grid, laplacian, norm_h1, norm_h2, norm_lp
from .nonlinearity import Nonlinearity, check_assumptions

logger = logging.getLogger(__name__)

DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_MAX_NEWTON_ITERS = 12
DEFAULT_MAX_HALVINGS = 20
DEFAULT_PILOT_DT = 0.25
TAYLOR_QUAD_POINTS = 16
FLOOR_FACTOR = 100.0

TRACE_COLUMNS = ("j", "t", "m", "diff_h1", "diff_h2", "contraction_ratio", "a_estimate", "cg_iters", "halved")


class ContractionFailure(RuntimeError):
    """Newton increments stopped contracting at time t."""

    def __init__(self, message: str, t: float, rows: List["TraceRow"]):
        super().__init__(message)
        self.t = t
        self.rows = rows


class StepCollapse(RuntimeError):
    """The adaptive halving cap was reached without completing the schedule."""

    def __init__(self, halvings: int, trace: "HomotopyTrace"):
        super().__init__(f"Step width collapsed after {halvings} halvings at t = {trace.last_time:g}")
        self.halvings = halvings
        self.trace = trace


class InsufficientData(ValueError):
    """The trace holds no step from which the constants can be estimated."""


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing times from 0 to 1 with widths bounded by ``max_dt``."""

    times: Tuple[float, ...]
    max_dt: float = math.inf

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) < 2:
            raise ValueError(f"A schedule needs at least two times, got {times}")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ValueError(f"A schedule must start at 0 and end at 1, got {times[0]:g} .. {times[-1]:g}")
        widths = np.diff(times)
        if np.any(widths <= 0):
            raise ValueError(f"Schedule times must be strictly increasing: {times}")
        if not self.max_dt > 0:
            raise ValueError(f"max_dt must be positive, got {self.max_dt}")
        if widths.max() > self.max_dt * (1.0 + 1e-12):
            raise ValueError(f"Step width {widths.max():g} exceeds max_dt = {self.max_dt:g}")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, steps: int, max_dt: Optional[float] = None) -> "Schedule":
        """
        ``steps`` equal intervals of [0, 1].

        Raises:
            ValueError: if steps is not a positive integer
        """
        if int(steps) != steps or steps < 1:
            raise ValueError(f"Number of steps must be a positive integer, got {steps}")
        times = np.linspace(0.0, 1.0, int(steps) + 1)
        return cls(tuple(times), 1.0 / steps if max_dt is None else max_dt)

    @classmethod
    def explicit(cls, times: Sequence[float], max_dt: float = math.inf) -> "Schedule":
        """Schedule through ``times``, validated like any other (0 first, 1 last, increasing)."""
        return cls(tuple(times), max_dt)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def insert_midpoint(self, j: int) -> "Schedule":
        """Halve the interval [t_{j-1}, t_j]."""
        if not 1 <= j <= self.steps:
            raise IndexError(f"No interval ending at index {j}")
        mid = 0.5 * (self.times[j - 1] + self.times[j])
        return replace(self, times=self.times[:j] + (mid,) + self.times[j:])


@dataclass(frozen=True)
class NewtonConfig:
    newton_tol: float = DEFAULT_NEWTON_TOL
    max_newton_iters: int = DEFAULT_MAX_NEWTON_ITERS
    linear_tol: float = DEFAULT_LINEAR_TOL
    adapt: bool = True
    max_halvings: int = DEFAULT_MAX_HALVINGS
    preconditioner: Optional[str] = None
    max_cg_iter: Optional[int] = None

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_newton_iters < 1:
            raise ValueError(f"max_newton_iters must be at least 1, got {self.max_newton_iters}")
        if self.max_halvings < 0:
            raise ValueError(f"max_halvings must be non-negative, got {self.max_halvings}")

    def increment_floor(self, u: Field) -> float:
        """Smallest H2 increment the linear solves resolve around ``u``."""
        return FLOOR_FACTOR * self.linear_tol * max(1.0, norm_h2(u))


@dataclass(frozen=True)
class TraceRow:
    """One Newton iteration m at time t_j: the increment u_{m+1} - u_m."""

    j: int
    t: float
    m: int
    diff_h1: float
    diff_h2: float
    contraction_ratio: float = math.nan
    a_estimate: float = math.nan
    cg_iters: int = 0
    halved: bool = False
    taylor_residual: float = math.nan


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one attempt at the interval [t_prev, t]."""

    j: int
    t: float
    t_prev: float
    accepted: bool
    halved: bool = False
    residual: float = math.nan
    newton_iters: int = 0
    first_increment: float = math.nan
    c_estimate: float = math.nan
    tail_bound: float = math.nan

    @property
    def dt(self) -> float:
        return self.t - self.t_prev


@dataclass
class HomotopyTrace:
    nonlinearity: str
    rows: List[TraceRow] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    times: Tuple[float, ...] = (0.0,)
    halvings: int = 0

    @property
    def accepted_steps(self) -> List[StepRecord]:
        return [s for s in self.steps if s.accepted]

    @property
    def last_time(self) -> float:
        accepted = self.accepted_steps
        return accepted[-1].t if accepted else 0.0

    @property
    def final_residual(self) -> float:
        accepted = self.accepted_steps
        return accepted[-1].residual if accepted else math.nan

    def rows_for(self, j: int) -> List[TraceRow]:
        return [r for r in self.rows if r.j == j]

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([
                    r.j, f"{r.t:.17g}", r.m, f"{r.diff_h1:.17g}", f"{r.diff_h2:.17g}",
                    f"{r.contraction_ratio:.17g}", f"{r.a_estimate:.17g}", r.cg_iters, int(r.halved),
                ])
        return path


def _apply(func: Callable, u: Field) -> np.ndarray:
    with np.errstate(all="ignore"):
        return np.broadcast_to(func(u.values), u.values.shape).astype(float)


def newton_step(t: float, u: Field, nl: Nonlinearity, cfg: NewtonConfig) -> Tuple[Field, SolveReport]:
    """
    One Newton iteration for -Delta u = t f(u).

    Solves -Delta v + q v = g with q = -t f'(u) and g = t (f(u) - f'(u) u).

    Args:
        t: imbedding parameter in [0, 1]
        u: current iterate, also the CG starting guess
        nl: nonlinearity f
        cfg: tolerances and preconditioner of the linear solve

    Returns:
        The next iterate and the CG report of the linear solve

    Raises:
        ValueError: if t lies outside [0, 1]
        ContractionFailure: if q or g is not finite
        NegativeCoefficient, NonConvergence: from the linear solve
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Time must lie in [0, 1], got {t}")
    f_u = _apply(nl.f, u)
    fp_u = _apply(nl.fp, u)
    q = -t * fp_u
    g = t * (f_u - fp_u * u.values)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(g))):
        raise ContractionFailure(f"Non-finite Newton data at t = {t:g}", t, [])
    problem = LinearProblem(u.with_values(q), u.with_values(g))
    report = solve_linear(
        problem,
        tol=cfg.linear_tol,
        max_iter=cfg.max_cg_iter,
        initial_guess=u,
        preconditioner=cfg.preconditioner,
    )
    return report.solution, report


def taylor_residual(t: float, u_prev: Field, u: Field, nl: Nonlinearity) -> float:
    """
    Relative defect of the integral form of the Taylor remainder.

    Compares t (f(u) - f(u_prev) - f'(u_prev) d), d = u - u_prev, with
    t d^2 int_0^1 f''(tau u + (1 - tau) u_prev)(1 - tau) dtau, in L2 and relative
    to t (||f(u)|| + ||f(u_prev)|| + ||f'(u_prev) d||).

    Returns:
        The relative defect, 0 when the scale vanishes
    """
    d = u.values - u_prev.values
    f_u, f_prev, fp_prev = _apply(nl.f, u), _apply(nl.f, u_prev), _apply(nl.fp, u_prev)
    direct = t * (f_u - f_prev - fp_prev * d)

    a, b = u_prev.values[..., None], u.values[..., None]

    def kernel(tau):
        return np.asarray(nl.fpp(tau * b + (1.0 - tau) * a)) * (1.0 - tau)

    integral, _ = fixed_quad(kernel, 0.0, 1.0, n=TAYLOR_QUAD_POINTS)
    remainder = t * d ** 2 * integral

    scale = t * (
        norm_lp(u.with_values(f_u), 2) + norm_lp(u.with_values(f_prev), 2) + norm_lp(u.with_values(fp_prev * d), 2)
    )
    defect = norm_lp(u.with_values(direct - remainder), 2)
    return 0.0 if scale == 0.0 else defect / scale


def verification_residual(t: float, u: Field, nl: Nonlinearity) -> float:
    """||-Delta_h u - t f(u)||_L2."""
    return norm_lp(-laplacian(u) - t * u.with_values(_apply(nl.f, u)), 2)


def solve_at_time(
    t: float,
    u_init: Field,
    nl: Nonlinearity,
    cfg: NewtonConfig,
    j: int = 0,
) -> Tuple[Field, List[TraceRow]]:
    """
    Newton iterations for -Delta u = t f(u) started from ``u_init``.

    Stops once the H2 increment falls below max(newton_tol, floor), the floor
    being the resolution of the linear solves. Increments at or under the floor
    get a NaN contraction ratio.

    Raises:
        ContractionFailure: on two consecutive increment increases, a
            non-finite iterate, or when max_newton_iters is exhausted
    """
    rows: List[TraceRow] = []
    u, u_prev = u_init, None
    increases = 0
    converged = False
    for m in range(cfg.max_newton_iters):
        u_next, report = newton_step(t, u, nl, cfg)
        diff = u_next - u
        diff_h2 = norm_h2(diff)
        floor = cfg.increment_floor(u)
        ratio = math.nan
        if rows and diff_h2 >= floor:
            ratio = diff_h2 / rows[-1].diff_h2 ** 2
        taylor = math.nan if u_prev is None else taylor_residual(t, u_prev, u, nl)
        rows.append(TraceRow(j, t, m, norm_h1(diff), diff_h2, ratio, cg_iters=report.cg_iterations, taylor_residual=taylor))
        logger.debug(f"t = {t:.6g}, m = {m}: |du|_H2 = {diff_h2:.3e}, ratio {ratio:.3e}, {report.cg_iterations} CG iterations")

        u_prev, u = u, u_next
        if diff_h2 < max(cfg.newton_tol, floor):
            converged = True
            break
        if len(rows) > 1 and diff_h2 > rows[-2].diff_h2:
            increases += 1
            if increases >= 2:
                raise ContractionFailure(f"Newton increments grew twice in a row at t = {t:g}", t, rows)
        else:
            increases = 0

    if not converged:
        raise ContractionFailure(
            f"Newton did not converge in {cfg.max_newton_iters} iterations at t = {t:g} "
            f"(last increment {rows[-1].diff_h2:.3e})",
            t,
            rows,
        )

    # a = t K ||u_1 - u_0||_H2 with this step's own K
    ratios = [r.contraction_ratio for r in rows if math.isfinite(r.contraction_ratio)]
    a = max(ratios) * rows[0].diff_h2 if ratios else 0.0
    return u, [replace(r, a_estimate=a) for r in rows]


def tail_bound(a: float, first_increment: float, iterations: int) -> float:
    """
    sum_{k >= iterations} a^(2^k - 1) ||u_1 - u_0||_H2.

    Args:
        a: contraction constant
        first_increment: ||u_1 - u_0||_H2
        iterations: index of the first omitted term

    Returns:
        The tail sum, ``math.inf`` unless a < 1
    """
    if not a < 1.0:
        return math.inf
    total = 0.0
    for k in range(iterations, iterations + 64):
        term = first_increment * a ** (2 ** k - 1)
        total += term
        if term <= total * 1e-17:
            break
    return total


def _step_record(j, t, t_prev, rows, u_init, u, nl, halved) -> StepRecord:
    first = rows[0].diff_h2
    f_norm = norm_lp(u_init.with_values(_apply(nl.f, u_init)), 2)
    dt = t - t_prev
    c_est = first / (dt * f_norm) if f_norm > 0 and dt > 0 else math.nan
    return StepRecord(
        j=j,
        t=t,
        t_prev=t_prev,
        accepted=True,
        halved=halved,
        residual=verification_residual(t, u, nl),
        newton_iters=len(rows),
        first_increment=first,
        c_estimate=c_est,
        tail_bound=tail_bound(rows[0].a_estimate, first, len(rows)),
    )


def run(
    nl: Nonlinearity,
    grid: Grid,
    schedule: Schedule,
    cfg: NewtonConfig = NewtonConfig(),
    on_step: Optional[Callable[[StepRecord], None]] = None,
) -> Tuple[Field, HomotopyTrace]:
    """
    March t from 0 to 1 along ``schedule``, starting from u(., 0) = 0.

    With ``cfg.adapt`` a step whose Newton iteration fails is halved (a
    midpoint is inserted) and retried, at most ``cfg.max_halvings`` times in
    total. ``on_step`` is called with every attempted step.

    Returns:
        u(., 1) and the full trace

    Raises:
        ContractionFailure: on a failed step when adapt is off
        StepCollapse: when the halving cap is reached
    """
    check_assumptions(nl)
    trace = HomotopyTrace(nl.name)
    u = Field.zeros(grid)
    halved_times = set()
    j = 1
    while j <= schedule.steps:
        t_prev, t = schedule.times[j - 1], schedule.times[j]
        halved = t in halved_times
        try:
            u_next, rows = solve_at_time(t, u, nl, cfg, j=j)
        except ContractionFailure as e:
            failed = StepRecord(j, t, t_prev, accepted=False, halved=halved, newton_iters=len(e.rows))
            trace.steps.append(failed)
            if on_step:
                on_step(failed)
            if not cfg.adapt:
                trace.times = schedule.times
                raise
            if trace.halvings >= cfg.max_halvings:
                trace.times = schedule.times
                raise StepCollapse(trace.halvings, trace) from e
            schedule = schedule.insert_midpoint(j)
            halved_times.update((schedule.times[j], t))
            trace.halvings += 1
            logger.warning(f"{e}; halving [{t_prev:g}, {t:g}] (halving {trace.halvings})")
            continue

        rows = [replace(r, halved=halved) for r in rows]
        record = _step_record(j, t, t_prev, rows, u, u_next, nl, halved)
        trace.rows.extend(rows)
        trace.steps.append(record)
        if on_step:
            on_step(record)
        logger.info(
            f"t = {t:.6g} accepted after {record.newton_iters} Newton iteration(s), "
            f"residual {record.residual:.3e}"
        )
        u = u_next
        j += 1

    trace.times = schedule.times
    return u, trace


def estimate_constants(trace: HomotopyTrace) -> Tuple[float, float, float]:
    """
    Empirical K, A and the admissible width 1/(K A) from a trace.

    K_est is the largest finite contraction ratio divided by its time, A_est
    the largest first increment per unit of time step. A zero K_est gives an
    infinite recommendation.

    Returns:
        (K_est, A_est, dt_recommendation)

    Raises:
        InsufficientData: without an accepted step of at least two iterations
    """
    usable = [s for s in trace.accepted_steps if s.newton_iters >= 2 and s.dt > 0]
    if not usable:
        raise InsufficientData("Trace has no accepted step with two or more Newton iterations")
    ks = [
        r.contraction_ratio / r.t
        for r in trace.rows
        if r.t > 0 and math.isfinite(r.contraction_ratio)
    ]
    k_est = max(ks) if ks else 0.0
    a_est = max(s.first_increment / s.dt for s in usable)
    if k_est == 0.0 or a_est == 0.0:
        return k_est, a_est, math.inf
    return k_est, a_est, 1.0 / (k_est * a_est)


def pilot_schedule(
    nl: Nonlinearity,
    grid: Grid,
    cfg: NewtonConfig = NewtonConfig(),
    pilot_dt: float = DEFAULT_PILOT_DT,
) -> Schedule:
    """
    Uniform schedule from a one-step pilot solve at t = pilot_dt.

    The width is min(pilot_dt, dt_recommendation / 2); without usable pilot
    data the pilot width itself is used.

    Raises:
        ValueError: if pilot_dt is outside (0, 1]
        ContractionFailure: if the pilot step itself fails
    """
    if not 0 < pilot_dt <= 1:
        raise ValueError(f"Pilot step must lie in (0, 1], got {pilot_dt}")
    u0 = Field.zeros(grid)
    u1, rows = solve_at_time(pilot_dt, u0, nl, cfg, j=1)
    pilot = HomotopyTrace(nl.name, rows=rows, steps=[_step_record(1, pilot_dt, 0.0, rows, u0, u1, nl, False)])
    try:
        _, _, dt_rec = estimate_constants(pilot)
    except InsufficientData:
        dt_rec = math.inf
    width = min(pilot_dt, dt_rec / 2.0)
    steps = int(math.ceil(1.0 / width - 1e-9))
    logger.info(f"Pilot at t = {pilot_dt:g}: recommended width {dt_rec:.4g}, using {steps} uniform step(s)")
    return Schedule.uniform(steps)
