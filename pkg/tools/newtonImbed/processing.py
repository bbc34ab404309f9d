"""
Pipelines behind the newtonImbed commands and the files they write.

Each ``run_*`` function does the work of one command and writes its outputs
under the given directory; ``cli.py`` only parses arguments and maps errors to
exit codes.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import csv
import logging
import math
import time

import numpy as np
from tqdm import tqdm

from .analysis import (
    BumpRow,
    MembershipVerdict,
    MesaEnergy,
    MesaPartition,
    MesaSpec,
    OscillationRow,
    WeakDerivativeReport,
    build_partition,
    bump_sequence_probe,
    membership_verdict,
    mesa_h1_norm_sq,
    mollifier_profile,
    oscillation_probe,
    weak_derivative_check,
)
from .grid import DomainSpec, Field, Grid, norm_h1, norm_h2, norm_lp, write_field
from .homotopy import (
    HomotopyTrace,
    InsufficientData,
    NewtonConfig,
    Schedule,
    StepRecord,
    estimate_constants,
    pilot_schedule,
    run,
)
from .nonlinearity import AssumptionReport, Nonlinearity, check_assumptions, make_heaviside_approx

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

DEFAULT_THREADS = 1
THREADS_ENV = "NEWTON_IMBED_THREADS"

TRACE_CSV = "trace.csv"
SOLUTION_FIELD = "solution.field"
SUMMARY_TXT = "summary.txt"
PARTITION_CSV = "partition.csv"
LEVELS_CSV = "mesa_levels.csv"
WEAK_DERIVATIVE_CSV = "weak_derivative.csv"
OSCILLATION_CSV = "oscillation.csv"
BUMP_CSV = "bump.csv"
SWEEP_CSV = "sweep.csv"
DISTANCES_CSV = "distances.csv"


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    logger.info(f"Wrote {path}")
    return path


def resolve_schedule(text: str, nl: Nonlinearity, grid: Grid, cfg: NewtonConfig) -> Schedule:
    """``uniform:J``, ``explicit:t0,t1,...`` or ``auto`` (pilot solve)."""
    kind, _, params = text.partition(":")
    if kind == "auto" and not params:
        return pilot_schedule(nl, grid, cfg)
    try:
        if kind == "uniform":
            return Schedule.uniform(int(params))
        if kind == "explicit":
            return Schedule.explicit([float(t) for t in params.split(",")])
    except ValueError as e:
        raise ValueError(f"Invalid schedule {text!r}: {e}")
    raise ValueError(f"Unknown schedule {text!r} (expected uniform:J, explicit:t0,...,1 or auto)")


@dataclass
class SolveSummary:
    solution: Field
    trace: HomotopyTrace
    residual: float
    k_est: float
    a_est: float
    dt_recommendation: float
    wall_time: float
    seed: Optional[int] = None
    assumptions: Optional[AssumptionReport] = None

    @property
    def halvings(self) -> int:
        return self.trace.halvings


def write_summary(path: Path, summary: SolveSummary, nl: Nonlinearity) -> Path:
    path = Path(path)
    u = summary.solution
    lines = [
        f"nonlinearity = {nl.name}",
        f"domain = {u.grid.domain.kind} n={u.grid.n} extent={u.grid.domain.extent:g}",
        f"res = {u.grid.res}",
        f"time_steps = {len(summary.trace.accepted_steps)}",
        f"halvings = {summary.halvings}",
        f"final_residual = {_fmt(summary.residual)}",
        f"K_est = {_fmt(summary.k_est)}",
        f"A_est = {_fmt(summary.a_est)}",
        f"dt_recommendation = {_fmt(summary.dt_recommendation)}",
        f"solution_l2 = {_fmt(norm_lp(u, 2))}",
        f"solution_h1 = {_fmt(norm_h1(u))}",
        f"solution_h2 = {_fmt(norm_h2(u))}",
        f"solution_max = {_fmt(norm_lp(u, math.inf))}",
        f"wall_time_s = {summary.wall_time:.3f}",
    ]
    if summary.seed is not None:
        lines.append(f"seed = {summary.seed}")
    if summary.assumptions is not None:
        lines.append(f"assumption_samples = {summary.assumptions.samples}")
        lines.append(f"assumption_violations = {len(summary.assumptions.violations)}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def run_solve(
    domain: DomainSpec,
    res: int,
    nl: Nonlinearity,
    schedule_text: str,
    cfg: NewtonConfig,
    out_dir: Path,
    progress: bool = True,
    seed: Optional[int] = None,
) -> SolveSummary:
    """
    Newton-imbedding solve; writes trace.csv, solution.field and summary.txt.

    With a ``seed`` the assumption check is repeated on randomly drawn points
    from that seed and its outcome goes into the summary.

    Raises:
        ContractionFailure, StepCollapse: from the homotopy run
        OSError: if the output files cannot be written
    """
    grid = Grid(domain, res)
    assumptions = None
    if seed is not None:
        assumptions = check_assumptions(nl, rng=np.random.default_rng(seed))
        if not assumptions.ok:
            logger.warning(f"Assumption check: {assumptions.summary()}")
    start = time.perf_counter()
    schedule = resolve_schedule(schedule_text, nl, grid, cfg)

    bar = tqdm(total=schedule.steps, desc="Time steps", disable=not progress)

    def on_step(record: StepRecord):
        if record.accepted:
            bar.update(1)
        else:
            bar.total += 1
            bar.refresh()

    try:
        u, trace = run(nl, grid, schedule, cfg, on_step=on_step)
    finally:
        bar.close()
    wall = time.perf_counter() - start

    try:
        k_est, a_est, dt_rec = estimate_constants(trace)
    except InsufficientData:
        k_est, a_est, dt_rec = math.nan, math.nan, math.nan
    summary = SolveSummary(u, trace, trace.final_residual, k_est, a_est, dt_rec, wall, seed, assumptions)

    out_dir = Path(out_dir)
    trace.to_csv(out_dir / TRACE_CSV)
    logger.info(f"Wrote {out_dir / TRACE_CSV}")
    write_field(u, out_dir / SOLUTION_FIELD)
    logger.info(f"Wrote {out_dir / SOLUTION_FIELD}")
    write_summary(out_dir / SUMMARY_TXT, summary, nl)
    return summary


def run_mesa(
    spec: MesaSpec,
    out_dir: Path,
) -> Tuple[MesaPartition, MesaEnergy, MembershipVerdict, List[WeakDerivativeReport]]:
    """Partition, per-level energies, weak-derivative residuals per depth and the verdict."""
    partition = build_partition(spec)
    energy = mesa_h1_norm_sq(spec)
    verdict = membership_verdict(energy)
    testfn = mollifier_profile(spec.T)
    checks = [weak_derivative_check(spec, depth, testfn) for depth in range(1, spec.depth + 1)]

    out_dir = Path(out_dir)
    _write_csv(out_dir / PARTITION_CSV, ("m", "r_plus", "s_plus", "s_minus", "r_minus"), partition.rows())
    grad_sums, env_sums = energy.grad_partial_sums, energy.envelope_partial_sums
    level_rows = []
    for k, lv in enumerate(energy.levels):
        prev = energy.levels[k - 1] if k else None
        ratio = lv.envelope / prev.envelope if prev is not None else math.nan
        grad_ratio = lv.grad / prev.grad if prev is not None and prev.grad > 0 else math.nan
        level_rows.append(
            (lv.m, lv.l2, lv.grad, float(grad_sums[k]), grad_ratio, lv.envelope, float(env_sums[k]), ratio)
        )
    _write_csv(
        out_dir / LEVELS_CSV,
        ("m", "l2", "grad", "grad_partial_sum", "grad_ratio", "envelope", "envelope_partial_sum", "envelope_ratio"),
        level_rows,
    )
    _write_csv(
        out_dir / WEAK_DERIVATIVE_CSV,
        ("depth", "lhs", "rhs", "residual", "boundary_term", "boundary_bound"),
        [(c.depth, c.lhs, c.rhs, c.residual, c.boundary_term, c.boundary_bound) for c in checks],
    )
    return partition, energy, verdict, checks


def run_oscillation(
    nl: Nonlinearity,
    spec: MesaSpec,
    deltas: Sequence[float],
    out_dir: Path,
) -> List[OscillationRow]:
    rows = oscillation_probe(nl, spec, build_partition(spec), deltas)
    _write_csv(
        Path(out_dir) / OSCILLATION_CSV,
        ("delta", "f_max", "f_min", "oscillation"),
        [(r.delta, r.f_max, r.f_min, r.oscillation) for r in rows],
    )
    return rows


def run_bump(
    nl: Nonlinearity,
    grid: Grid,
    xs: Sequence[float],
    p: float,
    out_dir: Path,
    center: Optional[Sequence[float]] = None,
    radius: Optional[float] = None,
) -> List[BumpRow]:
    rows = bump_sequence_probe(nl, grid, xs, p, center=center, radius=radius)
    _write_csv(
        Path(out_dir) / BUMP_CSV,
        ("x_k", "lp_norm", "linf_norm", "lower_bound"),
        [(r.x_k, r.lp_norm, r.linf_norm, r.lower_bound) for r in rows],
    )
    return rows


@dataclass
class SweepEntry:
    eps: float
    status: str
    error: str = ""
    summary: Optional[SolveSummary] = None

    @property
    def ok(self) -> bool:
        return self.summary is not None


def sweep_dir_name(eps: float) -> str:
    """Per-eps output directory; repr keeps distinct floats apart."""
    return f"eps_{float(eps)!r}"


def _sweep_member(eps, domain, res, schedule_text, cfg, out_dir, seed) -> SweepEntry:
    try:
        nl = make_heaviside_approx(eps)
        member_dir = Path(out_dir) / sweep_dir_name(eps)
        summary = run_solve(domain, res, nl, schedule_text, cfg, member_dir, progress=False, seed=seed)
        return SweepEntry(eps, "ok", summary=summary)
    except Exception as e:
        logger.error(f"eps = {eps:g} failed: {e}")
        return SweepEntry(eps, type(e).__name__, str(e))


def run_epsilon_sweep(
    domain: DomainSpec,
    res: int,
    eps_values: Sequence[float],
    schedule_text: str,
    cfg: NewtonConfig,
    out_dir: Path,
    threads: int = DEFAULT_THREADS,
    seed: Optional[int] = None,
) -> List[SweepEntry]:
    """
    Solve with heaviside-approx:eps for each eps, one output directory per eps.

    Failures are recorded and the sweep continues. sweep.csv lists every eps in
    descending order; distances.csv holds pairwise H1 distances of the solved ones.
    """
    eps_values = sorted({float(e) for e in eps_values}, reverse=True)
    if not eps_values or eps_values[-1] <= 0:
        raise ValueError(f"eps values must be positive, got {eps_values}")
    if threads < 1:
        raise ValueError(f"Thread count must be at least 1, got {threads}")

    entries: Dict[float, SweepEntry] = {}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(_sweep_member, eps, domain, res, schedule_text, cfg, out_dir, seed) for eps in eps_values
        ]
        for future in tqdm(as_completed(futures), total=len(futures), desc="Sweep"):
            entry = future.result()
            entries[entry.eps] = entry
    ordered = [entries[eps] for eps in eps_values]

    rows = []
    for e in ordered:
        if e.ok:
            u = e.summary.solution
            rows.append((e.eps, e.status, e.summary.residual, norm_lp(u, 2), norm_h1(u), norm_h2(u),
                         norm_lp(u, math.inf), e.summary.halvings, ""))
        else:
            rows.append((e.eps, e.status, math.nan, math.nan, math.nan, math.nan, math.nan, 0, e.error))
    out_dir = Path(out_dir)
    _write_csv(
        out_dir / SWEEP_CSV,
        ("eps", "status", "residual", "l2", "h1", "h2", "max", "halvings", "error"),
        rows,
    )

    solved = [e for e in ordered if e.ok]
    distances = [
        (first.eps, second.eps, norm_h1(first.summary.solution - second.summary.solution))
        for i, first in enumerate(solved)
        for second in solved[i + 1:]
    ]
    _write_csv(out_dir / DISTANCES_CSV, ("eps_i", "eps_j", "h1_distance"), distances)
    return ordered
