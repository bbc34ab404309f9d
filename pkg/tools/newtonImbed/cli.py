"""
Command-line interface for the newtonImbed tool.

Subcommands: solve, mesa, oscillation, bump and epsilon-sweep. Argument parsing
and the mapping of errors to exit codes live here; the work is done in
``processing``.
"""

from dataclasses import dataclass, fields
from functools import wraps
from pathlib import Path
from typing import List, Optional, Tuple
import argparse
import logging
import os
import sys

from .analysis import DeltaTooSmall, MesaSpec
from .elliptic import DEFAULT_LINEAR_TOL, NegativeCoefficient, NonConvergence
from .grid import DomainSpec, Grid
from .homotopy import (
    DEFAULT_MAX_HALVINGS,
    DEFAULT_MAX_NEWTON_ITERS,
    DEFAULT_NEWTON_TOL,
    ContractionFailure,
    InsufficientData,
    NewtonConfig,
    StepCollapse,
)
from .nonlinearity import parse_nonlinearity
from .processing import (
    DEFAULT_THREADS,
    THREADS_ENV,
    run_bump,
    run_epsilon_sweep,
    run_mesa,
    run_oscillation,
    run_solve,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARTIAL_SWEEP = 9
EXIT_INTERRUPTED = 130

# checked in order, subclasses before their bases
EXIT_CODES = (
    (NonConvergence, 3),
    (NegativeCoefficient, 4),
    (ContractionFailure, 5),
    (StepCollapse, 6),
    (InsufficientData, 7),
    (DeltaTooSmall, 8),
    (ValueError, EXIT_USAGE),
    (OSError, EXIT_ERROR),
)

COMMANDS = ("solve", "mesa", "oscillation", "bump", "epsilon-sweep")


def exit_code_for(exc: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return EXIT_ERROR


def _float_list(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _join(values) -> str:
    return ",".join(repr(float(v)) for v in values)


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs; ``to_argv`` is its canonical form."""

    command: str
    out: str = "./out"
    seed: int = 0
    verbose: bool = False
    # solver
    domain: str = "ball"
    n: int = 3
    extent: float = 1.0
    res: int = 127
    f: str = "arccot:1,0,1,0"
    schedule: str = "uniform:4"
    newton_tol: float = DEFAULT_NEWTON_TOL
    linear_tol: float = DEFAULT_LINEAR_TOL
    max_newton_iters: int = DEFAULT_MAX_NEWTON_ITERS
    max_halvings: int = DEFAULT_MAX_HALVINGS
    adapt: bool = True
    preconditioner: str = "none"
    # mesa
    alpha: float = 0.2
    a: float = 0.0
    b: float = 1.0
    T: float = 1.0
    depth: int = 8
    # probes
    deltas: Tuple[float, ...] = (0.5, 0.05, 0.005)
    xs: Tuple[float, ...] = (1.0, 10.0, 100.0)
    p: float = 2.0
    # sweep
    eps: Tuple[float, ...] = (1.0, 0.1, 0.01)
    threads: Optional[int] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command {self.command!r}")

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        values = {f.name: getattr(ns, f.name) for f in fields(cls) if hasattr(ns, f.name)}
        if ns.command == "bump":
            values["domain"] = "box"
        if hasattr(ns, "L"):
            values["extent"] = ns.R if values.get("domain") == "ball" else ns.L
        for name in ("deltas", "xs", "eps"):
            if name in values:
                values[name] = tuple(float(v) for v in values[name])
        return cls(**values)

    def _uses(self, group: str) -> bool:
        return self.command in GROUPS[group]

    def to_argv(self) -> List[str]:
        argv = [self.command, "--out", self.out]
        if self.verbose:
            argv.append("--verbose")
        if self._uses("grid"):
            if self.command != "bump":
                argv += ["--domain", self.domain]
            argv += ["--n", str(self.n), "--R" if self.domain == "ball" else "--L", repr(self.extent),
                     "--res", str(self.res)]
        if self._uses("f"):
            argv += ["--f", self.f]
        if self._uses("solver"):
            argv += [
                "--schedule", self.schedule,
                "--newton-tol", repr(self.newton_tol),
                "--linear-tol", repr(self.linear_tol),
                "--max-newton-iters", str(self.max_newton_iters),
                "--max-halvings", str(self.max_halvings),
                "--preconditioner", self.preconditioner,
                "--seed", str(self.seed),
            ]
            if not self.adapt:
                argv.append("--no-adapt")
        if self._uses("mesa"):
            argv += ["--n", str(self.n), "--alpha", repr(self.alpha), "--a", repr(self.a), "--b", repr(self.b),
                     "--T", repr(self.T), "--depth", str(self.depth)]
        if self.command == "oscillation":
            argv += ["--deltas", _join(self.deltas)]
        if self.command == "bump":
            argv += ["--xs", _join(self.xs), "--p", repr(self.p)]
        if self.command == "epsilon-sweep":
            argv += ["--eps", _join(self.eps)]
            if self.threads is not None:
                argv += ["--threads", str(self.threads)]
        return argv

    def domain_spec(self) -> DomainSpec:
        return DomainSpec(self.domain, self.n, self.extent)

    def mesa_spec(self) -> MesaSpec:
        return MesaSpec(self.a, self.b, self.T, self.alpha, self.n, self.depth)

    def newton_config(self) -> NewtonConfig:
        return NewtonConfig(
            newton_tol=self.newton_tol,
            max_newton_iters=self.max_newton_iters,
            linear_tol=self.linear_tol,
            adapt=self.adapt,
            max_halvings=self.max_halvings,
            preconditioner=None if self.preconditioner == "none" else self.preconditioner,
        )


GROUPS = {
    "grid": ("solve", "bump", "epsilon-sweep"),
    "f": ("solve", "oscillation", "bump"),
    "solver": ("solve", "epsilon-sweep"),
    "mesa": ("mesa", "oscillation"),
}


def _add_grid_args(sp, box_only: bool = False):
    if not box_only:
        sp.add_argument("--domain", choices=["box", "ball"], default="ball", help="Domain kind (default: ball)")
    sp.add_argument("--n", type=int, default=3, help="Space dimension 1..3 (default: 3)")
    sp.add_argument("--L", type=float, default=1.0, help="Box side length (default: 1)")
    if not box_only:
        sp.add_argument("--R", type=float, default=1.0, help="Ball radius (default: 1)")
    sp.add_argument("--res", type=int, default=127, help="Nodes per axis, or radial nodes (default: 127)")


def _add_solver_args(sp):
    sp.add_argument("--schedule", default="uniform:4", help="uniform:J, explicit:0,...,1 or auto (default: uniform:4)")
    sp.add_argument("--newton-tol", type=float, default=DEFAULT_NEWTON_TOL,
                    help=f"Stop Newton once the H2 increment is below this (default: {DEFAULT_NEWTON_TOL:g})")
    sp.add_argument("--linear-tol", type=float, default=DEFAULT_LINEAR_TOL,
                    help=f"Relative CG residual (default: {DEFAULT_LINEAR_TOL:g})")
    sp.add_argument("--max-newton-iters", type=int, default=DEFAULT_MAX_NEWTON_ITERS,
                    help=f"Newton iterations per time step (default: {DEFAULT_MAX_NEWTON_ITERS})")
    sp.add_argument("--max-halvings", type=int, default=DEFAULT_MAX_HALVINGS,
                    help=f"Total adaptive step halvings (default: {DEFAULT_MAX_HALVINGS})")
    sp.add_argument("--no-adapt", dest="adapt", action="store_false", help="Fail instead of halving a step")
    sp.add_argument("--preconditioner", choices=["none", "jacobi"], default="none",
                    help="CG preconditioner (default: none)")
    sp.add_argument("--seed", type=int, default=0,
                    help="Seed of the randomized assumption check recorded in summary.txt (default: 0)")


def _add_mesa_args(sp):
    sp.add_argument("--n", type=int, default=3, help="Space dimension, at least 3 (default: 3)")
    sp.add_argument("--alpha", type=float, default=0.2, help="Mesa exponent (default: 0.2)")
    sp.add_argument("--a", type=float, default=0.0, help="Outer plateau value (default: 0)")
    sp.add_argument("--b", type=float, default=1.0, help="Inner plateau value (default: 1)")
    sp.add_argument("--T", type=float, default=1.0, help="Support radius (default: 1)")
    sp.add_argument("--depth", type=int, default=8, help="Number of mesa levels (default: 8)")


def build_parser():
    """Build the command-line argument parser."""
    ap = argparse.ArgumentParser(
        prog="newtonImbed",
        description="Newton-imbedding solver for -Delta u = f(u) with zero boundary values, "
                    "plus the mesa and bump counterexample probes."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=str, default="./out", help="Output directory (default: ./out)")
    common.add_argument("--verbose", action="store_true", help="Enable verbose logging output")

    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", parents=[common], help="March t from 0 to 1 and solve -Delta u = f(u)")
    _add_grid_args(sp)
    sp.add_argument("--f", default="arccot:1,0,1,0",
                    help="arccot:A,h,eps,k | heaviside-approx:eps | const:c | linear:mu (default: arccot:1,0,1,0)")
    _add_solver_args(sp)

    sp = sub.add_parser("mesa", parents=[common], help="Mesa partition, level energies and membership verdict")
    _add_mesa_args(sp)

    sp = sub.add_parser("oscillation", parents=[common], help="Oscillation of f(U) near the mesa center")
    _add_mesa_args(sp)
    sp.add_argument("--f", default="arccot:1,0,1,0", help="Nonlinearity (default: arccot:1,0,1,0)")
    sp.add_argument("--deltas", type=_float_list, default=(0.5, 0.05, 0.005),
                    help="Comma-separated ball radii (default: 0.5,0.05,0.005)")

    sp = sub.add_parser("bump", parents=[common], help="L^p norms of f(x_k gamma) for a smooth bump gamma")
    _add_grid_args(sp, box_only=True)
    sp.add_argument("--f", default="arccot:1,0,1,0", help="Nonlinearity (default: arccot:1,0,1,0)")
    sp.add_argument("--xs", type=_float_list, default=(1.0, 10.0, 100.0),
                    help="Comma-separated amplitudes x_k (default: 1,10,100)")
    sp.add_argument("--p", type=float, default=2.0, help="Exponent of the L^p norm, inf allowed (default: 2)")

    sp = sub.add_parser("epsilon-sweep", parents=[common], help="Solve with heaviside-approx:eps for several eps")
    _add_grid_args(sp)
    _add_solver_args(sp)
    sp.add_argument("--eps", type=_float_list, default=(1.0, 0.1, 0.01),
                    help="Comma-separated eps values (default: 1,0.1,0.01)")
    sp.add_argument("--threads", type=int, default=None,
                    help=f"Worker threads (default: ${THREADS_ENV} or {DEFAULT_THREADS})")
    return ap


def resolve_threads(cfg: RunConfig) -> int:
    if cfg.threads is not None:
        threads = cfg.threads
    else:
        raw = os.environ.get(THREADS_ENV, str(DEFAULT_THREADS))
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if threads < 1:
        raise ValueError(f"Thread count must be a positive integer, got {threads}")
    return threads


def _guarded(command):
    """Run a command, turning exceptions into exit codes and stderr messages."""

    @wraps(command)
    def wrapper(cfg: RunConfig) -> int:
        try:
            return command(cfg)
        except KeyboardInterrupt:
            print("\nInterrupted by user", file=sys.stderr)
            return EXIT_INTERRUPTED
        except OSError as e:
            print(f"Error: I/O failure on {getattr(e, 'filename', None) or cfg.out}: {e}", file=sys.stderr)
            return EXIT_ERROR
        except Exception as e:
            print(f"Error ({type(e).__name__}): {e}", file=sys.stderr)
            return exit_code_for(e)

    return wrapper


@_guarded
def cmd_solve(cfg: RunConfig) -> int:
    nl = parse_nonlinearity(cfg.f)
    out_dir = Path(cfg.out)
    print(f"newtonImbed solve - {nl.name} on {cfg.domain} n={cfg.n}, res {cfg.res}, schedule {cfg.schedule}")
    print(f"Output: {out_dir.resolve()}")
    print("-" * 60)
    summary = run_solve(cfg.domain_spec(), cfg.res, nl, cfg.schedule, cfg.newton_config(), out_dir, seed=cfg.seed)
    print("-" * 60)
    print(f"  Time steps: {len(summary.trace.accepted_steps)} ({summary.halvings} halving(s))")
    print(f"  Final residual: {summary.residual:.3e}")
    print(f"  K_est = {summary.k_est:.4g}, A_est = {summary.a_est:.4g}, dt_rec = {summary.dt_recommendation:.4g}")
    print(f"  Wall time: {summary.wall_time:.2f}s")
    return EXIT_OK


@_guarded
def cmd_mesa(cfg: RunConfig) -> int:
    spec = cfg.mesa_spec()
    print(f"newtonImbed mesa - n={spec.n}, alpha={spec.alpha:g}, a={spec.a:g}, b={spec.b:g}, "
          f"T={spec.T:g}, depth {spec.depth}")
    partition, energy, verdict, checks = run_mesa(spec, Path(cfg.out))
    print(f"  Innermost radius r_(N+1)^+ = {partition.r_inner:.6g}")
    print(f"  ||U||_L2^2 = {energy.l2_part:.6g}, ||DU||_L2^2 = {energy.grad_part:.6g}")
    print(f"  Weak-derivative residual at depth {checks[-1].depth}: {checks[-1].residual:.3e} "
          f"(bound {checks[-1].boundary_bound:.3e})")
    print(f"  Mesa gradient increment ratio {verdict.mesa_ratio:.4f}")
    print(f"Verdict: {verdict.label} (envelope increment ratio {verdict.ratio:.4f})")
    return EXIT_OK


@_guarded
def cmd_oscillation(cfg: RunConfig) -> int:
    nl = parse_nonlinearity(cfg.f)
    rows = run_oscillation(nl, cfg.mesa_spec(), cfg.deltas, Path(cfg.out))
    print(f"newtonImbed oscillation - {nl.name}")
    for r in rows:
        print(f"  delta = {r.delta:<10g} max f(U) = {r.f_max:.12g}  min f(U) = {r.f_min:.12g}  osc = {r.oscillation:.12g}")
    return EXIT_OK


@_guarded
def cmd_bump(cfg: RunConfig) -> int:
    nl = parse_nonlinearity(cfg.f)
    grid = Grid(cfg.domain_spec(), cfg.res)
    rows = run_bump(nl, grid, cfg.xs, cfg.p, Path(cfg.out))
    print(f"newtonImbed bump - {nl.name}, p = {cfg.p:g}")
    for r in rows:
        print(f"  x_k = {r.x_k:<10g} ||f(u_k)||_Lp = {r.lp_norm:.6g}  max = {r.linf_norm:.6g}  "
              f"lower bound = {r.lower_bound:.6g}")
    return EXIT_OK


@_guarded
def cmd_epsilon_sweep(cfg: RunConfig) -> int:
    threads = resolve_threads(cfg)
    print(f"newtonImbed epsilon-sweep - eps {_join(cfg.eps)} with {threads} thread(s)")
    print("-" * 60)
    entries = run_epsilon_sweep(
        cfg.domain_spec(), cfg.res, cfg.eps, cfg.schedule, cfg.newton_config(), Path(cfg.out), threads, seed=cfg.seed
    )
    failed = [e for e in entries if not e.ok]
    for e in entries:
        detail = f"residual {e.summary.residual:.3e}" if e.ok else e.error
        print(f"  eps = {e.eps:<10g} {e.status}: {detail}")
    if failed:
        print(f"\nWarning: {len(failed)} of {len(entries)} solve(s) failed", file=sys.stderr)
        return EXIT_PARTIAL_SWEEP
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "mesa": cmd_mesa,
    "oscillation": cmd_oscillation,
    "bump": cmd_bump,
    "epsilon-sweep": cmd_epsilon_sweep,
}


def main(argv=None) -> int:
    """Main entry point for the CLI; returns the exit code."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        cfg = RunConfig.from_namespace(args)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return HANDLERS[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
