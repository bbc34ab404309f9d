"""
Counterexample constructions around the composition map u -> f(u).

* The mesa function: a radial H1 function alternating between plateaus a and b
  at geometrically shrinking scales, its H1 energy level by level, and the
  weak-derivative identity for its truncation.
* The oscillation probe: f(U) keeps the oscillation |f(b) - f(a)| in every
  ball around the center, so f(U) has no continuous representative.
* The bump probe: x_k times a smooth cutoff, whose image under an unbounded f
  has unbounded L^p norm.

Every mesa piece is a short sum of powers sum_k c_k r^{p_k}, so values,
derivatives and the radial integrals of U^2 and U'^2 all come in closed form.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.integrate import fixed_quad

from .grid import Field, Grid, norm_lp, sphere_area
from .nonlinearity import Nonlinearity

logger = logging.getLogger(__name__)

DEFAULT_QUAD_POINTS = 32
DEFAULT_QUAD_PANELS = 8

Terms = Tuple[Tuple[float, float], ...]


class DeltaTooSmall(ValueError):
    """The ball B(c, delta) does not reach the innermost materialized plateau."""

    def __init__(self, delta: float, limit: float):
        super().__init__(
            f"delta = {delta:g} does not exceed the innermost plateau radius {limit:g}; increase the depth"
        )
        self.delta = delta
        self.limit = limit


@dataclass(frozen=True)
class MesaSpec:
    """Mesa function with plateaus a <= b, support radius T and exponent alpha in R^n."""

    a: float
    b: float
    T: float
    alpha: float
    n: int = 3
    depth: int = 8
    center: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"Mesa functions need dimension n >= 3, got {self.n}")
        if not self.a <= self.b:
            raise ValueError(f"Plateau values must satisfy a <= b, got a = {self.a}, b = {self.b}")
        if not self.T > 0:
            raise ValueError(f"Support radius T must be positive, got {self.T}")
        if not 0 < self.alpha < self.n - 1:
            raise ValueError(f"Exponent alpha must lie in (0, {self.n - 1}), got {self.alpha}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise ValueError(f"Depth must be a positive integer, got {self.depth}")
        center = (0.0,) * self.n if self.center is None else tuple(float(c) for c in self.center)
        if len(center) != self.n:
            raise ValueError(f"Center {center} does not have dimension {self.n}")
        object.__setattr__(self, "center", center)

    @property
    def critical_alpha(self) -> float:
        return (self.n - 2) / 2.0

    @property
    def subcritical(self) -> bool:
        return self.alpha < self.critical_alpha


@dataclass(frozen=True)
class MesaPartition:
    """Radii of levels m = 1..N; ``r_plus`` carries one extra entry r_{N+1}^+."""

    r_plus: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray
    r_minus: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.s_plus)

    @property
    def r_inner(self) -> float:
        """r_{N+1}^+, below which the truncated mesa is frozen at a."""
        return float(self.r_plus[-1])

    def rows(self) -> List[Tuple[int, float, float, float, float]]:
        return [
            (m + 1, float(self.r_plus[m]), float(self.s_plus[m]), float(self.s_minus[m]), float(self.r_minus[m]))
            for m in range(self.depth)
        ]


def _solve_gap(r: float, gap: float, alpha: float) -> float:
    """The radius s < r with 1/s^alpha - 1/r^alpha = gap."""
    return (gap + r ** -alpha) ** (-1.0 / alpha)


def build_partition(spec: MesaSpec, depth: Optional[int] = None) -> MesaPartition:
    """
    Radii r_m^+ > s_m^+ > s_m^- > r_m^- for m = 0..depth-1, plus r_depth^+.

    Starts at r_0^+ = T/2; each descent r -> s solves r^-alpha = s^-alpha - (b - a)
    and each plateau halves the radius.

    Args:
        spec: mesa parameters
        depth: number of levels, ``spec.depth`` when omitted

    Returns:
        MesaPartition with strictly decreasing radii

    Raises:
        ValueError: if depth < 1
    """
    depth = spec.depth if depth is None else int(depth)
    if depth < 1:
        raise ValueError(f"Depth must be a positive integer, got {depth}")
    gap = spec.b - spec.a
    r_plus = np.empty(depth + 1)
    s_plus, s_minus, r_minus = np.empty(depth), np.empty(depth), np.empty(depth)
    r_plus[0] = spec.T / 2.0
    for m in range(depth):
        s_plus[m] = _solve_gap(r_plus[m], gap, spec.alpha)
        s_minus[m] = s_plus[m] / 2.0
        r_minus[m] = _solve_gap(s_minus[m], gap, spec.alpha)
        r_plus[m + 1] = 0.5 * r_minus[m]
    return MesaPartition(r_plus, s_plus, s_minus, r_minus)


@dataclass(frozen=True)
class _Piece:
    """U = sum c r^p on [lo, hi]."""

    lo: float
    hi: float
    terms: Terms

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return sum(c * r ** p if p else c * np.ones_like(r) for c, p in self.terms)

    @property
    def slope_terms(self) -> Terms:
        return tuple((c * p, p - 1.0) for c, p in self.terms if p)

    def slope(self, r):
        r = np.asarray(r, dtype=float)
        return sum((c * r ** p for c, p in self.slope_terms), np.zeros_like(r))


def _power_integral(lo: float, hi: float, e: float) -> float:
    """int_lo^hi r^e dr, the logarithm when e = -1."""
    if hi <= lo:
        return 0.0
    if abs(e + 1.0) < 1e-12:
        return math.log(hi / lo)
    return (hi ** (e + 1.0) - lo ** (e + 1.0)) / (e + 1.0)


def _radial_integral(lo: float, hi: float, left: Terms, right: Terms, n: int) -> float:
    """omega int_lo^hi (sum left)(sum right) r^{n-1} dr."""
    total = 0.0
    for c, p in left:
        for d, q in right:
            total += c * d * _power_integral(lo, hi, p + q + n - 1.0)
    return sphere_area(n) * total


def _mesa_pieces(spec: MesaSpec, partition: MesaPartition) -> List[_Piece]:
    """Pieces ordered from the center outwards, covering [0, T]."""
    a, b, T, alpha = spec.a, spec.b, spec.T, spec.alpha
    pieces = [_Piece(0.0, partition.r_inner, ((a, 0.0),))]
    for m in reversed(range(partition.depth)):
        rp, sp, sm, rm = partition.r_plus[m], partition.s_plus[m], partition.s_minus[m], partition.r_minus[m]
        pieces += [
            _Piece(partition.r_plus[m + 1], rm, ((a, 0.0),)),
            _Piece(rm, sm, ((-1.0, -alpha), (b + sm ** -alpha, 0.0))),
            _Piece(sm, sp, ((b, 0.0),)),
            _Piece(sp, rp, ((1.0, -alpha), (a - rp ** -alpha, 0.0))),
        ]
    pieces.append(_Piece(partition.r_plus[0], T, ((-2.0 * a / T, 1.0), (2.0 * a, 0.0))))
    return pieces


def _locate(pieces: List[_Piece], r: float) -> Optional[_Piece]:
    """The piece holding r, the inner one at a junction; None outside [0, T)."""
    his = np.array([p.hi for p in pieces])
    idx = int(np.searchsorted(his, r, side="left"))
    return pieces[idx] if idx < len(pieces) and r < pieces[-1].hi else None


def mesa_value(spec: MesaSpec, partition: MesaPartition, r: float) -> float:
    """
    U(r), frozen at a below r_{N+1}^+ and 0 from T on.

    Raises:
        ValueError: if r is negative
    """
    if r < 0:
        raise ValueError(f"Radius must be non-negative, got {r}")
    piece = _locate(_mesa_pieces(spec, partition), r)
    return 0.0 if piece is None else float(piece.value(r))


def mesa_profile(spec: MesaSpec, partition: MesaPartition, radii: Sequence[float]) -> np.ndarray:
    """
    Vectorized :func:`mesa_value`.

    Args:
        spec: mesa parameters
        partition: radii from :func:`build_partition`
        radii: non-negative distances from the center

    Returns:
        U at every radius, same shape as ``radii``
    """
    radii = np.asarray(radii, dtype=float)
    pieces = _mesa_pieces(spec, partition)
    his = np.array([p.hi for p in pieces])
    idx = np.searchsorted(his, radii, side="left")
    out = np.zeros_like(radii)
    inside = radii < spec.T
    for k, piece in enumerate(pieces):
        mask = inside & (idx == k)
        if np.any(mask):
            out[mask] = piece.value(radii[mask])
    return out


def mesa_slope(spec: MesaSpec, partition: MesaPartition, r: float) -> float:
    """U'(r) with the inner piece taken at junctions."""
    piece = _locate(_mesa_pieces(spec, partition), r)
    return 0.0 if piece is None else float(piece.slope(r))


def mesa_gradient(spec: MesaSpec, partition: MesaPartition, x: Sequence[float]) -> np.ndarray:
    """
    DU(x) = U'(r) (x - c)/r, zero at the center.

    Raises:
        ValueError: if x does not have the mesa's dimension
    """
    offset = np.asarray(x, dtype=float) - np.asarray(spec.center)
    if offset.shape != (spec.n,):
        raise ValueError(f"Point {x} does not have dimension {spec.n}")
    r = float(np.linalg.norm(offset))
    if r == 0.0:
        return np.zeros(spec.n)
    return mesa_slope(spec, partition, r) * offset / r


@dataclass(frozen=True)
class LevelEnergy:
    """Contributions of the annulus [r_{m+1}^+, r_m^+]."""

    m: int
    l2: float
    grad: float
    envelope: float


@dataclass
class MesaEnergy:
    l2_part: float
    grad_part: float
    outer_l2: float
    outer_grad: float
    core_l2: float
    levels: List[LevelEnergy] = field(default_factory=list)

    @property
    def grad_partial_sums(self) -> np.ndarray:
        return self.outer_grad + np.cumsum([lv.grad for lv in self.levels])

    @property
    def envelope_partial_sums(self) -> np.ndarray:
        return np.cumsum([lv.envelope for lv in self.levels])

    @property
    def total(self) -> float:
        return self.l2_part + self.grad_part


def envelope_energy(n: int, alpha: float, lo: float, hi: float) -> float:
    """omega int_lo^hi |D r^{-alpha}|^2 r^{n-1} dr."""
    return _radial_integral(lo, hi, ((-alpha, -alpha - 1.0),), ((-alpha, -alpha - 1.0),), n)


def mesa_h1_norm_sq(spec: MesaSpec, depth: Optional[int] = None) -> MesaEnergy:
    """
    Closed-form ||U||_L2^2 and ||DU||_L2^2 of the mesa truncated at ``depth``.

    Per level m the annulus [r_{m+1}^+, r_m^+] contributes its U^2 and |DU|^2
    integrals, plus the |Du|^2 integral of the envelope u = r^{-alpha}.
    """
    if not spec.subcritical:
        logger.warning(
            f"alpha = {spec.alpha:g} is not below (n-2)/2 = {spec.critical_alpha:g}: "
            f"the envelope r^-alpha has infinite Dirichlet energy and no longer dominates the mesa in H1"
        )
    partition = build_partition(spec, depth)
    pieces = _mesa_pieces(spec, partition)
    n = spec.n

    def energies(piece: _Piece) -> Tuple[float, float]:
        l2 = _radial_integral(piece.lo, piece.hi, piece.terms, piece.terms, n)
        grad = _radial_integral(piece.lo, piece.hi, piece.slope_terms, piece.slope_terms, n)
        return l2, grad

    core_l2, _ = energies(pieces[0])
    outer_l2, outer_grad = energies(pieces[-1])
    levels = []
    for m in range(partition.depth):
        # pieces of level m + 1 sit at indices 1 + 4 (N - 1 - m) .. + 4
        start = 1 + 4 * (partition.depth - 1 - m)
        parts = [energies(p) for p in pieces[start:start + 4]]
        lo, hi = partition.r_plus[m + 1], partition.r_plus[m]
        levels.append(
            LevelEnergy(
                m=m + 1,
                l2=sum(p[0] for p in parts),
                grad=sum(p[1] for p in parts),
                envelope=envelope_energy(n, spec.alpha, lo, hi),
            )
        )
    l2_part = core_l2 + outer_l2 + sum(lv.l2 for lv in levels)
    grad_part = outer_grad + sum(lv.grad for lv in levels)
    return MesaEnergy(l2_part, grad_part, outer_l2, outer_grad, core_l2, levels)


@dataclass(frozen=True)
class MembershipVerdict:
    """
    Tail behaviour of the level energies.

    ``ratio`` and ``convergent`` refer to the dominating envelope r^{-alpha};
    ``mesa_ratio`` is the same tail ratio for the gradient energy of the mesa
    itself, which stays below 1 for every alpha < n - 2.
    """

    ratio: float
    convergent: bool
    increments: Tuple[float, ...]
    mesa_ratio: float

    @property
    def label(self) -> str:
        return "envelope energy " + ("convergent" if self.convergent else "divergent")


def membership_verdict(energy: MesaEnergy) -> MembershipVerdict:
    """
    Decide whether the envelope r^{-alpha} has finite Dirichlet energy.

    The increment ratio E_N / E_{N-1} of the two deepest levels below 1 means the
    partial sums converge geometrically. It tends to 4^{-(n-2-2 alpha)}.

    Raises:
        ValueError: with fewer than two levels
    """
    increments = tuple(lv.envelope for lv in energy.levels)
    if len(increments) < 2:
        raise ValueError("Membership verdict needs at least two levels")
    ratio = increments[-1] / increments[-2]
    grads = [lv.grad for lv in energy.levels]
    mesa_ratio = grads[-1] / grads[-2] if grads[-2] > 0 else math.nan
    return MembershipVerdict(ratio, ratio < 1.0, increments, mesa_ratio)


@dataclass(frozen=True)
class RadialTestFunction:
    """phi(r) with derivative, supported in [0, radius]."""

    phi: Callable
    dphi: Callable
    radius: float
    sup: float

    @classmethod
    def zero(cls, radius: float = 1.0) -> "RadialTestFunction":
        return cls(lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                   lambda r: np.zeros_like(np.asarray(r, dtype=float)), radius, 0.0)


def mollifier_profile(radius: float) -> RadialTestFunction:
    """
    phi(r) = exp(1 - 1/(1 - (r/radius)^2)) inside the radius, 0 outside; phi(0) = 1.

    Raises:
        ValueError: if radius is not positive
    """
    if not radius > 0:
        raise ValueError(f"Support radius must be positive, got {radius}")

    def phi(r):
        s = np.asarray(r, dtype=float) / radius
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def dphi(r):
        s = np.asarray(r, dtype=float) / radius
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si ** 2)) * (-2.0 * si / (1.0 - si ** 2) ** 2) / radius
        return out

    return RadialTestFunction(phi, dphi, radius, 1.0)


@dataclass(frozen=True)
class WeakDerivativeReport:
    depth: int
    lhs: float
    rhs: float
    residual: float
    boundary_term: float
    boundary_bound: float


def weak_derivative_check(
    spec: MesaSpec,
    depth: int,
    testfn: RadialTestFunction,
    quad_points: int = DEFAULT_QUAD_POINTS,
    panels: int = DEFAULT_QUAD_PANELS,
) -> WeakDerivativeReport:
    """
    Integration by parts for the truncated mesa against Phi = (x - c) phi(r).

    Per coordinate, int U dPhi_i/dx_i = -int dU/dx_i Phi_i reduces to
    int U (n phi + r phi') = -int U' r phi on the radial measure, divided by n.
    Both sides are integrated over r >= r_{N+1}^+ with Gauss-Legendre panels on
    every smooth piece, so the residual equals the sphere term
    omega U phi r^n / n at r_{N+1}^+ up to quadrature error; the bound
    M (r_{N+1}^+)^{n-1} with M = omega max(|a|, |b|) sup|phi| T is reported too.

    Args:
        spec: mesa parameters
        depth: truncation level N + 1
        testfn: radial profile phi with its derivative
        quad_points: Gauss-Legendre points per panel
        panels: panels per smooth piece

    Returns:
        WeakDerivativeReport with both sides, their residual and the sphere term

    Raises:
        ValueError: if phi reaches beyond T or the quadrature is empty
    """
    if testfn.radius > spec.T:
        raise ValueError(f"Test function radius {testfn.radius:g} exceeds the support radius T = {spec.T:g}")
    if quad_points < 1 or panels < 1:
        raise ValueError("Quadrature needs at least one point and one panel")
    partition = build_partition(spec, depth)
    n, omega = spec.n, sphere_area(spec.n)
    eps = partition.r_inner

    def lhs_density(r, piece):
        return piece.value(r) * (n * testfn.phi(r) + r * testfn.dphi(r)) * omega * r ** (n - 1)

    def rhs_density(r, piece):
        return -piece.slope(r) * r * testfn.phi(r) * omega * r ** (n - 1)

    lhs = rhs = 0.0
    for piece in _mesa_pieces(spec, partition)[1:]:
        lo, hi = max(piece.lo, eps), min(piece.hi, testfn.radius)
        if hi <= lo:
            continue
        edges = np.linspace(lo, hi, panels + 1)
        for left, right in zip(edges[:-1], edges[1:]):
            lhs += fixed_quad(lhs_density, left, right, args=(piece,), n=quad_points)[0]
            rhs += fixed_quad(rhs_density, left, right, args=(piece,), n=quad_points)[0]
    lhs, rhs = lhs / n, rhs / n

    u_eps = mesa_value(spec, partition, eps)
    boundary = omega * abs(u_eps * float(testfn.phi(np.array([eps]))[0])) * eps ** n / n
    bound_M = omega * max(abs(spec.a), abs(spec.b)) * testfn.sup * spec.T
    return WeakDerivativeReport(
        depth=partition.depth,
        lhs=lhs,
        rhs=rhs,
        residual=abs(lhs - rhs),
        boundary_term=boundary,
        boundary_bound=bound_M * eps ** (n - 1),
    )


@dataclass(frozen=True)
class OscillationRow:
    delta: float
    f_max: float
    f_min: float

    @property
    def oscillation(self) -> float:
        return self.f_max - self.f_min


def oscillation_probe(
    nl: Nonlinearity,
    spec: MesaSpec,
    partition: MesaPartition,
    deltas: Sequence[float],
) -> List[OscillationRow]:
    """
    Values of f(U) on the deepest plateau pair inside B(c, delta).

    The innermost b-plateau [s_N^-, s_N^+] must be reached, i.e. delta > s_N^-;
    the a-plateau below it then lies inside the ball as well.

    Args:
        nl: nonlinearity applied to the plateau values
        spec: mesa parameters
        partition: radii from :func:`build_partition`
        deltas: ball radii in (0, T]

    Returns:
        One OscillationRow per delta, in input order

    Raises:
        ValueError: if a delta lies outside (0, T]
        DeltaTooSmall: if a delta does not reach the innermost b-plateau
    """
    N = partition.depth - 1
    limit = float(partition.s_minus[N])
    b_radius = 0.5 * (partition.s_minus[N] + partition.s_plus[N])
    a_radius = 0.5 * (partition.r_plus[N + 1] + partition.r_minus[N])
    rows = []
    for delta in deltas:
        if not 0 < delta <= spec.T:
            raise ValueError(f"delta must lie in (0, T = {spec.T:g}], got {delta}")
        if delta <= limit:
            raise DeltaTooSmall(delta, limit)
        b_at = min(b_radius, 0.5 * (limit + delta))
        values = np.array([mesa_value(spec, partition, b_at), mesa_value(spec, partition, a_radius)])
        images = np.broadcast_to(nl.f(values), values.shape)
        rows.append(OscillationRow(float(delta), float(images.max()), float(images.min())))
    return rows


def bump_cutoff(grid: Grid, center: Sequence[float], radius: float) -> Field:
    """
    Smooth gamma = 1 on B(center, r/2) and 0 outside B(center, r).

    On the shell, with s = (rho - r/2)/(r/2), gamma = phi(s)/(phi(s) + phi(1 - s))
    for the unit mollifier profile phi; both ends join flat.
    """
    if grid.radial:
        raise ValueError("The bump cutoff is built on box grids")
    if not radius > 0:
        raise ValueError(f"Cutoff radius must be positive, got {radius}")
    profile = mollifier_profile(1.0)
    center = np.asarray(center, dtype=float)

    def gamma(*coords):
        rho = np.sqrt(sum((x - c) ** 2 for x, c in zip(coords, center)))
        s = np.clip((rho - radius / 2.0) / (radius / 2.0), 0.0, 1.0)
        rise, fall = profile.phi(s), profile.phi(1.0 - s)
        return rise / (rise + fall)

    return Field.from_function(grid, gamma)


@dataclass(frozen=True)
class BumpRow:
    x_k: float
    lp_norm: float
    linf_norm: float
    lower_bound: float


def bump_sequence_probe(
    nl: Nonlinearity,
    grid: Grid,
    xs: Sequence[float],
    p: float,
    center: Optional[Sequence[float]] = None,
    radius: Optional[float] = None,
) -> List[BumpRow]:
    """
    ||f(x_k gamma)||_Lp on the grid for each x_k.

    ``lower_bound`` is |x_k| |B(center, r/2)|_h^{1/p}, the value of ||x_k gamma||_Lp
    restricted to the inner ball. Defaults: the box center and r = L/4.

    Raises:
        ValueError: on a radial grid, or if B(center, r) touches the boundary
    """
    if grid.radial:
        raise ValueError("The bump probe runs on box grids")
    L = grid.domain.extent
    center = (L / 2.0,) * grid.n if center is None else tuple(float(c) for c in center)
    radius = L / 4.0 if radius is None else float(radius)
    if len(center) != grid.n:
        raise ValueError(f"Center {center} does not have dimension {grid.n}")
    if not radius > 0 or any(c - radius <= 0 or c + radius >= L for c in center):
        raise ValueError(f"B({center}, {radius:g}) is not compactly contained in the box [0, {L:g}]^{grid.n}")

    gamma = bump_cutoff(grid, center, radius)
    rho = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coordinates(), center)))
    inner_measure = np.count_nonzero(rho <= radius / 2.0) * grid.weights
    rows = []
    for x_k in xs:
        u_k = float(x_k) * gamma
        image = u_k.with_values(np.broadcast_to(nl.f(u_k.values), u_k.values.shape))
        scale = 1.0 if math.isinf(p) else inner_measure ** (1.0 / p)
        rows.append(BumpRow(float(x_k), norm_lp(image, p), norm_lp(image, math.inf), abs(x_k) * scale))
    return rows
