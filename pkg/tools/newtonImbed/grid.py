"""
Domains, discrete fields and finite-difference calculus.

Box domains are discretized by uniform tensor grids of interior nodes; ball
domains are reduced to radially symmetric functions on a 1D grid that contains
the origin. Boundary values are homogeneous Dirichlet and never stored.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple
import logging
import math

import numpy as np
from scipy.special import gamma

logger = logging.getLogger(__name__)

DOMAIN_KINDS = ("box", "ball")


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0)


@dataclass(frozen=True)
class DomainSpec:
    """A box [0, L]^n or a ball B(center, R) in R^n, n in {1, 2, 3}."""

    kind: str
    n: int
    extent: float
    center: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"Unknown domain kind: {self.kind!r} (expected one of {DOMAIN_KINDS})")
        if self.n not in (1, 2, 3):
            raise ValueError(f"Dimension must be 1, 2 or 3, got {self.n}")
        if not self.extent > 0:
            raise ValueError(f"Domain extent must be positive, got {self.extent}")
        if self.kind == "ball":
            center = (0.0,) * self.n if self.center is None else tuple(float(c) for c in self.center)
            if len(center) != self.n:
                raise ValueError(f"Ball center {center} does not have dimension {self.n}")
            object.__setattr__(self, "center", center)
        elif self.center is not None:
            raise ValueError("A center is only meaningful for ball domains")

    @property
    def radial(self) -> bool:
        return self.kind == "ball"


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a domain.

    Box: ``res`` nodes per axis at x_k = (k+1)h, h = L/(res+1).
    Ball: ``res`` radial nodes r_i = i*h (origin included), h = R/res, the
    boundary r = R being the implicit node i = res.
    """

    domain: DomainSpec
    res: int
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.res) != self.res or self.res < 3:
            raise ValueError(f"Resolution must be an integer >= 3, got {self.res}")
        object.__setattr__(self, "_weights", self._node_measure())

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def radial(self) -> bool:
        return self.domain.radial

    @property
    def h(self) -> float:
        if self.radial:
            return self.domain.extent / self.res
        return self.domain.extent / (self.res + 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.res,) if self.radial else (self.res,) * self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def weights(self):
        """Node measure: scalar h^n on a box, control-shell volumes on a ball."""
        return self._weights

    def _node_measure(self):
        if not self.radial:
            return self.h ** self.n
        n, h = self.n, self.h
        outer = (np.arange(self.res) + 0.5) * h
        inner = np.concatenate(([0.0], outer[:-1]))
        return sphere_area(n) / n * (outer ** n - inner ** n)

    def radii(self) -> np.ndarray:
        """Radial node coordinates (ball grids only)."""
        if not self.radial:
            raise ValueError("radii() is only defined on radial grids")
        return np.arange(self.res) * self.h

    def face_radii(self) -> np.ndarray:
        """Radii r_{i+1/2} of the faces between consecutive radial nodes."""
        if not self.radial:
            raise ValueError("face_radii() is only defined on radial grids")
        return (np.arange(self.res) + 0.5) * self.h

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """Node coordinates: (r,) on a ball, an ij-indexed meshgrid on a box."""
        if self.radial:
            return (self.radii(),)
        axis = (np.arange(self.res) + 1) * self.h
        return tuple(np.meshgrid(*([axis] * self.n), indexing="ij"))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Discrete L2 inner product sum_i w_i u_i v_i."""
        return float(np.sum(self._weights * u * v))


@dataclass(frozen=True, eq=False)
class Field:
    """Real node values of a scalar function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.size:
            raise ValueError(f"Field has {values.size} values, grid expects {self.grid.size}")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> "Field":
        """Sample ``func`` at the nodes; it receives r (ball) or x_1..x_n (box)."""
        values = np.broadcast_to(func(*grid.coordinates()), grid.shape)
        return cls(grid, np.array(values, dtype=float))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise ValueError("Fields live on different grids")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, other) -> "Field":
        if isinstance(other, Field):
            self._check(other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return self.with_values(-self.values)


def inner(u: Field, v: Field) -> float:
    u._check(v)
    return u.grid.inner(u.values, v.values)


def _padded(values: np.ndarray) -> np.ndarray:
    return np.pad(values, 1)


def _shift(padded: np.ndarray, axis: int, offset: int) -> np.ndarray:
    """View of the interior block of ``padded`` shifted by ``offset`` along ``axis``."""
    index = [slice(1, -1)] * padded.ndim
    index[axis] = slice(1 + offset, padded.shape[axis] - 1 + offset)
    return padded[tuple(index)]


def _radial_fluxes(grid: Grid, values: np.ndarray) -> np.ndarray:
    """omega r_{i+1/2}^{n-1} (u_{i+1} - u_i)/h for i = 0..res-1, u_res = 0."""
    ext = np.append(values, 0.0)
    area = sphere_area(grid.n) * grid.face_radii() ** (grid.n - 1)
    return area * np.diff(ext) / grid.h


def laplacian(u: Field) -> Field:
    """
    Second-order discrete Laplacian with homogeneous Dirichlet boundary.

    On the box this is the (2n+1)-point stencil; on the ball it is the
    conservative flux difference divided by the shell volumes, so that
    sum(w * v * Delta_h u) = -sum(face fluxes) is symmetric in u and v.

    Args:
        u: field on any grid

    Returns:
        Field on the same grid holding Delta_h u
    """
    grid = u.grid
    if grid.radial:
        flux = _radial_fluxes(grid, u.values)
        divergence = flux - np.concatenate(([0.0], flux[:-1]))
        return u.with_values(divergence / grid.weights)
    padded = _padded(u.values)
    total = np.zeros(grid.shape)
    for axis in range(grid.n):
        total += _shift(padded, axis, 1) + _shift(padded, axis, -1) - 2.0 * u.values
    return u.with_values(total / grid.h ** 2)


def laplacian_diagonal(grid: Grid) -> np.ndarray:
    """
    Diagonal of -Delta_h, used as a Jacobi preconditioner.

    Args:
        grid: box or radial grid

    Returns:
        Array of the grid's shape, strictly positive
    """
    if not grid.radial:
        return np.full(grid.shape, 2.0 * grid.n / grid.h ** 2)
    area = sphere_area(grid.n) * grid.face_radii() ** (grid.n - 1) / grid.h
    inward = np.concatenate(([0.0], area[:-1]))
    return (area + inward) / grid.weights


def norm_lp(u: Field, p: float) -> float:
    """
    Discrete L^p norm with the node measure.

    Args:
        u: field to measure
        p: exponent, at least 1; ``math.inf`` gives max |u_i|

    Returns:
        (sum w_i |u_i|^p)^(1/p)

    Raises:
        ValueError: if p < 1 or p is nan
    """
    if not p >= 1:
        raise ValueError(f"L^p norm requires p >= 1, got {p}")
    magnitude = np.abs(u.values)
    if math.isinf(p):
        return float(magnitude.max())
    return float(np.sum(u.grid.weights * magnitude ** p) ** (1.0 / p))


def _gradient_energy(u: Field) -> float:
    grid = u.grid
    if grid.radial:
        slopes = np.diff(np.append(u.values, 0.0)) / grid.h
        face_measure = sphere_area(grid.n) * grid.face_radii() ** (grid.n - 1) * grid.h
        return float(np.sum(face_measure * slopes ** 2))
    padded = _padded(u.values)
    energy = 0.0
    for axis in range(grid.n):
        forward = np.diff(padded, axis=axis) / grid.h
        # keep the res+1 faces along this axis, drop the padding on the others
        index = [slice(1, -1)] * grid.n
        index[axis] = slice(None)
        energy += np.sum(forward[tuple(index)] ** 2) * grid.weights
    return float(energy)


def _hessian_energy(u: Field) -> float:
    grid = u.grid
    h = grid.h
    if grid.radial:
        ext = np.concatenate(([u.values[1]], u.values, [0.0]))
        second = (ext[2:] - 2.0 * ext[1:-1] + ext[:-2]) / h ** 2
        r = grid.radii()
        over_r = np.empty_like(second)
        over_r[0] = second[0]
        over_r[1:] = (ext[3:] - ext[1:-2]) / (2.0 * h * r[1:])
        density = second ** 2 + (grid.n - 1) * over_r ** 2
        return float(np.sum(grid.weights * density))
    padded = _padded(u.values)
    energy = 0.0
    for i in range(grid.n):
        d_ii = (_shift(padded, i, 1) - 2.0 * u.values + _shift(padded, i, -1)) / h ** 2
        energy += np.sum(d_ii ** 2)
        for j in range(i + 1, grid.n):
            corners = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                index = [slice(1, -1)] * grid.n
                index[i] = slice(1 + si, padded.shape[i] - 1 + si)
                index[j] = slice(1 + sj, padded.shape[j] - 1 + sj)
                corners.append(padded[tuple(index)])
            d_ij = (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * h ** 2)
            energy += 2.0 * np.sum(d_ij ** 2)
    return float(energy * grid.weights)


def norm_h1(u: Field) -> float:
    """
    sqrt(||u||^2 + sum_i ||D_i u||^2) with forward differences.

    The differences run over every face, boundary faces included, so the
    zero boundary values count.
    """
    return math.sqrt(norm_lp(u, 2) ** 2 + _gradient_energy(u))


def norm_h2(u: Field) -> float:
    """H1 norm plus all centered second differences D_ij of the zero extension."""
    return math.sqrt(norm_lp(u, 2) ** 2 + _gradient_energy(u) + _hessian_energy(u))


def write_field(u: Field, path: Path) -> Path:
    """
    Dump a field: header ``n res h kind`` then row-major values, 17 digits.

    Args:
        u: field to write
        path: destination; parent directories are created

    Returns:
        The path written
    """
    grid = u.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = u.values.reshape(-1, grid.res)
    with path.open("w", encoding="utf-8") as f:
        f.write(f"{grid.n} {grid.res} {grid.h:.17g} {grid.domain.kind}\n")
        np.savetxt(f, rows, fmt="%.17g")
    logger.debug(f"Wrote field dump {path}")
    return path


def read_field(path: Path, domain: DomainSpec) -> Field:
    """
    Read a field dump written by :func:`write_field` for ``domain``.

    Raises:
        ValueError: if the header is malformed or names another domain
        OSError: if the file cannot be read
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().split()
        values = np.loadtxt(f, ndmin=1)
    if len(header) != 4:
        raise ValueError(f"Malformed field header in {path}: {header}")
    n, res, kind = int(header[0]), int(header[1]), header[3]
    if n != domain.n or kind != domain.kind:
        raise ValueError(f"Field dump {path} is for a {n}-dimensional {kind}, not {domain}")
    return Field(Grid(domain, res), values.ravel())
