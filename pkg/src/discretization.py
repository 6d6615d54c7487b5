"""
Grids, fields and discrete operators

A Field is a numpy array with the grid's shape (axis 0 is x, axis 1 is y on
planar grids; a single r axis on radial grids). Admissible fields vanish on
every boundary node.

The discrete Dirichlet energy is 1/2 u^T K u with K the edge-based stiffness
matrix, and the nodal weights w are the dual-cell volumes, so that
K u = -w * laplacian_apply(u) on interior nodes. Functional, gradient and
PDE residual are therefore mutually consistent.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg, factorized
from scipy.special import gamma

from .errors import ConfigError, LinearSolverError

logger = logging.getLogger(__name__)

MIN_NODES = 17
GRID_KINDS = ("box", "disk", "radial")


def sphere_area(dimension: int) -> float:
    """Surface measure of the unit sphere S^{N-1}"""
    return float(2.0 * np.pi ** (dimension / 2.0) / gamma(dimension / 2.0))


def _path_laplacian(n: int) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True)
class Grid:
    """Node-centred discretization of a box, a masked disk or a radial ball"""
    kind: str
    shape: Tuple[int, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    dimension: int = 2
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in GRID_KINDS:
            raise ConfigError(f"Unknown grid kind '{self.kind}'")
        if any(n < MIN_NODES for n in self.shape):
            raise ConfigError(f"Grid needs at least {MIN_NODES} nodes per axis, got {self.shape}")
        if self.kind == "radial" and self.dimension not in (2, 3):
            raise ConfigError(f"Radial grids support N in {{2, 3}}, got {self.dimension}")
        if self.kind != "radial" and self.dimension != 2:
            raise ConfigError("Planar grids have dimension 2")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ConfigError("Grid bounds must satisfy lower < upper")

    @classmethod
    def box(cls, n: int, xmin: float = -1.0, xmax: float = 1.0,
            ymin: float = -1.0, ymax: float = 1.0, ny: Optional[int] = None) -> "Grid":
        return cls("box", (n, ny or n), (xmin, ymin), (xmax, ymax))

    @classmethod
    def disk(cls, n: int, radius: float = 1.0) -> "Grid":
        return cls("disk", (n, n), (-radius, -radius), (radius, radius), radius=radius)

    @classmethod
    def radial(cls, n: int, radius: float = 1.0, dimension: int = 3) -> "Grid":
        return cls("radial", (n,), (0.0,), (radius,), dimension=dimension, radius=radius)

    def describe(self) -> Dict:
        return {"kind": self.kind, "shape": list(self.shape), "lower": list(self.lower),
                "upper": list(self.upper), "dimension": self.dimension, "radius": self.radius}

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((u - l) / (n - 1) for l, u, n in zip(self.lower, self.upper, self.shape))

    @property
    def h(self) -> float:
        return min(self.spacing)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(l, u, n) for l, u, n in zip(self.lower, self.upper, self.shape))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape grid.shape + (d,)"""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def norm(self) -> np.ndarray:
        """|x| at every node (r on radial grids)"""
        return np.linalg.norm(self.points, axis=-1)

    @cached_property
    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.kind == "radial":
            mask[:-1] = True
            return mask
        mask[1:-1, 1:-1] = True
        if self.kind == "disk":
            mask &= self.norm < self.radius * (1.0 - 1e-12)
        return mask

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.interior.ravel())

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights; on interior nodes these are the dual-cell volumes"""
        if self.kind == "radial":
            h = self.spacing[0]
            r = self.coords[0]
            outer = np.minimum(r + h / 2.0, self.radius)
            inner = np.maximum(r - h / 2.0, 0.0)
            N = self.dimension
            return sphere_area(N) / N * (outer ** N - inner ** N)
        hx, hy = self.spacing
        if self.kind == "disk":
            return np.where(self.interior, hx * hy, 0.0)
        wx = np.full(self.shape[0], hx)
        wx[[0, -1]] = hx / 2.0
        wy = np.full(self.shape[1], hy)
        wy[[0, -1]] = hy / 2.0
        return np.outer(wx, wy)

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Edge-based stiffness matrix over all nodes"""
        if self.kind == "radial":
            h = self.spacing[0]
            r_mid = self.coords[0][:-1] + h / 2.0
            c = sphere_area(self.dimension) * r_mid ** (self.dimension - 1) / h
            main = np.zeros(self.shape[0])
            main[:-1] += c
            main[1:] += c
            return sp.diags([-c, main, -c], [-1, 0, 1], format="csr")
        hx, hy = self.spacing
        nx, ny = self.shape
        return ((hy / hx) * sp.kron(_path_laplacian(nx), sp.identity(ny))
                + (hx / hy) * sp.kron(sp.identity(nx), _path_laplacian(ny))).tocsr()

    @cached_property
    def interior_stiffness(self) -> sp.csc_matrix:
        idx = self.interior_index
        return self.stiffness[idx][:, idx].tocsc()

    @cached_property
    def poisson_factor(self) -> Callable[[np.ndarray], np.ndarray]:
        """Cached sparse factorization of the interior Dirichlet stiffness"""
        logger.debug(f"Factorizing Dirichlet stiffness with {len(self.interior_index)} unknowns")
        return factorized(self.interior_stiffness)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float).ravel()[self.interior_index]

    def extend(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.interior_index] = values
        return out.reshape(self.shape)

    def is_admissible(self, u: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(u)) and np.all(u[~self.interior] == 0.0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Whether points (shape (..., d)) lie in the closed domain"""
        points = np.asarray(points, dtype=float)
        if self.kind in ("disk", "radial"):
            return np.linalg.norm(points, axis=-1) <= self.radius
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        return np.all((points >= lower) & (points <= upper), axis=-1)

    def contains_ball(self, center: np.ndarray, r: float) -> bool:
        center = np.asarray(center, dtype=float)
        if self.kind in ("disk", "radial"):
            return float(np.linalg.norm(center)) + r <= self.radius
        return bool(np.all(center - r >= np.asarray(self.lower))
                    and np.all(center + r <= np.asarray(self.upper)))

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance from every node to the boundary of the domain"""
        if self.kind in ("disk", "radial"):
            return np.maximum(self.radius - self.norm, 0.0)
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        return np.min(np.minimum(self.points - lower, upper - self.points), axis=-1)

    def interpolator(self, u: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Piecewise (bi)linear interpolant of u; NaN outside the domain"""
        if self.kind == "radial":
            r = self.coords[0]

            def radial_eval(points: np.ndarray) -> np.ndarray:
                rho = np.linalg.norm(np.atleast_2d(points), axis=-1)
                values = np.interp(rho, r, u)
                return np.where(rho <= self.radius, values, np.nan)

            return radial_eval
        return RegularGridInterpolator(self.coords, u, method="linear",
                                       bounds_error=False, fill_value=np.nan)


def laplacian_apply(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Discrete Laplacian (5-point or conservative radial); zero on boundary nodes"""
    flux = grid.stiffness @ np.asarray(u, dtype=float).ravel()
    out = np.zeros(grid.size)
    idx = grid.interior_index
    out[idx] = -flux[idx] / grid.weights.ravel()[idx]
    return out.reshape(grid.shape)


def integrate(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(grid.weights * f))


def dirichlet_form(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete <grad u, grad v>, i.e. u^T K v"""
    return float(np.asarray(u, dtype=float).ravel() @ (grid.stiffness @ np.asarray(v, dtype=float).ravel()))


def gradient_field(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Centred differences inside, one-sided at the edges; shape (d,) + grid.shape"""
    grads = np.gradient(np.asarray(u, dtype=float), *grid.spacing)
    if grid.kind == "radial":
        grads = [grads]
    return np.stack(grads)


def gradient_magnitude(grid: Grid, u: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(gradient_field(grid, u) ** 2, axis=0))


def dirichlet_riesz(grid: Grid, r: np.ndarray) -> np.ndarray:
    """H^1_0 representative d of the L^2 field r: -Delta_h d = r, d = 0 on the boundary"""
    rhs = grid.weights.ravel()[grid.interior_index] * grid.restrict(r)
    return grid.extend(grid.poisson_factor(rhs))


def linear_solve(grid: Grid, rhs: np.ndarray, shift: Optional[np.ndarray] = None,
                 tol: float = 1e-10, maxiter: Optional[int] = None) -> np.ndarray:
    """
    Solve (-Delta_h + shift) u = rhs with zero Dirichlet data by conjugate gradients

    The system is symmetrized with the dual-cell volumes, so shift >= 0 gives
    an SPD operator. Raises LinearSolverError when the relative residual
    stays above tol.
    """
    idx = grid.interior_index
    w = grid.weights.ravel()[idx]
    A = grid.interior_stiffness
    if shift is not None:
        diag = np.broadcast_to(np.asarray(shift, dtype=float), grid.shape).ravel()[idx]
        A = (A + sp.diags(w * diag)).tocsr()
    b = w * grid.restrict(rhs)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return grid.zeros()

    maxiter = maxiter or 10 * len(idx)
    x, info = cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter)
    residual = np.linalg.norm(b - A @ x) / b_norm
    if info == 0 and residual > tol:
        # recursive and true residuals drift apart; one warm restart closes the gap
        x, info = cg(A, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter)
        residual = np.linalg.norm(b - A @ x) / b_norm
    if info != 0 or residual > tol:
        raise LinearSolverError(f"CG stopped at relative residual {residual:.3e} (info={info})",
                                residual=float(residual))
    logger.debug(f"CG converged: relative residual {residual:.3e}")
    return grid.extend(x)
