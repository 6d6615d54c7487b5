"""
Bump profile, sharp functional J and regularized functional J_eps

All integrals use the nodal quadrature of the grid, so that the gradient of
the discrete J_eps is exactly w * residual on interior nodes.
"""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
import scipy.sparse as sp

from .discretization import Grid, dirichlet_form, integrate, laplacian_apply
from .errors import ConfigError
from .nonlinearity import CriticalCombo, ExponentialN2, NonlinearityModel, critical_exponent

logger = logging.getLogger(__name__)

BUMP_MAX = 1.875


def bump_eval(s) -> Tuple[np.ndarray, np.ndarray]:
    """beta(s) = 30 s^2 (1-s)^2 on [0, 1] and its running integral B"""
    s = np.asarray(s, dtype=float)
    c = np.clip(s, 0.0, 1.0)
    beta = np.where((s > 0.0) & (s < 1.0), 30.0 * c * c * (1.0 - c) ** 2, 0.0)
    B = np.clip(c ** 3 * (10.0 - 15.0 * c + 6.0 * c * c), 0.0, 1.0)
    return beta, B


def bump_derivative(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.where((s > 0.0) & (s < 1.0), 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s), 0.0)


def positive_part(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split u into u- = min(u, 1) and u+ = (u - 1)_+"""
    u = np.asarray(u, dtype=float)
    plus = np.maximum(u - 1.0, 0.0)
    return u - plus, plus


def check_compatibility(grid: Grid, model: NonlinearityModel):
    """Reject grid/model pairs the functional is not defined for"""
    if isinstance(model, CriticalCombo):
        if grid.kind != "radial" or grid.dimension != model.dimension:
            raise ConfigError(f"The critical model with N={model.dimension} needs a radial grid of the same dimension")
        return
    if isinstance(model, ExponentialN2):
        if grid.dimension != 2:
            raise ConfigError("Exponential growth is only admissible for N = 2")
        return
    growth = model.growth
    if grid.dimension >= 3 and growth >= critical_exponent(grid.dimension):
        raise ConfigError(f"Growth exponent {growth} is not subcritical for N={grid.dimension}")


@dataclass(frozen=True)
class RegularizedFunctional:
    """J_eps(u) = int 1/2 |grad u|^2 + B((u-1)/eps) - G(x, (u-1)_+) on a fixed grid"""
    grid: Grid
    model: NonlinearityModel
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        check_compatibility(self.grid, self.model)

    def with_eps(self, eps: float) -> "RegularizedFunctional":
        return replace(self, eps=eps)

    @cached_property
    def _points(self) -> np.ndarray:
        return self.grid.points

    def source(self, s: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.model.g(self._points, s), self.grid.shape)

    def potential(self, s: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.model.G(self._points, s), self.grid.shape)

    def source_derivative(self, s: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.model.dg(self._points, s), self.grid.shape)

    def terms(self, u: np.ndarray) -> Dict[str, float]:
        """Dirichlet, layer (B), indicator and potential contributions"""
        u = np.asarray(u, dtype=float)
        _, plus = positive_part(u)
        _, B = bump_eval((u - 1.0) / self.eps)
        return {
            "dirichlet": 0.5 * dirichlet_form(self.grid, u, u),
            "layer": integrate(self.grid, B),
            "indicator": integrate(self.grid, (u > 1.0).astype(float)),
            "potential": integrate(self.grid, self.potential(plus)),
        }

    def value(self, u: np.ndarray) -> float:
        t = self.terms(u)
        return t["dirichlet"] + t["layer"] - t["potential"]

    def sharp_value(self, u: np.ndarray) -> float:
        t = self.terms(u)
        return t["dirichlet"] + t["indicator"] - t["potential"]

    def residual(self, u: np.ndarray) -> np.ndarray:
        """-Delta_h u + beta((u-1)/eps)/eps - g(x, (u-1)_+) on interior nodes, 0 elsewhere"""
        u = np.asarray(u, dtype=float)
        _, plus = positive_part(u)
        beta, _ = bump_eval((u - 1.0) / self.eps)
        r = -laplacian_apply(self.grid, u) + beta / self.eps - self.source(plus)
        return np.where(self.grid.interior, r, 0.0)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Nodal gradient of the discrete J_eps: w * residual"""
        return self.grid.weights * self.residual(u)

    def norm(self, r: np.ndarray) -> float:
        return float(np.sqrt(integrate(self.grid, r * r)))

    def residual_norm(self, u: np.ndarray) -> float:
        """||r||_h relative to max(1, ||Delta_h u||_h)"""
        scale = max(1.0, self.norm(laplacian_apply(self.grid, u)))
        return self.norm(self.residual(u)) / scale

    def jacobian(self, u: np.ndarray) -> sp.csc_matrix:
        """Interior Jacobian of the gradient: K + W diag(beta'/eps^2 - dg/ds [u > 1])"""
        u = np.asarray(u, dtype=float)
        _, plus = positive_part(u)
        curvature = bump_derivative((u - 1.0) / self.eps) / self.eps ** 2
        curvature = curvature - np.where(u > 1.0, self.source_derivative(plus), 0.0)
        idx = self.grid.interior_index
        w = self.grid.weights.ravel()[idx]
        return (self.grid.interior_stiffness + sp.diags(w * curvature.ravel()[idx])).tocsc()


def eval_J(F: RegularizedFunctional, u: np.ndarray) -> float:
    return F.sharp_value(u)


def eval_Jeps(F: RegularizedFunctional, u: np.ndarray) -> float:
    return F.value(u)


def residual_eq13(F: RegularizedFunctional, u: np.ndarray) -> np.ndarray:
    return F.residual(u)


def layer_measure(F: RegularizedFunctional, u: np.ndarray) -> float:
    """Quadrature measure of the transition layer {1 < u < 1 + eps}"""
    u = np.asarray(u, dtype=float)
    return integrate(F.grid, ((u > 1.0) & (u < 1.0 + F.eps)).astype(float))
