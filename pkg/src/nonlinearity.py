"""
Admissible right-hand sides g(x, s), their primitives G and structural checks

Every model is an immutable dataclass with closed-form g, G and dg = dg/ds.
Points x are arrays whose last axis holds coordinates (x=None stands for the
origin); s is a nonnegative scalar or array broadcastable against x[..., 0].
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma, gammainc

from .errors import DomainError
from .models import StructureReport

logger = logging.getLogger(__name__)

WEIGHTS = ("polynomial", "radial_polynomial", "saturating")


def critical_exponent(dimension: int) -> float:
    """2* = 2N/(N-2); infinite for N <= 2"""
    if dimension <= 2:
        return float("inf")
    return 2.0 * dimension / (dimension - 2.0)


def _nonnegative(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("g and G are defined for s >= 0; apply the positive part first")
    return s


def _squared_norm(x) -> np.ndarray:
    if x is None:
        return np.float64(0.0)
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


class NonlinearityModel(ABC):
    """Base class of the closed catalog of nonlinearities"""

    variant: str = ""

    @property
    @abstractmethod
    def mu(self) -> float:
        """Exponent of the superlinearity condition"""

    @property
    @abstractmethod
    def growth(self):
        """Subcritical exponent p, or 'critical' / 'exponential'"""

    @abstractmethod
    def g(self, x, s) -> np.ndarray: ...

    @abstractmethod
    def G(self, x, s) -> np.ndarray: ...

    @abstractmethod
    def dg(self, x, s) -> np.ndarray: ...

    def describe(self) -> Dict:
        data = {"variant": self.variant, "mu": self.mu, "growth": self.growth}
        data.update(self.__dict__)
        return data

    def sample_range(self) -> Tuple[float, float]:
        return 1e-3, 1e1


@dataclass(frozen=True)
class PurePower(NonlinearityModel):
    p: float
    variant = "pure_power"

    def __post_init__(self):
        if self.p <= 2:
            raise DomainError(f"PurePower needs p > 2, got {self.p}")

    @property
    def mu(self) -> float:
        return self.p

    @property
    def growth(self):
        return self.p

    def g(self, x, s):
        return _nonnegative(s) ** (self.p - 1.0)

    def G(self, x, s):
        return _nonnegative(s) ** self.p / self.p

    def dg(self, x, s):
        return (self.p - 1.0) * _nonnegative(s) ** (self.p - 2.0)


@dataclass(frozen=True)
class SumOfPowers(NonlinearityModel):
    p_list: Tuple[float, ...]
    variant = "sum_of_powers"

    def __post_init__(self):
        if not self.p_list or min(self.p_list) <= 2:
            raise DomainError(f"SumOfPowers needs exponents > 2, got {self.p_list}")

    @property
    def mu(self) -> float:
        return min(self.p_list)

    @property
    def growth(self):
        return max(self.p_list)

    def g(self, x, s):
        s = _nonnegative(s)
        return sum(s ** (p - 1.0) for p in self.p_list)

    def G(self, x, s):
        s = _nonnegative(s)
        return sum(s ** p / p for p in self.p_list)

    def dg(self, x, s):
        s = _nonnegative(s)
        return sum((p - 1.0) * s ** (p - 2.0) for p in self.p_list)


@dataclass(frozen=True)
class WeightedPower(NonlinearityModel):
    """
    g = a(x, s) s^{mu-1} with a weight from the fixed catalog:
      polynomial         a = a3 + a4 s^{p-mu}
      radial_polynomial  a = (1 + |x|^2)(a3 + a4 s^{p-mu})
      saturating         a = a3 + a4 (1 - e^{-s})
    """
    mu_exponent: float
    p: float = 4.0
    a3: float = 1.0
    a4: float = 1.0
    weight: str = "polynomial"
    variant = "weighted_power"

    def __post_init__(self):
        if self.weight not in WEIGHTS:
            raise DomainError(f"Unknown weight '{self.weight}', expected one of {WEIGHTS}")
        if self.mu_exponent <= 2:
            raise DomainError(f"WeightedPower needs mu > 2, got {self.mu_exponent}")
        if self.weight != "saturating" and self.p <= self.mu_exponent:
            raise DomainError(f"Polynomial weights need p > mu, got p={self.p}, mu={self.mu_exponent}")
        if self.a3 <= 0 or self.a4 <= 0:
            raise DomainError("Weight coefficients a3, a4 must be positive")

    @property
    def mu(self) -> float:
        return self.mu_exponent

    @property
    def growth(self):
        return self.mu_exponent if self.weight == "saturating" else self.p

    def _spatial(self, x):
        if self.weight == "radial_polynomial":
            return 1.0 + _squared_norm(x)
        return 1.0

    def g(self, x, s):
        s = _nonnegative(s)
        m = self.mu_exponent
        if self.weight == "saturating":
            a = self.a3 - self.a4 * np.expm1(-s)
            return a * s ** (m - 1.0)
        return self._spatial(x) * (self.a3 * s ** (m - 1.0) + self.a4 * s ** (self.p - 1.0))

    def G(self, x, s):
        s = _nonnegative(s)
        m = self.mu_exponent
        if self.weight == "saturating":
            # int_0^s t^{m-1} e^{-t} dt = Gamma(m) P(m, s)
            tail = s ** m / m - gamma(m) * gammainc(m, s)
            return self.a3 * s ** m / m + self.a4 * tail
        return self._spatial(x) * (self.a3 * s ** m / m + self.a4 * s ** self.p / self.p)

    def dg(self, x, s):
        s = _nonnegative(s)
        m = self.mu_exponent
        if self.weight == "saturating":
            a = self.a3 - self.a4 * np.expm1(-s)
            return self.a4 * np.exp(-s) * s ** (m - 1.0) + (m - 1.0) * a * s ** (m - 2.0)
        return self._spatial(x) * (self.a3 * (m - 1.0) * s ** (m - 2.0)
                                   + self.a4 * (self.p - 1.0) * s ** (self.p - 2.0))


@dataclass(frozen=True)
class CriticalCombo(NonlinearityModel):
    """g = kappa s^{2*-1} + lam s^{mu-1} in dimension N >= 3"""
    kappa: float
    lam: float
    mu_exponent: float
    dimension: int = 3
    variant = "critical"

    def __post_init__(self):
        if self.dimension < 3:
            raise DomainError("The critical model needs N >= 3")
        if self.kappa <= 0 or self.lam <= 0:
            raise DomainError("kappa and lambda must be positive")
        if not 2 < self.mu_exponent < self.critical:
            raise DomainError(f"Need 2 < mu < 2* = {self.critical}, got {self.mu_exponent}")

    @property
    def critical(self) -> float:
        return critical_exponent(self.dimension)

    @property
    def mu(self) -> float:
        return self.mu_exponent

    @property
    def growth(self):
        return "critical"

    def g(self, x, s):
        s = _nonnegative(s)
        return self.kappa * s ** (self.critical - 1.0) + self.lam * s ** (self.mu_exponent - 1.0)

    def G(self, x, s):
        s = _nonnegative(s)
        c, m = self.critical, self.mu_exponent
        return self.kappa * s ** c / c + self.lam * s ** m / m

    def dg(self, x, s):
        s = _nonnegative(s)
        c, m = self.critical, self.mu_exponent
        return self.kappa * (c - 1.0) * s ** (c - 2.0) + self.lam * (m - 1.0) * s ** (m - 2.0)


@dataclass(frozen=True)
class ExponentialN2(NonlinearityModel):
    """g = a1 s (e^{a2 s^2} - 1), Trudinger-Moser growth for N = 2 (mu = 4)"""
    a1: float
    a2: float
    variant = "exponential"

    def __post_init__(self):
        if self.a1 <= 0 or self.a2 <= 0:
            raise DomainError("a1 and a2 must be positive")

    @property
    def mu(self) -> float:
        return 4.0

    @property
    def growth(self):
        return "exponential"

    def sample_range(self) -> Tuple[float, float]:
        return 1e-3, min(2.0, 4.0 / np.sqrt(self.a2))

    def g(self, x, s):
        s = _nonnegative(s)
        return self.a1 * s * np.expm1(self.a2 * s * s)

    def G(self, x, s):
        s = _nonnegative(s)
        z = self.a2 * s * s
        # expm1(z) - z loses every digit for small z
        series = z * z * (1 / 2 + z * (1 / 6 + z * (1 / 24 + z * (1 / 120 + z / 720))))
        excess = np.where(z < 1e-2, series, np.expm1(z) - z)
        return self.a1 * excess / (2.0 * self.a2)

    def dg(self, x, s):
        s = _nonnegative(s)
        z = self.a2 * s * s
        return self.a1 * (np.expm1(z) + 2.0 * z * np.exp(z))


def eval_g(model: NonlinearityModel, x, s) -> np.ndarray:
    return model.g(x, s)


def eval_dg(model: NonlinearityModel, x, s) -> np.ndarray:
    return model.dg(x, s)


def eval_G(model: NonlinearityModel, x, s, method: str = "closed") -> np.ndarray:
    """Primitive G(x, s); method='quad' integrates g adaptively (abs tol 1e-10)"""
    if method == "closed":
        return model.G(x, s)
    if method != "quad":
        raise ValueError(f"Unknown primitive method '{method}'")
    s = _nonnegative(s)

    def primitive(si: float) -> float:
        value, _ = quad(lambda t: float(model.g(x, t)), 0.0, si, epsabs=1e-10, epsrel=1e-12, limit=200)
        return value

    return np.vectorize(primitive, otypes=[float])(s)


def geometric_samples(lo: float, hi: float, per_decade: int = 1000) -> np.ndarray:
    """Geometric grid with the given density per decade"""
    count = max(2, int(np.ceil(np.log10(hi / lo) * per_decade)) + 1)
    return np.geomspace(lo, hi, count)


def default_samples(model: NonlinearityModel) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = model.sample_range()
    ss = geometric_samples(lo, hi)
    ts = np.concatenate([np.linspace(0.05, 1.0, 20), np.linspace(1.0, 4.0, 13)[1:]])
    return ss, ts


def check_structure(model: NonlinearityModel, sample_xs: Iterable, sample_ss: Sequence[float],
                    sample_ts: Sequence[float]) -> StructureReport:
    """
    Worst sampled slacks of g(x, 0) = 0 with g > 0 for s > 0, the
    superlinearity inequality 0 < mu G <= s g, the homogeneity bounds
    g(ts) <= t^{mu-1} g(s) for t <= 1 and the reverse for t >= 1, the
    monotone maps g / s^{mu-1} and s g / mu - G, and the lower
    growth G(s) >= G(1) s^mu for s >= 1. Slacks are relative to the size of
    the compared terms (at least 1).
    """
    ss = np.sort(np.asarray(sample_ss, dtype=float))
    ts = np.asarray(sample_ts, dtype=float)
    if ss.size == 0 or ts.size == 0 or np.any(ss <= 0):
        raise DomainError("check_structure needs nonempty samples with s > 0")
    mu = model.mu
    report = StructureReport(model=model.variant, mu=mu)

    for x in sample_xs:
        g = model.g(x, ss)
        G = model.G(x, ss)
        sg = ss * g
        report.zero_value = max(report.zero_value, float(np.max(np.abs(model.g(x, np.zeros(1))))))
        report.min_positive_value = min(report.min_positive_value, float(np.min(g)))

        report.check("ar_lower").update(mu * G, np.maximum(1.0, np.abs(sg)))
        report.check("ar_upper").update(sg - mu * G, np.maximum(1.0, np.abs(sg)))

        S, T = np.meshgrid(ss, ts, indexing="ij")
        g_ts = model.g(x, T * S)
        scaled = T ** (mu - 1.0) * model.g(x, S)
        scale = np.maximum(1.0, np.maximum(np.abs(g_ts), np.abs(scaled)))
        below = T <= 1.0
        above = T >= 1.0
        report.check("homogeneity_below").update((scaled - g_ts)[below], scale[below])
        report.check("homogeneity_above").update((g_ts - scaled)[above], scale[above])

        ratio = g / ss ** (mu - 1.0)
        report.check("ratio_monotone").update(
            np.diff(ratio), np.maximum(1.0, np.maximum(np.abs(ratio[1:]), np.abs(ratio[:-1]))))
        excess = sg / mu - G
        report.check("excess_monotone").update(
            np.diff(excess), np.maximum(1.0, np.maximum(sg[1:], sg[:-1])))

        large = ss >= 1.0
        lower_growth = G[large] - model.G(x, 1.0) * ss[large] ** mu
        report.check("lower_growth").update(lower_growth, np.maximum(1.0, np.abs(G[large])))

        step = 1e-5 * np.maximum(1.0, ss)
        inner = ss > 2 * step
        derivative = (model.G(x, ss[inner] + step[inner]) - model.G(x, ss[inner] - step[inner])) / (2 * step[inner])
        error = np.abs(derivative - g[inner]) / (1.0 + np.abs(g[inner]))
        if error.size:
            report.primitive_error = max(report.primitive_error, float(np.max(error)))

        sample = ss[:: max(1, ss.size // 16)]
        quad_error = np.abs(eval_G(model, x, sample, method="quad") - model.G(x, sample)) / (1.0 + np.abs(model.G(x, sample)))
        report.quadrature_error = max(report.quadrature_error, float(np.max(quad_error)))

    logger.debug(f"Structure check for {model.variant}: "
                 + ", ".join(f"{k}={c.worst_relative:.2e}" for k, c in report.checks.items()))
    return report


def build_model(variant: str, **params) -> NonlinearityModel:
    """Construct a catalog model from its variant name and numeric parameters"""
    if variant == "pure_power":
        return PurePower(p=float(params["p"]))
    if variant == "sum_of_powers":
        return SumOfPowers(p_list=tuple(float(p) for p in params["p_list"]))
    if variant == "weighted_power":
        return WeightedPower(mu_exponent=float(params["mu"]), p=float(params.get("p", 4.0)),
                             a3=float(params.get("a3", 1.0)), a4=float(params.get("a4", 1.0)),
                             weight=params.get("weight", "polynomial"))
    if variant == "critical":
        return CriticalCombo(kappa=float(params["kappa"]), lam=float(params["lam"]),
                             mu_exponent=float(params["mu"]), dimension=int(params.get("dimension", 3)))
    if variant == "exponential":
        return ExponentialN2(a1=float(params["a1"]), a2=float(params["a2"]))
    raise DomainError(f"Unknown nonlinearity variant '{variant}'")
