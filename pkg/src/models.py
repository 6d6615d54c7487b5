"""
Data models for the free-boundary laboratory
"""

from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np


SCHEMA_VERSION = 1


def to_builtin(value):
    """Recursively convert numpy scalars/arrays into JSON-friendly builtins"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # json has no inf/nan literals
        if not np.isfinite(value):
            return str(value)
        return value
    return value


@dataclass
class InequalityCheck:
    """Worst sampled slack of one structural inequality"""
    name: str
    worst_relative: float = float("inf")
    worst_absolute: float = float("inf")
    samples: int = 0

    def update(self, slack: np.ndarray, scale: np.ndarray):
        slack = np.asarray(slack, dtype=float).ravel()
        if slack.size == 0:
            return
        scale = np.broadcast_to(np.asarray(scale, dtype=float), slack.shape).ravel()
        relative = slack / scale
        k = int(np.argmin(relative))
        if relative[k] < self.worst_relative:
            self.worst_relative = float(relative[k])
            self.worst_absolute = float(slack[k])
        self.samples += slack.size

    def holds(self, tol: float) -> bool:
        return self.samples == 0 or self.worst_relative >= -tol


@dataclass
class StructureReport:
    """Result of sampling the structural hypotheses of a nonlinearity"""
    model: str
    mu: float
    checks: Dict[str, InequalityCheck] = field(default_factory=dict)
    zero_value: float = 0.0
    min_positive_value: float = float("inf")
    primitive_error: float = 0.0
    quadrature_error: float = 0.0

    def check(self, name: str) -> InequalityCheck:
        if name not in self.checks:
            self.checks[name] = InequalityCheck(name)
        return self.checks[name]

    def passed(self, tol: float = 1e-12) -> bool:
        return (
            self.zero_value == 0.0
            and self.min_positive_value > 0.0
            and all(c.holds(tol) for c in self.checks.values())
        )

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["passed"] = self.passed()
        return to_builtin(data)


@dataclass
class SolveRecord:
    """Critical point accepted at one value of epsilon"""
    eps: float
    field: np.ndarray
    level: float
    sharp_level: float
    gradient_norm: float
    residual: float
    iterations: int
    method: str
    h1_norm: float = 0.0
    sup_norm: float = 0.0
    wall_time: float = 0.0

    def to_dict(self) -> Dict:
        """Convert to dictionary (field values and clock data excluded)"""
        data = {k: v for k, v in asdict(self).items() if k not in ("field", "wall_time")}
        return to_builtin(data)


@dataclass
class SolveTrace:
    """Per-epsilon history of one continuation run"""
    config_hash: str
    grid: Dict
    model: Dict
    records: List[SolveRecord] = field(default_factory=list)
    mountain_pass: Dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def final(self) -> SolveRecord:
        return self.records[-1]

    def to_dict(self) -> Dict:
        return to_builtin({
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "grid": self.grid,
            "model": self.model,
            "mountain_pass": self.mountain_pass,
            "records": [r.to_dict() for r in self.records],
        })

    def timing(self) -> Dict:
        return {"config_hash": self.config_hash,
                "wall_time": [float(r.wall_time) for r in self.records]}


@dataclass
class FreeBoundary:
    """
    Extracted level set {u = 1}: oriented segments with {u > 1} on the left,
    sample points with unit normals pointing into {u > 1}, and one-sided
    gradient estimates once attached
    """
    segments: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def total_length(self) -> float:
        if len(self.segments) == 0:
            return 0.0
        return float(np.sum(np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=-1)))


@dataclass
class DistanceField:
    values: np.ndarray
    method: str = "exact"


@dataclass
class FbConditionMetrics:
    count: int = 0
    skipped: int = 0
    median: float = 0.0
    median_abs: float = 0.0
    iqr: float = 0.0
    worst_decile: float = 0.0
    trivial: bool = True
    passed: bool = False


@dataclass
class NondegeneracyMetrics:
    c: float = 0.0
    samples: int = 0
    r0: float = 0.0
    passed: bool = False


@dataclass
class DensityMetrics:
    min_fraction: float = 0.0
    max_fraction: float = 0.0
    radii: Dict[str, Dict] = field(default_factory=dict)
    skipped: int = 0
    passed: bool = False


@dataclass
class VariationalMetrics:
    levels: List[Dict] = field(default_factory=list)
    max_ratio: float = 0.0
    sharp_decreasing: bool = False
    passed: bool = False


@dataclass
class EnergyMetrics:
    rows: List[Dict] = field(default_factory=list)
    delta: float = 0.0
    limit_level: float = 0.0
    limit_sharp_level: float = 0.0
    band: float = 0.0
    nehari_level: Optional[float] = None
    nehari_relative_gap: Optional[float] = None
    passed: bool = False


@dataclass
class LipschitzMetrics:
    delta0: float = 0.0
    rows: List[Dict] = field(default_factory=list)
    ratio: float = 0.0
    passed: bool = False


@dataclass
class AuxMetrics:
    harmonic_residual: float = 0.0
    ring_nu: float = 0.0
    ring_samples: int = 0
    a0: float = 0.0
    majorant_violation: float = 0.0
    positivity_ok: bool = True
    majorant_ok: bool = True
    passed: bool = False


@dataclass
class VerificationReport:
    """Measured diagnostics of a solve trace and its limit candidate"""
    config_hash: str
    seed: int
    thresholds: Dict
    fb_condition: FbConditionMetrics
    nondegeneracy: NondegeneracyMetrics
    density: DensityMetrics
    variational: VariationalMetrics
    energy: EnergyMetrics
    lipschitz: LipschitzMetrics
    aux: AuxMetrics
    convergence: List[Dict] = field(default_factory=list)
    critical: Optional[Dict] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        verdicts = [self.fb_condition.passed, self.nondegeneracy.passed, self.density.passed,
                    self.variational.passed, self.energy.passed, self.lipschitz.passed,
                    self.aux.passed]
        if self.critical is not None:
            verdicts.append(bool(self.critical.get("passed", False)))
        return all(verdicts)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["passed"] = self.passed
        return to_builtin(data)
