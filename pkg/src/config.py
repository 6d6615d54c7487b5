"""
Configuration settings for the free-boundary laboratory
"""

import hashlib
import json
import logging
from dataclasses import dataclass, fields, replace, asdict
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from .discretization import GRID_KINDS, MIN_NODES, Grid
from .errors import ConfigError, DomainError
from .nonlinearity import WEIGHTS, NonlinearityModel, build_model
from .regularization import check_compatibility

logger = logging.getLogger(__name__)


class LabConfig:
    """Default settings and shipped presets"""

    # default solver parameters
    DEFAULT_GRID_NODES = 129
    DEFAULT_PATH_SIZE = 32
    DEFAULT_NEWTON_TOL = 1e-10
    DEFAULT_MAX_SWEEPS = 20000
    DEFAULT_STAGNATION_SWEEPS = 50
    DEFAULT_MAX_NEWTON_STEPS = 100
    DEFAULT_ENDPOINT_DOUBLINGS = 60
    DEFAULT_THREADS = 4
    DEFAULT_OUTPUT_DIR = "runs"

    # epsilon schedule in multiples of h
    DEFAULT_EPS_FIRST = 8.0
    DEFAULT_EPS_LAST = 2.0
    DEFAULT_EPS_RATIO = 0.5

    MODEL_VARIANTS = ["pure_power", "sum_of_powers", "weighted_power", "critical", "exponential"]

    # sweepable keys and what a sweep over them means
    SWEEP_AXES = {
        'model.kappa': 'critical coefficient, ascending to locate loss of convergence',
        'grid.n': 'grid refinement for convergence-rate tables',
        'model.p': 'pure-power exponent',
        'model.mu': 'superlinearity exponent',
        'model.lam': 'subcritical coefficient of the critical model',
    }

    PRESETS = {
        'subcritical_square': {
            'domain.kind': 'box', 'grid.n': 129,
            'model.variant': 'pure_power', 'model.p': 4.0,
        },
        'subcritical_disk': {
            'domain.kind': 'disk', 'domain.radius': 1.0, 'grid.n': 129,
            'model.variant': 'pure_power', 'model.p': 4.0,
        },
        'sum_of_powers': {
            'domain.kind': 'box', 'grid.n': 129,
            'model.variant': 'sum_of_powers', 'model.p_list': (3.0, 4.0),
        },
        'weighted_power': {
            'domain.kind': 'box', 'grid.n': 129,
            'model.variant': 'weighted_power', 'model.mu': 3.0, 'model.p': 4.0,
            'model.a3': 1.0, 'model.a4': 1.0, 'model.weight': 'radial_polynomial',
        },
        'critical_radial': {
            'domain.kind': 'radial', 'domain.dimension': 3, 'domain.radius': 1.0, 'grid.n': 513,
            'model.variant': 'critical', 'model.mu': 3.0, 'model.kappa': 0.05, 'model.lam': 1.0,
        },
    }

    # keys that do not change results and are left out of the config hash
    UNHASHED_KEYS = ('output.dir',)


@dataclass(frozen=True)
class RunConfig:
    """One validated run; attribute names are the dotted keys with '.' replaced by '_'"""
    domain_kind: str = "box"
    domain_xmin: float = -1.0
    domain_xmax: float = 1.0
    domain_ymin: float = -1.0
    domain_ymax: float = 1.0
    domain_radius: float = 1.0
    domain_dimension: int = 2
    grid_n: int = LabConfig.DEFAULT_GRID_NODES
    model_variant: str = "pure_power"
    model_p: float = 4.0
    model_p_list: Tuple[float, ...] = (3.0, 4.0)
    model_mu: float = 3.0
    model_weight: str = "polynomial"
    model_a1: float = 1.0
    model_a2: float = 1.0
    model_a3: float = 1.0
    model_a4: float = 1.0
    model_kappa: float = 0.05
    model_lam: float = 1.0
    schedule_first: float = LabConfig.DEFAULT_EPS_FIRST
    schedule_last: float = LabConfig.DEFAULT_EPS_LAST
    schedule_ratio: float = LabConfig.DEFAULT_EPS_RATIO
    solver_path_size: int = LabConfig.DEFAULT_PATH_SIZE
    solver_mp_tol: Optional[float] = None
    solver_newton_tol: float = LabConfig.DEFAULT_NEWTON_TOL
    solver_max_sweeps: int = LabConfig.DEFAULT_MAX_SWEEPS
    solver_stagnation_sweeps: int = LabConfig.DEFAULT_STAGNATION_SWEEPS
    solver_max_newton_steps: int = LabConfig.DEFAULT_MAX_NEWTON_STEPS
    solver_endpoint_doublings: int = LabConfig.DEFAULT_ENDPOINT_DOUBLINGS
    verify_fb_median_max: float = 0.25
    verify_nondegeneracy_c_min: float = 0.05
    verify_nondegeneracy_r0: float = 10.0
    verify_density_c_min: float = 0.05
    verify_density_r0: float = 32.0
    verify_lipschitz_ratio: float = 1.2
    verify_variational_factor: float = 10.0
    verify_max_points: int = 200
    verify_cross_check: bool = True
    output_dir: str = LabConfig.DEFAULT_OUTPUT_DIR
    run_seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls) -> Dict[str, str]:
        """Dotted key -> attribute name"""
        return {f.name.replace("_", ".", 1): f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: Dict[str, object], base: Optional["RunConfig"] = None) -> "RunConfig":
        keys = cls.keys()
        types = {f.name: f.type for f in fields(cls)}
        updates = {}
        for key, raw in mapping.items():
            if key not in keys:
                raise ConfigError(f"Unknown config key '{key}'")
            name = keys[key]
            updates[name] = _coerce(key, raw, types[name])
        if base is None:
            return cls(**updates)
        return replace(base, **updates)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"Line {lineno}: expected 'section.key = value', got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in mapping:
                raise ConfigError(f"Line {lineno}: duplicate key '{key}'")
            mapping[key] = value
        return cls.from_mapping(mapping)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        return cls.from_text(text)

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        if name not in LabConfig.PRESETS:
            raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(LabConfig.PRESETS)}")
        return cls.from_mapping(LabConfig.PRESETS[name])

    def with_value(self, key: str, value) -> "RunConfig":
        return RunConfig.from_mapping({key: value}, base=self)

    def validate(self):
        if self.domain_kind not in GRID_KINDS:
            raise ConfigError(f"domain.kind must be one of {GRID_KINDS}, got '{self.domain_kind}'")
        if self.grid_n < MIN_NODES:
            raise ConfigError(f"grid.n must be at least {MIN_NODES}, got {self.grid_n}")
        if self.model_variant not in LabConfig.MODEL_VARIANTS:
            raise ConfigError(f"model.variant must be one of {LabConfig.MODEL_VARIANTS}")
        if self.model_weight not in WEIGHTS:
            raise ConfigError(f"model.weight must be one of {WEIGHTS}")
        if not self.schedule_first > self.schedule_last > 0:
            raise ConfigError("schedule needs first > last > 0")
        if not 0 < self.schedule_ratio < 1:
            raise ConfigError("schedule.ratio must lie in (0, 1)")
        if self.solver_path_size < 3:
            raise ConfigError("solver.path_size must be at least 3")
        positive = {
            "solver.newton_tol": self.solver_newton_tol,
            "solver.max_sweeps": self.solver_max_sweeps,
            "solver.stagnation_sweeps": self.solver_stagnation_sweeps,
            "solver.max_newton_steps": self.solver_max_newton_steps,
            "solver.endpoint_doublings": self.solver_endpoint_doublings,
            "verify.nondegeneracy_r0": self.verify_nondegeneracy_r0,
            "verify.density_r0": self.verify_density_r0,
            "verify.lipschitz_ratio": self.verify_lipschitz_ratio,
            "verify.variational_factor": self.verify_variational_factor,
            "verify.max_points": self.verify_max_points,
        }
        for key, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.solver_mp_tol is not None and not self.solver_mp_tol > 0:
            raise ConfigError("solver.mp_tol must be positive")
        if not 0 < self.verify_density_c_min < 0.5:
            raise ConfigError("verify.density_c_min must lie in (0, 1/2)")
        try:
            grid = self.build_grid()
            check_compatibility(grid, self.build_model())
        except DomainError as e:
            raise ConfigError(str(e)) from e

    def build_grid(self) -> Grid:
        if self.domain_kind == "box":
            return Grid.box(self.grid_n, self.domain_xmin, self.domain_xmax,
                            self.domain_ymin, self.domain_ymax)
        if self.domain_kind == "disk":
            return Grid.disk(self.grid_n, self.domain_radius)
        return Grid.radial(self.grid_n, self.domain_radius, self.domain_dimension)

    def build_model(self) -> NonlinearityModel:
        return build_model(self.model_variant, p=self.model_p, p_list=self.model_p_list,
                           mu=self.model_mu, weight=self.model_weight, a1=self.model_a1,
                           a2=self.model_a2, a3=self.model_a3, a4=self.model_a4,
                           kappa=self.model_kappa, lam=self.model_lam,
                           dimension=self.domain_dimension)

    def to_dict(self) -> Dict:
        data = asdict(self)
        return {key: data[name] for key, name in self.keys().items()}

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key} = {_render(value)}")
        return "\n".join(lines) + "\n"

    @property
    def thresholds(self) -> Dict:
        return {k: v for k, v in self.to_dict().items() if k.startswith("verify.")}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every result-relevant key"""
        data = {k: v for k, v in self.to_dict().items() if k not in LabConfig.UNHASHED_KEYS}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw, kind):
    """Convert a raw text or python value to the declared attribute type"""
    try:
        if kind == "bool" or kind is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text not in ("true", "false"):
                raise ValueError(f"expected true/false, got '{raw}'")
            return text == "true"
        if kind in ("int", int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(f"expected an integer, got {raw}")
            return int(raw) if not isinstance(raw, str) else int(raw.strip())
        if kind in ("float", float):
            return float(raw)
        if kind in ("Optional[float]", Optional[float]):
            if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "auto")):
                return None
            return float(raw)
        if kind in ("Tuple[float, ...]", Tuple[float, ...]):
            items = raw.split(",") if isinstance(raw, str) else raw
            values = tuple(float(v) for v in items)
            if not values:
                raise ValueError("expected at least one value")
            return values
        return str(raw).strip()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad value for '{key}': {e}") from e
