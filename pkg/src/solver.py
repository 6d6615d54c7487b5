"""
Mountain-pass search, epsilon continuation and the Nehari machinery
"""

import time
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.linalg import spsolve

from .config import RunConfig
from .discretization import Grid, dirichlet_form, dirichlet_riesz, integrate
from .errors import ContinuationError, DomainError, MountainPassError, StructuralError
from .models import SolveRecord, SolveTrace
from .nonlinearity import PurePower
from .regularization import RegularizedFunctional, positive_part

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
STAGNATION_DROP = 1e-14
STEP_CAP = 0.25


@dataclass(frozen=True)
class EpsSchedule:
    values: Tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise DomainError("Empty epsilon schedule")
        if any(e <= 0 for e in self.values) or any(b >= a for a, b in zip(self.values, self.values[1:])):
            raise DomainError(f"Epsilon schedule must be positive and strictly decreasing: {self.values}")

    @classmethod
    def geometric(cls, h: float, first: float = 8.0, last: float = 2.0, ratio: float = 0.5) -> "EpsSchedule":
        """first*h, first*h*ratio, ... down to last*h (multiples of the grid spacing)"""
        values = []
        eps = first * h
        while eps >= last * h * (1.0 - 1e-9):
            values.append(eps)
            eps *= ratio
        return cls(tuple(values))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]


@dataclass
class MountainPassPath:
    """Discrete path from 0 to an endpoint of negative J_eps"""
    fields: List[np.ndarray]

    def validate(self, F: RegularizedFunctional):
        if len(self.fields) < 3:
            raise DomainError("A mountain-pass path needs at least 3 fields")
        if np.any(self.fields[0] != 0.0):
            raise DomainError("A mountain-pass path must start at 0")
        if not F.value(self.fields[-1]) < 0.0:
            raise DomainError("A mountain-pass path must end at negative energy")

    def __len__(self):
        return len(self.fields)


@dataclass
class MountainPassResult:
    field: np.ndarray
    level: float
    gradient_norm: float
    sweeps: int
    history: List[float]
    path: MountainPassPath
    path_energies: np.ndarray
    sharp_path_values: np.ndarray


@dataclass
class NewtonResult:
    field: np.ndarray
    iterations: int
    residual: float


@dataclass
class NehariLevel:
    """J(pi(u)) assembled termwise; the discrete J(pi(u)) equals level + t * cross"""
    level: float
    t: float
    cross: float


def default_initial_field(grid: Grid) -> np.ndarray:
    """Product-of-sines bump (boxes) or cosine profile (disks, balls) with maximum 2"""
    if grid.kind == "box":
        x, y = grid.coords
        sx = np.sin(np.pi * (x - x[0]) / (x[-1] - x[0]))
        sy = np.sin(np.pi * (y - y[0]) / (y[-1] - y[0]))
        u = np.outer(sx, sy)
    else:
        u = np.cos(0.5 * np.pi * np.minimum(grid.norm / grid.radius, 1.0))
    u = np.where(grid.interior, u, 0.0)
    return 2.0 * u / np.max(u)


def make_endpoint(F: RegularizedFunctional, u0: np.ndarray, max_doublings: int = 60) -> np.ndarray:
    """u0- + t u0+ with t doubled until J_eps turns negative"""
    minus, plus = positive_part(u0)
    if not np.any(plus > 0.0):
        raise DomainError("make_endpoint needs u0 > 1 somewhere")
    t = 1.0
    for _ in range(max_doublings + 1):
        candidate = minus + t * plus
        if F.value(candidate) < 0.0:
            logger.debug(f"Endpoint found at t={t:g}")
            return candidate
        t *= 2.0
    raise StructuralError(f"J_eps stayed nonnegative after {max_doublings} doublings; "
                          f"the nonlinearity is not superlinear on this grid")


def straight_path(endpoint: np.ndarray, size: int = 32) -> MountainPassPath:
    return MountainPassPath([k / (size - 1) * endpoint for k in range(size)])


def _segment_lengths(grid: Grid, fields: List[np.ndarray]) -> np.ndarray:
    return np.array([np.sqrt(max(dirichlet_form(grid, b - a, b - a), 0.0))
                     for a, b in zip(fields, fields[1:])])


def reparametrize(grid: Grid, fields: List[np.ndarray]) -> List[np.ndarray]:
    """Redistribute the interior fields at equal H^1_0 arclength, endpoints fixed"""
    lengths = _segment_lengths(grid, fields)
    total = float(np.sum(lengths))
    if total == 0.0:
        return list(fields)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    targets = np.linspace(0.0, total, len(fields))
    out = [fields[0]]
    for target in targets[1:-1]:
        j = int(np.clip(np.searchsorted(cumulative, target, side="right") - 1, 0, len(lengths) - 1))
        theta = 0.0 if lengths[j] == 0.0 else (target - cumulative[j]) / lengths[j]
        theta = min(max(theta, 0.0), 1.0)
        out.append((1.0 - theta) * fields[j] + theta * fields[j + 1])
    out.append(fields[-1])
    return out


def sobolev_gradient(F: RegularizedFunctional, u: np.ndarray) -> Tuple[np.ndarray, float]:
    """H^1_0 gradient of J_eps at u and its norm"""
    r = F.residual(u)
    d = dirichlet_riesz(F.grid, r)
    return d, float(np.sqrt(max(integrate(F.grid, r * d), 0.0)))


@dataclass
class RayPeak:
    """Maximizer t * w of J_eps on the straight path from 0 through w"""
    t: float
    level: float
    reach: float
    times: np.ndarray
    energies: np.ndarray


def ray_peak(F: RegularizedFunctional, w: np.ndarray, samples: int = 32,
             max_doublings: int = 60) -> RayPeak:
    """
    Sample J_eps(t w) on [0, T] with J_eps(T w) < 0, then refine the sampled
    maximizer (lowest index on ties) to the zero of the slope between its
    neighbours, or to a bounded scalar maximum when the slope has no sign
    change there.
    """
    w = np.asarray(w, dtype=float)
    if not np.any(w > 0.0):
        raise DomainError("A ray needs w > 0 somewhere to cross the level 1")
    reach = 1.0
    for _ in range(max_doublings + 1):
        if F.value(reach * w) < 0.0:
            break
        reach *= 2.0
    else:
        raise StructuralError(f"J_eps stayed nonnegative along the ray after {max_doublings} doublings")

    times = np.linspace(0.0, reach, samples)
    energies = np.array([F.value(t * w) for t in times])
    k = int(np.argmax(energies))
    lo, hi = times[max(k - 1, 0)], times[min(k + 1, samples - 1)]

    def slope(t: float) -> float:
        return integrate(F.grid, F.residual(t * w) * w)

    if slope(lo) > 0.0 > slope(hi):
        t = float(brentq(slope, lo, hi, xtol=1e-14, maxiter=200))
    else:
        t = float(minimize_scalar(lambda s: -F.value(s * w), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12}).x)
    level = F.value(t * w)
    if level < energies[k]:
        t, level = float(times[k]), float(energies[k])
    return RayPeak(t=t, level=float(level), reach=reach, times=times, energies=energies)


def _ray_path(w: np.ndarray, peak: RayPeak) -> Tuple[List[np.ndarray], np.ndarray]:
    """The sampled ray with the refined maximizer put in place of the nearest sample"""
    times = peak.times.copy()
    energies = peak.energies.copy()
    k = int(np.argmin(np.abs(times[1:-1] - peak.t))) + 1
    times[k], energies[k] = peak.t, peak.level
    return [t * w for t in times], energies


def mountain_pass(F: RegularizedFunctional, path: MountainPassPath, tol: float,
                  max_sweeps: int = 20000, stagnation_sweeps: int = 50,
                  max_step: float = STEP_CAP) -> MountainPassResult:
    """
    Deform the path until its maximizer is a critical point of J_eps.

    The given path is re-spaced by arclength and its maximizer (lowest index
    on ties) starts the search. Every sweep replaces the path by the straight
    path from 0 through the current maximizer out to negative energy, moves
    the maximizer to the exact top of that path, and takes a Sobolev descent
    step of H^1_0 length at most max_step * ||u||. A step is kept only when
    the top of the new straight path drops by the Armijo margin, so the level
    never increases and the maximizer always satisfies max u > 1.
    """
    path.validate(F)
    grid = F.grid
    fields = reparametrize(grid, [np.array(p, dtype=float) for p in path.fields])
    energies = np.array([F.value(p) for p in fields])
    k = int(np.argmax(energies))
    if k == 0 or k == len(fields) - 1:
        raise MountainPassError("Path maximum sits at an endpoint; no mountain range crossed",
                                best_field=fields[k], level=float(energies[k]))

    samples = len(fields)
    w = fields[k]
    peak = ray_peak(F, w, samples)
    history: List[float] = []
    step = 1.0
    gnorm = float("inf")

    for sweep in range(max_sweeps):
        u = peak.t * w
        level = peak.level
        history.append(level)
        d, gnorm = sobolev_gradient(F, u)

        if gnorm <= tol:
            logger.info(f"Mountain pass converged after {sweep} sweeps: level {level:.10g}, "
                        f"gradient norm {gnorm:.3e}")
            break
        if (len(history) > stagnation_sweeps
                and history[-1 - stagnation_sweeps] - level < STAGNATION_DROP):
            raise MountainPassError(f"Mountain pass stagnated at level {level:.10g} "
                                    f"with gradient norm {gnorm:.3e}",
                                    best_field=u, level=level, gradient_norm=gnorm)

        # H^1_0 length of the step is step * gnorm
        cap = max_step * np.sqrt(max(dirichlet_form(grid, u, u), 0.0)) / gnorm
        step = min(1.0, 2.0 * step, cap)
        accepted = None
        while step * gnorm > 1e-14 * max(1.0, level):
            trial = u - step * d
            if np.any(trial > 0.0):
                candidate = ray_peak(F, trial, samples)
                if candidate.level <= level - ARMIJO * step * gnorm ** 2:
                    accepted = (trial, candidate)
                    break
            step *= 0.5
        if accepted is None:
            raise MountainPassError(f"No descent step lowers the path maximum at level {level:.10g} "
                                    f"(gradient norm {gnorm:.3e})",
                                    best_field=u, level=level, gradient_norm=gnorm)
        w, peak = accepted

        if sweep % 100 == 0:
            logger.debug(f"Sweep {sweep}: level {level:.10g}, gradient norm {gnorm:.3e}, step {step:.2e}")
    else:
        raise MountainPassError(f"Mountain pass hit {max_sweeps} sweeps with gradient norm {gnorm:.3e}",
                                best_field=u, level=level, gradient_norm=gnorm)

    if not np.max(u) > 1.0:
        raise MountainPassError("Mountain pass converged to a trivial critical point",
                                best_field=u, level=level, gradient_norm=gnorm)
    fields, energies = _ray_path(w, peak)
    return MountainPassResult(
        field=u, level=level, gradient_norm=gnorm, sweeps=len(history), history=history,
        path=MountainPassPath(fields), path_energies=energies,
        sharp_path_values=np.array([F.sharp_value(p) for p in fields]),
    )


def newton_continue(F: RegularizedFunctional, warm: np.ndarray, tol: float = 1e-10,
                    max_steps: int = 100) -> NewtonResult:
    """Damped Newton on the residual with Armijo backtracking on 1/2 ||r||^2"""
    grid = F.grid
    idx = grid.interior_index
    u = np.where(grid.interior, np.asarray(warm, dtype=float), 0.0)
    r = F.residual(u)
    residual = F.residual_norm(u)
    if residual <= tol:
        return NewtonResult(u, 0, residual)

    for iteration in range(1, max_steps + 1):
        rhs = -(grid.weights * r).ravel()[idx]
        try:
            delta = spsolve(F.jacobian(u), rhs)
        except (RuntimeError, ValueError) as e:
            raise ContinuationError(f"Jacobian solve failed: {e}", field=u, residual=residual) from e
        if not np.all(np.isfinite(delta)):
            raise ContinuationError("Jacobian is singular", field=u, residual=residual)
        delta = grid.extend(delta)

        merit = 0.5 * F.norm(r) ** 2
        step = 1.0
        while step >= 2.0 ** -30:
            trial = u + step * delta
            trial_r = F.residual(trial)
            if 0.5 * F.norm(trial_r) ** 2 <= (1.0 - 2.0 * ARMIJO * step) * merit:
                break
            step *= 0.5
        else:
            raise ContinuationError(f"No residual decrease along the Newton direction "
                                    f"(residual {residual:.3e})", field=u, residual=residual)
        u, r = trial, trial_r
        residual = F.residual_norm(u)
        logger.debug(f"Newton step {iteration}: damping {step:g}, residual {residual:.3e}")
        if residual <= tol:
            return NewtonResult(u, iteration, residual)

    raise ContinuationError(f"Newton did not reach {tol:.1e} in {max_steps} steps (residual {residual:.3e})",
                            field=u, residual=residual)


def _nehari_integrals(F: RegularizedFunctional, u: np.ndarray):
    minus, plus = positive_part(u)
    if not np.any(plus > 0.0):
        raise DomainError("The Nehari projection needs u > 1 somewhere")
    A = dirichlet_form(F.grid, plus, plus)
    D = integrate(F.grid, plus * F.source(plus))
    if not (A > 0.0 and D > 0.0):
        raise DomainError(f"Degenerate fibering data: grad term {A:g}, potential term {D:g}")
    return minus, plus, A, D


def nehari_brackets(A: float, D: float, mu: float) -> Tuple[float, float]:
    """Interval between (A/D)^{1/(mu-2)} and 1 that contains t_u"""
    ratio = (A / D) ** (1.0 / (mu - 2.0))
    return min(ratio, 1.0), max(ratio, 1.0)


def nehari_time(F: RegularizedFunctional, u: np.ndarray, method: str = "auto") -> float:
    """Unique t > 0 with t int |grad u+|^2 = int u+ g(x, t u+)"""
    if method not in ("auto", "closed", "root"):
        raise ValueError(f"Unknown method '{method}'")
    _, plus, A, D = _nehari_integrals(F, u)
    model = F.model
    if isinstance(model, PurePower) and method != "root":
        return float((A / integrate(F.grid, plus ** model.p)) ** (1.0 / (model.p - 2.0)))
    if method == "closed":
        raise ValueError(f"No closed form for {model.variant}")

    def fibering_slope(t: float) -> float:
        return t * A - integrate(F.grid, plus * F.source(t * plus))

    lo, hi = nehari_brackets(A, D, model.mu)
    lo, hi = lo * (1.0 - 1e-9), hi * (1.0 + 1e-9)
    f_lo, f_hi = fibering_slope(lo), fibering_slope(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0.0:
        raise StructuralError(f"Fibering slope does not change sign on [{lo:g}, {hi:g}]")
    return float(brentq(fibering_slope, lo, hi, xtol=1e-15, rtol=1e-13, maxiter=200))


def project_nehari(F: RegularizedFunctional, u: np.ndarray, method: str = "auto") -> np.ndarray:
    minus, plus = positive_part(u)
    return minus + nehari_time(F, u, method) * plus


def fibering_value(F: RegularizedFunctional, u: np.ndarray, t: float) -> float:
    """J along (1+t) u- for t in [-1, 0] and u- + t u+ for t > 0"""
    if t < -1.0:
        raise DomainError("The fibering path starts at t = -1")
    minus, plus = positive_part(u)
    if t <= 0.0:
        return F.sharp_value((1.0 + t) * minus)
    return F.sharp_value(minus + t * plus)


def nehari_level(F: RegularizedFunctional, u: np.ndarray) -> NehariLevel:
    minus, plus, A, _ = _nehari_integrals(F, u)
    t = nehari_time(F, u)
    level = (0.5 * dirichlet_form(F.grid, minus, minus) + 0.5 * t * t * A
             - integrate(F.grid, F.potential(t * plus))
             + integrate(F.grid, (np.asarray(u) > 1.0).astype(float)))
    return NehariLevel(level=float(level), t=t, cross=dirichlet_form(F.grid, minus, plus))


def minimize_on_M(F: RegularizedFunctional, u_init: np.ndarray, tol: float = 1e-12,
                  max_iter: int = 500) -> Tuple[np.ndarray, float]:
    """
    Projected descent for the sharp J on the Nehari set: step along the
    Sobolev gradient of J_eps, project back, keep the step only if J drops.
    """
    u = project_nehari(F, u_init)
    level = F.sharp_value(u)
    step = 1.0
    for iteration in range(max_iter):
        d, _ = sobolev_gradient(F, u)
        accepted = None
        while step > 1e-12:
            trial = u - step * d
            if not np.any(trial > 1.0):
                step *= 0.5
                continue
            trial = project_nehari(F, trial)
            value = F.sharp_value(trial)
            if value < level:
                accepted = (trial, value)
                break
            step *= 0.5
        if accepted is None:
            break
        decrease = level - accepted[1]
        u, level = accepted
        if decrease < tol * max(1.0, abs(level)):
            break
        step = min(1.0, 2.0 * step)
    logger.info(f"Nehari minimization stopped after {iteration + 1} iterations at J = {level:.10g}")
    return u, float(level)


class FreeBoundarySolver:
    """Runs mountain pass at the largest epsilon and continues the critical point down the schedule"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.grid = config.build_grid()
        self.model = config.build_model()
        self.schedule = EpsSchedule.geometric(self.grid.h, config.schedule_first,
                                              config.schedule_last, config.schedule_ratio)
        self.mp_tol = config.solver_mp_tol or 1e-6 * np.sqrt(self.grid.volume)
        logger.info(f"Solver initialized: {self.grid.kind} grid {self.grid.shape}, model {self.model.variant}, "
                    f"eps schedule {[f'{e:.4g}' for e in self.schedule]}")

    def _mountain_pass(self, F: RegularizedFunctional, start: np.ndarray) -> Tuple[np.ndarray, MountainPassResult, str]:
        cfg = self.config
        endpoint = make_endpoint(F, start, cfg.solver_endpoint_doublings)
        path = straight_path(endpoint, cfg.solver_path_size)
        try:
            result = mountain_pass(F, path, self.mp_tol, cfg.solver_max_sweeps, cfg.solver_stagnation_sweeps)
        except MountainPassError as e:
            # hand the best iterate to Newton before giving up
            logger.warning(f"{e}; polishing the best iterate with Newton")
            try:
                polished = newton_continue(F, e.best_field, cfg.solver_newton_tol, cfg.solver_max_newton_steps)
            except ContinuationError:
                raise e
            if not np.max(polished.field) > 1.0:
                raise e
            return polished.field, None, "mountain_pass+newton"
        try:
            polished = newton_continue(F, result.field, cfg.solver_newton_tol, cfg.solver_max_newton_steps)
        except ContinuationError as e:
            logger.warning(f"Newton polish failed ({e}); keeping the mountain-pass iterate")
            return result.field, result, "mountain_pass"
        if not np.max(polished.field) > 1.0:
            logger.warning("Newton polish left the nontrivial branch; keeping the mountain-pass iterate")
            return result.field, result, "mountain_pass"
        shift = np.sqrt(dirichlet_form(self.grid, polished.field - result.field, polished.field - result.field))
        size = np.sqrt(dirichlet_form(self.grid, result.field, result.field))
        logger.info(f"Newton polish: {polished.iterations} steps, H1 displacement {shift / size:.2e} relative")
        return polished.field, result, "mountain_pass+newton"

    def _record(self, F: RegularizedFunctional, u: np.ndarray, iterations: int, method: str,
                started: float) -> SolveRecord:
        _, gnorm = sobolev_gradient(F, u)
        return SolveRecord(
            eps=F.eps, field=u, level=F.value(u), sharp_level=F.sharp_value(u), gradient_norm=gnorm,
            residual=F.residual_norm(u), iterations=iterations, method=method,
            h1_norm=float(np.sqrt(dirichlet_form(self.grid, u, u))),
            sup_norm=float(np.max(np.abs(u))), wall_time=time.perf_counter() - started,
        )

    def run(self) -> SolveTrace:
        cfg = self.config
        trace = SolveTrace(config_hash=cfg.config_hash(), grid=self.grid.describe(),
                           model=self.model.describe())

        started = time.perf_counter()
        F = RegularizedFunctional(self.grid, self.model, self.schedule[0])
        u, mp, method = self._mountain_pass(F, default_initial_field(self.grid))
        if mp is None:
            trace.mountain_pass = {"converged": False, "tolerance": self.mp_tol}
        else:
            trace.mountain_pass = {
                "converged": True,
                "sweeps": mp.sweeps,
                "level": mp.level,
                "gradient_norm": mp.gradient_norm,
                "tolerance": self.mp_tol,
                "level_nonincreasing": bool(np.all(np.diff(mp.history) <= 0.0)),
                "path_sandwich_holds": bool(np.all(mp.path_energies <= mp.sharp_path_values)),
                "max_sharp_path_value": float(np.max(mp.sharp_path_values)),
            }
        record = self._record(F, u, mp.sweeps if mp else 0, method, started)
        trace.records.append(record)
        logger.info(f"eps={F.eps:.4g}: level {record.level:.10g}, residual {record.residual:.2e} ({method})")

        for eps in self.schedule[1:]:
            started = time.perf_counter()
            F = F.with_eps(eps)
            try:
                result = newton_continue(F, u, cfg.solver_newton_tol, cfg.solver_max_newton_steps)
                if not np.max(result.field) > 1.0:
                    raise ContinuationError("Continuation collapsed to the trivial branch",
                                            field=result.field, residual=result.residual)
                u, iterations, method = result.field, result.iterations, "newton"
            except ContinuationError as e:
                logger.warning(f"Continuation failed at eps={eps:.4g} ({e}); falling back to mountain pass")
                u, mp_fallback, method = self._mountain_pass(F, u)
                iterations = mp_fallback.sweeps if mp_fallback else 0
            record = self._record(F, u, iterations, method, started)
            trace.records.append(record)
            logger.info(f"eps={eps:.4g}: level {record.level:.10g}, residual {record.residual:.2e} "
                        f"({method}, {iterations} iterations)")
        return trace
