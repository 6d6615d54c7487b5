"""
Measured diagnostics of a solve trace and its limit candidate

Every check is a pure function of (grid, model, fields, thresholds, seed);
random subsampling uses a generator seeded per check, so results do not
depend on the order in which concurrent checks finish.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gamma

from .config import RunConfig
from .discretization import (Grid, dirichlet_form, gradient_field, gradient_magnitude,
                             integrate, laplacian_apply, linear_solve)
from .errors import DomainError
from .freeboundary import attach_gradients, distance_to_sublevel, extract_free_boundary
from .models import (AuxMetrics, DensityMetrics, EnergyMetrics, FbConditionMetrics, FreeBoundary,
                     LipschitzMetrics, NondegeneracyMetrics, SolveRecord, SolveTrace,
                     VariationalMetrics, VerificationReport)
from .nonlinearity import CriticalCombo, NonlinearityModel, critical_exponent
from .regularization import RegularizedFunctional, bump_eval, layer_measure, positive_part
from .solver import minimize_on_M

logger = logging.getLogger(__name__)

DENSITY_RADII = (4, 8, 16, 32)
RING_RADII = (2, 4, 8)
RING_NODES = 64


def _subsample(count: int, limit: int, seed: int) -> np.ndarray:
    if count <= limit:
        return np.arange(count)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(count, size=limit, replace=False))


def check_fb_condition(grid: Grid, u: np.ndarray, fb: Optional[FreeBoundary] = None,
                       median_max: float = 0.25, max_points: int = 200, seed: int = 0) -> FbConditionMetrics:
    """Residuals alpha^2 - beta^2 - 2 of the jump condition at sampled free-boundary points"""
    fb = fb if fb is not None else extract_free_boundary(grid, u)
    metrics = FbConditionMetrics()
    if fb.is_empty:
        logger.warning("Free boundary is empty; jump condition not measurable")
        return metrics
    if fb.alpha is None:
        attach_gradients(grid, u, fb)
    valid = np.flatnonzero(fb.valid)
    metrics.skipped = int(len(fb.points) - len(valid))
    if len(valid) == 0:
        return metrics
    chosen = valid[_subsample(len(valid), max_points, seed)]
    residuals = fb.alpha[chosen] ** 2 - fb.beta[chosen] ** 2 - 2.0
    q25, q75 = np.percentile(residuals, [25, 75])
    metrics.count = int(len(chosen))
    metrics.trivial = False
    metrics.median = float(np.median(residuals))
    metrics.median_abs = float(np.median(np.abs(residuals)))
    metrics.iqr = float(q75 - q25)
    metrics.worst_decile = float(np.percentile(np.abs(residuals), 90))
    metrics.passed = metrics.median_abs <= median_max
    return metrics


def check_nondegeneracy(grid: Grid, u: np.ndarray, r0: float = 10.0, c_min: float = 0.05,
                        interface: Optional[np.ndarray] = None) -> NondegeneracyMetrics:
    """min (u(x0) - 1) / dist(x0, {u <= 1}) over nodes of {u > 1} within r0 * h of {u <= 1}"""
    u = np.asarray(u, dtype=float)
    radius = r0 * grid.h
    metrics = NondegeneracyMetrics(r0=radius)
    distance = distance_to_sublevel(grid, u, include_interface=True, interface=interface).values
    mask = (u > 1.0) & (distance > 0.0) & (distance <= radius)
    if not np.any(mask):
        return metrics
    ratios = (u[mask] - 1.0) / distance[mask]
    metrics.c = float(np.min(ratios))
    metrics.samples = int(np.sum(mask))
    metrics.passed = metrics.c >= c_min
    return metrics


def ball_counts(grid: Grid, u: np.ndarray, center: np.ndarray, r: float,
                tree: Optional[cKDTree] = None) -> Tuple[int, int]:
    """(#nodes with u > 1, #nodes) in the closed ball; membership is |x - c|^2 <= r^2"""
    points = grid.points.reshape(-1, grid.points.shape[-1])
    tree = tree or cKDTree(points)
    candidates = np.asarray(tree.query_ball_point(center, r * (1.0 + 1e-9)), dtype=int)
    if candidates.size == 0:
        return 0, 0
    inside = np.sum((points[candidates] - center) ** 2, axis=-1) <= r * r
    members = candidates[inside]
    return int(np.sum(np.asarray(u).ravel()[members] > 1.0)), int(members.size)


def _radial_ball_fraction(grid: Grid, u: np.ndarray, radius_at: float, r: float, nodes: int = 64) -> float:
    """Volume fraction of {u > 1} in a ball of radius r centred at distance radius_at from the origin"""
    z = (np.arange(nodes) + 0.5) / nodes * 2.0 * r - r
    frac = (np.arange(nodes) + 0.5) / nodes
    Z = np.repeat(z[:, None], nodes, axis=1)
    S = np.sqrt(np.maximum(r * r - Z * Z, 0.0)) * frac[None, :]
    ds = np.sqrt(np.maximum(r * r - Z * Z, 0.0)) / nodes
    weight = S ** (grid.dimension - 2) * ds
    rho = np.sqrt((radius_at + Z) ** 2 + S ** 2)
    above = np.interp(rho, grid.coords[0], u) > 1.0
    return float(np.sum(weight * above) / np.sum(weight))


def check_density(grid: Grid, u: np.ndarray, fb: Optional[FreeBoundary] = None, r0: float = 32.0,
                  c_min: float = 0.05, max_points: int = 200, seed: int = 0) -> DensityMetrics:
    """Fractions |{u > 1} cap B_r| / |B_r| at free-boundary points, r in {4h, 8h, 16h, 32h} up to r0 h"""
    fb = fb if fb is not None else extract_free_boundary(grid, u)
    metrics = DensityMetrics()
    if fb.is_empty:
        return metrics
    chosen = fb.points[_subsample(len(fb.points), max_points, seed)]
    tree = None if grid.kind == "radial" else cKDTree(grid.points.reshape(-1, grid.points.shape[-1]))
    fractions_all = []
    for multiple in DENSITY_RADII:
        if multiple > r0:
            continue
        r = multiple * grid.h
        fractions = []
        for point in chosen:
            if not grid.contains_ball(point, r):
                metrics.skipped += 1
                continue
            if grid.kind == "radial":
                fractions.append(_radial_ball_fraction(grid, u, float(point[0]), r))
            else:
                inside, total = ball_counts(grid, u, point, r, tree)
                fractions.append(inside / total)
        if fractions:
            metrics.radii[f"{multiple}h"] = {"radius": r, "samples": len(fractions),
                                             "min": float(np.min(fractions)), "max": float(np.max(fractions))}
            fractions_all.extend(fractions)
    if fractions_all:
        metrics.min_fraction = float(np.min(fractions_all))
        metrics.max_fraction = float(np.max(fractions_all))
        metrics.passed = c_min <= metrics.min_fraction and metrics.max_fraction <= 1.0 - c_min
    return metrics


@dataclass
class VectorField:
    """Test field for domain variations on the grid nodes"""
    name: str
    divergence: np.ndarray
    jacobian: np.ndarray
    c1_norm: float


def vector_field_catalog(grid: Grid) -> List[VectorField]:
    """
    Eight C^1 fields vanishing with their derivatives on the boundary.
    Boxes: cutoff 16 s^2 (1-s)^2 per axis times {1, 2s_x-1, 2s_y-1, product}
    in either coordinate direction. Disks: cutoff (1 - |x|^2/R^2)^2 with the
    same polynomials in x/R, y/R. Radial grids: psi(r) x with
    psi = (1 - r^2/R^2)^2 r^{2k}, k = 0..7.
    """
    catalog = []
    if grid.kind == "radial":
        r = grid.coords[0]
        R = grid.radius
        N = grid.dimension
        for k in range(8):
            cut = (1.0 - r * r / (R * R)) ** 2
            psi = cut * r ** (2 * k)
            dcut = -4.0 * r / (R * R) * (1.0 - r * r / (R * R))
            dpsi = dcut * r ** (2 * k) + (cut * 2 * k * r ** (2 * k - 1) if k else 0.0)
            rr = psi + r * dpsi
            div = N * psi + r * dpsi
            c1 = float(np.max(np.abs(psi * r)) + np.max(np.abs(psi)) + np.max(np.abs(rr)))
            catalog.append(VectorField(f"radial_k{k}", div, rr[None, None, :], c1))
        return catalog

    X = grid.points[..., 0]
    Y = grid.points[..., 1]
    if grid.kind == "box":
        (xmin, ymin), (xmax, ymax) = grid.lower, grid.upper
        Lx, Ly = xmax - xmin, ymax - ymin
        sx, sy = (X - xmin) / Lx, (Y - ymin) / Ly
        ex, ey = 16 * sx ** 2 * (1 - sx) ** 2, 16 * sy ** 2 * (1 - sy) ** 2
        dex = 32 * sx * (1 - sx) * (1 - 2 * sx) / Lx
        dey = 32 * sy * (1 - sy) * (1 - 2 * sy) / Ly
        eta, eta_x, eta_y = ex * ey, dex * ey, ex * dey
        px, py, dpx, dpy = 2 * sx - 1, 2 * sy - 1, 2.0 / Lx, 2.0 / Ly
    else:
        R = grid.radius
        rho2 = (X * X + Y * Y) / (R * R)
        inside = rho2 < 1.0
        base = np.where(inside, 1.0 - rho2, 0.0)
        eta = base ** 2
        eta_x = np.where(inside, -4.0 * base * X / (R * R), 0.0)
        eta_y = np.where(inside, -4.0 * base * Y / (R * R), 0.0)
        px, py, dpx, dpy = X / R, Y / R, 1.0 / R, 1.0 / R

    one = np.ones_like(X)
    zero = np.zeros_like(X)
    polynomials = [
        ("1", one, zero, zero),
        ("x", px, dpx * one, zero),
        ("y", py, zero, dpy * one),
        ("xy", px * py, dpx * py, px * dpy),
    ]
    for label, q, qx, qy in polynomials:
        f = eta * q
        fx = eta_x * q + eta * qx
        fy = eta_y * q + eta * qy
        for c in (0, 1):
            jac = np.zeros((2, 2) + grid.shape)
            jac[c, 0], jac[c, 1] = fx, fy
            c1 = float(np.max(np.abs(f)) + np.max(np.sqrt(fx ** 2 + fy ** 2)))
            catalog.append(VectorField(f"{label}_e{c}", jac[0, 0] + jac[1, 1], jac, c1))
    return catalog


def domain_variation(grid: Grid, model: NonlinearityModel, u: np.ndarray, field: VectorField,
                     eps: Optional[float] = None) -> float:
    """
    int (1/2 |grad u|^2 + chi_{u>1} - G) div Phi - grad u . DPhi grad u; with eps the
    indicator is replaced by B((u-1)/eps)
    """
    u = np.asarray(u, dtype=float)
    grad = gradient_field(grid, u)
    _, plus = positive_part(u)
    if eps is None:
        switch = (u > 1.0).astype(float)
    else:
        _, switch = bump_eval((u - 1.0) / eps)
    density = 0.5 * np.sum(grad ** 2, axis=0) + switch - np.broadcast_to(model.G(grid.points, plus), grid.shape)
    quadratic = np.einsum("i...,ij...,j...->...", grad, field.jacobian, grad)
    return integrate(grid, density * field.divergence - quadratic)


def check_variational_identity(grid: Grid, model: NonlinearityModel, records: Sequence[SolveRecord],
                               catalog: Optional[List[VectorField]] = None,
                               factor: float = 10.0) -> VariationalMetrics:
    """Regularized and sharp domain-variation residuals per epsilon level and test field"""
    catalog = catalog or vector_field_catalog(grid)
    metrics = VariationalMetrics()
    eps_ok = True
    sharp_worst = []
    for record in records:
        scale = max(record.residual, grid.h)
        rows = []
        for field in catalog:
            regularized = domain_variation(grid, model, record.field, field, eps=record.eps)
            sharp = domain_variation(grid, model, record.field, field)
            ratio = abs(regularized) / (scale * field.c1_norm) if field.c1_norm > 0 else 0.0
            metrics.max_ratio = max(metrics.max_ratio, ratio)
            eps_ok = eps_ok and ratio <= factor
            rows.append({"field": field.name, "regularized": regularized, "sharp": sharp, "ratio": ratio})
        sharp_worst.append(max((abs(r["sharp"]) for r in rows), default=0.0))
        metrics.levels.append({"eps": record.eps, "bound_scale": scale, "fields": rows})
    metrics.sharp_decreasing = len(sharp_worst) < 2 or sharp_worst[-1] <= sharp_worst[-2]
    metrics.passed = bool(eps_ok and metrics.sharp_decreasing)
    return metrics


def check_energy_convergence(grid: Grid, model: NonlinearityModel, records: Sequence[SolveRecord],
                             cross_check: bool = False) -> EnergyMetrics:
    """
    Compares every level J_eps(u_eps) with J(u) of the limit candidate u (the
    finest field). A row passes when

        J(u) - allowance - delta <= J_eps(u_eps) <= J(u) + band + delta

    with band = |{|u - 1| <= h}| and allowance the measure of the layers
    {1 < u_eps < 1 + eps} and {1 < u < 1 + eps}. The same-field gap
    J(u_eps) - J_eps(u_eps) is recorded per row but not judged.
    """
    delta = 3.0 * grid.h ** 2 * grid.volume
    metrics = EnergyMetrics(delta=delta)
    if not records:
        return metrics
    limit = records[-1].field
    limit_sharp = RegularizedFunctional(grid, model, records[-1].eps).sharp_value(limit)
    band = integrate(grid, (np.abs(limit - 1.0) <= grid.h).astype(float))
    metrics.limit_sharp_level = limit_sharp
    metrics.band = band

    ok = True
    for record in records:
        F = RegularizedFunctional(grid, model, record.eps)
        u = record.field
        j_eps, j_sharp = F.value(u), F.sharp_value(u)
        layer = layer_measure(F, u)
        allowance = layer + layer_measure(F, limit)
        slack = 1e-12 * max(1.0, abs(j_sharp))
        pointwise = j_eps <= j_sharp + slack and j_sharp - j_eps <= layer + slack
        within = limit_sharp - allowance - delta <= j_eps <= limit_sharp + band + delta
        ok = ok and within
        metrics.rows.append({"eps": record.eps, "J_eps": j_eps, "J": j_sharp, "layer": layer,
                             "allowance": allowance, "gap": j_sharp - j_eps,
                             "pointwise_ok": pointwise, "within_limit": within})
    metrics.limit_level = metrics.rows[-1]["J_eps"]
    final = records[-1]
    if cross_check and np.max(final.field) > 1.0:
        F = RegularizedFunctional(grid, model, final.eps)
        _, level = minimize_on_M(F, final.field)
        metrics.nehari_level = level
        metrics.nehari_relative_gap = abs(metrics.limit_level - level) / max(abs(level), 1e-300)
    metrics.passed = bool(ok)
    if not ok:
        failing = [row["eps"] for row in metrics.rows if not row["within_limit"]]
        logger.warning(f"Energy levels at eps {failing} are off the limit J(u) = {limit_sharp:.6g}")
    return metrics


def check_lipschitz(grid: Grid, records: Sequence[SolveRecord], ratio: float = 1.2) -> LipschitzMetrics:
    """sup |grad u_eps| at distance >= delta0/2 from the boundary, delta0 = dist({u >= 1}, boundary)"""
    metrics = LipschitzMetrics()
    if not records:
        return metrics
    final = records[-1].field
    superlevel = final >= 1.0
    metrics.delta0 = float(np.min(grid.boundary_distance[superlevel])) if np.any(superlevel) else 0.0
    region = grid.interior & (grid.boundary_distance >= 0.5 * metrics.delta0)
    sups = []
    for record in records:
        sup = float(np.max(gradient_magnitude(grid, record.field)[region])) if np.any(region) else 0.0
        sups.append(sup)
        metrics.rows.append({"eps": record.eps, "sup_gradient": sup})
    median = float(np.median(sups))
    metrics.ratio = sups[-1] / median if median > 0 else 0.0
    metrics.passed = metrics.ratio <= ratio
    return metrics


def _ring_average(grid: Grid, interp, center: np.ndarray, r: float) -> float:
    """Average of (u - 1)_+ over the sphere of radius r around center"""
    if grid.kind == "radial":
        radius_at = float(center[0])
        if grid.dimension == 3:
            cos_t, weights = np.polynomial.legendre.leggauss(RING_NODES // 2)
            weights = weights / 2.0
        else:
            theta = 2.0 * np.pi * np.arange(RING_NODES) / RING_NODES
            cos_t, weights = np.cos(theta), np.full(RING_NODES, 1.0 / RING_NODES)
        rho = np.sqrt(np.maximum(radius_at ** 2 + r * r + 2.0 * radius_at * r * cos_t, 0.0))
        values = interp(rho[:, None])
    else:
        theta = 2.0 * np.pi * np.arange(RING_NODES) / RING_NODES
        ring = center + r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        values = interp(ring)
        weights = np.full(RING_NODES, 1.0 / RING_NODES)
    return float(np.sum(weights * np.maximum(np.asarray(values) - 1.0, 0.0)))


def ring_nu(grid: Grid, u: np.ndarray, points: np.ndarray, multiples: Sequence[int] = RING_RADII) -> Tuple[float, int]:
    """min over free-boundary points and radii of ring-average((u - 1)_+) / r"""
    interp = grid.interpolator(u)
    ratios = []
    for point in points:
        for multiple in multiples:
            r = multiple * grid.h
            if grid.contains_ball(point, r):
                ratios.append(_ring_average(grid, interp, np.asarray(point, dtype=float), r) / r)
    if not ratios:
        return 0.0, 0
    return float(np.min(ratios)), len(ratios)


def check_aux(grid: Grid, model: NonlinearityModel, u: np.ndarray, fb: Optional[FreeBoundary] = None,
              max_points: int = 200, seed: int = 0) -> AuxMetrics:
    """Harmonicity away from {u > 1}, the ring average nu and the bounds 0 <= u <= phi0"""
    u = np.asarray(u, dtype=float)
    metrics = AuxMetrics()
    lap = laplacian_apply(grid, u)

    above = u > 1.0
    region = grid.interior & ~above
    if np.any(above):
        collar, _ = cKDTree(grid.points[above]).query(grid.points.reshape(-1, grid.points.shape[-1]))
        region &= collar.reshape(grid.shape) >= 2.0 * grid.h
    metrics.harmonic_residual = float(np.max(np.abs(lap[region]))) if np.any(region) else 0.0
    harmonic_ok = metrics.harmonic_residual <= 1e-6 * max(1.0, float(np.max(np.abs(lap))))

    fb = fb if fb is not None else extract_free_boundary(grid, u)
    ring_ok = True
    if not fb.is_empty:
        chosen = fb.points[_subsample(len(fb.points), max_points, seed)]
        metrics.ring_nu, metrics.ring_samples = ring_nu(grid, u, chosen)
        ring_ok = metrics.ring_samples == 0 or metrics.ring_nu > 0.0

    _, plus = positive_part(u)
    metrics.a0 = float(np.max(np.broadcast_to(model.g(grid.points, plus), grid.shape)))
    metrics.positivity_ok = bool(np.min(u) >= -1e-10)
    if metrics.a0 > 0.0:
        phi0 = linear_solve(grid, np.full(grid.shape, metrics.a0))
        metrics.majorant_violation = float(max(np.max(u - phi0), 0.0))
        metrics.majorant_ok = metrics.majorant_violation <= 1e-8 * max(1.0, float(np.max(phi0)))
    else:
        metrics.majorant_violation = float(max(np.max(u), 0.0))
        metrics.majorant_ok = metrics.majorant_violation <= 1e-12
    metrics.passed = bool(harmonic_ok and ring_ok and metrics.positivity_ok and metrics.majorant_ok)
    return metrics


def convergence_table(grid: Grid, records: Sequence[SolveRecord]) -> List[Dict]:
    """Sup and H^1_0 distances between successive iterates"""
    rows = []
    for a, b in zip(records, records[1:]):
        diff = b.field - a.field
        rows.append({"eps_from": a.eps, "eps_to": b.eps,
                     "sup_difference": float(np.max(np.abs(diff))),
                     "h1_difference": float(np.sqrt(max(dirichlet_form(grid, diff, diff), 0.0)))})
    return rows


def sobolev_constant(dimension: int) -> float:
    """Best constant S in |grad u|_2^2 >= S |u|_{2*}^2 on R^N"""
    if dimension < 3:
        raise DomainError(f"The Sobolev constant needs N >= 3, got {dimension}")
    N = dimension
    return float(np.pi * N * (N - 2) * (gamma(N / 2.0) / gamma(N)) ** (2.0 / N))


def critical_threshold(dimension: int, kappa: float) -> float:
    """Compactness threshold S^{N/2} / (N kappa^{N/2 - 1}) of the critical model"""
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    return sobolev_constant(dimension) ** (dimension / 2.0) / (dimension * kappa ** (dimension / 2.0 - 1.0))


def sobolev_quotient(grid: Grid, u: np.ndarray) -> float:
    """Discrete |grad u|^2 / |u|_{2*}^2 (bounded below by S up to discretization error)"""
    q = critical_exponent(grid.dimension)
    norm = integrate(grid, np.abs(u) ** q) ** (2.0 / q)
    if norm == 0.0:
        raise DomainError("Sobolev quotient of the zero field")
    return dirichlet_form(grid, u, u) / norm


def check_critical(grid: Grid, model: CriticalCombo, records: Sequence[SolveRecord]) -> Dict:
    threshold = critical_threshold(model.dimension, model.kappa)
    levels = [r.level for r in records]
    report = {
        "sobolev_constant": sobolev_constant(model.dimension),
        "kappa": model.kappa,
        "threshold": threshold,
        "levels": levels,
        "passed": bool(levels) and all(c < threshold for c in levels),
    }
    if records and np.any(records[-1].field != 0.0):
        report["sobolev_quotient"] = sobolev_quotient(grid, records[-1].field)
    return report


def build_report(trace: SolveTrace, grid: Grid, model: NonlinearityModel, config: RunConfig,
                 threads: int = 4) -> VerificationReport:
    """Run every check on the trace concurrently and assemble the report"""
    records = trace.records
    u = records[-1].field
    seed = config.run_seed
    fb = extract_free_boundary(grid, u)
    if not fb.is_empty:
        attach_gradients(grid, u, fb)
    interface = fb.points if not fb.is_empty else None

    jobs = {
        "fb_condition": lambda: check_fb_condition(grid, u, fb, config.verify_fb_median_max,
                                                   config.verify_max_points, seed),
        "nondegeneracy": lambda: check_nondegeneracy(grid, u, config.verify_nondegeneracy_r0,
                                                     config.verify_nondegeneracy_c_min, interface),
        "density": lambda: check_density(grid, u, fb, config.verify_density_r0, config.verify_density_c_min,
                                         config.verify_max_points, seed),
        "variational": lambda: check_variational_identity(grid, model, records,
                                                          factor=config.verify_variational_factor),
        "energy": lambda: check_energy_convergence(grid, model, records, config.verify_cross_check),
        "lipschitz": lambda: check_lipschitz(grid, records, config.verify_lipschitz_ratio),
        "aux": lambda: check_aux(grid, model, u, fb, config.verify_max_points, seed),
    }
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = {name: executor.submit(job) for name, job in jobs.items()}
        results = {name: future.result() for name, future in futures.items()}

    report = VerificationReport(
        config_hash=trace.config_hash, seed=seed, thresholds=config.thresholds,
        convergence=convergence_table(grid, records),
        critical=check_critical(grid, model, records) if isinstance(model, CriticalCombo) else None,
        **results,
    )
    for name in jobs:
        logger.info(f"Check {name}: {'pass' if results[name].passed else 'FAIL'}")
    logger.info(f"Verification {'passed' if report.passed else 'failed'}")
    return report
