"""
Free-boundary extraction, one-sided gradients and distances to {u <= 1}
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .discretization import Grid, gradient_field
from .models import DistanceField, FreeBoundary

logger = logging.getLogger(__name__)

LEVEL = 1.0

# corners counter-clockwise: c0 (i, j), c1 (i+1, j), c2 (i+1, j+1), c3 (i, j+1); edge k joins c_k and c_{k+1}
CORNER_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))


def _edge_point(corners: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    a, b = k, (k + 1) % 4
    t = (LEVEL - values[a]) / (values[b] - values[a])
    t = min(max(t, 0.0), 1.0)
    return corners[a] + t * (corners[b] - corners[a])


def _cell_segments(corners: np.ndarray, values: np.ndarray):
    """
    Oriented segments of one cell with {u > 1} on the left. Each segment runs
    from an exit edge (inside -> outside, walking counter-clockwise) to an
    entry edge. Saddles pair exit k with entry k+1 when the cell mean is above
    the level and with entry k-1 otherwise.
    """
    inside = values > LEVEL
    exits = [k for k in range(4) if inside[k] and not inside[(k + 1) % 4]]
    entries = [k for k in range(4) if not inside[k] and inside[(k + 1) % 4]]
    if not exits:
        return []
    if len(exits) == 1:
        pairs = [(exits[0], entries[0])]
    else:
        offset = 1 if np.mean(values) > LEVEL else -1
        pairs = [(k, (k + offset) % 4) for k in exits]
    return [(_edge_point(corners, values, a), _edge_point(corners, values, b)) for a, b in pairs]


def _extract_radial(grid: Grid, u: np.ndarray) -> FreeBoundary:
    r = grid.coords[0]
    inside = u > LEVEL
    crossings = np.flatnonzero(inside[:-1] != inside[1:])
    radii = [r[i] + (LEVEL - u[i]) / (u[i + 1] - u[i]) * (r[i + 1] - r[i]) for i in crossings]
    normals = [np.sign(u[i + 1] - u[i]) for i in crossings]
    return FreeBoundary(segments=np.zeros((0, 2, 1)),
                        points=np.array(radii, dtype=float).reshape(-1, 1),
                        normals=np.array(normals, dtype=float).reshape(-1, 1))


def extract_free_boundary(grid: Grid, u: np.ndarray) -> FreeBoundary:
    """Marching squares on the level u = 1 (a list of crossing radii on radial grids)"""
    u = np.asarray(u, dtype=float)
    if grid.kind == "radial":
        return _extract_radial(grid, u)

    x, y = grid.coords
    above = u > LEVEL
    # cells whose corners straddle the level
    mixed = ((above[:-1, :-1] != above[1:, :-1]) | (above[:-1, :-1] != above[:-1, 1:])
             | (above[:-1, :-1] != above[1:, 1:]))
    segments = []
    for i, j in zip(*np.nonzero(mixed)):
        corners = np.array([(x[i + di], y[j + dj]) for di, dj in CORNER_OFFSETS])
        values = np.array([u[i + di, j + dj] for di, dj in CORNER_OFFSETS])
        segments.extend(_cell_segments(corners, values))

    if not segments:
        return FreeBoundary(segments=np.zeros((0, 2, 2)), points=np.zeros((0, 2)), normals=np.zeros((0, 2)))
    segments = np.array(segments)
    endpoints = segments.reshape(-1, 2)
    _, first = np.unique(np.round(endpoints / grid.h, 9), axis=0, return_index=True)
    points = endpoints[np.sort(first)]
    normals = level_set_normals(grid, u, points, segments)
    logger.debug(f"Extracted {len(segments)} segments, {len(points)} free-boundary points")
    return FreeBoundary(segments=segments, points=points, normals=normals)


def level_set_normals(grid: Grid, u: np.ndarray, points: np.ndarray,
                      segments: Optional[np.ndarray] = None) -> np.ndarray:
    """Unit normals pointing into {u > 1} from the interpolated gradient of u"""
    grad = gradient_field(grid, u)
    components = np.stack([grid.interpolator(g)(points) for g in grad], axis=-1)
    lengths = np.linalg.norm(components, axis=-1)
    flat = ~(lengths > 1e-14)
    if np.any(flat) and segments is not None and len(segments):
        # flat gradient: fall back to the left normal of the nearest segment
        mids = segments.mean(axis=1)
        _, nearest = cKDTree(mids).query(points[flat])
        tangent = segments[nearest, 1] - segments[nearest, 0]
        components[flat] = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
        lengths = np.linalg.norm(components, axis=-1)
    return components / lengths[:, None]


def one_sided_gradients(grid: Grid, u: np.ndarray, point: np.ndarray, normal: np.ndarray,
                        distances: Optional[Sequence[float]] = None,
                        interpolator=None) -> Tuple[float, float, bool]:
    """
    (alpha, beta, valid): slopes of u - 1 along +normal and -normal from a
    least-squares line through the free-boundary point, fitted to
    interpolated samples at 2h, 3h and 4h. Points without room for the
    samples on either side are returned invalid with NaN slopes.
    """
    if distances is None:
        distances = (2.0 * grid.h, 3.0 * grid.h, 4.0 * grid.h)
    s = np.asarray(distances, dtype=float)
    point = np.asarray(point, dtype=float)
    normal = np.asarray(normal, dtype=float)
    interp = interpolator or grid.interpolator(u)
    outward = point + s[:, None] * normal
    inward = point - s[:, None] * normal
    if not (np.all(grid.contains(outward)) and np.all(grid.contains(inward))):
        return float("nan"), float("nan"), False
    plus = np.asarray(interp(outward), dtype=float) - LEVEL
    minus = np.asarray(interp(inward), dtype=float) - LEVEL
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        return float("nan"), float("nan"), False
    alpha = float(s @ plus / (s @ s))
    beta = float(-(s @ minus) / (s @ s))
    return max(alpha, 0.0), max(beta, 0.0), True


def attach_gradients(grid: Grid, u: np.ndarray, fb: FreeBoundary) -> FreeBoundary:
    """Fill the per-point one-sided gradient samples of a FreeBoundary"""
    interp = grid.interpolator(u)
    samples = [one_sided_gradients(grid, u, p, n, interpolator=interp) for p, n in zip(fb.points, fb.normals)]
    fb.alpha = np.array([a for a, _, _ in samples], dtype=float)
    fb.beta = np.array([b for _, b, _ in samples], dtype=float)
    fb.valid = np.array([v for _, _, v in samples], dtype=bool)
    skipped = int(np.sum(~fb.valid))
    if skipped:
        logger.warning(f"Skipped {skipped} of {len(fb.points)} free-boundary points without one-sided room")
    return fb


def _two_pass(grid: Grid, sites: np.ndarray) -> np.ndarray:
    """Raster-scan propagation of nearest-site coordinates (forward then backward)"""
    points = grid.points.reshape(grid.shape + (-1,))
    nearest = np.where(sites[..., None], points, np.inf)

    def relax(index, neighbours):
        best = nearest[index]
        here = points[index]
        dist = np.sum((best - here) ** 2)
        for offset in neighbours:
            other = tuple(a + b for a, b in zip(index, offset))
            if any(o < 0 or o >= n for o, n in zip(other, grid.shape)):
                continue
            candidate = nearest[other]
            d = np.sum((candidate - here) ** 2)
            if d < dist:
                best, dist = candidate, d
        nearest[index] = best

    if grid.kind == "radial":
        forward, backward = ((-1,),), ((1,),)
    else:
        forward = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
        backward = ((1, 1), (1, 0), (1, -1), (0, 1))
    order = list(np.ndindex(*grid.shape))
    for index in order:
        relax(index, forward)
    for index in reversed(order):
        relax(index, backward)
    return np.sqrt(np.sum((nearest - points) ** 2, axis=-1))


def distance_to_sublevel(grid: Grid, u: np.ndarray, include_interface: bool = False,
                         method: str = "exact", interface: Optional[np.ndarray] = None) -> DistanceField:
    """
    Euclidean distance from every node to the nodes with u <= 1. With
    include_interface the extracted free-boundary points join the target set.
    method='two_pass' is the raster approximation over node sites only.
    """
    u = np.asarray(u, dtype=float)
    sites = u <= LEVEL
    if method == "two_pass":
        if include_interface:
            raise ValueError("The two-pass transform works on node sites only")
        if not np.any(sites):
            return DistanceField(np.full(grid.shape, np.inf), method)
        return DistanceField(_two_pass(grid, sites), method)
    if method != "exact":
        raise ValueError(f"Unknown distance method '{method}'")

    targets = grid.points[sites]
    if include_interface:
        if interface is None:
            interface = extract_free_boundary(grid, u).points
        targets = np.concatenate([targets, np.asarray(interface, dtype=float).reshape(-1, targets.shape[-1])])
    if len(targets) == 0:
        return DistanceField(np.full(grid.shape, np.inf), method)
    distance, _ = cKDTree(targets).query(grid.points.reshape(-1, grid.points.shape[-1]))
    values = np.where(sites, 0.0, distance.reshape(grid.shape))
    return DistanceField(values, method)
