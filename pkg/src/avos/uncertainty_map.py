"""Per-face 3D uncertainty map with distance-attenuated updates.

Every cell tracks six face values in [0, 1], all starting at 1 (fully
unexplored).  Observing a face multiplies it by exp(-alpha * d) where d is
the distance from the agent to the cell center, so uncertainty only ever
decreases.  Face visibility is a frustum test on the face center plus a
voxel-walk occlusion check against the supplied occupancy grid; the same
routine backs the cognitive map's recognition marking.
"""

from __future__ import annotations

import numpy as np

from .semantic_map import GridSpec, float_grid_dump, grid_digest
from .sensor import CameraModel, Pose

try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

# Face order: -x, +x, -y, +y, -z, +z.
FACE_OFFSETS = np.array(
    [
        [-0.5, 0.0, 0.0],
        [0.5, 0.0, 0.0],
        [0.0, -0.5, 0.0],
        [0.0, 0.5, 0.0],
        [0.0, 0.0, -0.5],
        [0.0, 0.0, 0.5],
    ]
)

_OCCLUSION_SLACK = 1e-9


def attenuation(distance, alpha: float):
    """Exponential distance falloff applied to observed faces."""
    return np.exp(-alpha * np.asarray(distance, dtype=float))


def _frustum_aabb(pose: Pose, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """World-space AABB of everything within sensing range.

    The viewable region is the frustum pyramid cut by the range ball; its
    axis extremes can lie on spherical-cap arcs, so the safe box is the
    ball's.  The exact per-cell projection test downstream does the real
    pruning.
    """
    center = np.asarray(pose.position)
    return center - camera.max_range, center + camera.max_range


_CENTER_CACHE: dict[GridSpec, tuple[np.ndarray, np.ndarray]] = {}


def _grid_centers(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cached (cells (nx,ny,nz,3) int64, centers (nx,ny,nz,3) float64)."""
    cached = _CENTER_CACHE.get(spec)
    if cached is None:
        nx, ny, nz = spec.dims
        ii, jj, kk = np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
        )
        cells = np.stack([ii, jj, kk], axis=-1)
        centers = np.asarray(spec.bounds_min) + (cells + 0.5) * np.asarray(spec.cell)
        if len(_CENTER_CACHE) > 8:
            _CENTER_CACHE.clear()
        cached = _CENTER_CACHE[spec] = (cells, centers)
    return cached


def _candidate_faces(
    spec: GridSpec, pose: Pose, camera: CameraModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells plausibly in view, expanded to per-face center points.

    Stage one clips to the frustum's bounding index box and keeps cells
    whose center projects inside the image expanded by the cell
    half-diagonal, so no face center can be missed; stage two (the exact
    per-face test) happens in the caller.  Returns (cell indices (M,3),
    face indices (M,), face centers (M,3)).
    """
    lo = np.asarray(spec.bounds_min)
    cell = np.asarray(spec.cell)
    dims = np.asarray(spec.dims)
    all_cells, all_centers = _grid_centers(spec)

    amin, amax = _frustum_aabb(pose, camera)
    i0 = np.clip(np.floor((amin - cell - lo) / cell).astype(np.int64), 0, dims - 1)
    i1 = np.clip(np.floor((amax + cell - lo) / cell).astype(np.int64), 0, dims - 1) + 1
    cells = all_cells[i0[0] : i1[0], i0[1] : i1[1], i0[2] : i1[2]].reshape(-1, 3)
    centers = all_centers[i0[0] : i1[0], i0[1] : i1[1], i0[2] : i1[2]].reshape(-1, 3)

    half_diag = float(np.linalg.norm(cell) / 2.0)
    cam = (centers - np.asarray(pose.position)) @ pose.rotation_cam_to_world
    z = cam[:, 2]
    keep = z > -half_diag
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.maximum(z, 1e-9)
        margin_u = camera.fx * half_diag / zs
        margin_v = camera.fy * half_diag / zs
        u = camera.fx * cam[:, 0] / zs + camera.cx
        v = camera.fy * cam[:, 1] / zs + camera.cy
    near = z <= half_diag
    keep &= near | (
        (u >= -margin_u)
        & (u < camera.width + margin_u)
        & (v >= -margin_v)
        & (v < camera.height + margin_v)
    )
    keep &= np.einsum("ij,ij->i", cam, cam) <= (camera.max_range + half_diag) ** 2
    cells = cells[keep]
    centers = centers[keep]

    face_pts = centers[:, None, :] + FACE_OFFSETS[None, :, :] * cell
    n = len(cells)
    cells6 = np.repeat(cells, 6, axis=0)
    faces6 = np.tile(np.arange(6), n)
    return cells6, faces6, face_pts.reshape(-1, 3)


def _in_frustum(points: np.ndarray, pose: Pose, camera: CameraModel) -> np.ndarray:
    cam = (points - np.asarray(pose.position)) @ pose.rotation_cam_to_world
    z = cam[:, 2]
    ok = z > 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam[:, 0] / z + camera.cx
        v = camera.fy * cam[:, 1] / z + camera.cy
    ok &= (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    ok &= np.einsum("ij,ij->i", cam, cam) <= camera.max_range**2
    return ok


if _HAVE_NUMBA:

    @njit(cache=True)
    def _dda_blocked_kernel(origin, targets, occ, lo, cell, dims, start, limit):
        m = targets.shape[0]
        out = np.zeros(m, dtype=np.bool_)
        for r in range(m):
            cx, cy, cz = start[0], start[1], start[2]
            blocked = False
            tmax = np.empty(3)
            tdelta = np.empty(3)
            stp = np.empty(3, dtype=np.int64)
            cur = np.empty(3, dtype=np.int64)
            cur[0], cur[1], cur[2] = cx, cy, cz
            for ax in range(3):
                d = targets[r, ax] - origin[ax]
                if d > 0:
                    stp[ax] = 1
                    tmax[ax] = (lo[ax] + (cur[ax] + 1) * cell[ax] - origin[ax]) / d
                    tdelta[ax] = cell[ax] / d
                elif d < 0:
                    stp[ax] = -1
                    tmax[ax] = (lo[ax] + cur[ax] * cell[ax] - origin[ax]) / d
                    tdelta[ax] = -cell[ax] / d
                else:
                    stp[ax] = 1
                    tmax[ax] = np.inf
                    tdelta[ax] = np.inf
            while True:
                ax = 0
                if tmax[1] < tmax[ax]:
                    ax = 1
                if tmax[2] < tmax[ax]:
                    ax = 2
                t_enter = tmax[ax]
                if t_enter >= limit:
                    break
                cur[ax] += stp[ax]
                tmax[ax] += tdelta[ax]
                if (
                    0 <= cur[0] < dims[0]
                    and 0 <= cur[1] < dims[1]
                    and 0 <= cur[2] < dims[2]
                    and occ[cur[0], cur[1], cur[2]]
                ):
                    blocked = True
                    break
            out[r] = blocked
        return out


def _occluded_numpy(origin, targets, occupancy, lo, cell, dims, start, limit):
    m = len(targets)
    blocked = np.zeros(m, dtype=bool)
    d = targets - origin
    step = np.where(d > 0, 1, -1).astype(np.int64)
    cur = np.broadcast_to(start, (m, 3)).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = lo + (cur + (d > 0)) * cell
        t_max = np.where(d != 0, (boundary - origin) / d, np.inf)
        t_delta = np.where(d != 0, cell / np.abs(d), np.inf)

    active = np.flatnonzero(~blocked)
    while active.size:
        tm = t_max[active]
        ax = np.argmin(tm, axis=1)
        rows = np.arange(active.size)
        t_enter = tm[rows, ax]
        alive = t_enter < limit
        active = active[alive]
        if active.size == 0:
            break
        ax = ax[alive]
        cur[active, ax] += step[active, ax]
        t_max[active, ax] += t_delta[active, ax]
        nxt = cur[active]
        inside = np.all((nxt >= 0) & (nxt < dims), axis=1)
        hit = np.zeros(active.size, dtype=bool)
        safe = np.clip(nxt, 0, dims - 1)
        hit[inside] = occupancy[safe[inside, 0], safe[inside, 1], safe[inside, 2]]
        blocked[active[hit]] = True
        active = active[~hit]
    return blocked


def occluded_from_point(
    origin, targets: np.ndarray, occupancy: np.ndarray, spec: GridSpec
) -> np.ndarray:
    """Whether each target point is hidden behind occupied cells.

    Walks the voxel grid from ``origin`` toward every target and reports a
    block when any occupied cell is entered strictly before the target
    (targets on cell boundaries do not block themselves).  The origin's
    own cell is transparent: the camera hovers in the free part of a cell
    that may also contain mapped surface, and must not blind itself.
    """
    origin = np.asarray(origin, dtype=float)
    targets = np.ascontiguousarray(targets, dtype=float)
    lo = np.asarray(spec.bounds_min)
    cell = np.asarray(spec.cell)
    dims = np.asarray(spec.dims, dtype=np.int64)
    m = len(targets)
    if m == 0:
        return np.zeros(0, dtype=bool)

    start = np.clip(np.floor((origin - lo) / cell).astype(np.int64), 0, dims - 1)
    limit = 1.0 - _OCCLUSION_SLACK
    if _HAVE_NUMBA:
        return _dda_blocked_kernel(
            origin, targets, np.ascontiguousarray(occupancy), lo, cell, dims, start, limit
        )
    return _occluded_numpy(origin, targets, occupancy, lo, cell, dims, start, limit)


def visible_cells(
    occupancy: np.ndarray, spec: GridSpec, pose: Pose, camera: CameraModel
) -> tuple[np.ndarray, np.ndarray]:
    """All (cell, face) pairs visible from the pose.

    A face is visible when the ray from the camera through the face center
    stays inside the view frustum and range, and no occupied cell lies
    strictly nearer along that ray.  Deterministic; pure.
    """
    cells, faces, pts = _candidate_faces(spec, pose, camera)
    keep = _in_frustum(pts, pose, camera)
    cells, faces, pts = cells[keep], faces[keep], pts[keep]
    if len(cells) == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
    blocked = occluded_from_point(pose.position, pts, occupancy, spec)
    return cells[~blocked], faces[~blocked]


def visibility_mask(
    spec: GridSpec, cells: np.ndarray, faces: np.ndarray
) -> np.ndarray:
    """Expand (cell, face) pairs into a boolean (nx, ny, nz, 6) mask."""
    mask = np.zeros((*spec.dims, 6), dtype=bool)
    if len(cells):
        mask[cells[:, 0], cells[:, 1], cells[:, 2], faces] = True
    return mask


class UncertaintyGrid:
    """Six face values per cell, multiplicatively attenuated when seen."""

    def __init__(self, spec: GridSpec, alpha: float = 0.02):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.spec = spec
        self.alpha = alpha
        self.values = np.ones((*spec.dims, 6), dtype=np.float64)

    def face_values(self, i: int, j: int, k: int) -> np.ndarray:
        self.spec._check_index(i, j, k)
        return self.values[i, j, k]

    def attenuate(
        self,
        occupancy: np.ndarray,
        pose: Pose,
        camera: CameraModel,
        visibility: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> float:
        """Apply one observation; returns the total uncertainty reduction.

        Only faces visible from the pose change; each is multiplied by the
        falloff at its cell-center distance.  ``visibility`` may carry a
        precomputed (cells, faces) pair to share work across map layers.
        """
        cells, faces = (
            visibility
            if visibility is not None
            else visible_cells(occupancy, self.spec, pose, camera)
        )
        if len(cells) == 0:
            return 0.0
        centers = self.spec.cell_centers(cells)
        dist = np.linalg.norm(centers - np.asarray(pose.position), axis=1)
        factor = attenuation(dist, self.alpha)
        old = self.values[cells[:, 0], cells[:, 1], cells[:, 2], faces]
        new = old * factor
        self.values[cells[:, 0], cells[:, 1], cells[:, 2], faces] = new
        return float(np.sum(old - new))

    def mean_uncertainty(self) -> float:
        return float(self.values.mean())

    def to_dump(self) -> dict:
        """Per-cell mean of faces, same header shape as the semantic dump."""
        return float_grid_dump("uncertainty", self.spec, self.values.mean(axis=3))

    def digest(self) -> str:
        return grid_digest(self.spec, self.values, extra="uncertainty")
