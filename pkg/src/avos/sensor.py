"""Pinhole camera model, UAV poses, and the box-world renderer.

Conventions used throughout the package:

* World frame: X east, Y north, Z up, meters.
* Camera frame: +Z forward (optical axis), +X right (image u), +Y down
  (image v).  world->camera is ``x_cam = R @ x_world + r``.
* Depth rasters store Euclidean ray length, not z-depth.  Back-projection
  converts ray length to the z-component before inverting the pinhole
  model; see :func:`ray_length_to_z`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .world import Scene

try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

IGNORED_LABEL = "ignored"

# Sky color for pixels with no surface hit.
_BACKGROUND_RGB = (171, 205, 229)
# Flat per-face tint so humans can read box orientation without lighting.
_FACE_SHADE = (0.88, 0.74, 1.0)  # hit on an x-, y-, z-facing slab


class SensorError(ValueError):
    """Raised for invalid sensing requests (bad pose, zero depth, ...)."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus raster size and sensing range."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    max_range: float = 60.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera raster must be positive-sized")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @classmethod
    def from_fov(
        cls, width: int, height: int, hfov_deg: float = 90.0, max_range: float = 60.0
    ) -> "CameraModel":
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(
            width=width,
            height=height,
            fx=fx,
            fy=fx,
            cx=width / 2.0,
            cy=height / 2.0,
            max_range=max_range,
        )

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def intrinsics_inv(self) -> np.ndarray:
        # Closed-form inverse of the upper-triangular pinhole matrix.
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


def _rotation_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Camera axes at yaw=0, pitch=0 expressed in world coordinates:
# right = -Y (south), down = -Z, forward = +X (east).
_BASE_CAM_TO_WORLD = np.array(
    [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class Pose:
    """UAV position plus yaw/pitch orientation (roll is fixed at zero)."""

    position: tuple[float, float, float]
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "yaw_deg", float(self.yaw_deg) % 360.0)
        object.__setattr__(self, "pitch_deg", float(self.pitch_deg))
        if not -90.0 <= self.pitch_deg <= 90.0:
            raise ValueError(f"pitch {self.pitch_deg} outside [-90, 90]")

    @property
    def rotation_cam_to_world(self) -> np.ndarray:
        return _rotation_z(self.yaw_deg) @ _rotation_y(-self.pitch_deg) @ _BASE_CAM_TO_WORLD

    @property
    def rotation(self) -> np.ndarray:
        """World->camera rotation (the extrinsic R)."""
        return self.rotation_cam_to_world.T

    @property
    def translation(self) -> np.ndarray:
        """Extrinsic translation r, so that x_cam = R @ x_world + r."""
        return -self.rotation @ np.asarray(self.position)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation_cam_to_world[:, 2]

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "yaw_deg": self.yaw_deg,
            "pitch_deg": self.pitch_deg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(tuple(d["position"]), d["yaw_deg"], d["pitch_deg"])


@dataclass
class Observation:
    """One sensing step: color, ray-length depth, and object-id rasters."""

    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, meters of ray length, 0 = no hit
    semantic_ids: np.ndarray  # (H, W) int32 object ids, 0 = no hit
    pose: Pose
    step_index: int = 0

    def __post_init__(self) -> None:
        if not (
            self.color.shape[:2] == self.depth.shape == self.semantic_ids.shape
        ):
            raise SensorError("observation rasters must share dimensions")


def ray_length_to_z(u, v, ray_length, camera: CameraModel):
    """Convert Euclidean ray length at pixel (u, v) to camera z-depth."""
    dx = (np.asarray(u) - camera.cx) / camera.fx
    dy = (np.asarray(v) - camera.cy) / camera.fy
    return np.asarray(ray_length) / np.sqrt(dx * dx + dy * dy + 1.0)


def backproject(
    u, v, depth, camera: CameraModel, pose: Pose, depth_is_ray_length: bool = True
) -> np.ndarray:
    """Lift pixel(s) with positive depth to world coordinates.

    Inverts the pinhole model: scales the homogeneous pixel by z-depth,
    applies the inverse intrinsics, then undoes the extrinsics.  ``depth``
    is interpreted as ray length by default (the renderer's convention)
    and converted to z first.

    Returns an array of shape (3,) for scalars or (N, 3) for vectors.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0):
        raise SensorError("backproject requires positive depth")
    z = ray_length_to_z(u, v, depth, camera) if depth_is_ray_length else depth
    pix = np.stack([u * z, v * z, z], axis=-1)
    cam_pts = pix @ camera.intrinsics_inv.T
    world = (cam_pts - pose.translation) @ np.linalg.inv(pose.rotation).T
    return world


def project(
    point, camera: CameraModel, pose: Pose, depth_as_ray_length: bool = True
) -> np.ndarray:
    """Project world point(s) to (u, v, depth); inverse of :func:`backproject`.

    Points behind the camera raise :class:`SensorError` for scalar input
    and produce NaN rows for vector input.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    cam = np.atleast_2d(pts) @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    if single and z[0] <= 0:
        raise SensorError("point is behind the camera")
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * cam[:, 0] / z + camera.cx
        v = camera.fy * cam[:, 1] / z + camera.cy
    d = np.linalg.norm(cam, axis=1) if depth_as_ray_length else z
    out = np.stack([u, v, d], axis=-1)
    out[z <= 0] = np.nan
    return out[0] if single else out


def _pixel_ray_dirs(camera: CameraModel, pose: Pose) -> np.ndarray:
    """Unit world-frame ray directions through every pixel center, (H*W, 3)."""
    us = np.arange(camera.width) + 0.5
    vs = np.arange(camera.height) + 0.5
    uu, vv = np.meshgrid(us, vs)
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=-1)
    dirs_cam = pix @ camera.intrinsics_inv.T
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    return dirs_cam @ pose.rotation_cam_to_world.T


def _ray_box_entry(origin: np.ndarray, dirs: np.ndarray, bmin, bmax):
    """Slab-test entry distance of rays into one or many boxes.

    ``bmin``/``bmax`` may be (3,) or (B, 3).  Returns (t_enter, axis) of
    shape (B, N), with t_enter = inf where the ray misses; axis identifies
    the slab bounding entry (used for face shading).
    """
    bmin = np.atleast_2d(np.asarray(bmin, dtype=float))[:, None, :]
    bmax = np.atleast_2d(np.asarray(bmax, dtype=float))[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (bmin - origin) / dirs[None, :, :]
        t_hi = (bmax - origin) / dirs[None, :, :]
    t_near = np.fmin(t_lo, t_hi)
    t_far = np.fmax(t_lo, t_hi)
    # fmax/fmin skip NaNs from 0/0 (origin on a slab plane with parallel ray).
    t_enter_ax = np.where(np.isnan(t_near), -np.inf, t_near)
    t_enter = np.max(t_enter_ax, axis=2)
    t_exit = np.min(np.where(np.isnan(t_far), np.inf, t_far), axis=2)
    hit = (t_exit >= t_enter) & (t_exit > 0)
    axis = np.argmax(t_enter_ax, axis=2)
    return np.where(hit, t_enter, np.inf), axis


if _HAVE_NUMBA:

    @njit(cache=True)
    def _raycast_kernel(origin, dirs, mins, maxs):
        n = dirs.shape[0]
        b = mins.shape[0]
        t_out = np.full(n, np.inf)
        box_out = np.full(n, -1, dtype=np.int64)
        ax_out = np.zeros(n, dtype=np.int8)
        for p in range(n):
            best_t = np.inf
            best_b = -1
            best_ax = 0
            for j in range(b):
                t_enter = -np.inf
                t_exit = np.inf
                axis = 0
                ok = True
                for ax in range(3):
                    d = dirs[p, ax]
                    o = origin[ax]
                    if d != 0.0:
                        t1 = (mins[j, ax] - o) / d
                        t2 = (maxs[j, ax] - o) / d
                        if t1 > t2:
                            t1, t2 = t2, t1
                        if t1 > t_enter:
                            t_enter = t1
                            axis = ax
                        if t2 < t_exit:
                            t_exit = t2
                    elif o < mins[j, ax] or o > maxs[j, ax]:
                        ok = False
                        break
                if (
                    ok
                    and t_exit >= t_enter
                    and t_exit > 0
                    and 1e-9 < t_enter < best_t
                ):
                    best_t = t_enter
                    best_b = j
                    best_ax = axis
            t_out[p] = best_t
            box_out[p] = best_b
            ax_out[p] = best_ax
        return t_out, box_out, ax_out


def _raycast(origin: np.ndarray, dirs: np.ndarray, mins: np.ndarray, maxs: np.ndarray):
    """Nearest-box hit per ray: (t, box index or -1, entry axis)."""
    if _HAVE_NUMBA:
        return _raycast_kernel(
            np.ascontiguousarray(origin, dtype=float),
            np.ascontiguousarray(dirs, dtype=float),
            np.ascontiguousarray(mins, dtype=float),
            np.ascontiguousarray(maxs, dtype=float),
        )
    t_all, axis_all = _ray_box_entry(origin, dirs, mins, maxs)
    t_all = np.where(t_all > 1e-9, t_all, np.inf)
    winner = np.argmin(t_all, axis=0)
    cols = np.arange(dirs.shape[0])
    t = t_all[winner, cols]
    box = np.where(np.isfinite(t), winner, -1)
    return t, box, axis_all[winner, cols].astype(np.int8)


def render(scene: "Scene", pose: Pose, camera: CameraModel, step_index: int = 0) -> Observation:
    """Raycast the scene's boxes into color/depth/id rasters.

    Pure function of its inputs; nearest box along each pixel-center ray
    wins.  Rays that hit nothing within ``camera.max_range`` get depth 0
    and semantic id 0.
    """
    pos = np.asarray(pose.position, dtype=float)
    if not scene.contains_point(pose.position):
        raise SensorError(f"pose {pose.position} outside scene bounds")

    n_pix = camera.width * camera.height
    dirs = _pixel_ray_dirs(camera, pose)
    best_t = np.full(n_pix, np.inf)
    best_obj = np.zeros(n_pix, dtype=np.int32)
    best_axis = np.zeros(n_pix, dtype=np.int8)

    if scene.objects:
        mins = np.array([o.box_min for o in scene.objects])
        maxs = np.array([o.box_max for o in scene.objects])
        ids = np.array([o.object_id for o in scene.objects], dtype=np.int32)
        best_t, box_idx, best_axis = _raycast(pos, dirs, mins, maxs)
        best_obj = np.where(box_idx >= 0, ids[np.clip(box_idx, 0, None)], 0).astype(
            np.int32
        )

    in_range = np.isfinite(best_t) & (best_t <= camera.max_range)
    depth = np.where(in_range, best_t, 0.0).reshape(camera.height, camera.width)
    ids = np.where(in_range, best_obj, 0).astype(np.int32)

    color = np.empty((n_pix, 3), dtype=np.uint8)
    color[:] = _BACKGROUND_RGB
    if scene.objects:
        palette = {o.object_id: o.display_color for o in scene.objects}
        for oid, rgb in palette.items():
            mask = in_range & (best_obj == oid)
            if not mask.any():
                continue
            base = np.asarray(rgb, dtype=float)
            for ax in range(3):
                m = mask & (best_axis == ax)
                color[m] = np.clip(base * _FACE_SHADE[ax], 0, 255).astype(np.uint8)

    return Observation(
        color=color.reshape(camera.height, camera.width, 3),
        depth=depth,
        semantic_ids=ids.reshape(camera.height, camera.width),
        pose=pose,
        step_index=step_index,
    )


def save_observation_pngs(observation: Observation, directory, prefix: str = "obs") -> dict:
    """Serialize one observation for logs and the UI.

    Color is 8-bit RGB; depth is 16-bit with millimeter quantization
    (requiring max range below 65.535 m); the id map is 16-bit.  Returns
    the written paths keyed by raster name.
    """
    from pathlib import Path

    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if observation.depth.max() * 1000.0 > 65535:
        raise SensorError("depth exceeds the 16-bit millimeter range")
    paths = {}
    color_path = directory / f"{prefix}_color.png"
    Image.fromarray(observation.color).save(color_path)
    paths["color"] = color_path
    depth_mm = np.round(observation.depth * 1000.0).astype(np.uint16)
    depth_path = directory / f"{prefix}_depth.png"
    Image.fromarray(depth_mm, mode="I;16").save(depth_path)
    paths["depth"] = depth_path
    ids_path = directory / f"{prefix}_ids.png"
    Image.fromarray(observation.semantic_ids.astype(np.uint16), mode="I;16").save(ids_path)
    paths["semantic_ids"] = ids_path
    return paths


@dataclass
class SegmentedObservation:
    """Per-pixel labels after object-centric filtering.

    ``label_ids`` indexes into ``labels``; -1 marks pixels with no surface.
    Labels outside the retained set are collapsed to :data:`IGNORED_LABEL`.
    """

    labels: tuple[str, ...]
    label_ids: np.ndarray  # (H, W) int16
    observation: Observation

    def label_at(self, row: int, col: int) -> str | None:
        idx = int(self.label_ids[row, col])
        return None if idx < 0 else self.labels[idx]


def segment(
    scene: "Scene",
    observation: Observation,
    related: set[str] | frozenset[str],
    p_noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> SegmentedObservation:
    """Ground-truth segmentation with optional label corruption.

    Each surface pixel takes its object's label; with probability
    ``p_noise`` it is independently replaced by a different label drawn
    from the scene's category set.  Labels not in ``related`` map to
    :data:`IGNORED_LABEL` so downstream mapping stays object-centric.
    """
    ids = observation.semantic_ids
    id_to_label = {o.object_id: o.label for o in scene.objects}
    scene_labels = sorted({o.label for o in scene.objects})

    registry = sorted(set(related)) + [IGNORED_LABEL]
    pos = {lab: i for i, lab in enumerate(registry)}
    ignored_id = pos[IGNORED_LABEL]

    # Map object ids to ground-truth label indices in the scene vocabulary.
    scene_pos = {lab: i for i, lab in enumerate(scene_labels)}
    max_id = max(id_to_label, default=0)
    lut = np.full(max_id + 1, -1, dtype=np.int16)
    for oid, lab in id_to_label.items():
        lut[oid] = scene_pos[lab]
    gt = np.where(ids > 0, lut[np.clip(ids, 0, max_id)], -1)

    if p_noise > 0:
        if rng is None:
            raise SensorError("label noise requires an rng")
        if len(scene_labels) > 1:
            surface = gt >= 0
            flip = surface & (rng.random(gt.shape) < p_noise)
            # Uniform over the *other* labels via a shifted draw.
            offset = rng.integers(1, len(scene_labels), size=gt.shape)
            gt = np.where(flip, (gt + offset) % len(scene_labels), gt)

    remap = np.array(
        [pos.get(lab, ignored_id) for lab in scene_labels] or [ignored_id],
        dtype=np.int16,
    )
    label_ids = np.where(gt >= 0, remap[np.clip(gt, 0, None)], -1).astype(np.int16)
    return SegmentedObservation(tuple(registry), label_ids, observation)
