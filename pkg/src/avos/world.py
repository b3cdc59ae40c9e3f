"""Box-world scenes, search tasks, generation, and file formats.

A scene is a union of labeled axis-aligned boxes inside a bounded volume.
Buildings carry facade-mounted shops, signs, and rooftop billboards; trees,
vehicles, and facilities stand free.  Everything is deterministic for a
fixed seed so scene and task files diff cleanly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .sensor import CameraModel, Pose, render

SCENE_FORMAT_VERSION = 1
TASK_FORMAT_VERSION = 1

CATEGORIES = ("building", "tree", "vehicle", "shop", "billboard", "sign", "facility")
TARGET_CATEGORIES = ("shop", "sign", "billboard", "vehicle", "facility", "building")

AGENT_CLEARANCE = 1.0  # meters the agent center must keep from any box or the ground

_CATEGORY_COLORS = {
    "building": (156, 148, 136),
    "tree": (64, 130, 62),
    "vehicle": (178, 44, 44),
    "shop": (228, 170, 60),
    "billboard": (90, 110, 200),
    "sign": (220, 220, 90),
    "facility": (120, 86, 160),
}

_SHOP_NAMES = (
    "CENTRAL ALL-STAR", "BLUE HARBOR", "GOLDEN WOK", "MAPLE BOOKS", "LUNA CAFE",
    "IRON BEAN", "SUNRISE MART", "VELVET CORNER", "NORTH PINE", "CITY BLOOM",
    "RIVER DELI", "ORBIT RECORDS",
)
_SIGN_NAMES = (
    "customs office", "no parking", "bus stop", "parking garage", "transit map",
    "city clinic", "post office", "bike lane", "river walk", "market hall",
)
_BILLBOARD_NAMES = (
    "soda ad", "phone ad", "travel ad", "bank ad", "museum ad", "sports ad",
)
_FACILITY_NAMES = (
    "garbage station", "power kiosk", "water pump", "tool shed", "charging dock",
    "recycling point",
)
_VEHICLE_NAMES = (
    "white van", "black car", "blue pickup", "red hatchback", "silver sedan",
    "green truck",
)
_BUILDING_NAMES = (
    "north tower", "harbor block", "granite court", "east annex", "midtown hall",
    "stone terrace", "union house", "park gate", "south depot", "crown plaza",
    "west arcade", "quarry lofts",
)


class GenerationError(RuntimeError):
    """Raised when requested scene content cannot be placed without overlap."""


class SceneParseError(ValueError):
    """Raised for files that fail to parse into the scene/task schema."""


class SceneValidationError(ValueError):
    """Raised when a parsed document violates scene or task invariants."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    label: str
    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    display_color: tuple[int, int, int]
    instance_text: str = ""

    @property
    def centroid(self) -> tuple[float, float, float]:
        return tuple((a + b) / 2.0 for a, b in zip(self.box_min, self.box_max))

    @property
    def size(self) -> tuple[float, float, float]:
        return tuple(b - a for a, b in zip(self.box_min, self.box_max))

    def contains(self, point, inflate: float = 0.0) -> bool:
        return all(
            lo - inflate <= p <= hi + inflate
            for p, lo, hi in zip(point, self.box_min, self.box_max)
        )


@dataclass(frozen=True)
class Scene:
    scene_id: str
    bounds_min: tuple[float, float, float]
    bounds_max: tuple[float, float, float]
    ground_height: float
    objects: tuple[SceneObject, ...]

    @property
    def area(self) -> float:
        return (self.bounds_max[0] - self.bounds_min[0]) * (
            self.bounds_max[1] - self.bounds_min[1]
        )

    @property
    def diagonal(self) -> float:
        return math.dist(self.bounds_min, self.bounds_max)

    def contains_point(self, point) -> bool:
        return all(
            lo <= p <= hi for p, lo, hi in zip(point, self.bounds_min, self.bounds_max)
        )

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object {object_id} in scene {self.scene_id}")


@dataclass(frozen=True)
class Task:
    """One search episode definition: find the described object from P0."""

    id: str
    scene_id: str
    difficulty: str  # Easy | Medium | Hard
    image: str  # path to a rendered close-up of the target
    text: str
    target_position: tuple[float, float, float]
    start_pose: Pose
    target_object_id: int


@dataclass(frozen=True)
class DifficultyRule:
    """Scene-size and target-uniqueness based difficulty classification."""

    small_scene_max_area: float = 20_000.0

    def is_small(self, scene: Scene) -> bool:
        return scene.area < self.small_scene_max_area

    def is_unique(self, scene: Scene, obj: SceneObject) -> bool:
        return not any(
            o.object_id != obj.object_id
            and o.label == obj.label
            and o.instance_text == obj.instance_text
            for o in scene.objects
        )

    def classify(self, scene: Scene, obj: SceneObject) -> str | None:
        """Difficulty of searching for ``obj``, or None for the unclassified
        small+non-unique combination (such targets are not emitted as tasks)."""
        small = self.is_small(scene)
        unique = self.is_unique(scene, obj)
        if small and unique:
            return "Easy"
        if not small and unique:
            return "Medium"
        if not small and not unique:
            return "Hard"
        return None


def boxes_overlap(a: SceneObject, b: SceneObject, margin: float = 0.0) -> bool:
    """True when the two boxes share positive volume (after inflating by margin)."""
    return all(
        a.box_min[i] - margin < b.box_max[i] and b.box_min[i] - margin < a.box_max[i]
        for i in range(3)
    )


def point_collides(scene: Scene, point, inflate: float = AGENT_CLEARANCE) -> bool:
    return any(obj.contains(point, inflate=inflate) for obj in scene.objects)


def pose_position_feasible(scene: Scene, point, inflate: float = AGENT_CLEARANCE) -> bool:
    """In bounds, above ground clearance, and clear of every inflated box."""
    if not scene.contains_point(point):
        return False
    if point[2] < scene.ground_height + inflate:
        return False
    return not point_collides(scene, point, inflate=inflate)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneParams:
    """Knobs for the synthetic city generator."""

    area: float = 8_000.0  # footprint in m^2
    aspect: float = 1.0  # width / depth
    airspace_height: float = 45.0
    n_buildings: int = 4
    n_trees: int = 8
    n_vehicles: int = 3
    n_shops: int = 3
    n_signs: int = 2
    n_billboards: int = 1
    n_facilities: int = 2
    duplicate_label: str | None = None  # clone one object of this label verbatim
    max_attempts: int = 400

    def __post_init__(self) -> None:
        if not 5_600.0 <= self.area <= 82_800.0:
            raise ValueError("scene area must lie within [5600, 82800] m^2")


def _color_for(rng: np.random.Generator, label: str) -> tuple[int, int, int]:
    base = np.asarray(_CATEGORY_COLORS[label], dtype=float)
    jitter = rng.integers(-18, 19, size=3)
    return tuple(int(v) for v in np.clip(base + jitter, 20, 235))


class _Placer:
    """Accumulates boxes while rejecting overlaps and flight-blocking gaps."""

    def __init__(self, rng: np.random.Generator, width: float, depth: float, max_attempts: int):
        self.rng = rng
        self.width = width
        self.depth = depth
        self.max_attempts = max_attempts
        self.objects: list[SceneObject] = []
        self._next_id = 1

    def add(self, label: str, box_min, box_max, instance_text: str = "") -> SceneObject:
        obj = SceneObject(
            object_id=self._next_id,
            label=label,
            box_min=tuple(round(float(v), 4) for v in box_min),
            box_max=tuple(round(float(v), 4) for v in box_max),
            display_color=_color_for(self.rng, label),
            instance_text=instance_text,
        )
        self.objects.append(obj)
        self._next_id += 1
        return obj

    def try_place_free(
        self, label: str, size, z0: float, margin: float, instance_text: str = ""
    ) -> SceneObject:
        """Rejection-sample a free-standing box with ``margin`` air around it."""
        sx, sy, sz = size
        for _ in range(self.max_attempts):
            x = self.rng.uniform(2.0, self.width - sx - 2.0)
            y = self.rng.uniform(2.0, self.depth - sy - 2.0)
            cand_min = (x, y, z0)
            cand_max = (x + sx, y + sy, z0 + sz)
            probe = SceneObject(0, label, cand_min, cand_max, (0, 0, 0))
            if not any(boxes_overlap(probe, o, margin=margin) for o in self.objects):
                return self.add(label, cand_min, cand_max, instance_text)
        raise GenerationError(f"could not place {label} without overlap")


def _facade_slots(building: SceneObject, rng: np.random.Generator) -> list[tuple[int, float]]:
    """Candidate (facade, offset) pairs along the building's four walls.

    Facades are numbered 0..3 = -y, +y, -x, +x.
    """
    sx = building.box_max[0] - building.box_min[0]
    sy = building.box_max[1] - building.box_min[1]
    slots = []
    for facade, extent in ((0, sx), (1, sx), (2, sy), (3, sy)):
        n = max(1, int(extent // 7.0))
        for k in range(n):
            slots.append((facade, (k + rng.uniform(0.25, 0.75)) / n))
    order = rng.permutation(len(slots))
    return [slots[i] for i in order]


def _facade_box(
    building: SceneObject, facade: int, frac: float, width: float, height: float,
    depth: float, z0: float,
) -> tuple[tuple, tuple] | None:
    """Box flush against a facade, standing ``depth`` proud of the wall."""
    bmin, bmax = building.box_min, building.box_max
    gap = 0.02  # keep facade fixtures strictly outside the wall plane
    if facade in (0, 1):
        extent = bmax[0] - bmin[0]
        if width >= extent:
            return None
        x0 = bmin[0] + frac * (extent - width)
        if facade == 0:
            y0, y1 = bmin[1] - depth - gap, bmin[1] - gap
        else:
            y0, y1 = bmax[1] + gap, bmax[1] + depth + gap
        return (x0, y0, z0), (x0 + width, y1, z0 + height)
    extent = bmax[1] - bmin[1]
    if width >= extent:
        return None
    y0 = bmin[1] + frac * (extent - width)
    if facade == 2:
        x0, x1 = bmin[0] - depth - gap, bmin[0] - gap
    else:
        x0, x1 = bmax[0] + gap, bmax[0] + depth + gap
    return (x0, y0, z0), (x1, y0 + width, z0 + height)


def generate_scene(seed: int, params: SceneParams | None = None, scene_id: str | None = None) -> Scene:
    """Deterministically synthesize a labeled box city.

    Buildings are laid out first with flyable gaps; shops/signs attach to
    facades, billboards to rooftops, and trees cluster along the fronts so
    street furniture correlates spatially with buildings.
    """
    params = params or SceneParams()
    rng = np.random.default_rng(seed)
    width = math.sqrt(params.area * params.aspect)
    depth = math.sqrt(params.area / params.aspect)
    placer = _Placer(rng, width, depth, params.max_attempts)

    building_names = list(rng.permutation(np.array(_BUILDING_NAMES)))
    buildings: list[SceneObject] = []
    for i in range(params.n_buildings):
        size = (rng.uniform(10.0, 22.0), rng.uniform(10.0, 22.0), rng.uniform(12.0, 30.0))
        buildings.append(
            placer.try_place_free(
                "building", size, 0.0, margin=7.0,
                instance_text=str(building_names[i % len(building_names)]),
            )
        )

    shop_names = list(rng.permutation(np.array(_SHOP_NAMES)))
    sign_names = list(rng.permutation(np.array(_SIGN_NAMES)))
    bill_names = list(rng.permutation(np.array(_BILLBOARD_NAMES)))

    def place_on_facade(label: str, count: int, names: list, width_rng, height_rng, z_of) -> None:
        placed = 0
        used: set[tuple[int, int, int]] = set()  # (building idx, facade, slot bucket)
        for _ in range(params.max_attempts):
            if placed >= count:
                return
            bi = int(rng.integers(0, len(buildings)))
            building = buildings[bi]
            for facade, frac in _facade_slots(building, rng):
                key = (bi, facade, int(frac * 8))
                if key in used:
                    continue
                w = rng.uniform(*width_rng)
                h = rng.uniform(*height_rng)
                box = _facade_box(building, facade, frac, w, h, 0.35, z_of(building, h))
                if box is None:
                    continue
                probe = SceneObject(0, label, box[0], box[1], (0, 0, 0))
                if probe.box_min[0] < 0 or probe.box_min[1] < 0:
                    continue
                if probe.box_max[0] > placer.width or probe.box_max[1] > placer.depth:
                    continue
                if any(boxes_overlap(probe, o) for o in placer.objects):
                    continue
                name = str(names[placed % len(names)]) if names else ""
                placer.add(label, box[0], box[1], name)
                used.add(key)
                placed += 1
                break
        if placed < count:
            raise GenerationError(f"could not attach {count} {label}s to facades")

    if params.n_shops:
        place_on_facade(
            "shop", params.n_shops, shop_names, (4.5, 6.5), (3.4, 4.0), lambda b, h: 0.0
        )

    # Signs stand on short posts a few meters off a facade, facing it.
    for i in range(params.n_signs):
        for _ in range(params.max_attempts):
            b = buildings[int(rng.integers(0, len(buildings)))]
            side = int(rng.integers(0, 4))
            off = rng.uniform(2.5, 4.5)
            w = rng.uniform(2.8, 3.6)
            h = rng.uniform(2.0, 2.6)
            z0 = rng.uniform(1.0, 2.0)
            if side in (0, 1):
                x = rng.uniform(b.box_min[0], b.box_max[0] - w)
                y = b.box_min[1] - off if side == 0 else b.box_max[1] + off
                box_min, box_max = (x, y, z0), (x + w, y + 0.35, z0 + h)
            else:
                y = rng.uniform(b.box_min[1], b.box_max[1] - w)
                x = b.box_min[0] - off if side == 2 else b.box_max[0] + off
                box_min, box_max = (x, y, z0), (x + 0.35, y + w, z0 + h)
            probe = SceneObject(0, "sign", box_min, box_max, (0, 0, 0))
            if probe.box_min[0] < 1 or probe.box_min[1] < 1:
                continue
            if probe.box_max[0] > width - 1 or probe.box_max[1] > depth - 1:
                continue
            if any(boxes_overlap(probe, o, margin=1.0) for o in placer.objects):
                continue
            placer.add("sign", box_min, box_max, str(sign_names[i % len(sign_names)]))
            break
        else:
            raise GenerationError("could not place sign near a facade")

    for i in range(params.n_billboards):
        building = buildings[int(rng.integers(0, len(buildings)))]
        w = rng.uniform(5.0, 7.0)
        h = rng.uniform(3.5, 4.2)
        bmin, bmax = building.box_min, building.box_max
        x0 = bmin[0] + rng.uniform(0.1, 0.4) * (bmax[0] - bmin[0] - w) if bmax[0] - bmin[0] > w else bmin[0]
        y = bmin[1] + rng.uniform(0.3, 0.7) * (bmax[1] - bmin[1])
        z0 = bmax[2] + 0.02
        placer.add(
            "billboard", (x0, y, z0), (min(x0 + w, bmax[0]), y + 0.35, z0 + h),
            str(bill_names[i % len(bill_names)]),
        )

    # Trees line one street side per building so they form few, dense rows.
    n_row_trees = int(params.n_trees * 0.85)
    row_sides = {bi: int(rng.integers(0, 4)) for bi in range(len(buildings))}
    for i in range(params.n_trees):
        for attempt in range(params.max_attempts):
            s = rng.uniform(1.8, 3.0)
            h = rng.uniform(4.0, 7.0)
            if i < n_row_trees and buildings:
                bi = int(rng.integers(0, len(buildings)))
                b = buildings[bi]
                side = row_sides[bi]
                off = rng.uniform(3.0, 6.5)
                if side == 0:
                    x = rng.uniform(b.box_min[0], b.box_max[0] - s)
                    y = b.box_min[1] - off - s
                elif side == 1:
                    x = rng.uniform(b.box_min[0], b.box_max[0] - s)
                    y = b.box_max[1] + off
                elif side == 2:
                    x = b.box_min[0] - off - s
                    y = rng.uniform(b.box_min[1], b.box_max[1] - s)
                else:
                    x = b.box_max[0] + off
                    y = rng.uniform(b.box_min[1], b.box_max[1] - s)
            else:
                x = rng.uniform(2.0, width - s - 2.0)
                y = rng.uniform(2.0, depth - s - 2.0)
            if not (0 < x and x + s < width and 0 < y and y + s < depth):
                continue
            probe = SceneObject(0, "tree", (x, y, 0.0), (x + s, y + s, h), (0, 0, 0))
            if any(boxes_overlap(probe, o, margin=1.2) for o in placer.objects):
                continue
            placer.add("tree", probe.box_min, probe.box_max)
            break
        else:
            raise GenerationError("could not place tree without overlap")

    vehicle_names = list(rng.permutation(np.array(_VEHICLE_NAMES)))
    for i in range(params.n_vehicles):
        size = (rng.uniform(1.8, 2.2), rng.uniform(4.6, 5.6), rng.uniform(1.8, 2.2))
        if rng.random() < 0.5:
            size = (size[1], size[0], size[2])
        placer.try_place_free(
            "vehicle", size, 0.0, margin=2.0, instance_text=str(vehicle_names[i % len(vehicle_names)])
        )

    facility_names = list(rng.permutation(np.array(_FACILITY_NAMES)))
    for i in range(params.n_facilities):
        size = (rng.uniform(3.2, 5.0), rng.uniform(3.2, 5.0), rng.uniform(2.6, 4.0))
        placer.try_place_free(
            "facility", size, 0.0, margin=2.5, instance_text=str(facility_names[i % len(facility_names)])
        )

    if params.duplicate_label:
        sources = [o for o in placer.objects if o.label == params.duplicate_label]
        if not sources:
            raise GenerationError(f"no {params.duplicate_label} available to duplicate")
        src = sources[int(rng.integers(0, len(sources)))]
        if params.duplicate_label == "shop":
            # Re-attach an identical shop to a different facade.
            sx, sy, sz = src.size
            w = max(sx, sy)
            h = sz
            placed = False
            for _ in range(params.max_attempts):
                bi = int(rng.integers(0, len(buildings)))
                for facade, frac in _facade_slots(buildings[bi], rng):
                    box = _facade_box(buildings[bi], facade, frac, w, h, 0.35, 0.0)
                    if box is None:
                        continue
                    probe = SceneObject(0, "shop", box[0], box[1], (0, 0, 0))
                    if any(boxes_overlap(probe, o) for o in placer.objects):
                        continue
                    twin = placer.add("shop", box[0], box[1], src.instance_text)
                    placed = True
                    break
                if placed:
                    break
            if not placed:
                raise GenerationError("could not place duplicate shop")
        else:
            twin = placer.try_place_free(
                params.duplicate_label, src.size, src.box_min[2],
                margin=2.5, instance_text=src.instance_text,
            )
        # Twins look identical, matching their shared description.
        placer.objects[-1] = replace(twin, display_color=src.display_color)

    scene = Scene(
        scene_id=scene_id or f"scene-{seed:05d}",
        bounds_min=(0.0, 0.0, 0.0),
        bounds_max=(round(width, 4), round(depth, 4), params.airspace_height),
        ground_height=0.0,
        objects=tuple(placer.objects),
    )
    violations = validate_scene(scene)
    if violations:
        raise GenerationError("generated scene invalid: " + "; ".join(violations))
    return scene


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

_TASK_TEXT = {
    "shop": "Search for the shop named {name} on this street",
    "sign": "Search for the {name} sign in this area",
    "billboard": "Search for the {name} billboard on a rooftop",
    "vehicle": "Search for the {name} parked in this area",
    "facility": "Search for the {name} in this neighborhood",
    "building": "Search for the building called {name} in this area",
}


def _task_text(obj: SceneObject) -> str:
    template = _TASK_TEXT[obj.label]
    return template.format(name=obj.instance_text or obj.label)


def _cue_pose(scene: Scene, obj: SceneObject, rng: np.random.Generator) -> Pose | None:
    """A collision-free pose looking straight at the object for its cue image."""
    center = np.asarray(obj.centroid)
    span = max(obj.size)
    for _ in range(200):
        yaw_away = rng.uniform(0.0, 360.0)
        dist = rng.uniform(1.8, 2.8) * max(span, 4.0)
        offset = np.array(
            [math.cos(math.radians(yaw_away)), math.sin(math.radians(yaw_away)), 0.0]
        )
        pos = center + offset * dist
        pos[2] = max(center[2] + 0.35 * dist, scene.ground_height + 2.5)
        if not pose_position_feasible(scene, pos):
            continue
        view = center - pos
        yaw = math.degrees(math.atan2(view[1], view[0])) % 360.0
        pitch = math.degrees(math.asin(view[2] / np.linalg.norm(view)))
        return Pose(tuple(pos), yaw, pitch)
    return None


def render_cue_image(scene: Scene, task: Task, path: Path | str, seed: int = 0) -> bool:
    """Render and save the close-up target image for an existing task."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    obj = scene.object_by_id(task.target_object_id)
    pose = _cue_pose(scene, obj, rng)
    if pose is None:
        return False
    camera = CameraModel.from_fov(192, 144, hfov_deg=70.0, max_range=200.0)
    obs = render(scene, pose, camera)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(obs.color).save(path)
    return True


def derive_tasks(
    scene: Scene,
    seed: int,
    image_dir: Path | str | None = None,
    categories: tuple[str, ...] | None = None,
    max_tasks: int | None = None,
    rule: DifficultyRule | None = None,
    min_start_distance_frac: float = 0.35,
) -> list[Task]:
    """Build search tasks for eligible objects of the scene.

    Start poses are sampled collision-free and at least a fraction of the
    scene diagonal away from the target so episodes require actual search.
    Targets whose difficulty is unclassifiable (non-unique in a small
    scene) are skipped.
    """
    rule = rule or DifficultyRule()
    rng = np.random.default_rng(seed)
    wanted = categories or TARGET_CATEGORIES
    eligible = [o for o in scene.objects if o.label in wanted]
    eligible.sort(key=lambda o: o.object_id)

    # One task per (label, instance) pair keeps duplicated twins as a single task.
    seen_instances: set[tuple[str, str]] = set()
    tasks: list[Task] = []
    cue_camera = CameraModel.from_fov(192, 144, hfov_deg=70.0, max_range=200.0)

    for obj in eligible:
        if max_tasks is not None and len(tasks) >= max_tasks:
            break
        key = (obj.label, obj.instance_text)
        if key in seen_instances:
            continue
        difficulty = rule.classify(scene, obj)
        if difficulty is None:
            continue
        target = np.asarray(obj.centroid)
        start = None
        for _ in range(400):
            pos = np.array(
                [
                    rng.uniform(scene.bounds_min[0] + 2.0, scene.bounds_max[0] - 2.0),
                    rng.uniform(scene.bounds_min[1] + 2.0, scene.bounds_max[1] - 2.0),
                    rng.uniform(11.0, min(20.0, scene.bounds_max[2] - 4.0)),
                ]
            )
            if not pose_position_feasible(scene, pos):
                continue
            if np.linalg.norm(pos - target) < min_start_distance_frac * scene.diagonal:
                continue
            start = Pose(tuple(pos), yaw_deg=float(rng.uniform(0, 360)), pitch_deg=-20.0)
            break
        if start is None:
            continue
        seen_instances.add(key)
        task_id = f"{scene.scene_id}-t{len(tasks):02d}"
        image_rel = f"images/{task_id}.png"
        if image_dir is not None:
            cue = _cue_pose(scene, obj, rng)
            if cue is not None:
                from PIL import Image

                obs = render(scene, cue, cue_camera)
                path = Path(image_dir) / f"{task_id}.png"
                path.parent.mkdir(parents=True, exist_ok=True)
                Image.fromarray(obs.color).save(path)
                image_rel = str(path)
        tasks.append(
            Task(
                id=task_id,
                scene_id=scene.scene_id,
                difficulty=difficulty,
                image=image_rel,
                text=_task_text(obj),
                target_position=obj.centroid,
                start_pose=start,
                target_object_id=obj.object_id,
            )
        )
    return tasks


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_scene(scene: Scene) -> list[str]:
    """All structural invariants; returns violations with field paths."""
    v: list[str] = []
    for i in range(3):
        if not scene.bounds_min[i] < scene.bounds_max[i]:
            v.append(f"bounds_min[{i}] must be < bounds_max[{i}]")
    ids = [o.object_id for o in scene.objects]
    if len(ids) != len(set(ids)):
        v.append("objects[].object_id values must be unique")
    for n, obj in enumerate(scene.objects):
        if not obj.label:
            v.append(f"objects[{n}].label is empty")
        for i in range(3):
            if not obj.box_min[i] < obj.box_max[i]:
                v.append(f"objects[{n}].box_min[{i}] must be < box_max[{i}]")
        if not (
            all(obj.box_min[i] >= scene.bounds_min[i] - 1e-9 for i in range(3))
            and all(obj.box_max[i] <= scene.bounds_max[i] + 1e-9 for i in range(3))
        ):
            v.append(f"objects[{n}] extends outside scene bounds")
    return v


def validate_task(task: Task, scene: Scene, rule: DifficultyRule | None = None) -> list[str]:
    rule = rule or DifficultyRule()
    v: list[str] = []
    if task.scene_id != scene.scene_id:
        v.append("scene_id does not match the provided scene")
        return v
    try:
        target = scene.object_by_id(task.target_object_id)
    except KeyError:
        v.append("target_object_id not present in scene")
        return v
    if not scene.contains_point(task.target_position):
        v.append("target_position outside scene bounds")
    if not target.contains(task.target_position, inflate=1e-9):
        v.append("target_position outside the target object's box")
    if not scene.contains_point(task.start_pose.position):
        v.append("start_pose.position (P0) outside scene bounds")
    elif not pose_position_feasible(scene, task.start_pose.position):
        v.append("start_pose.position (P0) collides with scene content")
    expected = rule.classify(scene, target)
    if expected is not None and task.difficulty != expected:
        v.append(f"difficulty is {task.difficulty!r}, rules give {expected!r}")
    return v


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "units": {"length": "m"},
        "scene_id": scene.scene_id,
        "bounds_min": list(scene.bounds_min),
        "bounds_max": list(scene.bounds_max),
        "ground_height": scene.ground_height,
        "objects": [
            {
                "object_id": o.object_id,
                "label": o.label,
                "instance_text": o.instance_text,
                "box_min": list(o.box_min),
                "box_max": list(o.box_max),
                "display_color": list(o.display_color),
            }
            for o in scene.objects
        ],
    }


def _require(d: dict, key: str, kind, path: str):
    if key not in d:
        raise SceneParseError(f"{path}.{key} is missing")
    val = d[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SceneParseError(f"{path}.{key} must be a number")
        return float(val)
    if not isinstance(val, kind):
        raise SceneParseError(f"{path}.{key} has wrong type")
    return val


def _vec3(d: dict, key: str, path: str) -> tuple[float, float, float]:
    val = _require(d, key, list, path)
    if len(val) != 3 or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in val
    ):
        raise SceneParseError(f"{path}.{key} must be a 3-vector of numbers")
    return tuple(float(x) for x in val)


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict):
        raise SceneParseError("document root must be an object")
    version = _require(doc, "format_version", int, "$")
    if version != SCENE_FORMAT_VERSION:
        raise SceneParseError(f"unsupported scene format_version {version}")
    objects = []
    raw_objects = _require(doc, "objects", list, "$")
    for n, raw in enumerate(raw_objects):
        if not isinstance(raw, dict):
            raise SceneParseError(f"$.objects[{n}] must be an object")
        path = f"$.objects[{n}]"
        color = _require(raw, "display_color", list, path)
        if len(color) != 3 or not all(isinstance(c, int) and 0 <= c <= 255 for c in color):
            raise SceneParseError(f"{path}.display_color must be 3 ints in [0,255]")
        objects.append(
            SceneObject(
                object_id=_require(raw, "object_id", int, path),
                label=_require(raw, "label", str, path),
                instance_text=raw.get("instance_text", ""),
                box_min=_vec3(raw, "box_min", path),
                box_max=_vec3(raw, "box_max", path),
                display_color=tuple(color),
            )
        )
    scene = Scene(
        scene_id=_require(doc, "scene_id", str, "$"),
        bounds_min=_vec3(doc, "bounds_min", "$"),
        bounds_max=_vec3(doc, "bounds_max", "$"),
        ground_height=_require(doc, "ground_height", float, "$"),
        objects=tuple(objects),
    )
    violations = validate_scene(scene)
    if violations:
        raise SceneValidationError(violations)
    return scene


def save_scene(scene: Scene, path: Path | str) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path: Path | str) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


def task_to_dict(task: Task) -> dict:
    return {
        "id": task.id,
        "e": task.scene_id,
        "H": task.difficulty,
        "I": task.image,
        "T": task.text,
        "P_object": list(task.target_position),
        "P0": task.start_pose.to_dict(),
        "target_object_id": task.target_object_id,
    }


def task_from_dict(raw: dict, path: str = "$") -> Task:
    pose_raw = _require(raw, "P0", dict, path)
    return Task(
        id=_require(raw, "id", str, path),
        scene_id=_require(raw, "e", str, path),
        difficulty=_require(raw, "H", str, path),
        image=_require(raw, "I", str, path),
        text=_require(raw, "T", str, path),
        target_position=_vec3(raw, "P_object", path),
        start_pose=Pose(
            _vec3(pose_raw, "position", f"{path}.P0"),
            _require(pose_raw, "yaw_deg", float, f"{path}.P0"),
            _require(pose_raw, "pitch_deg", float, f"{path}.P0"),
        ),
        target_object_id=_require(raw, "target_object_id", int, path),
    )


def save_tasks(tasks: list[Task], path: Path | str, scene_files: dict[str, str]) -> None:
    """Write a task file; ``scene_files`` maps scene ids to file paths
    relative to the task file's directory."""
    doc = {
        "format_version": TASK_FORMAT_VERSION,
        "units": {"length": "m", "angle": "deg"},
        "scene_files": dict(sorted(scene_files.items())),
        "tasks": [task_to_dict(t) for t in tasks],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_tasks(path: Path | str) -> tuple[list[Task], dict[str, Path]]:
    """Read a task file; returns tasks plus resolved scene file paths."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"not valid JSON: {exc}") from exc
    version = _require(doc, "format_version", int, "$")
    if version != TASK_FORMAT_VERSION:
        raise SceneParseError(f"unsupported task format_version {version}")
    tasks = [
        task_from_dict(raw, f"$.tasks[{n}]")
        for n, raw in enumerate(_require(doc, "tasks", list, "$"))
    ]
    if len({t.id for t in tasks}) != len(tasks):
        raise SceneValidationError(["tasks[].id values must be unique"])
    scene_files = {
        sid: (p.parent / rel) for sid, rel in _require(doc, "scene_files", dict, "$").items()
    }
    return tasks, scene_files
