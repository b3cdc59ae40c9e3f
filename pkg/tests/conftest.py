"""Shared fixtures: small scenes, cameras, and a cached benchmark suite."""

from __future__ import annotations

import numpy as np
import pytest

from avos.sensor import CameraModel, Pose
from avos.world import Scene, SceneObject


def make_box(object_id, label, box_min, box_max, color=(100, 100, 100), text=""):
    return SceneObject(
        object_id=object_id,
        label=label,
        box_min=tuple(float(v) for v in box_min),
        box_max=tuple(float(v) for v in box_max),
        display_color=color,
        instance_text=text,
    )


def make_scene(objects, bounds_max=(60.0, 60.0, 30.0), scene_id="test-scene"):
    return Scene(
        scene_id=scene_id,
        bounds_min=(0.0, 0.0, 0.0),
        bounds_max=tuple(float(v) for v in bounds_max),
        ground_height=0.0,
        objects=tuple(objects),
    )


@pytest.fixture
def small_camera():
    return CameraModel.from_fov(64, 48, hfov_deg=90.0, max_range=60.0)


@pytest.fixture
def empty_scene():
    return make_scene([])


@pytest.fixture
def box_scene():
    """A handful of labeled boxes with clear sight lines."""
    return make_scene(
        [
            make_box(1, "building", (20, 20, 0), (30, 30, 20)),
            make_box(2, "tree", (10, 40, 0), (13, 43, 6)),
            make_box(3, "shop", (30.05, 22, 0), (30.45, 27, 3.2), text="LUNA CAFE"),
            make_box(4, "vehicle", (40, 10, 0), (42, 15, 2), text="white van"),
        ]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, bounds=(5.0, 55.0), z=(3.0, 25.0)) -> Pose:
    return Pose(
        (
            rng.uniform(*bounds),
            rng.uniform(*bounds),
            rng.uniform(*z),
        ),
        yaw_deg=rng.uniform(0, 360),
        pitch_deg=rng.uniform(-60, 30),
    )
