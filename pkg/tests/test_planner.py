"""Action space, exploration rewards, clustering, and plan assembly."""

from __future__ import annotations

import copy
import math

import numpy as np
import pytest

from avos.cognitive_map import CognitiveGrid
from avos.planner import (
    Action,
    DeadEndError,
    ExplorationAdvice,
    ExploitationAdvice,
    InfeasibleActionError,
    MOVE_ACTIONS,
    apply_action,
    assemble_plan_request,
    best_exploration_action,
    dbscan,
    exploitation_target,
    exploration_reward,
    feasible_actions,
)
from avos.semantic_map import GridSpec
from avos.sensor import CameraModel, Pose
from avos.uncertainty_map import UncertaintyGrid
from avos.world import Task
from .conftest import make_box, make_scene

CAM = CameraModel.from_fov(32, 24, 90.0, max_range=30.0)
OPEN_SCENE = make_scene([], bounds_max=(40.0, 40.0, 20.0))
SPEC = GridSpec((0.0, 0.0, 0.0), (40.0, 40.0, 20.0), (4.0, 4.0, 4.0))


def _task():
    return Task(
        id="t0",
        scene_id="test-scene",
        difficulty="Easy",
        image="images/t0.png",
        text="Search for the shop named LUNA CAFE on this street",
        target_position=(30.0, 22.0, 1.5),
        start_pose=Pose((5.0, 5.0, 10.0), 0.0, -15.0),
        target_object_id=3,
    )


def test_apply_action_kinematics():
    pose = Pose((10.0, 10.0, 10.0), yaw_deg=0.0, pitch_deg=-10.0)
    assert apply_action(pose, Action.MOVE_FORWARD, 5.0).position == pytest.approx(
        (15.0, 10.0, 10.0)
    )
    assert apply_action(pose, Action.MOVE_LEFT, 5.0).position == pytest.approx(
        (10.0, 15.0, 10.0)
    )
    assert apply_action(pose, Action.ASCEND, 5.0).position == pytest.approx(
        (10.0, 10.0, 15.0)
    )
    turned = apply_action(pose, Action.TURN_LEFT, 5.0)
    assert turned.position == pose.position
    assert turned.yaw_deg == pytest.approx(45.0)
    assert apply_action(pose, Action.STOP, 5.0) == pose


def test_apply_action_yaw_dependence():
    pose = Pose((10.0, 10.0, 10.0), yaw_deg=90.0, pitch_deg=0.0)
    moved = apply_action(pose, Action.MOVE_FORWARD, 4.0)
    assert moved.position == pytest.approx((10.0, 14.0, 10.0))


def test_feasible_actions_blocked_by_box():
    scene = make_scene([make_box(1, "building", (14, 5, 5), (30, 15, 15))], (40, 40, 20))
    pose = Pose((10.0, 10.0, 10.0), yaw_deg=0.0, pitch_deg=0.0)
    feas = feasible_actions(scene, pose, step_size=5.0)
    assert Action.MOVE_FORWARD not in feas  # would land inside the inflated box
    assert Action.MOVE_BACKWARD in feas
    assert Action.TURN_LEFT in feas and Action.TURN_RIGHT in feas


def test_exploration_reward_zero_when_attenuated():
    grid = UncertaintyGrid(SPEC, alpha=0.05)
    grid.values[:] = 1e-300
    occ = np.zeros(SPEC.dims, dtype=bool)
    pose = Pose((20.0, 20.0, 10.0), 0.0, 0.0)
    reward, _ = exploration_reward(grid, occ, pose, CAM, Action.MOVE_FORWARD, 5.0, OPEN_SCENE)
    assert reward == pytest.approx(0.0, abs=1e-12)


def test_exploration_reward_closed_form_single_face():
    grid = UncertaintyGrid(SPEC, alpha=0.07)
    grid.values[:] = 0.0
    grid.values[7, 5, 2, 0] = 1.0  # lone live face
    occ = np.zeros(SPEC.dims, dtype=bool)
    pose = Pose((5.0, 22.0, 10.0), 0.0, 0.0)
    nxt = apply_action(pose, Action.MOVE_FORWARD, 5.0)
    center = np.asarray(SPEC.cell_center(7, 5, 2))
    d = float(np.linalg.norm(center - np.asarray(nxt.position)))
    reward, _ = exploration_reward(grid, occ, pose, CAM, Action.MOVE_FORWARD, 5.0, OPEN_SCENE)
    assert reward == pytest.approx(1.0 - math.exp(-0.07 * d), abs=1e-12)


def test_exploration_reward_matches_execute_and_diff(rng):
    scene = make_scene(
        [make_box(1, "building", (17.3, 17.1, 0), (24.2, 23.8, 12.5))], (40, 40, 20)
    )
    occ = np.zeros(SPEC.dims, dtype=bool)
    occ[4:6, 4:6, 0:3] = True
    for trial in range(30):
        grid = UncertaintyGrid(SPEC, alpha=0.05)
        grid.values = rng.random(grid.values.shape)
        pose = Pose(
            (rng.uniform(3, 37), rng.uniform(3, 37), rng.uniform(3, 17)),
            yaw_deg=rng.uniform(0, 360),
            pitch_deg=rng.uniform(-45, 20),
        )
        if not OPEN_SCENE.contains_point(pose.position):
            continue
        for action in feasible_actions(scene, pose, 5.0):
            reward, faces = exploration_reward(grid, occ, pose, CAM, action, 5.0, scene)
            probe = copy.deepcopy(grid)
            drop = probe.attenuate(occ, apply_action(pose, action, 5.0), CAM)
            assert reward == pytest.approx(drop, abs=1e-9)
            if faces == 0:
                assert reward == 0.0


def test_exploration_reward_pure():
    grid = UncertaintyGrid(SPEC, alpha=0.05)
    before = grid.values.copy()
    occ = np.zeros(SPEC.dims, dtype=bool)
    pose = Pose((20.0, 20.0, 10.0), 0.0, 0.0)
    exploration_reward(grid, occ, pose, CAM, Action.MOVE_FORWARD, 5.0, OPEN_SCENE)
    assert np.array_equal(grid.values, before)


def test_exploration_reward_infeasible_action():
    scene = make_scene([make_box(1, "building", (14, 5, 5), (30, 15, 15))], (40, 40, 20))
    grid = UncertaintyGrid(SPEC, alpha=0.05)
    pose = Pose((10.0, 10.0, 10.0), 0.0, 0.0)
    with pytest.raises(InfeasibleActionError):
        exploration_reward(
            grid, np.zeros(SPEC.dims, bool), pose, CAM, Action.MOVE_FORWARD, 5.0, scene
        )


def test_best_action_matches_exhaustive_sweep(rng):
    for _ in range(20):
        grid = UncertaintyGrid(SPEC, alpha=0.05)
        grid.values = rng.random(grid.values.shape)
        occ = rng.random(SPEC.dims) < 0.04
        pose = Pose(
            (rng.uniform(6, 34), rng.uniform(6, 34), rng.uniform(4, 16)),
            yaw_deg=rng.uniform(0, 360),
            pitch_deg=rng.uniform(-40, 10),
        )
        advice = best_exploration_action(grid, occ, pose, CAM, 5.0, OPEN_SCENE)
        sweep = {}
        for action in MOVE_ACTIONS:
            try:
                sweep[action], _ = exploration_reward(grid, occ, pose, CAM, action, 5.0, OPEN_SCENE)
            except InfeasibleActionError:
                continue
        best_reward = max(sweep.values())
        winners = [a for a in MOVE_ACTIONS if a in sweep and sweep[a] == best_reward]
        assert advice.action == winners[0]
        assert advice.reward == pytest.approx(best_reward, abs=1e-12)
        assert 0.0 <= advice.normalized_reward <= 1.0


def test_best_action_prefers_unexplored_direction():
    # The only live faces sit just beyond sensing range dead ahead, so
    # stepping forward is the single action with a positive reward.
    grid = UncertaintyGrid(SPEC, alpha=0.05)
    grid.values[:] = 0.0
    grid.values[9, 4:6, 2, :] = 1.0
    occ = np.zeros(SPEC.dims, dtype=bool)
    pose = Pose((5.0, 20.0, 10.0), yaw_deg=0.0, pitch_deg=0.0)  # facing east
    advice = best_exploration_action(grid, occ, pose, CAM, 5.0, OPEN_SCENE)
    assert advice.action == Action.MOVE_FORWARD
    assert advice.reward > 0


def test_best_action_symmetric_tie_breaks_to_enum_order():
    grid = UncertaintyGrid(SPEC, alpha=0.05)
    grid.values[:] = 0.0  # every action scores exactly zero
    occ = np.zeros(SPEC.dims, dtype=bool)
    pose = Pose((20.0, 20.0, 10.0), yaw_deg=0.0, pitch_deg=0.0)
    advice = best_exploration_action(grid, occ, pose, CAM, 5.0, OPEN_SCENE)
    assert advice.action == Action.MOVE_FORWARD


def test_best_action_dead_end():
    # A scene so cramped no translation is feasible and turns are excluded.
    scene = make_scene([], bounds_max=(8.0, 8.0, 8.0))
    grid = UncertaintyGrid(GridSpec((0, 0, 0), (8, 8, 8), (4, 4, 4)), alpha=0.05)
    pose = Pose((4.0, 4.0, 4.0), 0.0, 0.0)
    with pytest.raises(DeadEndError):
        best_exploration_action(
            grid, np.zeros((2, 2, 2), bool), pose, CAM, 50.0, scene,
            actions=(Action.MOVE_FORWARD, Action.MOVE_BACKWARD),
        )


# ---------------------------------------------------------------------------
# Clustering
# ---------------------------------------------------------------------------

def _dbscan_reference(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Naive O(n^2) density clustering in canonical lexicographic order."""
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    neighbors = [np.nonzero(dist[i] <= eps)[0].tolist() for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbors]
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    cluster = 0
    visited = [False] * n
    for seed in order:
        if visited[seed] or not core[seed]:
            continue
        visited[seed] = True
        labels[seed] = cluster
        frontier = [seed]
        while frontier:
            p = frontier.pop(0)
            for q in sorted(neighbors[p], key=lambda i: rank[i]):
                if labels[q] == -1:
                    labels[q] = cluster
                if core[q] and not visited[q]:
                    visited[q] = True
                    frontier.append(q)
        cluster += 1
    return labels


def _partition(points, labels):
    out = {}
    for pt, lab in zip(points, labels):
        out.setdefault(int(lab), set()).add(tuple(np.round(pt, 9)))
    return out


def test_dbscan_matches_naive_reference(rng):
    for trial in range(10):
        n = int(rng.integers(5, 200))
        points = rng.uniform(0, 30, size=(n, 3)).round(3)
        points = np.unique(points, axis=0)
        for _ in range(20):
            eps = float(rng.uniform(0.5, 8.0))
            min_pts = int(rng.integers(1, 6))
            got = dbscan(points, eps, min_pts)
            want = _dbscan_reference(points, eps, min_pts)
            assert _partition(points, got) == _partition(points, want)


def test_dbscan_order_invariant(rng):
    points = rng.uniform(0, 20, size=(80, 3))
    base = _partition(points, dbscan(points, 3.0, 3))
    for _ in range(10):
        perm = rng.permutation(len(points))
        shuffled = points[perm]
        assert _partition(shuffled, dbscan(shuffled, 3.0, 3)) == base


def test_dbscan_noise_points():
    points = np.array([[0, 0, 0], [0.5, 0, 0], [0.4, 0.3, 0], [20, 20, 20.0]])
    labels = dbscan(points, eps=1.0, min_pts=3)
    assert labels[3] == -1
    assert set(labels[:3]) == {0}


# ---------------------------------------------------------------------------
# Exploitation targets
# ---------------------------------------------------------------------------

def _cog_with(cells, value=1.0) -> CognitiveGrid:
    cog = CognitiveGrid(SPEC)
    for cell in cells:
        cog.attraction[cell] = value
    return cog


def test_exploitation_none_when_flat():
    assert exploitation_target(CognitiveGrid(SPEC), eps=6.0, min_pts=1) is None


def test_exploitation_single_block_centroid():
    cells = [(i, j, 2) for i in range(3, 6) for j in range(4, 7)]
    cog = _cog_with(cells)
    advice = exploitation_target(cog, eps=6.0, min_pts=3)
    centers = np.array([SPEC.cell_center(*c) for c in cells])
    assert advice is not None
    assert advice.cluster_size == 9
    assert advice.target_point == pytest.approx(tuple(centers.mean(axis=0)))
    assert advice.attraction == 1.0


def test_exploitation_prefers_larger_cluster():
    big = [(i, j, 1) for i in range(0, 3) for j in range(0, 3)]
    small = [(i, j, 1) for i in range(7, 9) for j in range(7, 9)]
    cog = _cog_with(big + small)
    advice = exploitation_target(cog, eps=5.0, min_pts=3)
    big_centroid = np.array([SPEC.cell_center(*c) for c in big]).mean(axis=0)
    assert advice.target_point == pytest.approx(tuple(big_centroid))
    assert advice.cluster_size == 9


def test_exploitation_tie_breaks_by_agent_distance():
    a = [(0, 0, 0), (1, 0, 0)]
    b = [(8, 8, 0), (9, 8, 0)]
    cog = _cog_with(a + b)
    near_b = exploitation_target(cog, eps=5.0, min_pts=1, agent_position=(36.0, 36.0, 2.0))
    b_centroid = np.array([SPEC.cell_center(*c) for c in b]).mean(axis=0)
    assert near_b.target_point == pytest.approx(tuple(b_centroid))


def test_exploitation_ignores_lower_attraction():
    cog = _cog_with([(2, 2, 1), (3, 2, 1)], value=1.0)
    cog.attraction[7, 7, 1] = 0.4  # below the max set
    advice = exploitation_target(cog, eps=5.0, min_pts=1)
    expected = np.array(
        [SPEC.cell_center(2, 2, 1), SPEC.cell_center(3, 2, 1)]
    ).mean(axis=0)
    assert advice.target_point == pytest.approx(tuple(expected))


def test_exploitation_all_noise_is_none():
    cog = _cog_with([(0, 0, 0), (9, 9, 4)])  # isolated cells, min_pts 3
    assert exploitation_target(cog, eps=4.0, min_pts=3) is None


# ---------------------------------------------------------------------------
# Plan assembly
# ---------------------------------------------------------------------------

def _advice(normalized: float) -> ExplorationAdvice:
    return ExplorationAdvice(Action.MOVE_FORWARD, normalized * 10, normalized, 10)


def test_gate_includes_above_threshold():
    req = assemble_plan_request(_task(), {"pose": {}}, None, _advice(0.2), theta=0.1)
    assert req.exploration is not None


def test_gate_excludes_below_threshold():
    req = assemble_plan_request(_task(), {"pose": {}}, None, _advice(0.05), theta=0.1)
    assert req.exploration is None
    assert req.exploration_raw is not None  # still logged


def test_gate_zero_threshold_includes_everything_positive():
    for normalized in (0.001, 0.5, 1.0):
        req = assemble_plan_request(_task(), {}, None, _advice(normalized), theta=0.0)
        assert req.exploration is not None
    req = assemble_plan_request(_task(), {}, None, _advice(0.0), theta=0.0)
    assert req.exploration is None  # strictly-greater gate


def test_gate_equivalence_property(rng):
    for _ in range(200):
        theta = float(rng.uniform(0, 1))
        normalized = float(rng.uniform(0, 1))
        req = assemble_plan_request(_task(), {}, None, _advice(normalized), theta=theta)
        assert (req.exploration is not None) == (normalized > theta)


def test_plan_request_payload_shape():
    exploit = ExploitationAdvice((30.0, 22.0, 1.5), 1.0, 4)
    req = assemble_plan_request(
        _task(), {"pose": {"position": [0, 0, 0]}}, exploit, _advice(0.5), 0.1,
        history=("MoveForward",),
    )
    payload = req.to_payload()
    assert payload["format_version"] == 1
    assert payload["task"]["text"].startswith("Search for the shop")
    assert payload["long_term_guidance"]["target_point"] == [30.0, 22.0, 1.5]
    assert payload["inspiration"]["action"] == "MoveForward"
    assert payload["history"] == ["MoveForward"]


def test_theta_validation():
    with pytest.raises(ValueError):
        assemble_plan_request(_task(), {}, None, None, theta=1.5)
