"""Action space, exploration/exploitation advice, and plan assembly.

Exploration advice is the feasible action whose simulated next view would
remove the most uncertainty.  Exploitation advice is the centroid of the
largest density cluster among maximum-attraction cells.  Both are folded
into a plan request; the exploration half is gated by a threshold on the
mean per-face reward so the hint only appears when exploring is genuinely
worthwhile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .cognitive_map import CognitiveGrid
from .sensor import CameraModel, Pose
from .uncertainty_map import UncertaintyGrid, attenuation, visible_cells
from .world import Scene, pose_position_feasible

PLAN_REQUEST_FORMAT_VERSION = 1

MAX_SET_TOLERANCE = 1e-9  # cells within this of the grid max join the target set


class InfeasibleActionError(ValueError):
    """Raised when a motion is simulated from a pose it cannot leave."""


class DeadEndError(RuntimeError):
    """Raised when no action is feasible at all."""


class Action(Enum):
    MOVE_FORWARD = "MoveForward"
    MOVE_BACKWARD = "MoveBackward"
    MOVE_LEFT = "MoveLeft"
    MOVE_RIGHT = "MoveRight"
    ASCEND = "Ascend"
    DESCEND = "Descend"
    TURN_LEFT = "TurnLeft45"
    TURN_RIGHT = "TurnRight45"
    STOP = "Stop"


MOVE_ACTIONS: tuple[Action, ...] = tuple(a for a in Action if a is not Action.STOP)
TURN_DEG = 45.0

_OPPOSITES = {
    Action.MOVE_FORWARD: Action.MOVE_BACKWARD,
    Action.MOVE_BACKWARD: Action.MOVE_FORWARD,
    Action.MOVE_LEFT: Action.MOVE_RIGHT,
    Action.MOVE_RIGHT: Action.MOVE_LEFT,
    Action.ASCEND: Action.DESCEND,
    Action.DESCEND: Action.ASCEND,
    Action.TURN_LEFT: Action.TURN_RIGHT,
    Action.TURN_RIGHT: Action.TURN_LEFT,
}


def opposite_action(action: Action) -> Action | None:
    return _OPPOSITES.get(action)


def apply_action(pose: Pose, action: Action, step_size: float) -> Pose:
    """Kinematics: horizontal translations follow the yaw heading, vertical
    moves are world-axis, turns change yaw only.  Stop returns the pose."""
    if action is Action.STOP:
        return pose
    yaw = math.radians(pose.yaw_deg)
    heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    pos = np.asarray(pose.position)
    if action is Action.MOVE_FORWARD:
        pos = pos + heading * step_size
    elif action is Action.MOVE_BACKWARD:
        pos = pos - heading * step_size
    elif action is Action.MOVE_LEFT:
        pos = pos + left * step_size
    elif action is Action.MOVE_RIGHT:
        pos = pos - left * step_size
    elif action is Action.ASCEND:
        pos = pos + np.array([0.0, 0.0, step_size])
    elif action is Action.DESCEND:
        pos = pos - np.array([0.0, 0.0, step_size])
    elif action is Action.TURN_LEFT:
        return Pose(pose.position, pose.yaw_deg + TURN_DEG, pose.pitch_deg)
    elif action is Action.TURN_RIGHT:
        return Pose(pose.position, pose.yaw_deg - TURN_DEG, pose.pitch_deg)
    return Pose(tuple(pos), pose.yaw_deg, pose.pitch_deg)


def action_feasible(scene: Scene, pose: Pose, action: Action, step_size: float) -> bool:
    if action is Action.STOP:
        return True
    nxt = apply_action(pose, action, step_size)
    return pose_position_feasible(scene, nxt.position)


def feasible_actions(scene: Scene, pose: Pose, step_size: float) -> list[Action]:
    """Non-Stop actions the scene permits from this pose, in enum order."""
    return [a for a in MOVE_ACTIONS if action_feasible(scene, pose, a, step_size)]


@dataclass(frozen=True)
class ExplorationAdvice:
    action: Action
    reward: float
    normalized_reward: float  # mean per-face reduction, in [0, 1]
    visible_faces: int

    def to_dict(self) -> dict:
        return {
            "action": self.action.value,
            "reward": self.reward,
            "normalized_reward": self.normalized_reward,
            "visible_faces": self.visible_faces,
        }


@dataclass(frozen=True)
class ExploitationAdvice:
    target_point: tuple[float, float, float]
    attraction: float
    cluster_size: int

    def to_dict(self) -> dict:
        return {
            "target_point": list(self.target_point),
            "attraction": self.attraction,
            "cluster_size": self.cluster_size,
        }


def exploration_reward(
    ugrid: UncertaintyGrid,
    occupancy: np.ndarray,
    pose: Pose,
    camera: CameraModel,
    action: Action,
    step_size: float,
    scene: Scene,
) -> tuple[float, int]:
    """Total uncertainty the view after ``action`` would remove.

    Simulates the post-action pose, finds its visible faces, and sums
    U * (1 - falloff(d)) without mutating the grid.  Returns the raw
    reward and the visible-face count used for normalization.
    """
    if not action_feasible(scene, pose, action, step_size):
        raise InfeasibleActionError(f"{action.value} is not feasible from {pose.position}")
    nxt = apply_action(pose, action, step_size)
    cells, faces = visible_cells(occupancy, ugrid.spec, nxt, camera)
    if len(cells) == 0:
        return 0.0, 0
    centers = ugrid.spec.cell_centers(cells)
    dist = np.linalg.norm(centers - np.asarray(nxt.position), axis=1)
    old = ugrid.values[cells[:, 0], cells[:, 1], cells[:, 2], faces]
    reduction = np.sum(old - old * attenuation(dist, ugrid.alpha))
    return float(reduction), int(len(cells))


def best_exploration_action(
    ugrid: UncertaintyGrid,
    occupancy: np.ndarray,
    pose: Pose,
    camera: CameraModel,
    step_size: float,
    scene: Scene,
    actions: tuple[Action, ...] = MOVE_ACTIONS,
) -> ExplorationAdvice:
    """Argmax of the exploration reward over feasible actions.

    Ties resolve to the earliest action in enum order; raises
    :class:`DeadEndError` when nothing is feasible.
    """
    best: ExplorationAdvice | None = None
    for action in actions:
        if action is Action.STOP or not action_feasible(scene, pose, action, step_size):
            continue
        reward, n_faces = exploration_reward(
            ugrid, occupancy, pose, camera, action, step_size, scene
        )
        normalized = reward / n_faces if n_faces else 0.0
        if best is None or reward > best.reward:
            best = ExplorationAdvice(action, reward, normalized, n_faces)
    if best is None:
        raise DeadEndError("no feasible action to evaluate")
    return best


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering over points; returns labels with -1 for noise.

    Neighborhoods are closed balls of radius eps and include the point
    itself when counting against ``min_pts``.  Points are processed in
    lexicographic order of their coordinates, which makes cluster ids and
    border-point assignment independent of input order.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)

    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighborhoods])

    cluster = 0
    visited = np.zeros(n, dtype=bool)
    for seed in order:
        if visited[seed] or not core[seed]:
            continue
        queue = [seed]
        visited[seed] = True
        labels[seed] = cluster
        while queue:
            p = queue.pop(0)
            for q in sorted(neighborhoods[p], key=lambda i: rank[i]):
                if labels[q] == -1:
                    labels[q] = cluster
                if not visited[q] and core[q]:
                    visited[q] = True
                    queue.append(q)
        cluster += 1
    return labels


def exploitation_target(
    cog: CognitiveGrid,
    eps: float,
    min_pts: int,
    agent_position=None,
) -> ExploitationAdvice | None:
    """Centroid of the largest cluster of maximum-attraction cells.

    Returns None when the map has no positive attraction or when every
    candidate cell is density noise.  Cluster-size ties pick the cluster
    whose centroid is nearest ``agent_position`` (lexicographically
    smallest centroid when no position is given).
    """
    peak = cog.max_attraction()
    if peak <= 0.0:
        return None
    idx = np.argwhere(cog.attraction >= peak - MAX_SET_TOLERANCE)
    centers = cog.spec.cell_centers(idx)
    labels = dbscan(centers, eps, min_pts)
    if labels.max(initial=-1) < 0:
        return None

    best_key = None
    best: ExploitationAdvice | None = None
    for cluster_id in range(labels.max() + 1):
        members = centers[labels == cluster_id]
        centroid = members.mean(axis=0)
        if agent_position is not None:
            tie = float(np.linalg.norm(centroid - np.asarray(agent_position)))
        else:
            tie = tuple(centroid)
        key = (-len(members), tie)
        if best_key is None or key < best_key:
            best_key = key
            centroid = np.clip(
                centroid, cog.spec.bounds_min, cog.spec.bounds_max
            )
            best = ExploitationAdvice(tuple(centroid), peak, int(len(members)))
    return best


@dataclass(frozen=True)
class PlanRequest:
    """Everything the planning oracle sees for one step.

    ``exploration`` carries the advice only when its normalized reward
    clears the threshold; the raw advice is kept separately for logging.
    """

    task_image: str
    task_text: str
    observation_summary: dict
    exploitation: ExploitationAdvice | None
    exploration: ExplorationAdvice | None
    threshold: float
    history: tuple[str, ...] = ()
    exploration_raw: ExplorationAdvice | None = field(default=None, compare=False)

    def to_payload(self) -> dict:
        """Versioned document mirroring the planning prompt structure."""
        return {
            "format_version": PLAN_REQUEST_FORMAT_VERSION,
            "task": {"image": self.task_image, "text": self.task_text},
            "observation": self.observation_summary,
            "long_term_guidance": (
                self.exploitation.to_dict() if self.exploitation else None
            ),
            "inspiration": self.exploration.to_dict() if self.exploration else None,
            "history": list(self.history),
        }


def assemble_plan_request(
    task,
    observation_summary: dict,
    exploitation: ExploitationAdvice | None,
    exploration: ExplorationAdvice | None,
    theta: float,
    history: tuple[str, ...] = (),
) -> PlanRequest:
    """Gate the exploration hint by its normalized reward and bundle the rest."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    gated = (
        exploration
        if exploration is not None and exploration.normalized_reward > theta
        else None
    )
    return PlanRequest(
        task_image=task.image,
        task_text=task.text,
        observation_summary=observation_summary,
        exploitation=exploitation,
        exploration=gated,
        threshold=theta,
        history=tuple(history),
        exploration_raw=exploration,
    )
