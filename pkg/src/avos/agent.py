"""Episode orchestration: the three-map searcher plus RE/FBE baselines.

Each step renders an observation, folds it into the semantic, cognitive,
and uncertainty maps, derives exploitation/exploration advice, asks the
oracle for an action, and applies it.  Baselines skip the maps and only
keep the identification check.  Everything is seeded, so a fixed config
reproduces an episode byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cognitive_map import CognitiveGrid
from .oracle import OracleFailure, make_oracle
from .planner import (
    Action,
    DeadEndError,
    apply_action,
    assemble_plan_request,
    best_exploration_action,
    exploitation_target,
    feasible_actions,
)
from .semantic_map import GridSpec, SemanticVoxelGrid, scene_occupancy
from .sensor import CameraModel, Pose, render, segment
from .uncertainty_map import UncertaintyGrid, visible_cells
from .world import Scene, Task

RECORD_FORMAT_VERSION = 1

AGENT_KINDS = ("prpsearcher", "re", "fbe", "human")

TERMINATION_STOPPED = "Stopped"
TERMINATION_STEP_LIMIT = "StepLimit"
TERMINATION_DEAD_END = "DeadEnd"
TERMINATION_ORACLE_FAILURE = "OracleFailure"


class EpisodeConfigError(ValueError):
    """Raised before any step when a config violates its invariants."""


@dataclass(frozen=True)
class EpisodeConfig:
    """Per-episode parameters; defaults match the package-wide conventions."""

    agent: str = "prpsearcher"
    max_steps: int = 100
    theta: float = 0.1
    alpha: float = 0.02
    step_size: float = 5.0
    cell_size: float = 2.0
    dbscan_eps_factor: float = 1.5
    dbscan_min_pts: int = 3
    seed: int = 0
    oracle_mode: str = "scripted"
    camera_width: int = 640
    camera_height: int = 480
    camera_hfov_deg: float = 90.0
    camera_max_range: float = 60.0
    p_label_noise: float = 0.0
    occlusion_mode: str = "mapped"  # "mapped" | "ground_truth"
    use_exploitation: bool = True
    use_exploration: bool = True

    def validate(self) -> None:
        if self.agent not in AGENT_KINDS:
            raise EpisodeConfigError(f"unknown agent kind {self.agent!r}")
        if self.max_steps <= 0:
            raise EpisodeConfigError("max_steps must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise EpisodeConfigError("theta must lie in [0, 1]")
        if self.alpha <= 0 or self.step_size <= 0 or self.cell_size <= 0:
            raise EpisodeConfigError("alpha, step_size and cell_size must be positive")
        if self.occlusion_mode not in ("mapped", "ground_truth"):
            raise EpisodeConfigError(f"unknown occlusion_mode {self.occlusion_mode!r}")

    def camera(self) -> CameraModel:
        return CameraModel.from_fov(
            self.camera_width,
            self.camera_height,
            self.camera_hfov_deg,
            self.camera_max_range,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepRecord:
    index: int
    pose: Pose
    action: str
    found: bool
    exploit: dict | None = None
    explore: dict | None = None
    explore_included: bool = False
    oracle: list = field(default_factory=list)
    digests: dict | None = None

    def to_dict(self) -> dict:
        return {
            "type": "step",
            "t": self.index,
            "pose": self.pose.to_dict(),
            "action": self.action,
            "found": self.found,
            "exploit": self.exploit,
            "explore": self.explore,
            "explore_included": self.explore_included,
            "oracle": self.oracle,
            "digests": self.digests,
        }


@dataclass
class EpisodeRecord:
    """Full trace of one episode; success is judged later by the harness."""

    config: EpisodeConfig
    task_id: str
    scene_id: str
    steps: list[StepRecord]
    termination: str
    final_pose: Pose
    found_target: bool
    path_length: float

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def exploration_advice_count(self) -> int:
        return sum(1 for s in self.steps if s.explore_included)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "type": "header",
                    "format_version": RECORD_FORMAT_VERSION,
                    "task_id": self.task_id,
                    "scene_id": self.scene_id,
                    "config": self.config.to_dict(),
                }
            )
        ]
        lines.extend(json.dumps(s.to_dict()) for s in self.steps)
        lines.append(
            json.dumps(
                {
                    "type": "footer",
                    "termination": self.termination,
                    "steps": self.num_steps,
                    "path_length": self.path_length,
                    "final_pose": self.final_pose.to_dict(),
                    "found_target": self.found_target,
                }
            )
        )
        return "\n".join(lines) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: Path | str) -> "EpisodeRecord":
        header = None
        footer = None
        steps: list[StepRecord] = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            kind = doc.get("type")
            if kind == "header":
                header = doc
            elif kind == "step":
                steps.append(
                    StepRecord(
                        index=doc["t"],
                        pose=Pose.from_dict(doc["pose"]),
                        action=doc["action"],
                        found=doc["found"],
                        exploit=doc.get("exploit"),
                        explore=doc.get("explore"),
                        explore_included=doc.get("explore_included", False),
                        oracle=doc.get("oracle", []),
                        digests=doc.get("digests"),
                    )
                )
            elif kind == "footer":
                footer = doc
        if header is None or footer is None:
            raise ValueError(f"record {path} is missing its header or footer")
        return cls(
            config=EpisodeConfig(**header["config"]),
            task_id=header["task_id"],
            scene_id=header["scene_id"],
            steps=steps,
            termination=footer["termination"],
            final_pose=Pose.from_dict(footer["final_pose"]),
            found_target=footer["found_target"],
            path_length=footer["path_length"],
        )


def episode_rng(config: EpisodeConfig, task: Task, stream: str) -> np.random.Generator:
    """Independent, reproducible RNG stream per (seed, task, purpose)."""
    digest = hashlib.blake2b(f"{task.id}:{stream}".encode(), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([config.seed, int.from_bytes(digest, "big")])
    )


def _observation_summary(
    pose: Pose,
    step_index: int,
    feasible: list[Action],
    recent_positions: list[tuple[float, float, float]] | None = None,
) -> dict:
    return {
        "pose": pose.to_dict(),
        "step_index": step_index,
        "feasible_actions": [a.value for a in feasible],
        "recent_positions": [
            [round(v, 3) for v in p] for p in (recent_positions or [])
        ],
    }


def re_policy(rng: np.random.Generator, feasible: list[Action], found: bool) -> Action:
    """Uniform choice over feasible moves; stops only on identification."""
    if found:
        return Action.STOP
    if not feasible:
        raise DeadEndError("no feasible action")
    return feasible[int(rng.integers(0, len(feasible)))]


def fbe_policy(
    rng: np.random.Generator,
    feasible: list[Action],
    found: bool,
    p_vertical: float = 0.1,
) -> Action:
    """Forward until blocked, then turn right; occasional vertical moves."""
    if found:
        return Action.STOP
    if not feasible:
        raise DeadEndError("no feasible action")
    vertical = [a for a in (Action.ASCEND, Action.DESCEND) if a in feasible]
    if vertical and rng.random() < p_vertical:
        return vertical[int(rng.integers(0, len(vertical)))]
    if Action.MOVE_FORWARD in feasible:
        return Action.MOVE_FORWARD
    return Action.TURN_RIGHT


def run_episode(
    config: EpisodeConfig,
    scene: Scene,
    task: Task,
    oracle=None,
    forced_actions: list[Action] | None = None,
) -> EpisodeRecord:
    """Run one episode to termination and return its full record.

    ``forced_actions`` replays a fixed action trace (used to mirror human
    sessions); identification still gates the recorded found flag.
    """
    config.validate()
    if task.scene_id != scene.scene_id:
        raise EpisodeConfigError("task does not belong to the provided scene")
    if oracle is None:
        oracle = make_oracle(config.oracle_mode, step_size=config.step_size)
    oracle.start_task(task)

    if forced_actions is not None:
        return _run_trace(config, scene, task, oracle, forced_actions)
    if config.agent == "prpsearcher":
        return _run_prpsearcher(config, scene, task, oracle)
    if config.agent in ("re", "fbe"):
        return _run_baseline(config, scene, task, oracle)
    raise EpisodeConfigError(f"agent kind {config.agent!r} cannot run headless")


def _finish(
    config: EpisodeConfig,
    task: Task,
    scene: Scene,
    steps: list[StepRecord],
    termination: str,
    pose: Pose,
    found: bool,
    positions: list[tuple[float, float, float]],
) -> EpisodeRecord:
    path_length = float(
        sum(math.dist(a, b) for a, b in zip(positions, positions[1:]))
    )
    return EpisodeRecord(
        config=config,
        task_id=task.id,
        scene_id=scene.scene_id,
        steps=steps,
        termination=termination,
        final_pose=pose,
        found_target=found,
        path_length=path_length,
    )


def _run_baseline(config, scene, task, oracle) -> EpisodeRecord:
    rng = episode_rng(config, task, "policy")
    camera = config.camera()
    policy = re_policy if config.agent == "re" else fbe_policy
    pose = task.start_pose
    positions = [pose.position]
    steps: list[StepRecord] = []

    for t in range(config.max_steps):
        obs = render(scene, pose, camera, t)
        found = oracle.identify(obs)
        feasible = feasible_actions(scene, pose, config.step_size)
        try:
            action = policy(rng, feasible, found)
        except DeadEndError:
            return _finish(
                config, task, scene, steps, TERMINATION_DEAD_END, pose, False, positions
            )
        steps.append(StepRecord(t, pose, action.value, found))
        if action is Action.STOP:
            return _finish(
                config, task, scene, steps, TERMINATION_STOPPED, pose, found, positions
            )
        pose = apply_action(pose, action, config.step_size)
        positions.append(pose.position)
    return _finish(
        config, task, scene, steps, TERMINATION_STEP_LIMIT, pose, False, positions
    )


class PrpState:
    """Live map stack for one searcher episode (also reused by the server)."""

    def __init__(self, config: EpisodeConfig, scene: Scene, task: Task, oracle):
        config.validate()
        self.config = config
        self.scene = scene
        self.task = task
        self.oracle = oracle
        self.camera = config.camera()
        self.spec = GridSpec.for_scene(scene, config.cell_size)
        self.semantic = SemanticVoxelGrid(self.spec)
        self.cognitive = CognitiveGrid(self.spec)
        self.uncertainty = UncertaintyGrid(self.spec, alpha=config.alpha)
        self.noise_rng = episode_rng(config, task, "label-noise")
        self.related = oracle.related_semantics(task)
        self.attraction = oracle.attraction_scores(task, self.related)
        self._gt_occupancy = (
            scene_occupancy(scene, self.spec)
            if config.occlusion_mode == "ground_truth"
            else None
        )
        self.history: list[str] = []
        self.positions: list[tuple[float, float, float]] = []

    def occupancy(self) -> np.ndarray:
        if self._gt_occupancy is not None:
            return self._gt_occupancy
        return self.semantic.occupancy()

    def perceive(self, pose: Pose, step_index: int):
        """Render, segment, and fold one observation into all three maps."""
        obs = render(self.scene, pose, self.camera, step_index)
        seg = segment(
            self.scene,
            obs,
            self.related,
            p_noise=self.config.p_label_noise,
            rng=self.noise_rng if self.config.p_label_noise > 0 else None,
        )
        touched = self.semantic.integrate(seg, self.camera)
        self.cognitive.refresh(self.semantic, self.attraction, touched)
        occ = self.occupancy()
        vis = visible_cells(occ, self.spec, pose, self.camera)
        self.cognitive.mark_recognized(
            occ, pose, self.camera, self.config.step_size, visibility=vis
        )
        self.uncertainty.attenuate(occ, pose, self.camera, visibility=vis)
        return obs

    def advise(self, pose: Pose):
        """Exploitation and exploration advice for the current maps."""
        exploit = None
        if self.config.use_exploitation:
            exploit = exploitation_target(
                self.cognitive,
                eps=self.config.dbscan_eps_factor * self.config.cell_size,
                min_pts=self.config.dbscan_min_pts,
                agent_position=pose.position,
            )
        explore = None
        if self.config.use_exploration:
            try:
                explore = best_exploration_action(
                    self.uncertainty,
                    self.occupancy(),
                    pose,
                    self.camera,
                    self.config.step_size,
                    self.scene,
                )
            except DeadEndError:
                explore = None
        return exploit, explore

    def plan_request(self, pose: Pose, step_index: int, exploit, explore):
        feasible = feasible_actions(self.scene, pose, self.config.step_size)
        recent = (self.positions + [pose.position])[-8:]
        return assemble_plan_request(
            self.task,
            _observation_summary(pose, step_index, feasible, recent),
            exploit,
            explore,
            self.config.theta,
            history=tuple(self.history[-5:]),
        )

    def digests(self) -> dict:
        return {
            "semantic": self.semantic.digest(),
            "cognitive": self.cognitive.digest(),
            "uncertainty": self.uncertainty.digest(),
        }


def _run_prpsearcher(config, scene, task, oracle) -> EpisodeRecord:
    state = PrpState(config, scene, task, oracle)
    pose = task.start_pose
    positions = [pose.position]
    steps: list[StepRecord] = []

    for t in range(config.max_steps):
        try:
            obs = state.perceive(pose, t)
            exploit, explore = state.advise(pose)
            request = state.plan_request(pose, t, exploit, explore)
            action, found = oracle.decide(request, obs)
        except OracleFailure:
            return _finish(
                config, task, scene, steps, TERMINATION_ORACLE_FAILURE, pose, False, positions
            )
        steps.append(
            StepRecord(
                index=t,
                pose=pose,
                action=action.value,
                found=found,
                exploit=exploit.to_dict() if exploit else None,
                explore=request.exploration_raw.to_dict()
                if request.exploration_raw
                else None,
                explore_included=request.exploration is not None,
                oracle=oracle.pop_exchanges(),
                digests=state.digests(),
            )
        )
        state.history.append(action.value)
        state.positions.append(pose.position)
        if action is Action.STOP:
            return _finish(
                config, task, scene, steps, TERMINATION_STOPPED, pose, found, positions
            )
        pose = apply_action(pose, action, config.step_size)
        positions.append(pose.position)
    return _finish(
        config, task, scene, steps, TERMINATION_STEP_LIMIT, pose, False, positions
    )


def _run_trace(config, scene, task, oracle, actions: list[Action]) -> EpisodeRecord:
    camera = config.camera()
    pose = task.start_pose
    positions = [pose.position]
    steps: list[StepRecord] = []
    for t, action in enumerate(actions[: config.max_steps]):
        obs = render(scene, pose, camera, t)
        found = oracle.identify(obs)
        steps.append(StepRecord(t, pose, action.value, found and action is Action.STOP))
        if action is Action.STOP:
            return _finish(
                config, task, scene, steps, TERMINATION_STOPPED, pose, found, positions
            )
        pose = apply_action(pose, action, config.step_size)
        positions.append(pose.position)
    return _finish(
        config, task, scene, steps, TERMINATION_STEP_LIMIT, pose, False, positions
    )


def replay_poses(record: EpisodeRecord) -> list[Pose]:
    """Re-derive the pose sequence from the recorded action trace."""
    if not record.steps:
        return []
    pose = record.steps[0].pose
    out = [pose]
    for step in record.steps:
        if Action(step.action) is Action.STOP:
            break
        pose = apply_action(pose, Action(step.action), record.config.step_size)
        out.append(pose)
    return out
