"""HTTP API for interactive episodes (human play and external agents).

Sessions are externally driven: every POSTed action advances one step of
an episode whose maps are maintained server-side so the UI can overlay
them.  Each applied action is appended to the session's JSONL record and
flushed before the response returns.  Stop semantics match the headless
agents: success requires stopping close to a confirmed target.
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .agent import (
    TERMINATION_DEAD_END,
    TERMINATION_STEP_LIMIT,
    TERMINATION_STOPPED,
    EpisodeConfig,
    EpisodeRecord,
    PrpState,
    StepRecord,
    _finish,
)
from .evaluation import SUCCESS_THRESHOLD_M, success
from .oracle import ScriptedOracle
from .planner import Action, apply_action, feasible_actions
from .sensor import Observation
from .world import Scene, Task, load_scene, load_tasks


class CreateEpisodeRequest(BaseModel):
    task_id: str
    agent: str = "human"


class ActionRequest(BaseModel):
    action: str


class Session:
    """One live episode with its map stack, trace, and on-disk log."""

    def __init__(
        self,
        session_id: str,
        config: EpisodeConfig,
        scene: Scene,
        task: Task,
        root: Path,
    ):
        self.id = session_id
        self.config = config
        self.scene = scene
        self.task = task
        self.lock = threading.Lock()
        self.oracle = ScriptedOracle(step_size=config.step_size)
        self.oracle.start_task(task)
        self.state = PrpState(config, scene, task, self.oracle)
        self.pose = task.start_pose
        self.positions = [task.start_pose.position]
        self.steps: list[StepRecord] = []
        self.status = "Active"
        self.termination: str | None = None
        self.found_target = False
        self.dir = root / session_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self._log = open(self.dir / "record.jsonl", "a", encoding="utf-8")
        self._log_line(
            {
                "type": "header",
                "format_version": 1,
                "task_id": task.id,
                "scene_id": scene.scene_id,
                "config": config.to_dict(),
            }
        )
        self.observation: Observation = self.state.perceive(self.pose, 0)
        self._save_frame(0)

    def _log_line(self, doc: dict) -> None:
        self._log.write(json.dumps(doc) + "\n")
        self._log.flush()

    def _save_frame(self, step_index: int) -> None:
        from PIL import Image

        Image.fromarray(self.observation.color).save(self.dir / f"obs_{step_index:04d}.png")

    @property
    def step_index(self) -> int:
        return len(self.steps)

    def feasible(self) -> list[str]:
        return [a.value for a in feasible_actions(self.scene, self.pose, self.config.step_size)]

    def observation_payload(self) -> dict:
        return {
            "session_id": self.id,
            "step_index": self.step_index,
            "image": f"/episodes/{self.id}/images/{self.step_index}",
            "pose": self.pose.to_dict(),
            "feasible_actions": self.feasible(),
            "status": self.status,
        }

    def apply(self, action: Action) -> dict:
        found = self.oracle.identify(self.observation) if action is Action.STOP else False
        entry = StepRecord(
            index=self.step_index,
            pose=self.pose,
            action=action.value,
            found=found,
            digests=self.state.digests(),
        )
        self.steps.append(entry)
        self._log_line(entry.to_dict())
        if action is Action.STOP:
            self._terminate(TERMINATION_STOPPED, found)
        else:
            self.pose = apply_action(self.pose, action, self.config.step_size)
            self.positions.append(self.pose.position)
            if len(self.steps) >= self.config.max_steps:
                self._terminate(TERMINATION_STEP_LIMIT, False)
            else:
                self.observation = self.state.perceive(self.pose, self.step_index)
                self._save_frame(self.step_index)
                if not self.feasible():
                    self._terminate(TERMINATION_DEAD_END, False)
        return self.observation_payload()

    def _terminate(self, termination: str, found: bool) -> None:
        self.status = "Terminated"
        self.termination = termination
        self.found_target = found
        record = self.record()
        self._log_line(
            {
                "type": "footer",
                "termination": termination,
                "steps": record.num_steps,
                "path_length": record.path_length,
                "final_pose": record.final_pose.to_dict(),
                "found_target": found,
            }
        )
        self._log.close()

    def record(self) -> EpisodeRecord:
        return _finish(
            self.config,
            self.task,
            self.scene,
            self.steps,
            self.termination or "Active",
            self.pose,
            self.found_target,
            self.positions,
        )


def create_app(
    tasks_file: Path | str,
    session_root: Path | str = "sessions",
    config: EpisodeConfig | None = None,
) -> FastAPI:
    """Build the API around one task file and a session output directory."""
    tasks, scene_files = load_tasks(tasks_file)
    tasks_by_id = {t.id: t for t in tasks}
    scenes: dict[str, Scene] = {}
    base_config = config or EpisodeConfig()
    root = Path(session_root)
    sessions: dict[str, Session] = {}
    tasks_dir = Path(tasks_file).parent

    app = FastAPI(title="avos")

    def _scene(scene_id: str) -> Scene:
        if scene_id not in scenes:
            scenes[scene_id] = load_scene(scene_files[scene_id])
        return scenes[scene_id]

    def _session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    frontend = Path(__file__).resolve().parents[2] / "frontend"
    if (frontend / "dist").is_dir():
        # Built browser client, served same-origin so fetch("" + path) works.
        from fastapi.staticfiles import StaticFiles

        @app.get("/")
        def index():
            return FileResponse(frontend / "index.html", media_type="text/html")

        app.mount("/dist", StaticFiles(directory=frontend / "dist"), name="dist")

    @app.get("/tasks")
    def list_tasks() -> list[dict]:
        return [
            {"task_id": t.id, "difficulty": t.difficulty, "text": t.text}
            for t in tasks
        ]

    @app.post("/episodes")
    def create_episode(req: CreateEpisodeRequest) -> dict:
        task = tasks_by_id.get(req.task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"unknown task {req.task_id!r}")
        session_id = uuid.uuid4().hex[:12]
        session = Session(
            session_id,
            replace(base_config, agent=req.agent),
            _scene(task.scene_id),
            task,
            root,
        )
        sessions[session_id] = session
        return {
            "session_id": session_id,
            "target": {"image": f"/episodes/{session_id}/target", "text": task.text},
            "observation": session.observation_payload(),
        }

    @app.get("/episodes/{session_id}/observation")
    def observation(session_id: str) -> dict:
        return _session(session_id).observation_payload()

    @app.get("/episodes/{session_id}/images/{step_index}")
    def image(session_id: str, step_index: int):
        session = _session(session_id)
        path = session.dir / f"obs_{step_index:04d}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail="no frame for that step")
        return FileResponse(path, media_type="image/png")

    @app.get("/episodes/{session_id}/target")
    def target_image(session_id: str):
        session = _session(session_id)
        path = Path(session.task.image)
        if not path.is_absolute():
            path = tasks_dir / path
        if not path.exists():
            raise HTTPException(status_code=404, detail="task has no rendered cue image")
        return FileResponse(path, media_type="image/png")

    @app.post("/episodes/{session_id}/action")
    def act(session_id: str, req: ActionRequest):
        session = _session(session_id)
        with session.lock:
            if session.status != "Active":
                return JSONResponse(
                    status_code=409,
                    content={
                        "error": "session already terminated",
                        "termination": session.termination,
                    },
                )
            try:
                action = Action(req.action)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"unknown action {req.action!r}")
            if action is not Action.STOP and req.action not in session.feasible():
                return JSONResponse(
                    status_code=409,
                    content={
                        "error": f"action {req.action!r} infeasible",
                        "feasible_actions": session.feasible(),
                    },
                )
            payload = session.apply(action)
        payload["termination"] = session.termination
        return payload

    @app.get("/episodes/{session_id}/maps")
    def maps(session_id: str, layer: str = "semantic") -> dict:
        session = _session(session_id)
        if layer == "semantic":
            return session.state.semantic.to_dump()
        if layer == "cognitive":
            return session.state.cognitive.to_dump()
        if layer == "uncertainty":
            return session.state.uncertainty.to_dump()
        raise HTTPException(status_code=422, detail=f"unknown map layer {layer!r}")

    @app.get("/episodes/{session_id}/result")
    def result(session_id: str) -> dict:
        session = _session(session_id)
        if session.status != "Terminated":
            raise HTTPException(status_code=409, detail="session still active")
        record = session.record()
        distance = math.dist(record.final_pose.position, session.task.target_position)
        return {
            "termination": record.termination,
            "steps": record.num_steps,
            "path_length": record.path_length,
            "final_pose": record.final_pose.to_dict(),
            "found_target": record.found_target,
            "distance_to_target": distance,
            "success": success(record, session.task, SUCCESS_THRESHOLD_M),
            "record_file": str(session.dir / "record.jsonl"),
        }

    return app
