"""Semantic reasoning behind one pluggable interface.

Three duties: propose target-related labels, score how strongly each label
should attract the search, and choose the next action (including the stop
call).  The scripted implementation answers from a small knowledge base
plus ground-truth identification and is fully deterministic, which keeps
episodes byte-reproducible.  The remote implementation speaks a minimal
chat-completion HTTP contract and falls back to the scripted policy on
malformed answers.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .cognitive_map import AttractionTable
from .planner import Action, PlanRequest, apply_action, opposite_action
from .sensor import Observation, Pose
from .world import Task

DUTY_RELATED = "RelatedSemantics"
DUTY_ATTRACTION = "Attraction"
DUTY_PLAN = "Plan"


class OracleFailure(RuntimeError):
    """Remote oracle gave up after retries; the episode is invalid."""


@dataclass(frozen=True)
class KnowledgeBase:
    """Category co-occurrence priors and the identification rule.

    ``related`` maps a target category to labels worth mapping, each with
    an attraction score.  A target counts as identified when its object id
    covers at least ``kappa`` of the id raster while the agent is within
    ``identify_distance`` meters of the target position.
    """

    # kappa is sized for the desk-scale 64x48 raster: a sign-sized target
    # seen obliquely from a few meters covers only a couple percent of the
    # image.  Identification stays sound because it also requires the true
    # object id and the distance gate.
    related: dict[str, dict[str, float]] = field(default_factory=dict)
    kappa: float = 0.02
    identify_distance: float = 20.0

    def labels_for(self, category: str) -> dict[str, float]:
        table = dict(self.related.get(category, {}))
        table.setdefault(category, 1.0)
        return table


def default_knowledge_base() -> KnowledgeBase:
    # Membership decides what gets segmented and mapped (walls must be
    # mapped to occlude); the score decides whether mapped cells pull the
    # search.  Building shells are far too large to inspect cell by cell,
    # so they keep zero pull unless the target itself is building-scale;
    # street furniture (trees, signs, shops) carries the spatial hints.
    return KnowledgeBase(
        related={
            "shop": {"shop": 1.0, "tree": 0.95, "sign": 0.9, "building": 0.0},
            "sign": {"sign": 1.0, "shop": 0.75, "tree": 0.55, "building": 0.0},
            "billboard": {"billboard": 1.0, "building": 0.45},
            "vehicle": {"vehicle": 1.0, "facility": 0.45, "building": 0.0},
            "facility": {"facility": 1.0, "tree": 0.5, "building": 0.0},
            "building": {"building": 1.0, "billboard": 0.6, "sign": 0.5},
            "tree": {"tree": 1.0, "building": 0.4},
        }
    )


_CATEGORY_KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("shop", ("shop", "cafe", "store", "deli", "books", "records", "mart")),
    ("billboard", ("billboard", " ad ", "advert")),
    ("sign", ("sign", "signage")),
    ("vehicle", ("vehicle", "van", "car", "truck", "pickup", "hatchback", "sedan", "bus")),
    (
        "facility",
        ("facility", "station", "kiosk", "pump", "shed", "dock", "recycling", "bin"),
    ),
    ("tree", ("tree",)),
    ("building", ("building", "tower", "hall", "annex", "block", "plaza", "house")),
)


def _target_category(task: Task) -> str:
    """Keyword scan of the task cue, most specific categories first."""
    text = f" {task.text.lower()} "
    for category, keywords in _CATEGORY_KEYWORDS:
        if any(k in text for k in keywords):
            return category
    return "building"


def _wrap_angle(deg: float) -> float:
    return (deg + 180.0) % 360.0 - 180.0


class ScriptedOracle:
    """Deterministic knowledge-base policy used for tests and baselines."""

    def __init__(self, kb: KnowledgeBase | None = None, step_size: float = 5.0):
        self.kb = kb or default_knowledge_base()
        self.step_size = step_size
        self.task: Task | None = None
        self._exchanges: list[dict] = []

    def start_task(self, task: Task) -> None:
        self.task = task

    def pop_exchanges(self) -> list[dict]:
        out = self._exchanges
        self._exchanges = []
        return out

    def _log(self, duty: str, request: dict, response: dict, fallback: bool = False) -> None:
        entry = {"duty": duty, "request": request, "response": response}
        if fallback:
            entry["fallback"] = True
        self._exchanges.append(entry)

    # -- duty 1: related semantics ------------------------------------------------
    def related_semantics(self, task: Task) -> set[str]:
        category = _target_category(task)
        labels = set(self.kb.labels_for(category))
        self._log(
            DUTY_RELATED,
            {"image": task.image, "text": task.text},
            {"labels": sorted(labels)},
        )
        return labels

    # -- duty 2: attraction scores ------------------------------------------------
    def attraction_scores(self, task: Task, labels: set[str]) -> AttractionTable:
        category = _target_category(task)
        table = self.kb.labels_for(category)
        scores = {lab: table.get(lab, 0.0) for lab in labels}
        self._log(
            DUTY_ATTRACTION,
            {"image": task.image, "text": task.text, "labels": sorted(labels)},
            {"scores": {k: scores[k] for k in sorted(scores)}},
        )
        return AttractionTable(scores)

    # -- duty 3: plan / stop ------------------------------------------------------
    def identify(self, observation: Observation) -> bool:
        """Ground-truth stand-in for visual confirmation of the target."""
        if self.task is None:
            raise RuntimeError("oracle has no bound task")
        dist = math.dist(observation.pose.position, self.task.target_position)
        if dist > self.kb.identify_distance:
            return False
        ids = observation.semantic_ids
        fraction = float(np.mean(ids == self.task.target_object_id))
        return fraction >= self.kb.kappa

    def decide(self, request: PlanRequest, observation: Observation) -> tuple[Action, bool]:
        action, found = self._decide_policy(request, observation)
        self._log(
            DUTY_PLAN,
            request.to_payload(),
            {"action": action.value, "found_target": found},
        )
        return action, found

    _ESCAPE_LADDER = (
        Action.MOVE_FORWARD,
        Action.MOVE_FORWARD,
        Action.TURN_RIGHT,
        Action.MOVE_FORWARD,
        Action.ASCEND,
        Action.MOVE_FORWARD,
        Action.TURN_RIGHT,
        Action.MOVE_FORWARD,
    )

    def _decide_policy(self, request: PlanRequest, observation: Observation) -> tuple[Action, bool]:
        if self.identify(observation):
            return Action.STOP, True
        summary = request.observation_summary
        feasible = [Action(name) for name in summary.get("feasible_actions", [])]
        step_index = int(summary.get("step_index", 0))
        if self._cornered(summary.get("recent_positions", [])):
            return self._escape(request, feasible, step_index), False
        if request.exploitation is not None:
            action = self._toward(
                observation.pose, request.exploitation.target_point, feasible, request.history
            )
            if action is not None:
                return action, False
        # No usable guidance or a stalled approach: let the exploration
        # hint (when injected) pick the move.
        if request.exploration is not None:
            return request.exploration.action, False
        if Action.MOVE_FORWARD in feasible:
            return Action.MOVE_FORWARD, False
        return Action.TURN_RIGHT, False

    def _cornered(self, recent_positions: list) -> bool:
        """True when the last few poses stayed inside one step of travel."""
        if len(recent_positions) < 6:
            return False
        pts = np.asarray(recent_positions[-6:], dtype=float)
        spread = np.linalg.norm(pts - pts.mean(axis=0), axis=1).max()
        return bool(spread <= self.step_size)

    def _escape(self, request: PlanRequest, feasible: list[Action], step_index: int) -> Action:
        """Deterministic un-sticking move for a cornered agent.

        A fixed ladder, rotated by the step counter, supplies mostly
        translations so no turn-only cycle can persist.
        """
        ladder = self._ESCAPE_LADDER
        for offset in range(len(ladder)):
            action = ladder[(step_index + offset) % len(ladder)]
            if action in feasible:
                return action
        return Action.TURN_RIGHT

    def _toward(
        self,
        pose: Pose,
        target,
        feasible: list[Action],
        history: tuple[str, ...],
    ) -> Action | None:
        """Close distance to the target, orbiting it when blocked.

        The heading keeps the target between 30 degrees right and 100
        degrees left of the nose.  When no translation strictly improves,
        moving forward inside that band circles the target at the standoff
        radius (left hand on the obstacle), which walks the close-range
        recognition shell around look-alike regions until they are fully
        inspected and lose their pull.
        """
        target = np.asarray(target)
        pos = np.asarray(pose.position)
        to_target = target - pos
        current = float(np.linalg.norm(to_target))
        horiz = math.hypot(to_target[0], to_target[1])
        # Keep the target inside the camera cone; bearings to a point almost
        # directly below are meaningless, so skip facing there.
        if horiz > self.step_size:
            bearing = math.degrees(math.atan2(to_target[1], to_target[0]))
            delta = _wrap_angle(bearing - pose.yaw_deg)
            if abs(delta) > 30.0:
                return Action.TURN_LEFT if delta > 0 else Action.TURN_RIGHT

        banned = opposite_action(Action(history[-1])) if history else None
        candidates = [
            a
            for a in (Action.MOVE_FORWARD, Action.ASCEND, Action.DESCEND)
            if a in feasible and a is not banned
        ]
        best: Action | None = None
        best_dist = current - 1e-9
        for action in candidates:
            nxt = np.asarray(apply_action(pose, action, self.step_size).position)
            dist = float(np.linalg.norm(nxt - target))
            if dist < best_dist:
                best = action
                best_dist = dist
        if best is not None:
            return best
        # Wedged while facing: slide along the blocking surface so the
        # close-range recognition shell keeps consuming it.
        if Action.MOVE_FORWARD in feasible:
            return Action.MOVE_FORWARD
        return Action.TURN_RIGHT


# ---------------------------------------------------------------------------
# Remote client
# ---------------------------------------------------------------------------

RELATED_PROMPT = """You are assisting an aerial search drone.
Target image reference: {image}
Target description: {text}
List the object categories that would help locate this target from the air,
including the target's own category.
Answer with a fenced json block: {{"labels": ["...", ...]}}"""

ATTRACTION_PROMPT = """You are assisting an aerial search drone.
Target image reference: {image}
Target description: {text}
For each category below, rate from 0 to 1 how strongly mapped objects of
that category should pull the search toward them.
Categories: {labels}
Answer with a fenced json block: {{"scores": {{"category": value, ...}}}}"""

PLAN_PROMPT = """You are piloting an aerial search drone one step at a time.
Plan request:
{payload}
Choose exactly one action from {actions}.
Declare found_target true only when the described target is clearly visible
and close.
Answer with a fenced json block:
{{"action": "...", "found_target": false, "rationale": "..."}}"""

_FENCED_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def _extract_fenced_json(text: str) -> dict | None:
    match = _FENCED_RE.search(text)
    if not match:
        return None
    try:
        doc = json.loads(match.group(1))
    except json.JSONDecodeError:
        return None
    return doc if isinstance(doc, dict) else None


@dataclass
class RemoteConfig:
    endpoint: str
    api_key: str = ""
    model: str = "gpt-4o"
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_s: float = 0.5

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "RemoteConfig":
        env = env if env is not None else dict(os.environ)
        endpoint = env.get("ORACLE_ENDPOINT", "")
        if not endpoint:
            raise ValueError("ORACLE_ENDPOINT is not set")
        return cls(
            endpoint=endpoint,
            api_key=env.get("ORACLE_KEY", ""),
            model=env.get("ORACLE_MODEL", "gpt-4o"),
            timeout_s=float(env.get("ORACLE_TIMEOUT_MS", "30000")) / 1000.0,
        )


class RemoteOracle:
    """Chat-completion client with scripted fallback on malformed output."""

    def __init__(
        self,
        config: RemoteConfig,
        kb: KnowledgeBase | None = None,
        step_size: float = 5.0,
        transport=None,
        sleep=time.sleep,
    ):
        import httpx

        self.config = config
        self.scripted = ScriptedOracle(kb, step_size)
        self._client = httpx.Client(transport=transport, timeout=config.timeout_s)
        self._sleep = sleep
        self._exchanges: list[dict] = []

    @property
    def kb(self) -> KnowledgeBase:
        return self.scripted.kb

    def start_task(self, task: Task) -> None:
        self.scripted.start_task(task)

    def identify(self, observation: Observation) -> bool:
        return self.scripted.identify(observation)

    def pop_exchanges(self) -> list[dict]:
        out = self._exchanges + self.scripted.pop_exchanges()
        self._exchanges = []
        return out

    def _chat(self, prompt: str) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_attempts):
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.config.max_attempts:
                    self._sleep(self.config.backoff_s * (2**attempt))
        raise OracleFailure(f"oracle transport failed after retries: {last_error}")

    def related_semantics(self, task: Task) -> set[str]:
        prompt = RELATED_PROMPT.format(image=task.image, text=task.text)
        content = self._chat(prompt)
        doc = _extract_fenced_json(content)
        if (
            doc is None
            or not isinstance(doc.get("labels"), list)
            or not all(isinstance(x, str) for x in doc["labels"])
            or not doc["labels"]
        ):
            self._exchanges.append(
                {"duty": DUTY_RELATED, "request": prompt, "response": content, "fallback": True}
            )
            return self.scripted.related_semantics(task)
        labels = set(doc["labels"]) | {_target_category(task)}
        self._exchanges.append(
            {"duty": DUTY_RELATED, "request": prompt, "response": sorted(labels)}
        )
        return labels

    def attraction_scores(self, task: Task, labels: set[str]) -> AttractionTable:
        prompt = ATTRACTION_PROMPT.format(
            image=task.image, text=task.text, labels=", ".join(sorted(labels))
        )
        content = self._chat(prompt)
        doc = _extract_fenced_json(content)
        if doc is None or not isinstance(doc.get("scores"), dict):
            self._exchanges.append(
                {"duty": DUTY_ATTRACTION, "request": prompt, "response": content, "fallback": True}
            )
            return self.scripted.attraction_scores(task, labels)
        scores: dict[str, float] = {}
        warnings: list[str] = []
        for lab in labels:
            raw = doc["scores"].get(lab, 0.0)
            if not isinstance(raw, (int, float)) or isinstance(raw, bool):
                warnings.append(f"non-numeric score for {lab!r}, using 0")
                raw = 0.0
            clamped = min(1.0, max(0.0, float(raw)))
            if clamped != raw:
                warnings.append(f"score for {lab!r} clamped from {raw} to {clamped}")
            scores[lab] = clamped
        entry = {"duty": DUTY_ATTRACTION, "request": prompt, "response": scores}
        if warnings:
            entry["warnings"] = warnings
        self._exchanges.append(entry)
        return AttractionTable(scores)

    def decide(self, request: PlanRequest, observation: Observation) -> tuple[Action, bool]:
        feasible = set(request.observation_summary.get("feasible_actions", []))
        feasible.add(Action.STOP.value)
        prompt = PLAN_PROMPT.format(
            payload=json.dumps(request.to_payload(), indent=2),
            actions=sorted(feasible),
        )
        content = self._chat(prompt)
        doc = _extract_fenced_json(content)
        valid = (
            doc is not None
            and isinstance(doc.get("action"), str)
            and doc["action"] in feasible
            and isinstance(doc.get("found_target"), bool)
        )
        if not valid:
            self._exchanges.append(
                {"duty": DUTY_PLAN, "request": prompt, "response": content, "fallback": True}
            )
            return self.scripted.decide(request, observation)
        self._exchanges.append({"duty": DUTY_PLAN, "request": prompt, "response": doc})
        return Action(doc["action"]), bool(doc["found_target"])


def make_oracle(
    mode: str = "scripted",
    kb: KnowledgeBase | None = None,
    step_size: float = 5.0,
    env: dict[str, str] | None = None,
    transport=None,
):
    """Factory honoring ORACLE_MODE / ORACLE_ENDPOINT / ORACLE_KEY / ORACLE_TIMEOUT_MS."""
    env = env if env is not None else dict(os.environ)
    mode = mode or env.get("ORACLE_MODE", "scripted")
    if mode == "scripted":
        return ScriptedOracle(kb, step_size)
    if mode == "remote":
        return RemoteOracle(RemoteConfig.from_env(env), kb, step_size, transport=transport)
    raise ValueError(f"unknown oracle mode {mode!r}")
