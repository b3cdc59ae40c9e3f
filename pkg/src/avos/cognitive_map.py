"""3D cognitive map: per-cell attraction values with recognition denoising.

Attraction is a label-level score in [0, 1] assigned by the reasoning
oracle; every cell holds the attraction of its current semantic label,
masked by a mirrored recognized-flag grid.  Once the agent has inspected a
cell up close its flag drops to zero permanently, so already-checked
look-alikes stop pulling the search back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .semantic_map import (
    GridMismatchError,
    GridSpec,
    SemanticVoxelGrid,
    UNKNOWN_LABEL,
    float_grid_dump,
    grid_digest,
)
from .sensor import IGNORED_LABEL, CameraModel, Pose
from .uncertainty_map import visible_cells


@dataclass(frozen=True)
class AttractionTable:
    """Label -> attraction in [0, 1]; unknown/ignored are pinned to zero."""

    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cleaned = {}
        for label, value in self.scores.items():
            if label in (UNKNOWN_LABEL, IGNORED_LABEL):
                continue
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"attraction for {label!r} outside [0, 1]: {value}")
            cleaned[label] = float(value)
        object.__setattr__(self, "scores", cleaned)

    def value(self, label: str) -> float:
        return self.scores.get(label, 0.0)

    def as_array(self, labels: tuple[str, ...]) -> np.ndarray:
        return np.array([self.value(lab) for lab in labels], dtype=np.float64)


class CognitiveGrid:
    """Attraction per cell plus the mirrored not-yet-recognized flags."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.attraction = np.zeros(spec.dims, dtype=np.float64)
        # 1 = not recognized yet; recognition only ever clears flags.
        self.unrecognized = np.ones(spec.dims, dtype=np.uint8)

    def refresh(
        self,
        semantic: SemanticVoxelGrid,
        table: AttractionTable,
        touched: np.ndarray | None = None,
    ) -> None:
        """Recompute attraction for touched cells (or everywhere if None).

        Each cell becomes the attraction of its current label, gated by the
        unrecognized flag so denoised cells stay at zero.
        """
        if semantic.spec != self.spec:
            raise GridMismatchError("semantic and cognitive grids must share a spec")
        values = np.concatenate([[0.0], table.as_array(semantic.labels)])
        if touched is None:
            ids = semantic.current_label_ids.astype(np.int64) + 1
            self.attraction = values[ids] * self.unrecognized
            return
        if touched.size == 0:
            return
        ti, tj, tk = touched[:, 0], touched[:, 1], touched[:, 2]
        ids = semantic.current_label_ids[ti, tj, tk].astype(np.int64) + 1
        self.attraction[ti, tj, tk] = values[ids] * self.unrecognized[ti, tj, tk]

    def mark_recognized(
        self,
        occupancy: np.ndarray,
        pose: Pose,
        camera: CameraModel,
        step_size: float,
        visibility: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> np.ndarray:
        """Flag cells both visible and within one step as recognized.

        Visibility reuses the uncertainty map's raycast routine (a cell
        counts as visible when any of its faces is).  Distance is measured
        to the nearest point of the cell volume, so a cell the agent is
        directly beside counts as inspected regardless of cell size.
        Returns the newly recognized cell indices.
        """
        cells, _faces = (
            visibility
            if visibility is not None
            else visible_cells(occupancy, self.spec, pose, camera)
        )
        if len(cells) == 0:
            return np.zeros((0, 3), dtype=np.int64)
        cells = np.unique(cells, axis=0)
        half = np.asarray(self.spec.cell) / 2.0
        centers = self.spec.cell_centers(cells)
        offset = np.abs(np.asarray(pose.position) - centers)
        gap = np.maximum(offset - half, 0.0)
        near = np.linalg.norm(gap, axis=1) <= step_size
        picked = cells[near]
        if len(picked):
            fresh = self.unrecognized[picked[:, 0], picked[:, 1], picked[:, 2]] == 1
            picked = picked[fresh]
        if len(picked):
            self.unrecognized[picked[:, 0], picked[:, 1], picked[:, 2]] = 0
            self.attraction[picked[:, 0], picked[:, 1], picked[:, 2]] = 0.0
        return picked

    def max_attraction(self) -> float:
        return float(self.attraction.max()) if self.attraction.size else 0.0

    def to_dump(self) -> dict:
        return float_grid_dump("cognitive", self.spec, self.attraction)

    def digest(self) -> str:
        return grid_digest(self.spec, self.attraction, extra="cognitive")
