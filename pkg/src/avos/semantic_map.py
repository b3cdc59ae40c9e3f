"""Object-centric 3D semantic voxel map with dynamic majority re-labeling.

Labeled pixels are lifted to world points, binned into a regular grid, and
each cell keeps a full per-label observation histogram.  A cell's current
label is the histogram argmax, recomputed whenever the cell is touched, so
labels can flip as contradicting evidence accumulates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .sensor import CameraModel, Pose, SegmentedObservation, backproject

if TYPE_CHECKING:
    from .world import Scene

UNKNOWN_LABEL = "unknown"

GRID_DUMP_FORMAT_VERSION = 1


class GridIndexError(IndexError):
    """Raised for points or indices outside the grid."""


class GridMismatchError(ValueError):
    """Raised when two grids that must share a spec do not."""


@dataclass(frozen=True)
class GridSpec:
    """Regular voxelization of a bounded volume.

    Binning is half-open: points at the max bound on any axis are out of
    range.  ``dims`` round up, so edge cells may extend past the bounds.
    """

    bounds_min: tuple[float, float, float]
    bounds_max: tuple[float, float, float]
    cell: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(c <= 0 for c in self.cell):
            raise ValueError("cell sizes must be positive")
        if any(a >= b for a, b in zip(self.bounds_min, self.bounds_max)):
            raise ValueError("bounds must span positive volume")

    @classmethod
    def for_scene(cls, scene: "Scene", cell_size: float = 2.0) -> "GridSpec":
        return cls(
            bounds_min=tuple(scene.bounds_min),
            bounds_max=tuple(scene.bounds_max),
            cell=(cell_size, cell_size, cell_size),
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(
            int(np.ceil((hi - lo) / c))
            for lo, hi, c in zip(self.bounds_min, self.bounds_max, self.cell)
        )

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def world_to_index(self, point) -> tuple[int, int, int]:
        idx = []
        for axis in range(3):
            p = point[axis]
            lo, hi = self.bounds_min[axis], self.bounds_max[axis]
            if not lo <= p < hi:
                raise GridIndexError(f"coordinate {p} outside [{lo}, {hi}) on axis {axis}")
            idx.append(int((p - lo) // self.cell[axis]))
        return tuple(idx)

    def world_to_index_array(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized binning; returns (indices (N,3) int64, in-range mask)."""
        pts = np.asarray(points, dtype=float)
        lo = np.asarray(self.bounds_min)
        hi = np.asarray(self.bounds_max)
        cell = np.asarray(self.cell)
        ok = np.all((pts >= lo) & (pts < hi), axis=-1)
        idx = np.floor((pts - lo) / cell).astype(np.int64)
        return idx, ok

    def cell_center(self, i: int, j: int, k: int) -> tuple[float, float, float]:
        self._check_index(i, j, k)
        return tuple(
            self.bounds_min[a] + (n + 0.5) * self.cell[a] for a, n in enumerate((i, j, k))
        )

    def cell_centers(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=float)
        return np.asarray(self.bounds_min) + (idx + 0.5) * np.asarray(self.cell)

    def all_cell_centers(self) -> np.ndarray:
        """Centers of every cell, shape (nx, ny, nz, 3)."""
        nx, ny, nz = self.dims
        ii, jj, kk = np.meshgrid(
            np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
        )
        idx = np.stack([ii, jj, kk], axis=-1).astype(float)
        return np.asarray(self.bounds_min) + (idx + 0.5) * np.asarray(self.cell)

    def _check_index(self, i: int, j: int, k: int) -> None:
        nx, ny, nz = self.dims
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            raise GridIndexError(f"index ({i}, {j}, {k}) outside grid dims {self.dims}")


class SemanticVoxelGrid:
    """Per-cell label histograms plus the current argmax label.

    Argmax ties keep the incumbent label when it is among the tied maxima;
    otherwise the lexicographically smallest tied label wins.  Counts are
    cumulative over the episode with no decay.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self._labels: list[str] = []
        self._lex_rank: np.ndarray = np.zeros(0, dtype=np.int64)
        self._counts = np.zeros((0, *spec.dims), dtype=np.int32)
        self._current = np.full(spec.dims, -1, dtype=np.int16)
        self.n_integrated = 0

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    @property
    def current_label_ids(self) -> np.ndarray:
        """Read-only view of per-cell label indices (-1 = unknown)."""
        return self._current

    def _label_index(self, label: str) -> int:
        try:
            return self._labels.index(label)
        except ValueError:
            self._labels.append(label)
            self._counts = np.concatenate(
                [self._counts, np.zeros((1, *self.spec.dims), dtype=np.int32)]
            )
            order = np.argsort(np.array(self._labels))
            rank = np.empty(len(self._labels), dtype=np.int64)
            rank[order] = np.arange(len(self._labels))
            self._lex_rank = rank
            return len(self._labels) - 1

    def integrate(
        self,
        segmented: SegmentedObservation,
        camera: CameraModel,
        pose: Pose | None = None,
    ) -> np.ndarray:
        """Fuse one segmented observation; returns touched cell indices (M, 3).

        Pixels with zero depth or the ignored label are skipped; everything
        else is back-projected, binned, counted, and re-argmaxed.
        """
        from .sensor import IGNORED_LABEL

        obs = segmented.observation
        pose = pose or obs.pose
        if segmented.label_ids.shape != obs.depth.shape:
            raise GridMismatchError("label raster does not match depth raster")

        ignored = (
            segmented.labels.index(IGNORED_LABEL)
            if IGNORED_LABEL in segmented.labels
            else -2
        )
        keep = (obs.depth > 0) & (segmented.label_ids >= 0) & (segmented.label_ids != ignored)
        if not keep.any():
            return np.zeros((0, 3), dtype=np.int64)

        rows, cols = np.nonzero(keep)
        us = cols + 0.5
        vs = rows + 0.5
        pts = backproject(us, vs, obs.depth[rows, cols], camera, pose)
        idx, ok = self.spec.world_to_index_array(pts)
        idx = idx[ok]
        pix_labels = segmented.label_ids[rows, cols][ok]
        if idx.size == 0:
            return np.zeros((0, 3), dtype=np.int64)

        grid_label = np.array(
            [self._label_index(lab) for lab in segmented.labels], dtype=np.int64
        )
        np.add.at(
            self._counts,
            (grid_label[pix_labels], idx[:, 0], idx[:, 1], idx[:, 2]),
            1,
        )
        self.n_integrated += int(idx.shape[0])

        touched = np.unique(idx, axis=0)
        self._relabel(touched)
        return touched

    def _relabel(self, touched: np.ndarray) -> None:
        if touched.size == 0 or not self._labels:
            return
        ti, tj, tk = touched[:, 0], touched[:, 1], touched[:, 2]
        counts = self._counts[:, ti, tj, tk]  # (L, M)
        max_counts = counts.max(axis=0)
        is_max = counts == max_counts
        # Lexicographic argmax among the tied maxima.
        ranked = np.where(is_max, self._lex_rank[:, None], np.iinfo(np.int64).max)
        lex_choice = np.argmin(ranked, axis=0).astype(np.int16)
        incumbent = self._current[ti, tj, tk]
        has_incumbent = incumbent >= 0
        incumbent_safe = np.where(has_incumbent, incumbent, 0)
        incumbent_tied = is_max[incumbent_safe, np.arange(len(max_counts))] & has_incumbent
        chosen = np.where(incumbent_tied, incumbent, lex_choice)
        self._current[ti, tj, tk] = np.where(max_counts > 0, chosen, -1)

    def label_of(self, i: int, j: int, k: int) -> str:
        self.spec._check_index(i, j, k)
        idx = self._current[i, j, k]
        return UNKNOWN_LABEL if idx < 0 else self._labels[idx]

    def histogram(self, i: int, j: int, k: int) -> dict[str, int]:
        self.spec._check_index(i, j, k)
        return {
            lab: int(self._counts[n, i, j, k])
            for n, lab in enumerate(self._labels)
            if self._counts[n, i, j, k] > 0
        }

    def total_count(self) -> int:
        return int(self._counts.sum())

    def occupancy(self) -> np.ndarray:
        """Cells with any label (the agent's mapped solids), bool (nx,ny,nz)."""
        return self._current >= 0

    def label_array(self) -> np.ndarray:
        """Current labels as strings, shape dims; unobserved cells 'unknown'."""
        lut = np.array([UNKNOWN_LABEL] + self._labels)
        return lut[self._current.astype(np.int64) + 1]

    def to_dump(self) -> dict:
        """Header + run-length-encoded label array (C order over x, y, z)."""
        flat = self._current.ravel()
        runs: list[list[int]] = []
        if flat.size:
            change = np.nonzero(np.diff(flat))[0]
            starts = np.concatenate([[0], change + 1])
            ends = np.concatenate([change + 1, [flat.size]])
            runs = [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]
        return {
            "format_version": GRID_DUMP_FORMAT_VERSION,
            "kind": "semantic",
            "spec": grid_spec_to_dict(self.spec),
            "labels": list(self._labels),
            "rle": runs,
        }

    def digest(self) -> str:
        """64-bit hash over the dump content (header, labels, label array)."""
        return grid_digest(self.spec, self._current, extra="|".join(self._labels))


def grid_spec_to_dict(spec: GridSpec) -> dict:
    return {
        "bounds_min": list(spec.bounds_min),
        "bounds_max": list(spec.bounds_max),
        "cell": list(spec.cell),
        "dims": list(spec.dims),
    }


def grid_digest(spec: GridSpec, values: np.ndarray, extra: str = "") -> str:
    """Stable 64-bit hex digest of a grid's header plus cell payload."""
    h = hashlib.blake2b(digest_size=8)
    h.update(json.dumps(grid_spec_to_dict(spec), sort_keys=True).encode())
    h.update(extra.encode())
    h.update(np.ascontiguousarray(values).tobytes())
    return h.hexdigest()


def float_grid_dump(kind: str, spec: GridSpec, values: np.ndarray) -> dict:
    """Per-cell float dump sharing the semantic header shape."""
    return {
        "format_version": GRID_DUMP_FORMAT_VERSION,
        "kind": kind,
        "spec": grid_spec_to_dict(spec),
        "values": [round(float(v), 9) for v in values.ravel()],
    }


def scene_occupancy(scene: "Scene", spec: GridSpec) -> np.ndarray:
    """Ground-truth solid mask: cells whose volume meets any scene box."""
    occ = np.zeros(spec.dims, dtype=bool)
    lo = np.asarray(spec.bounds_min)
    cell = np.asarray(spec.cell)
    dims = np.asarray(spec.dims)
    for obj in scene.objects:
        i0 = np.clip(np.floor((np.asarray(obj.box_min) - lo) / cell).astype(int), 0, dims - 1)
        i1 = np.clip(
            np.ceil((np.asarray(obj.box_max) - lo) / cell).astype(int), 1, dims
        )
        occ[i0[0] : i1[0], i0[1] : i1[1], i0[2] : i1[2]] = True
    return occ
