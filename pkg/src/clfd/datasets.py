"""Dataset files and synthetic task generation.

A dataset is a JSON file holding named tasks, each a stack of
demonstrations with uniform length and dimension. Position datasets feed
the trajectory learner directly; quaternion datasets store scalar-first
unit quaternion rows that the experiment harness maps through the
tangent-space pipeline.

The synthetic generator draws from five parametric shape families
(line, arc, sine, s-curve, figure-eight) with per-demonstration jitter,
deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .node import DemonstrationSet, Trajectory
from .so3 import canonicalize_quats
from .strategies import derived_seed

KINDS = ("position", "quaternion")
SHAPES = ("line", "arc", "sine", "s-curve", "figure-eight")
_QUAT_NORM_TOL = 1e-6


@dataclass
class DatasetTask:
    """One named task: demonstrations stacked as a (D, T, d) array."""

    task_name: str
    demonstrations: np.ndarray

    def __post_init__(self):
        self.demonstrations = np.asarray(self.demonstrations, dtype=np.float64)
        if not self.task_name:
            raise ValidationError("task_name: must be a non-empty string")
        if self.demonstrations.ndim != 3:
            raise ValidationError(
                f"demonstrations: expected (D, T, d) array, got shape "
                f"{self.demonstrations.shape}")
        if self.demonstrations.shape[0] < 1 or self.demonstrations.shape[1] < 2:
            raise ValidationError(
                "demonstrations: need at least 1 demonstration of at least 2 points")
        if not np.all(np.isfinite(self.demonstrations)):
            raise ValidationError("demonstrations: values must be finite")

    @property
    def D(self) -> int:
        return self.demonstrations.shape[0]

    @property
    def T(self) -> int:
        return self.demonstrations.shape[1]

    @property
    def dim(self) -> int:
        return self.demonstrations.shape[2]


@dataclass
class DatasetFile:
    """Validated dataset: kind, dimension, and named tasks."""

    name: str
    kind: str
    dim: int
    tasks: list = field(default_factory=list)
    recording_frequency: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ValidationError("name: must be a non-empty string")
        if self.kind not in KINDS:
            raise ValidationError(f"kind: must be one of {KINDS}, got {self.kind!r}")
        if self.dim < 1:
            raise ValidationError(f"dim: must be >= 1, got {self.dim}")
        if self.kind == "quaternion" and self.dim != 4:
            raise ValidationError(f"dim: quaternion datasets need dim=4, got {self.dim}")
        if self.recording_frequency is not None and self.recording_frequency <= 0:
            raise ValidationError(
                f"recording_frequency: must be > 0, got {self.recording_frequency}")
        if not self.tasks:
            raise ValidationError("tasks: must contain at least one task")
        seen = set()
        for k, task in enumerate(self.tasks):
            if task.dim != self.dim:
                raise ValidationError(
                    f"tasks[{k}].demonstrations: dimension {task.dim} does not "
                    f"match dataset dim {self.dim}")
            if task.task_name in seen:
                raise ValidationError(
                    f"tasks[{k}].task_name: duplicate name {task.task_name!r}")
            seen.add(task.task_name)
        if self.kind == "quaternion":
            for k, task in enumerate(self.tasks):
                norms = np.linalg.norm(task.demonstrations, axis=2)
                worst = float(np.max(np.abs(norms - 1.0)))
                if worst > _QUAT_NORM_TOL:
                    raise ValidationError(
                        f"tasks[{k}].demonstrations: quaternion norm deviates "
                        f"from 1 by {worst:.2e} (tolerance {_QUAT_NORM_TOL})")
                task.demonstrations = np.stack(
                    [canonicalize_quats(demo) for demo in task.demonstrations])

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task_names(self) -> list:
        return [t.task_name for t in self.tasks]

    def timestamps(self, task_idx: int) -> np.ndarray:
        t = self.tasks[task_idx].T
        if self.recording_frequency is not None:
            return np.arange(t, dtype=np.float64) / self.recording_frequency
        return np.linspace(0.0, 1.0, t)

    def demonstration_set(self, task_idx: int) -> DemonstrationSet:
        """The task as trainable trajectories (position datasets only)."""
        if self.kind != "position":
            raise ValidationError(
                "demonstration_set is for position datasets; map quaternion "
                "tasks through the tangent-space pipeline instead")
        task = self.tasks[task_idx]
        ts = self.timestamps(task_idx)
        demos = [Trajectory(task.demonstrations[j], ts) for j in range(task.D)]
        return DemonstrationSet(demos, name=task.task_name,
                                recording_frequency=self.recording_frequency)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "dim": self.dim,
            "recording_frequency": self.recording_frequency,
            "tasks": [{"task_name": t.task_name,
                       "demonstrations": t.demonstrations.tolist()}
                      for t in self.tasks],
        }


def _require(d: dict, key: str, types, where: str):
    if key not in d:
        raise ValidationError(f"{where}{key}: missing required field")
    value = d[key]
    if not isinstance(value, types):
        raise ValidationError(
            f"{where}{key}: expected {getattr(types, '__name__', types)}, "
            f"got {type(value).__name__}")
    return value


def dataset_from_dict(data: dict, where: str = "") -> DatasetFile:
    """Build a validated DatasetFile from parsed JSON, naming bad fields."""
    if not isinstance(data, dict):
        raise ValidationError(f"{where or 'dataset'}: expected a JSON object")
    name = _require(data, "name", str, where)
    kind = _require(data, "kind", str, where)
    dim = _require(data, "dim", int, where)
    freq = data.get("recording_frequency")
    if freq is not None and not isinstance(freq, (int, float)):
        raise ValidationError(
            f"{where}recording_frequency: expected a number or null")
    tasks_raw = _require(data, "tasks", list, where)
    tasks = []
    for k, entry in enumerate(tasks_raw):
        loc = f"{where}tasks[{k}]."
        if not isinstance(entry, dict):
            raise ValidationError(f"{where}tasks[{k}]: expected a JSON object")
        task_name = _require(entry, "task_name", str, loc)
        demos_raw = _require(entry, "demonstrations", list, loc)
        if not demos_raw:
            raise ValidationError(f"{loc}demonstrations: must be non-empty")
        arrays = []
        for j, demo in enumerate(demos_raw):
            arr = np.asarray(demo, dtype=np.float64)
            if arr.ndim != 2:
                raise ValidationError(
                    f"{loc}demonstrations[{j}]: expected a T x d point array, "
                    f"got shape {arr.shape}")
            if arrays and arr.shape != arrays[0].shape:
                raise ValidationError(
                    f"{loc}demonstrations[{j}]: shape {arr.shape} does not "
                    f"match demonstrations[0] {arrays[0].shape}")
            arrays.append(arr)
        try:
            tasks.append(DatasetTask(task_name, np.stack(arrays)))
        except ValidationError as exc:
            raise ValidationError(f"{loc}demonstrations: {exc}") from exc
    freq_val = None if freq is None else float(freq)
    return DatasetFile(name=name, kind=kind, dim=dim, tasks=tasks,
                       recording_frequency=freq_val)


def load_dataset(path) -> DatasetFile:
    """Parse and validate a dataset JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_dict(data)


def save_dataset(ds: DatasetFile, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ds.to_dict(), indent=2, sort_keys=True) + "\n")


# -- synthetic generation ----------------------------------------------------------


def _shape_line(t: np.ndarray, p: dict) -> np.ndarray:
    start = np.asarray(p.get("start", (0.0, 0.0)), dtype=np.float64)
    end = np.asarray(p.get("end", (1.0, 1.0)), dtype=np.float64)
    return start + (end - start) * t[:, None]


def _shape_arc(t: np.ndarray, p: dict) -> np.ndarray:
    center = np.asarray(p.get("center", (0.0, 0.0)), dtype=np.float64)
    radius = float(p.get("radius", 1.0))
    aspect = float(p.get("aspect", 1.0))
    sweep = np.radians(float(p.get("sweep_degrees", 180.0)))
    phase = np.radians(float(p.get("phase_degrees", 0.0)))
    direction = float(p.get("direction", 1.0))
    if direction not in (-1.0, 1.0):
        raise ValidationError(f"params.direction: must be 1 or -1, got {direction}")
    a = phase + direction * sweep * t
    return center + radius * np.column_stack([np.cos(a), aspect * np.sin(a)])


def _shape_sine(t: np.ndarray, p: dict) -> np.ndarray:
    length = float(p.get("length", 1.0))
    amplitude = float(p.get("amplitude", 0.5))
    cycles = float(p.get("cycles", 1.0))
    return np.column_stack([length * t,
                            amplitude * np.sin(2.0 * np.pi * cycles * t)])


def _shape_s_curve(t: np.ndarray, p: dict) -> np.ndarray:
    length = float(p.get("length", 1.0))
    height = float(p.get("height", 1.0))
    return np.column_stack([length * t, height * t * t * (3.0 - 2.0 * t)])


def _shape_figure_eight(t: np.ndarray, p: dict) -> np.ndarray:
    center = np.asarray(p.get("center", (0.0, 0.0)), dtype=np.float64)
    radius = float(p.get("radius", 1.0))
    a = 2.0 * np.pi * t
    return center + radius * np.column_stack([np.cos(a), np.sin(a) * np.cos(a)])


_SHAPE_FNS = {
    "line": _shape_line,
    "arc": _shape_arc,
    "sine": _shape_sine,
    "s-curve": _shape_s_curve,
    "figure-eight": _shape_figure_eight,
}


def gen_synthetic(spec: dict) -> DatasetFile:
    """Generate a deterministic position dataset from a shape spec.

    Spec fields: name, seed, optional recording_frequency, tasks - each
    with task_name, shape (one of SHAPES), demos, T, sigma, and optional
    shape params.
    """
    if not isinstance(spec, dict):
        raise ValidationError("spec: expected a JSON object")
    name = _require(spec, "name", str, "spec.")
    seed = _require(spec, "seed", int, "spec.")
    freq = spec.get("recording_frequency")
    if freq is not None and not isinstance(freq, (int, float)):
        raise ValidationError("spec.recording_frequency: expected a number or null")
    tasks_raw = _require(spec, "tasks", list, "spec.")
    if not tasks_raw:
        raise ValidationError("spec.tasks: must be non-empty")
    tasks = []
    for k, entry in enumerate(tasks_raw):
        loc = f"spec.tasks[{k}]."
        if not isinstance(entry, dict):
            raise ValidationError(f"spec.tasks[{k}]: expected a JSON object")
        shape = _require(entry, "shape", str, loc)
        if shape not in SHAPES:
            raise ValidationError(
                f"{loc}shape: unknown shape {shape!r}; expected one of {SHAPES}")
        task_name = entry.get("task_name", f"{shape}-{k}")
        demos = int(entry.get("demos", 3))
        t_count = int(entry.get("T", 100))
        sigma = float(entry.get("sigma", 0.0))
        if demos < 1:
            raise ValidationError(f"{loc}demos: must be >= 1, got {demos}")
        if t_count < 2:
            raise ValidationError(f"{loc}T: must be >= 2, got {t_count}")
        if sigma < 0:
            raise ValidationError(f"{loc}sigma: must be >= 0, got {sigma}")
        params = entry.get("params", {})
        if not isinstance(params, dict):
            raise ValidationError(f"{loc}params: expected a JSON object")
        t = np.linspace(0.0, 1.0, t_count)
        base = _SHAPE_FNS[shape](t, params)
        rng = np.random.default_rng(derived_seed(seed, 4, k))
        stack = np.stack([base + sigma * rng.normal(size=base.shape)
                          for _ in range(demos)])
        tasks.append(DatasetTask(task_name, stack))
    freq_val = None if freq is None else float(freq)
    return DatasetFile(name=name, kind="position", dim=2, tasks=tasks,
                       recording_frequency=freq_val)


def convert_external(source_path, kind: str, out_path) -> None:
    """Interface stub for importing externally recorded demonstrations.

    A converter reads whatever format the recording pipeline produced at
    ``source_path`` and writes the JSON schema consumed by ``load_dataset``
    to ``out_path``: a dict with ``name``, ``kind`` ("position" or
    "quaternion"), ``dim``, optional ``recording_frequency``, and ``tasks``,
    where each task is ``{"task_name": str, "demonstrations": [[[...]]]}``
    with demonstrations as (T, dim) point lists sharing T within a task.
    Quaternion datasets store scalar-first unit rows.

    Concrete converters are recording-setup specific and out of scope here;
    implement one by writing that schema and calling ``load_dataset`` on the
    result to validate it.
    """
    raise NotImplementedError(
        "convert_external is an interface stub; write the documented JSON "
        "schema for your recording format and validate it with load_dataset")


def subsample_dataset(ds: DatasetFile, t_prime: int) -> DatasetFile:
    """Evenly subsample every task to at most t_prime points per demo.

    When the dataset carries a recording frequency, the frequency is
    rescaled so each task's total duration is preserved.
    """
    if t_prime < 2:
        raise ValidationError(f"t_prime must be >= 2, got {t_prime}")
    tasks = []
    scales = set()
    for task in ds.tasks:
        if task.T <= t_prime:
            tasks.append(DatasetTask(task.task_name, task.demonstrations.copy()))
            scales.add(1.0)
            continue
        idx = np.unique(np.round(np.linspace(0, task.T - 1, t_prime)).astype(int))
        tasks.append(DatasetTask(task.task_name, task.demonstrations[:, idx, :]))
        scales.add((idx.size - 1) / (task.T - 1))
    freq = ds.recording_frequency
    if freq is not None and len(scales) == 1:
        freq = freq * scales.pop()
    return DatasetFile(name=ds.name, kind=ds.kind, dim=ds.dim, tasks=tasks,
                       recording_frequency=freq)
