"""Sequential continual-learning experiments and their on-disk result bundles.

A run takes one method, one dataset and a list of seeds, learns the tasks in
sequence and, after every task, re-evaluates all tasks seen so far on every
demonstration.  Each (config, seed) pair becomes a bundle directory holding
the evaluation matrix, the resource ledger, the metric record, per-trajectory
predictions and the serialized learner state, so that evaluation, robustness
probes and cross-method comparisons can run later without retraining.

All JSON and CSV writers are deterministic: keys are sorted and floats are
rendered with ``repr``, so identical config + seed reproduces identical bytes.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cl_metrics import (
    EvaluationMatrix,
    MetricsRecord,
    RunLedger,
    accuracy_matrix,
    compute_metrics,
    dtw_threshold,
)
from .datasets import DatasetFile, dataset_from_dict, subsample_dataset
from .errors import ValidationError
from .node import DemonstrationSet, Trajectory
from .so3 import (
    QuaternionTrajectory,
    from_tangent_trajectory,
    quat_traj_error,
    to_tangent_trajectory,
)
from .strategies import VARIANTS, Strategy, StrategyConfig, derived_seed
from .traj_metrics import discrete_frechet, dtw, swept_area

__all__ = [
    "EVAL_COLUMNS",
    "ExperimentConfig",
    "compare_metrics",
    "evaluate_bundle",
    "load_bundle",
    "robustness_start",
    "run_experiment",
    "run_task_order_study",
    "validate_task_order",
]

EVAL_COLUMNS = (
    "after_task",
    "eval_task",
    "demo_idx",
    "dtw",
    "frechet",
    "swept_area",
    "quat_error",
)

TE_TIMINGS = ("work_units", "wall_clock")


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a method, its hyperparameters, seeds and task order."""

    method: str
    hidden: tuple = (100, 100, 100)
    activation: str = "elu"
    time_input: bool = True
    train_iterations: int = 1000
    learning_rate: float = 1e-4
    integrator: str = "euler"
    embedding_dim: int = 256
    si_c: float = 0.3
    si_xi: float = 0.3
    mas_lambda: float = 0.1
    hn_hidden: tuple = (200, 200, 200)
    hn_activation: str = "relu"
    beta: float = 0.005
    chunk_dim: int = 8192
    chunk_embedding_dim: int = 256
    seeds: tuple = (0,)
    task_order: tuple | None = None
    subsample_T: int | None = 100
    dtw_multiplier: float = 3.0
    orientation_threshold_degrees: float = 10.0
    te_timing: str = "work_units"
    output_dir: str | None = None

    def __post_init__(self):
        if self.method not in VARIANTS:
            raise ValidationError(
                f"method must be one of {VARIANTS}, got {self.method!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "hn_hidden", tuple(int(h) for h in self.hn_hidden))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValidationError("seeds must contain at least one entry")
        if len(set(seeds)) != len(seeds):
            raise ValidationError(f"seeds must be unique, got {seeds}")
        object.__setattr__(self, "seeds", seeds)
        if self.task_order is not None:
            object.__setattr__(
                self, "task_order", tuple(int(k) for k in self.task_order))
        if self.subsample_T is not None and self.subsample_T < 2:
            raise ValidationError(
                f"subsample_T must be >= 2 or None, got {self.subsample_T}")
        if not np.isfinite(self.dtw_multiplier) or self.dtw_multiplier <= 0:
            raise ValidationError(
                f"dtw_multiplier must be positive, got {self.dtw_multiplier}")
        if self.orientation_threshold_degrees <= 0:
            raise ValidationError(
                "orientation_threshold_degrees must be positive, got "
                f"{self.orientation_threshold_degrees}")
        if self.te_timing not in TE_TIMINGS:
            raise ValidationError(
                f"te_timing must be one of {TE_TIMINGS}, got {self.te_timing!r}")

    def strategy_config(self, data_dim: int, seed: int) -> StrategyConfig:
        return StrategyConfig(
            variant=self.method,
            data_dim=data_dim,
            hidden=self.hidden,
            activation=self.activation,
            time_input=self.time_input,
            train_iterations=self.train_iterations,
            learning_rate=self.learning_rate,
            integrator=self.integrator,
            embedding_dim=self.embedding_dim,
            seed=seed,
            si_c=self.si_c,
            si_xi=self.si_xi,
            mas_lambda=self.mas_lambda,
            hn_hidden=self.hn_hidden,
            hn_activation=self.hn_activation,
            beta=self.beta,
            chunk_dim=self.chunk_dim,
            chunk_embedding_dim=self.chunk_embedding_dim,
        )

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_input": self.time_input,
            "train_iterations": self.train_iterations,
            "learning_rate": self.learning_rate,
            "integrator": self.integrator,
            "embedding_dim": self.embedding_dim,
            "si_c": self.si_c,
            "si_xi": self.si_xi,
            "mas_lambda": self.mas_lambda,
            "hn_hidden": list(self.hn_hidden),
            "hn_activation": self.hn_activation,
            "beta": self.beta,
            "chunk_dim": self.chunk_dim,
            "chunk_embedding_dim": self.chunk_embedding_dim,
            "seeds": list(self.seeds),
            "task_order": None if self.task_order is None else list(self.task_order),
            "subsample_T": self.subsample_T,
            "dtw_multiplier": self.dtw_multiplier,
            "orientation_threshold_degrees": self.orientation_threshold_degrees,
            "te_timing": self.te_timing,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError(f"experiment config must be a dict, got {type(d).__name__}")
        if "method" not in d:
            raise ValidationError("experiment config is missing required key 'method'")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown experiment config keys: {unknown}")
        kwargs = dict(d)
        for key in ("hidden", "hn_hidden", "seeds"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("task_order") is not None:
            kwargs["task_order"] = tuple(kwargs["task_order"])
        return cls(**kwargs)


def validate_task_order(order, num_tasks: int) -> tuple:
    """Check that ``order`` is a permutation of range(num_tasks)."""
    order = tuple(int(k) for k in order)
    if sorted(order) != list(range(num_tasks)):
        raise ValidationError(
            f"task_order must be a permutation of 0..{num_tasks - 1}, got {order}")
    return order


# -- deterministic writers ----------------------------------------------------------


def _fmt_float(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _median(values) -> float:
    return float(statistics.median(float(v) for v in values))


# -- task preparation ----------------------------------------------------------------


@dataclass
class _TaskData:
    """Everything needed to train on and evaluate one task."""

    name: str
    train_set: DemonstrationSet
    eval_demos: list            # ground-truth point arrays in the reported space
    quat_demos: list | None     # QuaternionTrajectory ground truth, if any
    goals: list | None          # per-demo goal quaternions, if any

    @property
    def num_demos(self) -> int:
        return len(self.train_set.demos)


def _prepare_tasks(dataset: DatasetFile, config: ExperimentConfig):
    """Subsample, reorder and (for quaternions) map tasks to tangent space."""
    ds = dataset
    if config.subsample_T is not None:
        ds = subsample_dataset(ds, config.subsample_T)
    if config.task_order is None:
        order = tuple(range(ds.num_tasks))
    else:
        order = validate_task_order(config.task_order, ds.num_tasks)
    tasks = []
    for k in order:
        task = ds.tasks[k]
        ts = ds.timestamps(k)
        if ds.kind == "quaternion":
            quat_demos = [QuaternionTrajectory(task.demonstrations[j], ts)
                          for j in range(task.D)]
            tangent = [to_tangent_trajectory(qt) for qt in quat_demos]
            train_set = DemonstrationSet(
                tangent, name=task.task_name,
                recording_frequency=ds.recording_frequency)
            tasks.append(_TaskData(
                name=task.task_name,
                train_set=train_set,
                eval_demos=[qt.quats for qt in quat_demos],
                quat_demos=quat_demos,
                goals=[qt.goal for qt in quat_demos],
            ))
        else:
            train_set = ds.demonstration_set(k)
            tasks.append(_TaskData(
                name=task.task_name,
                train_set=train_set,
                eval_demos=[demo.points for demo in train_set.demos],
                quat_demos=None,
                goals=None,
            ))
    return tasks, order, ds


def _accuracy_threshold(config: ExperimentConfig, kind: str, tasks) -> float:
    """Per-demo error threshold used to binarize the evaluation matrix.

    Position runs scale the largest inter-demonstration DTW distance;
    quaternion runs bound the mean per-axis rotation error in radians.
    """
    if kind == "quaternion":
        return math.radians(config.orientation_threshold_degrees)
    return dtw_threshold([t.eval_demos for t in tasks], config.dtw_multiplier)


def _dataset_point_count(tasks) -> int:
    return sum(t.num_demos * t.train_set.T for t in tasks)


# -- evaluation ----------------------------------------------------------------


def _predict_task(strategy: Strategy, task: _TaskData, task_idx: int, demo_idx: int):
    """Predicted trajectory for one demonstration, in the reported space."""
    demo = task.train_set.demos[demo_idx]
    pred = strategy.predict(task_idx, demo.points[0], demo.timestamps)
    if task.quat_demos is not None:
        return from_tangent_trajectory(pred, task.goals[demo_idx])
    return pred


def _eval_row(task: _TaskData, demo_idx: int, pred) -> dict:
    """All error measures for one (ground truth, prediction) pair."""
    gt = task.eval_demos[demo_idx]
    if task.quat_demos is not None:
        pred_points = pred.quats
        quat_err = quat_traj_error(task.quat_demos[demo_idx], pred)
        swept = None
    else:
        pred_points = pred.points
        quat_err = None
        swept = swept_area(gt, pred_points)
    return {
        "dtw": dtw(gt, pred_points),
        "frechet": discrete_frechet(gt, pred_points),
        "swept_area": swept,
        "quat_error": quat_err,
        "pred": pred,
    }


def _matrix_error(row: dict) -> float:
    """The error the accuracy matrix thresholds: rotation if present, else DTW."""
    if row["quat_error"] is not None:
        return row["quat_error"]
    return row["dtw"]


def _evaluate_seen(strategy: Strategy, tasks, upto: int):
    """Evaluate tasks 0..upto on every demonstration; returns flat rows."""
    rows = []
    for j in range(upto + 1):
        for d in range(tasks[j].num_demos):
            pred = _predict_task(strategy, tasks[j], j, d)
            row = _eval_row(tasks[j], d, pred)
            row.update(after_task=upto, eval_task=j, demo_idx=d)
            rows.append(row)
    return rows


def _rows_to_matrix(rows, num_tasks: int) -> EvaluationMatrix:
    errors = [[[] for _ in range(i + 1)] for i in range(num_tasks)]
    for row in rows:
        errors[row["after_task"]][row["eval_task"]].append(_matrix_error(row))
    return EvaluationMatrix.from_lists(errors)


def _write_eval_csv(path: Path, rows) -> None:
    out = []
    for row in rows:
        out.append((
            str(row["after_task"]),
            str(row["eval_task"]),
            str(row["demo_idx"]),
            _fmt_float(row["dtw"]),
            _fmt_float(row["frechet"]),
            _fmt_float(row["swept_area"]),
            _fmt_float(row["quat_error"]),
        ))
    _write_csv(path, EVAL_COLUMNS, out)


def _write_predictions(pred_dir: Path, rows, kind: str) -> None:
    pred_dir.mkdir(parents=True, exist_ok=True)
    for row in rows:
        pred = row["pred"]
        if kind == "quaternion":
            header = ("t", "qw", "qx", "qy", "qz")
            points = pred.quats
            ts = pred.timestamps
        else:
            points = pred.points
            ts = pred.timestamps
            header = ("t",) + tuple(f"y{k}" for k in range(points.shape[1]))
        name = (f"after{row['after_task']:02d}_task{row['eval_task']:02d}"
                f"_demo{row['demo_idx']:02d}.csv")
        lines = [[_fmt_float(t)] + [_fmt_float(v) for v in p]
                 for t, p in zip(ts, points)]
        _write_csv(pred_dir / name, header, [tuple(line) for line in lines])


def _build_ledger(config: ExperimentConfig, ledger_dict: dict,
                  largest_model_size=None) -> RunLedger:
    times = (ledger_dict["train_work_units"]
             if config.te_timing == "work_units"
             else ledger_dict["train_wall_clock_seconds"])
    largest = (ledger_dict["largest_model_size"]
               if largest_model_size is None else largest_model_size)
    return RunLedger.from_lists(
        train_times=times,
        param_sizes=ledger_dict["param_sizes"],
        stored_sample_sizes=ledger_dict["stored_sample_sizes"],
        dataset_size=ledger_dict["dataset_size"],
        largest_model_size=largest,
    )


# -- the run ----------------------------------------------------------------


def _run_single(config: ExperimentConfig, tasks, kind: str, threshold: float,
                seed: int, seed_dir: Path) -> dict:
    """Train one (config, seed) pair and write its bundle directory."""
    data_dim = tasks[0].train_set.dim
    strategy = Strategy(config.strategy_config(data_dim, seed))
    stats = []
    param_sizes = []
    stored_sizes = []
    all_rows = []
    for i, task in enumerate(tasks):
        stats.append(strategy.learn_task(task.train_set))
        param_sizes.append(strategy.total_param_count())
        stored_sizes.append(strategy.stored_sample_count())
        all_rows.extend(_evaluate_seen(strategy, tasks, i))

    ledger_dict = {
        "dataset_size": _dataset_point_count(tasks),
        "largest_model_size": param_sizes[-1],
        "param_sizes": param_sizes,
        "per_task": [s.to_dict() for s in stats],
        "stored_sample_sizes": stored_sizes,
        "te_timing": config.te_timing,
        "threshold": threshold,
        "train_wall_clock_seconds": [s.wall_clock_seconds for s in stats],
        "train_work_units": [s.work_units for s in stats],
    }
    ledger = _build_ledger(config, ledger_dict)
    ev = _rows_to_matrix(all_rows, len(tasks))
    a_matrix = accuracy_matrix(ev, threshold)
    record = compute_metrics(a_matrix, ledger)

    _write_json(seed_dir / "config.json",
                {"experiment": config.to_dict(), "seed": seed,
                 "data_dim": data_dim, "kind": kind,
                 "task_names": [t.name for t in tasks]})
    _write_eval_csv(seed_dir / "eval_matrix.csv", all_rows)
    _write_json(seed_dir / "ledger.json", ledger_dict)
    _write_json(seed_dir / "metrics.json",
                {"accuracy_matrix": a_matrix, "method": config.method,
                 "metrics": record.to_dict(), "seed": seed,
                 "threshold": threshold})
    _write_predictions(seed_dir / "predictions", all_rows, kind)
    strategy.save(seed_dir / "state")

    final_rows = [r for r in all_rows if r["after_task"] == len(tasks) - 1]
    return {
        "seed": seed,
        "metrics": record.to_dict(),
        "accuracy_matrix": a_matrix,
        "mean_final_dtw": float(np.mean([r["dtw"] for r in final_rows])),
        "mean_final_error": float(np.mean([_matrix_error(r) for r in final_rows])),
    }


def _write_top_metrics(out_dir: Path, config: ExperimentConfig, per_seed) -> dict:
    names = sorted(per_seed[0]["metrics"])
    median = {k: _median(r["metrics"][k] for r in per_seed) for k in names}
    top = {
        "median": median,
        "method": config.method,
        "per_seed": {str(r["seed"]): r["metrics"] for r in per_seed},
        "seeds": list(config.seeds),
        "te_timing": config.te_timing,
    }
    _write_json(out_dir / "metrics.json", top)
    return top


def run_experiment(config: ExperimentConfig, dataset: DatasetFile,
                   out_dir=None) -> dict:
    """Run the full task sequence for every seed and write the bundle.

    Layout: ``config.json`` and ``dataset.json`` at the root, one
    ``seed_<s>/`` directory per seed (evaluation matrix, ledger, metrics,
    predictions, learner state), and an aggregate ``metrics.json`` with
    per-seed records plus their medians.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is None:
        if config.output_dir is None:
            raise ValidationError("run_experiment needs an output directory")
        out = Path(config.output_dir)
    tasks, order, prepared = _prepare_tasks(dataset, config)
    threshold = _accuracy_threshold(config, prepared.kind, tasks)

    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json",
                {"dataset_name": dataset.name, "experiment": config.to_dict(),
                 "resolved_task_order": list(order),
                 "task_names": [t.name for t in tasks],
                 "threshold": threshold})
    _write_json(out / "dataset.json", dataset.to_dict())

    per_seed = []
    for seed in config.seeds:
        per_seed.append(_run_single(config, tasks, prepared.kind, threshold,
                                    seed, out / f"seed_{seed}"))
    top = _write_top_metrics(out, config, per_seed)
    return {
        "out_dir": str(out),
        "method": config.method,
        "threshold": threshold,
        "per_seed": per_seed,
        "median": top["median"],
    }


# -- bundle access ----------------------------------------------------------------


def load_bundle(bundle_dir):
    """Read a bundle's experiment config and dataset back from disk."""
    bundle = Path(bundle_dir)
    cfg_path = bundle / "config.json"
    ds_path = bundle / "dataset.json"
    if not cfg_path.is_file() or not ds_path.is_file():
        raise ValidationError(
            f"{bundle} is not a result bundle (missing config.json or dataset.json)")
    cfg = _read_json(cfg_path)
    if not isinstance(cfg, dict) or "experiment" not in cfg:
        raise ValidationError(
            f"{bundle} is not a result bundle (config.json has no "
            "'experiment' echo)")
    config = ExperimentConfig.from_dict(cfg["experiment"])
    dataset = dataset_from_dict(_read_json(ds_path), where=str(ds_path))
    return config, dataset


def _read_eval_csv(path: Path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != EVAL_COLUMNS:
        raise ValidationError(f"{path} is not an evaluation matrix CSV")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append({
            "after_task": int(parts[0]),
            "eval_task": int(parts[1]),
            "demo_idx": int(parts[2]),
            "dtw": float(parts[3]),
            "frechet": float(parts[4]),
            "swept_area": None if parts[5] == "" else float(parts[5]),
            "quat_error": None if parts[6] == "" else float(parts[6]),
        })
    return rows


def evaluate_bundle(bundle_dir) -> dict:
    """Re-evaluate a bundle's final learner states and refresh its metrics.

    The saved state is the post-training one, so only the final row block of
    the evaluation matrix (after the last task) can be recomputed; earlier
    rows are intermediate-state measurements and are carried over from the
    stored matrix.  Training is not repeated.
    """
    bundle = Path(bundle_dir)
    config, dataset = load_bundle(bundle)
    tasks, _, prepared = _prepare_tasks(dataset, config)
    threshold = _accuracy_threshold(config, prepared.kind, tasks)
    last = len(tasks) - 1
    per_seed = []
    for seed in config.seeds:
        seed_dir = bundle / f"seed_{seed}"
        strategy = Strategy.load(seed_dir / "state")
        earlier = [r for r in _read_eval_csv(seed_dir / "eval_matrix.csv")
                   if r["after_task"] < last]
        expected = sum(tasks[j].num_demos for i in range(last)
                       for j in range(i + 1))
        if len(earlier) != expected:
            raise ValidationError(
                f"{seed_dir / 'eval_matrix.csv'} has {len(earlier)} rows "
                f"before the final task, expected {expected}")
        final_rows = _evaluate_seen(strategy, tasks, last)
        all_rows = earlier + final_rows
        ledger = _build_ledger(config, _read_json(seed_dir / "ledger.json"))
        ev = _rows_to_matrix(all_rows, len(tasks))
        a_matrix = accuracy_matrix(ev, threshold)
        record = compute_metrics(a_matrix, ledger)
        _write_eval_csv(seed_dir / "eval_matrix.csv", all_rows)
        _write_json(seed_dir / "metrics.json",
                    {"accuracy_matrix": a_matrix, "method": config.method,
                     "metrics": record.to_dict(), "seed": seed,
                     "threshold": threshold})
        _write_predictions(seed_dir / "predictions", final_rows, prepared.kind)
        per_seed.append({
            "seed": seed,
            "metrics": record.to_dict(),
            "accuracy_matrix": a_matrix,
            "mean_final_dtw": float(np.mean([r["dtw"] for r in final_rows])),
            "mean_final_error": float(
                np.mean([_matrix_error(r) for r in final_rows])),
        })
    top = _write_top_metrics(bundle, config, per_seed)
    return {"out_dir": str(bundle), "method": config.method,
            "threshold": threshold, "per_seed": per_seed,
            "median": top["median"]}


# -- robustness ----------------------------------------------------------------


def robustness_start(bundle_dir, task_id: int, n_samples: int, radius: float,
                     seed=None) -> dict:
    """Probe sensitivity to the initial state for one task.

    Draws ``n_samples`` starting points uniformly from the ball of the given
    radius around the task's first demonstration start (in the learner's
    state space: positions, or tangent coordinates for quaternion tasks),
    rolls the learner out from each, and records the distance from the
    nominal start against the distance of the predicted endpoint to the
    demonstration goal.  Radius 0 reproduces the nominal goal error.  Writes
    a scatter CSV under ``<bundle>/robustness/``.
    """
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    if radius < 0 or not np.isfinite(radius):
        raise ValidationError(f"radius must be >= 0, got {radius}")
    bundle = Path(bundle_dir)
    config, dataset = load_bundle(bundle)
    tasks, _, _ = _prepare_tasks(dataset, config)
    if not 0 <= task_id < len(tasks):
        raise ValidationError(
            f"task_id must be in 0..{len(tasks) - 1}, got {task_id}")
    if seed is None:
        seed = config.seeds[0]
    if seed not in config.seeds:
        raise ValidationError(f"seed {seed} is not part of this bundle")
    strategy = Strategy.load(bundle / f"seed_{seed}" / "state")

    demo = tasks[task_id].train_set.demos[0]
    y0 = demo.points[0]
    goal = demo.points[-1]
    d = y0.shape[0]
    rng = np.random.default_rng(derived_seed(int(seed), 5, int(task_id)))
    rows = []
    for k in range(n_samples):
        direction = rng.normal(size=d)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            direction = np.zeros(d)
        else:
            direction = direction / norm
        offset = direction * radius * rng.uniform() ** (1.0 / d)
        pred = strategy.predict(task_id, y0 + offset, demo.timestamps)
        end_delta = float(np.linalg.norm(pred.points[-1] - goal))
        rows.append((k, float(np.linalg.norm(offset)), end_delta))

    nominal = strategy.predict(task_id, y0, demo.timestamps)
    nominal_end = float(np.linalg.norm(nominal.points[-1] - goal))
    csv_path = (bundle / "robustness" /
                f"task{task_id:02d}_seed{seed}_n{n_samples}_r{radius:g}.csv")
    _write_csv(csv_path, ("sample_idx", "start_delta", "end_delta"),
               [(str(k), _fmt_float(s), _fmt_float(e)) for k, s, e in rows])
    return {
        "csv_path": str(csv_path),
        "task_id": task_id,
        "seed": int(seed),
        "radius": float(radius),
        "samples": [{"sample_idx": k, "start_delta": s, "end_delta": e}
                    for k, s, e in rows],
        "median_end_delta": _median(e for _, _, e in rows),
        "nominal_end_delta": nominal_end,
    }


# -- task-order study ----------------------------------------------------------------


def run_task_order_study(config: ExperimentConfig, dataset: DatasetFile,
                         orders, out_dir) -> list:
    """Run the experiment once per task order and tabulate the results.

    Writes one bundle per order under ``out_dir/order<k>/`` plus a
    ``task_order_report.csv`` with one row per (order, method, seed).
    """
    out = Path(out_dir)
    orders = [validate_task_order(o, dataset.num_tasks) for o in orders]
    if not orders:
        raise ValidationError("task-order study needs at least one order")
    report = []
    for idx, order in enumerate(orders):
        sub = replace(config, task_order=order, output_dir=None)
        result = run_experiment(sub, dataset, out / f"order{idx:02d}")
        for rec in result["per_seed"]:
            row = {
                "order_index": idx,
                "order": "-".join(str(k) for k in order),
                "method": config.method,
                "seed": rec["seed"],
                "mean_final_dtw": rec["mean_final_dtw"],
            }
            row.update(rec["metrics"])
            report.append(row)
    header = ("order_index", "order", "method", "seed", "acc", "rem", "ms",
              "te", "fs", "sss", "cl_score", "mean_final_dtw")
    rows = [(str(r["order_index"]), r["order"], r["method"], str(r["seed"]),
             _fmt_float(r["acc"]), _fmt_float(r["rem"]), _fmt_float(r["ms"]),
             _fmt_float(r["te"]), _fmt_float(r["fs"]), _fmt_float(r["sss"]),
             _fmt_float(r["cl_score"]), _fmt_float(r["mean_final_dtw"]))
            for r in report]
    _write_csv(out / "task_order_report.csv", header, rows)
    return report


# -- cross-bundle comparison ----------------------------------------------------------------


def compare_metrics(bundle_dirs) -> dict:
    """Recompute metrics for several bundles under a shared size normalizer.

    The final-size metric divides by the largest final model among the
    bundles being compared, so single-bundle records are replaced here by
    records computed against the shared maximum.
    """
    dirs = [Path(b) for b in bundle_dirs]
    if not dirs:
        raise ValidationError("compare_metrics needs at least one bundle")
    loaded = []
    for bundle in dirs:
        config, _ = load_bundle(bundle)
        seeds = []
        for seed in config.seeds:
            seed_dir = bundle / f"seed_{seed}"
            ledger_dict = _read_json(seed_dir / "ledger.json")
            metrics = _read_json(seed_dir / "metrics.json")
            seeds.append((seed, ledger_dict, metrics["accuracy_matrix"]))
        loaded.append((bundle, config, seeds))
    largest = max(ld["param_sizes"][-1]
                  for _, _, seeds in loaded for _, ld, _ in seeds)
    out = {"largest_model_size": float(largest), "bundles": []}
    for bundle, config, seeds in loaded:
        per_seed = {}
        for seed, ledger_dict, a_matrix in seeds:
            ledger = _build_ledger(config, ledger_dict, largest_model_size=largest)
            per_seed[str(seed)] = compute_metrics(a_matrix, ledger).to_dict()
        names = sorted(next(iter(per_seed.values())))
        median = {k: _median(rec[k] for rec in per_seed.values()) for k in names}
        out["bundles"].append({
            "path": str(bundle),
            "method": config.method,
            "per_seed": per_seed,
            "median": median,
        })
    return out
