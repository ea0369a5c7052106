"""Continual-learning evaluation metrics.

Given a lower-triangular matrix of per-demo trajectory errors (task j
evaluated after training on task i, for j <= i) and a ledger of
training times, model sizes and stored-sample sizes, this module
computes six base metrics, each in [0, 1] with 1 best:

- ACC: mean accuracy over current and past tasks,
- REM: remembering, one minus the magnitude of negative backward
  transfer,
- MS:  model-size efficiency, growth relative to the size after the
  first task,
- TE:  time efficiency, growth of per-task training time relative to
  the first task,
- FS:  final model size, normalized by the largest compared model,
- SSS: sample-storage-size efficiency, growth of cached training data
  relative to the full dataset,

plus two aggregates: the overall score (mean of the six, with the raw
sum also reported) and a stability score (one minus the sample standard
deviation of the six).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .traj_metrics import dtw

__all__ = [
    "ORIENTATION_THRESHOLD",
    "EvaluationMatrix",
    "MetricsRecord",
    "RunLedger",
    "accuracy_matrix",
    "compute_metrics",
    "dtw_threshold",
    "overall_scores",
]

# Mean-absolute orientation error bound used to mark quaternion
# trajectory predictions as accurate: 10 degrees, in radians.
ORIENTATION_THRESHOLD = float(np.radians(10.0))


@dataclass(frozen=True)
class EvaluationMatrix:
    """Per-demo trajectory errors in a lower-triangular layout.

    ``errors[i][j]`` holds one error value per demonstration of task j,
    measured after training on task i; it exists exactly for j <= i.
    """

    errors: tuple

    def __post_init__(self):
        if len(self.errors) < 1:
            raise ValidationError("EvaluationMatrix needs at least one task")
        for i, row in enumerate(self.errors):
            if len(row) != i + 1:
                raise ValidationError(
                    f"row {i} must have {i + 1} cells, got {len(row)}"
                )
            for j, cell in enumerate(row):
                if len(cell) == 0:
                    raise ValidationError(f"cell ({i}, {j}) is empty")
                for value in cell:
                    if not np.isfinite(value) or value < 0.0:
                        raise ValidationError(
                            f"cell ({i}, {j}) has invalid error {value}"
                        )

    @classmethod
    def from_lists(cls, errors) -> "EvaluationMatrix":
        return cls(
            errors=tuple(
                tuple(tuple(float(v) for v in cell) for cell in row)
                for row in errors
            )
        )

    @property
    def num_tasks(self) -> int:
        return len(self.errors)


@dataclass(frozen=True)
class RunLedger:
    """Resource bookkeeping for one continual-learning run.

    ``train_times[i]`` is the time spent learning task i (any positive
    unit), ``param_sizes[i]`` the trainable scalar count after task i,
    ``stored_sample_sizes[i]`` the number of cached training points
    after task i, ``dataset_size`` the total point count of the full
    dataset, and ``largest_model_size`` the final size of the largest
    model among the methods being compared.
    """

    train_times: tuple
    param_sizes: tuple
    stored_sample_sizes: tuple
    dataset_size: float
    largest_model_size: float

    def __post_init__(self):
        m = len(self.train_times)
        if m < 1:
            raise ValidationError("RunLedger needs at least one task")
        if len(self.param_sizes) != m or len(self.stored_sample_sizes) != m:
            raise ValidationError(
                "train_times, param_sizes and stored_sample_sizes must have "
                f"equal lengths, got {m}, {len(self.param_sizes)}, "
                f"{len(self.stored_sample_sizes)}"
            )
        for name, values in (
            ("train_times", self.train_times),
            ("param_sizes", self.param_sizes),
        ):
            for v in values:
                if not np.isfinite(v) or v <= 0.0:
                    raise ValidationError(f"{name} must be positive, got {v}")
        for v in self.stored_sample_sizes:
            if not np.isfinite(v) or v < 0.0:
                raise ValidationError(
                    f"stored_sample_sizes must be >= 0, got {v}"
                )
        if not np.isfinite(self.dataset_size) or self.dataset_size <= 0.0:
            raise ValidationError(
                f"dataset_size must be positive, got {self.dataset_size}"
            )
        if (
            not np.isfinite(self.largest_model_size)
            or self.largest_model_size <= 0.0
        ):
            raise ValidationError(
                f"largest_model_size must be positive, got "
                f"{self.largest_model_size}"
            )
        if self.param_sizes[-1] > self.largest_model_size:
            raise ValidationError(
                "largest_model_size is smaller than the final model size"
            )

    @classmethod
    def from_lists(
        cls,
        train_times,
        param_sizes,
        stored_sample_sizes,
        dataset_size,
        largest_model_size,
    ) -> "RunLedger":
        return cls(
            train_times=tuple(float(v) for v in train_times),
            param_sizes=tuple(float(v) for v in param_sizes),
            stored_sample_sizes=tuple(float(v) for v in stored_sample_sizes),
            dataset_size=float(dataset_size),
            largest_model_size=float(largest_model_size),
        )

    @property
    def num_tasks(self) -> int:
        return len(self.train_times)


@dataclass(frozen=True)
class MetricsRecord:
    """The six base metrics plus overall score and stability."""

    acc: float
    rem: float
    ms: float
    te: float
    fs: float
    sss: float
    cl_score: float
    cl_score_sum: float
    cl_stability: float

    def __post_init__(self):
        for name in ("acc", "rem", "ms", "te", "fs", "sss"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {value}")

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "rem": self.rem,
            "ms": self.ms,
            "te": self.te,
            "fs": self.fs,
            "sss": self.sss,
            "cl_score": self.cl_score,
            "cl_score_sum": self.cl_score_sum,
            "cl_stability": self.cl_stability,
        }


def dtw_threshold(demos_per_task, multiplier) -> float:
    """Accuracy threshold from inter-demonstration variability.

    Takes the largest pairwise DTW distance between the demonstrations
    of any single task and multiplies it by ``multiplier``.  Every task
    must have at least two demonstrations.
    """
    if not np.isfinite(multiplier) or multiplier <= 0.0:
        raise ValidationError(f"multiplier must be positive, got {multiplier}")
    if len(demos_per_task) < 1:
        raise ValidationError("dtw_threshold needs at least one task")
    worst = 0.0
    for task_idx, demos in enumerate(demos_per_task):
        demos = list(demos)
        if len(demos) < 2:
            raise ValidationError(
                f"task {task_idx} has {len(demos)} demonstration(s); "
                "at least two are required to compute a threshold"
            )
        for a, b in itertools.combinations(demos, 2):
            d = dtw(a, b)
            if d > worst:
                worst = d
    return float(worst * multiplier)


def accuracy_matrix(ev: EvaluationMatrix, threshold) -> list:
    """Fraction of per-demo errors strictly below the threshold.

    Returns a ragged lower-triangular list of lists with values in
    [0, 1]: row i has i + 1 entries.
    """
    if not np.isfinite(threshold) or threshold <= 0.0:
        raise ValidationError(f"threshold must be positive, got {threshold}")
    result = []
    for row in ev.errors:
        result.append(
            [sum(1 for e in cell if e < threshold) / len(cell) for cell in row]
        )
    return result


def overall_scores(six) -> tuple:
    """Aggregate six base metrics into (mean, sum, stability).

    Stability is one minus the sample standard deviation of the six
    values.
    """
    six = [float(v) for v in six]
    if len(six) != 6:
        raise ValidationError(f"expected six base metrics, got {len(six)}")
    total = float(np.sum(six))
    mean = total / 6.0
    stability = 1.0 - float(np.std(six, ddof=1))
    return mean, total, stability


def _validate_accuracy(A, num_tasks):
    if len(A) != num_tasks:
        raise ValidationError(
            f"accuracy matrix has {len(A)} rows but the ledger covers "
            f"{num_tasks} tasks"
        )
    for i, row in enumerate(A):
        if len(row) != i + 1:
            raise ValidationError(
                f"accuracy row {i} must have {i + 1} entries, got {len(row)}"
            )
        for value in row:
            if not (0.0 <= value <= 1.0):
                raise ValidationError(
                    f"accuracy values must be in [0, 1], got {value}"
                )


def compute_metrics(A, ledger: RunLedger) -> MetricsRecord:
    """Compute the six base metrics and their aggregates.

    ``A`` is a ragged lower-triangular accuracy matrix as produced by
    ``accuracy_matrix``; ``ledger`` supplies the resource bookkeeping.
    """
    m = ledger.num_tasks
    _validate_accuracy(A, m)

    cells = [A[i][j] for i in range(m) for j in range(i + 1)]
    acc = float(np.mean(cells))

    transfers = [A[i][j] - A[j][j] for i in range(m) for j in range(i)]
    bwt = float(np.mean(transfers)) if transfers else 0.0
    rem = 1.0 - abs(min(bwt, 0.0))

    first_size = ledger.param_sizes[0]
    ms = min(1.0, sum(first_size / s for s in ledger.param_sizes) / m)

    sss = 1.0 - min(
        1.0,
        sum(s / ledger.dataset_size for s in ledger.stored_sample_sizes) / m,
    )

    first_time = ledger.train_times[0]
    te = min(1.0, (first_time / m) * sum(1.0 / t for t in ledger.train_times))

    fs = 1.0 - ledger.param_sizes[-1] / ledger.largest_model_size

    six = [acc, rem, ms, te, fs, sss]
    cl_score, cl_score_sum, cl_stability = overall_scores(six)
    return MetricsRecord(
        acc=acc,
        rem=rem,
        ms=ms,
        te=te,
        fs=fs,
        sss=sss,
        cl_score=cl_score,
        cl_score_sum=cl_score_sum,
        cl_stability=cl_stability,
    )
