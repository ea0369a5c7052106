"""Similarity measures between position trajectories.

Three measures are provided, all symmetric and non-negative:

- ``dtw``: dynamic time warping with Euclidean point cost, no band
  constraint, and sum aggregation over the optimal alignment.
- ``discrete_frechet``: the discrete Frechet distance (max-of-min
  coupling over monotone alignments).
- ``swept_area``: the area swept between two equal-length trajectories,
  computed by splitting each quadrilateral between corresponding
  segments into two triangles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "DemoError",
    "ErrorReport",
    "discrete_frechet",
    "dtw",
    "swept_area",
]


def _as_points(traj, name):
    """Coerce a trajectory-like object to a (T, d) float array."""
    points = getattr(traj, "points", traj)
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
        raise ValidationError(
            f"{name} must be a non-empty (T, d) array, got shape {points.shape}"
        )
    if not np.all(np.isfinite(points)):
        raise ValidationError(f"{name} contains non-finite values")
    return points


def _paired_points(a, b):
    pa = _as_points(a, "a")
    pb = _as_points(b, "b")
    if pa.shape[1] != pb.shape[1]:
        raise ValidationError(
            f"dimension mismatch: a has d={pa.shape[1]}, b has d={pb.shape[1]}"
        )
    return pa, pb


def _cost_matrix(pa, pb):
    """Pairwise Euclidean distances, shape (len(a), len(b))."""
    diff = pa[:, None, :] - pb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def dtw(a, b) -> float:
    """Dynamic time warping distance between two trajectories.

    Classic dynamic program over the pairwise Euclidean cost matrix with
    steps (i-1,j), (i,j-1), (i-1,j-1), no band constraint.  Returns the
    sum of matched point costs along the optimal alignment.
    """
    pa, pb = _paired_points(a, b)
    rows = _cost_matrix(pa, pb).tolist()
    m = len(rows[0])
    prev = rows[0][:]
    for j in range(1, m):
        prev[j] += prev[j - 1]
    for i in range(1, len(rows)):
        row = rows[i]
        cur = [row[0] + prev[0]] + [0.0] * (m - 1)
        for j in range(1, m):
            best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j] + best
        prev = cur
    return float(prev[-1])


def discrete_frechet(a, b) -> float:
    """Discrete Frechet distance between two trajectories.

    Standard dynamic program: the smallest over all monotone couplings
    of the largest Euclidean point cost within the coupling.
    """
    pa, pb = _paired_points(a, b)
    rows = _cost_matrix(pa, pb).tolist()
    m = len(rows[0])
    prev = rows[0][:]
    for j in range(1, m):
        if prev[j] < prev[j - 1]:
            prev[j] = prev[j - 1]
    for i in range(1, len(rows)):
        row = rows[i]
        cur = [row[0] if row[0] > prev[0] else prev[0]] + [0.0] * (m - 1)
        for j in range(1, m):
            reach = prev[j]
            if prev[j - 1] < reach:
                reach = prev[j - 1]
            if cur[j - 1] < reach:
                reach = cur[j - 1]
            cur[j] = row[j] if row[j] > reach else reach
        prev = cur
    return float(prev[-1])


def _triangle_areas(p, q, r):
    """Areas of the triangles (p_t, q_t, r_t), vectorized over t."""
    u = q - p
    v = r - p
    if p.shape[1] == 2:
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        return 0.5 * np.abs(cross)
    return 0.5 * np.linalg.norm(np.cross(u, v), axis=1)


def swept_area(a, b) -> float:
    """Area swept between two equal-length trajectories.

    For each pair of corresponding segments the quadrilateral
    (a_t, a_{t+1}, b_{t+1}, b_t) is split into the triangles
    (a_t, a_{t+1}, b_{t+1}) and (a_t, b_{t+1}, b_t); the result is the
    sum of all triangle areas.  Requires equal lengths and d in {2, 3}.
    """
    pa, pb = _paired_points(a, b)
    if pa.shape[0] != pb.shape[0]:
        raise ValidationError(
            f"length mismatch: a has T={pa.shape[0]}, b has T={pb.shape[0]}"
        )
    if pa.shape[1] not in (2, 3):
        raise ValidationError(
            f"swept_area requires d == 2 or 3, got d={pa.shape[1]}"
        )
    if pa.shape[0] < 2:
        return 0.0
    first = _triangle_areas(pa[:-1], pa[1:], pb[1:])
    second = _triangle_areas(pa[:-1], pb[1:], pb[:-1])
    return float(np.sum(first) + np.sum(second))


@dataclass(frozen=True)
class DemoError:
    """Trajectory errors for one demonstration."""

    demo_idx: int
    dtw: float
    frechet: float
    swept_area: float
    quat_error: float | None = None

    def __post_init__(self):
        for name in ("dtw", "frechet", "swept_area"):
            value = getattr(self, name)
            if not (value >= 0.0):
                raise ValidationError(f"{name} must be >= 0, got {value}")
        if self.quat_error is not None and not (self.quat_error >= 0.0):
            raise ValidationError(f"quat_error must be >= 0, got {self.quat_error}")


@dataclass(frozen=True)
class ErrorReport:
    """Median trajectory errors over a set of demonstrations."""

    dtw: float
    frechet: float
    swept_area: float
    per_demo: list[DemoError] = field(default_factory=list)

    @classmethod
    def from_demo_errors(cls, per_demo) -> "ErrorReport":
        per_demo = list(per_demo)
        if not per_demo:
            raise ValidationError("ErrorReport requires at least one demo error")
        return cls(
            dtw=float(np.median([e.dtw for e in per_demo])),
            frechet=float(np.median([e.frechet for e in per_demo])),
            swept_area=float(np.median([e.swept_area for e in per_demo])),
            per_demo=per_demo,
        )
