"""Unit-quaternion trajectories and their goal-anchored tangent-space maps.

Orientation trajectories are learned as Euclidean trajectories of rotation
vectors r_t = Log(conj(q_goal) * q_t): the tangent space is anchored at the
final quaternion so every trajectory ends at the origin. Predictions map back
via q_t = q_goal * Exp(r_t), which inverts the forward map exactly.
Quaternions are scalar-first [v, u].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError
from .node import Trajectory

_ZERO_TOL = 1e-12
_ANTIPODAL_TOL = 1e-9


class UnitQuaternion:
    """Scalar-first unit quaternion; renormalized on construction."""

    __slots__ = ("v", "u")

    def __init__(self, v: float, u) -> None:
        u = np.asarray(u, dtype=np.float64).ravel()
        if u.shape != (3,):
            raise ValidationError(f"quaternion vector part must have 3 entries, got {u.shape}")
        norm = float(np.sqrt(v * v + (u * u).sum()))
        if norm < _ZERO_TOL:
            raise ValidationError("cannot normalize a near-zero quaternion")
        self.v = float(v) / norm
        self.u = u / norm

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.shape != (4,):
            raise ValidationError(f"quaternion must have 4 entries, got {q.shape}")
        return cls(q[0], q[1:])

    @property
    def array(self) -> np.ndarray:
        return np.concatenate(([self.v], self.u))

    def __repr__(self) -> str:
        return f"UnitQuaternion(v={self.v:.6f}, u={np.array2string(self.u, precision=6)})"


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product over (..., 4) scalar-first arrays."""
    av, au = a[..., :1], a[..., 1:]
    bv, bu = b[..., :1], b[..., 1:]
    v = av * bv - (au * bu).sum(axis=-1, keepdims=True)
    u = av * bu + bv * au + np.cross(au, bu)
    return np.concatenate([v, u], axis=-1)


def _qconj(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(q1: UnitQuaternion, q2: UnitQuaternion) -> UnitQuaternion:
    return UnitQuaternion.from_array(_qmul(q1.array, q2.array))


def quat_conjugate(q: UnitQuaternion) -> UnitQuaternion:
    return UnitQuaternion(q.v, -q.u)


def _vlog(q: np.ndarray) -> np.ndarray:
    """Log map over (..., 4) unit quaternions -> (..., 3) rotation vectors."""
    v = np.clip(q[..., 0], -1.0, 1.0)
    u = q[..., 1:]
    un = np.linalg.norm(u, axis=-1)
    near_antipodal = np.hypot(v + 1.0, un) < _ANTIPODAL_TOL
    if np.any(near_antipodal):
        raise DomainError("log map undefined within 1e-9 of [-1, 0, 0, 0]")
    angle = np.arccos(v)
    safe = np.where(un < _ZERO_TOL, 1.0, un)
    r = (angle / safe)[..., None] * u
    r[un < _ZERO_TOL] = 0.0
    return r


def _vexp(r: np.ndarray) -> np.ndarray:
    """Exp map over (..., 3) rotation vectors -> (..., 4) unit quaternions."""
    n = np.linalg.norm(r, axis=-1)
    if np.any(n >= np.pi):
        raise DomainError("exp map requires ||r|| < pi")
    safe = np.where(n < _ZERO_TOL, 1.0, n)
    q = np.empty(r.shape[:-1] + (4,))
    q[..., 0] = np.cos(n)
    q[..., 1:] = (np.sin(n) / safe)[..., None] * r
    q[..., 0][n < _ZERO_TOL] = 1.0
    q[..., 1:][n < _ZERO_TOL] = 0.0
    return q


def log_map(q: UnitQuaternion) -> np.ndarray:
    """Rotation vector arccos(v) * u/||u||; zero vector at the identity."""
    return _vlog(q.array)


def exp_map(r) -> UnitQuaternion:
    """[cos||r||, sin||r|| * r/||r||]; requires ||r|| < pi."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.shape != (3,):
        raise ValidationError(f"rotation vector must have 3 entries, got {r.shape}")
    return UnitQuaternion.from_array(_vexp(r))


def canonicalize_quats(quats: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternions sit on the same hemisphere."""
    q = np.array(quats, dtype=np.float64)
    for t in range(1, q.shape[0]):
        if np.dot(q[t], q[t - 1]) < 0:
            q[t] = -q[t]
    return q


@dataclass
class QuaternionTrajectory:
    """T unit quaternions (scalar-first rows) with strictly increasing timestamps."""

    quats: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.quats = np.asarray(self.quats, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.quats.ndim != 2 or self.quats.shape[1] != 4:
            raise ValidationError(f"quats must be (T, 4), got {self.quats.shape}")
        if self.quats.shape[0] < 2:
            raise ValidationError("quaternion trajectory must contain at least 2 points")
        if self.timestamps.shape != (self.quats.shape[0],):
            raise ValidationError("timestamps length does not match quats")
        if not np.all(np.diff(self.timestamps) > 0):
            raise ValidationError("timestamps must be strictly increasing")
        norms = np.linalg.norm(self.quats, axis=1)
        if np.any(norms < _ZERO_TOL):
            raise ValidationError("quats contain a near-zero row")
        self.quats = canonicalize_quats(self.quats / norms[:, None])

    @property
    def T(self) -> int:
        return self.quats.shape[0]

    @property
    def goal(self) -> UnitQuaternion:
        return UnitQuaternion.from_array(self.quats[-1])


def to_tangent_trajectory(qt: QuaternionTrajectory) -> Trajectory:
    """r_t = Log(conj(q_goal) * q_t); the final point is exactly the origin.

    The relative rotation is taken goal-side so that goal * Exp(r_t) recovers
    q_t exactly; the goal-relative coordinate differs from the q_t-side one
    only by a global sign.
    """
    rel = _qmul(_qconj(qt.quats[-1]), qt.quats)
    return Trajectory(_vlog(rel), qt.timestamps)


def from_tangent_trajectory(rt: Trajectory, goal: UnitQuaternion) -> QuaternionTrajectory:
    """q_t = goal * Exp(r_t)."""
    if rt.dim != 3:
        raise ValidationError(f"tangent trajectory must be 3-D, got d={rt.dim}")
    quats = _qmul(goal.array, _vexp(rt.points))
    return QuaternionTrajectory(quats, rt.timestamps)


def quat_error(q1: UnitQuaternion, q2: UnitQuaternion) -> np.ndarray:
    """e_q = 2 * Log(q1 * conj(q2))."""
    return 2.0 * _vlog(_qmul(q1.array, _qconj(q2.array)))


def quat_traj_error(gt: QuaternionTrajectory, pred: QuaternionTrajectory) -> float:
    """E_q = (1/3T) * sum_t ||e_q(q_t, qhat_t)||_1."""
    if gt.T != pred.T:
        raise ValidationError(f"trajectory lengths differ: {gt.T} vs {pred.T}")
    e = 2.0 * _vlog(_qmul(gt.quats, _qconj(pred.quats)))
    return float(np.abs(e).sum() / (3.0 * gt.T))
