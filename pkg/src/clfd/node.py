"""Neural ODE trajectory learner.

A trajectory model is a vector field f(y) given by an MLP; predictions roll the
field forward from a start state with one explicit integration step per data
interval. The time-input variant appends a scalar clock to the field's input at
every step, which turns the autonomous field into a time-varying one and makes
self-intersecting trajectories learnable. Training backpropagates through the
unrolled integration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    AdamState,
    Architecture,
    ParamVector,
    Tape,
    Tensor,
    _numpy_layers,
    adam_step,
    mlp_apply,
    tape_layers,
)
from .errors import TrainingDiverged, ValidationError

INTEGRATORS = ("euler", "rk4")


@dataclass
class Trajectory:
    """T x d sequence of states with strictly increasing timestamps."""

    points: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValidationError(f"trajectory.points must be 2-D, got shape {self.points.shape}")
        if self.points.shape[0] < 2:
            raise ValidationError("trajectory must contain at least 2 points")
        if self.timestamps.shape != (self.points.shape[0],):
            raise ValidationError(
                f"trajectory.timestamps length {self.timestamps.shape} does not match "
                f"{self.points.shape[0]} points")
        if not np.all(np.diff(self.timestamps) > 0):
            raise ValidationError("trajectory.timestamps must be strictly increasing")
        if not np.isfinite(self.points).all():
            raise ValidationError("trajectory.points must be finite")

    @property
    def T(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class DemonstrationSet:
    """Demonstrations of one task; all share T, d and timestamps."""

    demos: list[Trajectory]
    name: str = ""
    recording_frequency: float | None = None

    def __post_init__(self):
        if not self.demos:
            raise ValidationError("demonstration set must contain at least one demo")
        t0, d0 = self.demos[0].T, self.demos[0].dim
        for i, demo in enumerate(self.demos):
            if demo.T != t0 or demo.dim != d0:
                raise ValidationError(
                    f"demos[{i}] shape ({demo.T},{demo.dim}) does not match demos[0] ({t0},{d0})")
            if not np.array_equal(demo.timestamps, self.demos[0].timestamps):
                raise ValidationError(f"demos[{i}].timestamps differ from demos[0]")

    @property
    def T(self) -> int:
        return self.demos[0].T

    @property
    def dim(self) -> int:
        return self.demos[0].dim

    @property
    def timestamps(self) -> np.ndarray:
        return self.demos[0].timestamps

    def stacked(self) -> np.ndarray:
        """(T, n_demos, d) array of observations."""
        return np.stack([d.points for d in self.demos], axis=1)


@dataclass
class NodeConfig:
    architecture: Architecture
    time_input: bool
    train_iterations: int
    learning_rate: float
    integrator: str = "euler"

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValidationError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.train_iterations < 0:
            raise ValidationError("train_iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")


def state_dim(config: NodeConfig, extra_input_dim: int = 0) -> int:
    """The d implied by the architecture, checking the input-width invariant."""
    d = config.architecture.output_dim
    expect = d + extra_input_dim + (1 if config.time_input else 0)
    if config.architecture.input_dim != expect:
        raise ValidationError(
            f"architecture.input_dim {config.architecture.input_dim} != state_dim {d} "
            f"+ extra_input_dim {extra_input_dim}" + (" + 1 (time input)" if config.time_input else ""))
    return d


def time_values(timestamps: np.ndarray, recording_frequency: float | None) -> np.ndarray:
    """Scalar clock fed to the field: raw seconds when a recording frequency
    defines them (t = n/f), otherwise timestamps rescaled to [0, 1]."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if recording_frequency is not None:
        return ts
    span = ts[-1] - ts[0]
    return (ts - ts[0]) / span


# -- plain numpy integration (prediction path) ---------------------------------


def _field(layers, activation: str, y: np.ndarray, extra_row: np.ndarray | None,
           tval: float | None) -> np.ndarray:
    parts = [y]
    if extra_row is not None:
        parts.append(np.broadcast_to(extra_row, (y.shape[0], extra_row.size)))
    if tval is not None:
        parts.append(np.full((y.shape[0], 1), tval))
    x = np.hstack(parts)
    for w, b in layers[:-1]:
        h = x @ w + b
        x = np.where(h > 0, h, np.expm1(h)) if activation == "elu" else np.maximum(h, 0.0)
    w, b = layers[-1]
    return x @ w + b


def integrate(params: ParamVector, y0: np.ndarray, timestamps: np.ndarray,
              time_input: bool, extra_input: np.ndarray | None = None,
              integrator: str = "euler",
              recording_frequency: float | None = None) -> Trajectory:
    """Roll the field forward from y0 across the given timestamps."""
    y0 = np.asarray(y0, dtype=np.float64).ravel()
    ts = np.asarray(timestamps, dtype=np.float64)
    if not np.all(np.diff(ts) > 0):
        raise ValidationError("timestamps must be strictly increasing")
    if not np.isfinite(y0).all():
        raise ValidationError("y0 must be finite")
    if integrator not in INTEGRATORS:
        raise ValidationError(f"integrator must be one of {INTEGRATORS}")
    layers = _numpy_layers(params.values, params.arch)
    act = params.arch.activation
    extra = None if extra_input is None else np.asarray(extra_input, dtype=np.float64).ravel()
    tvals = time_values(ts, recording_frequency) if time_input else None

    y = y0[None, :].copy()
    out = np.empty((ts.size, y0.size))
    out[0] = y0
    for n in range(ts.size - 1):
        h = ts[n + 1] - ts[n]
        if time_input:
            t0, t1 = tvals[n], tvals[n + 1]
        else:
            t0 = t1 = None
        if integrator == "euler":
            y = y + h * _field(layers, act, y, extra, t0)
        else:
            tm = None if t0 is None else 0.5 * (t0 + t1)
            k1 = _field(layers, act, y, extra, t0)
            k2 = _field(layers, act, y + 0.5 * h * k1, extra, tm)
            k3 = _field(layers, act, y + 0.5 * h * k2, extra, tm)
            k4 = _field(layers, act, y + h * k3, extra, t1)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(y).all():
            raise TrainingDiverged(f"non-finite state at integration step {n + 1}")
        out[n + 1] = y[0]
    return Trajectory(out, ts)


def node_loss(pred: Trajectory, obs: DemonstrationSet) -> float:
    """0.5 * sum_t ||y_t - yhat_t||^2, summed over the demonstrations."""
    if pred.T != obs.T or pred.dim != obs.dim:
        raise ValidationError(
            f"prediction shape ({pred.T},{pred.dim}) does not match demos ({obs.T},{obs.dim})")
    total = 0.0
    for demo in obs.demos:
        diff = demo.points - pred.points
        total += 0.5 * float((diff * diff).sum())
    return total


# -- tape-mode unrolled loss (training path) ------------------------------------


def unrolled_loss_on_tape(tape: Tape, layers, activation: str, obs: np.ndarray,
                          dts: np.ndarray, tvals: np.ndarray | None,
                          extra: Tensor | None, integrator: str = "euler") -> Tensor:
    """Build the reconstruction loss for one task on the given tape.

    obs is the (T, D, d) stack of demonstrations; integration starts from
    obs[0] and every demo advances in the same batched matrix.
    """
    T, D, _ = obs.shape
    y = tape.leaf(obs[0])
    step_losses = []
    n_layers = len(layers)

    def fieldt(y_t: Tensor, tval: float | None) -> Tensor:
        w0, b0 = layers[0]
        x = tape.input_linear_act(y_t, w0, b0, activation if n_layers > 1 else None,
                                  extra, tval)
        for w, b in layers[1:-1]:
            x = tape.linear_act(x, w, b, activation)
        if n_layers > 1:
            w, b = layers[-1]
            x = tape.linear_act(x, w, b, None)
        return x

    for n in range(T - 1):
        h = float(dts[n])
        if tvals is not None:
            t0, t1 = float(tvals[n]), float(tvals[n + 1])
            tm = 0.5 * (t0 + t1)
        else:
            t0 = t1 = tm = None
        if integrator == "euler":
            y = tape.axpy(y, fieldt(y, t0), h)
        else:
            k1 = fieldt(y, t0)
            k2 = fieldt(tape.axpy(y, k1, 0.5 * h), tm)
            k3 = fieldt(tape.axpy(y, k2, 0.5 * h), tm)
            k4 = fieldt(tape.axpy(y, k3, h), t1)
            ksum = tape.addn([k1, tape.scale(k2, 2.0), tape.scale(k3, 2.0), k4])
            y = tape.axpy(y, ksum, h / 6.0)
        step_losses.append(tape.sqerr_half(y, obs[n + 1]))
    return tape.addn(step_losses)


@dataclass
class TrainResult:
    params: ParamVector
    loss_history: list[float]
    wall_clock_seconds: float
    work_units: int = 0
    extra_input: np.ndarray | None = None


def train_node(params: ParamVector, demos: DemonstrationSet, config: NodeConfig,
               extra_input: np.ndarray | None = None,
               loss_decorator=None, step_hook=None,
               train_extra: bool = True) -> TrainResult:
    """Adam on the unrolled reconstruction loss; params are updated in place
    on a copy and returned.

    loss_decorator(tape, theta) may return an extra penalty Tensor built on the
    same tape. step_hook(grad, delta) observes each applied parameter update
    (both over the flat vector), for running-importance bookkeeping.
    """
    extra_dim = 0 if extra_input is None else np.asarray(extra_input).size
    d = state_dim(config, extra_dim)
    if demos.dim != d:
        raise ValidationError(f"demos dim {demos.dim} does not match architecture state dim {d}")

    pv = params.copy()
    obs = demos.stacked()
    ts = demos.timestamps
    dts = np.diff(ts)
    tvals = time_values(ts, demos.recording_frequency) if config.time_input else None
    extra = None if extra_input is None else np.asarray(extra_input, dtype=np.float64).ravel().copy()

    opt = AdamState.for_size(pv.values.size, lr=config.learning_rate)
    opt_extra = AdamState.for_size(extra_dim, lr=config.learning_rate) if (
        extra is not None and train_extra) else None

    history: list[float] = []
    work = 0
    start = time.perf_counter()
    for it in range(config.train_iterations):
        tape = Tape()
        theta = tape.leaf(pv.values)
        layers = tape_layers(tape, theta, pv.arch)
        extra_t = tape.leaf(extra) if extra is not None else None
        loss = unrolled_loss_on_tape(tape, layers, pv.arch.activation, obs, dts, tvals,
                                     extra_t, config.integrator)
        if loss_decorator is not None:
            penalty = loss_decorator(tape, theta)
            if penalty is not None:
                loss = tape.add(loss, penalty)
        loss_val = loss.data.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        history.append(loss_val)
        tape.backward(loss)
        work += len(tape.records)
        grad = theta.grad
        delta = adam_step(opt, pv.values, grad, context=f"iteration {it}")
        if step_hook is not None:
            step_hook(grad, delta)
        if opt_extra is not None and extra_t.grad is not None:
            adam_step(opt_extra, extra, extra_t.grad, context=f"embedding iteration {it}")
    wall = time.perf_counter() - start
    return TrainResult(pv, history, wall, work, extra)
