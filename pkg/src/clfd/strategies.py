"""Continual-learning strategies over the trajectory learner.

Seven strategies share one contract: ``learn_task(demos)`` trains on the
next task in the sequence, and ``predict(task_id, y0, timestamps)``
reproduces any task learned so far.

- SG  trains a separate frozen network per task (no forgetting, linear
      parameter growth).
- FT  finetunes one shared network, conditioned on a per-task embedding
      appended to the field input (no forgetting protection).
- REP finetunes like FT but replays stored demonstrations of earlier
      tasks, drawing the task to optimize uniformly each iteration.
- SI  adds a quadratic penalty holding parameters near their previous
      values, weighted by path-integral importance accumulated during
      training.
- MAS like SI, but importance comes from the sensitivity of the squared
      field output to each parameter, measured on visited inputs.
- HN  trains a hypernetwork that generates the whole field network from
      a task embedding, with a two-step update that keeps the generated
      parameters of old tasks close to cached targets.
- CHN a chunked hypernetwork: the generator emits the field parameters
      in fixed-size chunks addressed by shared chunk embeddings.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    AdamState,
    Architecture,
    ParamVector,
    Tape,
    adam_lookahead,
    adam_step,
    count_params,
    init_params,
    mlp_apply,
    mlp_forward,
    tape_layers,
)
from .errors import TrainingDiverged, ValidationError
from .node import (
    DemonstrationSet,
    NodeConfig,
    Trajectory,
    integrate,
    time_values,
    train_node,
    unrolled_loss_on_tape,
)

VARIANTS = ("SG", "FT", "REP", "SI", "MAS", "HN", "CHN")
_EMBEDDING_INPUT_VARIANTS = ("FT", "REP", "SI", "MAS")

__all__ = [
    "VARIANTS",
    "HypernetConfig",
    "ImportanceState",
    "ReplayBuffer",
    "Strategy",
    "StrategyConfig",
    "TaskEmbedding",
    "TaskStats",
    "ft_learn_task",
    "hn_generate",
    "hn_learn_task",
    "learn_task",
    "load_state",
    "mas_consolidate",
    "mas_learn_task",
    "new_state",
    "predict",
    "rep_learn_task",
    "save_state",
    "sg_learn_task",
    "si_accumulate",
    "si_consolidate",
    "si_learn_task",
    "si_penalty",
    "stored_sample_count",
    "total_param_count",
]


def derived_seed(base: int, *key: int) -> int:
    """A stable child seed for an independent random stream."""
    ss = np.random.SeedSequence(base, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class StrategyConfig:
    """Everything needed to build and train one strategy."""

    variant: str
    data_dim: int
    hidden: tuple = (100, 100, 100)
    activation: str = "elu"
    time_input: bool = True
    train_iterations: int = 1000
    learning_rate: float = 1e-4
    integrator: str = "euler"
    embedding_dim: int = 256
    seed: int = 0
    si_c: float = 0.3
    si_xi: float = 0.3
    mas_lambda: float = 0.1
    hn_hidden: tuple = (200, 200, 200)
    hn_activation: str = "relu"
    beta: float = 0.005
    chunk_dim: int = 8192
    chunk_embedding_dim: int = 256

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.data_dim < 1:
            raise ValidationError(f"data_dim must be >= 1, got {self.data_dim}")
        if self.embedding_dim < 1:
            raise ValidationError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "hn_hidden", tuple(int(h) for h in self.hn_hidden))
        if self.si_c <= 0 or self.si_xi <= 0:
            raise ValidationError("si_c and si_xi must be > 0")
        if self.mas_lambda <= 0:
            raise ValidationError("mas_lambda must be > 0")
        if self.beta <= 0:
            raise ValidationError("beta must be > 0")
        if self.chunk_dim < 1 or self.chunk_embedding_dim < 1:
            raise ValidationError("chunk_dim and chunk_embedding_dim must be >= 1")

    def node_architecture(self) -> Architecture:
        extra = self.embedding_dim if self.variant in _EMBEDDING_INPUT_VARIANTS else 0
        return Architecture(
            input_dim=self.data_dim + extra + (1 if self.time_input else 0),
            hidden=self.hidden,
            output_dim=self.data_dim,
            activation=self.activation,
        )

    def node_config(self) -> NodeConfig:
        return NodeConfig(
            architecture=self.node_architecture(),
            time_input=self.time_input,
            train_iterations=self.train_iterations,
            learning_rate=self.learning_rate,
            integrator=self.integrator,
        )

    def hypernet_config(self) -> "HypernetConfig":
        if self.variant not in ("HN", "CHN"):
            raise ValidationError(f"variant {self.variant} has no hypernetwork")
        target = self.node_architecture()
        if self.variant == "HN":
            hn_arch = Architecture(
                input_dim=self.embedding_dim,
                hidden=self.hn_hidden,
                output_dim=count_params(target),
                activation=self.hn_activation,
            )
            return HypernetConfig(hn_architecture=hn_arch, target_architecture=target,
                                  beta=self.beta)
        hn_arch = Architecture(
            input_dim=self.embedding_dim + self.chunk_embedding_dim,
            hidden=self.hn_hidden,
            output_dim=self.chunk_dim,
            activation=self.hn_activation,
        )
        return HypernetConfig(hn_architecture=hn_arch, target_architecture=target,
                              beta=self.beta, chunked=True, chunk_dim=self.chunk_dim,
                              chunk_embedding_dim=self.chunk_embedding_dim)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "data_dim": self.data_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "time_input": self.time_input,
            "train_iterations": self.train_iterations,
            "learning_rate": self.learning_rate,
            "integrator": self.integrator,
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "si_c": self.si_c,
            "si_xi": self.si_xi,
            "mas_lambda": self.mas_lambda,
            "hn_hidden": list(self.hn_hidden),
            "hn_activation": self.hn_activation,
            "beta": self.beta,
            "chunk_dim": self.chunk_dim,
            "chunk_embedding_dim": self.chunk_embedding_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        d["hn_hidden"] = tuple(d["hn_hidden"])
        return cls(**d)


@dataclass(frozen=True)
class HypernetConfig:
    """Generator shape plus regularization strength for HN/CHN."""

    hn_architecture: Architecture
    target_architecture: Architecture
    beta: float
    chunked: bool = False
    chunk_dim: int = 0
    chunk_embedding_dim: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        count = count_params(self.target_architecture)
        if self.chunked:
            if self.chunk_dim < 1 or self.chunk_embedding_dim < 1:
                raise ValidationError("chunked generator needs chunk_dim and "
                                      "chunk_embedding_dim >= 1")
            if self.hn_architecture.output_dim != self.chunk_dim:
                raise ValidationError(
                    f"chunked generator output {self.hn_architecture.output_dim} "
                    f"!= chunk_dim {self.chunk_dim}")
        elif self.hn_architecture.output_dim != count:
            raise ValidationError(
                f"generator output {self.hn_architecture.output_dim} != target "
                f"parameter count {count}")

    @property
    def num_chunks(self) -> int:
        count = count_params(self.target_architecture)
        return -(-count // self.chunk_dim)


# -- state types ---------------------------------------------------------------


@dataclass
class TaskEmbedding:
    """Trainable task-conditioning vector; frozen once its task is learned."""

    task_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size < 1:
            raise ValidationError("embedding must be non-empty")


def init_embedding(dim: int, seed: int, task_id: int) -> TaskEmbedding:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    return TaskEmbedding(task_id, rng.uniform(-bound, bound, size=dim))


@dataclass
class ImportanceState:
    """Per-parameter importance bookkeeping for SI and MAS penalties.

    ``omega_running`` accumulates path-integral contributions during the
    current task, ``omega_total`` holds the consolidated per-parameter
    regularization strengths, ``theta_snapshot`` is the anchor the
    penalty pulls towards, and ``delta`` records the parameter change of
    the last consolidated task.
    """

    omega_running: np.ndarray
    omega_total: np.ndarray
    theta_snapshot: np.ndarray
    delta: np.ndarray
    c: float
    xi: float
    steps_seen: int = 0

    def __post_init__(self):
        n = self.theta_snapshot.size
        for name in ("omega_running", "omega_total", "delta"):
            if getattr(self, name).size != n:
                raise ValidationError(f"{name} length does not match theta_snapshot ({n})")
        if self.c <= 0:
            raise ValidationError(f"importance c must be > 0, got {self.c}")

    @classmethod
    def fresh(cls, values: np.ndarray, c: float, xi: float) -> "ImportanceState":
        n = values.size
        return cls(omega_running=np.zeros(n), omega_total=np.zeros(n),
                   theta_snapshot=values.copy(), delta=np.zeros(n), c=c, xi=xi)


@dataclass
class ReplayBuffer:
    """Stored demonstrations and embeddings of every completed task."""

    stored: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return sum(ds.T * len(ds.demos) for ds in self.stored)


@dataclass
class TaskStats:
    """Resource usage of one learn_task call."""

    task_id: int
    final_loss: float
    wall_clock_seconds: float
    work_units: int
    iterations: int

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "final_loss": self.final_loss,
            "wall_clock_seconds": self.wall_clock_seconds,
            "work_units": self.work_units,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskStats":
        return cls(task_id=d["task_id"], final_loss=d["final_loss"],
                   wall_clock_seconds=d["wall_clock_seconds"],
                   work_units=d["work_units"], iterations=d["iterations"])


@dataclass
class _StateBase:
    frequencies: list = field(default_factory=list)
    stats: list = field(default_factory=list)

    @property
    def num_tasks(self) -> int:
        return len(self.frequencies)


@dataclass
class SGState(_StateBase):
    variant = "SG"
    params: list = field(default_factory=list)


@dataclass
class SharedState(_StateBase):
    """Shared network plus per-task embeddings (FT, and SI/MAS with importance)."""

    variant = "FT"
    params: ParamVector | None = None
    embeddings: list = field(default_factory=list)
    importance: ImportanceState | None = None


@dataclass
class REPState(_StateBase):
    variant = "REP"
    params: ParamVector | None = None
    buffer: ReplayBuffer = field(default_factory=ReplayBuffer)


@dataclass
class HNState(_StateBase):
    variant = "HN"
    hn_params: ParamVector | None = None
    chunk_embeddings: np.ndarray | None = None
    embeddings: list = field(default_factory=list)


def new_state(variant: str):
    if variant == "SG":
        return SGState()
    if variant in ("FT", "SI", "MAS"):
        return SharedState()
    if variant == "REP":
        return REPState()
    if variant in ("HN", "CHN"):
        return HNState()
    raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")


def _ensure_shared_params(state, config: StrategyConfig) -> None:
    if state.params is None:
        state.params = init_params(config.node_architecture(),
                                   derived_seed(config.seed, 0, 0))


def _check_demos(demos: DemonstrationSet, config: StrategyConfig) -> None:
    if demos.dim != config.data_dim:
        raise ValidationError(
            f"demos dim {demos.dim} does not match config data_dim {config.data_dim}")


# -- SG -------------------------------------------------------------------------


def sg_learn_task(state: SGState, demos: DemonstrationSet, config: StrategyConfig):
    """Train a freshly initialized network on this task and freeze it."""
    _check_demos(demos, config)
    start = time.perf_counter()
    task = state.num_tasks
    pv = init_params(config.node_architecture(), derived_seed(config.seed, 0, task))
    result = train_node(pv, demos, config.node_config())
    state.params.append(result.params)
    state.frequencies.append(demos.recording_frequency)
    state.stats.append(TaskStats(
        task_id=task,
        final_loss=result.loss_history[-1] if result.loss_history else float("nan"),
        wall_clock_seconds=time.perf_counter() - start,
        work_units=result.work_units,
        iterations=config.train_iterations,
    ))
    return state


# -- FT ---------------------------------------------------------------------------


def ft_learn_task(state: SharedState, demos: DemonstrationSet, config: StrategyConfig,
                  loss_decorator=None, step_hook=None):
    """Finetune the shared network with a fresh trainable task embedding."""
    _check_demos(demos, config)
    start = time.perf_counter()
    task = state.num_tasks
    _ensure_shared_params(state, config)
    emb = init_embedding(config.embedding_dim, derived_seed(config.seed, 1, task), task)
    result = train_node(state.params, demos, config.node_config(),
                        extra_input=emb.values, loss_decorator=loss_decorator,
                        step_hook=step_hook, train_extra=True)
    state.params = result.params
    state.embeddings.append(TaskEmbedding(task, result.extra_input))
    state.frequencies.append(demos.recording_frequency)
    state.stats.append(TaskStats(
        task_id=task,
        final_loss=result.loss_history[-1] if result.loss_history else float("nan"),
        wall_clock_seconds=time.perf_counter() - start,
        work_units=result.work_units,
        iterations=config.train_iterations,
    ))
    return state


# -- SI ---------------------------------------------------------------------------


def si_penalty(imp: ImportanceState, values: np.ndarray) -> float:
    """c * sum_k omega_total_k * (theta*_k - theta_k)^2."""
    values = values.values if isinstance(values, ParamVector) else np.asarray(values)
    d = imp.theta_snapshot - values
    return float(imp.c * np.sum(imp.omega_total * d * d))


def si_accumulate(imp: ImportanceState, grad: np.ndarray, param_delta: np.ndarray) -> None:
    """Path-integral update after one optimizer step: omega += -g * delta."""
    imp.omega_running -= grad * param_delta
    imp.steps_seen += 1


def si_consolidate(imp: ImportanceState, values: np.ndarray) -> None:
    """Fold the running accumulator into the per-parameter strengths.

    omega_total += max(omega_running, 0) / (delta^2 + xi) where delta is
    the total parameter change over the task; running terms then reset
    and the anchor snapshots the current values.
    """
    if imp.steps_seen == 0:
        warnings.warn("si_consolidate called before any training step; no-op",
                      stacklevel=2)
        return
    values = values.values if isinstance(values, ParamVector) else np.asarray(values)
    delta = values - imp.theta_snapshot
    imp.omega_total += np.maximum(imp.omega_running, 0.0) / (delta * delta + imp.xi)
    imp.delta = delta
    imp.omega_running = np.zeros_like(imp.omega_running)
    imp.theta_snapshot = values.copy()
    imp.steps_seen = 0


def _penalty_decorator(imp: ImportanceState):
    def decorator(tape: Tape, theta):
        diff = tape.sub(theta, tape.leaf(imp.theta_snapshot))
        weighted = tape.mul(tape.leaf(imp.omega_total), tape.mul(diff, diff))
        return tape.scale(tape.sum(weighted), imp.c)

    return decorator


def si_learn_task(state: SharedState, demos: DemonstrationSet, config: StrategyConfig):
    """Finetune with the quadratic importance penalty, then consolidate."""
    _ensure_shared_params(state, config)
    if state.importance is None:
        state.importance = ImportanceState.fresh(state.params.values,
                                                 c=config.si_c, xi=config.si_xi)
    imp = state.importance
    ft_learn_task(state, demos, config,
                  loss_decorator=_penalty_decorator(imp),
                  step_hook=lambda grad, delta: si_accumulate(imp, grad, delta))
    si_consolidate(imp, state.params.values)
    return state


# -- MAS --------------------------------------------------------------------------


def mas_consolidate(imp: ImportanceState, params: ParamVector,
                    sample_inputs: np.ndarray) -> int:
    """Add the mean absolute parameter-sensitivity of ||f(x)||^2 over samples.

    Returns the number of tape records evaluated, for work accounting.
    """
    sample_inputs = np.asarray(sample_inputs, dtype=np.float64)
    if sample_inputs.ndim != 2 or sample_inputs.shape[0] < 1:
        raise ValidationError(
            f"sample_inputs must be a non-empty (N, input_dim) array, got "
            f"shape {sample_inputs.shape}")
    acc = np.zeros(params.values.size)
    work = 0
    for x in sample_inputs:
        tape = Tape()
        out = mlp_forward(params, x[None, :], tape)
        loss = tape.sqsum(out)
        tape.backward(loss)
        work += len(tape.records)
        acc += np.abs(mlp_forward.last_theta.grad)
    imp.omega_total += acc / sample_inputs.shape[0]
    imp.theta_snapshot = params.values.copy()
    return work


def _mas_sample_inputs(demos: DemonstrationSet, emb: np.ndarray,
                       config: StrategyConfig) -> np.ndarray:
    """Field inputs visited while training: [state | embedding | time] rows."""
    parts = []
    tvals = (time_values(demos.timestamps, demos.recording_frequency)
             if config.time_input else None)
    for demo in demos.demos:
        cols = [demo.points, np.tile(emb, (demo.T, 1))]
        if tvals is not None:
            cols.append(tvals[:, None])
        parts.append(np.hstack(cols))
    return np.vstack(parts)


def mas_learn_task(state: SharedState, demos: DemonstrationSet, config: StrategyConfig):
    """Finetune with the importance penalty, then measure new importances."""
    _ensure_shared_params(state, config)
    if state.importance is None:
        state.importance = ImportanceState.fresh(state.params.values,
                                                 c=config.mas_lambda, xi=config.si_xi)
    imp = state.importance
    ft_learn_task(state, demos, config, loss_decorator=_penalty_decorator(imp))
    start = time.perf_counter()
    samples = _mas_sample_inputs(demos, state.embeddings[-1].values, config)
    work = mas_consolidate(imp, state.params, samples)
    stats = state.stats[-1]
    stats.wall_clock_seconds += time.perf_counter() - start
    stats.work_units += work
    return state


# -- REP --------------------------------------------------------------------------


def rep_learn_task(state: REPState, demos: DemonstrationSet, config: StrategyConfig):
    """Store the new task's demos, then optimize a uniformly drawn task per
    iteration over the whole buffer within the fixed iteration budget."""
    _check_demos(demos, config)
    start = time.perf_counter()
    task = state.num_tasks
    _ensure_shared_params(state, config)
    state.buffer.stored.append(demos)
    state.buffer.embeddings.append(
        init_embedding(config.embedding_dim, derived_seed(config.seed, 1, task), task))
    state.frequencies.append(demos.recording_frequency)

    arch = config.node_architecture()
    prepared = []
    for ds in state.buffer.stored:
        ts = ds.timestamps
        prepared.append((
            ds.stacked(),
            np.diff(ts),
            time_values(ts, ds.recording_frequency) if config.time_input else None,
        ))
    rng = np.random.default_rng(derived_seed(config.seed, 2, task))
    opt_theta = AdamState.for_size(state.params.values.size, lr=config.learning_rate)
    opt_embs = [AdamState.for_size(config.embedding_dim, lr=config.learning_rate)
                for _ in state.buffer.embeddings]

    pv = state.params.copy()
    history = []
    work = 0
    for it in range(config.train_iterations):
        sel = int(rng.integers(0, task + 1))
        obs, dts, tvals = prepared[sel]
        emb = state.buffer.embeddings[sel]
        tape = Tape()
        theta = tape.leaf(pv.values)
        layers = tape_layers(tape, theta, arch)
        emb_t = tape.leaf(emb.values)
        loss = unrolled_loss_on_tape(tape, layers, arch.activation, obs, dts, tvals,
                                     emb_t, config.integrator)
        loss_val = loss.data.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        history.append(loss_val)
        tape.backward(loss)
        work += len(tape.records)
        adam_step(opt_theta, pv.values, theta.grad, context=f"iteration {it}")
        if emb_t.grad is not None:
            adam_step(opt_embs[sel], emb.values, emb_t.grad,
                      context=f"embedding iteration {it}")
    state.params = pv
    state.stats.append(TaskStats(
        task_id=task,
        final_loss=history[-1] if history else float("nan"),
        wall_clock_seconds=time.perf_counter() - start,
        work_units=work,
        iterations=config.train_iterations,
    ))
    return state


# -- HN / CHN -----------------------------------------------------------------------


def _embedding_values(e) -> np.ndarray:
    return e.values if isinstance(e, TaskEmbedding) else np.asarray(e, dtype=np.float64).ravel()


def hn_generate(h: ParamVector, e, cfg: HypernetConfig,
                chunk_embeddings: np.ndarray | None = None) -> ParamVector:
    """Generate the target network's parameters from a task embedding.

    Non-chunked: one forward pass emits every target parameter. Chunked:
    one pass per chunk embedding, each paired with the task embedding,
    concatenated and truncated to the target parameter count.
    """
    e_values = _embedding_values(e)
    count = count_params(cfg.target_architecture)
    if cfg.chunked:
        if chunk_embeddings is None:
            raise ValidationError("chunked generator requires chunk_embeddings")
        chunk_embeddings = np.asarray(chunk_embeddings, dtype=np.float64)
        k = cfg.num_chunks
        if chunk_embeddings.shape != (k, cfg.chunk_embedding_dim):
            raise ValidationError(
                f"chunk_embeddings shape {chunk_embeddings.shape} != "
                f"({k}, {cfg.chunk_embedding_dim})")
        expect = e_values.size + cfg.chunk_embedding_dim
        if cfg.hn_architecture.input_dim != expect:
            raise ValidationError(
                f"embedding dim {e_values.size} + chunk embedding dim "
                f"{cfg.chunk_embedding_dim} != generator input "
                f"{cfg.hn_architecture.input_dim}")
        x = np.hstack([np.tile(e_values, (k, 1)), chunk_embeddings])
        out = mlp_forward(h, x)
        theta = out.ravel()[:count].copy()
    else:
        if chunk_embeddings is not None:
            raise ValidationError("chunk_embeddings given to a non-chunked generator")
        if cfg.hn_architecture.input_dim != e_values.size:
            raise ValidationError(
                f"embedding dim {e_values.size} != generator input "
                f"{cfg.hn_architecture.input_dim}")
        theta = mlp_forward(h, e_values[None, :]).ravel().copy()
    return ParamVector(theta, cfg.target_architecture)


def _generate_on_tape(tape: Tape, h_leaf, e_tensor, cfg: HypernetConfig):
    """Tape-mode hn_generate: h_leaf holds the generator parameters (plus the
    chunk embeddings appended flat, when chunked); returns the flat target
    parameter tensor."""
    hn_arch = cfg.hn_architecture
    layers = tape_layers(tape, h_leaf, hn_arch)
    count = count_params(cfg.target_architecture)
    if cfg.chunked:
        k = cfg.num_chunks
        chunk_view = tape.view_mat(h_leaf, count_params(hn_arch),
                                   (k, cfg.chunk_embedding_dim))
        x = tape.concat_cols([tape.tile_rows(e_tensor, k), chunk_view])
        out = mlp_apply(tape, layers, x, hn_arch.activation)
        flat = tape.reshape(out, (k * cfg.chunk_dim,))
        return tape.view_vec(flat, 0, count)
    x = tape.reshape(e_tensor, (1, e_tensor.data.size))
    out = mlp_apply(tape, layers, x, hn_arch.activation)
    return tape.reshape(out, (count,))


def _init_chunk_embeddings(cfg: HypernetConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.chunk_embedding_dim)
    return rng.uniform(-bound, bound, size=(cfg.num_chunks, cfg.chunk_embedding_dim))


def hn_learn_task(state: HNState, demos: DemonstrationSet, config: StrategyConfig):
    """Two-step hypernetwork training on the next task.

    Each iteration first computes a candidate generator update from the
    task loss alone, then, holding that candidate fixed, adds the drift
    of the generated parameters of every earlier task away from targets
    cached at task start; the generator steps on the combined gradient
    while the task embedding steps on the task loss alone.
    """
    _check_demos(demos, config)
    start = time.perf_counter()
    task = state.num_tasks
    cfg = config.hypernet_config()
    target_arch = cfg.target_architecture
    if state.hn_params is None:
        state.hn_params = init_params(cfg.hn_architecture, derived_seed(config.seed, 3, 0))
        if cfg.chunked:
            state.chunk_embeddings = _init_chunk_embeddings(
                cfg, derived_seed(config.seed, 3, 1))

    old_embs = [e.values.copy() for e in state.embeddings]
    targets = [hn_generate(state.hn_params, e, cfg, state.chunk_embeddings).values
               for e in state.embeddings]
    emb = init_embedding(config.embedding_dim, derived_seed(config.seed, 1, task), task)

    hn_count = state.hn_params.values.size
    if cfg.chunked:
        h_all = np.concatenate([state.hn_params.values, state.chunk_embeddings.ravel()])
    else:
        h_all = state.hn_params.values.copy()

    obs = demos.stacked()
    ts = demos.timestamps
    dts = np.diff(ts)
    tvals = time_values(ts, demos.recording_frequency) if config.time_input else None
    reg_scale = 2.0 * cfg.beta / max(task - 1, 1)

    opt_h = AdamState.for_size(h_all.size, lr=config.learning_rate)
    opt_e = AdamState.for_size(emb.values.size, lr=config.learning_rate)
    history = []
    work = 0
    for it in range(config.train_iterations):
        tape = Tape()
        h_leaf = tape.leaf(h_all)
        e_leaf = tape.leaf(emb.values)
        theta_t = _generate_on_tape(tape, h_leaf, e_leaf, cfg)
        layers = tape_layers(tape, theta_t, target_arch)
        loss = unrolled_loss_on_tape(tape, layers, target_arch.activation, obs, dts,
                                     tvals, None, config.integrator)
        loss_val = loss.data.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        history.append(loss_val)
        tape.backward(loss)
        work += len(tape.records)
        g_h = h_leaf.grad
        g_e = e_leaf.grad
        candidate = adam_lookahead(opt_h, g_h, context=f"candidate iteration {it}")
        if task > 0:
            tape2 = Tape()
            h2 = tape2.leaf(h_all + candidate)
            terms = [tape2.sqerr_half(_generate_on_tape(tape2, h2, tape2.leaf(e_l), cfg),
                                      target)
                     for e_l, target in zip(old_embs, targets)]
            reg = tape2.scale(tape2.addn(terms), reg_scale)
            if not np.isfinite(reg.data.item()):
                raise TrainingDiverged(f"non-finite regularizer at iteration {it}")
            tape2.backward(reg)
            work += len(tape2.records)
            g_total = g_h + h2.grad
        else:
            g_total = g_h
        adam_step(opt_h, h_all, g_total, context=f"iteration {it}")
        adam_step(opt_e, emb.values, g_e, context=f"embedding iteration {it}")

    state.hn_params = ParamVector(h_all[:hn_count].copy(), cfg.hn_architecture)
    if cfg.chunked:
        state.chunk_embeddings = h_all[hn_count:].reshape(
            cfg.num_chunks, cfg.chunk_embedding_dim).copy()
    state.embeddings.append(emb)
    state.frequencies.append(demos.recording_frequency)
    state.stats.append(TaskStats(
        task_id=task,
        final_loss=history[-1] if history else float("nan"),
        wall_clock_seconds=time.perf_counter() - start,
        work_units=work,
        iterations=config.train_iterations,
    ))
    return state


# -- dispatch -------------------------------------------------------------------


_LEARN = {
    "SG": sg_learn_task,
    "FT": ft_learn_task,
    "REP": rep_learn_task,
    "SI": si_learn_task,
    "MAS": mas_learn_task,
    "HN": hn_learn_task,
    "CHN": hn_learn_task,
}


def learn_task(state, demos: DemonstrationSet, config: StrategyConfig):
    """Train the next task with the configured strategy; returns the state."""
    return _LEARN[config.variant](state, demos, config)


def predict(state, task_id: int, y0, timestamps, config: StrategyConfig) -> Trajectory:
    """Reproduce a learned task from a start state across given timestamps."""
    if not isinstance(task_id, (int, np.integer)) or not 0 <= task_id < state.num_tasks:
        raise ValidationError(
            f"unknown task_id {task_id}; {state.num_tasks} task(s) learned")
    freq = state.frequencies[task_id]
    if config.variant == "SG":
        return integrate(state.params[task_id], y0, timestamps, config.time_input,
                         None, config.integrator, freq)
    if config.variant in ("FT", "SI", "MAS"):
        emb = state.embeddings[task_id].values
        return integrate(state.params, y0, timestamps, config.time_input,
                         emb, config.integrator, freq)
    if config.variant == "REP":
        emb = state.buffer.embeddings[task_id].values
        return integrate(state.params, y0, timestamps, config.time_input,
                         emb, config.integrator, freq)
    cfg = config.hypernet_config()
    theta = hn_generate(state.hn_params, state.embeddings[task_id], cfg,
                        state.chunk_embeddings)
    return integrate(theta, y0, timestamps, config.time_input, None,
                     config.integrator, freq)


def total_param_count(state, config: StrategyConfig) -> int:
    """Trainable scalars accumulated so far (0 before the first task)."""
    m = state.num_tasks
    if m == 0:
        return 0
    if config.variant == "SG":
        return sum(pv.values.size for pv in state.params)
    if config.variant in ("FT", "SI", "MAS"):
        return state.params.values.size + m * config.embedding_dim
    if config.variant == "REP":
        return state.params.values.size + m * config.embedding_dim
    base = state.hn_params.values.size
    if state.chunk_embeddings is not None:
        base += state.chunk_embeddings.size
    return base + m * config.embedding_dim


def stored_sample_count(state) -> int:
    """Training points retained for replay (0 for everything but REP)."""
    if isinstance(state, REPState):
        return state.buffer.sample_count
    return 0


# -- facade ---------------------------------------------------------------------


class Strategy:
    """One continual learner: config plus mutable state."""

    def __init__(self, config: StrategyConfig, state=None):
        self.config = config
        self.state = new_state(config.variant) if state is None else state

    @property
    def num_tasks(self) -> int:
        return self.state.num_tasks

    def learn_task(self, demos: DemonstrationSet) -> TaskStats:
        learn_task(self.state, demos, self.config)
        return self.state.stats[-1]

    def predict(self, task_id: int, y0, timestamps) -> Trajectory:
        return predict(self.state, task_id, y0, timestamps, self.config)

    def total_param_count(self) -> int:
        return total_param_count(self.state, self.config)

    def stored_sample_count(self) -> int:
        return stored_sample_count(self.state)

    def save(self, dirpath) -> None:
        save_state(self.state, self.config, dirpath)

    @classmethod
    def load(cls, dirpath) -> "Strategy":
        config, state = load_state(dirpath)
        return cls(config, state)


# -- serialization ----------------------------------------------------------------

STATE_FORMAT_VERSION = 1


def _write_blob(dirpath: Path, name: str, values: np.ndarray) -> None:
    (dirpath / f"{name}.f64").write_bytes(
        np.ascontiguousarray(values, dtype=np.float64).astype("<f8").tobytes())


def _read_blob(dirpath: Path, name: str, size: int) -> np.ndarray:
    values = np.frombuffer((dirpath / f"{name}.f64").read_bytes(),
                           dtype="<f8").astype(np.float64)
    if values.size != size:
        raise ValidationError(
            f"blob {name}.f64 has {values.size} values, expected {size}")
    return values


def save_state(state, config: StrategyConfig, dirpath) -> None:
    """Write the strategy state as a JSON manifest plus parameter blobs."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": STATE_FORMAT_VERSION,
        "variant": config.variant,
        "config": config.to_dict(),
        "num_tasks": state.num_tasks,
        "frequencies": list(state.frequencies),
        "stats": [s.to_dict() for s in state.stats],
    }
    if config.variant == "SG":
        for i, pv in enumerate(state.params):
            _write_blob(dirpath, f"node_{i:03d}", pv.values)
    elif config.variant in ("FT", "SI", "MAS"):
        manifest["embeddings"] = [e.values.tolist() for e in state.embeddings]
        if state.params is not None:
            _write_blob(dirpath, "node", state.params.values)
        imp = state.importance
        if imp is not None:
            manifest["importance"] = {"c": imp.c, "xi": imp.xi,
                                      "steps_seen": imp.steps_seen}
            _write_blob(dirpath, "importance_omega_running", imp.omega_running)
            _write_blob(dirpath, "importance_omega_total", imp.omega_total)
            _write_blob(dirpath, "importance_theta_snapshot", imp.theta_snapshot)
            _write_blob(dirpath, "importance_delta", imp.delta)
    elif config.variant == "REP":
        manifest["embeddings"] = [e.values.tolist() for e in state.buffer.embeddings]
        if state.params is not None:
            _write_blob(dirpath, "node", state.params.values)
        replay = []
        for i, ds in enumerate(state.buffer.stored):
            replay.append({"name": ds.name, "recording_frequency": ds.recording_frequency,
                           "T": ds.T, "D": len(ds.demos), "d": ds.dim})
            _write_blob(dirpath, f"replay_{i:03d}_points", ds.stacked())
            _write_blob(dirpath, f"replay_{i:03d}_ts", ds.timestamps)
        manifest["replay"] = replay
    else:
        manifest["embeddings"] = [e.values.tolist() for e in state.embeddings]
        if state.hn_params is not None:
            _write_blob(dirpath, "hypernet", state.hn_params.values)
        if state.chunk_embeddings is not None:
            _write_blob(dirpath, "chunk_embeddings", state.chunk_embeddings)
    (dirpath / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_state(dirpath):
    """Rebuild (config, state) from a directory written by save_state."""
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "manifest.json").read_text())
    if manifest.get("format_version") != STATE_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported state format {manifest.get('format_version')!r}")
    config = StrategyConfig.from_dict(manifest["config"])
    state = new_state(config.variant)
    state.frequencies = list(manifest["frequencies"])
    state.stats = [TaskStats.from_dict(s) for s in manifest["stats"]]
    m = manifest["num_tasks"]
    if m != len(state.frequencies):
        raise ValidationError(
            f"manifest num_tasks {m} does not match frequencies ({len(state.frequencies)})")
    arch = config.node_architecture()
    if config.variant == "SG":
        state.params = [ParamVector(_read_blob(dirpath, f"node_{i:03d}",
                                               count_params(arch)), arch)
                        for i in range(m)]
    elif config.variant in ("FT", "SI", "MAS"):
        state.embeddings = [TaskEmbedding(i, v)
                            for i, v in enumerate(manifest["embeddings"])]
        if (dirpath / "node.f64").exists():
            state.params = ParamVector(_read_blob(dirpath, "node", count_params(arch)), arch)
        imp_meta = manifest.get("importance")
        if imp_meta is not None:
            n = count_params(arch)
            state.importance = ImportanceState(
                omega_running=_read_blob(dirpath, "importance_omega_running", n),
                omega_total=_read_blob(dirpath, "importance_omega_total", n),
                theta_snapshot=_read_blob(dirpath, "importance_theta_snapshot", n),
                delta=_read_blob(dirpath, "importance_delta", n),
                c=imp_meta["c"], xi=imp_meta["xi"], steps_seen=imp_meta["steps_seen"])
    elif config.variant == "REP":
        state.buffer.embeddings = [TaskEmbedding(i, v)
                                   for i, v in enumerate(manifest["embeddings"])]
        if (dirpath / "node.f64").exists():
            state.params = ParamVector(_read_blob(dirpath, "node", count_params(arch)), arch)
        for i, meta in enumerate(manifest["replay"]):
            t, d_count, d = meta["T"], meta["D"], meta["d"]
            points = _read_blob(dirpath, f"replay_{i:03d}_points",
                                t * d_count * d).reshape(t, d_count, d)
            ts = _read_blob(dirpath, f"replay_{i:03d}_ts", t)
            demos = [Trajectory(points[:, j, :], ts) for j in range(d_count)]
            state.buffer.stored.append(DemonstrationSet(
                demos, name=meta["name"],
                recording_frequency=meta["recording_frequency"]))
    else:
        state.embeddings = [TaskEmbedding(i, v)
                            for i, v in enumerate(manifest["embeddings"])]
        cfg = config.hypernet_config()
        if (dirpath / "hypernet.f64").exists():
            state.hn_params = ParamVector(
                _read_blob(dirpath, "hypernet", count_params(cfg.hn_architecture)),
                cfg.hn_architecture)
        if cfg.chunked and (dirpath / "chunk_embeddings.f64").exists():
            state.chunk_embeddings = _read_blob(
                dirpath, "chunk_embeddings",
                cfg.num_chunks * cfg.chunk_embedding_dim,
            ).reshape(cfg.num_chunks, cfg.chunk_embedding_dim)
    return config, state
