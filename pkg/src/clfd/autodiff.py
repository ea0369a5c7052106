"""Reverse-mode autodiff over numpy arrays, MLP building blocks, and Adam.

The tape records primitive operations in execution order; because every
operation is appended when it runs, the record list is already a topological
order and backward is a single reversed sweep. Tapes are single-use: build one
per training iteration, call backward once, throw it away.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDiverged, ValidationError

ACTIVATIONS = ("elu", "relu")


class Tensor:
    """Array-valued node. Leaves are created via Tape.leaf, results via ops."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def _acc(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Accumulate g into t.grad.

    own=True promises g is freshly allocated with no other live reference, so
    it can be adopted directly; otherwise the first accumulation copies to
    avoid aliasing a buffer someone else may still mutate.
    """
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


class Tape:
    """Execution-ordered record of operations with reference-holding closures."""

    def __init__(self):
        self.records: list = []  # backward closures, execution order

    # -- construction -------------------------------------------------------

    def leaf(self, data) -> Tensor:
        return Tensor(data)

    def _push(self, out: Tensor, backward) -> Tensor:
        self.records.append((out, backward))
        return out

    # -- primitive ops ------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data + b.data)

        def backward(g):
            _acc(a, g)
            _acc(b, g)

        return self._push(out, backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data - b.data)

        def backward(g):
            _acc(a, g)
            _acc(b, -g, own=True)

        return self._push(out, backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data * b.data)

        def backward(g):
            _acc(a, g * b.data, own=True)
            _acc(b, g * a.data, own=True)

        return self._push(out, backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        out = Tensor(a.data * c)

        def backward(g):
            _acc(a, g * c, own=True)

        return self._push(out, backward)

    def axpy(self, y: Tensor, v: Tensor, s: float) -> Tensor:
        """y + s*v with s a plain float (one fused node per integrator step)."""
        out = Tensor(y.data + s * v.data)

        def backward(g):
            _acc(y, g)
            _acc(v, s * g, own=True)

        return self._push(out, backward)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        out = Tensor(a.data @ b.data)

        def backward(g):
            _acc(a, g @ b.data.T, own=True)
            _acc(b, a.data.T @ g, own=True)

        return self._push(out, backward)

    def linear(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """x @ w + b with bias broadcast over rows."""
        out = Tensor(x.data @ w.data + b.data)

        def backward(g):
            _acc(x, g @ w.data.T, own=True)
            _acc(w, x.data.T @ g, own=True)
            _acc(b, g.sum(axis=0), own=True)

        return self._push(out, backward)

    def linear_act(self, x: Tensor, w: Tensor, b: Tensor, act: str | None) -> Tensor:
        """Fused act(x @ w + b); act None means identity (output layer)."""
        pre = x.data @ w.data + b.data
        if act == "elu":
            pos = pre > 0
            out_data = np.where(pos, pre, np.expm1(pre))
        elif act == "relu":
            pos = pre > 0
            out_data = np.where(pos, pre, 0.0)
        else:
            out_data = pre
        out = Tensor(out_data)

        def backward(g):
            if act == "elu":
                gpre = np.where(pos, g, g * (out_data + 1.0))
            elif act == "relu":
                gpre = np.where(pos, g, 0.0)
            else:
                gpre = g
            _acc(x, gpre @ w.data.T, own=True)
            _acc(w, x.data.T @ gpre, own=True)
            _acc(b, gpre.sum(axis=0), own=True)

        return self._push(out, backward)

    def input_linear_act(self, y: Tensor, w: Tensor, b: Tensor, act: str | None,
                         extra: Tensor | None = None, tval: float | None = None) -> Tensor:
        """Fused first layer of the field: act([y | extra | t] @ w + b) without
        materializing the concatenated input. Row layout of w: state rows,
        then extra rows, then one time row (when tval is given). extra is a
        flat vector broadcast across the batch rows of y.
        """
        d = y.data.shape[1]
        n_extra = 0 if extra is None else extra.data.size
        wd = w.data
        pre = y.data @ wd[:d] + b.data
        if extra is not None:
            pre = pre + extra.data @ wd[d:d + n_extra]
        if tval is not None:
            pre = pre + tval * wd[d + n_extra]
        if act == "elu":
            pos = pre > 0
            out_data = np.where(pos, pre, np.expm1(pre))
        elif act == "relu":
            pos = pre > 0
            out_data = np.where(pos, pre, 0.0)
        else:
            out_data = pre
        out = Tensor(out_data)

        def backward(g):
            if act == "elu":
                gpre = np.where(pos, g, g * (out_data + 1.0))
            elif act == "relu":
                gpre = np.where(pos, g, 0.0)
            else:
                gpre = g
            gs = gpre.sum(axis=0)
            gw = np.zeros_like(wd)
            gw[:d] = y.data.T @ gpre
            if extra is not None:
                gw[d:d + n_extra] = np.outer(extra.data, gs)
                _acc(extra, wd[d:d + n_extra] @ gs, own=True)
            if tval is not None:
                gw[d + n_extra] = tval * gs
            _acc(w, gw, own=True)
            _acc(b, gs, own=True)
            _acc(y, gpre @ wd[:d].T, own=True)

        return self._push(out, backward)

    def elu(self, x: Tensor) -> Tensor:
        pos = x.data > 0
        out_data = np.where(pos, x.data, np.expm1(x.data))
        out = Tensor(out_data)

        def backward(g):
            _acc(x, np.where(pos, g, g * (out_data + 1.0)), own=True)

        return self._push(out, backward)

    def relu(self, x: Tensor) -> Tensor:
        pos = x.data > 0
        out = Tensor(np.where(pos, x.data, 0.0))

        def backward(g):
            _acc(x, np.where(pos, g, 0.0), own=True)

        return self._push(out, backward)

    def concat_cols(self, parts: list[Tensor]) -> Tensor:
        widths = [p.data.shape[1] for p in parts]
        out = Tensor(np.hstack([p.data for p in parts]))

        def backward(g):
            off = 0
            for p, w in zip(parts, widths):
                _acc(p, g[:, off:off + w])
                off += w

        return self._push(out, backward)

    def tile_rows(self, v: Tensor, n: int) -> Tensor:
        """Broadcast a flat vector to n identical rows."""
        out = Tensor(np.tile(v.data, (n, 1)))

        def backward(g):
            _acc(v, g.sum(axis=0), own=True)

        return self._push(out, backward)

    def view_mat(self, flat: Tensor, offset: int, shape: tuple[int, int]) -> Tensor:
        size = shape[0] * shape[1]
        out = Tensor(flat.data[offset:offset + size].reshape(shape))

        def backward(g):
            if flat.grad is None:
                flat.grad = np.zeros_like(flat.data)
            flat.grad[offset:offset + size] += g.ravel()

        return self._push(out, backward)

    def view_vec(self, flat: Tensor, offset: int, size: int) -> Tensor:
        out = Tensor(flat.data[offset:offset + size])

        def backward(g):
            if flat.grad is None:
                flat.grad = np.zeros_like(flat.data)
            flat.grad[offset:offset + size] += g

        return self._push(out, backward)

    def reshape(self, x: Tensor, shape: tuple[int, ...]) -> Tensor:
        out = Tensor(x.data.reshape(shape))

        def backward(g):
            _acc(x, g.reshape(x.data.shape))

        return self._push(out, backward)

    def sum(self, x: Tensor) -> Tensor:
        out = Tensor(x.data.sum())

        def backward(g):
            if x.grad is None:
                x.grad = np.full(x.data.shape, g)
            else:
                x.grad += g

        return self._push(out, backward)

    def sqsum(self, x: Tensor) -> Tensor:
        """sum(x**2) as a scalar."""
        out = Tensor((x.data * x.data).sum())

        def backward(g):
            _acc(x, 2.0 * g * x.data, own=True)

        return self._push(out, backward)

    def sqerr_half(self, pred: Tensor, target: np.ndarray) -> Tensor:
        """0.5 * sum((pred - target)**2) against a constant target."""
        diff = pred.data - target
        out = Tensor(0.5 * (diff * diff).sum())

        def backward(g):
            _acc(pred, g * diff, own=True)

        return self._push(out, backward)

    def addn(self, parts: list[Tensor]) -> Tensor:
        out = Tensor(sum(p.data for p in parts))

        def backward(g):
            for p in parts:
                _acc(p, g)

        return self._push(out, backward)

    # -- backward -----------------------------------------------------------

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for out, back in reversed(self.records):
            if out.grad is not None:
                back(out.grad)


# -- architecture and parameter vectors --------------------------------------


@dataclass(frozen=True)
class Architecture:
    """Fully connected net shape: input -> hidden[0] -> ... -> output."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "elu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValidationError(f"architecture.input_dim must be >= 1, got {self.input_dim}")
        if self.output_dim < 1:
            raise ValidationError(f"architecture.output_dim must be >= 1, got {self.output_dim}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValidationError(f"architecture.hidden entries must be >= 1, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(
                f"architecture.activation must be one of {ACTIVATIONS}, got {self.activation!r}")


def layer_dims(arch: Architecture) -> list[tuple[int, int]]:
    """(fan_in, fan_out) for each layer including the linear output layer."""
    dims = [arch.input_dim, *arch.hidden, arch.output_dim]
    return list(zip(dims[:-1], dims[1:]))


def count_params(arch: Architecture) -> int:
    """Total trainable scalars: sum over layers of (fan_in + 1) * fan_out."""
    return sum((fi + 1) * fo for fi, fo in layer_dims(arch))


def param_layout(arch: Architecture) -> list[tuple[str, int, tuple[int, ...]]]:
    """(name, offset, shape) triples mapping the flat vector to layer tensors."""
    layout = []
    off = 0
    for i, (fi, fo) in enumerate(layer_dims(arch)):
        layout.append((f"w{i}", off, (fi, fo)))
        off += fi * fo
        layout.append((f"b{i}", off, (fo,)))
        off += fo
    return layout


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus the architecture that interprets it."""

    values: np.ndarray
    arch: Architecture
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        n = count_params(self.arch)
        if self.values.size != n:
            raise ValidationError(
                f"param vector length {self.values.size} does not match architecture ({n})")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.arch, self.seed)


def init_params(arch: Architecture, seed: int) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer, weights then bias."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fi, fo in layer_dims(arch):
        bound = 1.0 / np.sqrt(fi)
        chunks.append(rng.uniform(-bound, bound, size=fi * fo))
        chunks.append(rng.uniform(-bound, bound, size=fo))
    return ParamVector(np.concatenate(chunks), arch, seed)


def save_params(pv: ParamVector, base: str | Path) -> None:
    """Write <base>.json (architecture, length, seed) and <base>.f64 (LE float64)."""
    base = Path(base)
    manifest = {
        "architecture": {
            "input_dim": pv.arch.input_dim,
            "hidden": list(pv.arch.hidden),
            "output_dim": pv.arch.output_dim,
            "activation": pv.arch.activation,
        },
        "length": int(pv.values.size),
        "seed": pv.seed,
    }
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    base.with_suffix(".f64").write_bytes(pv.values.astype("<f8").tobytes())


def load_params(base: str | Path) -> ParamVector:
    base = Path(base)
    manifest = json.loads(base.with_suffix(".json").read_text())
    a = manifest["architecture"]
    arch = Architecture(a["input_dim"], tuple(a["hidden"]), a["output_dim"], a["activation"])
    values = np.frombuffer(base.with_suffix(".f64").read_bytes(), dtype="<f8").astype(np.float64)
    if values.size != manifest["length"]:
        raise ValidationError(
            f"blob length {values.size} does not match manifest length {manifest['length']}")
    return ParamVector(values, arch, manifest.get("seed"))


# -- MLP forward --------------------------------------------------------------


def tape_layers(tape: Tape, theta: Tensor, arch: Architecture) -> list[tuple[Tensor, Tensor]]:
    """Slice a flat parameter tensor into per-layer (w, b) views, once per tape."""
    layers = []
    layout = param_layout(arch)
    for i in range(0, len(layout), 2):
        _, w_off, w_shape = layout[i]
        _, b_off, b_shape = layout[i + 1]
        layers.append((tape.view_mat(theta, w_off, w_shape),
                       tape.view_vec(theta, b_off, b_shape[0])))
    return layers


def mlp_apply(tape: Tape, layers: list[tuple[Tensor, Tensor]], x: Tensor,
              activation: str) -> Tensor:
    for w, b in layers[:-1]:
        x = tape.linear_act(x, w, b, activation)
    w, b = layers[-1]
    return tape.linear_act(x, w, b, None)


def _numpy_layers(values: np.ndarray, arch: Architecture):
    layers = []
    layout = param_layout(arch)
    for i in range(0, len(layout), 2):
        _, w_off, w_shape = layout[i]
        _, b_off, b_shape = layout[i + 1]
        layers.append((values[w_off:w_off + w_shape[0] * w_shape[1]].reshape(w_shape),
                       values[b_off:b_off + b_shape[0]]))
    return layers


def mlp_forward(params: ParamVector, x: np.ndarray, tape: Tape | None = None) -> np.ndarray | Tensor:
    """Batched forward pass; rows of x are samples.

    Without a tape this is a plain numpy evaluation. With a tape the parameter
    vector becomes a leaf and the returned Tensor carries gradients back to it
    (read them from mlp_forward.last_theta after tape.backward).
    """
    x_arr = np.asarray(x, dtype=np.float64)
    if x_arr.ndim != 2 or x_arr.shape[1] != params.arch.input_dim:
        raise ValidationError(
            f"input shape {x_arr.shape} does not match input_dim {params.arch.input_dim}")
    if tape is None:
        out = x_arr
        layers = _numpy_layers(params.values, params.arch)
        for w, b in layers[:-1]:
            h = out @ w + b
            if params.arch.activation == "elu":
                out = np.where(h > 0, h, np.expm1(h))
            else:
                out = np.maximum(h, 0.0)
        w, b = layers[-1]
        return out @ w + b
    theta = tape.leaf(params.values)
    mlp_forward.last_theta = theta
    layers = tape_layers(tape, theta, params.arch)
    return mlp_apply(tape, layers, tape.leaf(x_arr), params.arch.activation)


# -- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments for one flat parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]
    t: int = 0

    @classmethod
    def for_size(cls, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=np.zeros(size), v=np.zeros(size), t=0)


def _check_finite(grad: np.ndarray, context: str) -> None:
    if not np.isfinite(grad).all():
        raise TrainingDiverged(f"non-finite gradient in {context}")


def adam_step(state: AdamState, values: np.ndarray, grad: np.ndarray,
              context: str = "adam_step") -> np.ndarray:
    """One in-place update; returns the applied delta."""
    _check_finite(grad, context)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    delta = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    values += delta
    return delta


def adam_lookahead(state: AdamState, grad: np.ndarray,
                   context: str = "adam_lookahead") -> np.ndarray:
    """The delta one adam_step would apply, without mutating the state."""
    _check_finite(grad, context)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
