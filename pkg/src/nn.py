"""Small multilayer perceptrons with a hand-written reverse pass.

Layers are affine maps followed by LeakyReLU, with inverted dropout after a
configurable hidden layer and a linear output layer. ``forward`` records a
``Tape``; ``backward`` consumes it once and returns exact gradients. ADAM and a
reduce-on-plateau schedule operate on flat ``{name: array}`` parameter maps so
every trainable piece of a model (networks and priors alike) is updated the
same way.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from config.defaults import (
    ADAM_BETAS,
    ADAM_EPS,
    DROPOUT_AFTER_HIDDEN,
    MIN_LEARNING_RATE,
    PLATEAU_DECAY,
    PLATEAU_MIN_IMPROVEMENT,
    PLATEAU_PATIENCE,
)
from .errors import ConfigError, ShapeError, StaleTapeError
from .ndmath import Matrix, RngStream, load_matrix_csv, save_matrix_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one MLP.

    ``dropout_after`` counts hidden layers from 1; dropout is applied to that
    layer's activations. ``None`` or a rate of 0 disables it.
    """

    layer_widths: Tuple[int, ...]
    activation_slope: float = 0.1
    dropout_rate: float = 0.0
    dropout_after: Optional[int] = DROPOUT_AFTER_HIDDEN
    final_linear: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ConfigError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError(f"layer widths must be >= 1, got {self.layer_widths}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0.0 < self.activation_slope < 1.0:
            raise ConfigError(f"activation_slope must be in (0, 1), got {self.activation_slope}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    def dropout_at(self, layer: int) -> bool:
        """Whether dropout follows the activation of affine layer ``layer`` (0-based)."""
        if self.dropout_rate == 0.0 or self.dropout_after is None:
            return False
        is_hidden = layer < self.n_layers - 1 or not self.final_linear
        return is_hidden and layer + 1 == self.dropout_after

    def to_dict(self) -> Dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation_slope": self.activation_slope,
            "dropout_rate": self.dropout_rate,
            "dropout_after": self.dropout_after,
            "final_linear": self.final_linear,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MlpSpec":
        return cls(
            layer_widths=tuple(data["layer_widths"]),
            activation_slope=data.get("activation_slope", 0.1),
            dropout_rate=data.get("dropout_rate", 0.0),
            dropout_after=data.get("dropout_after", DROPOUT_AFTER_HIDDEN),
            final_linear=data.get("final_linear", True),
        )


@dataclass
class MlpParams:
    """Per-layer weights (``fan_in x fan_out``) and bias vectors."""

    weights: List[Matrix]
    biases: List[np.ndarray]

    def named_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        """Live references keyed ``{prefix}.w{i}`` / ``{prefix}.b{i}``."""
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"{prefix}.w{i}"] = w
            named[f"{prefix}.b{i}"] = b
        return named

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ShapeError(f"expected {spec.n_layers} layers, got {len(self.weights)}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(f"layer {i}: weight {w.shape}, bias {b.shape} do not match {fan_in}->{fan_out}")


@dataclass
class Gradients:
    """Gradients congruent with ``MlpParams`` plus the gradient at the input."""

    weights: List[Matrix]
    biases: List[np.ndarray]
    input: Matrix

    def named_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        return MlpParams(self.weights, self.biases).named_arrays(prefix)


@dataclass
class Tape:
    spec: MlpSpec
    params: MlpParams
    inputs: List[Matrix]
    pre_activations: List[Optional[Matrix]]
    masks: List[Optional[Matrix]]
    labels: Optional[np.ndarray]
    output_shape: Tuple[int, int]
    consumed: bool = False


def leaky_relu(a: np.ndarray, slope: float) -> np.ndarray:
    return np.where(a > 0, a, slope * a)


def init_xavier_uniform(spec: MlpSpec, rng: RngStream) -> MlpParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def one_hot(labels: np.ndarray, n_labels: int) -> Matrix:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_labels))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def forward(
    params: MlpParams,
    spec: MlpSpec,
    x: Matrix,
    train_mode: bool,
    rng: Optional[RngStream] = None,
    labels: Optional[np.ndarray] = None,
    n_labels: int = 0,
) -> Tuple[Matrix, Tape]:
    """Run the network on a batch.

    With ``labels`` the input is ``[x, one_hot(labels, n_labels)]``; the one-hot
    block of the first layer is applied as a row lookup so the ``x`` block is
    multiplied exactly as it would be without conditioning.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got shape {x.shape}")
    conditioned = labels is not None
    width = x.shape[1] + (n_labels if conditioned else 0)
    if width != spec.input_width:
        raise ShapeError(f"input has width {width}, network expects {spec.input_width}")

    inputs, pre_acts, masks = [], [], []
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        if i == 0 and conditioned:
            a = h @ w[: x.shape[1]] + w[x.shape[1]:][labels] + b
        else:
            a = h @ w + b
        last = i == spec.n_layers - 1
        if last and spec.final_linear:
            pre_acts.append(None)
            masks.append(None)
            h = a
            continue
        pre_acts.append(a)
        h = leaky_relu(a, spec.activation_slope)
        if train_mode and spec.dropout_at(i):
            if rng is None:
                raise ValueError("dropout in train mode needs an rng")
            keep = 1.0 - spec.dropout_rate
            mask = (rng.uniform(0.0, 1.0, h.shape) < keep) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)

    tape = Tape(
        spec=spec,
        params=params,
        inputs=inputs,
        pre_activations=pre_acts,
        masks=masks,
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        output_shape=h.shape,
    )
    return h, tape


def backward(tape: Tape, output_grad: Matrix) -> Gradients:
    if tape.consumed:
        raise StaleTapeError("tape has already been used for a backward pass")
    if output_grad.shape != tape.output_shape:
        raise StaleTapeError(f"output gradient {output_grad.shape} does not match output {tape.output_shape}")
    tape.consumed = True

    spec, params = tape.spec, tape.params
    n = spec.n_layers
    grad_w: List[Matrix] = [None] * n
    grad_b: List[np.ndarray] = [None] * n
    g = output_grad
    for i in reversed(range(n)):
        if tape.pre_activations[i] is not None:
            if tape.masks[i] is not None:
                g = g * tape.masks[i]
            g = g * np.where(tape.pre_activations[i] > 0, 1.0, spec.activation_slope)
        h_in = tape.inputs[i]
        w = params.weights[i]
        grad_b[i] = g.sum(axis=0)
        if i == 0 and tape.labels is not None:
            d_x = h_in.shape[1]
            gw = np.zeros_like(w)
            gw[:d_x] = h_in.T @ g
            np.add.at(gw[d_x:], tape.labels, g)
            grad_w[i] = gw
            g = g @ w[:d_x].T
        else:
            grad_w[i] = h_in.T @ g
            g = g @ w.T
    return Gradients(weights=grad_w, biases=grad_b, input=g)


@dataclass
class AdamState:
    lr: float
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    eps: float = ADAM_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
) -> Tuple[Mapping[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM descent step, updating ``params`` in place."""
    missing = set(params) - set(grads)
    if missing:
        raise ShapeError(f"no gradient for {sorted(missing)}")
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


@dataclass
class PlateauScheduler:
    """Reduce-on-plateau for a metric that should increase (an ELBO)."""

    patience: int = PLATEAU_PATIENCE
    decay_factor: float = PLATEAU_DECAY
    min_improvement: float = PLATEAU_MIN_IMPROVEMENT
    min_lr: float = MIN_LEARNING_RATE
    best_metric: float = float("-inf")
    bad_windows: int = 0

    def __post_init__(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


def plateau_update(sched: PlateauScheduler, metric: float, current_lr: float) -> float:
    if not np.isfinite(metric):
        raise ValueError(f"plateau metric must be finite, got {metric}")
    if metric > sched.best_metric + sched.min_improvement:
        sched.best_metric = metric
        sched.bad_windows = 0
        return current_lr
    sched.bad_windows += 1
    if sched.bad_windows < sched.patience:
        return current_lr
    sched.bad_windows = 0
    new_lr = max(current_lr * sched.decay_factor, sched.min_lr)
    if new_lr < current_lr:
        logger.info("plateau: learning rate %.3g -> %.3g", current_lr, new_lr)
    return new_lr


def save_mlp(params: MlpParams, spec: MlpSpec, directory) -> Path:
    """Write ``spec.json`` plus ``w{i}.csv`` / ``b{i}.csv`` per layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"spec": spec.to_dict(), "layers": []}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        save_matrix_csv(w, directory / f"w{i}.csv")
        save_matrix_csv(b[None, :], directory / f"b{i}.csv")
        manifest["layers"].append({"weight": f"w{i}.csv", "bias": f"b{i}.csv"})
    with open(directory / "spec.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return directory


def load_mlp(directory) -> Tuple[MlpParams, MlpSpec]:
    directory = Path(directory)
    with open(directory / "spec.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    spec = MlpSpec.from_dict(manifest["spec"])
    weights = [load_matrix_csv(directory / layer["weight"]) for layer in manifest["layers"]]
    biases = [load_matrix_csv(directory / layer["bias"])[0] for layer in manifest["layers"]]
    params = MlpParams(weights, biases)
    params.check(spec)
    return params, spec
