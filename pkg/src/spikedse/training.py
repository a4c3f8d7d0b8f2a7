"""Direct training of the spiking network with surrogate gradients.

The backward pass unrolls the full membrane recurrence over all timesteps
(no truncation) and over all layers, substituting a rectangular surrogate
for the spike derivative:

    d spike / dV  ~=  1 / (2a)   if |V - v_threshold| <= a, else 0

Two consistency modes exist. "hard" is normal training: the forward pass
emits binary spikes and the surrogate only appears in backward. "relaxed"
replaces the threshold with the surrogate's clipped-linear primitive in
forward as well, which makes forward and backward exactly consistent so
central finite differences can certify the backward implementation.

The loss is mean squared error between per-class firing rates and the
one-hot target. Optimization is minibatch SGD with momentum, a fixed
seeded shuffle schedule, and per-sample gradients reduced in index order,
so results are bit-identical across reruns and worker counts.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .errors import EmptyDataset, MissingTrace
from .events import SpikeFrames
from .network import (
    ForwardResult,
    NetworkSpec,
    SpikeMode,
    WeightSet,
    avg_pool_backward,
    conv_backward,
    decode,
    forward,
    init_weights,
)
from .quantize import QuantConfig, grid_aligned


@dataclass(frozen=True)
class SurrogateParams:
    """Rectangular surrogate window of radius half_width around threshold."""

    half_width: float = 0.5

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 20
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    timesteps: int = 10
    window: int = 50
    lr_decay_epoch: int = 120
    lr_decay_factor: float = 0.1
    surrogate: SurrogateParams = field(default_factory=SurrogateParams)
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def surrogate_derivative(
    v: np.ndarray | float, v_threshold: float, params: SurrogateParams
) -> np.ndarray | float:
    """Spike pseudo-derivative: 1/(2a) inside the window, 0 outside."""
    a = params.half_width
    inside = np.abs(np.asarray(v, dtype=float) - v_threshold) <= a
    out = np.where(inside, 1.0 / (2.0 * a), 0.0)
    return float(out) if np.isscalar(v) else out


def loss(rates: np.ndarray, label: int) -> float:
    """Mean squared error between firing rates and the one-hot target."""
    rates = np.asarray(rates, dtype=float)
    onehot = np.zeros_like(rates)
    onehot[label] = 1.0
    return float(np.mean((rates - onehot) ** 2))


@dataclass
class GradientSet:
    """dL/dW and dL/db shaped like the WeightSet (None for pooling)."""

    layers: list[dict | None]

    @classmethod
    def zeros_like(cls, weights: WeightSet) -> "GradientSet":
        return cls(
            layers=[
                None
                if lw is None
                else {"weight": np.zeros_like(lw.weight), "bias": np.zeros_like(lw.bias)}
                for lw in weights.layers
            ]
        )

    def add_(self, other: "GradientSet") -> None:
        for mine, theirs in zip(self.layers, other.layers):
            if mine is not None:
                mine["weight"] += theirs["weight"]
                mine["bias"] += theirs["bias"]

    def scale_(self, factor: float) -> None:
        for g in self.layers:
            if g is not None:
                g["weight"] *= factor
                g["bias"] *= factor


def backward(
    net: NetworkSpec,
    weights: WeightSet,
    frames: SpikeFrames,
    label: int,
    *,
    surrogate: SurrogateParams | None = None,
    spike_mode: SpikeMode = "hard",
    forward_result: ForwardResult | None = None,
) -> tuple[GradientSet, float]:
    """Backpropagate through time and space; returns (gradients, loss).

    Runs a recorded forward pass unless one is supplied. The temporal
    recurrence contributes two paths per layer and step: through the
    retained potential leak*(1 - s) and through the reset mask -leak*V.
    """
    surrogate = surrogate or SurrogateParams()
    if forward_result is None:
        forward_result = forward(
            net,
            weights,
            frames,
            record=True,
            spike_mode=spike_mode,
            surrogate_half_width=surrogate.half_width,
        )
    trace = forward_result.trace
    if trace is None:
        raise MissingTrace("backward needs a forward pass recorded with record=True")

    T = frames.timesteps
    lif = net.lif
    n_layers = len(net.layers)
    out_index = n_layers - 1
    rates = forward_result.counts / T
    onehot = np.zeros_like(rates)
    onehot[label] = 1.0
    loss_value = float(np.mean((rates - onehot) ** 2))
    # dL/ds_out at every timestep (rates are a mean over T)
    d_out_spike = 2.0 * (rates - onehot) / (rates.size * T)

    grads = GradientSet.zeros_like(weights)
    # dL/dV carried from timestep t+1, per spiking layer
    carry_v: list[np.ndarray | None] = [None] * n_layers

    pool_input_shapes = _pool_input_shapes(net)

    for t in range(T - 1, -1, -1):
        d_spike_downstream: np.ndarray | None = None
        for i in range(n_layers - 1, -1, -1):
            layer = net.layers[i]
            if layer.kind == "avg_pool":
                if d_spike_downstream is not None:
                    d_spike_downstream = avg_pool_backward(
                        d_spike_downstream, pool_input_shapes[i], layer.kernel
                    )
                continue

            v = trace[i].potentials[t]
            s = trace[i].spikes[t]
            d_s = d_out_spike.copy() if i == out_index else None
            if d_spike_downstream is not None:
                d_s = d_spike_downstream if d_s is None else d_s + d_spike_downstream
            if d_s is None:
                d_s = np.zeros_like(v)
            cv = carry_v[i]
            if cv is not None:
                # s_t enters V_{t+1} through the reset mask
                d_s = d_s + cv * (-lif.leak * v)
            d_v = d_s * surrogate_derivative(v, lif.v_threshold, surrogate)
            if cv is not None:
                d_v = d_v + cv * lif.leak * (1.0 - s)
            carry_v[i] = d_v

            x_in = trace[i].inputs[t]
            g = grads.layers[i]
            if layer.kind == "conv":
                dw, db, dx = conv_backward(
                    d_v, x_in, weights.layers[i].weight, layer.padding, layer.stride
                )
                g["weight"] += dw
                g["bias"] += db
                d_spike_downstream = dx
            else:
                d_v_flat = d_v.reshape(-1)
                g["weight"] += np.outer(d_v_flat, x_in.reshape(-1))
                g["bias"] += d_v_flat
                d_spike_downstream = (
                    weights.layers[i].weight.T @ d_v_flat
                ).reshape(x_in.shape)
    return grads, loss_value


def _pool_input_shapes(net: NetworkSpec) -> list[tuple | None]:
    """Input tensor shape of each pooling layer, from the spec alone."""
    size = net.input_window
    channels = net.layers[0].in_channels
    shapes: list[tuple | None] = []
    for layer in net.layers:
        if layer.kind == "avg_pool":
            shapes.append((channels, size, size))
            size = size // layer.kernel
        elif layer.kind == "conv":
            shapes.append(None)
            size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
        else:
            shapes.append(None)
            size = 1
        channels = layer.out_channels
    return shapes


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float


def _sgd_step(
    weights: WeightSet,
    grads: GradientSet,
    velocity: GradientSet,
    lr: float,
    momentum: float,
) -> None:
    for lw, g, v in zip(weights.layers, grads.layers, velocity.layers):
        if lw is None:
            continue
        v["weight"] = momentum * v["weight"] - lr * g["weight"]
        v["bias"] = momentum * v["bias"] - lr * g["bias"]
        lw.weight = lw.weight + v["weight"]
        lw.bias = lw.bias + v["bias"]


def _batch_gradients(
    net: NetworkSpec,
    weights: WeightSet,
    batch: list[tuple[SpikeFrames, int]],
    surrogate: SurrogateParams,
    workers: int,
) -> tuple[GradientSet, float]:
    """Mean gradient over a batch, reduced in fixed index order."""

    def one(item):
        frames, label = item
        return backward(net, weights, frames, label, surrogate=surrogate)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, batch))
    else:
        results = [one(item) for item in batch]

    total = GradientSet.zeros_like(weights)
    loss_sum = 0.0
    for g, l in results:
        total.add_(g)
        loss_sum += l
    total.scale_(1.0 / len(batch))
    return total, loss_sum / len(batch)


def train(
    net: NetworkSpec,
    data: list[tuple[SpikeFrames, int]],
    config: TrainConfig,
    *,
    initial: WeightSet | None = None,
    test_data: list[tuple[SpikeFrames, int]] | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    workers: int = 1,
) -> tuple[WeightSet, list[EpochStats]]:
    """Minibatch SGD with momentum; deterministic for a fixed seed.

    Returns the trained weights and the per-epoch accuracy/loss log, also
    written as "epoch,train_acc,test_acc,loss" CSV when log_path is given.
    """
    if not data:
        raise EmptyDataset("training split is empty")
    weights = initial.copy() if initial is not None else init_weights(net, config.seed)
    if config.epochs == 0:
        return weights, []

    velocity = GradientSet.zeros_like(weights)
    rng = np.random.default_rng(config.seed)
    log: list[EpochStats] = []

    for epoch in range(config.epochs):
        lr = config.learning_rate
        if epoch >= config.lr_decay_epoch:
            lr *= config.lr_decay_factor
        order = rng.permutation(len(data))
        loss_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [data[j] for j in order[start : start + config.batch_size]]
            grads, batch_loss = _batch_gradients(
                net, weights, batch, config.surrogate, workers
            )
            _sgd_step(weights, grads, velocity, lr, config.momentum)
            loss_sum += batch_loss
            n_batches += 1

        stats = EpochStats(
            epoch=epoch,
            train_acc=evaluate(net, weights, data, workers=workers),
            test_acc=(
                evaluate(net, weights, test_data, workers=workers)
                if test_data
                else float("nan")
            ),
            loss=loss_sum / n_batches,
        )
        log.append(stats)
        if (
            checkpoint_dir
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(
                Path(checkpoint_dir) / f"epoch_{epoch:04d}.ckpt",
                net,
                weights,
                seed=config.seed,
            )

    if log_path is not None:
        write_training_log(log, log_path)
    return weights, log


def write_training_log(log: list[EpochStats], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "test_acc", "loss"])
        for row in log:
            writer.writerow([row.epoch, row.train_acc, row.test_acc, row.loss])


def evaluate(
    net: NetworkSpec,
    weights: WeightSet,
    data: list[tuple[SpikeFrames, int]],
    *,
    quant: QuantConfig | None = None,
    workers: int = 1,
) -> float:
    """Fraction of correctly decoded samples.

    When quant is given the weights must already be quantized (this only
    validates grid alignment; it never quantizes).
    """
    if not data:
        raise EmptyDataset("evaluation split is empty")
    if quant is not None and not grid_aligned(weights, quant):
        raise ValueError("weights are not aligned to the declared quantization grid")

    def predict(item):
        frames, label = item
        counts = forward(net, weights, frames).counts
        predicted, _ = decode(counts, frames.timesteps)
        return predicted == label

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(predict, data))
    else:
        hits = [predict(item) for item in data]
    return float(np.mean(hits))
