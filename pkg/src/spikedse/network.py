"""LIF network definition and forward execution.

The two reference architectures (one per attention-window size) interleave
average pooling with convolutions and finish with two fully-connected
layers:

    avg_pool k4 -> conv 2x32 k3 p1 s1 -> avg_pool k2 -> conv 32x32 k3 p1 s1
    -> avg_pool k2 -> fc (1152->512 at W=100, 288->144 at W=50) -> fc (->2)

LIF dynamics apply after every conv and fc layer; pooling is stateless
spatial downsampling (the leading pool acts directly on the binary input
frames, and pooled spikes become fractional currents for the next conv).
With zero reset the membrane update per timestep is

    V <- leak * V_prev * (1 - spike_prev) + input_current
    spike = 1 where V >= v_threshold

and the spike mask applies the reset on the following step. All spike
tensors stay strictly binary; a forward pass is a pure function of
(weights, frames, params), so batch-level parallelism over samples is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ShapeMismatch, UnsupportedWindow
from .events import SpikeFrames

ResetMode = Literal["zero", "subtract"]
SpikeMode = Literal["hard", "relaxed"]


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire neuron parameters.

    leak is the multiplicative retention factor applied to the previous
    membrane potential each timestep (0 = memoryless, values near 1 decay
    slowly); it must stay in [0, 1).
    """

    v_threshold: float = 0.4
    leak: float = 0.25
    reset_mode: ResetMode = "zero"

    def __post_init__(self):
        if self.v_threshold <= 0:
            raise ValueError("v_threshold must be positive")
        if not 0 <= self.leak < 1:
            raise ValueError("leak must be in [0, 1)")


@dataclass(frozen=True)
class LayerSpec:
    kind: Literal["avg_pool", "conv", "fully_connected"]
    in_channels: int
    out_channels: int
    kernel: int = 0
    padding: int = 0
    stride: int = 1

    @property
    def spiking(self) -> bool:
        return self.kind in ("conv", "fully_connected")

    @property
    def weight_count(self) -> int:
        if self.kind == "conv":
            return self.out_channels * self.in_channels * self.kernel**2
        if self.kind == "fully_connected":
            return self.out_channels * self.in_channels
        return 0


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_window: int
    lif: LifParams = LifParams()

    def spatial_trace(self) -> list[int]:
        """Feature-map side length after each layer (fc layers give 1)."""
        size = self.input_window
        trace = []
        for layer in self.layers:
            if layer.kind == "avg_pool":
                size = size // layer.kernel
            elif layer.kind == "conv":
                size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
            else:
                size = 1
            trace.append(size)
        return trace

    def flatten_size(self) -> int:
        """Flattened feature count entering the first fully-connected layer."""
        size = self.input_window
        channels = self.layers[0].in_channels
        for layer in self.layers:
            if layer.kind == "fully_connected":
                return channels * size * size
            if layer.kind == "avg_pool":
                size = size // layer.kernel
            else:
                size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
            channels = layer.out_channels
        return channels * size * size

    def weight_count(self) -> int:
        return sum(layer.weight_count for layer in self.layers)

    def bias_count(self) -> int:
        return sum(l.out_channels for l in self.layers if l.spiking)


@dataclass
class LayerWeights:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class WeightSet:
    """Real-valued parameters aligned with NetworkSpec.layers (None = pool).

    quant carries optional provenance set by the quantizer (bits, rounding,
    per-layer fractional bits); it never affects arithmetic here.
    """

    layers: list[LayerWeights | None]
    quant: dict | None = None

    def copy(self) -> "WeightSet":
        return WeightSet(
            layers=[
                None if lw is None else LayerWeights(lw.weight.copy(), lw.bias.copy())
                for lw in self.layers
            ],
            quant=dict(self.quant) if self.quant else None,
        )

    def param_arrays(self) -> list[np.ndarray]:
        """All parameter tensors in deterministic (layer, weight, bias) order."""
        out = []
        for lw in self.layers:
            if lw is not None:
                out.append(lw.weight)
                out.append(lw.bias)
        return out


def build_network(
    window: int,
    *,
    strict: bool = True,
    lif: LifParams | None = None,
) -> NetworkSpec:
    """Build the reference architecture for a given attention window.

    Strict mode accepts only the two reference windows (100 and 50) and
    reproduces their fully-connected sizes exactly. Extended mode accepts
    any window large enough to survive the pooling stack and recomputes the
    fc sizes (hidden = flattened // 2).
    """
    reference_hidden = {100: 512, 50: 144}
    if strict and window not in reference_hidden:
        raise UnsupportedWindow(
            f"strict mode supports windows {sorted(reference_hidden)}, got {window}"
        )
    convs_and_pools = (
        LayerSpec("avg_pool", 2, 2, kernel=4, stride=4),
        LayerSpec("conv", 2, 32, kernel=3, padding=1, stride=1),
        LayerSpec("avg_pool", 32, 32, kernel=2, stride=2),
        LayerSpec("conv", 32, 32, kernel=3, padding=1, stride=1),
        LayerSpec("avg_pool", 32, 32, kernel=2, stride=2),
    )
    size = window
    for layer in convs_and_pools:
        if layer.kind == "avg_pool":
            size = size // layer.kernel
        else:
            size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if size < 1:
            raise UnsupportedWindow(f"window {window} collapses inside the network")
    flat = 32 * size * size
    hidden = reference_hidden.get(window, max(2, flat // 2))
    layers = convs_and_pools + (
        LayerSpec("fully_connected", flat, hidden),
        LayerSpec("fully_connected", hidden, 2),
    )
    return NetworkSpec(layers=layers, input_window=window, lif=lif or LifParams())


def init_weights(spec: NetworkSpec, seed: int) -> WeightSet:
    """Seeded uniform init in +/- sqrt(1/fan_in); biases start at zero."""
    rng = np.random.default_rng(seed)
    layers: list[LayerWeights | None] = []
    for layer in spec.layers:
        if layer.kind == "conv":
            fan_in = layer.in_channels * layer.kernel**2
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(
                -bound, bound, size=(layer.out_channels, layer.in_channels,
                                     layer.kernel, layer.kernel)
            )
            layers.append(LayerWeights(w, np.zeros(layer.out_channels)))
        elif layer.kind == "fully_connected":
            bound = np.sqrt(1.0 / layer.in_channels)
            w = rng.uniform(-bound, bound, size=(layer.out_channels, layer.in_channels))
            layers.append(LayerWeights(w, np.zeros(layer.out_channels)))
        else:
            layers.append(None)
    return WeightSet(layers=layers)


# ---------------------------------------------------------------------------
# Layer arithmetic
# ---------------------------------------------------------------------------

def avg_pool_forward(x: np.ndarray, kernel: int) -> np.ndarray:
    """Average k x k blocks; trailing rows/columns beyond a full block drop."""
    c, h, w = x.shape
    h2, w2 = h // kernel, w // kernel
    trimmed = x[:, : h2 * kernel, : w2 * kernel]
    return trimmed.reshape(c, h2, kernel, w2, kernel).mean(axis=(2, 4))


def avg_pool_backward(grad_out: np.ndarray, in_shape: tuple, kernel: int) -> np.ndarray:
    c, h, w = in_shape
    h2, w2 = grad_out.shape[1], grad_out.shape[2]
    grad_in = np.zeros(in_shape)
    spread = np.repeat(np.repeat(grad_out, kernel, axis=1), kernel, axis=2)
    grad_in[:, : h2 * kernel, : w2 * kernel] = spread / (kernel * kernel)
    return grad_in


def _im2col(
    x_padded: np.ndarray, kernel: int, stride: int
) -> tuple[np.ndarray, int, int]:
    """Unfold to (C * k * k, H_out * W_out) patch columns."""
    windows = np.lib.stride_tricks.sliding_window_view(
        x_padded, (kernel, kernel), axis=(1, 2)
    )[:, ::stride, ::stride]
    c, h_out, w_out = windows.shape[:3]
    return (
        windows.transpose(0, 3, 4, 1, 2).reshape(c * kernel * kernel, h_out * w_out),
        h_out,
        w_out,
    )


def conv_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: int, stride: int
) -> np.ndarray:
    """Cross-correlation of (C, H, W) input with (O, C, k, k) kernels."""
    o, c_w, kernel, _ = weight.shape
    if x.shape[0] != c_w:
        raise ShapeMismatch(f"conv expects {c_w} input channels, got {x.shape[0]}")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols, h_out, w_out = _im2col(xp, kernel, stride)
    out = weight.reshape(o, -1) @ cols + bias[:, None]
    return out.reshape(o, h_out, w_out)


def conv_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    padding: int,
    stride: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_weight, d_bias, d_input) for conv_forward."""
    o, c, kernel, _ = weight.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols, h_out, w_out = _im2col(xp, kernel, stride)
    g = grad_out.reshape(o, -1)
    d_weight = (g @ cols.T).reshape(weight.shape)
    d_bias = g.sum(axis=1)

    d_cols = weight.reshape(o, -1).T @ g  # (C*k*k, H_out*W_out)
    d_xp = np.zeros_like(xp)
    d_cols = d_cols.reshape(c, kernel, kernel, h_out, w_out)
    for i in range(kernel):
        for j in range(kernel):
            d_xp[
                :,
                i : i + stride * h_out : stride,
                j : j + stride * w_out : stride,
            ] += d_cols[:, i, j]
    if padding:
        d_x = d_xp[:, padding:-padding, padding:-padding]
    else:
        d_x = d_xp
    return d_weight, d_bias, d_x


def fc_forward(x_flat: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x_flat.shape[0] != weight.shape[1]:
        raise ShapeMismatch(
            f"fc expects {weight.shape[1]} inputs, got {x_flat.shape[0]}"
        )
    return weight @ x_flat + bias


def layer_forward(
    layer: LayerSpec, weights: LayerWeights | None, spikes_in: np.ndarray
) -> np.ndarray:
    """Stateless synaptic map for one layer: spikes/currents in, current out."""
    if layer.kind == "avg_pool":
        return avg_pool_forward(spikes_in, layer.kernel)
    if layer.kind == "conv":
        return conv_forward(
            spikes_in, weights.weight, weights.bias, layer.padding, layer.stride
        )
    return fc_forward(spikes_in.reshape(-1), weights.weight, weights.bias)


# ---------------------------------------------------------------------------
# LIF dynamics and full forward pass
# ---------------------------------------------------------------------------

@dataclass
class MembraneState:
    """Per-spiking-layer membrane potentials and previous spikes."""

    potentials: list[np.ndarray | None]
    prev_spikes: list[np.ndarray | None]

    @classmethod
    def fresh(cls, n_layers: int) -> "MembraneState":
        return cls(potentials=[None] * n_layers, prev_spikes=[None] * n_layers)


def relaxed_spike(v: np.ndarray, v_threshold: float, half_width: float) -> np.ndarray:
    """Clipped-linear stand-in for the hard threshold (gradient checking)."""
    return np.clip((v - v_threshold + half_width) / (2.0 * half_width), 0.0, 1.0)


def lif_step(
    state: MembraneState,
    layer_index: int,
    input_current: np.ndarray,
    params: LifParams,
    *,
    spike_mode: SpikeMode = "hard",
    surrogate_half_width: float = 0.5,
) -> np.ndarray:
    """Advance one spiking layer by one timestep; returns the spike tensor.

    State is updated in place for the next timestep. The threshold
    comparison uses >=, so a potential exactly at threshold fires.
    """
    v_prev = state.potentials[layer_index]
    s_prev = state.prev_spikes[layer_index]
    if v_prev is None:
        v = input_current.astype(float, copy=True)
    else:
        if v_prev.shape != input_current.shape:
            raise ShapeMismatch(
                f"membrane {v_prev.shape} vs input {input_current.shape}"
            )
        if params.reset_mode == "zero":
            v = params.leak * v_prev * (1.0 - s_prev) + input_current
        else:
            v = params.leak * (v_prev - params.v_threshold * s_prev) + input_current
    if spike_mode == "hard":
        spikes = (v >= params.v_threshold).astype(float)
    else:
        spikes = relaxed_spike(v, params.v_threshold, surrogate_half_width)
    state.potentials[layer_index] = v
    state.prev_spikes[layer_index] = spikes
    return spikes


@dataclass
class LayerTrace:
    """Recorded per-timestep tensors for one layer (for backprop)."""

    inputs: list[np.ndarray] = field(default_factory=list)
    potentials: list[np.ndarray] = field(default_factory=list)
    spikes: list[np.ndarray] = field(default_factory=list)


@dataclass
class ForwardResult:
    counts: np.ndarray
    trace: list[LayerTrace] | None = None


def forward(
    net: NetworkSpec,
    weights: WeightSet,
    frames: SpikeFrames,
    *,
    record: bool = False,
    spike_mode: SpikeMode = "hard",
    surrogate_half_width: float = 0.5,
) -> ForwardResult:
    """Run all timesteps through the network with persistent membrane state.

    Returns per-class output spike counts over T; with record=True also the
    per-layer input/potential/spike tensors every timestep, as needed by
    the training backward pass.
    """
    if frames.window != net.input_window:
        raise ShapeMismatch(
            f"frames window {frames.window} != network window {net.input_window}"
        )
    n_layers = len(net.layers)
    state = MembraneState.fresh(n_layers)
    trace = [LayerTrace() for _ in range(n_layers)] if record else None
    out_dim = net.layers[-1].out_channels
    counts = np.zeros(out_dim)

    for t in range(frames.timesteps):
        x = frames.data[t].astype(float)
        for i, layer in enumerate(net.layers):
            if layer.kind == "avg_pool":
                x = avg_pool_forward(x, layer.kernel)
                continue
            if record:
                trace[i].inputs.append(x)
            current = layer_forward(layer, weights.layers[i], x)
            x = lif_step(
                state,
                i,
                current,
                net.lif,
                spike_mode=spike_mode,
                surrogate_half_width=surrogate_half_width,
            )
            if record:
                trace[i].potentials.append(state.potentials[i])
                trace[i].spikes.append(x)
        counts = counts + x
    return ForwardResult(counts=counts, trace=trace)


def decode(counts: np.ndarray, timesteps: int) -> tuple[int, np.ndarray]:
    """Rate-decode output spike counts; ties go to the lowest class index."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    rates = np.asarray(counts, dtype=float) / timesteps
    return int(np.argmax(rates)), rates
