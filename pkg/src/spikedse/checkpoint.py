"""Weight checkpoint files.

Layout: one line of JSON (sorted keys, '\\n' terminated) followed by the
raw little-endian float32 tensor payloads concatenated in layer order
(weight then bias per parameterized layer). The header records the network
spec, a precision tag, the training seed and the tensor shapes, plus the
quantization block {bits, rounding, frac_bits} when the weights came out
of the quantizer. Writing is fully deterministic so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import LayerSpec, LayerWeights, LifParams, NetworkSpec, WeightSet

FORMAT_NAME = "spikedse-checkpoint-v1"


def _spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "input_window": spec.input_window,
        "lif": {
            "v_threshold": spec.lif.v_threshold,
            "leak": spec.lif.leak,
            "reset_mode": spec.lif.reset_mode,
        },
        "layers": [
            {
                "kind": l.kind,
                "in_channels": l.in_channels,
                "out_channels": l.out_channels,
                "kernel": l.kernel,
                "padding": l.padding,
                "stride": l.stride,
            }
            for l in spec.layers
        ],
    }


def _spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        layers=tuple(LayerSpec(**layer) for layer in d["layers"]),
        input_window=d["input_window"],
        lif=LifParams(**d["lif"]),
    )


def save_checkpoint(
    path: str | Path,
    spec: NetworkSpec,
    weights: WeightSet,
    *,
    seed: int | None = None,
    precision: str = "fp32",
) -> Path:
    """Write spec + weights; returns the path written."""
    path = Path(path)
    tensors = []
    payload = bytearray()
    for i, lw in enumerate(weights.layers):
        if lw is None:
            continue
        for name, arr in (("weight", lw.weight), ("bias", lw.bias)):
            tensors.append({"layer": i, "name": name, "shape": list(arr.shape)})
            payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = {
        "format": FORMAT_NAME,
        "spec": _spec_to_dict(spec),
        "precision": precision,
        "seed": seed,
        "tensors": tensors,
        "quant": weights.quant,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(bytes(payload))
    return path


def load_checkpoint(path: str | Path) -> tuple[NetworkSpec, WeightSet, dict]:
    """Read a checkpoint back; returns (spec, weights, header)."""
    data = Path(path).read_bytes()
    newline = data.index(b"\n")
    header = json.loads(data[:newline].decode("utf-8"))
    if header.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} file")
    spec = _spec_from_dict(header["spec"])

    layers: list[LayerWeights | None] = [None] * len(spec.layers)
    offset = newline + 1
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        arr = arr.reshape(shape).astype(float)
        i = entry["layer"]
        if layers[i] is None:
            layers[i] = LayerWeights(weight=arr, bias=np.zeros(0))
        if entry["name"] == "weight":
            layers[i].weight = arr
        else:
            layers[i].bias = arr
    weights = WeightSet(layers=layers, quant=header.get("quant"))
    return spec, weights, header
