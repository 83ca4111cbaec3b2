"""Sequential network container and checkpoint persistence."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .layers import Layer, LayerSpec, make_layer


class ShapeError(ValueError):
    pass


class Network:
    """A stack of layers with shapes fixed and validated at construction.

    Args:
        input_shape: per-sample shape, e.g. ``(4, 320, 1)`` or ``(1280,)``.
        specs: layer specifications, applied in order.
        seed: weight initialization seed.
        dtype: parameter and activation dtype.
        expect_output: if given, the constructed output shape must equal it.
    """

    def __init__(self, input_shape: Sequence[int], specs: Sequence[LayerSpec], seed: int = 0,
                 dtype=np.float32, expect_output: Sequence[int] | None = None, name: str = "net"):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.layers: list[Layer] = []
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for i, spec in enumerate(specs):
            layer = make_layer(spec)
            try:
                out = layer.build(shape, rng, self.dtype)
            except ValueError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            layer.in_shape, layer.out_shape = shape, tuple(out)
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape = shape
        if expect_output is not None and tuple(expect_output) != shape:
            raise ShapeError(f"{name}: output shape {shape} != declared {tuple(expect_output)}")

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def shape_schedule(self) -> list[tuple]:
        return [self.input_shape] + [layer.out_shape for layer in self.layers]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.name}: input shape {x.shape[1:]} != {self.input_shape}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training)
            if x.shape[1:] != layer.out_shape:
                raise ShapeError(f"layer {i} ({layer.spec.kind}) produced {x.shape[1:]}, expected {layer.out_shape}")
        return x

    def predict(self, x: np.ndarray, batch: int = 500) -> np.ndarray:
        x = np.asarray(x)
        outs = [self.forward(x[a:a + batch]) for a in range(0, len(x), batch)]
        return np.concatenate(outs) if outs else np.empty((0,) + self.output_shape, self.dtype)

    def backward(self, dy: np.ndarray, fused: bool = False) -> np.ndarray:
        """Backpropagate ``dy``; with ``fused`` it is the gradient w.r.t. the output pre-activation."""
        dy = np.asarray(dy, dtype=self.dtype)
        last = self.layers[-1]
        last.fused = fused
        try:
            for i in range(len(self.layers) - 1, -1, -1):
                dy = self.layers[i].backward(dy)
                if not np.all(np.isfinite(dy)):
                    raise FloatingPointError(f"non-finite gradient at layer {i} ({self.layers[i].spec.kind})")
        finally:
            last.fused = False
        return dy

    @property
    def output_activation(self) -> str:
        return self.layers[-1].spec.activation

    def parameters(self):
        """(layer index, name, array, decays) for every trainable tensor, in a fixed order."""
        return [(i, k, layer.params[k], k in layer.decay)
                for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    def gradients(self) -> list[np.ndarray]:
        return [self.layers[i].grads[k] for i, k, _, _ in self.parameters()]

    def n_params(self) -> int:
        return sum(p.size for _, _, p, _ in self.parameters())

    def copy(self) -> "Network":
        clone = Network(self.input_shape, self.specs, self.seed, self.dtype, name=self.name)
        for src, dst in zip(self.layers, clone.layers):
            dst.params = {k: v.copy() for k, v in src.params.items()}
            dst.buffers = {k: v.copy() for k, v in src.buffers.items()}
        return clone

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "shape_schedule": [list(s) for s in self.shape_schedule()],
            "layers": [s.to_dict() for s in self.specs],
            "seed": self.seed,
        }

    def state_arrays(self):
        for i, layer in enumerate(self.layers):
            for group in ("params", "buffers"):
                d = getattr(layer, group)
                for k in sorted(d):
                    yield i, group, k, d[k]


def save_checkpoint(net: Network, path) -> str:
    """Write ``<path>.json`` (descriptor) and ``<path>.bin`` (float32 LE); returns the sha256."""
    path = Path(path)
    blobs, index, offset = [], [], 0
    for i, group, k, arr in net.state_arrays():
        b = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"layer": i, "group": group, "name": k, "shape": list(arr.shape), "offset": offset})
        offset += len(b)
        blobs.append(b)
    data = b"".join(blobs)
    digest = hashlib.sha256(data).hexdigest()
    desc = net.descriptor() | {"tensors": index, "dtype": "float32", "byteorder": "little", "sha256": digest}
    path.with_suffix(".bin").write_bytes(data)
    path.with_suffix(".json").write_text(json.dumps(desc, indent=2))
    return digest


def load_checkpoint(path, dtype=np.float32) -> Network:
    path = Path(path)
    desc = json.loads(path.with_suffix(".json").read_text())
    data = path.with_suffix(".bin").read_bytes()
    if hashlib.sha256(data).hexdigest() != desc["sha256"]:
        raise ValueError(f"checkpoint {path} fails its content hash")
    specs = [LayerSpec.from_dict(d) for d in desc["layers"]]
    net = Network(desc["input_shape"], specs, desc.get("seed", 0), dtype, name=desc.get("name", "net"))
    for t in desc["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=t["offset"]).reshape(t["shape"]).astype(dtype)
        getattr(net.layers[t["layer"]], t["group"])[t["name"]] = arr
    return net
