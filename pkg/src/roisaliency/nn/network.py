"""Network assembly, prediction, activation maps, and model (de)serialization."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import ChannelImage, DataError, atomic_write_bytes, atomic_write_text
from ..seeding import STREAM_PARAM_INIT, spawn_generator
from .layers import Conv2D, Conv3D, Dense, Dropout, Flatten, Layer, MaxPool, ReLU, Sigmoid, layer_from_spec

MODEL_VERSION = 1


class Network:
    """An ordered layer stack ending in dense(1) + sigmoid: a probabilistic binary classifier."""

    def __init__(self, layers: Sequence[Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        shape = self.input_shape
        self.layer_shapes = [shape]
        for layer in self.layers:
            shape = layer.build(shape)
            self.layer_shapes.append(shape)
        if not self.layers or self.layers[-1].kind != "sigmoid" or shape != (1,):
            raise DataError(
                f"network must end in dense(1) + sigmoid producing a scalar, got output shape {shape}"
            )

    # -- parameters -----------------------------------------------------

    def init_params(self, seed: int) -> "Network":
        rng = spawn_generator(seed, STREAM_PARAM_INIT)
        for layer in self.layers:
            layer.init_params(rng)
        return self

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        params = self.params
        if len(values) != len(params):
            raise DataError(f"expected {len(params)} parameter arrays, got {len(values)}")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise DataError(f"parameter shape mismatch: {p.shape} vs {v.shape}")
            p[...] = v

    # -- forward --------------------------------------------------------

    def _check_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise DataError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        return x

    def forward(self, x: np.ndarray, train_mode: bool = False, rng=None) -> np.ndarray:
        """Probabilities for a batch (n, *input_shape). Dropout only fires in train_mode."""
        out, _ = self.forward_with_ctx(x, train_mode=train_mode, rng=rng)
        return out

    def forward_with_ctx(self, x: np.ndarray, train_mode: bool = False, rng=None):
        x = self._check_batch(x)
        ctxs = []
        for layer in self.layers:
            x, ctx = layer.forward(x, train_mode=train_mode, rng=rng)
            ctxs.append(ctx)
        return x[:, 0], ctxs

    def forward_collect(self, x: np.ndarray) -> list[np.ndarray]:
        """Evaluation-mode forward keeping every layer's output (for activation maps)."""
        x = self._check_batch(x)
        outputs = []
        for layer in self.layers:
            x, _ = layer.forward(x, train_mode=False, rng=None)
            outputs.append(x)
        return outputs

    def predict_array(self, x: np.ndarray, chunk: int = 256) -> np.ndarray:
        x = self._check_batch(x)
        parts = [self.forward(x[i : i + chunk]) for i in range(0, len(x), chunk)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def predict_batch(self, images: Sequence[ChannelImage], chunk: int = 256) -> np.ndarray:
        """Per-image probabilities, order preserved, dropout off."""
        if len(images) == 0:
            return np.zeros(0)
        return self.predict_array(np.stack([im.data for im in images]), chunk=chunk)


def activation_maps(net: Network, images: Sequence[ChannelImage], layer_index: int) -> np.ndarray:
    """Mean activation of each filter of one conv layer over a group of images.

    Returns (filters, *spatial) — the elementwise average of that layer's
    output across the given images.
    """
    if not 0 <= layer_index < len(net.layers):
        raise DataError(f"layer index {layer_index} out of range (0..{len(net.layers) - 1})")
    layer = net.layers[layer_index]
    if layer.kind not in ("conv2d", "conv3d"):
        raise DataError(f"layer {layer_index} is {layer.kind!r}; activation maps need a conv layer")
    if len(images) == 0:
        raise DataError("activation maps need at least one image")
    total = None
    for img in images:
        outputs = net.forward_collect(img.data[None])
        act = outputs[layer_index][0]
        total = act.copy() if total is None else total + act
    return total / len(images)


# ---------------------------------------------------------------------------
# Reference architectures
# ---------------------------------------------------------------------------

def build_synth_cnn(input_shape: tuple[int, int, int] = (1, 24, 24), seed: int = 0) -> Network:
    """The small 2-conv-layer classifier used on the synthetic striped images."""
    if len(input_shape) != 3:
        raise DataError(f"synth CNN expects a 2D (channels, h, w) input, got {input_shape}")
    layers = [
        Conv2D(filters=4, kernel=3),
        ReLU(),
        MaxPool(2),
        Conv2D(filters=8, kernel=3),
        ReLU(),
        MaxPool(2),
        Flatten(),
        Dense(1),
        Sigmoid(),
    ]
    return Network(layers, input_shape).init_params(seed)


def build_2cc3d(
    input_shape: tuple[int, int, int, int] = (2, 32, 32, 32),
    filters: tuple[int, int, int, int, int, int] = (8, 16, 16, 32, 32, 64),
    hidden: int = 64,
    dropout_rate: float = 0.5,
    seed: int = 0,
) -> Network:
    """Two-channel 3D CNN: 6 conv / 4 maxpool / 2 dense layers and a sigmoid output.

    Convolutions are 3x3x3 with same-padding so the stack composes cleanly on
    a 32^3 grid; the filter-count preset is configurable.
    """
    if len(input_shape) != 4:
        raise DataError(f"expected a 3D multi-channel input shape, got {input_shape}")
    if len(filters) != 6:
        raise DataError(f"need six conv filter counts, got {filters}")
    f1, f2, f3, f4, f5, f6 = filters
    layers = [
        Conv3D(filters=f1, kernel=3, padding=1),
        ReLU(),
        Conv3D(filters=f2, kernel=3, padding=1),
        ReLU(),
        MaxPool(2),
        Conv3D(filters=f3, kernel=3, padding=1),
        ReLU(),
        MaxPool(2),
        Conv3D(filters=f4, kernel=3, padding=1),
        ReLU(),
        MaxPool(2),
        Conv3D(filters=f5, kernel=3, padding=1),
        ReLU(),
        Conv3D(filters=f6, kernel=3, padding=1),
        ReLU(),
        MaxPool(2),
        Flatten(),
        Dropout(dropout_rate),
        Dense(hidden),
        ReLU(),
        Dropout(dropout_rate),
        Dense(1),
        Sigmoid(),
    ]
    return Network(layers, input_shape).init_params(seed)


# ---------------------------------------------------------------------------
# Serialization: model.json (architecture) + model.bin (float64 weights)
# ---------------------------------------------------------------------------

def save_model(net: Network, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = b"".join(p.astype("<f8").tobytes(order="C") for p in net.params)
    atomic_write_bytes(directory / "model.bin", payload)
    doc = {
        "version": MODEL_VERSION,
        "input_shape": list(net.input_shape),
        "layers": [layer.spec() for layer in net.layers],
        "weights": "model.bin",
    }
    path = directory / "model.json"
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_model(path: str | Path) -> Network:
    path = Path(path)
    if path.is_dir():
        path = path / "model.json"
    if not path.exists():
        raise DataError(f"model description not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model version {doc.get('version')!r}")
    layers = [layer_from_spec(s) for s in doc["layers"]]
    net = Network(layers, tuple(doc["input_shape"]))
    raw = (path.parent / doc["weights"]).read_bytes()
    expected = 8 * net.num_params
    if len(raw) != expected:
        raise DataError(f"weight blob is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f8")
    offset = 0
    values = []
    for p in net.params:
        values.append(flat[offset : offset + p.size].reshape(p.shape))
        offset += p.size
    net.set_params(values)
    return net
