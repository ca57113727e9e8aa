"""Per-event classifier: a small fully connected network on flattened time-surface features.

EDNM container layout (little-endian)::

    header  magic "EDNM" | u16 version | u16 m | u16 k | u16 width | u16 height | u8 objective | u8 pad
            | u32 t_max_us | u32 epochs | u64 seed | u32 layers                                        36 bytes
    layer   u32 rows | u32 cols | rows * cols f32 weights (row-major) | cols f32 biases
"""

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np

from epmb_core.core_types import SensorGeometry
from epmb_core.errors import BadMagicError, FeatureShapeError, ModelFormatError, TruncatedFileError
from epmb_pipeline.denoise.store import FeatureSpec

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"EDNM"
MODEL_VERSION = 1
MODEL_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u2"),
        ("m", "<u2"),
        ("k", "<u2"),
        ("width", "<u2"),
        ("height", "<u2"),
        ("objective", "u1"),
        ("pad", "u1"),
        ("t_max_us", "<u4"),
        ("epochs", "<u4"),
        ("seed", "<u8"),
        ("layers", "<u4"),
    ]
)
LAYER_HEADER = np.dtype([("rows", "<u4"), ("cols", "<u4")])
HIDDEN_SIZES = (128, 32)


class Objective(StrEnum):
    SOFT_REWARD = "soft-reward"
    SOFT_L1 = "soft-l1"
    HARD = "hard"


_OBJECTIVE_CODES = {Objective.SOFT_REWARD: 0, Objective.SOFT_L1: 1, Objective.HARD: 2}


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray


@dataclass(eq=False)
class DenoiserModel:
    """Network weights plus the feature geometry and sensor it was trained for."""

    layers: list[Layer]
    spec: FeatureSpec
    geometry: SensorGeometry
    objective: Objective
    epochs: int = 0
    seed: int = 0
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def initialize(
        cls,
        spec: FeatureSpec,
        geometry: SensorGeometry,
        objective: Objective,
        seed: int,
        hidden: tuple[int, ...] = HIDDEN_SIZES,
    ) -> "DenoiserModel":
        """He-initialized weights, zero biases."""
        rng = np.random.default_rng(seed)
        sizes = (spec.size, *hidden, 1)
        layers = [
            Layer(
                weights=(rng.standard_normal((rows, cols)) * np.sqrt(2.0 / rows)).astype(np.float32),
                bias=np.zeros(cols, dtype=np.float32),
            )
            for rows, cols in zip(sizes[:-1], sizes[1:])
        ]
        return cls(layers=layers, spec=spec, geometry=geometry, objective=objective, seed=seed)

    @property
    def input_size(self) -> int:
        return self.layers[0].weights.shape[0]

    def activations(self, features: np.ndarray) -> list[np.ndarray]:
        """Input, every hidden activation and the output probability of a batch."""
        outputs = [np.asarray(features, dtype=np.float32)]
        for i, layer in enumerate(self.layers):
            z = outputs[-1] @ layer.weights + layer.bias
            outputs.append(sigmoid(z) if i == len(self.layers) - 1 else relu(z))
        return outputs

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Probability that each event is real, shape ``(batch,)``.

        Raises:
            FeatureShapeError: If the feature width differs from the network input
        """
        if features.ndim != 2 or features.shape[1] != self.input_size:
            raise FeatureShapeError(f"Model expects {self.input_size} features per event, got {features.shape}")
        return self.activations(features)[-1][:, 0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenoiserModel):
            return NotImplemented
        return (
            (self.spec, self.geometry, self.objective, self.epochs, self.seed)
            == (other.spec, other.geometry, other.objective, other.epochs, other.seed)
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
                for a, b in zip(self.layers, other.layers)
            )
        )

    __hash__ = None  # type: ignore[assignment]


def encode_model(model: DenoiserModel) -> bytes:
    header = np.zeros(1, dtype=MODEL_HEADER)
    header["magic"] = MODEL_MAGIC
    header["version"] = MODEL_VERSION
    header["m"] = model.spec.m
    header["k"] = model.spec.k
    header["width"] = model.geometry.width
    header["height"] = model.geometry.height
    header["objective"] = _OBJECTIVE_CODES[model.objective]
    header["t_max_us"] = model.spec.t_max_us
    header["epochs"] = model.epochs
    header["seed"] = model.seed
    header["layers"] = len(model.layers)
    parts = [header.tobytes()]
    for layer in model.layers:
        rows, cols = layer.weights.shape
        shape = np.zeros(1, dtype=LAYER_HEADER)
        shape["rows"], shape["cols"] = rows, cols
        parts += [shape.tobytes(), layer.weights.astype("<f4").tobytes(), layer.bias.astype("<f4").tobytes()]
    return b"".join(parts)


def _take(data: bytes, offset: int, size: int, what: str) -> int:
    if offset + size > len(data):
        raise TruncatedFileError(f"Model ends inside {what}: needs {offset + size} bytes, has {len(data)}")
    return offset + size


def decode_model(data: bytes) -> DenoiserModel:
    """Parse EDNM bytes.

    Raises:
        BadMagicError: If the data does not start with ``EDNM``
        TruncatedFileError: If the header or a layer is cut short
        ModelFormatError: On an unsupported version, inconsistent layer shapes or trailing bytes
    """
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise BadMagicError(f"Expected magic {MODEL_MAGIC!r}, got {bytes(data[:4])!r}")
    offset = _take(data, 0, MODEL_HEADER.itemsize, "header")
    header = np.frombuffer(data, dtype=MODEL_HEADER, count=1)[0]
    if int(header["version"]) != MODEL_VERSION:
        raise ModelFormatError(f"Unsupported model version {int(header['version'])}")
    codes = {code: objective for objective, code in _OBJECTIVE_CODES.items()}
    if int(header["objective"]) not in codes:
        raise ModelFormatError(f"Unknown objective code {int(header['objective'])}")
    try:
        spec = FeatureSpec(m=int(header["m"]), k=int(header["k"]), t_max_us=int(header["t_max_us"]))
        geometry = SensorGeometry(width=int(header["width"]), height=int(header["height"]))
    except ValueError as e:
        raise ModelFormatError(f"Invalid model header: {e}") from e

    layers = []
    expected_rows = spec.size
    for index in range(int(header["layers"])):
        start = offset
        offset = _take(data, offset, LAYER_HEADER.itemsize, f"layer {index} header")
        shape = np.frombuffer(data, dtype=LAYER_HEADER, count=1, offset=start)[0]
        rows, cols = int(shape["rows"]), int(shape["cols"])
        if rows != expected_rows or cols == 0:
            raise ModelFormatError(f"Layer {index} has shape {rows}x{cols}, expected {expected_rows} rows")
        start = offset
        offset = _take(data, offset, 4 * (rows * cols + cols), f"layer {index}")
        values = np.frombuffer(data, dtype="<f4", count=rows * cols + cols, offset=start).astype(np.float32)
        layers.append(Layer(weights=values[: rows * cols].reshape(rows, cols), bias=values[rows * cols :]))
        expected_rows = cols
    if not layers or expected_rows != 1:
        raise ModelFormatError("Model must end in a single output unit")
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after the last layer")
    return DenoiserModel(
        layers=layers,
        spec=spec,
        geometry=geometry,
        objective=codes[int(header["objective"])],
        epochs=int(header["epochs"]),
        seed=int(header["seed"]),
    )


def write_model(path: Path, model: DenoiserModel) -> None:
    path.write_bytes(encode_model(model))
    logger.debug(f"Wrote model ({len(model.layers)} layers, {model.input_size} inputs) to {path}")


def read_model(path: Path) -> DenoiserModel:
    return decode_model(path.read_bytes())
