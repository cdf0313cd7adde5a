from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from cirlab.domain.autodiff import Node, add_bias, matmul, parameter, relu, reshape
from cirlab.domain.nn.schemas import CONV_KERNEL, ROTATION_CLASSES, ForwardOutput, ModelConfig
from cirlab.lib.exceptions import ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping

    from numpy.typing import NDArray

__all__ = (
    "ModelParams",
    "classifier_forward",
    "ema_blend",
    "init_params",
    "model_forward",
    "restore",
    "snapshot",
    "softmax",
)


@dataclass
class ModelParams:
    """Encoder, classifier head and rotation head of one network."""

    config: ModelConfig
    arrays: dict[str, NDArray[np.float64]]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __getitem__(self, name: str) -> NDArray[np.float64]:
        return self.arrays[name]

    def leaves(self) -> dict[str, Node]:
        """Differentiable leaves over the live arrays (no copy)."""
        return {name: parameter(array, name=name) for name, array in self.arrays.items()}

    def frozen(self) -> dict[str, Node]:
        return {name: Node(array, op="const", name=name) for name, array in self.arrays.items()}

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(array.shape) for name, array in self.arrays.items()}

    def is_finite(self) -> bool:
        return all(bool(np.isfinite(array).all()) for array in self.arrays.values())


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if config.use_conv:
        shapes["conv.weight"] = (CONV_KERNEL * CONV_KERNEL, config.conv_channels)
        shapes["conv.bias"] = (config.conv_channels,)
    fan_in = config.encoder_input_dim
    for index, width in enumerate(config.hidden_sizes):
        shapes[f"encoder.{index}.weight"] = (fan_in, width)
        shapes[f"encoder.{index}.bias"] = (width,)
        fan_in = width
    shapes["classifier.weight"] = (config.feature_dim, config.num_classes)
    shapes["classifier.bias"] = (config.num_classes,)
    shapes["rotation.weight"] = (config.feature_dim, ROTATION_CLASSES)
    shapes["rotation.bias"] = (ROTATION_CLASSES,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights drawn in a fixed block order.

    Biases and the class head start at zero, so classes that have never been
    trained score exactly zero and cannot outvote the trained ones.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, NDArray[np.float64]] = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".bias") or name == "classifier.weight":
            arrays[name] = np.zeros(shape, dtype=np.float64)
            continue
        fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, size=shape).astype(np.float64)
    return ModelParams(config=config, arrays=arrays)


def _as_batch(config: ModelConfig, images: NDArray[np.float64]) -> NDArray[np.float64]:
    batch = np.asarray(images, dtype=np.float64)
    if batch.ndim == 2 and batch.shape[1] == config.side * config.side:
        batch = batch.reshape(-1, config.side, config.side)
    if batch.ndim != 3 or batch.shape[1:] != (config.side, config.side) or batch.shape[0] == 0:
        raise ShapeMismatchError("model_forward", tuple(batch.shape), (-1, config.side, config.side))
    return batch


def _patches(batch: NDArray[np.float64]) -> NDArray[np.float64]:
    """Valid 3×3 patches as rows: (B·P) × 9, patch-major within each image."""
    windows = np.lib.stride_tricks.sliding_window_view(batch, (CONV_KERNEL, CONV_KERNEL), axis=(1, 2))
    return np.ascontiguousarray(windows.reshape(-1, CONV_KERNEL * CONV_KERNEL))


def _const(array: NDArray[np.float64]) -> Node:
    return Node(array, op="const")


def model_forward(
    params: ModelParams,
    images: NDArray[np.float64],
    *,
    leaves: Mapping[str, Node] | None = None,
) -> ForwardOutput:
    """Run the encoder and both heads.

    Args:
        params: network parameters.
        images: ``B × side × side`` (or ``B × side²``) batch.
        leaves: differentiable wrappers of ``params`` when gradients are
            needed; frozen wrappers are used otherwise.

    Returns:
        Features, class logits and rotation logits for the batch.
    """
    config = params.config
    batch = _as_batch(config, images)
    nodes = leaves if leaves is not None else params.frozen()
    size = batch.shape[0]
    if config.use_conv:
        conv = relu(add_bias(matmul(_const(_patches(batch)), nodes["conv.weight"]), nodes["conv.bias"]))
        hidden = reshape(conv, (size, config.encoder_input_dim))
    else:
        hidden = _const(np.ascontiguousarray(batch.reshape(size, -1)))
    for index in range(len(config.hidden_sizes)):
        hidden = relu(add_bias(matmul(hidden, nodes[f"encoder.{index}.weight"]), nodes[f"encoder.{index}.bias"]))
    logits = add_bias(matmul(hidden, nodes["classifier.weight"]), nodes["classifier.bias"])
    rotation_logits = add_bias(matmul(hidden, nodes["rotation.weight"]), nodes["rotation.bias"])
    return ForwardOutput(features=hidden, logits=logits, rotation_logits=rotation_logits)


def classifier_forward(
    params: ModelParams,
    features: NDArray[np.float64],
    *,
    leaves: Mapping[str, Node] | None = None,
) -> Node:
    """Apply only the classifier head to stored features."""
    stored = np.asarray(features, dtype=np.float64)
    if stored.ndim != 2 or stored.shape[1] != params.config.feature_dim:
        raise ShapeMismatchError("classifier_forward", tuple(stored.shape), (-1, params.config.feature_dim))
    nodes = leaves if leaves is not None else params.frozen()
    return add_bias(matmul(_const(stored), nodes["classifier.weight"]), nodes["classifier.bias"])


def softmax(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise softmax of plain logits (no graph)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def snapshot(params: ModelParams) -> ModelParams:
    return ModelParams(config=params.config, arrays={name: array.copy() for name, array in params.arrays.items()})


def _check_compatible(op: str, target: ModelParams, source: ModelParams) -> None:
    target_shapes, source_shapes = target.shapes(), source.shapes()
    if target_shapes.keys() != source_shapes.keys():
        msg = f"{op}: parameter blocks differ: {sorted(target_shapes)} vs {sorted(source_shapes)}"
        raise ValueError(msg)
    for name, shape in target_shapes.items():
        if shape != source_shapes[name]:
            raise ShapeMismatchError(f"{op}[{name}]", shape, source_shapes[name])


def restore(params: ModelParams, saved: ModelParams) -> None:
    """Overwrite ``params`` in place with the values of ``saved``."""
    _check_compatible("restore", params, saved)
    for name, array in params.arrays.items():
        np.copyto(array, saved.arrays[name])


def ema_blend(target: ModelParams, source: ModelParams, momentum: float) -> None:
    """``target ← m·target + (1 − m)·source`` for every parameter, in place.

    Written as ``target + (1 − m)·(source − target)`` so a snapshot equal to
    ``source`` stays bitwise unchanged.
    """
    if not 0.0 <= momentum <= 1.0:
        msg = f"EMA momentum must lie in [0, 1], got {momentum}"
        raise ValueError(msg)
    _check_compatible("ema_blend", target, source)
    for name, array in target.arrays.items():
        array += (1.0 - momentum) * (source.arrays[name] - array)
