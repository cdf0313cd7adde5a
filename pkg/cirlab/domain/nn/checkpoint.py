"""Flat parameter files: header, shape table, then row-major float64 values."""

from __future__ import annotations

import io
from pathlib import Path
from typing import TYPE_CHECKING

from cirlab.domain.nn.model import ModelParams, expected_shapes
from cirlab.lib.binary import BinaryReader, BinaryWriter
from cirlab.lib.exceptions import CheckpointFormatError

if TYPE_CHECKING:
    import numpy as np
    from numpy.typing import NDArray

    from cirlab.domain.nn.schemas import ModelConfig

PARAMS_MAGIC = b"CIRP"
PARAMS_VERSION = 1


def _format_error(reason: str, offset: int) -> CheckpointFormatError:
    return CheckpointFormatError(detail=f"{reason} at byte {offset}")


def encode_params(arrays: dict[str, NDArray[np.float64]]) -> bytes:
    buffer = io.BytesIO()
    writer = BinaryWriter(buffer)
    writer.magic(PARAMS_MAGIC, PARAMS_VERSION)
    writer.u32(len(arrays))
    for name, array in arrays.items():
        writer.text(name)
        writer.shape(tuple(array.shape))
    for array in arrays.values():
        writer.float64(array)
    return buffer.getvalue()


def decode_params(payload: bytes) -> dict[str, NDArray[np.float64]]:
    reader = BinaryReader(payload, _format_error)
    reader.magic(PARAMS_MAGIC, {PARAMS_VERSION})
    table = [(reader.text(), reader.shape()) for _ in range(reader.u32())]
    arrays = {name: reader.float64(shape) for name, shape in table}
    reader.expect_end()
    return arrays


def save_params(params: ModelParams, path: Path | str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_params(params.arrays))
    return target


def params_from_arrays(config: ModelConfig, arrays: dict[str, NDArray[np.float64]]) -> ModelParams:
    """Attach decoded arrays to ``config``, verifying the block layout."""
    expected = expected_shapes(config)
    found = {name: tuple(array.shape) for name, array in arrays.items()}
    if found != expected:
        raise CheckpointFormatError(detail=f"parameter layout {found} does not match the model config {expected}")
    return ModelParams(config=config, arrays={name: arrays[name].copy() for name in expected})


def load_params(path: Path | str, config: ModelConfig) -> ModelParams:
    return params_from_arrays(config, decode_params(Path(path).read_bytes()))
