"""Little-endian binary codec shared by checkpoints, buffer dumps and datasets."""

from __future__ import annotations

import struct
from typing import TYPE_CHECKING, BinaryIO

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Callable

    from numpy.typing import NDArray

__all__ = ("BinaryReader", "BinaryWriter")

_FLOAT64 = np.dtype("<f8")


class BinaryWriter:
    __slots__ = ("_stream",)

    def __init__(self, stream: BinaryIO) -> None:
        self._stream = stream

    def magic(self, tag: bytes, version: int) -> None:
        self._stream.write(tag)
        self.u32(version)

    def u8(self, value: int) -> None:
        self._stream.write(struct.pack("<B", value))

    def u16(self, value: int) -> None:
        self._stream.write(struct.pack("<H", value))

    def u32(self, value: int) -> None:
        self._stream.write(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self._stream.write(struct.pack("<Q", value))

    def text(self, value: str) -> None:
        encoded = value.encode("utf-8")
        self.u16(len(encoded))
        self._stream.write(encoded)

    def shape(self, shape: tuple[int, ...]) -> None:
        self.u8(len(shape))
        for dim in shape:
            self.u32(dim)

    def float64(self, array: NDArray[np.float64]) -> None:
        self._stream.write(np.ascontiguousarray(array, dtype=_FLOAT64).tobytes(order="C"))

    def raw(self, payload: bytes) -> None:
        self._stream.write(payload)


class BinaryReader:
    """Cursor over an in-memory payload; every failure reports the byte offset."""

    __slots__ = ("_error", "_payload", "offset")

    def __init__(self, payload: bytes, error: Callable[[str, int], Exception]) -> None:
        self._payload = payload
        self._error = error
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self._payload) - self.offset

    def take(self, size: int) -> bytes:
        if size > self.remaining:
            raise self._error(f"truncated payload: needed {size} bytes, {self.remaining} left", self.offset)
        chunk = self._payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def magic(self, tag: bytes, supported_versions: set[int]) -> int:
        start = self.offset
        found = self.take(len(tag))
        if found != tag:
            raise self._error(f"bad magic {found!r}, expected {tag!r}", start)
        version = self.u32()
        if version not in supported_versions:
            raise self._error(f"unsupported version {version}", start + len(tag))
        return version

    def u8(self) -> int:
        return int(struct.unpack("<B", self.take(1))[0])

    def u16(self) -> int:
        return int(struct.unpack("<H", self.take(2))[0])

    def u32(self) -> int:
        return int(struct.unpack("<I", self.take(4))[0])

    def u64(self) -> int:
        return int(struct.unpack("<Q", self.take(8))[0])

    def text(self) -> str:
        length = self.u16()
        start = self.offset
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self._error("invalid UTF-8 name", start) from exc

    def shape(self) -> tuple[int, ...]:
        ndim = self.u8()
        return tuple(self.u32() for _ in range(ndim))

    def float64(self, shape: tuple[int, ...]) -> NDArray[np.float64]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        chunk = self.take(count * _FLOAT64.itemsize)
        return np.frombuffer(chunk, dtype=_FLOAT64).astype(np.float64).reshape(shape)

    def expect_end(self) -> None:
        if self.remaining:
            raise self._error(f"{self.remaining} trailing bytes", self.offset)
