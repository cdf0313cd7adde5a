"""Dataset files: read into a class-indexed image store, or write from arrays."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.stream.images import synth_image
from cirlab.domain.stream.schemas import EvalSet
from cirlab.lib.binary import BinaryReader, BinaryWriter
from cirlab.lib.exceptions import ConfigurationError, DatasetFormatError

if TYPE_CHECKING:
    from collections.abc import Iterable

    from numpy.typing import NDArray

__all__ = ("ImageStore", "build_synthetic_dataset", "ingest_dataset", "write_dataset")

logger = structlog.get_logger()

DATASET_MAGIC = b"CIRD"
DATASET_VERSION = 1
_PIXEL_SCALE = 255.0
_DATASET_KEY = 0xDA7A


@dataclass(frozen=True)
class ImageStore:
    """Images grouped by class, pixels scaled to ``[0, 1]``."""

    side: int
    num_classes: int
    images_by_class: dict[int, NDArray[np.float64]]

    def count(self, class_id: int) -> int:
        pool = self.images_by_class.get(class_id)
        return 0 if pool is None else int(pool.shape[0])

    def image(self, class_id: int, instance_seed: int) -> NDArray[np.float64]:
        pool = self.images_by_class.get(class_id)
        if pool is None or pool.shape[0] == 0:
            raise ConfigurationError(detail=f"dataset holds no images of class {class_id}")
        index = int(np.random.default_rng(int(instance_seed)).integers(pool.shape[0]))
        return pool[index].copy()

    def split(self, holdout_per_class: int) -> tuple[ImageStore, ImageStore]:
        """Move the last ``holdout_per_class`` images of every class to a second store.

        Raises:
            ConfigurationError: a class does not have more images than the holdout.
        """
        train: dict[int, NDArray[np.float64]] = {}
        holdout: dict[int, NDArray[np.float64]] = {}
        for class_id, pool in self.images_by_class.items():
            if pool.shape[0] <= holdout_per_class:
                raise ConfigurationError(
                    detail=(
                        f"class {class_id} has {pool.shape[0]} images; "
                        f"need more than {holdout_per_class} to hold out a test split"
                    ),
                )
            train[class_id] = pool[:-holdout_per_class] if holdout_per_class else pool
            holdout[class_id] = pool[pool.shape[0] - holdout_per_class :]
        return (
            ImageStore(side=self.side, num_classes=self.num_classes, images_by_class=train),
            ImageStore(side=self.side, num_classes=self.num_classes, images_by_class=holdout),
        )

    def eval_set(self, classes: Iterable[int]) -> EvalSet:
        chosen = [c for c in sorted(classes) if self.count(c)]
        if not chosen:
            return EvalSet(
                images=np.empty((0, self.side, self.side), dtype=np.float64),
                labels=np.empty(0, dtype=np.int64),
            )
        images = np.concatenate([self.images_by_class[c] for c in chosen], axis=0)
        labels = np.concatenate([np.full(self.count(c), c, dtype=np.int64) for c in chosen])
        return EvalSet(images=images, labels=labels)


def _record_dtype(side: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("pixels", "u1", (side * side,))])


def _decode(payload: bytes) -> ImageStore:
    reader = BinaryReader(payload, lambda reason, offset: DatasetFormatError(reason, offset=offset))
    reader.magic(DATASET_MAGIC, {DATASET_VERSION})
    count = reader.u32()
    side = reader.u16()
    num_classes = reader.u16()
    if side == 0 or num_classes == 0:
        raise DatasetFormatError(f"invalid header (side={side}, num_classes={num_classes})", offset=reader.offset - 4)

    dtype = _record_dtype(side)
    body_start = reader.offset
    complete = reader.remaining // dtype.itemsize
    if complete < count:
        raise DatasetFormatError(
            f"truncated payload: {count} records declared, {complete} complete",
            offset=body_start + complete * dtype.itemsize,
            record=complete,
        )
    records = np.frombuffer(reader.take(count * dtype.itemsize), dtype=dtype)
    reader.expect_end()

    labels = records["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        first = int(bad[0])
        raise DatasetFormatError(
            f"label {labels[first]} out of range for {num_classes} classes",
            offset=body_start + first * dtype.itemsize,
            record=first,
        )
    pixels = records["pixels"].reshape(count, side, side).astype(np.float64) / _PIXEL_SCALE
    by_class = {int(c): pixels[labels == c] for c in np.unique(labels)}
    return ImageStore(side=side, num_classes=num_classes, images_by_class=by_class)


def ingest_dataset(path: Path | str) -> ImageStore:
    """Read a dataset file.

    Raises:
        DatasetFormatError: bad magic or version, truncated payload, trailing
            bytes, or a label outside ``[0, num_classes)``; the message names
            the byte offset and, for record errors, the record index.
    """
    source = Path(path)
    store = _decode(source.read_bytes())
    logger.info(
        "Dataset ingested",
        path=str(source),
        classes=len(store.images_by_class),
        images=sum(store.count(c) for c in store.images_by_class),
        side=store.side,
    )
    return store


def encode_dataset(images: NDArray[np.uint8], labels: NDArray[np.int64], num_classes: int) -> bytes:
    if images.ndim != 3 or images.shape[1] != images.shape[2] or images.shape[0] != labels.shape[0]:
        msg = f"expected N x side x side images matching {labels.shape[0]} labels, got {images.shape}"
        raise ValueError(msg)
    side = int(images.shape[1])
    records = np.empty(labels.shape[0], dtype=_record_dtype(side))
    records["label"] = labels
    records["pixels"] = images.reshape(labels.shape[0], side * side)
    buffer = io.BytesIO()
    writer = BinaryWriter(buffer)
    writer.magic(DATASET_MAGIC, DATASET_VERSION)
    writer.u32(int(labels.shape[0]))
    writer.u16(side)
    writer.u16(num_classes)
    writer.raw(records.tobytes())
    return buffer.getvalue()


def write_dataset(path: Path | str, images: NDArray[np.uint8], labels: NDArray[np.int64], num_classes: int) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_dataset(images, labels, num_classes))
    return target


def build_synthetic_dataset(
    num_classes: int,
    per_class: int,
    side: int,
    seed: int,
) -> tuple[NDArray[np.uint8], NDArray[np.int64]]:
    """Quantized synthetic images, ``per_class`` of each class, class-major order."""
    images = np.empty((num_classes * per_class, side, side), dtype=np.uint8)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    for class_id in range(num_classes):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_DATASET_KEY, class_id)))
        for offset, instance_seed in enumerate(rng.integers(0, 2**63 - 1, size=per_class)):
            pixels = synth_image(class_id, int(instance_seed), side=side)
            images[class_id * per_class + offset] = np.rint(pixels * _PIXEL_SCALE).astype(np.uint8)
    return images, labels
