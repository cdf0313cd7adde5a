"""Synthetic grayscale images and the 90° rotation transform."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Protocol

import numpy as np

from cirlab.domain.autodiff import rotate90
from cirlab.lib.exceptions import ShapeMismatchError

if TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = ("ImageSource", "SyntheticImages", "rotate_image", "synth_image")

DEFAULT_SIDE = 16
_CLASS_KEY = 0x5EED
_NOISE_SCALE = 0.05
_PHASE_JITTER = 0.3
_BLOB_JITTER = 0.03


class ImageSource(Protocol):
    side: int

    def image(self, class_id: int, instance_seed: int) -> NDArray[np.float64]: ...


@dataclass(frozen=True)
class _ClassPattern:
    angle: float
    frequency: float
    phase: float
    blob_x: float
    blob_y: float
    blob_width: float


@lru_cache(maxsize=256)
def _class_pattern(class_id: int) -> _ClassPattern:
    rng = np.random.default_rng(np.random.SeedSequence(_CLASS_KEY, spawn_key=(class_id,)))
    return _ClassPattern(
        angle=float(rng.uniform(0.0, np.pi)),
        frequency=float(rng.uniform(1.5, 3.5)),
        phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        blob_x=float(rng.uniform(0.2, 0.8)),
        blob_y=float(rng.uniform(0.2, 0.8)),
        blob_width=float(rng.uniform(0.1, 0.2)),
    )


def synth_image(class_id: int, instance_seed: int, side: int = DEFAULT_SIDE) -> NDArray[np.float64]:
    """Draw one image of ``class_id``.

    The class fixes an oriented stripe field and an off-centre blob; the
    instance seed jitters the stripe phase and blob position and adds pixel
    noise. A top-to-bottom intensity ramp shared by every class keeps the
    image orientation-bearing, so a 90° rotation is always detectable.

    Args:
        class_id: non-negative class identifier.
        instance_seed: seed of this particular draw.
        side: image side length in pixels.

    Returns:
        A ``side × side`` float64 image clamped to ``[0, 1]``.
    """
    if class_id < 0:
        msg = f"class_id must be non-negative, got {class_id}"
        raise ValueError(msg)
    pattern = _class_pattern(class_id)
    rng = np.random.default_rng(np.random.SeedSequence(int(instance_seed), spawn_key=(int(class_id),)))
    phase = pattern.phase + rng.uniform(-_PHASE_JITTER, _PHASE_JITTER)
    blob_x = pattern.blob_x + rng.normal(0.0, _BLOB_JITTER)
    blob_y = pattern.blob_y + rng.normal(0.0, _BLOB_JITTER)

    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    direction = xx * np.cos(pattern.angle) + yy * np.sin(pattern.angle)
    stripes = 0.5 + 0.5 * np.cos(2.0 * np.pi * pattern.frequency * direction + phase)
    blob = np.exp(-((xx - blob_x) ** 2 + (yy - blob_y) ** 2) / (2.0 * pattern.blob_width**2))
    ramp = 1.0 - yy
    image = 0.35 * stripes + 0.45 * blob + 0.2 * ramp + rng.normal(0.0, _NOISE_SCALE, size=(side, side))
    return np.clip(image, 0.0, 1.0)


def rotate_image(image: NDArray[np.float64], k: int) -> NDArray[np.float64]:
    """Rotate a square image counter-clockwise by ``90·k`` degrees.

    Raises:
        ShapeMismatchError: the image is not square.
        ValueError: ``k`` is not one of 0, 1, 2, 3.
    """
    if k not in (0, 1, 2, 3):
        msg = f"rotation index must be 0, 1, 2 or 3, got {k}"
        raise ValueError(msg)
    array = np.asarray(image, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise ShapeMismatchError("rotate_image", tuple(array.shape), ())
    return rotate90(array, k)


@dataclass(frozen=True)
class SyntheticImages:
    side: int = DEFAULT_SIDE

    def image(self, class_id: int, instance_seed: int) -> NDArray[np.float64]:
        return synth_image(class_id, instance_seed, side=self.side)
