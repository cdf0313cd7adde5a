from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import msgspec
import numpy as np
import structlog

from cirlab.domain.nn.checkpoint import decode_params, encode_params, params_from_arrays
from cirlab.domain.nn.model import ema_blend, model_forward, snapshot, softmax
from cirlab.domain.nn.schemas import ModelConfig
from cirlab.domain.pool.schemas import ManifestEntry, PoolManifest, PoolTargets
from cirlab.lib.exceptions import CheckpointFormatError, InvariantViolationError

if TYPE_CHECKING:
    from collections.abc import Iterator

    from numpy.typing import NDArray

    from cirlab.domain.nn.model import ModelParams
    from cirlab.domain.pool.schemas import EnsembleMode

__all__ = ("ModelPool", "ensemble_predict")

logger = structlog.get_logger()

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "pool.bin"
MANIFEST_VERSION = 1


class ModelPool:
    """FIFO of previous-model snapshots, newest last."""

    def __init__(self, max_size: int = 3, momentum: float = 0.9) -> None:
        if max_size < 1:
            msg = f"pool size must be at least 1, got {max_size}"
            raise ValueError(msg)
        self.max_size = max_size
        self.momentum = momentum
        self.snapshots: list[ModelParams] = []
        self._before_push: list[ModelParams] | None = None

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self) -> Iterator[ModelParams]:
        return iter(self.snapshots)

    def push_snapshot(self, params: ModelParams) -> None:
        self._before_push = list(self.snapshots)
        self.snapshots.append(snapshot(params))
        evicted = 0
        while len(self.snapshots) > self.max_size:
            self.snapshots.pop(0)
            evicted += 1
        logger.debug("Snapshot pushed", pool_size=len(self.snapshots), evicted=evicted)

    def previous(self) -> ModelPool:
        """The pool as it stood before the latest push; arrays are shared.

        A snapshot evicted by that push stays reachable here. A loaded pool
        that has not been pushed to since drops its newest snapshot instead.
        """
        view = ModelPool(max_size=self.max_size, momentum=self.momentum)
        view.snapshots = list(self.snapshots[:-1] if self._before_push is None else self._before_push)
        return view

    def ema_refresh_all(self, current: ModelParams) -> None:
        """Blend every snapshot toward ``current``; ``current`` is only read."""
        for held in self.snapshots:
            ema_blend(held, current, self.momentum)

    def compute_targets(self, images: NDArray[np.float64]) -> PoolTargets:
        """Forward every snapshot and pick per-sample targets by confidence.

        Confidence is the largest softmax probability of a snapshot's class
        logits. Ties go to the newest snapshot.
        """
        if not self.snapshots:
            return PoolTargets.empty(len(images), 0, 0)
        features: list[NDArray[np.float64]] = []
        logits: list[NDArray[np.float64]] = []
        for held in self.snapshots:
            output = model_forward(held, images)
            features.append(output.features.value)
            logits.append(output.logits.value)
        confidence = np.stack([softmax(batch).max(axis=1) for batch in logits])
        newest_first = confidence[::-1]
        selected = (len(self.snapshots) - 1 - np.argmax(newest_first, axis=0)).astype(np.int64)
        rows = np.arange(confidence.shape[1])
        stacked_features = np.stack(features)
        stacked_logits = np.stack(logits)
        return PoolTargets(
            feature_targets=stacked_features[selected, rows],
            logit_targets=stacked_logits[selected, rows],
            logit_batches=logits,
            selected_model_index=selected,
        )

    def check_invariants(self, live: ModelParams | None = None) -> None:
        if len(self.snapshots) > self.max_size:
            raise InvariantViolationError(detail=f"pool holds {len(self.snapshots)} > {self.max_size} snapshots")
        if live is None:
            return
        for position, held in enumerate(self.snapshots):
            for name, array in held.arrays.items():
                if np.shares_memory(array, live.arrays[name]):
                    raise InvariantViolationError(
                        detail=f"snapshot {position} aliases the live parameter block '{name}'",
                    )

    def save(self, directory: Path | str) -> Path:
        """Write ``pool.bin`` (concatenated parameter files) and its JSON manifest."""
        target = Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        entries: list[ManifestEntry] = []
        offset = 0
        with (target / PAYLOAD_NAME).open("wb") as payload:
            for held in self.snapshots:
                encoded = encode_params(held.arrays)
                payload.write(encoded)
                entries.append(ManifestEntry(offset=offset, length=len(encoded)))
                offset += len(encoded)
        model = self.snapshots[0].config if self.snapshots else ModelConfig()
        manifest = PoolManifest(
            version=MANIFEST_VERSION,
            max_size=self.max_size,
            momentum=self.momentum,
            model=model,
            snapshots=entries,
        )
        (target / MANIFEST_NAME).write_bytes(msgspec.json.format(msgspec.json.encode(manifest)))
        return target

    @classmethod
    def load(cls, directory: Path | str) -> ModelPool:
        source = Path(directory)
        try:
            manifest = msgspec.json.decode((source / MANIFEST_NAME).read_bytes(), type=PoolManifest)
        except msgspec.DecodeError as exc:
            raise CheckpointFormatError(detail=f"invalid pool manifest: {exc}") from exc
        if manifest.version != MANIFEST_VERSION:
            raise CheckpointFormatError(detail=f"unsupported pool manifest version {manifest.version}")
        payload = (source / PAYLOAD_NAME).read_bytes()
        pool = cls(max_size=manifest.max_size, momentum=manifest.momentum)
        for entry in manifest.snapshots:
            if entry.offset + entry.length > len(payload):
                raise CheckpointFormatError(
                    detail=f"manifest entry at {entry.offset} overruns {PAYLOAD_NAME} ({len(payload)} bytes)",
                )
            arrays = decode_params(payload[entry.offset : entry.offset + entry.length])
            pool.snapshots.append(params_from_arrays(manifest.model, arrays))
        pool.check_invariants()
        return pool


def ensemble_predict(
    current: ModelParams,
    pool: ModelPool,
    images: NDArray[np.float64],
    *,
    index: int = -1,
    mode: EnsembleMode = "probability",
) -> NDArray[np.int64]:
    """Class predictions of the current model averaged with one snapshot.

    ``index`` picks the snapshot; when the pool is still shorter than the
    index reaches, the newest snapshot is used. An empty pool leaves the
    current model alone.
    """
    current_logits = model_forward(current, images).logits.value
    if not pool.snapshots:
        return np.argmax(current_logits, axis=1).astype(np.int64)
    size = len(pool.snapshots)
    partner = pool.snapshots[index] if -size <= index < size else pool.snapshots[-1]
    partner_logits = model_forward(partner, images).logits.value
    if mode == "logit":
        combined = 0.5 * (current_logits + partner_logits)
    else:
        combined = 0.5 * (softmax(current_logits) + softmax(partner_logits))
    return np.argmax(combined, axis=1).astype(np.int64)
