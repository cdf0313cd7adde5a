from __future__ import annotations

import io
from collections import Counter
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.buffer.schemas import FLOAT_BUDGET, Exemplar
from cirlab.lib.binary import BinaryReader, BinaryWriter
from cirlab.lib.exceptions import CheckpointFormatError, InvariantViolationError

if TYPE_CHECKING:
    from collections.abc import Iterator

    from cirlab.domain.buffer.schemas import BufferPolicy

__all__ = ("MemoryBuffer",)

logger = structlog.get_logger()

BUFFER_MAGIC = b"CIRB"
BUFFER_VERSION = 1
_POLICY_CODES: dict[str, int] = {"reservoir": 0, "class_balanced": 1}


def _format_error(reason: str, offset: int) -> CheckpointFormatError:
    return CheckpointFormatError(detail=f"{reason} at byte {offset}")


class MemoryBuffer:
    """Bounded store of exemplars for replay.

    ``reservoir`` keeps every exemplar ever offered with equal probability
    ``capacity / seen_count``. ``class_balanced`` evicts from the largest class
    once full, and falls back to a per-class reservoir when the incoming class
    is already the largest.
    """

    def __init__(
        self,
        capacity: int = 200,
        policy: BufferPolicy = "reservoir",
        *,
        seed: int = 0,
        float_budget: int = FLOAT_BUDGET,
    ) -> None:
        if capacity < 1:
            msg = f"buffer capacity must be positive, got {capacity}"
            raise ValueError(msg)
        if policy not in _POLICY_CODES:
            msg = f"unknown buffer policy {policy!r}"
            raise ValueError(msg)
        self.capacity = capacity
        self.policy: BufferPolicy = policy
        self.float_budget = float_budget
        self.seen_count = 0
        self.class_seen: Counter[int] = Counter()
        self._exemplars: list[Exemplar] = []
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._exemplars)

    def __iter__(self) -> Iterator[Exemplar]:
        return iter(self._exemplars)

    @property
    def exemplars(self) -> tuple[Exemplar, ...]:
        return tuple(self._exemplars)

    @property
    def total_floats(self) -> int:
        return sum(e.float_cost for e in self._exemplars)

    def class_counts(self) -> Counter[int]:
        return Counter(e.label for e in self._exemplars)

    def insert(self, exemplar: Exemplar) -> bool:
        """Offer one exemplar; returns whether it was stored.

        Raises:
            FloatBudgetError: the exemplar exceeds the per-exemplar budget.
        """
        exemplar.check(self.float_budget)
        self.seen_count += 1
        self.class_seen[exemplar.label] += 1
        if len(self._exemplars) < self.capacity:
            self._exemplars.append(exemplar)
            return True
        if self.policy == "class_balanced":
            return self._insert_balanced(exemplar)
        slot = int(self._rng.integers(0, self.seen_count))
        if slot < self.capacity:
            self._exemplars[slot] = exemplar
            return True
        return False

    def _insert_balanced(self, exemplar: Exemplar) -> bool:
        counts = self.class_counts()
        largest = max(counts.values())
        own = counts.get(exemplar.label, 0)
        if own < largest:
            crowded = sorted(label for label, count in counts.items() if count == largest)
            victim_class = crowded[int(self._rng.integers(len(crowded)))]
            slots = [i for i, e in enumerate(self._exemplars) if e.label == victim_class]
            self._exemplars[slots[int(self._rng.integers(len(slots)))]] = exemplar
            return True
        draw = int(self._rng.integers(0, self.class_seen[exemplar.label]))
        if draw < own:
            slots = [i for i, e in enumerate(self._exemplars) if e.label == exemplar.label]
            self._exemplars[slots[draw]] = exemplar
            return True
        return False

    def sample_batch(self, n: int, seed: int | np.random.SeedSequence) -> list[Exemplar]:
        """Draw ``n`` exemplars uniformly.

        Without replacement when ``n`` fits the buffer, with replacement
        otherwise. An empty buffer yields an empty list.
        """
        if not self._exemplars or n <= 0:
            return []
        rng = np.random.default_rng(seed)
        size = len(self._exemplars)
        indices = rng.choice(size, size=n, replace=n > size)
        return [self._exemplars[int(i)] for i in indices]

    def check_invariants(self) -> None:
        if len(self._exemplars) > self.capacity:
            raise InvariantViolationError(detail=f"buffer holds {len(self._exemplars)} > capacity {self.capacity}")
        if self.total_floats > self.capacity * self.float_budget:
            raise InvariantViolationError(detail=f"buffer stores {self.total_floats} floats over its budget")
        for exemplar in self._exemplars:
            if exemplar.float_cost > self.float_budget:
                raise InvariantViolationError(
                    detail=f"exemplar of class {exemplar.label} costs {exemplar.float_cost} floats",
                )

    def dump(self) -> bytes:
        feature_dim = self._exemplars[0].feature.size if self._exemplars else 0
        num_classes = self._exemplars[0].logit.size if self._exemplars else 0
        buffer = io.BytesIO()
        writer = BinaryWriter(buffer)
        writer.magic(BUFFER_MAGIC, BUFFER_VERSION)
        writer.u32(self.capacity)
        writer.u8(_POLICY_CODES[self.policy])
        writer.u32(self.float_budget)
        writer.u64(self.seen_count)
        _write_rng_state(writer, self._rng)
        writer.u32(len(self.class_seen))
        for label, count in sorted(self.class_seen.items()):
            writer.u32(label)
            writer.u64(count)
        writer.u32(len(self._exemplars))
        writer.u32(feature_dim)
        writer.u32(num_classes)
        for exemplar in self._exemplars:
            writer.u32(exemplar.label)
            writer.u32(exemplar.task_of_origin)
            writer.float64(exemplar.feature)
            writer.float64(exemplar.logit)
        return buffer.getvalue()

    @classmethod
    def restore(cls, payload: bytes) -> MemoryBuffer:
        reader = BinaryReader(payload, _format_error)
        reader.magic(BUFFER_MAGIC, {BUFFER_VERSION})
        capacity = reader.u32()
        code = reader.u8()
        policies = {value: key for key, value in _POLICY_CODES.items()}
        if code not in policies:
            raise CheckpointFormatError(detail=f"unknown buffer policy code {code} at byte {reader.offset - 1}")
        float_budget = reader.u32()
        seen_count = reader.u64()
        rng_state = _read_rng_state(reader)
        class_seen = Counter({reader.u32(): reader.u64() for _ in range(reader.u32())})
        size = reader.u32()
        feature_dim = reader.u32()
        num_classes = reader.u32()
        exemplars = []
        for _ in range(size):
            label = reader.u32()
            task = reader.u32()
            feature = reader.float64((feature_dim,))
            logit = reader.float64((num_classes,))
            exemplars.append(Exemplar(feature=feature, logit=logit, label=label, task_of_origin=task))
        reader.expect_end()

        restored = cls(capacity, policies[code], float_budget=float_budget)  # type: ignore[arg-type]
        restored.seen_count = seen_count
        restored.class_seen = class_seen
        restored._exemplars = exemplars
        restored._rng.bit_generator.state = rng_state
        restored.check_invariants()
        return restored

    def save(self, path: Path | str) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(self.dump())
        return target

    @classmethod
    def load(cls, path: Path | str) -> MemoryBuffer:
        restored = cls.restore(Path(path).read_bytes())
        logger.debug("Buffer restored", path=str(path), size=len(restored), seen=restored.seen_count)
        return restored


def _write_rng_state(writer: BinaryWriter, rng: np.random.Generator) -> None:
    state = rng.bit_generator.state
    writer.text(state["bit_generator"])
    writer.raw(int(state["state"]["state"]).to_bytes(16, "little"))
    writer.raw(int(state["state"]["inc"]).to_bytes(16, "little"))
    writer.u8(int(state["has_uint32"]))
    writer.u32(int(state["uinteger"]))


def _read_rng_state(reader: BinaryReader) -> dict[str, object]:
    name = reader.text()
    if name != "PCG64":
        raise CheckpointFormatError(detail=f"unsupported bit generator {name!r} at byte {reader.offset}")
    value = int.from_bytes(reader.take(16), "little")
    increment = int.from_bytes(reader.take(16), "little")
    return {
        "bit_generator": name,
        "state": {"state": value, "inc": increment},
        "has_uint32": reader.u8(),
        "uinteger": reader.u32(),
    }
