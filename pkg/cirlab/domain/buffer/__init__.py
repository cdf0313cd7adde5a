from cirlab.domain.buffer.schemas import (
    FLOAT_BUDGET,
    BufferConfig,
    Exemplar,
    ReplayBatch,
    stack_exemplars,
)
from cirlab.domain.buffer.services import MemoryBuffer

__all__ = ("FLOAT_BUDGET", "BufferConfig", "Exemplar", "MemoryBuffer", "ReplayBatch", "stack_exemplars")
