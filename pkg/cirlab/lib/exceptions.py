from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping
    from typing import Any


__all__ = (
    "ApplicationError",
    "CheckpointFormatError",
    "ConfigurationError",
    "DatasetFormatError",
    "EvaluationError",
    "FloatBudgetError",
    "InvariantViolationError",
    "NonFiniteGradientError",
    "NonScalarRootError",
    "ShapeMismatchError",
    "TrainingDivergedError",
)


class ApplicationError(Exception):
    """Base exception type for the lib's custom exception types."""

    detail: str

    def __init__(self, *args: Any, detail: str = "") -> None:
        """Initialize ``ApplicationError``.

        Args:
            *args: args are converted to :class:`str` before passing to :class:`Exception`
            detail: detail of the exception.
        """
        str_args = [str(arg) for arg in args if arg]
        if not detail:
            if str_args:
                detail, *str_args = str_args
            elif hasattr(self, "detail"):
                detail = self.detail
        self.detail = detail
        super().__init__(*str_args)

    def __repr__(self) -> str:
        if self.detail:
            return f"{self.__class__.__name__} - {self.detail}"
        return self.__class__.__name__

    def __str__(self) -> str:
        return " ".join((*self.args, self.detail)).strip()


class ConfigurationError(ApplicationError):
    """A run or stream configuration is malformed or infeasible."""

    detail = "Invalid configuration"

    @classmethod
    def unknown_key(cls, key: str, valid_keys: Iterable[str]) -> ConfigurationError:
        listing = ", ".join(sorted(valid_keys))
        return cls(detail=f"Unknown configuration key '{key}'. Valid keys: {listing}")


class ShapeMismatchError(ApplicationError):
    """Two operands of an array operation do not conform."""

    def __init__(self, op: str, left: tuple[int, ...], right: tuple[int, ...]) -> None:
        self.op = op
        self.left = left
        self.right = right
        super().__init__(detail=f"{op}: shape mismatch {left} vs {right}")


class NonScalarRootError(ApplicationError):
    detail = "backward requires a scalar root"


class FloatBudgetError(ApplicationError):
    """An exemplar does not fit the per-exemplar float budget."""

    def __init__(self, cost: int, budget: int) -> None:
        self.cost = cost
        self.budget = budget
        super().__init__(
            detail=f"exemplar costs {cost} floats, budget is {budget}; check feature_dim and the class count",
        )


class DatasetFormatError(ApplicationError):
    """A dataset file could not be decoded."""

    def __init__(self, reason: str, *, offset: int, record: int | None = None) -> None:
        self.offset = offset
        self.record = record
        where = f"byte {offset}" if record is None else f"record {record} (byte {offset})"
        super().__init__(detail=f"{reason} at {where}")


class CheckpointFormatError(ApplicationError):
    detail = "Malformed checkpoint file"


class NonFiniteGradientError(ApplicationError):
    """An optimizer step was handed a NaN or infinite gradient."""

    def __init__(self, block: str) -> None:
        self.block = block
        super().__init__(detail=f"non-finite gradient in parameter block '{block}'; step aborted")


class TrainingDivergedError(ApplicationError):
    """The composite loss became non-finite during training."""

    def __init__(self, step: int, breakdown: Mapping[str, float]) -> None:
        self.step = step
        self.breakdown = dict(breakdown)
        terms = ", ".join(f"{name}={value:.6g}" for name, value in self.breakdown.items())
        super().__init__(detail=f"non-finite loss at step {step} ({terms})")


class EvaluationError(ApplicationError):
    detail = "Evaluation failed"


class InvariantViolationError(ApplicationError):
    detail = "Runtime invariant violated"
