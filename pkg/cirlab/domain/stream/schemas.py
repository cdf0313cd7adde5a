from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import FrozenStruct

if TYPE_CHECKING:
    from numpy.typing import NDArray

UnlabeledScenario = Literal["same-experience", "in-stream", "random-any"]


class StreamConfig(FrozenStruct):
    """Shape of a class-incremental-with-repetition stream.

    Labeled classes are ``0 .. labeled_classes - 1``; the classes up to
    ``total_classes - 1`` only ever occur in the unlabeled portion of the
    ``random-any`` scenario.
    """

    total_classes: int = 16
    labeled_classes: int = 12
    num_experiences: int = 10
    labeled_per_exp: int = 128
    unlabeled_per_exp: int = 256
    classes_per_exp: int = 4
    repetition_probability: float = 0.5
    unlabeled_scenario: UnlabeledScenario = "in-stream"
    side: int = 16
    seed: int = 0

    def validate(self) -> None:
        """Reject configurations that cannot produce a covering stream.

        Raises:
            ConfigurationError: a count is out of range, or the experiences
                cannot cover every labeled class.
        """
        if self.num_experiences < 1 or self.labeled_per_exp < 1 or self.unlabeled_per_exp < 0:
            raise ConfigurationError(detail="stream needs at least one experience with at least one labeled sample")
        if not 1 <= self.labeled_classes <= self.total_classes:
            raise ConfigurationError(
                detail=f"labeled_classes ({self.labeled_classes}) must lie in [1, total_classes={self.total_classes}]",
            )
        if not 1 <= self.classes_per_exp <= self.labeled_classes:
            raise ConfigurationError(
                detail=(
                    f"classes_per_exp ({self.classes_per_exp}) must lie in "
                    f"[1, labeled_classes={self.labeled_classes}]"
                ),
            )
        if not 0.0 <= self.repetition_probability <= 1.0:
            raise ConfigurationError(
                detail=f"repetition_probability must lie in [0, 1], got {self.repetition_probability}",
            )
        if self.side < 4:
            raise ConfigurationError(detail=f"image side must be at least 4, got {self.side}")
        slots = self.num_experiences * self.classes_per_exp
        if slots < self.labeled_classes:
            raise ConfigurationError(
                detail=(
                    f"{self.num_experiences} experiences x {self.classes_per_exp} classes cannot cover "
                    f"{self.labeled_classes} labeled classes"
                ),
            )
        if self.repetition_probability == 0.0 and slots != self.labeled_classes:
            raise ConfigurationError(
                detail=(
                    "repetition_probability=0 requires num_experiences * classes_per_exp == labeled_classes "
                    f"(got {slots} vs {self.labeled_classes})"
                ),
            )

    @property
    def repeats(self) -> bool:
        return self.repetition_probability > 0.0 and self.num_experiences * self.classes_per_exp > self.labeled_classes


@dataclass(frozen=True, eq=False)
class Experience:
    """One unit of the stream.

    The unlabeled ground truth is kept for diagnostics only; the trainer reads
    ``unlabeled_images`` and never the labels behind them.
    """

    index: int
    labeled_images: NDArray[np.float64]
    """N_e × side × side"""
    labels: NDArray[np.int64]
    unlabeled_images: NDArray[np.float64]
    """N'_e × side × side"""
    class_set: tuple[int, ...]
    """Classes drawn for this experience, in draw order."""
    _unlabeled_truth: NDArray[np.int64] = field(repr=False)

    @property
    def present_classes(self) -> frozenset[int]:
        return frozenset(int(label) for label in np.unique(self.labels))

    @property
    def labeled(self) -> list[tuple[NDArray[np.float64], int]]:
        return [(image, int(label)) for image, label in zip(self.labeled_images, self.labels, strict=True)]

    @property
    def unlabeled(self) -> list[NDArray[np.float64]]:
        return list(self.unlabeled_images)

    def diagnostic_unlabeled_labels(self) -> NDArray[np.int64]:
        """Hidden classes of the unlabeled images, for stream diagnostics."""
        return self._unlabeled_truth.copy()

    def fingerprint(self) -> bytes:
        return b"".join(
            (
                self.labeled_images.tobytes(),
                self.labels.tobytes(),
                self.unlabeled_images.tobytes(),
                self._unlabeled_truth.tobytes(),
            ),
        )


@dataclass(frozen=True, eq=False)
class EvalSet:
    images: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def restrict(self, classes: frozenset[int] | set[int]) -> EvalSet:
        """Samples whose label belongs to ``classes``."""
        mask = np.isin(self.labels, sorted(classes))
        return EvalSet(images=self.images[mask], labels=self.labels[mask])
