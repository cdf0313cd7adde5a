from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cirlab.domain.nn.model import model_forward
from cirlab.domain.pool.services import ensemble_predict
from cirlab.lib.exceptions import EvaluationError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

    from cirlab.domain.nn.model import ModelParams
    from cirlab.domain.pool.schemas import EnsembleMode
    from cirlab.domain.pool.services import ModelPool
    from cirlab.domain.stream.schemas import EvalSet

    Predictor = Callable[[NDArray[np.float64]], NDArray[np.int64]]

__all__ = (
    "average_forgetting",
    "confusion_matrix",
    "ensemble_model",
    "evaluate",
    "single_model",
)


def single_model(params: ModelParams) -> Predictor:
    def _predict(images: NDArray[np.float64]) -> NDArray[np.int64]:
        return np.argmax(model_forward(params, images).logits.value, axis=1).astype(np.int64)

    return _predict


def ensemble_model(
    params: ModelParams,
    pool: ModelPool,
    *,
    index: int = -1,
    mode: EnsembleMode = "probability",
) -> Predictor:
    def _predict(images: NDArray[np.float64]) -> NDArray[np.int64]:
        return ensemble_predict(params, pool, images, index=index, mode=mode)

    return _predict


def evaluate(predictor: Predictor, eval_set: EvalSet) -> float:
    """Fraction of test samples whose predicted class is correct.

    Raises:
        EvaluationError: the test set is empty.
    """
    if len(eval_set) == 0:
        raise EvaluationError(detail="cannot evaluate on an empty test set")
    predictions = predictor(eval_set.images)
    return float(np.mean(predictions == eval_set.labels))


def confusion_matrix(predictions: NDArray[np.int64], labels: NDArray[np.int64], num_classes: int) -> NDArray[np.int64]:
    """``counts[true, predicted]``."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return counts


def average_forgetting(accuracy_matrix: Sequence[Sequence[float]]) -> float:
    """Mean drop from the best earlier accuracy to the final one, over all but the last experience."""
    final = len(accuracy_matrix) - 1
    if final < 1:
        return 0.0
    drops = [
        max(accuracy_matrix[row][column] for row in range(column, final)) - accuracy_matrix[final][column]
        for column in range(final)
    ]
    return float(np.mean(drops))
