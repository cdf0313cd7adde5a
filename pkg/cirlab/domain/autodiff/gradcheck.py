from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from cirlab.domain.autodiff.graph import backward, parameter
from cirlab.lib.schema import BaseStruct

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

    from numpy.typing import NDArray

    from cirlab.domain.autodiff.graph import Node

    LossFn = Callable[[Mapping[str, Node]], Node]

__all__ = ("BlockDiscrepancy", "GradientCheckReport", "finite_diff_check", "relative_error")


class BlockDiscrepancy(BaseStruct):
    name: str
    relative_error: float
    """Norm of the block difference over the larger block norm, see :func:`relative_error`."""
    analytic_norm: float
    numeric_norm: float


class GradientCheckReport(BaseStruct):
    blocks: list[BlockDiscrepancy]
    tolerance: float
    step: float
    valid: bool = True
    """False when two identical evaluations of the loss disagreed."""

    @property
    def worst_relative_error(self) -> float:
        return max((block.relative_error for block in self.blocks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.valid and self.worst_relative_error <= self.tolerance


def relative_error(analytic: NDArray[np.float64], numeric: NDArray[np.float64]) -> float:
    """Block-level relative discrepancy ``‖a − n‖ / max(‖a‖, ‖n‖)``; 0 when both vanish."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / scale


def _evaluate(loss_fn: LossFn, params: Mapping[str, NDArray[np.float64]]) -> float:
    leaves = {name: parameter(array, name=name) for name, array in params.items()}
    return loss_fn(leaves).item()


def finite_diff_check(
    loss_fn: LossFn,
    params: Mapping[str, NDArray[np.float64]],
    step: float = 1e-6,
    tolerance: float = 1e-4,
) -> GradientCheckReport:
    """Compare reverse-mode gradients with central differences.

    Args:
        loss_fn: builds a scalar loss from named parameter leaves. Must be
            deterministic.
        params: parameter blocks; perturbed in place and restored.
        step: finite-difference step.
        tolerance: largest acceptable block relative error.

    Returns:
        One discrepancy entry per block, and whether the check is valid.
    """
    if step <= 0:
        msg = f"finite-difference step must be positive, got {step}"
        raise ValueError(msg)
    working = {name: np.array(array, dtype=np.float64, copy=True) for name, array in params.items()}
    valid = _evaluate(loss_fn, working) == _evaluate(loss_fn, working)

    leaves = {name: parameter(array, name=name) for name, array in working.items()}
    analytic = backward(loss_fn(leaves), wrt=leaves)

    blocks: list[BlockDiscrepancy] = []
    for name, array in working.items():
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            upper = _evaluate(loss_fn, working)
            flat[index] = original - step
            lower = _evaluate(loss_fn, working)
            flat[index] = original
            numeric_flat[index] = (upper - lower) / (2.0 * step)
        blocks.append(
            BlockDiscrepancy(
                name=name,
                relative_error=relative_error(analytic[name], numeric),
                analytic_norm=float(np.linalg.norm(analytic[name])),
                numeric_norm=float(np.linalg.norm(numeric)),
            ),
        )
    return GradientCheckReport(blocks=blocks, tolerance=tolerance, step=step, valid=valid)
