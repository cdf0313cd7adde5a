from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from cirlab.lib.exceptions import NonFiniteGradientError, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Mapping

    from numpy.typing import NDArray

__all__ = ("AdamState", "adam_step")


@dataclass
class AdamState:
    """Moment estimates shared by every parameter block of one model.

    Not reset between experiences.
    """

    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    second_moment: dict[str, NDArray[np.float64]] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, NDArray[np.float64]],
    grads: Mapping[str, NDArray[np.float64]],
) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Every gradient is validated before anything is mutated, so a rejected
    step leaves both the parameters and the optimizer state untouched.

    Raises:
        NonFiniteGradientError: a gradient block holds NaN or infinity.
        ShapeMismatchError: a gradient does not match its parameter.
    """
    for name, array in params.items():
        grad = grads[name]
        if grad.shape != array.shape:
            raise ShapeMismatchError(f"adam_step[{name}]", tuple(array.shape), tuple(grad.shape))
        if not np.isfinite(grad).all():
            raise NonFiniteGradientError(name)

    state.step_count += 1
    correction1 = 1.0 - state.beta1**state.step_count
    correction2 = 1.0 - state.beta2**state.step_count
    for name, array in params.items():
        grad = grads[name]
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(array)
            state.second_moment[name] = np.zeros_like(array)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        array -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
