from __future__ import annotations

from itertools import count
from typing import TYPE_CHECKING

import numpy as np
import pytest

from cirlab.domain.autodiff import (
    add,
    add_bias,
    backward,
    concat_rows,
    constant,
    finite_diff_check,
    log_softmax,
    matmul,
    mean,
    mul,
    normalize_rows,
    parameter,
    pick,
    relu,
    repeat_columns,
    reshape,
    rotate90,
    scale,
    softmax,
    sub,
    sum_sq,
    take_columns,
    total,
    transpose,
)
from cirlab.domain.autodiff.gradcheck import BlockDiscrepancy, GradientCheckReport, relative_error
from cirlab.lib.exceptions import NonScalarRootError, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

    from cirlab.domain.autodiff import Node

    Case = tuple[Callable[[Mapping[str, Node]], Node], dict[str, np.ndarray]]


def test_matmul_gradient_matches_closed_form(rng: np.random.Generator) -> None:
    a = parameter(rng.normal(size=(3, 4)), name="a")
    b = parameter(rng.normal(size=(4, 2)), name="b")
    grads = backward(sum_sq(matmul(a, b)), wrt={"a": a, "b": b})
    product = a.value @ b.value
    np.testing.assert_allclose(grads["a"], 2 * product @ b.value.T)
    np.testing.assert_allclose(grads["b"], 2 * a.value.T @ product)


@pytest.mark.parametrize(
    "build",
    [
        lambda n: sum_sq(matmul(n["x"], transpose(n["x"]))),
        lambda n: scale(mean(pick(log_softmax(n["x"]), [0, 2, 1])), -1.0),
        lambda n: sum_sq(sub(normalize_rows(n["x"]), constant(np.full((3, 4), 0.3)))),
        lambda n: sum_sq(take_columns(n["x"], [2, 0])),
        lambda n: sum_sq(concat_rows(n["x"], scale(n["x"], 2.0))),
        lambda n: sum_sq(reshape(n["x"], (4, 3))),
        lambda n: sum_sq(add_bias(n["x"], constant(np.arange(4.0)))),
    ],
    ids=["gram", "cross-entropy", "normalize", "columns", "concat", "reshape", "bias"],
)
def test_operations_pass_finite_differences(build, rng: np.random.Generator) -> None:
    report = finite_diff_check(build, {"x": rng.normal(size=(3, 4))})
    assert report.valid
    assert report.passed, report.worst_relative_error


def test_normalize_rows_outputs_unit_rows(rng: np.random.Generator) -> None:
    out = normalize_rows(constant(rng.normal(size=(5, 3)))).value
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0)


def test_relu_gradient_masks_negative_inputs() -> None:
    x = parameter(np.array([[-1.0, 2.0], [3.0, -4.0]]), name="x")
    grads = backward(sum_sq(relu(x)), wrt={"x": x})
    np.testing.assert_array_equal(grads["x"], [[0.0, 4.0], [6.0, 0.0]])


def test_log_softmax_rows_normalize(rng: np.random.Generator) -> None:
    out = log_softmax(constant(rng.normal(size=(4, 6)) * 50)).value
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0)


def test_softmax_rows_are_distributions(rng: np.random.Generator) -> None:
    out = softmax(constant(rng.normal(size=(4, 6)) * 50)).value
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert np.all(out >= 0.0)
    with pytest.raises(ShapeMismatchError):
        softmax(constant(np.ones(3)))


def test_unused_leaf_gets_zero_gradient(rng: np.random.Generator) -> None:
    used = parameter(rng.normal(size=(2, 2)), name="used")
    unused = parameter(rng.normal(size=(3,)), name="unused")
    grads = backward(sum_sq(used), wrt={"used": used, "unused": unused})
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


def test_shared_node_accumulates_gradient() -> None:
    x = parameter(np.array([[2.0]]), name="x")
    grads = backward(sum_sq(add(x, x)), wrt={"x": x})
    np.testing.assert_array_equal(grads["x"], [[16.0]])


def test_backward_rejects_non_scalar_root() -> None:
    x = parameter(np.ones((2, 2)), name="x")
    with pytest.raises(NonScalarRootError):
        backward(scale(x, 2.0), wrt={"x": x})


def test_shape_mismatch_names_both_shapes() -> None:
    with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(3, 2\)"):
        add(constant(np.ones((2, 3))), constant(np.ones((3, 2))))
    with pytest.raises(ShapeMismatchError):
        matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))


def test_parameter_requires_float64() -> None:
    with pytest.raises(TypeError):
        parameter(np.ones(3, dtype=np.float32), name="w")


def test_gradient_check_flags_nondeterministic_loss() -> None:
    calls = count()
    report = finite_diff_check(
        lambda n: add(sum_sq(n["x"]), constant(float(next(calls)))),
        {"x": np.ones((2, 2))},
    )
    assert not report.valid
    assert not report.passed


def test_gradient_check_catches_wrong_gradient() -> None:
    def wrong_square(n):
        # value of sum(x²), gradient of sum(x)
        x = n["x"]
        return add(total(x), constant(float(np.sum(x.value * x.value - x.value))))

    report = finite_diff_check(wrong_square, {"x": np.full((2, 2), 3.0)})
    assert not report.passed


def test_relative_error_is_zero_for_vanishing_blocks() -> None:
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.ones(3), np.ones(3)) == 0.0


def test_relative_error_is_a_block_norm_ratio() -> None:
    # ‖(3, -4)‖ over the larger of ‖(3, 0)‖ and ‖(0, 4)‖
    assert relative_error(np.array([3.0, 0.0]), np.array([0.0, 4.0])) == pytest.approx(1.25)
    report = GradientCheckReport(
        blocks=[
            BlockDiscrepancy(name="w", relative_error=2e-5, analytic_norm=1.0, numeric_norm=1.0),
            BlockDiscrepancy(name="b", relative_error=3e-4, analytic_norm=2.0, numeric_norm=2.0),
        ],
        tolerance=1e-4,
        step=1e-6,
    )
    assert report.worst_relative_error == 3e-4
    assert not report.passed


def test_rotate90_quarter_turns() -> None:
    image = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(rotate90(image, 1), np.rot90(image))
    np.testing.assert_array_equal(rotate90(image, 4), image)
    with pytest.raises(ShapeMismatchError):
        rotate90(np.ones((2, 3)), 1)


def test_scalar_nodes_stay_differentiable(rng: np.random.Generator) -> None:
    x = parameter(rng.normal(size=(3, 2)), name="x")
    scaled = scale(mean(x), 4.0)
    assert scaled.shape == ()
    grads = backward(scaled, wrt={"x": x})
    np.testing.assert_allclose(grads["x"], np.full((3, 2), 4.0 / 6))

    y = parameter(rng.normal(size=(2, 2)), name="y")
    joined = add(mean(x), sum_sq(y))
    assert joined.item() == pytest.approx(float(x.value.mean() + np.sum(y.value**2)))
    grads = backward(joined, wrt={"x": x, "y": y})
    np.testing.assert_allclose(grads["x"], np.full((3, 2), 1.0 / 6))
    np.testing.assert_allclose(grads["y"], 2.0 * y.value)


def _gradient(build: Callable[[Mapping[str, Node]], Node], x: np.ndarray) -> np.ndarray:
    leaf = parameter(x, name="x")
    return backward(build({"x": leaf}), wrt={"x": leaf})["x"]


def test_backward_is_linear_in_the_root(rng: np.random.Generator) -> None:
    x = rng.normal(size=(4, 3))

    def gram(n):
        return sum_sq(matmul(n["x"], transpose(n["x"])))

    def cross_entropy(n):
        return scale(mean(pick(log_softmax(n["x"]), [0, 2, 1, 1])), -1.0)

    combined = _gradient(lambda n: add(scale(gram(n), 0.7), scale(cross_entropy(n), -2.5)), x)
    np.testing.assert_allclose(combined, 0.7 * _gradient(gram, x) - 2.5 * _gradient(cross_entropy, x), atol=1e-12)


def test_backward_is_deterministic(rng: np.random.Generator) -> None:
    x = rng.normal(size=(5, 4))

    def build(n):
        hidden = relu(matmul(n["x"], transpose(n["x"])))
        return add(sum_sq(normalize_rows(hidden)), mean(log_softmax(hidden)))

    assert np.array_equal(_gradient(build, x), _gradient(build, x))


def _readout(node: Node, weights: np.ndarray) -> Node:
    return total(mul(node, constant(weights)))


def _dims(rng: np.random.Generator) -> tuple[int, int]:
    return int(rng.integers(1, 5)), int(rng.integers(2, 6))


def _binary(op: Callable[[Node, Node], Node]) -> Callable[[np.random.Generator], Case]:
    def case(rng: np.random.Generator) -> Case:
        shape = _dims(rng)
        weights = rng.normal(size=shape)
        params = {"a": rng.normal(size=shape), "b": rng.normal(size=shape)}
        return (lambda n: _readout(op(n["a"], n["b"]), weights)), params

    return case


def _unary(op: Callable[[Node], Node]) -> Callable[[np.random.Generator], Case]:
    def case(rng: np.random.Generator) -> Case:
        shape = _dims(rng)
        weights = rng.normal(size=shape)
        return (lambda n: _readout(op(n["x"]), weights)), {"x": rng.normal(size=shape)}

    return case


def _matmul_case(rng: np.random.Generator) -> Case:
    rows, inner = _dims(rng)
    columns = int(rng.integers(1, 5))
    weights = rng.normal(size=(rows, columns))
    params = {"a": rng.normal(size=(rows, inner)), "b": rng.normal(size=(inner, columns))}
    return (lambda n: _readout(matmul(n["a"], n["b"]), weights)), params


def _transpose_case(rng: np.random.Generator) -> Case:
    rows, columns = _dims(rng)
    weights = rng.normal(size=(columns, rows))
    return (lambda n: _readout(transpose(n["x"]), weights)), {"x": rng.normal(size=(rows, columns))}


def _relu_case(rng: np.random.Generator) -> Case:
    shape = _dims(rng)
    weights = rng.normal(size=shape)
    # kept away from the kink so central differences see one branch
    x = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 2.0, size=shape)
    return (lambda n: _readout(relu(n["x"]), weights)), {"x": x}


def _reduction(op: Callable[[Node], Node]) -> Callable[[np.random.Generator], Case]:
    def case(rng: np.random.Generator) -> Case:
        return (lambda n: sum_sq(op(n["x"]))), {"x": rng.normal(size=_dims(rng))}

    return case


def _scale_case(rng: np.random.Generator) -> Case:
    shape = _dims(rng)
    weights = rng.normal(size=shape)
    factor = float(rng.normal())
    return (lambda n: _readout(scale(n["x"], factor), weights)), {"x": rng.normal(size=shape)}


def _add_bias_case(rng: np.random.Generator) -> Case:
    rows, columns = _dims(rng)
    weights = rng.normal(size=(rows, columns))
    params = {"x": rng.normal(size=(rows, columns)), "bias": rng.normal(size=columns)}
    return (lambda n: _readout(add_bias(n["x"], n["bias"]), weights)), params


def _take_columns_case(rng: np.random.Generator) -> Case:
    rows, columns = _dims(rng)
    # drawn with replacement so repeated columns accumulate
    chosen = rng.integers(0, columns, size=int(rng.integers(1, columns + 2))).tolist()
    weights = rng.normal(size=(rows, len(chosen)))
    return (lambda n: _readout(take_columns(n["x"], chosen), weights)), {"x": rng.normal(size=(rows, columns))}


def _pick_case(rng: np.random.Generator) -> Case:
    rows, columns = _dims(rng)
    chosen = rng.integers(0, columns, size=rows).tolist()
    weights = rng.normal(size=rows)
    return (lambda n: _readout(pick(n["x"], chosen), weights)), {"x": rng.normal(size=(rows, columns))}


def _repeat_columns_case(rng: np.random.Generator) -> Case:
    rows, width = _dims(rng)
    weights = rng.normal(size=(rows, width))
    return (lambda n: _readout(repeat_columns(n["v"], width), weights)), {"v": rng.normal(size=rows)}


def _concat_rows_case(rng: np.random.Generator) -> Case:
    top, columns = _dims(rng)
    bottom = int(rng.integers(1, 5))
    weights = rng.normal(size=(top + bottom, columns))
    params = {"a": rng.normal(size=(top, columns)), "b": rng.normal(size=(bottom, columns))}
    return (lambda n: _readout(concat_rows(n["a"], n["b"]), weights)), params


def _reshape_case(rng: np.random.Generator) -> Case:
    rows, columns = _dims(rng)
    weights = rng.normal(size=rows * columns)
    return (lambda n: _readout(reshape(n["x"], (rows * columns,)), weights)), {"x": rng.normal(size=(rows, columns))}


PRIMITIVE_CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": _binary(add),
    "sub": _binary(sub),
    "mul": _binary(mul),
    "matmul": _matmul_case,
    "transpose": _transpose_case,
    "relu": _relu_case,
    "log_softmax": _unary(log_softmax),
    "normalize_rows": _unary(normalize_rows),
    "softmax": _unary(softmax),
    "mean": _reduction(mean),
    "total": _reduction(total),
    "sum_sq": _reduction(sum_sq),
    "scale": _scale_case,
    "add_bias": _add_bias_case,
    "take_columns": _take_columns_case,
    "pick": _pick_case,
    "repeat_columns": _repeat_columns_case,
    "concat_rows": _concat_rows_case,
    "reshape": _reshape_case,
}


@pytest.mark.parametrize("primitive", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_over_random_instances(primitive: str) -> None:
    case = PRIMITIVE_CASES[primitive]
    for instance in range(100):
        build, params = case(np.random.default_rng(instance))
        report = finite_diff_check(build, params)
        assert report.passed, f"{primitive} instance {instance}: relative error {report.worst_relative_error:.3e}"
