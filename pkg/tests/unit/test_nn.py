from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from cirlab.domain.autodiff import finite_diff_check, scale, sum_sq
from cirlab.domain.nn import (
    ModelConfig,
    ModelParams,
    classifier_forward,
    ema_blend,
    init_params,
    load_params,
    model_forward,
    restore,
    save_params,
    snapshot,
    softmax,
)
from cirlab.domain.nn.checkpoint import decode_params, encode_params
from cirlab.domain.nn.model import expected_shapes
from cirlab.lib.exceptions import CheckpointFormatError, ShapeMismatchError

if TYPE_CHECKING:
    from collections.abc import Callable
    from pathlib import Path


def test_init_is_seeded(small_model_config: ModelConfig) -> None:
    first = init_params(small_model_config, seed=5)
    second = init_params(small_model_config, seed=5)
    other = init_params(small_model_config, seed=6)
    assert first.shapes() == expected_shapes(small_model_config)
    assert all(np.array_equal(first[name], second[name]) for name in first)
    assert not np.array_equal(first["encoder.0.weight"], other["encoder.0.weight"])
    assert not np.any(first["classifier.weight"])
    assert not np.any(first["classifier.bias"])


@pytest.mark.parametrize("use_conv", [False, True])
def test_forward_shapes(use_conv: bool, rng: np.random.Generator) -> None:
    config = ModelConfig(side=8, num_classes=5, hidden_sizes=(12, 6), use_conv=use_conv)
    out = model_forward(init_params(config, seed=0), rng.random((7, 8, 8)))
    assert out.features.shape == (7, 6)
    assert out.logits.shape == (7, 5)
    assert out.rotation_logits.shape == (7, 4)
    assert out.batch_size == 7


def test_forward_is_row_independent(
    small_model_config: ModelConfig,
    rng: np.random.Generator,
    randomize_head: Callable[..., ModelParams],
) -> None:
    params = randomize_head(init_params(small_model_config, seed=1))
    images = rng.random((6, 8, 8))
    whole = model_forward(params, images).logits.value
    halves = np.concatenate(
        [model_forward(params, images[:3]).logits.value, model_forward(params, images[3:]).logits.value],
    )
    np.testing.assert_allclose(whole, halves)


def test_forward_rejects_wrong_image_size(small_model_config: ModelConfig) -> None:
    with pytest.raises(ShapeMismatchError):
        model_forward(init_params(small_model_config, seed=0), np.zeros((2, 7, 7)))
    with pytest.raises(ShapeMismatchError):
        classifier_forward(init_params(small_model_config, seed=0), np.zeros((2, 3)))


@pytest.mark.parametrize("use_conv", [False, True])
def test_model_gradient_matches_finite_differences(
    use_conv: bool,
    rng: np.random.Generator,
    randomize_head: Callable[..., ModelParams],
) -> None:
    config = ModelConfig(side=5, num_classes=3, hidden_sizes=(4,), use_conv=use_conv, conv_channels=2)
    params = randomize_head(init_params(config, seed=2))
    images = rng.random((3, 5, 5))

    def loss(nodes):
        out = model_forward(params, images, leaves=nodes)
        return scale(sum_sq(out.logits) + sum_sq(out.rotation_logits), 0.5)

    report = finite_diff_check(loss, params.arrays)
    assert report.passed, report.worst_relative_error


def test_classifier_forward_matches_full_forward(
    small_model_config: ModelConfig,
    rng: np.random.Generator,
    randomize_head: Callable[..., ModelParams],
) -> None:
    params = randomize_head(init_params(small_model_config, seed=3))
    out = model_forward(params, rng.random((4, 8, 8)))
    np.testing.assert_allclose(classifier_forward(params, out.features.value).value, out.logits.value)


def test_snapshot_owns_its_arrays(small_model_config: ModelConfig) -> None:
    params = init_params(small_model_config, seed=0)
    copy = snapshot(params)
    params["classifier.bias"][...] = 1.0
    assert not np.shares_memory(copy["classifier.bias"], params["classifier.bias"])
    assert np.all(copy["classifier.bias"] == 0.0)
    restore(params, copy)
    assert np.all(params["classifier.bias"] == 0.0)


def test_ema_blend(small_model_config: ModelConfig) -> None:
    current = init_params(small_model_config, seed=0)
    held = init_params(small_model_config, seed=1)
    before = snapshot(held)
    ema_blend(held, current, 0.75)
    for name in held:
        np.testing.assert_allclose(held[name], 0.75 * before[name] + 0.25 * current[name])

    fixed = snapshot(current)
    ema_blend(fixed, current, 0.99)
    assert all(np.array_equal(fixed[name], current[name]) for name in fixed)

    with pytest.raises(ValueError, match="momentum"):
        ema_blend(held, current, 1.5)


def test_softmax_rows_sum_to_one(rng: np.random.Generator) -> None:
    probs = softmax(rng.normal(size=(5, 4)) * 100)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs >= 0)


def test_checkpoint_round_trip(small_model_config: ModelConfig, tmp_path: Path) -> None:
    params = init_params(small_model_config, seed=4)
    path = save_params(params, tmp_path / "model.cirp")
    loaded = load_params(path, small_model_config)
    assert isinstance(loaded, ModelParams)
    assert all(np.array_equal(loaded[name], params[name]) for name in params)


def test_checkpoint_rejects_corruption(small_model_config: ModelConfig) -> None:
    payload = encode_params(init_params(small_model_config, seed=0).arrays)
    with pytest.raises(CheckpointFormatError, match="bad magic"):
        decode_params(b"XXXX" + payload[4:])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        decode_params(payload[:-8])
    with pytest.raises(CheckpointFormatError, match="trailing"):
        decode_params(payload + b"\x00")


def test_checkpoint_rejects_other_layout(small_model_config: ModelConfig, tmp_path: Path) -> None:
    path = save_params(init_params(small_model_config, seed=0), tmp_path / "model.cirp")
    with pytest.raises(CheckpointFormatError, match="layout"):
        load_params(path, ModelConfig(side=8, num_classes=4, hidden_sizes=(8,)))
