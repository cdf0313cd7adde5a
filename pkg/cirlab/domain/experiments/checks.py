"""On-demand correctness suites behind ``cirlab check``.

``gradients`` compares reverse-mode gradients of every loss term, and of the
weighted composite, with central differences on seeded random instances.
``invariants`` exercises the buffer, pool, schedule and Gram contracts.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.autodiff import constant, finite_diff_check
from cirlab.domain.buffer.schemas import FLOAT_BUDGET, Exemplar
from cirlab.domain.buffer.services import MemoryBuffer
from cirlab.domain.experiments.schemas import CheckReport, CheckResult
from cirlab.domain.losses.composite import final_loss, term_weights
from cirlab.domain.losses.schemas import LabeledInputs, LossSchedule, ReplayInputs, UnlabeledInputs
from cirlab.domain.losses.terms import (
    ace_loss,
    alpha,
    beta,
    der_loss,
    feature_kd_loss,
    gram_pair,
    instance_logit_kd_loss,
    logit_constraint_loss,
    logit_kd_loss,
    ssl_rotation_loss,
)
from cirlab.domain.nn.model import ModelParams, init_params, snapshot
from cirlab.domain.nn.schemas import ROTATION_CLASSES, ModelConfig
from cirlab.domain.pool.schemas import PoolTargets
from cirlab.domain.pool.services import ModelPool
from cirlab.domain.stream.schemas import StreamConfig
from cirlab.domain.stream.services import draw_class_sets
from cirlab.lib.exceptions import ApplicationError, FloatBudgetError

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

    from numpy.typing import NDArray

    from cirlab.domain.autodiff import Node

    LossFn = Callable[[Mapping[str, Node]], Node]

__all__ = ("SUITES", "gradient_suite", "invariant_suite", "run_suite")

logger = structlog.get_logger()

TOLERANCE = 1e-4
STEP = 1e-6
_BATCH, _CLASSES, _FEATURES, _REPLAY = 6, 4, 5, 3
_SEEN = (0, 1, 2)
_KINK_GAP = 0.05


def away_from_kinks(
    logits: NDArray[np.float64],
    labels: NDArray[np.int64],
    unseen: tuple[int, ...],
) -> NDArray[np.float64]:
    """Shift unseen-class logits so no hinge gap sits within ``_KINK_GAP`` of zero."""
    shifted = logits.copy()
    for row, label in enumerate(labels):
        for column in unseen:
            if abs(shifted[row, column] - shifted[row, label]) < _KINK_GAP:
                shifted[row, column] += 2 * _KINK_GAP
    return shifted


def _gradient_cases(rng: np.random.Generator) -> dict[str, tuple[LossFn, dict[str, NDArray[np.float64]]]]:
    labels = rng.integers(0, 2, size=_BATCH).astype(np.int64)
    replay_labels = rng.integers(0, len(_SEEN), size=_REPLAY).astype(np.int64)
    rotations = rng.integers(0, ROTATION_CLASSES, size=_BATCH).astype(np.int64)
    unseen = tuple(c for c in range(_CLASSES) if c not in _SEEN)
    logits = away_from_kinks(rng.normal(size=(_BATCH, _CLASSES)), labels, unseen)
    previous = [rng.normal(size=(_BATCH, _CLASSES)) for _ in range(2)]
    stored = rng.normal(size=(_REPLAY, _CLASSES))
    target_features = rng.normal(size=(_BATCH, _FEATURES))
    features = rng.normal(size=(_BATCH, _FEATURES))
    rotation_logits = rng.normal(size=(_BATCH, ROTATION_CLASSES))
    replay_logits = rng.normal(size=(_REPLAY, _CLASSES))
    schedule = LossSchedule()
    targets = PoolTargets(
        feature_targets=target_features,
        logit_targets=previous[-1],
        logit_batches=previous,
        selected_model_index=np.ones(_BATCH, dtype=np.int64),
    )

    def composite(nodes: Mapping[str, Node]) -> Node:
        return final_loss(
            LabeledInputs(logits=nodes["logits"], labels=labels),
            UnlabeledInputs(
                features=nodes["features"],
                logits=nodes["unlabeled_logits"],
                rotation_logits=nodes["rotation_logits"],
                rotation_labels=rotations,
            ),
            ReplayInputs(logits=nodes["replay_logits"], labels=replay_labels, stored_logits=stored),
            targets,
            term_weights(schedule, 3),
            schedule=schedule,
            seen_classes=_SEEN,
        ).total

    return {
        "ace": (lambda n: ace_loss(n["logits"], labels, set(labels.tolist())), {"logits": logits}),
        "ssl": (lambda n: ssl_rotation_loss(n["rotation_logits"], rotations), {"rotation_logits": rotation_logits}),
        "logit_kd": (lambda n: logit_kd_loss(n["logits"], previous), {"logits": logits}),
        "logit_kd_normalized": (
            lambda n: logit_kd_loss(n["logits"], previous, source="unit-rows"),
            {"logits": logits},
        ),
        "logit_kd_probabilities": (
            lambda n: logit_kd_loss(n["logits"], previous, source="probabilities"),
            {"logits": logits},
        ),
        "instance_logit_kd": (lambda n: instance_logit_kd_loss(n["logits"], previous), {"logits": logits}),
        "feature_kd": (lambda n: feature_kd_loss(n["features"], target_features), {"features": features}),
        "lc": (lambda n: logit_constraint_loss(n["logits"], labels, _SEEN), {"logits": logits}),
        "der": (lambda n: der_loss(n["replay_logits"], stored), {"replay_logits": replay_logits}),
        "composite": (
            composite,
            {
                "logits": logits,
                "features": features,
                "unlabeled_logits": rng.normal(size=(_BATCH, _CLASSES)),
                "rotation_logits": rotation_logits,
                "replay_logits": replay_logits,
            },
        ),
    }


def gradient_suite(instances: int = 50, seed: int = 0) -> CheckReport:
    """Finite-difference check of every loss term over ``instances`` seeded draws."""
    worst: dict[str, float] = {}
    failures: dict[str, str] = {}
    for instance in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(instance,)))
        for name, (loss_fn, params) in _gradient_cases(rng).items():
            report = finite_diff_check(loss_fn, params, step=STEP, tolerance=TOLERANCE)
            worst[name] = max(worst.get(name, 0.0), report.worst_relative_error)
            if not report.passed and name not in failures:
                failures[name] = f"instance {instance}: relative error {report.worst_relative_error:.3e}"
                logger.warning("Gradient check failed", term=name, instance=instance, error=report.worst_relative_error)
    return CheckReport(
        suite="gradients",
        results=[
            CheckResult(
                name=name,
                passed=name not in failures,
                detail=failures.get(name, f"max relative error {error:.3e} over {instances} instances"),
            )
            for name, error in worst.items()
        ],
    )


def _exemplar(rng: np.random.Generator, label: int, feature_dim: int = 64, num_classes: int = 12) -> Exemplar:
    return Exemplar(
        feature=rng.normal(size=feature_dim),
        logit=rng.normal(size=num_classes),
        label=label,
        task_of_origin=0,
    )


def check_buffer_fuzz(seed: int = 0, inserts: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    buffer = MemoryBuffer(200, seed=seed)
    for step in range(inserts):
        buffer.insert(_exemplar(rng, int(rng.integers(12))))
        if step % 500 == 0:
            buffer.check_invariants()
    buffer.check_invariants()
    try:
        buffer.insert(_exemplar(rng, 0, feature_dim=FLOAT_BUDGET))
    except FloatBudgetError:
        pass
    else:
        return CheckResult(name="buffer.float_budget", passed=False, detail="oversized exemplar was accepted")
    return CheckResult(name="buffer.fuzz", passed=len(buffer) == 200, detail=f"{inserts} inserts, size {len(buffer)}")


def reservoir_retention(trials: int = 1000, capacity: int = 10, inserts: int = 100, seed: int = 0) -> NDArray[np.int64]:
    """How often each of ``inserts`` offered items survives, over ``trials`` buffers."""
    counts = np.zeros(inserts, dtype=np.int64)
    feature, logit = np.zeros(1), np.zeros(1)
    for trial in range(trials):
        buffer = MemoryBuffer(capacity, seed=seed * trials + trial)
        for item in range(inserts):
            buffer.insert(Exemplar(feature=feature, logit=logit, label=item, task_of_origin=0))
        for exemplar in buffer:
            counts[exemplar.label] += 1
    return counts


def check_reservoir_uniformity(seed: int = 0, trials: int = 1000) -> CheckResult:
    capacity, inserts = 10, 100
    counts = reservoir_retention(trials, capacity, inserts, seed)
    p = capacity / inserts
    expected = trials * p
    sigma = np.sqrt(trials * p * (1 - p))
    z = np.abs(counts - expected) / sigma
    mean_ok = abs(counts.mean() - expected) <= 3 * sigma
    return CheckResult(
        name="buffer.reservoir_uniformity",
        passed=bool(mean_ok and z.max() <= 4.0),
        detail=f"max |z| {z.max():.2f} over {inserts} items",
    )


def _zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams(config=params.config, arrays={k: np.zeros_like(v) for k, v in params.arrays.items()})


def _distance(a: ModelParams, b: ModelParams) -> float:
    return float(np.sqrt(sum(np.sum((a.arrays[k] - b.arrays[k]) ** 2) for k in a.arrays)))


def check_pool(seed: int = 0) -> list[CheckResult]:
    config = ModelConfig(side=4, num_classes=3, hidden_sizes=(4,))
    results: list[CheckResult] = []

    pool = ModelPool(max_size=2, momentum=0.99)
    pushed = [init_params(config, seed=seed + i) for i in range(4)]
    for params in pushed:
        pool.push_snapshot(params)
        pool.check_invariants()
    fifo = [_distance(held, params) for held, params in zip(pool, pushed[-2:], strict=True)]
    results.append(CheckResult(name="pool.fifo", passed=len(pool) == 2 and max(fifo) == 0.0))

    current = pushed[0]
    fixed = ModelPool(max_size=1, momentum=0.99)
    fixed.push_snapshot(current)
    fixed.ema_refresh_all(current)
    results.append(CheckResult(name="pool.ema_fixed_point", passed=_distance(fixed.snapshots[0], current) == 0.0))

    frozen = _zeros_like(current)
    decaying = ModelPool(max_size=1, momentum=0.99)
    decaying.push_snapshot(snapshot(current))
    initial = _distance(decaying.snapshots[0], frozen)
    worst = 0.0
    for refresh in range(1, 1001):
        decaying.ema_refresh_all(frozen)
        expected = initial * 0.99**refresh
        worst = max(worst, abs(_distance(decaying.snapshots[0], frozen) - expected) / expected)
    results.append(
        CheckResult(name="pool.ema_contraction", passed=worst <= 1e-9, detail=f"worst relative error {worst:.2e}"),
    )
    return results


def check_schedule() -> CheckResult:
    schedule = LossSchedule()
    alphas = [alpha(schedule, t) for t in range(50)]
    decreasing = all(later < earlier for earlier, later in zip(alphas, alphas[1:], strict=False))
    exact = alphas[0] == 0.5 and alphas[1] == 0.5 * 0.95 and all(beta(schedule, t) == 0.002 * t for t in range(50))
    labeled = [term_weights(schedule, t).ace for t in range(50)]
    bounded = all(0.95 <= w < 1.0 for w in labeled)
    return CheckResult(
        name="schedule.values",
        passed=decreasing and exact and bounded,
        detail=f"alpha(0)={alphas[0]}, alpha(1)={alphas[1]}, labeled weight in [{min(labeled)}, {max(labeled)}]",
    )


def check_gram(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(_BATCH, _CLASSES))
    self_kd = logit_kd_loss(constant(logits), [logits]).item()
    pair = gram_pair(constant(logits))
    smallest = min(
        float(np.linalg.eigvalsh(pair.instance_gram.value).min()),
        float(np.linalg.eigvalsh(pair.class_gram.value).min()),
    )
    symmetric = np.array_equal(pair.instance_gram.value, pair.instance_gram.value.T) and np.array_equal(
        pair.class_gram.value,
        pair.class_gram.value.T,
    )
    worked = gram_pair(constant(np.array([[1.0, 2.0], [3.0, 4.0]])))
    matches = np.array_equal(worked.instance_gram.value, np.array([[5.0, 11.0], [11.0, 25.0]])) and np.array_equal(
        worked.class_gram.value,
        np.array([[10.0, 14.0], [14.0, 20.0]]),
    )
    return [
        CheckResult(name="gram.self_distillation_zero", passed=self_kd == 0.0, detail=f"loss {self_kd!r}"),
        CheckResult(
            name="gram.symmetric_psd",
            passed=symmetric and smallest >= -1e-9,
            detail=f"min eig {smallest:.2e}",
        ),
        CheckResult(name="gram.worked_example", passed=bool(matches)),
    ]


def check_stream_coverage(seed: int = 0) -> CheckResult:
    config = StreamConfig(seed=seed)
    class_sets = draw_class_sets(config)
    covered = set().union(*class_sets) == set(range(config.labeled_classes))
    distinct = all(len(set(classes)) == len(classes) for classes in class_sets)
    return CheckResult(name="stream.coverage", passed=covered and distinct, detail=f"{len(class_sets)} experiences")


def invariant_suite(seed: int = 0) -> CheckReport:
    checks: list[tuple[str, Callable[[], CheckResult | list[CheckResult]]]] = [
        ("buffer", lambda: check_buffer_fuzz(seed)),
        ("reservoir", lambda: check_reservoir_uniformity(seed)),
        ("pool", lambda: check_pool(seed)),
        ("schedule", check_schedule),
        ("gram", lambda: check_gram(seed)),
        ("stream", lambda: check_stream_coverage(seed)),
    ]
    results: list[CheckResult] = []
    for name, check in checks:
        try:
            outcome = check()
        except ApplicationError as exc:
            outcome = CheckResult(name=name, passed=False, detail=str(exc))
        results.extend(outcome if isinstance(outcome, list) else [outcome])
    for failure in (r for r in results if not r.passed):
        logger.warning("Invariant check failed", check=failure.name, detail=failure.detail)
    return CheckReport(suite="invariants", results=results)


SUITES = ("gradients", "invariants")


def run_suite(name: str, *, instances: int = 50, seed: int = 0) -> CheckReport:
    match name:
        case "gradients":
            return gradient_suite(instances, seed)
        case "invariants":
            return invariant_suite(seed)
    msg = f"unknown check suite {name!r}; choose one of {', '.join(SUITES)}"
    raise ValueError(msg)
