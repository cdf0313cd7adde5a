from __future__ import annotations

import time

import pytest

from cirlab.domain.experiments import run_ablation
from cirlab.domain.trainer import RunConfig, run_stream

pytestmark = pytest.mark.slow

SEEDS = [1, 2, 3, 4, 5]


def test_desk_default_run_beats_chance_within_two_minutes() -> None:
    config = RunConfig()
    started = time.perf_counter()
    metrics = run_stream(config)
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    assert len(metrics.experiences) == config.stream.num_experiences
    assert metrics.final_accuracy > 1.0 / config.stream.labeled_classes


@pytest.mark.parametrize("table", [1, 4])
def test_component_orderings_hold_over_five_seeds(table: int) -> None:
    report = run_ablation(table, SEEDS, RunConfig())
    assert [summary.seeds for summary in report.presets] == [SEEDS] * len(report.presets)
    failed = [
        f"{verdict.lower} {verdict.relation} {verdict.higher}: "
        f"margin {verdict.margin:.4f}, threshold {verdict.threshold:.4f}"
        for verdict in report.verdicts
        if not verdict.holds
    ]
    assert not failed, failed
