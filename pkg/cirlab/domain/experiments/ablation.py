from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import TYPE_CHECKING

import numpy as np
import structlog

from cirlab.domain.experiments.presets import ORDERINGS, apply_preset, presets_for_table, with_seed
from cirlab.domain.experiments.schemas import AblationReport, OrderingVerdict, PresetSummary, SeedOutcome
from cirlab.domain.trainer.services import run_stream
from cirlab.lib.exceptions import ApplicationError, ConfigurationError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from cirlab.domain.experiments.schemas import OrderingRule
    from cirlab.domain.trainer.schemas import RunConfig

__all__ = ("judge", "run_ablation", "summarize")

logger = structlog.get_logger()


def _run_seed(config: RunConfig, preset: str, seed: int) -> SeedOutcome:
    """Worker entry point; failures come back as text so they cross process boundaries."""
    try:
        metrics = run_stream(with_seed(config, seed), run_name=f"{preset}-seed{seed}", preset=preset)
    except ApplicationError as exc:
        return SeedOutcome(preset=preset, seed=seed, error=f"{type(exc).__name__}: {exc}")
    return SeedOutcome(
        preset=preset,
        seed=seed,
        final_accuracy=metrics.final_accuracy,
        average_forgetting=metrics.average_forgetting,
    )


def summarize(preset: str, outcomes: Sequence[SeedOutcome]) -> PresetSummary:
    accuracy = np.asarray([o.final_accuracy for o in outcomes], dtype=np.float64)
    return PresetSummary(
        preset=preset,
        seeds=[o.seed for o in outcomes],
        final_accuracy=accuracy.tolist(),
        average_forgetting=[o.average_forgetting for o in outcomes],
        mean=float(accuracy.mean()),
        std=float(accuracy.std()),
    )


def judge(rule: OrderingRule, summaries: dict[str, PresetSummary]) -> OrderingVerdict:
    """Decide one ordering rule on the seed means."""
    low, high = summaries[rule.lower], summaries[rule.higher]
    margin = high.mean - low.mean
    pooled = math.sqrt((low.std**2 + high.std**2) / 2.0)
    match rule.relation:
        case "lt":
            threshold, holds = 0.0, margin > 0.0
        case "le":
            threshold, holds = 0.0, margin >= 0.0
        case "non-inferior":
            threshold = -0.5 * pooled
            holds = margin >= threshold
        case "separated":
            threshold = 2.0 * pooled
            holds = margin > threshold
    return OrderingVerdict(
        lower=rule.lower,
        higher=rule.higher,
        relation=rule.relation,
        margin=margin,
        threshold=threshold,
        holds=holds,
    )


def run_ablation(
    table: int,
    seeds: Sequence[int],
    base: RunConfig,
    *,
    workers: int = 1,
    on_outcome: Callable[[SeedOutcome], None] | None = None,
) -> AblationReport:
    """Run every preset of ``table`` over ``seeds`` and judge the expected ordering.

    Args:
        table: comparison group, 1 to 4.
        seeds: one run per preset and seed.
        base: configuration the presets are applied to.
        workers: worker processes; seeds are independent so they may run in parallel.
        on_outcome: called in the parent as each run completes.

    Raises:
        ConfigurationError: unknown table or no seeds.
        ApplicationError: any run failed.
    """
    presets = presets_for_table(table)
    if not seeds:
        raise ConfigurationError(detail="ablation needs at least one seed")
    jobs = [(apply_preset(base, preset), preset.name, int(seed)) for preset in presets for seed in seeds]
    logger.info("Ablation started", table=table, presets=len(presets), seeds=len(seeds), workers=workers)

    outcomes: list[SeedOutcome] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_seed, *job) for job in jobs]
            for future in futures:
                outcomes.append(future.result())
                if on_outcome is not None:
                    on_outcome(outcomes[-1])
    else:
        for job in jobs:
            outcomes.append(_run_seed(*job))
            if on_outcome is not None:
                on_outcome(outcomes[-1])

    failed = [o for o in outcomes if o.error]
    if failed:
        first = failed[0]
        raise ApplicationError(detail=f"{len(failed)} run(s) failed; {first.preset} seed {first.seed}: {first.error}")

    summaries = {
        preset.name: summarize(preset.name, [o for o in outcomes if o.preset == preset.name]) for preset in presets
    }
    verdicts = [judge(rule, summaries) for rule in ORDERINGS[table]]
    for verdict in verdicts:
        logger.info(
            "Ordering verdict",
            lower=verdict.lower,
            higher=verdict.higher,
            relation=verdict.relation,
            holds=verdict.holds,
        )
    return AblationReport(
        table=table,
        seeds=[int(s) for s in seeds],
        presets=list(summaries.values()),
        verdicts=verdicts,
    )
