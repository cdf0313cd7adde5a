from __future__ import annotations

import msgspec
import pytest

from cirlab.domain.experiments import PRESETS, TABLES, apply_preset, get_preset, with_seed
from cirlab.domain.experiments.ablation import judge, summarize
from cirlab.domain.experiments.presets import ORDERINGS, presets_for_table
from cirlab.domain.experiments.schemas import OrderingRule, PresetSummary, SeedOutcome
from cirlab.domain.trainer import AblationFlags, RunConfig
from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import flatten


def _flat(config: RunConfig) -> dict:
    return flatten(msgspec.to_builtins(config))


@pytest.mark.parametrize("name", list(PRESETS))
def test_presets_differ_from_full_only_in_their_keys(name: str) -> None:
    base = RunConfig()
    full = _flat(apply_preset(base, "full"))
    preset = _flat(apply_preset(base, name))
    changed = {key for key in full if full[key] != preset[key]}
    assert changed <= set(PRESETS[name].overrides)
    for key in changed:
        assert preset[key] == PRESETS[name].overrides[key]


def test_fine_tuning_preset_disables_every_auxiliary_part() -> None:
    assert apply_preset(RunConfig(), "ft").flags == AblationFlags.none()


def test_tables_and_orderings_name_known_presets() -> None:
    assert TABLES[1] == ("ft", "baseline", "baseline+ssl", "baseline+mlkd", "full")
    assert TABLES[3] == ("k1", "k2", "k3", "k4")
    for table, rules in ORDERINGS.items():
        for rule in rules:
            assert {rule.lower, rule.higher} <= set(TABLES[table])
    assert [p.name for p in presets_for_table(4)] == ["dynamic", "fixed"]
    with pytest.raises(ConfigurationError, match="Unknown ablation table 5"):
        presets_for_table(5)


def test_preset_lookup() -> None:
    assert get_preset("FULL").name == "full"
    with pytest.raises(ConfigurationError, match="Available presets"):
        get_preset("everything")


def test_extra_overrides_win_over_the_preset() -> None:
    config = apply_preset(RunConfig(), "k2", {"pool.max_size": 4, "schedule.c": 0.5})
    assert config.pool.max_size == 4
    assert config.schedule.c == 0.5


def test_seed_drives_stream_and_training() -> None:
    config = with_seed(RunConfig(), 9)
    assert (config.seed, config.stream.seed) == (9, 9)


def _summary(name: str, mean: float, std: float) -> PresetSummary:
    return PresetSummary(preset=name, seeds=[1], final_accuracy=[mean], average_forgetting=[0.0], mean=mean, std=std)


@pytest.mark.parametrize(
    ("relation", "low", "high", "std", "holds"),
    [
        ("lt", 0.5, 0.6, 0.0, True),
        ("lt", 0.5, 0.5, 0.0, False),
        ("le", 0.5, 0.5, 0.0, True),
        ("non-inferior", 0.6, 0.58, 0.1, True),
        ("non-inferior", 0.6, 0.5, 0.1, False),
        ("separated", 0.3, 0.6, 0.1, True),
        ("separated", 0.3, 0.45, 0.1, False),
    ],
)
def test_judge(relation: str, low: float, high: float, std: float, holds: bool) -> None:
    summaries = {"a": _summary("a", low, std), "b": _summary("b", high, std)}
    verdict = judge(OrderingRule(lower="a", higher="b", relation=relation), summaries)
    assert verdict.holds is holds
    assert verdict.margin == pytest.approx(high - low)


def test_summarize_uses_population_std() -> None:
    outcomes = [
        SeedOutcome(preset="full", seed=1, final_accuracy=0.4, average_forgetting=0.1),
        SeedOutcome(preset="full", seed=2, final_accuracy=0.6, average_forgetting=0.2),
    ]
    summary = summarize("full", outcomes)
    assert summary.mean == pytest.approx(0.5)
    assert summary.std == pytest.approx(0.1)
    assert summary.seeds == [1, 2]
    assert summarize("full", outcomes[:1]).std == 0.0
