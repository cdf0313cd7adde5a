"""Named ablation presets.

Every preset is the ``full`` configuration with a handful of dotted keys
changed, so ``dump_config`` of any preset differs from ``full`` only in the
keys listed here.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any

from cirlab.domain.experiments.schemas import AblationPreset, OrderingRule
from cirlab.domain.trainer.schemas import AUXILIARY_FLAGS
from cirlab.lib.exceptions import ConfigurationError
from cirlab.lib.schema import apply_overrides

if TYPE_CHECKING:
    from collections.abc import Mapping

    from cirlab.domain.trainer.schemas import RunConfig

__all__ = ("ORDERINGS", "PRESETS", "TABLES", "apply_preset", "get_preset", "presets_for_table", "with_seed")


def _off(*flags: str) -> dict[str, bool]:
    return {f"flags.{flag}": False for flag in flags}


_KD_PARTS = ("use_feature_kd", "use_logit_kd", "use_ema", "use_multi_model")

_PRESET_LIST = (
    AblationPreset(
        name="ft",
        table=1,
        overrides=_off(*AUXILIARY_FLAGS),
        description="fine-tuning with masked cross-entropy only",
    ),
    AblationPreset(
        name="baseline",
        table=1,
        overrides=_off("use_ssl", *_KD_PARTS),
        description="masked cross-entropy, logit constraint and replay",
    ),
    AblationPreset(
        name="baseline+ssl",
        table=1,
        overrides=_off(*_KD_PARTS),
        description="baseline with dynamic rotation loss",
    ),
    AblationPreset(
        name="baseline+mlkd",
        table=1,
        overrides=_off("use_ssl"),
        description="baseline with multi-level distillation",
    ),
    AblationPreset(name="full", table=1, description="every component"),
    AblationPreset(
        name="fkd",
        table=2,
        overrides=_off("use_logit_kd", "use_ema", "use_multi_model"),
        description="feature distillation from a single frozen snapshot",
    ),
    AblationPreset(
        name="fkd+ema",
        table=2,
        overrides=_off("use_logit_kd", "use_multi_model"),
        description="feature distillation from one EMA-refreshed snapshot",
    ),
    AblationPreset(
        name="fkd+ema+clkd",
        table=2,
        overrides=_off("use_multi_model"),
        description="adds correlation logit distillation",
    ),
    AblationPreset(name="+mpm", table=2, description="adds multiple previous models"),
    *(
        AblationPreset(name=f"k{k}", table=3, overrides={"pool.max_size": k}, description=f"{k} previous model(s)")
        for k in range(1, 5)
    ),
    AblationPreset(name="dynamic", table=4, description="rotation weight decays over experiences"),
    AblationPreset(
        name="fixed",
        table=4,
        overrides={"schedule.dynamic_ssl": False},
        description="rotation weight held at c",
    ),
)

PRESETS: dict[str, AblationPreset] = {preset.name: preset for preset in _PRESET_LIST}
TABLES: dict[int, tuple[str, ...]] = {
    table: tuple(preset.name for preset in _PRESET_LIST if preset.table == table) for table in (1, 2, 3, 4)
}

ORDERINGS: dict[int, tuple[OrderingRule, ...]] = {
    1: (
        OrderingRule(lower="ft", higher="baseline", relation="lt"),
        OrderingRule(lower="baseline", higher="baseline+mlkd", relation="lt"),
        OrderingRule(lower="baseline+mlkd", higher="full", relation="le"),
        OrderingRule(lower="baseline", higher="baseline+ssl", relation="lt"),
        OrderingRule(lower="ft", higher="full", relation="separated"),
    ),
    2: (
        OrderingRule(lower="fkd", higher="fkd+ema", relation="le"),
        OrderingRule(lower="fkd+ema", higher="fkd+ema+clkd", relation="le"),
        OrderingRule(lower="fkd+ema+clkd", higher="+mpm", relation="le"),
    ),
    3: (
        OrderingRule(lower="k1", higher="k2", relation="le"),
        OrderingRule(lower="k2", higher="k3", relation="le"),
        OrderingRule(lower="k3", higher="k4", relation="le"),
    ),
    4: (OrderingRule(lower="fixed", higher="dynamic", relation="non-inferior"),),
}


def get_preset(name: str) -> AblationPreset:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        listing = ", ".join(PRESETS)
        raise ConfigurationError(detail=f"Unknown preset '{name}'. Available presets: {listing}") from None


def presets_for_table(table: int) -> list[AblationPreset]:
    if table not in TABLES:
        raise ConfigurationError(detail=f"Unknown ablation table {table}; choose one of {sorted(TABLES)}")
    return [PRESETS[name] for name in TABLES[table]]


def apply_preset(
    base: RunConfig,
    preset: AblationPreset | str,
    extra: Mapping[str, Any] | None = None,
) -> RunConfig:
    """``base`` with the preset's keys applied, then any ``extra`` dotted keys."""
    chosen = get_preset(preset) if isinstance(preset, str) else preset
    overrides = {**chosen.overrides, **(extra or {})}
    config = apply_overrides(base, overrides) if overrides else base
    config.validate()
    return config


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """One seed drives both the stream draw and the training randomness."""
    return apply_overrides(config, {"seed": seed, "stream.seed": seed})
