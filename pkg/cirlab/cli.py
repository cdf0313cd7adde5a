from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import TYPE_CHECKING

import rich_click as click
from rich.align import Align
from rich.live import Live
from rich.panel import Panel
from rich.spinner import Spinner
from rich.table import Table
from rich_click import group, option

from cirlab.lib.exceptions import ApplicationError, ConfigurationError

if TYPE_CHECKING:
    from collections.abc import Iterator

    from rich.console import Console

    from cirlab.domain.experiments.schemas import AblationReport, CheckReport
    from cirlab.domain.trainer.schemas import RunMetrics

CONFIG_ERROR_EXIT = 1
RUNTIME_ERROR_EXIT = 2


@contextmanager
def _exit_codes(console: Console) -> Iterator[None]:
    """Map configuration problems to exit 1 and every other failure to exit 2."""
    try:
        yield
    except ConfigurationError as exc:
        console.print(Panel(str(exc), title="[bold]Configuration error[/bold]", title_align="left", style="red"))
        raise SystemExit(CONFIG_ERROR_EXIT) from exc
    except click.ClickException:
        raise
    except Exception as exc:  # noqa: BLE001
        console.print(Panel(str(exc), title=f"[bold]{type(exc).__name__}[/bold]", title_align="left", style="red"))
        raise SystemExit(RUNTIME_ERROR_EXIT) from exc


def _output_root(output_dir: Path | None) -> Path:
    from cirlab.lib.settings import get_settings

    return output_dir if output_dir is not None else get_settings().app.OUTPUT_ROOT


@group(name="cirlab")
def cli() -> None:
    """Class-incremental learning with repetition, at desk scale."""
    from cirlab.config import configure_logging

    configure_logging()


@cli.command(name="run", help="Train over one stream and write its metrics.")
@option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), help="key = value config file.")
@option("--preset", default="full", show_default=True, help="Ablation preset applied over the config file.")
@option("--seed", type=int, default=None, help="Seed for both the stream and training.")
@option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override any dotted config key.")
@option("--name", "run_name", default=None, help="Run directory name; defaults to <preset>-seed<seed>.")
@option("--data", "data_path", type=click.Path(dir_okay=False, path_type=Path), help="CIRD dataset file.")
@option("--output-dir", type=click.Path(file_okay=False, path_type=Path), help="Output root (CIRLAB_OUTPUT_ROOT).")
def run(
    config_path: Path | None,
    preset: str,
    seed: int | None,
    assignments: tuple[str, ...],
    run_name: str | None,
    data_path: Path | None,
    output_dir: Path | None,
) -> None:
    """Train one configuration and write ``metrics.csv``, ``summary.json`` and ``config.resolved``."""
    from rich import get_console

    from cirlab.domain.experiments.presets import apply_preset, with_seed
    from cirlab.domain.trainer.config_file import load_run_config, parse_assignments
    from cirlab.domain.trainer.reporting import prepare_run_directory, write_run_artifacts
    from cirlab.domain.trainer.services import run_stream

    console = get_console()
    with _exit_codes(console):
        overrides = parse_assignments(assignments)
        if data_path is not None:
            overrides["data_path"] = str(data_path)
        base = load_run_config(config_path)
        if seed is not None:
            base = with_seed(base, seed)
        config = apply_preset(base, preset, overrides)
        name = run_name or f"{preset.lower()}-seed{config.seed}"
        directory = prepare_run_directory(_output_root(output_dir), name)
        checkpoints = None
        if config.checkpoint_every_experience:
            checkpoints = directory / "checkpoints"
            checkpoints.mkdir(exist_ok=True)

        console.rule(f"[bold cyan]{name}[/bold cyan]")
        with Live(Spinner("aesthetic", text=" training"), refresh_per_second=15, console=console, transient=True):
            metrics = run_stream(config, run_name=name, preset=preset.lower(), checkpoint_dir=checkpoints)
        artifacts = write_run_artifacts(directory, config, metrics)

        console.print(_experience_table(metrics))
        console.print(
            Panel(
                Align(
                    renderable=(
                        f"[bold]final accuracy[/bold] {metrics.final_accuracy:.4f}   "
                        f"[bold]average forgetting[/bold] {metrics.average_forgetting:.4f}\n"
                        + "\n".join(f"{kind}: {path}" for kind, path in artifacts.items())
                    ),
                    align="left",
                ),
                title=f"[blue bold]{name}[/blue bold]",
                title_align="left",
                style="green bold",
                expand=True,
            ),
        )


def _experience_table(metrics: RunMetrics) -> Table:
    table = Table(title="Per-experience results", title_justify="left")
    for column in ("exp", "accuracy", "seen", "classes", "alpha", "pool", "buffer", "loss"):
        table.add_column(column, justify="right" if column != "classes" else "left")
    for record in metrics.experiences:
        table.add_row(
            str(record.index),
            f"{record.accuracy:.4f}",
            str(record.seen_classes),
            " ".join(str(c) for c in record.present_classes),
            f"{record.alpha:.4f}",
            str(record.pool_size),
            str(record.buffer_size),
            f"{record.mean_terms['total']:.4f}",
        )
    return table


def _parse_seeds(raw: str) -> list[int]:
    try:
        seeds = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigurationError(detail=f"--seeds expects comma-separated integers, got {raw!r}") from exc
    if not seeds:
        raise ConfigurationError(detail="--seeds needs at least one seed")
    return seeds


@cli.command(name="ablate", help="Run every preset of a comparison table over several seeds.")
@option("--table", "table_id", type=click.IntRange(1, 4), required=True, help="Comparison table, 1 to 4.")
@option("--seeds", default="1,2,3,4,5", show_default=True, help="Comma-separated seeds.")
@option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), help="key = value config file.")
@option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override any dotted config key.")
@option("--workers", type=int, default=None, help="Worker processes (CIRLAB_WORKERS).")
@option("--output-dir", type=click.Path(file_okay=False, path_type=Path), help="Output root (CIRLAB_OUTPUT_ROOT).")
def ablate(
    table_id: int,
    seeds: str,
    config_path: Path | None,
    assignments: tuple[str, ...],
    workers: int | None,
    output_dir: Path | None,
) -> None:
    """Write ``ablate-table<N>/report.json`` and print mean ± std per preset."""
    import msgspec
    from rich import get_console

    from cirlab.domain.experiments.ablation import run_ablation
    from cirlab.domain.trainer.config_file import load_run_config, parse_assignments
    from cirlab.domain.trainer.reporting import prepare_run_directory
    from cirlab.lib.settings import get_settings

    console = get_console()
    with _exit_codes(console):
        seed_list = _parse_seeds(seeds)
        base = load_run_config(config_path, parse_assignments(assignments))
        directory = prepare_run_directory(_output_root(output_dir), f"ablate-table{table_id}")
        pool_size = workers if workers is not None else get_settings().app.WORKERS
        console.rule(f"[bold cyan]Ablation table {table_id}[/bold cyan]")
        with Live(Spinner("aesthetic", text=" running presets"), refresh_per_second=15, console=console) as live:
            report = run_ablation(
                table_id,
                seed_list,
                base,
                workers=max(pool_size, 1),
                on_outcome=lambda o: live.update(Spinner("aesthetic", text=f" {o.preset} seed {o.seed} done")),
            )
        target = directory / "report.json"
        target.write_bytes(msgspec.json.format(msgspec.json.encode(report)))
        _print_report(console, report)
        console.print(f"report: {target}")


def _print_report(console: Console, report: AblationReport) -> None:
    presets = Table(title=f"Table {report.table}: final accuracy over seeds {report.seeds}", title_justify="left")
    for column in ("preset", "mean", "std", "per seed"):
        presets.add_column(column, justify="left" if column in {"preset", "per seed"} else "right")
    for summary in report.presets:
        presets.add_row(
            summary.preset,
            f"{summary.mean:.4f}",
            f"{summary.std:.4f}",
            " ".join(f"{value:.3f}" for value in summary.final_accuracy),
        )
    console.print(presets)
    verdicts = Table(title="Expected ordering", title_justify="left")
    for column in ("comparison", "margin", "threshold", "verdict"):
        verdicts.add_column(column)
    for verdict in report.verdicts:
        verdicts.add_row(
            f"{verdict.lower} {verdict.relation} {verdict.higher}",
            f"{verdict.margin:+.4f}",
            f"{verdict.threshold:+.4f}",
            "[green]holds[/green]" if verdict.holds else "[red]violated[/red]",
        )
    console.print(verdicts)


@cli.command(name="check", help="Run the gradient or invariant suite.")
@click.argument("suite", type=click.Choice(["gradients", "invariants"]))
@option("--instances", type=int, default=50, show_default=True, help="Seeded instances for the gradient suite.")
@option("--seed", type=int, default=0, show_default=True)
def check(suite: str, instances: int, seed: int) -> None:
    from rich import get_console

    from cirlab.domain.experiments.checks import run_suite

    console = get_console()
    with _exit_codes(console):
        console.rule(f"[bold cyan]{suite}[/bold cyan]")
        with Live(Spinner("aesthetic"), refresh_per_second=15, console=console, transient=True):
            report = run_suite(suite, instances=instances, seed=seed)
        console.print(_check_table(report))
        if not report.passed:
            names = ", ".join(result.name for result in report.failures)
            raise ApplicationError(detail=f"{len(report.failures)} check(s) failed: {names}")


def _check_table(report: CheckReport) -> Table:
    table = Table(title=f"{report.suite} suite", title_justify="left")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for result in report.results:
        table.add_row(result.name, "[green]pass[/green]" if result.passed else "[red]FAIL[/red]", result.detail)
    return table


@cli.command(name="gen-data", help="Write a synthetic dataset in the CIRD format.")
@option("--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@option("--classes", type=int, default=16, show_default=True)
@option("--per-class", type=int, default=96, show_default=True)
@option("--side", type=int, default=16, show_default=True)
@option("--seed", type=int, default=0, show_default=True)
def gen_data(output: Path, classes: int, per_class: int, side: int, seed: int) -> None:
    from rich import get_console

    from cirlab.domain.stream.etl import build_synthetic_dataset, write_dataset

    console = get_console()
    with _exit_codes(console):
        if classes < 1 or per_class < 1 or side < 4:
            raise ConfigurationError(detail="gen-data needs classes >= 1, per-class >= 1 and side >= 4")
        console.rule("Generating dataset")
        images, labels = build_synthetic_dataset(classes, per_class, side, seed)
        try:
            target = write_dataset(output, images, labels, classes)
        except OSError as exc:
            raise ConfigurationError(detail=f"cannot write {output}: {exc.strerror}") from exc
        console.rule(f"{labels.shape[0]} images written to {target}")
