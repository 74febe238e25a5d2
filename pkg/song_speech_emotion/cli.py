"""Command line interface: extract, train, grid and report."""

from __future__ import annotations

import functools
import logging
from pathlib import Path

import click
import pandas as pd
from rich.console import Console
from rich.table import Table

from . import SongSpeechEmotionError
from .classifiers import ARCHITECTURES
from .config import load_config
from .evaluation import ConfusionMatrix
from .hsf import FEATURE_SETS, FEATURE_TYPES
from .log import configure_logging
from .reporting import classifier_table, combine_results, feature_table, mean_rows, write_heatmap

console = Console()


def _reported(command):
    """Turn package errors into a one-line click error (exit status 1)."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SongSpeechEmotionError as error:
            raise click.ClickException(str(error)) from error

    return wrapper


def config_options(command):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Flat YAML config file."),
        click.option("--corpus-root", help="RAVDESS root directory."),
        click.option("--cache-dir", help="Feature cache directory."),
        click.option("--output-dir", help="Directory for result files."),
        click.option("--task", type=click.Choice(["speech", "song"])),
        click.option("--workers", type=int, help="Worker processes."),
        click.option("--seed", type=int, help="Training seed."),
        click.option("--epochs", type=int),
        click.option("--set", "set_options", multiple=True, metavar="KEY=VALUE",
                     help="Override any config key; repeatable."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _config(config_path, set_options, **flags):
    return load_config(config_path, flags, set_options)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
@click.option("-q", "--quiet", is_flag=True, help="Only log warnings and errors.")
def main(verbose, quiet):
    """Song and speech emotion recognition experiments on RAVDESS."""
    configure_logging(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)


@main.command()
@config_options
@click.option("--feature-set", "feature_sets", multiple=True,
              type=click.Choice(FEATURE_SETS, case_sensitive=False),
              help="Feature set to extract; repeatable, default all.")
@_reported
def extract(config_path, set_options, feature_sets, **flags):
    """Extract features for the corpus into the cache."""
    from .experiment import extract_all

    config = _config(config_path, set_options, **flags)
    config.validate(require_corpus=True)
    sets = [s.upper() for s in feature_sets] or list(FEATURE_SETS)
    for summary in extract_all(config, sets):
        if summary.extracted == 0:
            click.echo(f"{summary.lld_path.name}: all {summary.reused} utterances cached")
        else:
            click.echo(f"{summary.lld_path.name}: extracted {summary.extracted}, reused {summary.reused}")


@main.command()
@config_options
@click.option("--feature-set", type=click.Choice(FEATURE_SETS, case_sensitive=False))
@click.option("--feature-type", type=click.Choice(FEATURE_TYPES, case_sensitive=False))
@click.option("--classifier", type=click.Choice(ARCHITECTURES, case_sensitive=False))
@_reported
def train(config_path, set_options, **flags):
    """Cross-validate one (feature set, feature type, classifier) cell, then save a model fitted on all of it."""
    from .experiment import fit_final_model, run_experiment

    config = _config(config_path, set_options, **flags)
    config.validate(require_corpus=True)
    cell_dir = Path(config.output_dir) / f"{config.feature_set}_{config.feature_type}_{config.classifier}"
    grid = run_experiment(config, [(config.feature_set, config.feature_type)], [config.classifier], cell_dir)
    _print_means(grid.results)
    path = fit_final_model(config, config.feature_set, config.feature_type, config.classifier, cell_dir)
    click.echo(f"saved {path}")


@main.command()
@config_options
@click.option("--feature-set", "feature_sets", multiple=True, type=click.Choice(FEATURE_SETS, case_sensitive=False),
              help="Repeatable; default all three sets.")
@click.option("--feature-type", "feature_types", multiple=True,
              type=click.Choice(FEATURE_TYPES, case_sensitive=False), help="Repeatable; default LLD and HSF.")
@click.option("--classifier", "classifiers", multiple=True, type=click.Choice(ARCHITECTURES, case_sensitive=False),
              help="Repeatable; default all four.")
@_reported
def grid(config_path, set_options, feature_sets, feature_types, classifiers, **flags):
    """Cross-validate every requested feature x classifier cell."""
    from .experiment import run_experiment

    config = _config(config_path, set_options, **flags)
    config.validate(require_corpus=True)
    sets = [s.upper() for s in feature_sets] or list(FEATURE_SETS)
    types = [t.upper() for t in feature_types] or list(FEATURE_TYPES)
    chosen = [c.upper() for c in classifiers] or list(ARCHITECTURES)
    result = run_experiment(config, [(s, t) for s in sets for t in types], chosen)
    _print_means(result.results)


@main.command()
@config_options
@_reported
def report(config_path, set_options, **flags):
    """Combine results into results.csv, draw heatmaps and print summary tables."""
    config = _config(config_path, set_options, **flags)
    output_dir = Path(config.output_dir)
    try:
        results = combine_results(output_dir)
    except FileNotFoundError as error:
        raise click.ClickException(str(error)) from error

    for path in sorted(output_dir.glob("confusion_*.csv")):
        counts = pd.read_csv(path, index_col=0)
        write_heatmap(ConfusionMatrix(counts.to_numpy(), tuple(counts.columns)), path.with_suffix(""),
                      title=path.stem.removeprefix("confusion_").replace("_", " "))

    for classifier in ARCHITECTURES:
        table = feature_table(results, classifier)
        if len(table):
            _print_pivot(table, f"Feature sets ({classifier})")
    for set_id in FEATURE_SETS:
        for kind in FEATURE_TYPES:
            table = classifier_table(results, set_id, kind)
            if len(table) > 1:
                _print_pivot(table, f"Classifiers ({set_id} {kind})")
    click.echo(f"wrote {output_dir / 'results.csv'}")


def _print_means(results: pd.DataFrame) -> None:
    table = Table(title="Cross-validated means")
    for column in ("task", "feature_set", "feature_type", "classifier", "accuracy", "uar"):
        table.add_column(column)
    for row in mean_rows(results).itertuples():
        table.add_row(row.task, row.feature_set, row.feature_type, row.classifier,
                      f"{row.accuracy:.3f}", f"{row.uar:.3f}")
    console.print(table)


def _print_pivot(pivot: pd.DataFrame, title: str) -> None:
    table = Table(title=title)
    table.add_column(pivot.index.name or "")
    for task, metric in pivot.columns:
        table.add_column(f"{task} {metric}")
    for name, values in pivot.iterrows():
        table.add_row(str(name), *(f"{value:.3f}" for value in values))
    console.print(table)
