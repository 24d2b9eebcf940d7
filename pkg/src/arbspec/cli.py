"""Command-line interface.

Exit codes: 0 success, 2 invalid usage or configuration, 3 a verdict
deviates from the expected table or contradicts the implication chain,
4 the simulation produced too many invalid paths.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys

import click

from .classifier import nflvr_integral_test, summary_table
from .config import TASKS, load_config
from .errors import ChainViolation, InvalidPathsError, ValidationError
from .evidence import RunSettings

EXIT_USAGE = 2
EXIT_DEVIATION = 3
EXIT_RUN = 4


def _fail(code, exc):
    click.echo(json.dumps({"status": "error", "type": type(exc).__name__, "message": str(exc)}),
               err=True)
    sys.exit(code)


def _logging(verbose):
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@click.group()
@click.version_option(package_name="arbspec")
def main():
    """Diagnose no-arbitrage conditions of continuous market models."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), default=None,
              help="Override the output directory of the config.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("-t", "--task", "tasks", multiple=True, type=click.Choice(TASKS),
              help="Run only these tasks (repeatable).")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def run_cmd(config_path, output_dir, seed, tasks, verbose):
    """Run the experiment described by CONFIG_PATH."""
    from .pipeline import run

    _logging(verbose)
    try:
        cfg = load_config(config_path).with_overrides(seed=seed, output_dir=output_dir,
                                                      tasks=tasks or None)
        result = run(cfg)
    except ValidationError as exc:
        _fail(EXIT_USAGE, exc)
    except InvalidPathsError as exc:
        _fail(EXIT_RUN, exc)
    except ChainViolation as exc:
        _fail(EXIT_DEVIATION, exc)
    if result.report is not None:
        click.echo(summary_table([result.report]), nl=False)
    click.echo(f"wrote {len(result.files)} files and manifest.ini to {result.output_dir}")


@main.command("reproduce")
@click.option("-m", "--model", "models", multiple=True,
              help="Restrict to these zoo models (repeatable).")
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.option("--n-paths", type=int, default=None, help="Paths per refinement level.")
@click.option("--nu-paths", type=int, default=None, help="Paths for the singular-drift test.")
@click.option("-v", "--verbose", count=True)
def reproduce_cmd(models, output_dir, seed, n_paths, nu_paths, verbose):
    """Classify the model zoo and compare with the expected verdicts."""
    from .pipeline import reproduce_paper_examples

    _logging(verbose)
    kw = {}
    if seed is not None:
        kw["master_seed"] = seed
    if n_paths is not None:
        kw["n_paths"] = n_paths
    if nu_paths is not None:
        kw["nu_paths"] = nu_paths
    settings = dataclasses.replace(RunSettings(), **kw)
    try:
        reports, devs = reproduce_paper_examples(settings, models or None, output_dir)
    except ValidationError as exc:
        _fail(EXIT_USAGE, exc)
    except InvalidPathsError as exc:
        _fail(EXIT_RUN, exc)
    except ChainViolation as exc:
        _fail(EXIT_DEVIATION, exc)
    click.echo(summary_table(reports), nl=False)
    if devs:
        for d in devs:
            click.echo(f"DEVIATION {d}", err=True)
        sys.exit(EXIT_DEVIATION)
    click.echo("all verdicts match the expected table")


@main.command("integral-test")
@click.argument("mu_exp", type=float)
def integral_test_cmd(mu_exp):
    """Strictness of the minimal deflator for volatility x^MU_EXP."""
    click.echo(nflvr_integral_test(mu_exp))


if __name__ == "__main__":
    main()
