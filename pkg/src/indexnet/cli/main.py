"""Main CLI entry point for indexnet."""

from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _pkg_version
from typing import Optional

import click

from ..utils.logger import setup_logging

try:
    __version__ = _pkg_version("indexnet")
except PackageNotFoundError:  # running from source without an installed dist
    __version__ = "0.1.0"
from .commands.eval_cmd import evaluate_cmd
from .commands.gradcheck_cmd import gradcheck
from .commands.inspect_cmd import inspect
from .commands.train_cmd import train


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.option(
    "--log-file", type=click.Path(dir_okay=False), help="Also log to this file"
)
@click.pass_context
def cli(ctx: click.Context, verbose: bool, log_file: Optional[str]) -> None:
    """
    indexnet - train and verify index-form neural networks on the CPU.

    Args:
        ctx: Click context object for sharing data between commands
        verbose: Enable detailed logging output
        log_file: Optional log file (always at DEBUG)

    Exit codes:
        0 success, 2 usage error, 3 configuration error, 4 data or
        checkpoint error, 5 numeric failure, 6 failed gradient check

    Examples:
        indexnet train --config xor-fnn
        indexnet --verbose gradcheck --config charloop-lstm
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    setup_logging(verbose=verbose, log_file=log_file)


cli.add_command(train)
cli.add_command(evaluate_cmd, name="eval")
cli.add_command(gradcheck)
cli.add_command(inspect)


if __name__ == "__main__":
    cli()
