# src/core/app.py - Command-line application
import typer

from config.config import config
from src.handlers.commands import (
    analyze_constants,
    compare,
    replay,
    simulate,
    validate_case,
)
from src.utils.logging_utils import get_logger

logger = get_logger(__name__)

app = typer.Typer(
    name="darse",
    help="Decentralized adaptive re-weighted state estimation simulator.",
    no_args_is_help=True,
    add_completion=False,
)

app.command("simulate")(simulate)
app.command("compare")(compare)
app.command("analyze-constants")(analyze_constants)
app.command("validate-case")(validate_case)
app.command("replay")(replay)


def version_callback(value: bool):
    if value:
        typer.echo(f"darse {config.app_version}")
        raise typer.Exit()


@app.callback()
def main_options(
    version: bool = typer.Option(
        False, "--version", callback=version_callback, is_eager=True, help="Show the version and exit"
    ),
):
    """Decentralized adaptive re-weighted state estimation simulator."""


def main(argv=None):
    logger.debug(f"CLI started (version {config.app_version})")
    app(args=argv, prog_name="darse")
