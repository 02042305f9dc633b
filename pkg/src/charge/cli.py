"""Command line entry point.

One command per pipeline stage, in dependency order:

    ingest -> extract -> verify -> generate -> index -> retrieve
           -> answer -> evaluate

plus `serve` (review service), `export` (dataset archive), and `demo`
(self-contained offline run with scripted providers).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click

from .config import MODE_ALIASES, load_config
from .errors import ChargeError
from . import stages

_MODE_CHOICES = ("none", "rag", "gt")


def config_option(fn):
    return click.option(
        "--config", "-c", "config_path", default="charge.toml",
        show_default=True, metavar="FILE",
        help="Pipeline configuration file.")(fn)


def force_option(fn):
    return click.option(
        "--force", is_flag=True,
        help="Rerun the stage even if its inputs are unchanged.")(fn)


def _load(config_path: str):
    return load_config(config_path, env=os.environ)


def _echo(summary: dict) -> None:
    if summary.get("skipped"):
        click.echo(f"{summary['stage']}: up to date, skipped")
    else:
        click.echo(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _run_stage(config_path: str, runner, needs_clients: bool = True, **kwargs) -> None:
    try:
        config = _load(config_path)
        if needs_clients:
            clients = stages.build_clients(config)
            summary = runner(config, clients, **kwargs)
        else:
            summary = runner(config, **kwargs)
    except ChargeError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo(summary)


def _conditions(config, modes: tuple[str, ...], k: int | None):
    selected = [MODE_ALIASES[m] for m in modes] if modes else None
    return stages.conditions_for(config, modes=selected, k=k)


@click.group()
@click.version_option(package_name="charge")
def main() -> None:
    """Chart+text QA dataset builder, retrieval benchmark, and review service."""


@main.command()
@config_option
@force_option
def ingest(config_path: str, force: bool) -> None:
    """Chunk input document bundles and OCR their charts into a corpus."""
    _run_stage(config_path, stages.run_ingest, force=force)


@main.command()
@config_option
@force_option
def extract(config_path: str, force: bool) -> None:
    """Extract candidate keypoints from every chunk and chart."""
    _run_stage(config_path, stages.run_extract, force=force)


@main.command()
@config_option
@force_option
def verify(config_path: str, force: bool) -> None:
    """Crossmodally verify candidates; retain single-modality keypoints."""
    _run_stage(config_path, stages.run_verify, force=force)


@main.command()
@config_option
@force_option
def generate(config_path: str, force: bool) -> None:
    """Generate the QA dataset against the configured category quotas."""
    _run_stage(config_path, stages.run_generate, force=force)


@main.command()
@config_option
@force_option
def index(config_path: str, force: bool) -> None:
    """Build the retrieval index for the configured architecture."""
    _run_stage(config_path, stages.run_index, force=force)


@main.command()
@config_option
@force_option
def retrieve(config_path: str, force: bool) -> None:
    """Retrieve top-k references for every dataset question."""
    _run_stage(config_path, stages.run_retrieve, force=force)


@main.command()
@config_option
@force_option
@click.option("--mode", "modes", multiple=True,
              type=click.Choice(_MODE_CHOICES),
              help="Answer only under this condition (repeatable).")
@click.option("--k", type=click.IntRange(min=1), default=None,
              help="Override retrieval depth for the rag condition.")
def answer(config_path: str, force: bool, modes: tuple[str, ...], k: int | None) -> None:
    """Collect responder output for every question under each condition."""
    try:
        config = _load(config_path)
        clients = stages.build_clients(config)
        summary = stages.run_answer(config, clients,
                                    conditions=_conditions(config, modes, k),
                                    force=force)
    except ChargeError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo(summary)


@main.command()
@config_option
@force_option
@click.option("--mode", "modes", multiple=True,
              type=click.Choice(_MODE_CHOICES),
              help="Score only this condition (repeatable).")
@click.option("--k", type=click.IntRange(min=1), default=None,
              help="Override retrieval depth for the rag condition.")
def evaluate(config_path: str, force: bool, modes: tuple[str, ...], k: int | None) -> None:
    """Score stored responses and write the evaluation report."""
    try:
        config = _load(config_path)
        clients = stages.build_clients(config)
        summary = stages.run_evaluate(config, clients,
                                      conditions=_conditions(config, modes, k),
                                      force=force)
    except ChargeError as exc:
        raise click.ClickException(str(exc)) from exc
    if not summary.get("skipped"):
        click.echo((Path(summary["report_dir"]) / "report.txt").read_text(
            encoding="utf-8"), nl=False)
    _echo({k_: v for k_, v in summary.items() if k_ != "report"})


@main.command()
@config_option
@click.option("--port", type=int, default=None,
              help="Listen port (defaults to review.port from the config).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None,
              help="Artifact root holding corpus/ and dataset/ (defaults to paths.root).")
@click.option("--webui", "webui_dir", type=click.Path(file_okay=False), default=None,
              help="Built frontend bundle to serve at /.")
def serve(config_path: str, port: int | None, host: str,
          data_dir: str | None, webui_dir: str | None) -> None:
    """Run the review service for human annotation."""
    try:
        config = _load(config_path)
        if not config.review_tokens:
            raise ChargeError("review.tokens must be configured to serve reviews")
        root = Path(data_dir) if data_dir else config.root
        from .service import create_app
        app = create_app(root, config.review_tokens, seed=config.seed,
                         static_dir=webui_dir)
    except ChargeError as exc:
        raise click.ClickException(str(exc)) from exc
    import uvicorn
    uvicorn.run(app, host=host, port=port or config.port)


@main.command()
@config_option
@force_option
def export(config_path: str, force: bool) -> None:
    """Bundle dataset, manifest, and review outcomes into an archive."""
    _run_stage(config_path, stages.run_export, needs_clients=False, force=force)


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="demo", show_default=True,
              help="Directory for the demo workspace.")
def demo(out_dir: str) -> None:
    """Run the whole pipeline offline on a scripted three-document fixture."""
    from .demo import run_demo
    try:
        summary = run_demo(Path(out_dir))
    except ChargeError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(json.dumps(summary, indent=2, sort_keys=True, default=str))


if __name__ == "__main__":
    main()
