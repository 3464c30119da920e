"""Command line entry points: serve, replay, new, export."""

from __future__ import annotations

import functools
import json
import socket
import sys
from pathlib import Path

import click

from .errors import BindFailure, ConfigError, EngineError, InvalidConfig
from .model import EngineConfig, SystemClock, TickingClock, TopicBrief, validate_config
from .providers import Engine, FixtureScript, fixture_providers, providers_from_env
from .store import export_final, load_session, save_session
from .trace import replay as run_replay


def config_options(fn):
    fn = click.option("--theme-count", type=int, default=3, show_default=True)(fn)
    fn = click.option("--blocks-per-pool", type=int, default=4, show_default=True)(fn)
    fn = click.option("--top-k", type=int, default=5, show_default=True)(fn)
    fn = click.option("--temperature", type=float, default=0.3, show_default=True)(fn)
    fn = click.option("--max-retries", type=int, default=2, show_default=True)(fn)
    fn = click.option("--lang", default="en", show_default=True)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="JSON config file; its values override the flags.")(fn)
    return fn


def build_config(theme_count, blocks_per_pool, top_k, temperature, max_retries, lang, config_path) -> EngineConfig:
    values = {
        "theme_count": theme_count,
        "blocks_per_pool": blocks_per_pool,
        "search_top_k": top_k,
        "lm_temperature": temperature,
        "max_structured_retries": max_retries,
        "content_language": lang,
    }
    if config_path:
        try:
            overrides = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file: {e}")
        unknown = set(overrides) - set(values)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(overrides)
    config = EngineConfig(**values)
    problems = validate_config(config)
    if problems:
        raise InvalidConfig("; ".join(problems))
    return config


def engine_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EngineError as e:
            click.echo(f"error {e.code}: {e.message}", err=True)
            sys.exit(2)

    return wrapper


def _make_engine(fixture: str | None) -> Engine:
    if fixture:
        clock = TickingClock()
        lm, search, _ = fixture_providers(FixtureScript.load(fixture), clock)
        return Engine(lm, search, clock=clock)
    clock = SystemClock()
    lm, search = providers_from_env(clock)
    return Engine(lm, search, clock=clock)


@click.group()
def main():
    """Search-grounded co-writing engine for thematic jokes."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--fixture", type=click.Path(exists=True), default=None,
              help="Serve against a fixture script instead of live providers.")
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Persist sessions into this directory.")
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="Serve a built canvas client at /ui.")
@config_options
@engine_errors
def serve(host, port, fixture, store_dir, ui_dir, **config_flags):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    config = build_config(**config_flags)
    try:
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
        probe.close()
    except OSError as e:
        raise BindFailure(f"cannot bind {host}:{port}: {e}")
    app = create_app(_make_engine(fixture), default_config=config, store_dir=store_dir)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--script", "script_path", type=click.Path(exists=True), required=True,
              help="Fixture script answering every provider call.")
@click.option("--trace", "trace_path", type=click.Path(exists=True), required=True,
              help="Command trace to execute.")
@config_options
@engine_errors
def replay(script_path, trace_path, **config_flags):
    """Execute a command trace against a fixture script and report the outcome."""
    config = build_config(**config_flags)
    report = run_replay(script_path, trace_path, config)
    click.echo(f"digest: {report.digest}")
    click.echo(f"commands: {report.commands_run}")
    click.echo(f"lm_calls: {report.lm_calls}")
    click.echo(f"search_calls: {report.search_calls}")
    click.echo(f"stage: {report.session.stage.value}")
    click.echo(f"maps: {len(report.session.maps)}")
    click.echo(f"elapsed_s: {report.elapsed:.3f}")
    click.echo(f"invariant_violations: {len(report.violations)}")
    for violation in report.violations:
        click.echo(f"  - {violation}")
    sys.exit(0 if not report.violations else 1)


@main.command()
@click.option("--topic", required=True)
@click.option("--supplement", "supplements", multiple=True)
@click.option("--audience", default=None)
@click.option("--store", "store_dir", type=click.Path(), default="./sessions", show_default=True)
@config_options
@engine_errors
def new(topic, supplements, audience, store_dir, **config_flags):
    """Create a session from flags and persist it."""
    from .model import create_session as model_create

    config = build_config(**config_flags)
    brief = TopicBrief(topic=topic, supplements=tuple(supplements), audience_hint=audience)
    clock = SystemClock()
    session = model_create(brief, config, session_id=f"s-{abs(hash(topic)) % 10**8}", clock=clock)
    path = save_session(session, store_dir, clock)
    click.echo(f"created {session.id} at {path}")


@main.command()
@click.option("--session", "session_id", required=True)
@click.option("--store", "store_dir", type=click.Path(exists=True), default="./sessions", show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write to a file instead of stdout.")
@engine_errors
def export(session_id, store_dir, out):
    """Export the finalized joke of a stored session as plain text."""
    session = load_session(session_id, store_dir)
    document = export_final(session)
    if out:
        Path(out).write_text(document, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(document, nl=False)


if __name__ == "__main__":
    main()
