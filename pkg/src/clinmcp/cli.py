"""Operator entry points.

Subcommands: mcp-server (serve MCP tools on stdio), serve (HTTP chat
service), ask (one-shot headless question), validate-config, and
seed-fixtures. Exit codes are stable: 2 config error, 3 patient not
found, 4 provider error, 1 other runtime fatal.

stdout carries only machine-consumable output (protocol frames for
mcp-server, answer text for ask); diagnostics go to stderr.
"""

from __future__ import annotations

import logging
import sys
from contextlib import ExitStack

import click

from . import __version__
from .agent import Agent, HandshakeFailure, InProcessGateway, NoToolsAvailable, PatientNotFound, ProviderError
from .fixtures import FixtureStore, seed_fixture_dir, serve_fixture
from .gateway import (
    ConfigParseError,
    ConfigValidationError,
    GatewayConfig,
    build_gateway_server,
    derive_tools,
    load_config_file,
)
from .llm import ChatProvider, MockChatProvider, OpenAiChatProvider
from .transport import LineChannel

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_PATIENT_NOT_FOUND = 3
EXIT_PROVIDER = 4


def _fail(message: str, code: int) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _load_config(path: str) -> GatewayConfig:
    try:
        return load_config_file(path)
    except FileNotFoundError:
        _fail(f"config file not found: {path}", EXIT_CONFIG)
    except (ConfigParseError, ConfigValidationError) as exc:
        _fail(f"invalid config: {exc}", EXIT_CONFIG)
    raise AssertionError("unreachable")


def _with_fixtures(config: GatewayConfig, fixtures_dir: str | None, stack: ExitStack, page_size: int = 10) -> GatewayConfig:
    """When a fixtures dir is given, serve it locally and point the config there."""
    if fixtures_dir is None:
        return config
    store = FixtureStore.load_dir(fixtures_dir, page_size=page_size)
    server = stack.enter_context(serve_fixture(store))
    return config.with_base_url(server.base_url)


def _make_provider(provider: str, llm_base_url: str, model: str) -> ChatProvider:
    if provider == "mock":
        return MockChatProvider()
    return OpenAiChatProvider(llm_base_url, model=model)


@click.group()
@click.version_option(version=__version__, prog_name="clinmcp")
def main() -> None:
    """Clinical assistant stack: FHIR tools over MCP, personas, streaming chat."""


@main.command("mcp-server")
@click.option("--config", "config_path", required=True, help="Gateway config file (JSON or YAML).")
@click.option("--fixtures", "fixtures_dir", default=None, help="Serve this fixture directory instead of the configured FHIR base URL.")
def mcp_server_command(config_path: str, fixtures_dir: str | None) -> None:
    """Speak the MCP tool protocol on stdin/stdout until EOF."""
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    config = _load_config(config_path)
    with ExitStack() as stack:
        config = _with_fixtures(config, fixtures_dir, stack)
        server = build_gateway_server(config, server_version=__version__)
        logging.getLogger(__name__).info("serving %d tools on stdio", len(server.tool_names))
        channel = LineChannel(sys.stdin.buffer, sys.stdout.buffer)
        try:
            server.serve_connection(channel)
        except Exception as exc:  # noqa: BLE001 - fatal path
            _fail(f"fatal: {exc}", EXIT_RUNTIME)


@main.command("serve")
@click.option("--config", "config_path", required=True, help="Gateway config file (JSON or YAML).")
@click.option("--fixtures", "fixtures_dir", default=None, help="Serve this fixture directory instead of the configured FHIR base URL.")
@click.option("--listen", default="127.0.0.1:8080", show_default=True, help="host:port to bind.")
@click.option("--ui-origin", default=None, help="Origin allowed for CORS (the web UI during development).")
@click.option("--ui-dir", default=None, help="Directory of built UI assets to serve at /.")
@click.option("--session-log", default="sessions.jsonl", show_default=True, help="Append-only session log path.")
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--llm-base-url", default="https://api.openai.com", show_default=True, help="OpenAI-compatible endpoint for --provider remote.")
@click.option("--model", default="gpt-4o", show_default=True)
def serve_command(
    config_path: str,
    fixtures_dir: str | None,
    listen: str,
    ui_origin: str | None,
    ui_dir: str | None,
    session_log: str,
    provider: str,
    llm_base_url: str,
    model: str,
) -> None:
    """Run the HTTP chat service (personas, patients, sessions, SSE)."""
    import uvicorn

    from .service import create_app

    config = _load_config(config_path)
    host, _, port_text = listen.partition(":")
    try:
        port = int(port_text)
    except ValueError:
        _fail(f"invalid --listen value: {listen!r}", EXIT_CONFIG)
        return
    with ExitStack() as stack:
        config = _with_fixtures(config, fixtures_dir, stack)
        try:
            agent = Agent.connect(InProcessGateway(build_gateway_server(config)), _make_provider(provider, llm_base_url, model))
        except (HandshakeFailure, NoToolsAvailable) as exc:
            _fail(f"cannot start agent: {exc}", EXIT_RUNTIME)
            return
        stack.callback(agent.close)
        app = create_app(agent, session_log=session_log, ui_origin=ui_origin, ui_dir=ui_dir)
        uvicorn.run(app, host=host or "127.0.0.1", port=port)


@main.command("ask")
@click.option("--config", "config_path", required=True, help="Gateway config file (JSON or YAML).")
@click.option("--fixtures", "fixtures_dir", default=None, help="Serve this fixture directory instead of the configured FHIR base URL.")
@click.option("--patient", "patient_id", required=True, help="Patient id to load context for.")
@click.option("--persona", type=click.Choice(["clinician", "caregiver", "patient"]), default="clinician", show_default=True)
@click.option("--question", required=True, help="Question to ask.")
@click.option("--provider", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--llm-base-url", default="https://api.openai.com", show_default=True)
@click.option("--model", default="gpt-4o", show_default=True)
def ask_command(
    config_path: str,
    fixtures_dir: str | None,
    patient_id: str,
    persona: str,
    question: str,
    provider: str,
    llm_base_url: str,
    model: str,
) -> None:
    """One-shot headless question: streamed answer, then provenance refs."""
    config = _load_config(config_path)
    with ExitStack() as stack:
        config = _with_fixtures(config, fixtures_dir, stack)
        try:
            agent = Agent.connect(InProcessGateway(build_gateway_server(config)), _make_provider(provider, llm_base_url, model))
        except (HandshakeFailure, NoToolsAvailable) as exc:
            _fail(f"cannot start agent: {exc}", EXIT_RUNTIME)
            return
        stack.callback(agent.close)
        try:
            session = agent.create_session(persona, patient_id)
            stream = agent.run_turn(session.id, question)
            try:
                for piece in stream:
                    sys.stdout.write(piece)
                    sys.stdout.flush()
            finally:
                stream.close()
        except PatientNotFound as exc:
            _fail(f"patient not found: {exc}", EXIT_PATIENT_NOT_FOUND)
        except ProviderError as exc:
            _fail(f"provider error: {exc}", EXIT_PROVIDER)
        sys.stdout.write("\n---provenance---\n")
        for ref in stream.provenance:
            sys.stdout.write(ref + "\n")
        sys.stdout.flush()


@main.command("validate-config")
@click.option("--config", "config_path", required=True, help="Gateway config file (JSON or YAML).")
def validate_config_command(config_path: str) -> None:
    """Validate a config and print the derived tool inventory."""
    config = _load_config(config_path)
    tools = derive_tools(config)
    click.echo(f"OK, {len(tools)} tools")
    for tool in tools:
        click.echo(f"  {tool.name}")


@main.command("seed-fixtures")
@click.option("--dir", "directory", required=True, help="Directory to write the synthetic corpus into.")
def seed_fixtures_command(directory: str) -> None:
    """Write the bundled synthetic FHIR corpus (patients p1-p3) plus manifest."""
    written = seed_fixture_dir(directory)
    click.echo(f"wrote {len(written)} files to {directory}")


if __name__ == "__main__":
    main()
