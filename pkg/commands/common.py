"""
Shared helpers for command blueprints: error-to-exit-code mapping, seeding and JSON output.
"""

import functools
from typing import Dict, Optional

import click
from flask import current_app

from services.errors import QwdError
from services.manifest import RunManifest
from storage import dumps_json


def handle_errors(fn):
    """Turn QwdError into its exit code with the message on stderr."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except QwdError as exc:
            current_app.logger.error("%s failed: %s", fn.__name__, exc)
            click.echo(f"Error: {exc}", err=True)
            click.get_current_context().exit(exc.exit_code)
    return wrapper


def resolve_seed(seed: Optional[int]) -> int:
    """Explicit --seed, else the configured default (QWD_SEED)."""
    return int(current_app.config["SEED"]) if seed is None else int(seed)


def emit(report: Dict, manifest: RunManifest) -> None:
    payload = dict(report)
    payload["manifest"] = manifest.to_dict()
    click.echo(dumps_json(payload, current_app.config["JSON_INDENT"]))
