"""
Main Flask application entry point for the quaternion Wasserstein toolkit.

This module provides the application factory pattern for creating Flask app instances.
Commands are organized in separate blueprint modules in the commands package;
no HTTP routes are registered. Run with `python app.py <command> [options]`.
"""

import logging

from flask import Flask
from flask.cli import FlaskGroup
from flask.logging import default_handler

from commands import register_blueprints


def create_app(test_config=None):
    """
    Application factory function to create and configure Flask app.

    Args:
        test_config: mapping applied last, over defaults and QWD_* environment variables

    Returns:
        Flask: Configured Flask application instance
    """
    app = Flask(__name__)
    app.config.from_mapping(
        SEED=0,
        LOG_LEVEL="INFO",
        JSON_INDENT=2,
    )
    app.config.from_prefixed_env("QWD")
    if test_config is not None:
        app.config.from_mapping(test_config)

    # Service modules log under "services"
    services_logger = logging.getLogger("services")
    if default_handler not in services_logger.handlers:
        services_logger.addHandler(default_handler)
    services_logger.setLevel(app.config["LOG_LEVEL"])
    app.logger.setLevel(app.config["LOG_LEVEL"])

    register_blueprints(app)

    return app


cli = FlaskGroup(create_app=create_app, add_default_commands=False)


if __name__ == '__main__':
    cli()
