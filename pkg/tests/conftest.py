# tests/conftest.py
import json
import os
import sys

import pytest

# Ensure imports work when pytest runs from repo root
ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from app import create_app


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the multi-seed learning runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute statistical runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def app():
    return create_app({"TESTING": True, "LOG_LEVEL": "WARNING"})


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def write_json(tmp_path):
    """Write an object to a JSON file under tmp_path and return its path."""
    def _write(name, obj):
        path = tmp_path / name
        path.write_text(json.dumps(obj))
        return str(path)
    return _write
