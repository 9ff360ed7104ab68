"""
Pytest configuration for the uwqkd tests.
"""

import pytest

from uwqkd.settings import Settings


@pytest.fixture(autouse=True)
def default_settings():
    """Every test starts from the package defaults and empty table caches."""
    Settings.reset()
    yield
    Settings.reset()
