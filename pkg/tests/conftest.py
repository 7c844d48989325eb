import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-process / long-running end-to-end tests")
