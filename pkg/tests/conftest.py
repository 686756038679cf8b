# /superlab/tests/conftest.py

import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from kernel import gaussian_bump, zero_kernel  # noqa: E402
from noise import GridSpec  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale run, skipped without --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def grid():
    return GridSpec(t_max=1.0, n_t=16, x_min=-12.0, x_max=12.0, n_x=48)


@pytest.fixture
def bump():
    return gaussian_bump(0.5, 0.5)


@pytest.fixture
def zero():
    return zero_kernel()


@pytest.fixture
def write_config(tmp_path):
    """Write a YAML config into tmp_path and return its path; out_dir defaults to tmp_path/out."""
    from data_manager import _write_yaml

    def _write(data: dict, name: str = "config.yaml") -> str:
        data = dict(data)
        data.setdefault("out_dir", str(tmp_path / "out"))
        path = str(tmp_path / name)
        _write_yaml(path, data)
        return path

    return _write
