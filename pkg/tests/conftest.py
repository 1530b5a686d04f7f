import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))

import runio  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full scenario runs (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def quiet_logs(monkeypatch):
    monkeypatch.setattr(runio, "VERBOSE", False)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("WEAKBOHM_OUT", str(tmp_path / "outputs"))
    return tmp_path / "outputs"
