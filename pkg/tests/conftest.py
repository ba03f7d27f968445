import pytest
import torch

from cloudcast import bench, commands, set_output


@pytest.fixture(autouse=True)
def reset_options():
    """Give every test the default options and a quiet torch."""
    torch.set_num_threads(1)
    set_output()
    commands.reset_options()
    yield
    commands.reset_options()


@pytest.fixture(autouse=True)
def bench_lock(tmp_path, monkeypatch):
    """Keep the machine-wide benchmark lock inside the test directory."""
    path = str(tmp_path / 'cloudcast-bench.lock')
    monkeypatch.setattr(bench, 'LOCK_PATH', path)
    return path


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Run in an empty directory with data/ and runs/ below it."""
    monkeypatch.chdir(tmp_path)
    return tmp_path
