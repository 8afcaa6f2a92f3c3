import numpy as np
import pytest

from v2icoop.config import ModelConfig
from v2icoop.model import init_params
from v2icoop.scene import GridConfig, grid_geometry_from_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def geometry():
    return grid_geometry_from_config(GridConfig())


@pytest.fixture(scope="session")
def small_geometry():
    # 16 x 16 cells: small enough for fast end-to-end tests
    return grid_geometry_from_config(GridConfig(x_range=(-3.2, 3.2), y_range=(-3.2, 3.2), resolution=0.4))


@pytest.fixture
def params():
    return init_params(0, ModelConfig())


_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, detail)."""
    def _report(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
