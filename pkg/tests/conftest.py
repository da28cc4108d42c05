import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from gogsim import cloth as clothsim  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def settled_cloth():
    """Default 0.3 m square, settled flat at the origin."""
    c, _ = clothsim.settle(clothsim.build_cloth(clothsim.ClothSpec()), 1.0, 1e-7)
    return c


@pytest.fixture(scope="session")
def small_cloth():
    """Coarse 0.2 m cloth for cheap episode tests."""
    spec = clothsim.ClothSpec(width_m=0.2, height_m=0.2, nx=9, ny=9)
    c, _ = clothsim.settle(clothsim.build_cloth(spec), 0.5, 1e-7)
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
