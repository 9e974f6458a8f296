import pytest

from toda_cft.core.field_sampler import build_covariance
from toda_cft.core.lie_structure import CouplingParams, build_algebra
from toda_cft.core.sphere_geometry import SphereGrid


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("TODA_CFT_LOG_LEVEL", "TODA_CFT_WORKERS", "TODA_CFT_CHUNK_SIZE", "TODA_CFT_OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture(scope="session")
def sl2():
    return build_algebra("A1")


@pytest.fixture(scope="session")
def sl3():
    return build_algebra("A2")


@pytest.fixture(scope="session")
def grid_256():
    return SphereGrid.fibonacci(256)


@pytest.fixture(scope="session")
def grid_512():
    return SphereGrid.fibonacci(512)


@pytest.fixture(scope="session")
def sl2_model(grid_256, sl2):
    return build_covariance(grid_256, sl2)


@pytest.fixture(scope="session")
def sl3_model(grid_256, sl3):
    return build_covariance(grid_256, sl3)


@pytest.fixture(scope="session")
def sl2_params():
    return CouplingParams(gamma="4/5", mu=(1,))


@pytest.fixture(scope="session")
def sl2_insertions(sl2):
    """0.9 e_1 at 1 and -1, 1.6 e_1 at i/2: s_1 = 1/8 at gamma = 0.8."""
    e1 = sl2.simple_root(1)
    return [
        (1 + 0j, e1 * "9/10"),
        (-1 + 0j, e1 * "9/10"),
        (0.5j, e1 * "8/5"),
    ]
