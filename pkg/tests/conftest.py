import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meshinvert import mesh as mesh_mod

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# one line per acceptance criterion, printed in the terminal summary so
# the verdicts survive pytest's output capture
_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    def record(line: str) -> None:
        _CRITERION_LINES.append(line)
        print(line, flush=True)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_mesh() -> mesh_mod.Mesh:
    """Plain ~120-node mesh shared by tests that only need geometry."""
    return mesh_mod.generate_mesh(mesh_mod.MeshSpec(120, seed=3))


@pytest.fixture(scope="session")
def obstacle_mesh() -> mesh_mod.Mesh:
    ob = mesh_mod.Obstacle.disk(0.5, 0.5, 0.12)
    return mesh_mod.generate_mesh(mesh_mod.MeshSpec(150, obstacle=ob, seed=5))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
