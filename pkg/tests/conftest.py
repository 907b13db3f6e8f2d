import numpy as np
import pytest
from hypothesis import settings

from chquench.adjoint import CostWeights, Targets
from chquench.control import Admissible
from chquench.geometry import build_grid
from chquench.potentials import Potentials
from chquench.state import Model

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def reference_model(alpha_steps=20, cells=64, T=0.1):
    g = build_grid(1, cells, 1.0)
    y0 = 0.5 * np.cos(np.pi * g.coords[:, 0])
    return Model(g, Potentials(), y0, T, alpha_steps)


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture(scope="session")
def ref_weights():
    return CostWeights(1.0, 1.0, 0.0, 0.0, 0.01)


@pytest.fixture(scope="session")
def ref_targets(ref_model):
    return Targets.constant(ref_model, 0.2, 0.2)


@pytest.fixture(scope="session")
def ref_admissible():
    return Admissible(-1.0, 1.0, 10.0)


@pytest.fixture(scope="session")
def grid2d():
    return build_grid(2, (8, 6), (1.0, 0.75))
