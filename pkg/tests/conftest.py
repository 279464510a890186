import numpy as np
import pytest

from qig import models
from qig.fisher import qfim, reparametrized_slds, slds

# interior points used throughout; bloch_3p and noisy_qubit match the CLI examples
POINTS = {
    "pure_qubit": [0.7, 0.3],
    "noisy_qubit": [0.7, 0.3],
    "bloch_3p": [0.2, 0.3, 0.1],
    "classical_2p": [0.2, 0.3],
    "unitary_2p": [0.2, 0.3],
    "planar_bloch_2p": [0.3, 0.2],
    "coin": [0.3],
}

REGISTRY = [m.name for m in models.registry()]
MULTI = [name for name in REGISTRY if models.get_model(name).n >= 2]


class Setup:
    """Model, point, state, tangent, SLDs and QFIM bundled for tests."""

    def __init__(self, name, x=None):
        self.model = models.get_model(name)
        self.x = np.array(POINTS[name] if x is None else x, dtype=float)
        self.rho = models.evaluate(self.model, self.x)
        self.tangent = models.tangent(self.model, self.x)
        self.L = slds(self.rho, self.tangent)
        self.F = qfim(self.rho, self.L).matrix

    @property
    def L_tilde(self):
        return reparametrized_slds(self.L, self.F)


def setup(name, x=None):
    return Setup(name, x)


@pytest.fixture(params=REGISTRY)
def any_model(request):
    return setup(request.param)


@pytest.fixture(params=MULTI)
def multi_model(request):
    return setup(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
