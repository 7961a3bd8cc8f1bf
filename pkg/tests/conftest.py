import numpy as np
import pytest

from floquet_qtm.controls import ControlProtocol
from floquet_qtm.liouville import tls_preset
from floquet_qtm.observables import MeritDefinition
from floquet_qtm.problem import ThermalMachineProblem
from floquet_qtm.spectral import HarmonicGrid

TAU = 2 * np.pi
DELTA = 0.2


@pytest.fixture(scope="session")
def tls():
    return tls_preset()


def random_u(rng, n_modes=18, delta=DELTA, scale=1.0):
    n = np.repeat(np.arange(1, n_modes + 1), 2)
    return scale * np.r_[rng.uniform(-0.75, 0.75) * delta,
                         rng.uniform(-0.5, 0.5, 2 * n_modes) * delta / n]


def make_problem(period=TAU, n_harmonics=65, n_modes=18, omega_max=8.0, alpha=0.0,
                 kind="power", weights=None, fluctuations=False, flavor="clamped",
                 energy="projected"):
    merit = MeritDefinition(kind=kind, alpha=alpha, weights=weights or {})
    return ThermalMachineProblem(tls_preset(), ControlProtocol(period, n_modes, DELTA, omega_max,
                                                               flavor=flavor),
                                 HarmonicGrid(n_harmonics, period), merit,
                                 fluctuations=fluctuations, energy=energy)


@pytest.fixture(scope="session")
def fig1():
    return make_problem()


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
