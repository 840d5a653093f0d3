import sys

import pytest

from clusterlclt.model import (
    BoundaryCondition,
    CouplingField,
    ModelInstance,
    SingleSiteMeasure,
    build_volume,
    chain_volume,
)


def make_model(volume, couplings=None, measure=None, boundary=None, beta=1.0):
    d = volume.dimension
    return ModelInstance(
        volume,
        couplings if couplings is not None else CouplingField.zero(d),
        measure if measure is not None else SingleSiteMeasure.gaussian(1.0),
        boundary if boundary is not None else BoundaryCondition.free(),
        beta,
    )


@pytest.fixture
def ising_chain4():
    return make_model(chain_volume(4), CouplingField.nearest_neighbor(1.0, 1), SingleSiteMeasure.ising(), beta=0.05)


@pytest.fixture
def gaussian_k3():
    return make_model(build_volume(1, 3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
