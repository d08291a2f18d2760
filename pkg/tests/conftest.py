import numpy as np
import pytest

from sporadic.cli import load_design
from sporadic.model import ControllerParams, HolderParams, PlantModel, assemble_closed_loop
from sporadic.reference import reference_design, unicycle_config, unicycle_plant


def random_plant(rng, n=3, nu=1, ny=2, nd=1, no=1) -> PlantModel:
    return PlantModel(
        A_p=rng.standard_normal((n, n)),
        B_p=rng.standard_normal((n, nu)),
        W_p=rng.standard_normal((n, nd)),
        C_p=rng.standard_normal((ny, n)),
        C_op=rng.standard_normal((no, n)),
    )


def random_controller(rng, plant, n_c=None):
    n_c = plant.n_p if n_c is None else n_c
    ctrl = ControllerParams(
        A_c=rng.standard_normal((n_c, n_c)),
        B_c=rng.standard_normal((n_c, plant.n_y)),
        C_c=rng.standard_normal((plant.n_u, n_c)),
        D_c=rng.standard_normal((plant.n_u, plant.n_y)),
    )
    hold = HolderParams(H=rng.standard_normal((plant.n_y, plant.n_y)), E=rng.standard_normal((plant.n_y, n_c)))
    return ctrl, hold


def random_spd(rng, n, floor=0.5):
    a = rng.standard_normal((n, n))
    return a @ a.T + floor * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def plant():
    return unicycle_plant()


@pytest.fixture(scope="session")
def config():
    return unicycle_config()


@pytest.fixture(scope="session")
def ref():
    return reference_design()


@pytest.fixture(scope="session")
def frozen():
    """Design produced by ``sporadic design --config builtin:unicycle`` and bundled with the package."""
    data, plant, ctrl, hold, cert = load_design("builtin:unicycle_design")
    return {"data": data, "plant": plant, "controller": ctrl, "holder": hold, "certificate": cert,
            "closed_loop": assemble_closed_loop(plant, ctrl, hold)}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
