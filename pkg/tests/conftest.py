import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linfdse.harness import case_preset, design_for, nominal_model
from linfdse.models import PlantModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def linear_plant(A, C, B_w=None):
    """PlantModel wrapper around a linear system with no nonlinear parts."""
    A = np.asarray(A, float)
    C = np.atleast_2d(np.asarray(C, float))
    n, ny = A.shape[0], C.shape[0]
    B_w = np.zeros((n, 1)) if B_w is None else np.atleast_2d(np.asarray(B_w, float))
    nw = B_w.shape[1]

    def f(x, u):
        return np.zeros_like(np.asarray(x, float))

    def h(x, u):
        return np.asarray(x, float) @ C.T

    def jac_f(x, u):
        return np.zeros(np.shape(x)[:-1] + (n, n))

    def jac_h(x, u):
        return np.broadcast_to(C, np.shape(x)[:-1] + (ny, n)).copy()

    return PlantModel(n_x=n, A=A, B_w=B_w, D_u=np.zeros((ny, nw + 2)), D_w=np.zeros((ny, nw)),
                      C=C, f=f, h=h, jac_f=jac_f, jac_h=jac_h, name="linear")


@pytest.fixture(scope="session")
def nominal():
    """Default 4th-order plant with its output matrix, and the operating box."""
    return nominal_model(case_preset("case1"))


@pytest.fixture(scope="session")
def scenario_design(nominal):
    """Observer design used by the scenario tests (computed once)."""
    model, box = nominal
    return design_for(case_preset("case1"), model, box)
