import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linfdse.lipschitz import compose_gamma_l, estimate_gamma, plant_gammas
from linfdse.models import OperatingBox, build_plant, default_box

UNIT = OperatingBox([-1.0, -1.0], [1.0, 1.0], [0.0], [1.0])


def test_linear_map_gives_spectral_norm():
    A = np.array([[2.0, 1.0], [0.0, -3.0]])
    est = estimate_gamma(lambda x, u: x @ A.T, UNIT, budget=1000)
    assert est.gamma == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_sine_has_unit_constant():
    box = OperatingBox([-4.0], [4.0], [0.0], [1.0])
    est = estimate_gamma(lambda x, u: np.sin(x), box, budget=1000)
    assert est.gamma == pytest.approx(1.0, abs=1e-6)


def test_analytic_jacobian_agrees_with_differences():
    fn = lambda x, u: np.stack([np.sin(x[..., 0]) * x[..., 1], x[..., 0] ** 2], -1)  # noqa: E731
    jac = lambda x, u: np.array([[np.cos(x[0]) * x[1], np.sin(x[0])], [2 * x[0], 0.0]])  # noqa
    a = estimate_gamma(fn, UNIT, budget=1000, jac=jac, seed=3)
    b = estimate_gamma(fn, UNIT, budget=1000, seed=3)
    assert a.gamma == pytest.approx(b.gamma, rel=1e-5)


@pytest.fixture(scope="module")
def plant():
    return build_plant()


def grid_oracle(fn, box, per):
    """Max spectral norm of a central-difference Jacobian on a factorial grid."""
    lo = np.concatenate([box.x_min, box.u_min])
    hi = np.concatenate([box.x_max, box.u_max])
    axes = [np.linspace(a, b, per) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    X, U = pts[:, :4], pts[:, 4:]
    cols = []
    for i in range(4):
        h = 1e-6 * max(1.0, np.max(np.abs(X[:, i])))
        e = np.zeros(4)
        e[i] = h
        cols.append((fn(X + e, U) - fn(X - e, U)) / (2 * h))
    J = np.stack(cols, -1)
    return float(np.max(np.linalg.svd(J, compute_uv=False)[:, 0]))


def test_fourth_order_nonlinearity_against_grid(plant):
    box = default_box()
    oracle = grid_oracle(plant.f, box, 10)
    est = estimate_gamma(plant.f, box, budget=10_000, jac=plant.jac_f)
    # refinement may beat a finite grid, never fall far below it
    assert est.gamma >= oracle * (1 - 1e-6)
    assert est.gamma <= oracle * 1.02


def test_nested_box_is_monotone(plant):
    box = default_box()
    big = estimate_gamma(plant.f, box, budget=2000, jac=plant.jac_f).gamma
    small = estimate_gamma(plant.f, box.shrink(0.5), budget=2000, jac=plant.jac_f).gamma
    assert small <= big * (1 + 1e-9)


def test_budget_is_monotone(plant):
    box = default_box()
    vals = [estimate_gamma(plant.h, box, budget=b, jac=plant.jac_h, seed=1).gamma
            for b in (1000, 2000, 4000)]
    assert vals[0] <= vals[1] <= vals[2]


def test_difference_quotients_stay_below_estimate(plant):
    box = default_box()
    gamma = estimate_gamma(plant.f, box, budget=4000, jac=plant.jac_f).gamma
    rng = np.random.default_rng(11)
    x1 = rng.uniform(box.x_min, box.x_max, (5000, 4))
    x2 = rng.uniform(box.x_min, box.x_max, (5000, 4))
    u = rng.uniform(box.u_min, box.u_max, (5000, 2))
    q = np.linalg.norm(plant.f(x1, u) - plant.f(x2, u), axis=1) / np.linalg.norm(x1 - x2, axis=1)
    assert np.max(q) <= 1.01 * gamma


def test_estimate_reports_a_point_in_the_box(plant):
    box = default_box()
    est = estimate_gamma(plant.h, box, budget=1000, jac=plant.jac_h)
    assert box.contains(est.arg_x, est.arg_u)
    assert est.n_samples == 1000
    assert est.gamma_safe == pytest.approx(1.05 * est.gamma)


def test_determinism(plant):
    a = estimate_gamma(plant.f, default_box(), budget=1000, jac=plant.jac_f, seed=5)
    b = estimate_gamma(plant.f, default_box(), budget=1000, jac=plant.jac_f, seed=5)
    assert a.gamma == b.gamma and np.array_equal(a.arg_x, b.arg_x)


def test_small_budget_rejected():
    with pytest.raises(ValueError):
        estimate_gamma(lambda x, u: x, UNIT, budget=999)
    with pytest.raises(ValueError):
        estimate_gamma(lambda x, u: x, UNIT, method="random")


def test_compose_output_constant():
    assert compose_gamma_l(0.0, np.zeros((2, 4))) == 0.0
    assert compose_gamma_l(2.0, np.array([[3.0, 4.0]])) == pytest.approx(7.0)
    with pytest.raises(ValueError):
        compose_gamma_l(-1.0, np.eye(2))


@given(st.floats(0, 10), st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_compose_is_triangle_bound(gh, c):
    C = np.array(c).reshape(2, 2)
    assert compose_gamma_l(gh, C) >= np.linalg.norm(C, 2) - 1e-12
    assert compose_gamma_l(gh, C) >= gh


def test_plant_gammas(nominal):
    plant, box = nominal
    gf, gl, (ef, eh) = plant_gammas(plant, box, budget=1000)
    assert gf == pytest.approx(ef.gamma_safe)
    assert gl == pytest.approx(eh.gamma_safe + np.linalg.norm(plant.C, 2))


def test_plant_gammas_needs_output_matrix(plant):
    with pytest.raises(ValueError, match="output matrix"):
        plant_gammas(plant, default_box(), budget=1000)
