import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linfdse.models import (OMEGA0, DerivedParams, MachineParams, MachineParams10,
                            OperatingBox, build_matrices, build_plant, build_plant_10th,
                            default_box, derive_params, equilibrium, equilibrium_10th, h_l,
                            h_output, is_detectable, linearize_output, parameterized_rhs,
                            raw_output, raw_rhs, rhs_10th)

MP = MachineParams()
DP = derive_params(MP)


def box_samples(n, seed=0, box=None):
    box = box or default_box()
    rng = np.random.default_rng(seed)
    x = rng.uniform(box.x_min, box.x_max, (n, 4))
    u = rng.uniform(box.u_min, box.u_max, (n, 2))
    q = rng.uniform([0.3, 1.0], [1.2, 2.5], (n, 2))
    return x, u, q


def fd_jac(fn, x, u, h=1e-6):
    cols = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h * max(1.0, abs(x[i]))
        cols.append((fn(x + e, u) - fn(x - e, u)) / (2 * e[i]))
    return np.stack(cols, axis=-1)


finite = st.floats(-3.0, 3.0, allow_nan=False)
state = st.tuples(finite, st.floats(OMEGA0 - 2, OMEGA0 + 2), finite, finite).map(np.array)
current = st.tuples(finite, finite).map(np.array)


class TestRawAndCoefficientForms:
    def test_rhs_equivalence_dense(self):
        x, u, q = box_samples(10_000)
        diff = np.abs(parameterized_rhs(x, u, q, DP) - raw_rhs(x, u, q, MP))
        scale = np.maximum(1.0, np.abs(raw_rhs(x, u, q, MP)))
        assert np.max(diff / scale) <= 1e-12

    def test_output_equivalence_dense(self):
        x, u, _ = box_samples(10_000, seed=1)
        assert np.max(np.abs(h_output(x, u, DP) - raw_output(x, u, MP))) <= 1e-12

    @given(state, current, st.tuples(finite, finite).map(np.array))
    def test_rhs_equivalence_anywhere(self, x, u, q):
        a, b = parameterized_rhs(x, u, q, DP), raw_rhs(x, u, q, MP)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-10)

    def test_equilibrium_by_construction(self):
        eq, ed = 0.9, 0.4
        x = np.array([0.0, OMEGA0, eq, ed])
        d = raw_rhs(x, np.zeros(2), np.array([0.0, eq]), MP)
        assert d[:3] == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)

    @given(state, current, st.tuples(finite, finite).map(np.array))
    def test_synchronous_speed_freezes_angle(self, x, u, q):
        x = x.copy()
        x[1] = OMEGA0
        assert raw_rhs(x, u, q, MP)[0] == 0.0

    def test_origin_value(self):
        got = parameterized_rhs(np.zeros(4), np.zeros(2), np.zeros(2), DP)
        expected = [-MP.omega0, MP.K_D * MP.omega0 / (2 * MP.H), 0.0, 0.0]
        assert got == pytest.approx(expected, rel=1e-14)

    def test_linear_part_extraction(self):
        plant = build_plant()
        A, B_w, _ = build_matrices(DP)
        x, u, q = box_samples(200, seed=3)
        u0 = np.zeros_like(u)
        rest = parameterized_rhs(x, u0, q, DP) - plant.f(x, u0) - q @ B_w.T
        assert np.allclose(rest, x @ A.T, atol=1e-9)

    def test_operating_point_is_steady(self):
        x, u, q = equilibrium(1.0, 1.1, 0.6, 0.79)
        assert np.max(np.abs(raw_rhs(x, u, q, MP))) < 1e-12
        assert q[0] == pytest.approx(0.79, rel=1e-12)


class TestOutput:
    def test_zero_current_at_zero_angle(self):
        y = h_output(np.array([0.0, OMEGA0, 0.7, 0.3]), np.zeros(2), DP)
        assert y == pytest.approx([0.7, -0.3], abs=1e-15)

    @given(state, current)
    def test_angle_periodicity(self, x, u):
        x2 = x.copy()
        x2[0] += 2 * math.pi
        assert np.allclose(h_output(x, u, DP), h_output(x2, u, DP), atol=1e-12)

    @given(state, current)
    def test_reconstruction_identity(self, x, u):
        C = linearize_output(default_box().x_mid, default_box().u_mid, DP)
        full = build_plant().h(x, u)
        assert np.allclose(C @ x + h_l(x, u, DP, C), full, rtol=0, atol=1e-13)

    def test_h_l_with_zero_matrix(self):
        x, u, _ = box_samples(50)
        assert np.array_equal(h_l(x, u, DP, np.zeros((2, 4))), build_plant().h(x, u))


class TestMatrices:
    @given(st.lists(st.floats(0.1, 50.0), min_size=12, max_size=12))
    def test_sparsity_pattern(self, vals):
        dp = DerivedParams(np.array(vals[:10]), np.array(vals[10:]))
        A, B_w, D_u = build_matrices(dp)
        expect_A = np.zeros((4, 4))
        expect_A[0, 1] = 1.0
        expect_A[1, 1], expect_A[2, 2], expect_A[3, 3] = -vals[4], -vals[6], -vals[8]
        assert np.array_equal(A, expect_A)
        expect_B = np.zeros((4, 2))
        expect_B[1, 0], expect_B[2, 1] = vals[1], vals[6]
        assert np.array_equal(B_w, expect_B)
        assert D_u[0, 3] == vals[11] and D_u[1, 2] == -vals[11]
        assert np.count_nonzero(D_u) == 2

    def test_damping_entry(self):
        alpha = DP.alpha.copy()
        alpha[4] = 2.0
        A, _, _ = build_matrices(DerivedParams(alpha, DP.beta))
        assert A[1, 1] == -2.0


class TestJacobians:
    def test_output_jacobian_matches_finite_differences(self):
        plant = build_plant()
        x, u, _ = box_samples(50, seed=5)
        for xi, ui in zip(x, u):
            fd = fd_jac(lambda a, b: plant.h(a, b), xi, ui)
            assert np.max(np.abs(plant.jac_h(xi, ui) - fd)) <= 1e-6

    def test_state_jacobian_matches_finite_differences(self):
        plant = build_plant()
        x, u, _ = box_samples(50, seed=6)
        for xi, ui in zip(x, u):
            fd = fd_jac(lambda a, b: plant.f(a, b), xi, ui)
            assert np.allclose(plant.jac_f(xi, ui), fd, rtol=1e-6, atol=1e-5)

    def test_speed_column_is_zero(self):
        x, u, _ = box_samples(100, seed=7)
        for xi, ui in zip(x, u):
            assert np.all(linearize_output(xi, ui, DP)[:, 1] == 0.0)

    def test_zero_scale(self):
        assert np.all(linearize_output(default_box().x_mid, default_box().u_mid, DP, 0.0) == 0)

    def test_single_point_paths_match_batches(self):
        plant = build_plant()
        x, u, _ = box_samples(64, seed=8)
        for fn in (plant.f, plant.h, plant.jac_f, plant.jac_h):
            batch = fn(x, u)
            single = np.array([fn(a, b) for a, b in zip(x, u)])
            assert np.allclose(batch, single, rtol=1e-15, atol=1e-15)


def test_default_configuration_is_detectable():
    box = default_box()
    C = linearize_output(box.x_mid, box.u_mid, DP)
    A, _, _ = build_matrices(DP)
    assert is_detectable(A, C)


def test_undetectable_pair_is_flagged():
    A = np.diag([1.0, -1.0])
    assert not is_detectable(A, np.array([[0.0, 1.0]]))
    assert is_detectable(A, np.array([[1.0, 0.0]]))


def test_degenerate_box_is_rejected():
    with pytest.raises(ValueError):
        OperatingBox([0, 0], [0, 1], [0], [1])


def test_machine_params_validation():
    with pytest.raises(ValueError):
        MachineParams(H=0.0)
    with pytest.raises(ValueError):
        MachineParams(x_dp=2.0)


class TestTenthOrder:
    def test_equilibrium_is_steady(self):
        p = MachineParams10()
        x, u, q = equilibrium_10th(1.0, 1.1, 0.6, 1.88, p)
        assert np.max(np.abs(rhs_10th(x, u, q, p))) < 1e-10

    def test_machine_states_nest_the_fourth_order_model(self):
        p = MachineParams10()
        rng = np.random.default_rng(2)
        x = np.concatenate([[1.0, OMEGA0 + 0.1, 1.0, 0.5], rng.uniform(0.5, 2.0, 6)])
        u = np.array([0.7, 0.1])
        T_m = x[9] + (p.T_4 / p.T_5) * (x[8] + (p.T_3 / p.T_c) * x[7])
        d = rhs_10th(x, u, np.array([0.8, 1.0]), p)
        assert np.allclose(d[:4], raw_rhs(x[:4], u, np.array([T_m, x[5]]), p.machine),
                           rtol=1e-14)

    def test_zero_gain_exciter_holds_field_voltage(self):
        p = MachineParams10(K_A=0.0, K_E=0.0)
        x = np.array([1.0, OMEGA0, 1.0, 0.5, 0.0, 1.7, 1.7, 0.8, 0.8, 0.8])
        assert rhs_10th(x, np.array([0.7, 0.1]), np.array([0.8, 1.0]), p)[5] == 0.0

    def test_split_form_reproduces_rhs(self):
        p = MachineParams10()
        plant = build_plant_10th(p)
        x, u, q = equilibrium_10th(1.0, 1.1, 0.6, 1.88, p)
        x = x + np.random.default_rng(4).normal(0, 0.01, 10)
        full = rhs_10th(x, u, q, p)
        assert np.allclose(plant.rhs(x, u, q), full, atol=1e-9)

    def test_jacobian_matches_finite_differences(self):
        p = MachineParams10()
        plant = build_plant_10th(p)
        x, u, _ = equilibrium_10th(1.0, 1.1, 0.6, 1.88, p)
        fd = fd_jac(lambda a, b: plant.f(a, b), x, u)
        assert np.allclose(plant.jac_f(x, u), fd, rtol=1e-5, atol=1e-5)
