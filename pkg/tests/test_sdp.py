import warnings

import numpy as np
import pytest

from linfdse.sdp import (INACCURATE, INFEASIBLE, OPTIMAL, DimensionMismatch, LmiBlock,
                         LmiBuilder, LmiProblem, VerificationFailed, bmat, solve, verify)


def scalar_problem(c, blocks, eq_A=None, eq_b=None):
    n = len(c)
    return LmiProblem(n, np.asarray(c, float), blocks,
                      np.zeros((0, n)) if eq_A is None else np.asarray(eq_A, float),
                      np.zeros(0) if eq_b is None else np.asarray(eq_b, float))


def test_two_by_two_minimum_eigen_bound():
    b = LmiBuilder()
    t = b.scalar("t")
    b.add_psd(bmat([[t, 1.0], [1.0, t]]))
    b.minimize(t)
    sol = solve(b.build())
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_scalar_lower_bound():
    # minimize x subject to 1 - x <= 0
    p = scalar_problem([1.0], [LmiBlock(np.array([[1.0]]), [0], np.array([[[-1.0]]]))])
    sol = solve(p)
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.dual_obj == pytest.approx(1.0, abs=1e-6)


def test_empty_sandwich_is_infeasible():
    lo = LmiBlock(np.array([[2.0]]), [0], np.array([[[-1.0]]]))   # x >= 2
    hi = LmiBlock(np.array([[-1.0]]), [0], np.array([[[1.0]]]))   # x <= 1
    assert solve(scalar_problem([1.0], [lo, hi])).status == INFEASIBLE


def test_inconsistent_equalities_are_infeasible():
    blk = LmiBlock(np.array([[-1.0]]), [0], np.array([[[1.0]]]))
    p = scalar_problem([0.0, 1.0], [blk], eq_A=[[1.0, 1.0], [1.0, 1.0]], eq_b=[0.0, 1.0])
    assert solve(p).status == INFEASIBLE


def test_equality_constraint_is_met():
    b = LmiBuilder()
    x, y = b.scalar("x"), b.scalar("y")
    b.add_psd(bmat([[x, 0.5], [0.5, y]]))
    b.add_eq(x + y, 2.0)
    b.minimize(x - y)
    sol = solve(b.build())
    # boundary xy = 1/4 with x + y = 2: x = 1 - sqrt(3)/2
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1 - np.sqrt(3) / 2, abs=1e-6)
    assert abs(sol.x.sum() - 2.0) <= 1e-8


def random_two_var_problem(rng):
    """3x3 LMI in two variables with a strictly feasible point and a bounded set."""
    F = rng.normal(size=(2, 3, 3))
    F = (F + F.transpose(0, 2, 1)) / 2
    x0 = rng.uniform(-0.5, 0.5, 2)
    S = rng.normal(size=(3, 3))
    F0 = -(S @ S.T + 0.5 * np.eye(3)) - np.tensordot(x0, F, 1)
    # box |x_i| <= 2 keeps the objective bounded
    box = [LmiBlock(np.array([[-2.0]]), [i], np.array([[[s]]]))
           for i in range(2) for s in (1.0, -1.0)]
    return scalar_problem(rng.normal(size=2), [LmiBlock(F0, [0, 1], F)] + box)


@pytest.mark.parametrize("seed", range(8))
def test_random_small_problems_against_grid(seed):
    p = random_two_var_problem(np.random.default_rng(seed))
    sol = solve(p)
    assert sol.status == OPTIMAL
    verify(p, sol)
    g = np.linspace(-2.0, 2.0, 401)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    blk = p.blocks[0]
    M = blk.F0 + np.einsum("ni,ijl->njl", X, blk.F)
    feas = np.linalg.eigvalsh(M)[:, -1] <= 0
    best = float(np.min(X[feas] @ p.objective))
    # no feasible grid point beats the solver, and the grid gets close
    assert sol.primal_obj <= best + 1e-8
    assert sol.primal_obj >= best - 0.02 * np.abs(p.objective).sum()


def test_matches_reference_solver():
    pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers
    solvers.options.update(show_progress=False, abstol=1e-10, reltol=1e-10, feastol=1e-10)
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(40):
        n, nb = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        x0 = rng.normal(size=n)
        blocks, zs = [], []
        for _k in range(nb):
            m = int(rng.integers(1, 5))
            F = rng.normal(size=(n, m, m))
            F = (F + F.transpose(0, 2, 1)) / 2
            S = rng.normal(size=(m, m))
            blocks.append(LmiBlock(-S @ S.T - 0.1 * np.eye(m) - np.tensordot(x0, F, 1),
                                   np.arange(n), F))
            Z = rng.normal(size=(m, m))
            zs.append(Z @ Z.T + 0.1 * np.eye(m))
        # dual-feasible objective keeps the problem bounded
        c = -sum(np.einsum("kij,ij->k", b.F, Z) for b, Z in zip(blocks, zs))
        p = scalar_problem(c, blocks)
        G = np.vstack([b.F.reshape(n, -1).T for b in blocks])
        if np.linalg.matrix_rank(G) < n:
            continue
        h = np.concatenate([-b.F0.ravel() for b in blocks])
        try:
            ref = solvers.conelp(matrix(c), matrix(G), matrix(h),
                                 {"l": 0, "q": [], "s": [b.size for b in blocks]})
        except ArithmeticError:
            # the reference occasionally breaks down on its own scaling
            continue
        if ref["status"] != "optimal":
            continue
        sol = solve(p)
        assert sol.status == OPTIMAL
        assert sol.primal_obj == pytest.approx(ref["primal objective"], abs=1e-6, rel=1e-6)
        checked += 1
    assert checked >= 20


def test_verify_accepts_and_rejects():
    p = scalar_problem([1.0], [LmiBlock(np.array([[1.0]]), [0], np.array([[[-1.0]]]))])
    sol = solve(p)
    rep = verify(p, sol)
    assert rep.passed and rep.max_residual <= 1e-7
    sol.x = sol.x - 1e-2
    with pytest.raises(VerificationFailed):
        verify(p, sol)
    assert not verify(p, sol, raise_on_fail=False).passed


class TestBuilder:
    def test_strict_positive_definite_variable(self):
        b = LmiBuilder(eps=1e-6)
        P = b.sym("P", 2)
        b.add_psd(P, "P", strict=True)
        p = b.build()
        assert p.n_vars == 3 and len(p.blocks) == 1
        # P >= eps I is stored as -P + eps I <= 0
        assert np.array_equal(p.blocks[0].F0, 1e-6 * np.eye(2))
        assert np.array_equal(p.blocks[0].F[0], -np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_unpack_shapes(self):
        b = LmiBuilder()
        P, L = b.sym("P", 3), b.mat("L", 3, 2)
        b.add_psd(P)
        x = np.arange(b.n, dtype=float)
        prob = b.build()
        assert prob.unpack(x, "P").shape == (3, 3)
        assert np.array_equal(prob.unpack(x, "P"), prob.unpack(x, "P").T)
        assert np.array_equal(prob.unpack(x, "L"), x[6:].reshape(3, 2))
        assert np.array_equal(L.value(x), prob.unpack(x, "L"))

    def test_rejects_bad_constraints(self):
        b = LmiBuilder()
        with pytest.raises(ValueError):
            b.build()
        M = b.mat("M", 2, 2)
        with pytest.raises(ValueError):
            b.add_nsd(M)
        with pytest.raises(DimensionMismatch):
            b.add_nsd(b.mat("R", 2, 3))
        with pytest.raises(ValueError):
            b.scalar("M")

    def test_congruence_preserves_the_optimum(self):
        def problem(T):
            b = LmiBuilder()
            P = b.sym("P", 2)
            A = np.array([[-1.0, 2.0], [0.0, -3.0]])
            b.add_nsd(T.T @ (A.T @ P + P @ A + np.eye(2)) @ T)
            b.add_psd(T.T @ P @ T)
            b.minimize(P[0:1, 0:1] + P[1:2, 1:2])
            return solve(b.build())
        a = problem(np.eye(2))
        c = problem(np.array([[2.0, 1.0], [0.0, 0.5]]))
        assert a.status == c.status == OPTIMAL
        assert a.primal_obj == pytest.approx(c.primal_obj, rel=1e-6)


def test_objective_scaling():
    p = random_two_var_problem(np.random.default_rng(3))
    a = solve(p)
    q = scalar_problem(10.0 * p.objective, p.blocks)
    b = solve(q)
    assert b.primal_obj == pytest.approx(10 * a.primal_obj, rel=1e-6, abs=1e-7)
    assert np.allclose(a.x, b.x, atol=1e-4)


def test_determinism_and_json_roundtrip():
    p = random_two_var_problem(np.random.default_rng(5))
    q = LmiProblem.from_json(p.to_json())
    assert q.n_vars == p.n_vars and np.array_equal(q.objective, p.objective)
    for bp, bq in zip(p.blocks, q.blocks):
        assert np.array_equal(bp.F0, bq.F0) and np.array_equal(bp.F, bq.F)
    a, b = solve(p), solve(q)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_inaccurate_status_is_not_ok():
    from linfdse.sdp import SdpSolution
    s = SdpSolution(np.zeros(1), INACCURATE, 0.0, 0.0, 0.0, 0.0, 1)
    assert not s.ok


def test_no_warnings_on_well_posed_problem():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve(random_two_var_problem(np.random.default_rng(1)))
