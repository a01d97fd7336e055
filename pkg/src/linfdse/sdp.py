"""Dense primal-dual interior-point solver for small linear SDPs.

Problems are posed in inequality form

    minimize    c^T x
    subject to  F0_k + sum_i x_i F_ik  <=  0      (negative semidefinite, per block k)
                E x = g

and solved through the conic pair ``G x + s = h, s >= 0`` with ``G_i = F_i``
and ``h = -F0``.  The dual is ``max -<h, z> - g^T y`` subject to
``G^T z + E^T y + c = 0, z >= 0``.

Affine matrix expressions (:class:`Affine`) and :class:`LmiBuilder` turn
matrix-valued decision variables into this flat form.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAX_ITER = "MaxIter"
NUMERICAL_FAILURE = "NumericalFailure"
# strictly feasible point whose optimality residuals stalled within 100x
# tolerance; usable as a certificate, not as a proven optimum
INACCURATE = "OptimalInaccurate"
INACCURATE_FACTOR = 100.0

DEFAULT_EPS = 1e-6


class DimensionMismatch(ValueError):
    pass


class VerificationFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# problem data


@dataclass
class LmiBlock:
    """One constraint ``F0 + sum_j x[idx[j]] * F[j] <= 0``.

    Only variables that actually appear in the block are stored.
    """

    F0: np.ndarray
    idx: np.ndarray
    F: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.F0 = np.atleast_2d(np.asarray(self.F0, float))
        self.idx = np.asarray(self.idx, dtype=int).reshape(-1)
        m = self.F0.shape[0]
        self.F = np.asarray(self.F, float).reshape(len(self.idx), m, m)
        if self.F0.shape != (m, m) or m < 1:
            raise DimensionMismatch("block constant must be square and nonempty")
        if not np.allclose(self.F0, self.F0.T, atol=1e-12 * (1 + np.abs(self.F0).max())):
            raise ValueError(f"block {self.name!r}: F0 is not symmetric")
        if len(self.idx) and not np.allclose(self.F, self.F.transpose(0, 2, 1),
                                             atol=1e-12 * (1 + np.abs(self.F).max())):
            raise ValueError(f"block {self.name!r}: coefficient matrix is not symmetric")
        if len(set(self.idx.tolist())) != len(self.idx):
            raise ValueError("duplicate variable index within a block")

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, x) -> np.ndarray:
        """F(x) for the full decision vector ``x``."""
        x = np.asarray(x, float)
        if len(self.idx) == 0:
            return self.F0.copy()
        return self.F0 + np.tensordot(x[self.idx], self.F, axes=1)


@dataclass
class LmiProblem:
    """Linear objective, block LMIs ``F(x) <= 0`` and equalities ``E x = g``.

    ``var_map`` maps names to ``(start, stop, kind, shape)`` with kind one of
    ``"sym"`` (upper triangle, row major), ``"mat"`` (row major) or
    ``"scalar"``.
    """

    n_vars: int
    objective: np.ndarray
    blocks: List[LmiBlock]
    eq_A: np.ndarray = None
    eq_b: np.ndarray = None
    var_map: Dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, float).reshape(-1)
        if len(self.objective) != self.n_vars:
            raise DimensionMismatch("objective length differs from n_vars")
        if not self.blocks:
            raise ValueError("problem has no LMI blocks")
        for b in self.blocks:
            if len(b.idx) and (b.idx.min() < 0 or b.idx.max() >= self.n_vars):
                raise DimensionMismatch(f"block {b.name!r} references unknown variables")
        if self.eq_A is None:
            self.eq_A = np.zeros((0, self.n_vars))
            self.eq_b = np.zeros(0)
        self.eq_A = np.atleast_2d(np.asarray(self.eq_A, float)).reshape(-1, self.n_vars)
        self.eq_b = np.asarray(self.eq_b, float).reshape(-1)
        if len(self.eq_b) != self.eq_A.shape[0]:
            raise DimensionMismatch("equality rows and right-hand side differ")
        if self.var_map:
            covered = np.zeros(self.n_vars, int)
            for name, (a, b, *_rest) in self.var_map.items():
                covered[a:b] += 1
            if np.any(covered != 1):
                raise ValueError("var_map ranges must be disjoint and cover all variables")

    def unpack(self, x, name):
        """Recover the named variable from a decision vector."""
        a, b, kind, shape = self.var_map[name]
        v = np.asarray(x, float)[a:b]
        if kind == "scalar":
            return float(v[0])
        if kind == "mat":
            return v.reshape(shape)
        n = shape[0]
        M = np.zeros((n, n))
        M[np.triu_indices(n)] = v
        return M + np.triu(M, 1).T

    def to_json(self, path=None) -> str:
        """Serialize to the schema documented in the README (matrices row major)."""
        doc = {
            "schema_version": 1,
            "convention": "F0 + sum_i x_i F_i <= 0 (negative semidefinite)",
            "n_vars": self.n_vars,
            "objective": self.objective.tolist(),
            "blocks": [{"name": b.name, "F0": b.F0.tolist(), "vars": b.idx.tolist(),
                        "F": b.F.tolist()} for b in self.blocks],
            "eq_A": self.eq_A.tolist(),
            "eq_b": self.eq_b.tolist(),
            "var_map": {k: [v[0], v[1], v[2], list(v[3])] for k, v in self.var_map.items()},
        }
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text) -> "LmiProblem":
        d = json.loads(text)
        blocks = [LmiBlock(np.array(b["F0"]), b["vars"],
                           np.array(b["F"]).reshape(len(b["vars"]), len(b["F0"]), len(b["F0"])),
                           b["name"]) for b in d["blocks"]]
        vm = {k: (v[0], v[1], v[2], tuple(v[3])) for k, v in d["var_map"].items()}
        n = d["n_vars"]
        return cls(n, np.array(d["objective"]), blocks,
                   np.array(d["eq_A"]).reshape(-1, n), np.array(d["eq_b"]), vm)


@dataclass
class SdpSolution:
    x: np.ndarray
    status: str
    primal_obj: float
    dual_obj: float
    max_residual: float
    eq_residual: float
    iterations: int
    z: Optional[List[np.ndarray]] = None
    y: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ResidualReport:
    block_max_eig: List[float]
    max_residual: float
    eq_residual: float
    passed: bool


def verify(p: LmiProblem, sol: SdpSolution, feas_tol=1e-8, factor=10.0,
           raise_on_fail=True) -> ResidualReport:
    """Recompute the largest eigenvalue of every block and the equality residual.

    Works from ``sol.x`` only, so it is independent of the solver's internal
    slack variables.
    """
    eigs = [float(np.linalg.eigvalsh(b.evaluate(sol.x)).max()) for b in p.blocks]
    eq = float(np.abs(p.eq_A @ sol.x - p.eq_b).max()) if len(p.eq_b) else 0.0
    worst = max(eigs)
    passed = worst <= factor * feas_tol and eq <= factor * feas_tol
    rep = ResidualReport(eigs, worst, eq, passed)
    if raise_on_fail and not passed:
        raise VerificationFailed(
            f"LMI residual {worst:.3e} / equality residual {eq:.3e} exceed "
            f"{factor}x tolerance {feas_tol:.1e}")
    return rep


# ---------------------------------------------------------------------------
# interior-point method


def _block_norm2(mats):
    return np.sqrt(sum(float(np.sum(M * M)) for M in mats))


def _is_pd(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


def _max_step(L_inv, dM):
    """Largest a in (0, inf] with I + a * L^-1 dM L^-T >= 0."""
    W = L_inv @ dM @ L_inv.T
    lam = np.linalg.eigvalsh((W + W.T) / 2).min()
    return np.inf if lam >= 0 else -1.0 / lam


class _Ipm:
    """Mehrotra predictor-corrector on dense blocks plus a vectorised LP part.

    Blocks of size one are gathered into a nonnegative-orthant cone so the
    many scalar sign and bound constraints of the synthesis programs cost a
    vector operation instead of one dense factorisation each.
    """

    def __init__(self, p: LmiProblem, feas_tol, gap_tol, max_iter, dual_tol=1e-7):
        self.p = p
        self.n = n = p.n_vars
        self.feas_tol = feas_tol
        self.dual_tol = dual_tol
        self.gap_tol = gap_tol
        self.max_iter = max_iter
        self.mblocks = [b for b in p.blocks if b.size > 1]
        scal = [b for b in p.blocks if b.size == 1]
        self.Gl = np.zeros((len(scal), n))
        self.hl = np.zeros(len(scal))
        for r, b in enumerate(scal):
            if len(b.idx):
                self.Gl[r, b.idx] = b.F[:, 0, 0]
            self.hl[r] = -b.F0[0, 0]
        self.h = [-b.F0 for b in self.mblocks]
        self.m = sum(b.size for b in self.mblocks) + len(scal)
        self.c = p.objective
        self.A = p.eq_A
        self.b = p.eq_b
        self.n_eq = len(self.b)

    # cone algebra ---------------------------------------------------------
    def G(self, x):
        mats = [np.tensordot(x[b.idx], b.F, axes=1) if len(b.idx) else np.zeros((b.size, b.size))
                for b in self.mblocks]
        return mats, self.Gl @ x

    def GT(self, zs, zl):
        g = self.Gl.T @ zl
        for b, Z in zip(self.mblocks, zs):
            if len(b.idx):
                g[b.idx] += np.einsum("kij,ij->k", b.F, Z)
        return g

    @staticmethod
    def inner(S, sl, Z, zl):
        return sum(float(np.sum(a * b)) for a, b in zip(S, Z)) + float(sl @ zl)

    def _kkt_solve(self, H, rhs_x, rhs_y):
        n, q = self.n, self.n_eq
        K = np.zeros((n + q, n + q))
        K[:n, :n] = H
        K[:n, n:] = self.A.T
        K[n:, :n] = self.A
        rhs = np.concatenate([rhs_x, rhs_y])
        scale = np.sqrt(np.maximum(np.abs(np.diag(K)), 1e-300))
        scale[n:] = 1.0
        Ks = K / scale[:, None] / scale[None, :]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            try:
                sol = sla.solve(Ks, rhs / scale, assume_a="sym", check_finite=False)
                res = rhs / scale - Ks @ sol
                sol = sol + sla.solve(Ks, res, assume_a="sym", check_finite=False)
            except (sla.LinAlgError, ValueError):
                sol = np.linalg.lstsq(Ks, rhs / scale, rcond=None)[0]
        sol = sol / scale
        return sol[:n], sol[n:]

    def _initial_point(self):
        n = self.n
        H = self.Gl.T @ self.Gl
        for b in self.mblocks:
            if len(b.idx):
                Fv = b.F.reshape(len(b.idx), -1)
                H[np.ix_(b.idx, b.idx)] += Fv @ Fv.T
        Hr = H + 1e-10 * max(1.0, np.trace(H) / max(n, 1)) * np.eye(n)
        x, _ = self._kkt_solve(Hr, self.GT(self.h, self.hl), self.b)
        Gx, Gxl = self.G(x)
        S = [hk - g for hk, g in zip(self.h, Gx)]
        sl = self.hl - Gxl
        lam, _ = self._kkt_solve(Hr, -self.c, np.zeros(self.n_eq))
        Z, zl = self.G(lam)
        return x, self._push(S), self._push_vec(sl), self._push(Z), self._push_vec(zl), np.zeros(self.n_eq)

    @staticmethod
    def _push(mats):
        out = []
        for M in mats:
            M = (M + M.T) / 2
            lmin = np.linalg.eigvalsh(M).min()
            nrm = max(1.0, np.linalg.norm(M, 2))
            if lmin < 1e-2 * nrm:
                M = M + (1e-2 * nrm - lmin + 1.0) * np.eye(len(M))
            out.append(M)
        return out

    @staticmethod
    def _push_vec(v):
        if len(v) == 0:
            return v.copy()
        nrm = max(1.0, np.abs(v).max())
        if v.min() < 1e-2 * nrm:
            v = v + (1e-2 * nrm - v.min() + 1.0)
        return v

    def _lam_max_F(self, x):
        vals = [float(np.linalg.eigvalsh(b.evaluate(x)).max()) for b in self.p.blocks if b.size > 1]
        if len(self.hl):
            vals.append(float((self.Gl @ x - self.hl).max()))
        return max(vals)

    # main loop ------------------------------------------------------------
    def run(self) -> SdpSolution:
        x, S, sl, Z, zl, y = self._initial_point()
        self.history = []
        best = None
        nh = max(1.0, np.sqrt(_block_norm2(self.h) ** 2 + float(self.hl @ self.hl)))
        nc = max(1.0, np.linalg.norm(self.c))
        status = MAX_ITER
        it = 0
        for it in range(self.max_iter + 1):
            Gx, Gxl = self.G(x)
            rz = [g + s - hk for g, s, hk in zip(Gx, S, self.h)]
            rzl = Gxl + sl - self.hl
            ry = self.A @ x - self.b
            rx = self.c + self.GT(Z, zl) + self.A.T @ y
            gap = self.inner(S, sl, Z, zl)
            mu = gap / self.m
            pobj = float(self.c @ x)
            hz = self.inner(self.h, self.hl, Z, zl)
            dobj = -hz - float(self.b @ y)
            lam_F = self._lam_max_F(x)
            eq_abs = float(np.abs(ry).max()) if self.n_eq else 0.0
            dres = np.linalg.norm(rx)
            rel_gap = max(gap, abs(pobj - dobj)) / max(1.0, abs(pobj), abs(dobj))
            self.history.append((lam_F, eq_abs, dres / nc, rel_gap, mu))
            if lam_F <= self.feas_tol and eq_abs <= self.feas_tol:
                score = max(rel_gap / self.gap_tol, dres / nc / self.dual_tol)
                if best is None or score < best[0]:
                    best = (score, it, x, Z, zl, y)
            if (lam_F <= self.feas_tol and eq_abs <= self.feas_tol
                    and dres / nc <= self.dual_tol and rel_gap <= self.gap_tol):
                status = OPTIMAL
                break
            # certificates of infeasibility / unboundedness
            dual_val = -hz - float(self.b @ y)
            if dual_val > 0:
                cert = np.linalg.norm(self.GT(Z, zl) + self.A.T @ y) / dual_val
                if cert * nh <= self.feas_tol and dual_val > 1e4 * max(1.0, abs(pobj)):
                    status = INFEASIBLE
                    break
            if pobj < 0:
                cp = np.sqrt(_block_norm2([g + s for g, s in zip(Gx, S)]) ** 2
                             + float(np.sum((Gxl + sl) ** 2)))
                if self.n_eq:
                    cp = max(cp, np.linalg.norm(self.A @ x))
                if cp / -pobj * nc <= self.feas_tol and -pobj > 1e4 * max(1.0, abs(dobj)):
                    status = UNBOUNDED
                    break
            if it == self.max_iter:
                break
            try:
                x, S, sl, Z, zl, y = self._step(x, S, sl, Z, zl, y, rx, ry, rz, rzl, mu)
            except (np.linalg.LinAlgError, ValueError):
                status = NUMERICAL_FAILURE
                break
            if not (np.all(np.isfinite(x)) and np.isfinite(mu)):
                status = NUMERICAL_FAILURE
                break
        if (status in (MAX_ITER, NUMERICAL_FAILURE) and best is not None
                and best[0] <= INACCURATE_FACTOR):
            status = INACCURATE
            _, it, x, Z, zl, y = best
        lam_F = max(float(np.linalg.eigvalsh(b.evaluate(x)).max()) for b in self.p.blocks)
        eq_abs = float(np.abs(self.A @ x - self.b).max()) if self.n_eq else 0.0
        dobj = -self.inner(self.h, self.hl, Z, zl) - float(self.b @ y)
        zs = iter(Z)
        zli = iter(zl)
        z_all = [next(zs) if b.size > 1 else np.array([[next(zli)]]) for b in self.p.blocks]
        return SdpSolution(x, status, float(self.c @ x), dobj, lam_F, eq_abs, it, z_all, y)

    def _step(self, x, S, sl, Z, zl, y, rx, ry, rz, rzl, mu):
        blocks = self.mblocks
        n = self.n
        Rs, Rinv, lams = [], [], []
        for s, z in zip(S, Z):
            Ls = np.linalg.cholesky(s)
            Lz = np.linalg.cholesky(z)
            _, lam, Vt = np.linalg.svd(Lz.T @ Ls)
            R = Ls @ Vt.T / np.sqrt(lam)
            Rs.append(R)
            Rinv.append(np.linalg.inv(R))
            lams.append(lam)
        if np.any(sl <= 0) or np.any(zl <= 0):
            raise ValueError("iterate left the cone")
        # LP part: R = (s/z)^(1/4), lam = sqrt(s z), scaled G = G * sqrt(z/s)
        dl = np.sqrt(zl / sl)
        laml = np.sqrt(sl * zl)
        Ghl = self.Gl * dl[:, None]
        H = Ghl.T @ Ghl
        Ghat = []
        for b, Ri in zip(blocks, Rinv):
            if len(b.idx):
                Gh = np.einsum("ab,kbc,dc->kad", Ri, b.F, Ri, optimize=True)
                Gv = Gh.reshape(len(b.idx), -1)
                H[np.ix_(b.idx, b.idx)] += Gv @ Gv.T
            else:
                Gh = np.zeros((0, b.size, b.size))
            Ghat.append(Gh)
        rz_hat = [Ri @ r @ Ri.T for Ri, r in zip(Rinv, rz)]
        rzl_hat = rzl * dl

        def solve_dir(Dt, Dl):
            g = Ghl.T @ (rzl_hat + Dl)
            for b, Gh, r, D in zip(blocks, Ghat, rz_hat, Dt):
                if len(b.idx):
                    g[b.idx] += np.einsum("kij,ij->k", Gh, r + D)
            dx, dy = self._kkt_solve(H, -rx - g, -ry)
            dzt = [(np.tensordot(dx[b.idx], Gh, axes=1) if len(b.idx) else 0.0) + r + D
                   for b, Gh, r, D in zip(blocks, Ghat, rz_hat, Dt)]
            dst = [D - d for D, d in zip(Dt, dzt)]
            dzl = Ghl @ dx + rzl_hat + Dl
            dsl = Dl - dzl
            return dx, dy, dst, dzt, dsl, dzl

        def step_len(dst, dzt, dsl, dzl):
            a = np.inf
            for lam, ds_, dz_ in zip(lams, dst, dzt):
                Li = np.diag(1.0 / np.sqrt(lam))
                a = min(a, _max_step(Li, ds_), _max_step(Li, dz_))
            for d in (dsl, dzl):
                neg = d < 0
                if np.any(neg):
                    a = min(a, float(np.min(-laml[neg] / d[neg])))
            return a

        # predictor
        dx, dy, dst_a, dzt_a, dsl_a, dzl_a = solve_dir([-np.diag(l) for l in lams], -laml)
        a_aff = min(1.0, step_len(dst_a, dzt_a, dsl_a, dzl_a))
        mu_aff = (sum(float(np.sum((np.diag(l) + a_aff * ds_) * (np.diag(l) + a_aff * dz_)))
                      for l, ds_, dz_ in zip(lams, dst_a, dzt_a))
                  + float((laml + a_aff * dsl_a) @ (laml + a_aff * dzl_a))) / self.m
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        # corrector
        Dt = []
        for lam, ds_, dz_ in zip(lams, dst_a, dzt_a):
            P = ds_ @ dz_
            rc = -np.diag(lam ** 2) + sigma * mu * np.eye(len(lam)) - (P + P.T) / 2
            Dt.append(2.0 * rc / (lam[:, None] + lam[None, :]))
        Dl = (-laml ** 2 + sigma * mu - dsl_a * dzl_a) / laml
        dx, dy, dst, dzt, dsl, dzl = solve_dir(Dt, Dl)
        alpha = min(1.0, 0.99 * step_len(dst, dzt, dsl, dzl))
        dS = [R @ ds_ @ R.T for R, ds_ in zip(Rs, dst)]
        dZ = [Ri.T @ dz_ @ Ri for Ri, dz_ in zip(Rinv, dzt)]
        # LP: unscale with R^2 = sqrt(s/z)
        dsl_u, dzl_u = dsl / dl, dzl * dl
        # the step is exact in scaled coordinates; unscaling can cost a few
        # digits near the boundary, so back off until every block factors
        for _ in range(60):
            S_new = [(s + alpha * d + (s + alpha * d).T) / 2 for s, d in zip(S, dS)]
            Z_new = [(z + alpha * d + (z + alpha * d).T) / 2 for z, d in zip(Z, dZ)]
            sl_new = sl + alpha * dsl_u
            zl_new = zl + alpha * dzl_u
            if (np.all(sl_new > 0) and np.all(zl_new > 0)
                    and all(_is_pd(M) for M in S_new) and all(_is_pd(M) for M in Z_new)):
                break
            alpha *= 0.7
        else:
            raise np.linalg.LinAlgError("no positive definite step found")
        return x + alpha * dx, S_new, sl_new, Z_new, zl_new, y + alpha * dy


def _phase_one(p: LmiProblem, feas_tol, gap_tol, max_iter, dual_tol=1e-7) -> SdpSolution:
    """min t s.t. F_k(x) <= t I, E x = g, t >= -1."""
    n = p.n_vars
    blocks = []
    for b in p.blocks:
        idx = np.concatenate([b.idx, [n]])
        F = np.concatenate([b.F, -np.eye(b.size)[None]], axis=0)
        blocks.append(LmiBlock(b.F0, idx, F, b.name))
    blocks.append(LmiBlock(np.array([[-1.0]]), [n], np.array([[[-1.0]]]), "t_floor"))
    c = np.zeros(n + 1)
    c[n] = 1.0
    A = np.hstack([p.eq_A, np.zeros((p.eq_A.shape[0], 1))])
    q = LmiProblem(n + 1, c, blocks, A, p.eq_b)
    return _Ipm(q, feas_tol, gap_tol, max_iter, dual_tol).run()


def solve(p: LmiProblem, feas_tol=1e-8, gap_tol=1e-7, max_iter=200,
          dual_tol=1e-7) -> SdpSolution:
    """Solve ``p`` with a Nesterov-Todd scaled Mehrotra predictor-corrector method.

    Returns ``status == "Optimal"`` only if the largest eigenvalue of every
    block at ``x`` is at most ``feas_tol``, the equality residual is at most
    ``feas_tol``, the dual residual relative to ``max(1, ||c||)`` is at most
    ``dual_tol`` and the relative duality gap is at most ``gap_tol``.  When
    the main run fails to converge, a phase-one problem decides whether the
    constraints are infeasible.
    """
    if p.eq_A.shape[0]:
        # inconsistent equalities are infeasible outright
        xe = np.linalg.lstsq(p.eq_A, p.eq_b, rcond=None)[0]
        if np.abs(p.eq_A @ xe - p.eq_b).max() > 1e3 * feas_tol * max(1.0, np.abs(p.eq_b).max()):
            return SdpSolution(xe, INFEASIBLE, np.nan, np.nan, np.nan,
                               float(np.abs(p.eq_A @ xe - p.eq_b).max()), 0)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            sol = _Ipm(p, feas_tol, gap_tol, max_iter, dual_tol).run()
        except FloatingPointError:
            sol = SdpSolution(np.zeros(p.n_vars), NUMERICAL_FAILURE, np.nan, np.nan,
                              np.inf, np.inf, 0)
    if sol.status in (MAX_ITER, NUMERICAL_FAILURE):
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                ph = _phase_one(p, feas_tol, gap_tol, max_iter, dual_tol)
        except FloatingPointError:
            return sol
        if ph.status == OPTIMAL and ph.primal_obj > 10 * feas_tol:
            sol.status = INFEASIBLE
    return sol


# ---------------------------------------------------------------------------
# affine matrix expressions and the builder


class Affine:
    """Matrix-valued affine function of the decision vector.

    ``const + sum_k x[k] * coef[k]``; supports +, -, scaling, products with
    constant matrices, transposition and block assembly via :func:`bmat`.
    """

    __array_ufunc__ = None

    def __init__(self, const, coef=None):
        self.const = np.atleast_2d(np.asarray(const, float))
        self.coef: Dict[int, np.ndarray] = dict(coef or {})

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self):
        return Affine(self.const.T, {k: v.T for k, v in self.coef.items()})

    @staticmethod
    def lift(other, shape=None):
        if isinstance(other, Affine):
            return other
        arr = np.atleast_2d(np.asarray(other, float))
        if shape is not None and arr.shape == (1, 1) and shape != (1, 1):
            arr = np.full(shape, arr[0, 0])
        return Affine(arr)

    def __add__(self, other):
        o = Affine.lift(other, self.shape)
        if o.shape != self.shape:
            raise DimensionMismatch(f"cannot add {self.shape} and {o.shape}")
        coef = dict(self.coef)
        for k, v in o.coef.items():
            coef[k] = coef[k] + v if k in coef else v
        return Affine(self.const + o.const, coef)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, {k: -v for k, v in self.coef.items()})

    def __sub__(self, other):
        return self + (-Affine.lift(other, self.shape))

    def __rsub__(self, other):
        return Affine.lift(other, self.shape) - self

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        arr = np.asarray(other, float)
        if arr.ndim == 0:
            return Affine(self.const * arr, {k: v * arr for k, v in self.coef.items()})
        if self.shape == (1, 1):
            arr = np.atleast_2d(arr)
            return Affine(self.const[0, 0] * arr, {k: v[0, 0] * arr for k, v in self.coef.items()})
        raise DimensionMismatch("elementwise products are only defined with scalars")

    __rmul__ = __mul__

    def __matmul__(self, M):
        M = np.atleast_2d(np.asarray(M, float))
        if self.shape[1] != M.shape[0]:
            raise DimensionMismatch(f"cannot multiply {self.shape} by {M.shape}")
        return Affine(self.const @ M, {k: v @ M for k, v in self.coef.items()})

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, float))
        if M.shape[1] != self.shape[0]:
            raise DimensionMismatch(f"cannot multiply {M.shape} by {self.shape}")
        return Affine(M @ self.const, {k: M @ v for k, v in self.coef.items()})

    def __getitem__(self, key):
        c = np.atleast_2d(self.const[key])
        return Affine(c, {k: np.atleast_2d(v[key]).reshape(c.shape) for k, v in self.coef.items()})

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        out = self.const.copy()
        for k, v in self.coef.items():
            out = out + x[k] * v
        return out


def bmat(rows: Sequence[Sequence]) -> Affine:
    """Assemble a block matrix from Affine / array / None (zero) entries."""
    nr, nc = len(rows), len(rows[0])
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(rows):
        if len(row) != nc:
            raise DimensionMismatch("ragged block rows")
        for j, blk in enumerate(row):
            if blk is None:
                continue
            sh = blk.shape if isinstance(blk, Affine) else np.atleast_2d(blk).shape
            for lst, k, v in ((heights, i, sh[0]), (widths, j, sh[1])):
                if lst[k] is None:
                    lst[k] = v
                elif lst[k] != v:
                    raise DimensionMismatch(f"block ({i},{j}) has shape {sh}")
    if None in heights or None in widths:
        raise DimensionMismatch("every block row and column needs one sized entry")
    ro = np.concatenate([[0], np.cumsum(heights)])
    co = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((ro[-1], co[-1]))
    coef: Dict[int, np.ndarray] = {}
    for i, row in enumerate(rows):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            a = Affine.lift(blk)
            sl = (slice(ro[i], ro[i + 1]), slice(co[j], co[j + 1]))
            const[sl] = a.const
            for k, v in a.coef.items():
                if k not in coef:
                    coef[k] = np.zeros_like(const)
                coef[k][sl] = v
    return Affine(const, coef)


class LmiBuilder:
    """Collect variables and constraints, then :meth:`build` an :class:`LmiProblem`.

    Example
    -------
    >>> b = LmiBuilder()
    >>> t = b.scalar("t")
    >>> b.add_psd(bmat([[t, 1.0], [1.0, t]]))
    >>> b.minimize(t)
    >>> sol = solve(b.build())
    """

    def __init__(self, eps: float = DEFAULT_EPS):
        self.eps = eps
        self.n = 0
        self.var_map: Dict[str, tuple] = {}
        self._lmis: List[Tuple[Affine, str]] = []
        self._eqs: List[Tuple[Affine, float]] = []
        self._obj: Optional[Affine] = None

    def _alloc(self, name, count, kind, shape):
        if name in self.var_map:
            raise ValueError(f"variable {name!r} already defined")
        start = self.n
        self.n += count
        self.var_map[name] = (start, self.n, kind, tuple(shape))
        return start

    def scalar(self, name) -> Affine:
        k = self._alloc(name, 1, "scalar", (1, 1))
        return Affine(np.zeros((1, 1)), {k: np.ones((1, 1))})

    def sym(self, name, n) -> Affine:
        k0 = self._alloc(name, n * (n + 1) // 2, "sym", (n, n))
        coef = {}
        k = k0
        for i in range(n):
            for j in range(i, n):
                E = np.zeros((n, n))
                E[i, j] = E[j, i] = 1.0
                coef[k] = E
                k += 1
        return Affine(np.zeros((n, n)), coef)

    def mat(self, name, rows, cols) -> Affine:
        k0 = self._alloc(name, rows * cols, "mat", (rows, cols))
        coef = {}
        for i in range(rows):
            for j in range(cols):
                E = np.zeros((rows, cols))
                E[i, j] = 1.0
                coef[k0 + i * cols + j] = E
        return Affine(np.zeros((rows, cols)), coef)

    def add_nsd(self, expr: Affine, name="", strict=False):
        """Constrain ``expr <= 0`` (or ``expr <= -eps I`` when strict)."""
        expr = Affine.lift(expr)
        if expr.shape[0] != expr.shape[1]:
            raise DimensionMismatch(f"LMI {name!r} is not square: {expr.shape}")
        asym = max([np.abs(expr.const - expr.const.T).max()]
                   + [np.abs(v - v.T).max() for v in expr.coef.values()])
        if asym > 1e-12:
            raise ValueError(f"LMI {name!r} is not symmetric (defect {asym:.2e})")
        if strict:
            expr = expr + self.eps * np.eye(expr.shape[0])
        self._lmis.append((expr, name))

    def add_psd(self, expr: Affine, name="", strict=False):
        """Constrain ``expr >= 0`` (``>= eps I`` when strict)."""
        self.add_nsd(-Affine.lift(expr), name, strict)

    def add_eq(self, expr: Affine, value=0.0):
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise DimensionMismatch("equality constraints must be scalar")
        self._eqs.append((expr, float(value)))

    def minimize(self, expr: Affine):
        expr = Affine.lift(expr)
        if expr.shape != (1, 1):
            raise DimensionMismatch("objective must be scalar")
        self._obj = expr

    def build(self) -> LmiProblem:
        if not self._lmis:
            raise ValueError("no LMI constraints were added")
        c = np.zeros(self.n)
        if self._obj is not None:
            for k, v in self._obj.coef.items():
                c[k] += v[0, 0]
        blocks = []
        for expr, name in self._lmis:
            F0 = (expr.const + expr.const.T) / 2
            idx = sorted(k for k, v in expr.coef.items() if np.any(v != 0))
            F = np.array([(expr.coef[k] + expr.coef[k].T) / 2 for k in idx]).reshape(
                len(idx), *F0.shape)
            blocks.append(LmiBlock(F0, idx, F, name))
        A = np.zeros((len(self._eqs), self.n))
        b = np.zeros(len(self._eqs))
        for r, (expr, val) in enumerate(self._eqs):
            for k, v in expr.coef.items():
                A[r, k] += v[0, 0]
            b[r] = val - expr.const[0, 0]
        return LmiProblem(self.n, c, blocks, A, b, dict(self.var_map))
