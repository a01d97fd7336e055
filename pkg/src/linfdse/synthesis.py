"""Observer-gain synthesis: convex upper bound, SCA refinement, lifted lower bound.

All programs are solved with the performance matrix normalised to unit
spectral norm.  The constraints are homogeneous of degree two in ``Z`` once
the decay rate is fixed, so with ``s = ||Z||_2`` the unnormalised certificate
is recovered exactly by multiplying ``P, Y, nu1, nu3, nu5, nu6`` (and the
lifted ``Xi, sigma, lambda``) by ``s**2``.  This keeps the interior-point
iterates O(1) instead of O(1e-8).
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import sdp
from .models import PlantModel, is_detectable
from .sdp import Affine, LmiBuilder, bmat

DEFAULT_NU4 = 1.0
DEFAULT_NU2 = 50.0


class SynthesisError(RuntimeError):
    pass


class InfeasibleDesign(SynthesisError):
    """The design LMIs have no solution for the given constants.

    ``min_violation`` is the smallest achievable largest eigenvalue of the
    performance-decay block in normalised units; ``min_violation_abs`` is the
    same in the caller's scale (multiplied by ``||Z||^2``).
    """

    def __init__(self, msg, min_violation=None, min_violation_abs=None):
        super().__init__(msg)
        self.min_violation = min_violation
        self.min_violation_abs = min_violation_abs


class SolverFailure(SynthesisError):
    pass


class NotDetectable(ValueError):
    pass


class AllInfeasible(SynthesisError):
    pass


@dataclass
class SynthesisInput:
    """Plant data and constants for one design problem.

    ``nu4`` (decay rate) and ``nu2`` are held fixed by the convex upper-bound
    program; the relaxation and SCA treat them as free.
    """

    A: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    D_w: np.ndarray
    Z: np.ndarray
    gamma_f: float
    gamma_l: float
    nu4: float = DEFAULT_NU4
    nu2: float = DEFAULT_NU2
    eps: float = sdp.DEFAULT_EPS

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, float))
        self.C = np.atleast_2d(np.asarray(self.C, float))
        self.D_w = np.atleast_2d(np.asarray(self.D_w, float))
        self.Z = np.atleast_2d(np.asarray(self.Z, float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B_w.shape[0] != n or self.C.shape[1] != n or self.Z.shape[1] != n:
            raise ValueError("B_w, C and Z must match the state dimension")
        if self.D_w.shape != (self.C.shape[0], self.B_w.shape[1]):
            raise ValueError(f"D_w must be {self.C.shape[0]}x{self.B_w.shape[1]}")
        if self.gamma_f < 0 or self.gamma_l < 0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if not self.nu4 > 0:
            raise ValueError("nu4 must be positive")
        if self.nu2 < 0:
            raise ValueError("nu2 must be nonnegative")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_y(self):
        return self.C.shape[0]

    @property
    def n_w(self):
        return self.B_w.shape[1]

    @property
    def z_scale(self) -> float:
        s = float(np.linalg.norm(self.Z, 2))
        return s if s > 0 else 1.0

    @property
    def Z_unit(self) -> np.ndarray:
        return self.Z / self.z_scale

    @classmethod
    def from_plant(cls, plant: PlantModel, gamma_f, gamma_l, Z=None, nu4=DEFAULT_NU4,
                   nu2=DEFAULT_NU2, eps=sdp.DEFAULT_EPS) -> "SynthesisInput":
        if plant.C is None:
            raise ValueError("plant has no output matrix C")
        if Z is None:
            Z = 2e-4 * np.eye(plant.n_x)
        return cls(plant.A, plant.B_w, plant.C, plant.D_w, Z, gamma_f, gamma_l, nu4, nu2, eps)

    def with_(self, **kw) -> "SynthesisInput":
        return replace(self, **kw)


@dataclass
class ObserverDesign:
    """Gain and certificate returned by the upper-bound program.

    ``nu`` holds nu1..nu6 in the caller's scale; ``residuals`` is the report
    of :func:`check_design`.
    """

    L: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    nu: np.ndarray
    mu_bar: float
    J_bar: float
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    status: str = sdp.OPTIMAL

    def to_dict(self) -> dict:
        return {
            "L": self.L.tolist(), "P": self.P.tolist(), "Y": self.Y.tolist(),
            "nu": self.nu.tolist(), "mu_bar": self.mu_bar, "J_bar": self.J_bar,
            "residuals": self.residuals, "iterations": self.iterations, "status": self.status,
        }

    @classmethod
    def from_dict(cls, d) -> "ObserverDesign":
        return cls(np.array(d["L"], float), np.array(d["P"], float), np.array(d["Y"], float),
                   np.array(d["nu"], float), float(d["mu_bar"]), float(d["J_bar"]),
                   dict(d.get("residuals", {})), int(d.get("iterations", 0)),
                   str(d.get("status", sdp.OPTIMAL)))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass
class RelaxationCertificate:
    J_lower: float
    Xi: np.ndarray
    Psi: Dict[Tuple[int, int], np.ndarray]
    Phi: np.ndarray
    Theta: np.ndarray
    lam: float
    sigma: float
    nu: np.ndarray
    P: np.ndarray
    residuals: dict = field(default_factory=dict)
    bounded: bool = True

    def to_dict(self) -> dict:
        return {
            "J_lower": self.J_lower, "Xi": self.Xi.tolist(),
            "Psi": {f"{i},{j}": v.tolist() for (i, j), v in self.Psi.items()},
            "Phi": self.Phi.tolist(), "Theta": self.Theta.tolist(),
            "lambda": self.lam, "sigma": self.sigma, "nu": self.nu.tolist(),
            "P": self.P.tolist(), "residuals": self.residuals, "bounded": self.bounded,
        }


# ---------------------------------------------------------------------------
# LMI assembly


def _decay_block(inp: SynthesisInput, P, Y, decay_term, corner, nu5, nu6) -> Affine:
    """Left-hand side of the Lyapunov-decay LMI (must be <= 0).

    ``decay_term`` stands for ``nu4 * P`` and ``corner`` for ``nu4 * nu1``;
    both are passed in so the same assembly serves the fixed-scalar, SCA and
    lifted programs.
    """
    A, C, Bw, Dw = inp.A, inp.C, inp.B_w, inp.D_w
    n, ny, nw = inp.n_x, inp.n_y, inp.n_w
    I = np.eye(n)
    Q = A.T @ P + P @ A - C.T @ Y.T - Y @ C + decay_term
    lip = nu5 * (inp.gamma_f ** 2 * I) + nu6 * (inp.gamma_l ** 2 * I)
    return bmat([
        [Q + lip, P, -1.0 * Y, P @ Bw - Y @ Dw],
        [P, -1.0 * (nu5 * I), None, None],
        [-1.0 * Y.T, None, -1.0 * (nu6 * np.eye(ny)), None],
        [Bw.T @ P - Dw.T @ Y.T, None, None, -1.0 * (corner * np.eye(nw))],
    ])


def _output_block(inp: SynthesisInput, P, nu3, nu2, Zn) -> Affine:
    n, nw, nz = inp.n_x, inp.n_w, Zn.shape[0]
    nu2_term = nu2 * np.eye(nz) if isinstance(nu2, Affine) else Affine(nu2 * np.eye(nz))
    return bmat([
        [-1.0 * P, None, Zn.T],
        [None, -1.0 * (nu3 * np.eye(nw)), None],
        [Zn, None, -1.0 * nu2_term],
    ])


def _decay_matrix(inp, P, Y, nu1, nu4, nu5, nu6):
    """Numeric decay block at a concrete point."""
    A, C, Bw, Dw = inp.A, inp.C, inp.B_w, inp.D_w
    n, ny, nw = inp.n_x, inp.n_y, inp.n_w
    Q = A.T @ P + P @ A - C.T @ Y.T - Y @ C + nu4 * P
    Zr = np.zeros
    return np.block([
        [Q + (nu5 * inp.gamma_f ** 2 + nu6 * inp.gamma_l ** 2) * np.eye(n), P, -Y, P @ Bw - Y @ Dw],
        [P, -nu5 * np.eye(n), Zr((n, ny)), Zr((n, nw))],
        [-Y.T, Zr((ny, n)), -nu6 * np.eye(ny), Zr((ny, nw))],
        [Bw.T @ P - Dw.T @ Y.T, Zr((nw, n)), Zr((nw, ny)), -nu4 * nu1 * np.eye(nw)],
    ])


def _output_matrix(inp, P, nu2, nu3, Z):
    n, nw, nz = inp.n_x, inp.n_w, Z.shape[0]
    Zr = np.zeros
    return np.block([
        [-P, Zr((n, nw)), Z.T],
        [Zr((nw, n)), -nu3 * np.eye(nw), Zr((nw, nz))],
        [Z, Zr((nz, nw)), -nu2 * np.eye(nz)],
    ])


def check_design(inp: SynthesisInput, design: ObserverDesign) -> dict:
    """Recompute both design LMIs by eigenvalues, in caller and unit-Z scale."""
    nu1, nu2, nu3, nu4, nu5, nu6 = design.nu
    s2 = inp.z_scale ** 2
    Ma = _decay_matrix(inp, design.P, design.Y, nu1, nu4, nu5, nu6)
    Mb = _output_matrix(inp, design.P, nu2, nu3, inp.Z)
    ea = float(np.linalg.eigvalsh(Ma).max())
    eb = float(np.linalg.eigvalsh(Mb).max())
    Mbn = _output_matrix(inp, design.P / s2, nu2, nu3 / s2, inp.Z_unit)
    return {
        "decay_lmi_max_eig": ea,
        "output_lmi_max_eig": eb,
        "decay_lmi_max_eig_unit": ea / s2,
        "output_lmi_max_eig_unit": float(np.linalg.eigvalsh(Mbn).max()),
        "P_min_eig": float(np.linalg.eigvalsh(design.P).min()),
        "gain_defect": float(np.abs(design.P @ design.L - design.Y).max()
                             / max(1e-300, np.abs(design.Y).max())),
        "z_scale_sq": s2,
    }


# ---------------------------------------------------------------------------
# upper bound


def _upper_problem(inp: SynthesisInput, nu4: float, nu2: float):
    b = LmiBuilder(eps=inp.eps)
    P = b.sym("P", inp.n_x)
    Y = b.mat("Y", inp.n_x, inp.n_y)
    nu1, nu3, nu5, nu6 = (b.scalar(k) for k in ("nu1", "nu3", "nu5", "nu6"))
    b.add_nsd(_decay_block(inp, P, Y, nu4 * P, nu4 * nu1, nu5, nu6), "decay")
    b.add_nsd(_output_block(inp, P, nu3, nu2, inp.Z_unit), "output")
    b.add_psd(P, "P_pos", strict=True)
    for v, name in ((nu1, "nu1"), (nu3, "nu3"), (nu5, "nu5"), (nu6, "nu6")):
        b.add_psd(v, name + "_sign")
    b.minimize(nu2 * nu1 + nu3)
    return b.build()


def _design_from_solution(inp, prob, sol, nu2, nu4) -> ObserverDesign:
    s2 = inp.z_scale ** 2
    P = s2 * prob.unpack(sol.x, "P")
    Y = s2 * prob.unpack(sol.x, "Y")
    nu1, nu3, nu5, nu6 = (s2 * prob.unpack(sol.x, k) for k in ("nu1", "nu3", "nu5", "nu6"))
    L = np.linalg.solve(P, Y)
    J = nu1 * nu2 + nu3
    d = ObserverDesign(L, P, Y, np.array([nu1, nu2, nu3, nu4, nu5, nu6]),
                       float(np.sqrt(max(J, 0.0))), float(J), iterations=sol.iterations)
    d.residuals = check_design(inp, d)
    return d


def min_violation(inp: SynthesisInput, nu4=None, nu2=None) -> float:
    """Smallest achievable largest eigenvalue of the decay LMI (unit-Z scale).

    Positive values mean the design LMIs are infeasible; multiply by
    ``||Z||^2`` for the caller's scale.
    """
    nu4 = inp.nu4 if nu4 is None else nu4
    nu2 = inp.nu2 if nu2 is None else nu2
    b = LmiBuilder(eps=inp.eps)
    P = b.sym("P", inp.n_x)
    Y = b.mat("Y", inp.n_x, inp.n_y)
    nu1, nu3, nu5, nu6, t = (b.scalar(k) for k in ("nu1", "nu3", "nu5", "nu6", "t"))
    M = _decay_block(inp, P, Y, nu4 * P, nu4 * nu1, nu5, nu6)
    b.add_nsd(M - t * np.eye(M.shape[0]), "decay")
    b.add_nsd(_output_block(inp, P, nu3, nu2, inp.Z_unit), "output")
    b.add_psd(P, "P_pos", strict=True)
    for v in (nu1, nu3, nu5, nu6):
        b.add_psd(v)
    b.add_psd(t + 1.0)
    b.minimize(t)
    sol = sdp.solve(b.build())
    return float(sol.primal_obj) if sol.status in (sdp.OPTIMAL, sdp.INACCURATE) else float("nan")


def synthesize_upper(inp: SynthesisInput, check_detectable=True, diagnose=True,
                     **solver_opts) -> ObserverDesign:
    """Solve the fixed-scalar design program and return gain plus certificate.

    Minimises ``nu2 * nu1 + nu3`` with ``nu4`` and ``nu2`` held at
    ``inp.nu4`` / ``inp.nu2``.

    Raises
    ------
    NotDetectable
        ``(A, C)`` has an unobservable mode with nonnegative real part.
    InfeasibleDesign
        The solver proved the LMIs infeasible.  With ``diagnose`` the
        smallest achievable violation is attached to the exception.
    SolverFailure
        Any other non-optimal solver status.
    """
    if check_detectable and not is_detectable(inp.A, inp.C):
        raise NotDetectable("pair (A, C) is not detectable; no stabilising gain exists")
    prob = _upper_problem(inp, inp.nu4, inp.nu2)
    sol = sdp.solve(prob, **solver_opts)
    if sol.status == sdp.INFEASIBLE:
        v = min_violation(inp) if diagnose else None
        msg = (f"design LMIs infeasible for gamma_f={inp.gamma_f:g}, gamma_l={inp.gamma_l:g}, "
               f"nu4={inp.nu4:g}")
        if v is not None:
            msg += (f"; smallest decay-LMI violation {v:.3e} (unit Z), "
                    f"{v * inp.z_scale ** 2:.3e} at the given Z")
        raise InfeasibleDesign(msg, v, None if v is None else v * inp.z_scale ** 2)
    if sol.status not in (sdp.OPTIMAL, sdp.INACCURATE):
        raise SolverFailure(f"SDP solver returned {sol.status} after {sol.iterations} iterations")
    sdp.verify(prob, sol, feas_tol=solver_opts.get("feas_tol", 1e-8))
    design = _design_from_solution(inp, prob, sol, inp.nu2, inp.nu4)
    design.status = sol.status
    return design


def max_feasible_gamma_scale(inp: SynthesisInput, tol=1e-3, max_iter=40) -> float:
    """Largest ``k`` in (0, 1] such that the design is feasible at ``k * gamma``.

    Bisection in log scale; returns 1.0 when the given constants are already
    feasible.  Used when sampled Lipschitz constants are too conservative for
    any decay-rate certificate to exist.
    """

    def feasible(k):
        try:
            synthesize_upper(inp.with_(gamma_f=k * inp.gamma_f, gamma_l=k * inp.gamma_l),
                             check_detectable=False, diagnose=False)
            return True
        except SynthesisError:
            return False

    if feasible(1.0):
        return 1.0
    lo, hi = None, 1.0
    k = 0.1
    while lo is None:
        if feasible(k):
            lo = k
        else:
            hi = k
            k *= 0.1
            if k < 1e-12:
                raise AllInfeasible("design infeasible even with vanishing Lipschitz constants")
    for _ in range(max_iter):
        if hi / lo < 1 + tol:
            break
        mid = np.sqrt(lo * hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


# ---------------------------------------------------------------------------
# successive convex approximation


def sca_refine(inp: SynthesisInput, seed: ObserverDesign, rounds: int = 10, step_cap=0.5,
               rel_tol=1e-4) -> ObserverDesign:
    """Improve a feasible design by linearising the bilinear terms.

    Each round solves the program with ``nu4 P``, ``nu4 nu1`` and ``nu1 nu2``
    replaced by first-order expansions about the incumbent, inside a trust
    region ``|d nu_k| <= step_cap`` (unit-Z scale for nu1).  The proposed
    ``(nu4, nu2)`` is then re-solved exactly with the fixed-scalar program, so
    every accepted design carries a certificate; a proposal that does not
    lower ``J_bar`` halves the trust region instead.
    """
    best = seed
    if rounds <= 0:
        return best
    s2 = inp.z_scale ** 2
    cap = float(step_cap)
    for _ in range(rounds):
        nu1b, nu2b, _, nu4b, _, _ = best.nu
        nu1b /= s2
        Pb = best.P / s2
        b = LmiBuilder(eps=inp.eps)
        P = b.sym("P", inp.n_x)
        Y = b.mat("Y", inp.n_x, inp.n_y)
        nu1, nu2, nu3, nu4, nu5, nu6 = (b.scalar(f"nu{i}") for i in range(1, 7))
        decay = nu4b * P + nu4 * Pb - nu4b * Pb
        corner = nu4b * nu1 + nu1b * nu4 - nu4b * nu1b
        b.add_nsd(_decay_block(inp, P, Y, decay, corner, nu5, nu6), "decay")
        b.add_nsd(_output_block(inp, P, nu3, nu2, inp.Z_unit), "output")
        b.add_psd(P, "P_pos", strict=True)
        b.add_psd(nu4, "nu4_pos", strict=True)
        for v in (nu1, nu2, nu3, nu5, nu6):
            b.add_psd(v)
        for v, c in ((nu1, nu1b), (nu2, nu2b), (nu4, nu4b)):
            b.add_psd(cap - (v - c))
            b.add_psd(cap + (v - c))
        b.minimize(nu2b * nu1 + nu1b * nu2 + nu3)
        prob = b.build()
        sol = sdp.solve(prob)
        if not sol.ok:
            cap *= 0.5
            continue
        nu4n = prob.unpack(sol.x, "nu4")
        nu2n = prob.unpack(sol.x, "nu2")
        if nu2n <= 0:
            nu2n = nu2b
        try:
            cand = synthesize_upper(inp.with_(nu4=nu4n, nu2=nu2n), check_detectable=False,
                                    diagnose=False)
        except SynthesisError:
            cand = None
        if cand is None or cand.J_bar > best.J_bar:
            cap *= 0.5
            if cap < 1e-6:
                break
            continue
        improvement = (best.J_bar - cand.J_bar) / max(best.J_bar, 1e-300)
        best = cand
        if improvement < rel_tol:
            break
    return best


# ---------------------------------------------------------------------------
# lifted relaxation (lower bound)


@dataclass
class RelaxationBounds:
    """Box on the scalars and P entries used to tighten the lifting.

    With these bounds the relaxation certifies a lower bound on the optimum
    restricted to the box.
    """

    nu1: Tuple[float, float]
    nu2: Tuple[float, float]
    nu4: Tuple[float, float]
    P_abs: float

    @classmethod
    def around(cls, design: ObserverDesign, z_scale: float, ratio: float = 10.0):
        """Box containing ``design``: nu2 pinned (the problem is invariant to
        rescaling ``(P, nu1, nu2) -> (tP, t nu1, nu2/t)``), ``nu1`` in
        ``[0, nu1_bar]`` (any better design has ``nu1 nu2 <= J_bar``), ``nu4``
        within a factor ``ratio`` and ``|P_ij| <= ratio * max|P_bar|``."""
        s2 = z_scale ** 2
        nu1, nu2, _, nu4, _, _ = design.nu
        return cls((0.0, nu1 / s2), (nu2, nu2), (nu4 / ratio, nu4 * ratio),
                   ratio * float(np.abs(design.P).max()) / s2)


def _interval_product(a, b):
    c = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    return min(c), max(c)


def _rlt_cuts(builder: LmiBuilder, V: Affine, v: Sequence[Affine], lo, hi):
    """Reformulation-linearisation cuts linking a lifted matrix to its vector."""
    k = len(v)
    pinned = [hi[a] - lo[a] <= 0 for a in range(k)]
    for a in range(k):
        for c in range(a, k):
            Vac = V[a, c]
            if pinned[a] or pinned[c]:
                # a fixed coordinate makes the product linear: V_ac = l_c v_a
                fixed, other = (c, a) if pinned[c] else (a, c)
                builder.add_eq(Vac - lo[fixed] * v[other], 0.0)
                continue
            la, ua, lc, uc = lo[a], hi[a], lo[c], hi[c]
            builder.add_psd(Vac - la * v[c] - lc * v[a] + la * lc)
            builder.add_psd(Vac - ua * v[c] - uc * v[a] + ua * uc)
            builder.add_nsd(Vac - la * v[c] - uc * v[a] + la * uc)
            if a != c:
                builder.add_nsd(Vac - ua * v[c] - lc * v[a] + ua * lc)


def relax_lower(inp: SynthesisInput, bounds: Optional[RelaxationBounds] = None,
                **solver_opts) -> RelaxationCertificate:
    """Lower bound on the optimal squared performance level.

    The products ``nu4 P``, ``nu4 nu1`` and ``nu1 nu2`` are replaced by new
    variables ``Xi``, ``sigma``, ``lambda``; each product is tied to a lifted
    3x3 matrix through a trace equality and a Schur-complement PSD block,
    with the rank-one requirement dropped.

    Without ``bounds`` nothing else links the lifted matrices to the
    original variables and the bound is typically zero.  With ``bounds``
    reformulation-linearisation cuts (McCormick envelopes on every lifted
    pair) make it informative; it then bounds the optimum over that box.
    """
    n, ny = inp.n_x, inp.n_y
    s2 = inp.z_scale ** 2
    b = LmiBuilder(eps=inp.eps)
    P = b.sym("P", n)
    Y = b.mat("Y", n, ny)
    nu1, nu2, nu3, nu4, nu5, nu6 = (b.scalar(f"nu{i}") for i in range(1, 7))
    Xi = b.sym("Xi", n)
    sigma = b.scalar("sigma")
    lam = b.scalar("lambda")

    b.add_nsd(_decay_block(inp, P, Y, Xi, sigma, nu5, nu6), "decay")
    b.add_nsd(_output_block(inp, P, nu3, nu2, inp.Z_unit), "output")
    b.add_psd(P, "P_pos", strict=True)
    b.add_psd(nu4, "nu4_pos", strict=True)
    for v in (nu1, nu2, nu3, nu5, nu6, sigma, lam):
        b.add_psd(v)

    def lifted(name, vec):
        V = b.sym(name, 3)
        # trace(E V) - e^T v = 0 with E = sym(e1 e2^T), e = e3
        b.add_eq(V[0, 1] - vec[2], 0.0)
        col = bmat([[vec[0]], [vec[1]], [vec[2]]])
        b.add_psd(bmat([[V, col], [col.T, np.ones((1, 1))]]), name)
        return V

    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    Psi = {(i, j): lifted(f"Psi_{i}{j}", (nu4, P[i, j], Xi[i, j])) for i, j in pairs}
    Phi = lifted("Phi", (nu1, nu4, sigma))
    Theta = lifted("Theta", (nu1, nu2, lam))

    if bounds is not None:
        l1, u1 = bounds.nu1
        l2, u2 = bounds.nu2
        l4, u4 = bounds.nu4
        pm = bounds.P_abs
        for v, (lo, hi) in ((nu1, bounds.nu1), (nu2, bounds.nu2), (nu4, bounds.nu4)):
            if hi - lo <= 0:
                b.add_eq(v, lo)
            else:
                b.add_psd(v - lo)
                b.add_nsd(v - hi)
        for (i, j), V in Psi.items():
            lp = (0.0 if i == j else -pm, pm)
            lx = _interval_product((l4, u4), lp)
            b.add_psd(P[i, j] - lp[0])
            b.add_nsd(P[i, j] - lp[1])
            _rlt_cuts(b, V, (nu4, P[i, j], Xi[i, j]), (l4, lp[0], lx[0]), (u4, lp[1], lx[1]))
        ls = _interval_product((l1, u1), (l4, u4))
        ll = _interval_product((l1, u1), (l2, u2))
        _rlt_cuts(b, Phi, (nu1, nu4, sigma), (l1, l4, ls[0]), (u1, u4, ls[1]))
        _rlt_cuts(b, Theta, (nu1, nu2, lam), (l1, l2, ll[0]), (u1, u2, ll[1]))

    b.minimize(lam + nu3)
    prob = b.build()
    sol = sdp.solve(prob, **solver_opts)
    if not sol.ok:
        raise SolverFailure(f"relaxation solver returned {sol.status}")
    rep = sdp.verify(prob, sol, feas_tol=solver_opts.get("feas_tol", 1e-8))
    x = sol.x
    get = prob.unpack
    Psi_v = {k: get(x, f"Psi_{k[0]}{k[1]}") for k in pairs}
    Phi_v, Theta_v = get(x, "Phi"), get(x, "Theta")
    Xi_v, P_v = get(x, "Xi"), get(x, "P")
    nu = np.array([get(x, f"nu{i}") for i in range(1, 7)])
    lam_v, sig_v = get(x, "lambda"), get(x, "sigma")
    trace_res = max([abs(Psi_v[(i, j)][0, 1] - Xi_v[i, j]) for i, j in pairs]
                    + [abs(Phi_v[0, 1] - sig_v), abs(Theta_v[0, 1] - lam_v)])
    nu_out = nu.copy()
    nu_out[[0, 2, 4, 5]] *= s2  # nu2 and nu4 are scale free
    return RelaxationCertificate(
        J_lower=float(s2 * (lam_v + nu[2])), Xi=s2 * Xi_v,
        Psi=Psi_v, Phi=Phi_v, Theta=Theta_v, lam=float(s2 * lam_v), sigma=float(s2 * sig_v),
        nu=nu_out, P=s2 * P_v,
        residuals={"trace_equality": float(trace_res), "max_block_eig": rep.max_residual,
                   "iterations": sol.iterations},
        bounded=bounds is not None,
    )


# ---------------------------------------------------------------------------
# scalar grid search


def grid_search_nu(inp: SynthesisInput, nu4_grid: Sequence[float], nu2_grid: Sequence[float],
                   workers: int = 1) -> ObserverDesign:
    """Best fixed-scalar design over a grid of ``(nu4, nu2)``.

    Ties in ``J_bar`` go to the smaller ``nu4``, then the smaller ``nu2``.
    """
    nu4_grid = sorted(float(v) for v in nu4_grid)
    nu2_grid = sorted(float(v) for v in nu2_grid)
    if not nu4_grid or not nu2_grid or min(nu4_grid) <= 0 or min(nu2_grid) <= 0:
        raise ValueError("grids must be nonempty and positive")
    if not is_detectable(inp.A, inp.C):
        raise NotDetectable("pair (A, C) is not detectable")
    points = [(a, c) for a in nu4_grid for c in nu2_grid]

    def run(pt):
        try:
            return synthesize_upper(inp.with_(nu4=pt[0], nu2=pt[1]), check_detectable=False,
                                    diagnose=False)
        except SynthesisError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, points))
    else:
        results = [run(pt) for pt in points]
    best = None
    for pt, d in zip(points, results):
        if d is None:
            continue
        if best is None or d.J_bar < best[1].J_bar:
            best = (pt, d)
    if best is None:
        raise AllInfeasible("no grid point gave a feasible design")
    return best[1]
