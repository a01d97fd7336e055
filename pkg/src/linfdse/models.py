"""Synchronous generator models.

Fourth-order transient machine in raw physical form and in the
coefficient (alpha/beta) form, the linear/nonlinear split
``xdot = A x + f(x, u) + B_w q``, ``y = h(x, u) + D_u [q; u] + D_w q`` and a
tenth-order variant with an IEEE DC1 exciter and a three-state steam
turbine-governor.

State ordering (4th order): ``[delta, omega, e'_q, e'_d]``.
Inputs ``u = [i_R, i_I]`` (PMU current phasor), unknown inputs
``q = [T_m, E_fd]``, outputs ``y = [e_R, e_I]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

OMEGA0 = 2.0 * math.pi * 60.0


# ----------------------------------------------------------------------------
# parameter containers
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MachineParams:
    """Physical constants of the transient machine (per unit unless noted).

    The defaults are typical textbook values; they are not the parameters
    of any particular PST generator.
    """

    H: float = 3.0
    K_D: float = 4.0
    T_d0p: float = 5.0
    T_q0p: float = 0.8
    x_d: float = 1.8
    x_q: float = 1.7
    x_dp: float = 0.3
    x_qp: float = 0.55
    S_B: float = 100.0
    S_N: float = 100.0
    omega0: float = OMEGA0

    def __post_init__(self):
        for name in ("H", "T_d0p", "T_q0p", "S_B", "S_N", "omega0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.K_D < 0:
            raise ValueError("K_D must be nonnegative")
        if not (self.x_d >= self.x_dp > 0):
            raise ValueError("need x_d >= x_dp > 0")
        if not (self.x_q >= self.x_qp > 0):
            raise ValueError("need x_q >= x_qp > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "MachineParams":
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class DerivedParams:
    """Coefficients ``alpha_1..alpha_10`` (index 0..9) and ``beta_1, beta_2``."""

    alpha: np.ndarray
    beta: np.ndarray

    def a(self, i: int) -> float:
        """One-based access, ``dp.a(7)`` is alpha_7."""
        return float(self.alpha[i - 1])


def derive_params(mp: MachineParams) -> DerivedParams:
    """Map physical machine constants onto the coefficient form.

    The expressions come from substituting the stator currents, terminal
    voltages and air-gap torque into the swing and flux-decay equations and
    collecting the ``sin x1``, ``cos x1``, ``sin 2x1`` and ``cos 2x1`` terms.
    """
    k = mp.S_B / mp.S_N
    w0 = mp.omega0
    two_h = 2.0 * mp.H
    alpha = np.array([
        w0,                                   # alpha_1
        w0 / two_h,                           # alpha_2
        w0 * k / two_h,                       # alpha_3
        w0 * k * k * (mp.x_qp - mp.x_dp) / two_h,  # alpha_4
        mp.K_D / two_h,                       # alpha_5
        mp.K_D * w0 / two_h,                  # alpha_6
        1.0 / mp.T_d0p,                       # alpha_7
        (mp.x_d - mp.x_dp) / mp.T_d0p,        # alpha_8
        1.0 / mp.T_q0p,                       # alpha_9
        (mp.x_q - mp.x_qp) / mp.T_q0p,        # alpha_10
    ])
    beta = np.array([
        0.5 * k * (mp.x_qp - mp.x_dp),
        0.5 * k * (mp.x_qp + mp.x_dp),
    ])
    return DerivedParams(alpha=alpha, beta=beta)


@dataclass(frozen=True)
class OperatingBox:
    """Axis-aligned operating region for states and inputs."""

    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        for name in ("x_min", "x_max", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.x_min.shape != self.x_max.shape or self.u_min.shape != self.u_max.shape:
            raise ValueError("box bound shapes disagree")
        if not np.all(self.x_min < self.x_max):
            raise ValueError("state box is empty or degenerate (need x_min < x_max)")
        if not np.all(self.u_min < self.u_max):
            raise ValueError("input box is empty or degenerate (need u_min < u_max)")

    @property
    def x_mid(self) -> np.ndarray:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def u_mid(self) -> np.ndarray:
        return 0.5 * (self.u_min + self.u_max)

    def contains(self, x, u=None) -> bool:
        x = np.asarray(x)
        ok = bool(np.all(x >= self.x_min) and np.all(x <= self.x_max))
        if u is not None:
            u = np.asarray(u)
            ok = ok and bool(np.all(u >= self.u_min) and np.all(u <= self.u_max))
        return ok

    def shrink(self, factor: float) -> "OperatingBox":
        """Box scaled about its centre; ``factor`` in (0, 1] shrinks it."""
        xm, um = self.x_mid, self.u_mid
        xh, uh = 0.5 * (self.x_max - self.x_min), 0.5 * (self.u_max - self.u_min)
        return OperatingBox(xm - factor * xh, xm + factor * xh,
                            um - factor * uh, um + factor * uh)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_min", "x_max", "u_min", "u_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatingBox":
        return cls(d["x_min"], d["x_max"], d["u_min"], d["u_max"])


def default_box() -> OperatingBox:
    """Region around a loaded operating point of the default machine.

    Wide enough to hold a post-fault swing and the perturbed observer start
    ``[0.7548, w0, 1.3632, 0.8222]`` used in the case studies.
    """
    return OperatingBox(
        x_min=[0.5, OMEGA0 - 1.0, 0.6, 0.3],
        x_max=[1.6, OMEGA0 + 1.0, 1.5, 0.9],
        u_min=[0.2, 0.0],
        u_max=[1.0, 0.7],
    )


# ----------------------------------------------------------------------------
# raw physical form
# ----------------------------------------------------------------------------

def _intermediates(x, u, mp: MachineParams):
    k = mp.S_B / mp.S_N
    s, c = np.sin(x[..., 0]), np.cos(x[..., 0])
    u1, u2 = u[..., 0], u[..., 1]
    i_q = u2 * s + u1 * c
    i_d = u1 * s - u2 * c
    e_q = x[..., 2] - k * mp.x_dp * i_d
    e_d = x[..., 3] + k * mp.x_qp * i_q
    p_e = e_q * i_q + e_d * i_d
    t_e = k * p_e
    return i_q, i_d, e_q, e_d, t_e


def raw_rhs(x, u, q, mp: MachineParams) -> np.ndarray:
    """Transient-machine derivative through the i_q, i_d, e_q, e_d, T_e chain."""
    x, u, q = np.asarray(x, float), np.asarray(u, float), np.asarray(q, float)
    i_q, i_d, _, _, t_e = _intermediates(x, u, mp)
    w0 = mp.omega0
    d_delta = x[..., 1] - w0
    d_omega = w0 / (2.0 * mp.H) * (q[..., 0] - t_e - mp.K_D / w0 * (x[..., 1] - w0))
    d_eq = (q[..., 1] - x[..., 2] - (mp.x_d - mp.x_dp) * i_d) / mp.T_d0p
    d_ed = (-x[..., 3] + (mp.x_q - mp.x_qp) * i_q) / mp.T_q0p
    return np.stack([d_delta, d_omega, d_eq, d_ed], axis=-1)


def raw_output(x, u, mp: MachineParams) -> np.ndarray:
    """Terminal voltage phasor ``[e_R, e_I]`` from the d-q terminal voltages."""
    x, u = np.asarray(x, float), np.asarray(u, float)
    _, _, e_q, e_d, _ = _intermediates(x, u, mp)
    s, c = np.sin(x[..., 0]), np.cos(x[..., 0])
    return np.stack([e_d * s + e_q * c, e_q * s - e_d * c], axis=-1)


# ----------------------------------------------------------------------------
# coefficient form
# ----------------------------------------------------------------------------

def _f4(x, u, al):
    if x.ndim == 1 and u.ndim == 1:
        return _f4_point(x, u, al)
    x1 = x[..., 0]
    x3, x4 = x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    s, c = np.sin(x1), np.cos(x1)
    s2, c2 = np.sin(2.0 * x1), np.cos(2.0 * x1)
    f1 = np.full_like(x1, -al[0])
    f2 = (-al[2] * (x3 * u2 + x4 * u1) * s + al[2] * (x4 * u2 - x3 * u1) * c
          + al[3] * u1 * u2 * c2 + 0.5 * al[3] * (u2 * u2 - u1 * u1) * s2 + al[5])
    f3 = -al[7] * (u1 * s - u2 * c)
    f4 = al[9] * (u1 * c + u2 * s)
    return np.stack([f1, f2, f3, f4], axis=-1)


def _jac_f4(x, u, al):
    if x.ndim == 1 and u.ndim == 1:
        return _jac_f4_point(x, u, al)
    x1 = x[..., 0]
    x3, x4 = x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    s, c = np.sin(x1), np.cos(x1)
    s2, c2 = np.sin(2.0 * x1), np.cos(2.0 * x1)
    J = np.zeros(x.shape[:-1] + (4, 4))
    J[..., 1, 0] = (-al[2] * (x3 * u2 + x4 * u1) * c - al[2] * (x4 * u2 - x3 * u1) * s
                    - 2.0 * al[3] * u1 * u2 * s2 + al[3] * (u2 * u2 - u1 * u1) * c2)
    J[..., 1, 2] = -al[2] * (u2 * s + u1 * c)
    J[..., 1, 3] = -al[2] * (u1 * s - u2 * c)
    J[..., 2, 0] = -al[7] * (u1 * c + u2 * s)
    J[..., 3, 0] = al[9] * (u2 * c - u1 * s)
    return J


def _h4(x, u, be):
    if x.ndim == 1 and u.ndim == 1:
        return _h4_point(x, u, be)
    x1 = x[..., 0]
    x3, x4 = x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    s, c = np.sin(x1), np.cos(x1)
    s2, c2 = np.sin(2.0 * x1), np.cos(2.0 * x1)
    b1 = be[0]
    y1 = x3 * c + x4 * s + b1 * u1 * s2 - b1 * u2 * c2
    y2 = x3 * s - x4 * c - b1 * u1 * c2 - b1 * u2 * s2
    return np.stack([y1, y2], axis=-1)


def _jac_h4(x, u, be, n_x=4):
    if x.ndim == 1 and u.ndim == 1:
        return _jac_h4_point(x, u, be, n_x)
    x1 = x[..., 0]
    x3, x4 = x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    s, c = np.sin(x1), np.cos(x1)
    s2, c2 = np.sin(2.0 * x1), np.cos(2.0 * x1)
    b1 = be[0]
    J = np.zeros(x.shape[:-1] + (2, n_x))
    J[..., 0, 0] = -x3 * s + x4 * c + 2.0 * b1 * (u1 * c2 + u2 * s2)
    J[..., 0, 2] = c
    J[..., 0, 3] = s
    J[..., 1, 0] = x3 * c + x4 * s + 2.0 * b1 * (u1 * s2 - u2 * c2)
    J[..., 1, 2] = s
    J[..., 1, 3] = -c
    return J



# Single-point versions of the four maps above.  Same formulas on Python
# floats; ufunc dispatch dominates the cost of one 4-vector evaluation.

def _trig(x1):
    s, c = math.sin(x1), math.cos(x1)
    return s, c, math.sin(2.0 * x1), math.cos(2.0 * x1)


def _f4_point(x, u, al):
    x1, x3, x4 = float(x[0]), float(x[2]), float(x[3])
    u1, u2 = float(u[0]), float(u[1])
    s, c, s2, c2 = _trig(x1)
    f2 = (-al[2] * (x3 * u2 + x4 * u1) * s + al[2] * (x4 * u2 - x3 * u1) * c
          + al[3] * u1 * u2 * c2 + 0.5 * al[3] * (u2 * u2 - u1 * u1) * s2 + al[5])
    return np.array([-al[0], f2, -al[7] * (u1 * s - u2 * c), al[9] * (u1 * c + u2 * s)])


def _jac_f4_point(x, u, al):
    x1, x3, x4 = float(x[0]), float(x[2]), float(x[3])
    u1, u2 = float(u[0]), float(u[1])
    s, c, s2, c2 = _trig(x1)
    J = np.zeros((4, 4))
    J[1, 0] = (-al[2] * (x3 * u2 + x4 * u1) * c - al[2] * (x4 * u2 - x3 * u1) * s
               - 2.0 * al[3] * u1 * u2 * s2 + al[3] * (u2 * u2 - u1 * u1) * c2)
    J[1, 2] = -al[2] * (u2 * s + u1 * c)
    J[1, 3] = -al[2] * (u1 * s - u2 * c)
    J[2, 0] = -al[7] * (u1 * c + u2 * s)
    J[3, 0] = al[9] * (u2 * c - u1 * s)
    return J


def _h4_point(x, u, be):
    x1, x3, x4 = float(x[0]), float(x[2]), float(x[3])
    u1, u2 = float(u[0]), float(u[1])
    s, c, s2, c2 = _trig(x1)
    b1 = be[0]
    return np.array([x3 * c + x4 * s + b1 * u1 * s2 - b1 * u2 * c2,
                     x3 * s - x4 * c - b1 * u1 * c2 - b1 * u2 * s2])


def _jac_h4_point(x, u, be, n_x=4):
    x1, x3, x4 = float(x[0]), float(x[2]), float(x[3])
    u1, u2 = float(u[0]), float(u[1])
    s, c, s2, c2 = _trig(x1)
    b1 = be[0]
    J = np.zeros((2, n_x))
    J[0, 0] = -x3 * s + x4 * c + 2.0 * b1 * (u1 * c2 + u2 * s2)
    J[0, 2], J[0, 3] = c, s
    J[1, 0] = x3 * c + x4 * s + 2.0 * b1 * (u1 * s2 - u2 * c2)
    J[1, 2], J[1, 3] = s, -c
    return J


def parameterized_rhs(x, u, q, dp: DerivedParams) -> np.ndarray:
    """Derivative in coefficient form (includes the sin 2x1 / cos 2x1 terms)."""
    x, u, q = np.asarray(x, float), np.asarray(u, float), np.asarray(q, float)
    al = dp.alpha
    out = _f4(x, u, al)
    out[..., 0] += x[..., 1]
    out[..., 1] += al[1] * q[..., 0] - al[4] * x[..., 1]
    out[..., 2] += al[6] * q[..., 1] - al[6] * x[..., 2]
    out[..., 3] += -al[8] * x[..., 3]
    return out


def h_output(x, u, dp: DerivedParams) -> np.ndarray:
    """Full PMU output ``[e_R, e_I]`` in coefficient form, feedthrough included."""
    x, u = np.asarray(x, float), np.asarray(u, float)
    y = _h4(x, u, dp.beta)
    b2 = dp.beta[1]
    y[..., 0] += b2 * u[..., 1]
    y[..., 1] -= b2 * u[..., 0]
    return y


def build_matrices(dp: DerivedParams):
    """Return ``(A, B_w, D_u)`` with the fixed sparsity of the 4th-order model.

    ``D_u`` is 2x4 and multiplies the stacked vector ``[q; u]``.
    """
    al, be = tuple(map(float, dp.alpha)), tuple(map(float, dp.beta))
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -al[4], 0.0, 0.0],
        [0.0, 0.0, -al[6], 0.0],
        [0.0, 0.0, 0.0, -al[8]],
    ])
    B_w = np.array([
        [0.0, 0.0],
        [al[1], 0.0],
        [0.0, al[6]],
        [0.0, 0.0],
    ])
    D_u = np.array([
        [0.0, 0.0, 0.0, be[1]],
        [0.0, 0.0, -be[1], 0.0],
    ])
    return A, B_w, D_u


def linearize_output(x_op, u_op, dp: DerivedParams, scale: float = 10.0, n_x: int = 4) -> np.ndarray:
    """``scale`` times the analytic Jacobian of h with respect to x at the operating point."""
    x_op = np.asarray(x_op, float)
    u_op = np.asarray(u_op, float)
    return scale * _jac_h4(x_op, u_op, dp.beta, n_x=n_x)


def h_l(x, u, dp: DerivedParams, C) -> np.ndarray:
    """Output nonlinearity left after removing ``C x``: ``h(x, u) - C x``."""
    x = np.asarray(x, float)
    C = np.asarray(C, float)
    return _h4(x, u, dp.beta) - x @ C.T


# ----------------------------------------------------------------------------
# plant container
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantModel:
    """Linear/nonlinear split of a generator model.

    ``f`` and ``h`` accept single points ``(n_x,)`` or batches ``(..., n_x)``.
    ``h`` is the nonlinear output part; the full output adds ``D_u [q; u]``
    and ``D_w q``.
    """

    n_x: int
    A: np.ndarray
    B_w: np.ndarray
    D_u: np.ndarray
    D_w: np.ndarray
    C: Optional[np.ndarray]
    f: Callable
    h: Callable
    jac_f: Callable
    jac_h: Callable
    name: str = "order4"
    params: object = None
    dp: Optional[DerivedParams] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_y(self) -> int:
        return self.D_u.shape[0]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    def rhs(self, x, u, q) -> np.ndarray:
        return self.A @ x + self.f(x, u) + self.B_w @ q

    def feedthrough(self, u, q) -> np.ndarray:
        return self.D_u @ np.concatenate([q, u]) + self.D_w @ q

    def output(self, x, u, q) -> np.ndarray:
        return self.h(x, u) + self.feedthrough(u, q)

    def h_l(self, x, u) -> np.ndarray:
        if self.C is None:
            raise ValueError("output matrix C not set; call with_output_matrix first")
        return self.h(x, u) - self.C @ x

    def jac_rhs(self, x, u) -> np.ndarray:
        return self.A + self.jac_f(x, u)

    def jac_output(self, x, u) -> np.ndarray:
        return self.jac_h(x, u)

    def with_output_matrix(self, C) -> "PlantModel":
        C = np.asarray(C, float)
        if C.shape != (self.n_y, self.n_x):
            raise ValueError(f"C must be {self.n_y}x{self.n_x}, got {C.shape}")
        return replace(self, C=C)

    def linearize_output(self, x_op, u_op, scale: float = 10.0) -> np.ndarray:
        return scale * self.jac_h(np.asarray(x_op, float), np.asarray(u_op, float))

    def is_detectable(self, C=None, tol: float = 1e-9) -> bool:
        return is_detectable(self.A, self.C if C is None else C, tol=tol)


def is_detectable(A, C, tol: float = 1e-9) -> bool:
    """Hautus test on every eigenvalue with nonnegative real part.

    A mode is unobservable when its eigenvector v satisfies ``C v = 0``; for
    repeated eigenvalues the rank of ``[A - lam I; C]`` is used instead.
    """
    A = np.asarray(A, float)
    C = np.asarray(C, float)
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2), np.linalg.norm(C, 2))
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol * scale:
            continue
        M = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= tol * scale * 10:
            return False
    return True


def build_plant(mp: Optional[MachineParams] = None, C=None) -> PlantModel:
    """Fourth-order plant in split form; ``C`` may be attached later."""
    mp = mp or MachineParams()
    dp = derive_params(mp)
    A, B_w, D_u = build_matrices(dp)
    al, be = tuple(map(float, dp.alpha)), tuple(map(float, dp.beta))
    return PlantModel(
        n_x=4, A=A, B_w=B_w, D_u=D_u, D_w=np.zeros((2, 2)),
        C=None if C is None else np.asarray(C, float),
        f=lambda x, u: _f4(np.asarray(x, float), np.asarray(u, float), al),
        h=lambda x, u: _h4(np.asarray(x, float), np.asarray(u, float), be),
        jac_f=lambda x, u: _jac_f4(np.asarray(x, float), np.asarray(u, float), al),
        jac_h=lambda x, u: _jac_h4(np.asarray(x, float), np.asarray(u, float), be),
        name="order4", params=mp, dp=dp,
    )


def equilibrium(delta, e_qp, e_dp, T_m, mp: Optional[MachineParams] = None):
    """Steady operating point with prescribed angle, transient voltages and torque.

    The q-axis current follows from the d-axis flux balance; the torque
    balance is then linear in the d-axis current.  Returns ``(x, u, q)`` with
    ``q = [T_m, E_fd]``.
    """
    mp = mp or MachineParams()
    k = mp.S_B / mp.S_N
    i_q = e_dp / (mp.x_q - mp.x_qp)
    denom = e_dp + k * (mp.x_qp - mp.x_dp) * i_q
    if abs(denom) < 1e-12:
        raise ValueError("torque balance is degenerate at this operating point")
    i_d = (T_m / k - e_qp * i_q) / denom
    return _equilibrium_from_currents(delta, e_qp, e_dp, i_q, i_d, mp, mp.omega0)


def _equilibrium_from_currents(delta, e_qp, e_dp, i_q, i_d, mp, w0):
    s, c = math.sin(delta), math.cos(delta)
    # invert the rotation i_q = u2 s + u1 c, i_d = u1 s - u2 c
    u1 = i_q * c + i_d * s
    u2 = i_q * s - i_d * c
    x = np.array([delta, w0, e_qp, e_dp])
    u = np.array([u1, u2])
    _, _, _, _, t_e = _intermediates(x, u, mp)
    T_m = float(t_e)
    E_fd = e_qp + (mp.x_d - mp.x_dp) * i_d
    return x, u, np.array([T_m, E_fd])


# ----------------------------------------------------------------------------
# tenth-order model: machine + IEEE DC1 exciter + steam turbine-governor
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MachineParams10:
    """Machine constants plus exciter and governor settings.

    Exciter (IEEE Type DC1, saturation off by default): amplifier ``K_A``,
    ``T_A``; exciter ``K_E``, ``T_E``; rate feedback ``K_F``, ``T_F``;
    saturation ``S_E(E) = A_ex * exp(B_ex * E)``.
    Governor: droop ``R``, servo ``T_s``, HP turbine ``T_c``, transient gain
    ``T_3`` and reheat ``T_4``/``T_5`` time constants; the output torque is
    ``tg3 + (T_4/T_5)(tg2 + (T_3/T_c) tg1)``.
    """

    machine: MachineParams = field(default_factory=MachineParams)
    K_A: float = 20.0
    T_A: float = 0.2
    K_E: float = 1.0
    T_E: float = 0.314
    K_F: float = 0.063
    T_F: float = 0.35
    A_ex: float = 0.0
    B_ex: float = 0.0
    R: float = 0.04
    T_s: float = 0.1
    T_c: float = 0.5
    T_3: float = 0.0
    T_4: float = 1.25
    T_5: float = 5.0

    def __post_init__(self):
        for name in ("T_A", "T_E", "T_F", "R", "T_s", "T_c", "T_5"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MachineParams10":
        d = dict(d)
        machine = MachineParams.from_dict(d.pop("machine", {}))
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(machine=machine, **known)


def governor_torque(x, p: MachineParams10):
    tg1, tg2, tg3 = x[..., 7], x[..., 8], x[..., 9]
    return tg3 + (p.T_4 / p.T_5) * (tg2 + (p.T_3 / p.T_c) * tg1)


def rhs_10th(x, u, q, p: MachineParams10) -> np.ndarray:
    """Tenth-order derivative; ``q = [P_ref, V_ref]`` are the controller set points."""
    x, u, q = np.asarray(x, float), np.asarray(u, float), np.asarray(q, float)
    mp = p.machine
    w0 = mp.omega0
    T_m = governor_torque(x, p)
    E_fd = x[..., 5]
    d4 = raw_rhs(x[..., :4], u, np.stack([T_m, E_fd], axis=-1), mp)
    V_R, R_f = x[..., 4], x[..., 6]
    V_t = np.linalg.norm(raw_output(x[..., :4], u, mp), axis=-1)
    S_E = p.A_ex * np.exp(p.B_ex * E_fd)
    rate_fb = (p.K_F / p.T_F) * (E_fd - R_f)
    dV_R = (p.K_A * (q[..., 1] - V_t - rate_fb) - V_R) / p.T_A
    dE_fd = (V_R - (p.K_E + S_E) * E_fd) / p.T_E
    dR_f = (E_fd - R_f) / p.T_F
    gov_in = q[..., 0] - (x[..., 1] - w0) / (w0 * p.R)
    tg1, tg2, tg3 = x[..., 7], x[..., 8], x[..., 9]
    dtg1 = (gov_in - tg1) / p.T_s
    dtg2 = ((1.0 - p.T_3 / p.T_c) * tg1 - tg2) / p.T_c
    dtg3 = ((1.0 - p.T_4 / p.T_5) * (tg2 + (p.T_3 / p.T_c) * tg1) - tg3) / p.T_5
    rest = np.stack([dV_R, dE_fd, dR_f, dtg1, dtg2, dtg3], axis=-1)
    return np.concatenate([d4, rest], axis=-1)


def _matrices_10th(p: MachineParams10, dp: DerivedParams):
    al = dp.alpha
    A4, _, D_u = build_matrices(dp)
    A = np.zeros((10, 10))
    A[:4, :4] = A4
    r45 = p.T_4 / p.T_5
    A[1, 7] = al[1] * r45 * p.T_3 / p.T_c
    A[1, 8] = al[1] * r45
    A[1, 9] = al[1]
    A[2, 5] = al[6]
    kf = p.K_A * p.K_F / (p.T_F * p.T_A)
    A[4, 4] = -1.0 / p.T_A
    A[4, 5] = -kf
    A[4, 6] = kf
    A[5, 4] = 1.0 / p.T_E
    A[5, 5] = -p.K_E / p.T_E
    A[6, 5] = 1.0 / p.T_F
    A[6, 6] = -1.0 / p.T_F
    A[7, 1] = -1.0 / (p.machine.omega0 * p.R * p.T_s)
    A[7, 7] = -1.0 / p.T_s
    A[8, 7] = (1.0 - p.T_3 / p.T_c) / p.T_c
    A[8, 8] = -1.0 / p.T_c
    A[9, 7] = (1.0 - p.T_4 / p.T_5) * (p.T_3 / p.T_c) / p.T_5
    A[9, 8] = (1.0 - p.T_4 / p.T_5) / p.T_5
    A[9, 9] = -1.0 / p.T_5
    B_w = np.zeros((10, 2))
    B_w[7, 0] = 1.0 / p.T_s
    B_w[4, 1] = p.K_A / p.T_A
    return A, B_w, D_u


def build_plant_10th(p: Optional[MachineParams10] = None, C=None) -> PlantModel:
    """Tenth-order plant in split form with unknown inputs ``[P_ref, V_ref]``."""
    p = p or MachineParams10()
    mp = p.machine
    dp = derive_params(mp)
    A, B_w, D_u = _matrices_10th(p, dp)
    be = dp.beta

    def f(x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        full = rhs_10th(x, u, np.zeros(x.shape[:-1] + (2,)), p)
        return full - x @ A.T

    def jac_f(x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        J = np.zeros(x.shape[:-1] + (10, 10))
        J[..., :4, :4] = _jac_f4(x[..., :4], u, dp.alpha)
        # terminal-voltage feedback into the amplifier
        y = h_output(x[..., :4], u, dp)
        V_t = np.linalg.norm(y, axis=-1)
        Jh = _jac_h4(x[..., :4], u, be)
        dVt = np.einsum("...i,...ij->...j", y, Jh) / np.maximum(V_t, 1e-12)[..., None]
        J[..., 4, :4] = -p.K_A / p.T_A * dVt
        E_fd = x[..., 5]
        S_E = p.A_ex * np.exp(p.B_ex * E_fd)
        J[..., 5, 5] = -(S_E + p.B_ex * S_E * E_fd) / p.T_E
        return J

    def h(x, u):
        return _h4(np.asarray(x, float)[..., :4], np.asarray(u, float), be)

    def jac_h(x, u):
        return _jac_h4(np.asarray(x, float)[..., :4], np.asarray(u, float), be, n_x=10)

    return PlantModel(
        n_x=10, A=A, B_w=B_w, D_u=D_u, D_w=np.zeros((2, 2)),
        C=None if C is None else np.asarray(C, float),
        f=f, h=h, jac_f=jac_f, jac_h=jac_h, name="order10", params=p, dp=dp,
    )


def equilibrium_10th(delta, e_qp, e_dp, E_fd, p: Optional[MachineParams10] = None):
    """Steady point of the tenth-order model.

    The stator currents are solved from the two flux-decay balances, the
    governor and exciter states from their own steady conditions, and the set
    points ``[P_ref, V_ref]`` close the loops.  Returns ``(x, u, q)``.
    """
    p = p or MachineParams10()
    mp = p.machine
    i_q = e_dp / (mp.x_q - mp.x_qp)
    i_d = (E_fd - e_qp) / (mp.x_d - mp.x_dp)
    x4, u, q4 = _equilibrium_from_currents(delta, e_qp, e_dp, i_q, i_d, mp, mp.omega0)
    T_m = q4[0]
    tg1 = T_m
    tg2 = (1.0 - p.T_3 / p.T_c) * tg1
    tg3 = (1.0 - p.T_4 / p.T_5) * (tg2 + (p.T_3 / p.T_c) * tg1)
    S_E = p.A_ex * math.exp(p.B_ex * E_fd)
    V_R = (p.K_E + S_E) * E_fd
    R_f = E_fd
    V_t = float(np.linalg.norm(raw_output(x4, u, mp)))
    V_ref = V_t + V_R / p.K_A
    x = np.concatenate([x4, [V_R, E_fd, R_f, tg1, tg2, tg3]])
    return x, u, np.array([T_m, V_ref])
