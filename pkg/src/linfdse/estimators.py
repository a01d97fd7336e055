"""Runtime state estimators and measurement/process noise generators.

The continuous-time robust observer is integrated frame by frame against
PMU samples; the extended, unscented and square-root unscented Kalman
filters run on a second-order Taylor discretization of the same plant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator

from ._validation import as_psd, as_samples, as_vector, check_positive
from .integrate import PMU_RATE, InputSignal, Trajectory, integrate_piecewise
from .models import PlantModel
from .synthesis import ObserverDesign

T_S = 1.0 / PMU_RATE
UKF_ALPHA, UKF_BETA, UKF_KAPPA = 0.1, 2.0, -1.0
P0_DIAG_ORDER4 = np.array([math.pi / 90, 2e-3 * 60 * math.pi, 1e-3, 1e-3])


class EstimatorDiverged(RuntimeError):
    """A filter lost a valid covariance; ``step`` is the failing sample index."""

    def __init__(self, msg, step: Optional[int] = None):
        super().__init__(msg)
        self.step = step


class CovarianceNotPSD(EstimatorDiverged):
    pass


class CholeskyFailure(EstimatorDiverged):
    pass


class DowndateFailure(EstimatorDiverged):
    pass


# ----------------------------------------------------------------------------
# noise
# ----------------------------------------------------------------------------

_NOISE_KINDS = ("none", "gaussian", "laplace", "cauchy")


@dataclass(frozen=True)
class NoiseSpec:
    """Distribution of an additive noise channel.

    ``gaussian`` uses ``cov`` (matrix, or a vector read as its diagonal);
    ``laplace`` uses location ``m`` and scale ``s``; ``cauchy`` uses location
    ``a`` and scale ``b``.  Location and scale may be scalars or per-entry
    vectors.
    """

    kind: str = "none"
    cov: Optional[np.ndarray] = None
    m: object = 0.0
    s: object = None
    a: object = 0.0
    b: object = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {_NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "gaussian":
            if self.cov is None:
                raise ValueError("gaussian noise needs cov")
            object.__setattr__(self, "cov", as_psd(self.cov, name="cov"))
        if self.kind == "laplace" and (self.s is None or np.any(np.asarray(self.s) <= 0)):
            raise ValueError("laplace noise needs s > 0")
        if self.kind == "cauchy" and (self.b is None or np.any(np.asarray(self.b) <= 0)):
            raise ValueError("cauchy noise needs b > 0")

    @property
    def dim(self) -> Optional[int]:
        if self.kind == "gaussian":
            return self.cov.shape[0]
        sizes = [np.size(v) for v in (self.m, self.s, self.a, self.b) if v is not None]
        big = [k for k in sizes if k > 1]
        return big[0] if big else None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.seed is not None:
            out["seed"] = self.seed
        if self.kind == "gaussian":
            out["cov"] = self.cov.tolist()
        elif self.kind == "laplace":
            out.update(m=np.asarray(self.m).tolist(), s=np.asarray(self.s).tolist())
        elif self.kind == "cauchy":
            out.update(a=np.asarray(self.a).tolist(), b=np.asarray(self.b).tolist())
        return out

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "NoiseSpec":
        if not d:
            return cls()
        d = dict(d)
        kind = d.pop("kind", "none")
        if "std" in d:
            d["cov"] = np.square(np.asarray(d.pop("std"), float))
        unknown = set(d) - {"cov", "m", "s", "a", "b", "seed"}
        if unknown:
            raise ValueError(f"unknown noise fields: {sorted(unknown)}")
        return cls(kind=kind, **d)


def laplace_from_uniform(R1, m=0.0, s=1.0):
    """Laplace variate from ``R1`` in (-0.5, 0.5]."""
    R1 = np.asarray(R1, float)
    return m - s * np.sign(R1) * np.log(1.0 - 2.0 * np.abs(R1))


def cauchy_from_uniform(R2, a=0.0, b=1.0):
    """Cauchy variate from ``R2`` in (0, 1)."""
    return a + b * np.tan(np.pi * (np.asarray(R2, float) - 0.5))


def sample_noise(spec: NoiseSpec, n: int, rng: Optional[np.random.Generator] = None,
                 dim: Optional[int] = None) -> np.ndarray:
    """Draw ``n`` i.i.d. noise vectors, shape ``(n, dim)``.

    ``rng`` defaults to a generator seeded with ``spec.seed``.  ``dim`` is
    required for the scalar-parameter kinds unless the parameters are
    vectors.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    d = spec.dim if spec.dim is not None else dim
    if dim is not None and spec.dim is not None and dim != spec.dim:
        raise ValueError(f"noise dimension {spec.dim} does not match requested {dim}")
    if d is None:
        raise ValueError("noise dimension unknown; pass dim")
    if spec.kind == "none":
        return np.zeros((n, d))
    if spec.kind == "gaussian":
        try:
            F = np.linalg.cholesky(spec.cov)
        except np.linalg.LinAlgError:
            # semidefinite: symmetric square root
            w, V = np.linalg.eigh(spec.cov)
            F = V * np.sqrt(np.clip(w, 0.0, None))
        return rng.standard_normal((n, d)) @ F.T
    if spec.kind == "laplace":
        # R1 = 0.5 - U with U in [0, 1) lies in (-0.5, 0.5]; the endpoint
        # 0.5 maps to an infinite sample and is nudged inward
        R1 = 0.5 - rng.random((n, d))
        R1 = np.sign(R1) * np.minimum(np.abs(R1), 0.5 - 2.0 ** -54)
        return laplace_from_uniform(R1, np.asarray(spec.m, float), np.asarray(spec.s, float))
    U = rng.random((n, d))
    U[U == 0.0] = 2.0 ** -54
    return cauchy_from_uniform(U, np.asarray(spec.a, float), np.asarray(spec.b, float))


# ----------------------------------------------------------------------------
# robust observer
# ----------------------------------------------------------------------------

@dataclass
class ObserverState:
    x_hat: np.ndarray
    design: ObserverDesign
    r: np.ndarray

    def __post_init__(self):
        self.x_hat = as_vector(self.x_hat, self.design.L.shape[0], "x_hat")
        self.r = as_vector(self.r, None, "r")


def observer_rhs(obs: ObserverState, u, y_meas, model: PlantModel) -> np.ndarray:
    """Observer derivative at the current estimate.

    The predicted output is ``C x_hat + h_l(x_hat, u) + D_u [r; u] + D_w r``,
    which equals the full model output at ``x_hat`` with the unknown inputs
    replaced by ``r``.
    """
    x, r = obs.x_hat, obs.r
    u = np.asarray(u, float)
    y_hat = model.C @ x + model.h_l(x, u) + model.feedthrough(u, r)
    return model.rhs(x, u, r) + obs.design.L @ (np.asarray(y_meas, float) - y_hat)


def run_linf_observer(model: PlantModel, design: ObserverDesign, x_hat0, u_sig: InputSignal,
                      y_sig: InputSignal, r, t_span=None, y_interpolation: str = "hold",
                      rel_tol: float = 1e-3, abs_tol: float = 1e-6) -> Trajectory:
    """Integrate the observer against sampled inputs and measurements.

    Parameters
    ----------
    model : PlantModel
        Nominal model the design was synthesized for.
    design : ObserverDesign
    x_hat0 : array_like
        Initial estimate.
    u_sig, y_sig : InputSignal
        Known inputs and measurements on the same uniform grid.  Inputs are
        interpolated according to ``u_sig.interpolation``.
    r : array_like
        Nominal unknown-input guess.
    t_span : (float, float), optional
        Defaults to the full signal span; must be grid-aligned.
    y_interpolation : {"hold", "linear"}
        Measurements are held over each frame by default.

    Returns
    -------
    Trajectory
        Estimates on the measurement grid.
    """
    n = model.n_x
    x_hat0 = as_vector(x_hat0, n, "x_hat0")
    r = as_vector(r, model.n_w, "r")
    if y_interpolation not in ("hold", "linear"):
        raise ValueError("y_interpolation must be 'hold' or 'linear'")
    grid = _grid_for(u_sig, y_sig, t_span)
    L = design.L
    if L.shape != (n, model.n_y):
        raise ValueError(f"gain shape {L.shape} does not fit the model")
    k0 = int(round((grid[0] - y_sig.t0) / y_sig.dt))
    U = _samples_on(u_sig, grid)
    Yd = y_sig.samples[k0:k0 + len(grid)]
    u_lin = u_sig.interpolation == "linear"
    y_lin = y_interpolation == "linear"
    # the parts of A x + f + B_w r - L (h + D_u [r; u] + D_w r) that do not
    # depend on x_hat are folded into per-frame constants
    Du_q, Du_u = model.D_u[:, :model.n_w], model.D_u[:, model.n_w:]
    base = model.B_w @ r - L @ (Du_q @ r + model.D_w @ r)
    LDu = L @ Du_u
    A, f, h = model.A, model.f, model.h

    def rhs_k(k):
        t0 = grid[k]
        dt = grid[k + 1] - t0
        u0 = U[k]
        c0 = base + L @ Yd[k] - LDu @ u0
        if not (u_lin or y_lin):
            # everything outside x_hat is frozen over the frame
            return lambda t, x: A @ x + f(x, u0) - L @ h(x, u0) + c0
        du = U[k + 1] - u0 if u_lin else np.zeros_like(u0)
        dy = Yd[k + 1] - Yd[k] if y_lin else np.zeros_like(Yd[k])
        dc = L @ dy - LDu @ du

        def rhs(t, x):
            s = (t - t0) / dt
            u = u0 + s * du
            return A @ x + f(x, u) - L @ h(x, u) + c0 + s * dc
        return rhs

    return integrate_piecewise(rhs_k, x_hat0, grid, rel_tol, abs_tol)


def _grid_for(u_sig: InputSignal, y_sig: InputSignal, t_span):
    if abs(u_sig.dt - y_sig.dt) > 1e-12 or abs(u_sig.t0 - y_sig.t0) > 1e-12:
        raise ValueError("inputs and measurements must share one sample grid")
    t0 = y_sig.t0 if t_span is None else float(t_span[0])
    t1 = min(u_sig.t_end, y_sig.t_end) if t_span is None else float(t_span[1])
    if t0 < y_sig.t0 - 1e-9 or t1 > min(u_sig.t_end, y_sig.t_end) + 1e-9:
        raise ValueError("signals do not cover the requested span")
    k0 = int(round((t0 - y_sig.t0) / y_sig.dt))
    k1 = int(round((t1 - y_sig.t0) / y_sig.dt))
    if k1 <= k0:
        raise ValueError("span must contain at least one frame")
    return y_sig.sample_times[k0:k1 + 1]


def _samples_on(sig: InputSignal, grid):
    k0 = int(round((grid[0] - sig.t0) / sig.dt))
    return sig.samples[k0:k0 + len(grid)]


# ----------------------------------------------------------------------------
# discrete-time transition map
# ----------------------------------------------------------------------------

@dataclass
class DiscreteMap:
    """Second-order Taylor step ``x + T phi + (T^2/2) J_phi phi``.

    ``phi(x, u) = A x + f(x, u) + B_w r``.  Calls accept batches of states
    ``(..., n_x)``.
    """

    model: PlantModel
    T_s: float
    r: np.ndarray

    def __post_init__(self):
        self.T_s = check_positive(self.T_s, "T_s")
        self.r = as_vector(self.r, self.model.n_w, "r")
        self._Bwr = self.model.B_w @ self.r

    def phi(self, x, u):
        return x @ self.model.A.T + self.model.f(x, u) + self._Bwr

    def jac_phi(self, x, u):
        return self.model.A + self.model.jac_f(x, u)

    def __call__(self, x, u):
        x = np.asarray(x, float)
        T = self.T_s
        p = self.phi(x, u)
        Jp = np.einsum("...ij,...j->...i", self.jac_phi(x, u), p)
        return x + T * p + 0.5 * T * T * Jp

    def jacobian(self, x, u):
        """State Jacobian of the map, dropping the curvature of ``phi``."""
        T = self.T_s
        J = self.jac_phi(x, u)
        return np.eye(self.model.n_x) + T * J + 0.5 * T * T * (J @ J)


def discretize_2nd_order(model: PlantModel, T_s: float = T_S, r=None) -> DiscreteMap:
    """Discrete transition map with the nominal unknown input ``r`` appended."""
    r = np.zeros(model.n_w) if r is None else r
    return DiscreteMap(model, T_s, r)


# ----------------------------------------------------------------------------
# Kalman filters
# ----------------------------------------------------------------------------

@dataclass
class KalmanState:
    """Filter state between samples.

    ``P`` is the covariance; the square-root filter additionally keeps the
    lower-triangular factor ``S`` with ``S S^T = P``.  ``u_prev`` is the
    input of the previous sample, used by the next prediction.
    """

    x_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dmap: DiscreteMap
    S: Optional[np.ndarray] = None
    sigma: tuple = (UKF_ALPHA, UKF_BETA, UKF_KAPPA)
    u_prev: Optional[np.ndarray] = None
    k: int = 0

    @property
    def model(self) -> PlantModel:
        return self.dmap.model

    @property
    def T_s(self) -> float:
        return self.dmap.T_s

    @classmethod
    def create(cls, model: PlantModel, x_hat0, P0, Q, R, r, T_s: float = T_S,
               sigma=(UKF_ALPHA, UKF_BETA, UKF_KAPPA), square_root: bool = False):
        n = model.n_x
        P0 = as_psd(P0, n, "P0")
        st = cls(as_vector(x_hat0, n, "x_hat0"), P0, as_psd(Q, n, "Q"),
                 as_psd(R, model.n_y, "R"), discretize_2nd_order(model, T_s, r),
                 sigma=tuple(sigma))
        if square_root:
            st.S = _chol(P0, CholeskyFailure, 0)
        return st


def _chol(P, exc, k):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise exc(f"covariance lost positive definiteness at sample {k}", k) from None


def _output(st: KalmanState, x, u):
    m = st.model
    return m.h(x, u) + m.feedthrough(u, st.dmap.r)


def ekf_step(st: KalmanState, u_k, y_k) -> KalmanState:
    """One predict/update cycle of the extended Kalman filter."""
    u_k = np.asarray(u_k, float)
    u_p = u_k if st.u_prev is None else st.u_prev
    n = st.model.n_x
    x_pred = st.dmap(st.x_hat, u_p)
    F = st.dmap.jacobian(st.x_hat, u_p)
    P_pred = F @ st.P @ F.T + st.Q
    H = st.model.jac_h(x_pred, u_k)
    innov = np.asarray(y_k, float) - _output(st, x_pred, u_k)
    Sy = H @ P_pred @ H.T + st.R
    K = sla.solve(Sy, H @ P_pred, assume_a="pos").T
    IKH = np.eye(n) - K @ H
    P = IKH @ P_pred @ IKH.T + K @ st.R @ K.T
    P = 0.5 * (P + P.T)
    x = x_pred + K @ innov
    k = st.k + 1
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise CovarianceNotPSD(f"non-finite estimate at sample {k}", k)
    if np.linalg.eigvalsh(P)[0] < -1e-10 * max(1.0, np.abs(P).max()):
        raise CovarianceNotPSD(f"covariance indefinite at sample {k}", k)
    return replace(st, x_hat=x, P=P, u_prev=u_k, k=k)


def sigma_weights(n: int, alpha: float = UKF_ALPHA, beta: float = UKF_BETA,
                  kappa: float = UKF_KAPPA):
    """Scaled unscented-transform weights ``(Wm, Wc, c)``.

    ``c = sqrt(n + lambda)`` is the spread of the sigma points.
    """
    lam = alpha * alpha * (n + kappa) - n
    if n + lam <= 0:
        raise ValueError(f"sigma parameters give n + lambda = {n + lam:.3g} <= 0")
    Wm = np.full(2 * n + 1, 0.5 / (n + lam))
    Wc = Wm.copy()
    Wm[0] = lam / (n + lam)
    Wc[0] = Wm[0] + 1.0 - alpha * alpha + beta
    return Wm, Wc, math.sqrt(n + lam)


def _sigma_points(x, S, c):
    return np.vstack([x, x + c * S.T, x - c * S.T])


def _weighted_cov(Wc, D, E=None):
    E = D if E is None else E
    return (D * Wc[:, None]).T @ E


def ukf_step(st: KalmanState, u_k, y_k) -> KalmanState:
    """One predict/update cycle of the unscented Kalman filter."""
    u_k = np.asarray(u_k, float)
    u_p = u_k if st.u_prev is None else st.u_prev
    k = st.k + 1
    Wm, Wc, c = sigma_weights(st.model.n_x, *st.sigma)
    X = _sigma_points(st.x_hat, _chol(st.P, CholeskyFailure, k), c)
    Xp = st.dmap(X, u_p)
    x_pred = Wm @ Xp
    D = Xp - x_pred
    P_pred = _weighted_cov(Wc, D) + st.Q
    P_pred = 0.5 * (P_pred + P_pred.T)
    # redraw around the predicted moments
    X2 = _sigma_points(x_pred, _chol(P_pred, CholeskyFailure, k), c)
    Y = _output(st, X2, u_k)
    y_pred = Wm @ Y
    DY = Y - y_pred
    Pyy = _weighted_cov(Wc, DY) + st.R
    Pxy = _weighted_cov(Wc, X2 - x_pred, DY)
    try:
        K = sla.solve(Pyy, Pxy.T, assume_a="pos").T
    except (np.linalg.LinAlgError, sla.LinAlgError):
        raise CholeskyFailure(f"innovation covariance singular at sample {k}", k) from None
    x = x_pred + K @ (np.asarray(y_k, float) - y_pred)
    P = P_pred - K @ Pyy @ K.T
    P = 0.5 * (P + P.T)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise CholeskyFailure(f"non-finite estimate at sample {k}", k)
    return replace(st, x_hat=x, P=P, u_prev=u_k, k=k)


def cholupdate(S, v, sign: float = 1.0) -> np.ndarray:
    """Rank-one update (``sign > 0``) or downdate of a lower Cholesky factor.

    Returns ``S'`` with ``S' S'^T = S S^T + sign * v v^T``.

    Raises
    ------
    DowndateFailure
        The downdated matrix is not positive definite.
    """
    S = np.array(S, float)
    v = np.array(v, float)
    sgn = 1.0 if sign > 0 else -1.0
    n = len(v)
    for j in range(n):
        d = S[j, j]
        r2 = d * d + sgn * v[j] * v[j]
        if not r2 > 0.0 or d == 0.0:
            raise DowndateFailure("Cholesky downdate lost positive definiteness")
        rr = math.sqrt(r2)
        cc, ss = rr / d, v[j] / d
        S[j, j] = rr
        if j + 1 < n:
            S[j + 1:, j] = (S[j + 1:, j] + sgn * ss * v[j + 1:]) / cc
            v[j + 1:] = cc * v[j + 1:] - ss * S[j + 1:, j]
    return S


def _qr_factor(M):
    """Lower-triangular ``S`` with ``S S^T = M^T M`` and positive diagonal."""
    Rm = np.linalg.qr(M, mode="r")
    S = Rm.T
    sgn = np.sign(np.diag(S))
    sgn[sgn == 0] = 1.0
    return S * sgn


def _sqrt_psd(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(M)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _sr_moment(Wc, D, sqrt_noise, k):
    """Square root of ``sum Wc_i d_i d_i^T + noise`` via QR plus a signed
    rank-one correction for the central point."""
    w1 = math.sqrt(Wc[1])
    S = _qr_factor(np.vstack([w1 * D[1:], sqrt_noise.T]))
    try:
        return cholupdate(S, math.sqrt(abs(Wc[0])) * D[0], np.sign(Wc[0]) or 1.0)
    except DowndateFailure:
        raise DowndateFailure(f"central sigma-point downdate failed at sample {k}", k) from None


def srukf_step(st: KalmanState, u_k, y_k) -> KalmanState:
    """One predict/update cycle of the square-root unscented Kalman filter."""
    if st.S is None:
        raise ValueError("square-root filter state needs S; use KalmanState.create(square_root=True)")
    u_k = np.asarray(u_k, float)
    u_p = u_k if st.u_prev is None else st.u_prev
    k = st.k + 1
    Wm, Wc, c = sigma_weights(st.model.n_x, *st.sigma)
    X = _sigma_points(st.x_hat, st.S, c)
    Xp = st.dmap(X, u_p)
    x_pred = Wm @ Xp
    S_pred = _sr_moment(Wc, Xp - x_pred, _sqrt_psd(st.Q), k)
    X2 = _sigma_points(x_pred, S_pred, c)
    Y = _output(st, X2, u_k)
    y_pred = Wm @ Y
    DY = Y - y_pred
    S_y = _sr_moment(Wc, DY, _sqrt_psd(st.R), k)
    Pxy = _weighted_cov(Wc, X2 - x_pred, DY)
    # K = Pxy (S_y S_y^T)^{-1} by two triangular solves
    tmp = sla.solve_triangular(S_y, Pxy.T, lower=True)
    K = sla.solve_triangular(S_y.T, tmp, lower=False).T
    x = x_pred + K @ (np.asarray(y_k, float) - y_pred)
    U = K @ S_y
    S = S_pred
    try:
        for j in range(U.shape[1]):
            S = cholupdate(S, U[:, j], -1.0)
    except DowndateFailure:
        raise DowndateFailure(f"measurement downdate failed at sample {k}", k) from None
    if not np.all(np.isfinite(x)):
        raise DowndateFailure(f"non-finite estimate at sample {k}", k)
    return replace(st, x_hat=x, S=S, P=S @ S.T, u_prev=u_k, k=k)


_STEPS = {"ekf": ekf_step, "ukf": ukf_step, "srukf": srukf_step}


def run_filter(kind: str, st: KalmanState, U, Y) -> np.ndarray:
    """Run a filter over a sample stream; row 0 is the initial estimate.

    Sample ``k >= 1`` predicts with ``U[k-1]`` and corrects with ``Y[k]``.
    """
    step = _STEPS[kind]
    U = as_samples(U, name="U")
    Y = as_samples(Y, name="Y")
    if len(U) != len(Y):
        raise ValueError("U and Y must have the same number of samples")
    out = np.empty((len(Y), st.model.n_x))
    out[0] = st.x_hat
    st = replace(st, u_prev=U[0])
    for k in range(1, len(Y)):
        st = step(st, U[k], Y[k])
        out[k] = st.x_hat
    return out


# ----------------------------------------------------------------------------
# estimator objects
# ----------------------------------------------------------------------------

class _ModelEstimator(BaseEstimator):
    """Estimators are fitted to a plant model and predict state trajectories
    from a measurement stream ``(U, Y)`` sampled at the PMU rate."""

    def fit(self, model: PlantModel, y=None):
        if not isinstance(model, PlantModel):
            raise TypeError("fit expects a PlantModel")
        self.model_ = model
        self.r_ = as_vector(self.r, model.n_w, "r")
        self._fit_extra(model)
        return self

    def _fit_extra(self, model):
        pass

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted; call fit(model) first")


class LinfObserver(_ModelEstimator):
    """Continuous-time robust observer with a constant gain.

    Parameters
    ----------
    design : ObserverDesign
        Synthesized gain and certificate.
    r : array_like
        Nominal unknown-input guess.
    y_interpolation : {"hold", "linear"}
    rel_tol, abs_tol : float
        Integrator tolerances.
    """

    def __init__(self, design: Optional[ObserverDesign] = None, r=(0.0, 0.0),
                 y_interpolation: str = "hold", rel_tol: float = 1e-3, abs_tol: float = 1e-6):
        self.design = design
        self.r = r
        self.y_interpolation = y_interpolation
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol

    def _fit_extra(self, model):
        if self.design is None:
            raise ValueError("LinfObserver needs a design")
        if model.C is None:
            raise ValueError("model has no output matrix")
        if self.design.L.shape != (model.n_x, model.n_y):
            raise ValueError("design gain does not fit the model")

    def predict(self, U, Y, x0, t0: float = 0.0, rate: float = PMU_RATE) -> np.ndarray:
        self._check_fitted()
        U = as_samples(U, self.model_.D_u.shape[1] - self.model_.n_w, "U")
        Y = as_samples(Y, self.model_.n_y, "Y")
        u_sig = InputSignal.uniform(U, t0, rate, interpolation=self.y_interpolation)
        y_sig = InputSignal.uniform(Y, t0, rate, interpolation=self.y_interpolation)
        tr = run_linf_observer(self.model_, self.design, x0, u_sig, y_sig, self.r_,
                               y_interpolation=self.y_interpolation,
                               rel_tol=self.rel_tol, abs_tol=self.abs_tol)
        self.trajectory_ = tr
        return tr.states


class _KalmanEstimator(_ModelEstimator):
    kind = "ekf"
    square_root = False

    def __init__(self, Q=None, R=None, P0=None, r=(0.0, 0.0), T_s: float = T_S,
                 alpha: float = UKF_ALPHA, beta: float = UKF_BETA, kappa: float = UKF_KAPPA):
        self.Q = Q
        self.R = R
        self.P0 = P0
        self.r = r
        self.T_s = T_s
        self.alpha = alpha
        self.beta = beta
        self.kappa = kappa

    def _fit_extra(self, model):
        n = model.n_x
        self.Q_ = as_psd(np.zeros(n) if self.Q is None else self.Q, n, "Q")
        self.R_ = as_psd(np.full(model.n_y, 1e-4) if self.R is None else self.R, model.n_y, "R")
        if self.P0 is None:
            if n != 4:
                raise ValueError("P0 must be given for models other than the 4th-order one")
            P0 = np.diag(P0_DIAG_ORDER4)
        else:
            P0 = self.P0
        self.P0_ = as_psd(P0, n, "P0")
        if self.kind != "ekf":
            sigma_weights(n, self.alpha, self.beta, self.kappa)

    def initial_state(self, x0) -> KalmanState:
        self._check_fitted()
        return KalmanState.create(self.model_, x0, self.P0_, self.Q_, self.R_, self.r_,
                                  self.T_s, (self.alpha, self.beta, self.kappa),
                                  square_root=self.square_root)

    def predict(self, U, Y, x0) -> np.ndarray:
        """Filtered estimates, one row per sample.

        Raises
        ------
        EstimatorDiverged
            The covariance (or its factor) became invalid.
        """
        st = self.initial_state(x0)
        return run_filter(self.kind, st, U, Y)


class ExtendedKalmanFilter(_KalmanEstimator):
    """EKF on the second-order Taylor discretization."""

    kind = "ekf"


class UnscentedKalmanFilter(_KalmanEstimator):
    """UKF with scaled sigma points."""

    kind = "ukf"


class SquareRootUKF(_KalmanEstimator):
    """UKF propagating a Cholesky factor of the covariance."""

    kind = "srukf"
    square_root = True


ESTIMATORS = {
    "observer": LinfObserver,
    "ekf": ExtendedKalmanFilter,
    "ukf": UnscentedKalmanFilter,
    "srukf": SquareRootUKF,
}
