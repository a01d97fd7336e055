"""Adaptive Dormand-Prince 5(4) integration and sampled input signals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

PMU_RATE = 60.0


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


class OutOfRange(ValueError):
    pass


# Dormand & Prince (1980) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
# square, zero-padded copy; the last row doubles as the 5th-order weights
_A_FULL = np.array([row + [0.0] * (7 - len(row)) for row in _A])
# difference between 5th and embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Hairer's continuous extension (order 4)
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])


@dataclass
class Trajectory:
    """States sampled at strictly increasing times.

    ``meta`` carries integrator statistics (``steps``, ``rejected``,
    ``nfev``).  When dense output was requested ``sol(t)`` evaluates the
    4th-order interpolant anywhere inside the span.
    """

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    _segments: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.states = np.asarray(self.states, float)
        if self.times.ndim != 1 or len(self.times) != len(self.states):
            raise ValueError("times and states must align")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise NonFiniteState("trajectory contains non-finite states")

    def __len__(self):
        return len(self.times)

    def sol(self, t):
        if self._segments is None:
            raise ValueError("trajectory was integrated without dense output")
        t = float(t)
        starts = self._seg_t0
        i = int(np.searchsorted(starts, t, side="right")) - 1
        i = min(max(i, 0), len(self._segments) - 1)
        t0, h, rc = self._segments[i]
        if t < t0 - 1e-12 or t > t0 + h + 1e-12:
            raise OutOfRange(f"t={t} outside integrated span")
        th = (t - t0) / h
        th1 = 1.0 - th
        return rc[0] + th * (rc[1] + th1 * (rc[2] + th * (rc[3] + th1 * rc[4])))

    @property
    def _seg_t0(self):
        if not hasattr(self, "_t0cache"):
            self._t0cache = np.array([s[0] for s in self._segments])
        return self._t0cache


class Dopri5:
    """Stateful Dormand-Prince stepper with PI step-size control.

    ``advance(rhs, t_target)`` integrates up to exactly ``t_target`` and may
    be called repeatedly with different right-hand sides (piecewise-defined
    inputs); the step size carries over between calls.
    """

    safety = 0.9
    beta = 0.04
    fac_min = 0.2
    fac_max = 10.0

    def __init__(self, x0, t0, rtol=1e-3, atol=1e-6, h0=None, max_step=np.inf,
                 span=1.0, dense=False):
        if rtol <= 0 or atol <= 0:
            raise ValueError("tolerances must be positive")
        self.t = float(t0)
        self.x = np.array(x0, dtype=float)
        self.rtol = rtol
        self.atol = atol
        self.h = h0
        self.max_step = max_step
        self.h_min = 1e-14 * abs(span)
        self.err_old = 1e-4
        self.steps = 0
        self.rejected = 0
        self.nfev = 0
        self.segments = [] if dense else None
        self._k1 = None
        self._rhs = None

    def _eval(self, rhs, t, x):
        # non-finite stages surface through the error estimate of the step
        self.nfev += 1
        return rhs(t, x)

    def _initial_step(self, rhs, k1, t_end):
        sc = self.atol + np.abs(self.x) * self.rtol
        d0 = np.sqrt(np.mean((self.x / sc) ** 2))
        d1 = np.sqrt(np.mean((k1 / sc) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, abs(t_end - self.t))
        x1 = self.x + h0 * k1
        k2 = self._eval(rhs, self.t + h0, x1)
        d2 = np.sqrt(np.mean(((k2 - k1) / sc) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            # no dynamics to resolve; the error estimate still guards the step
            return min(abs(t_end - self.t), self.max_step)
        h1 = (0.01 / max(d1, d2)) ** 0.2
        return min(100 * h0, h1, self.max_step)

    def advance(self, rhs: Callable, t_target: float):
        if rhs is not self._rhs:
            self._rhs = rhs
            self._k1 = None
        if self._k1 is None:
            self._k1 = self._eval(rhs, self.t, self.x)
        if self.h is None:
            self.h = self._initial_step(rhs, self._k1, t_target)
        expo1 = 0.2 - self.beta * 0.75
        while self.t < t_target:
            remaining = t_target - self.t
            last = False
            h = min(self.h, self.max_step)
            if h >= remaining * (1 - 1e-12):
                h = remaining
                last = True
            if h < self.h_min:
                raise StepSizeUnderflow(
                    f"step size {h:.3e} below minimum {self.h_min:.3e} at t={self.t}")
            t, x, k1 = self.t, self.x, self._k1
            K = np.zeros((7, x.shape[0]))
            K[0] = k1
            hA = h * _A_FULL
            for s in range(1, 6):
                K[s] = self._eval(rhs, t + _C[s] * h, x + hA[s] @ K)
            x_new = x + hA[6] @ K
            K[6] = self._eval(rhs, t + h, x_new)
            ratio = h * (_E @ K) / (self.atol + np.maximum(np.abs(x), np.abs(x_new)) * self.rtol)
            err = math.sqrt(float(ratio @ ratio) / ratio.shape[0])
            if not math.isfinite(err):
                raise NonFiniteState(f"non-finite error estimate at t={t}")
            if err <= 1.0:
                fac11 = max(err, 1e-10) ** expo1
                fac = fac11 / (self.err_old ** self.beta)
                fac = min(1.0 / self.fac_min, max(1.0 / self.fac_max, fac / self.safety))
                h_next = h / fac
                self.err_old = max(err, 1e-4)
                if self.segments is not None:
                    ydiff = x_new - x
                    bspl = h * k1 - ydiff
                    rc = (x.copy(), ydiff, bspl, ydiff - h * K[6] - bspl,
                          h * (_D @ K))
                    self.segments.append((t, h, rc))
                self.t = t_target if last else t + h
                self.x = x_new
                self._k1 = K[6]
                self.steps += 1
                if not last or h_next < self.h:
                    self.h = h_next
            else:
                fac11 = err ** expo1
                self.h = h / min(1.0 / self.fac_min, fac11 / self.safety)
                self.rejected += 1
        return self.x


def integrate_adaptive(rhs: Callable, x0, t_span, rel_tol=1e-3, abs_tol=1e-6,
                       t_eval: Optional[Sequence[float]] = None, max_step=np.inf,
                       dense_output=False) -> Trajectory:
    """Integrate ``x' = rhs(t, x)`` over ``t_span`` with Dormand-Prince 5(4).

    Steps always land on the points of ``t_eval`` (default: the two span
    endpoints), so inputs that are smooth between those points are never
    stepped across.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, x) -> dx``.
    x0 : array_like
        Initial state.
    t_span : (float, float)
        Start and end time, ``tf > t0``.
    rel_tol, abs_tol : float
        Local error tolerances.  The defaults match ode45's.
    t_eval : sequence of float, optional
        Output times inside the span, strictly increasing.
    max_step : float
        Upper bound on the internal step size.
    dense_output : bool
        Keep the continuous extension for ``Trajectory.sol``.

    Raises
    ------
    StepSizeUnderflow
        The required step fell below ``1e-14`` times the span.
    NonFiniteState
        The right-hand side produced NaN or inf.
    """
    t0, tf = float(t_span[0]), float(t_span[1])
    if not tf > t0:
        raise ValueError("need tf > t0")
    if t_eval is None:
        grid = np.array([t0, tf])
    else:
        grid = np.asarray(t_eval, float)
        if grid[0] < t0 - 1e-12 or grid[-1] > tf + 1e-12:
            raise ValueError("t_eval outside t_span")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("t_eval must be strictly increasing")
    stepper = Dopri5(x0, t0, rel_tol, abs_tol, max_step=max_step, span=tf - t0,
                     dense=dense_output)
    out = []
    for tk in grid:
        if tk > stepper.t:
            stepper.advance(rhs, tk)
        out.append(stepper.x.copy())
    meta = {"steps": stepper.steps, "rejected": stepper.rejected, "nfev": stepper.nfev}
    return Trajectory(grid, np.array(out), meta, _segments=stepper.segments)


def integrate_piecewise(rhs_k: Callable[[int], Callable], x0, grid, rel_tol=1e-3,
                        abs_tol=1e-6, max_step=np.inf) -> Trajectory:
    """Integrate across a sample grid where the right-hand side changes per frame.

    ``rhs_k(k)`` returns the vector field valid on ``[grid[k], grid[k+1]]``;
    used for zero-order-held measurements and frame-constant process noise.
    """
    grid = np.asarray(grid, float)
    stepper = Dopri5(x0, grid[0], rel_tol, abs_tol, max_step=max_step,
                     span=grid[-1] - grid[0])
    out = [stepper.x.copy()]
    for k in range(len(grid) - 1):
        stepper.advance(rhs_k(k), grid[k + 1])
        out.append(stepper.x.copy())
    meta = {"steps": stepper.steps, "rejected": stepper.rejected, "nfev": stepper.nfev}
    return Trajectory(grid, np.array(out), meta)


@dataclass
class InputSignal:
    """Uniformly sampled vector signal with hold or linear interpolation."""

    sample_times: np.ndarray
    samples: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        self.sample_times = np.asarray(self.sample_times, float)
        self.samples = np.asarray(self.samples, float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if len(self.sample_times) != len(self.samples):
            raise ValueError("sample_times and samples must have equal length")
        if len(self.sample_times) < 2:
            raise ValueError("need at least two samples")
        if self.interpolation not in ("hold", "linear"):
            raise ValueError("interpolation must be 'hold' or 'linear'")
        dt = np.diff(self.sample_times)
        if np.any(dt <= 0):
            raise ValueError("sample_times must be strictly increasing")
        self.t0 = float(self.sample_times[0])
        self.dt = float(dt.mean())
        if np.max(np.abs(dt - self.dt)) > 1e-9 * max(1.0, self.dt):
            raise ValueError("sample_times must be uniformly spaced")

    @classmethod
    def uniform(cls, samples, t0=0.0, rate=PMU_RATE, interpolation="linear"):
        samples = np.asarray(samples, float)
        times = t0 + np.arange(len(samples)) / rate
        return cls(times, samples, interpolation)

    @property
    def t_end(self) -> float:
        return float(self.sample_times[-1])

    def frame(self, t) -> int:
        """Index of the sample interval containing ``t`` (right end belongs to the last)."""
        k = int(np.floor((t - self.t0) / self.dt + 1e-9))
        return min(max(k, 0), len(self.sample_times) - 1)

    def __call__(self, t):
        return eval_input(self, t)


def eval_input(sig: InputSignal, t) -> np.ndarray:
    """Zero-order hold or linear interpolation of ``sig`` at time ``t``."""
    t = float(t)
    tol = 1e-9 * max(1.0, sig.dt)
    if t < sig.t0 - tol or t > sig.t_end + tol:
        raise OutOfRange(f"t={t} outside signal span [{sig.t0}, {sig.t_end}]")
    pos = (t - sig.t0) / sig.dt
    k = int(np.floor(pos + 1e-9))
    n = len(sig.sample_times)
    if k >= n - 1:
        return sig.samples[-1].copy()
    k = max(k, 0)
    if sig.interpolation == "hold":
        return sig.samples[k].copy()
    th = pos - k
    if th <= 1e-9:
        return sig.samples[k].copy()
    a = sig.samples[k]
    return a + th * (sig.samples[k + 1] - a)
