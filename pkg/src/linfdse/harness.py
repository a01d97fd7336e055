"""Scenario runner: plant simulation, estimator comparison and metrics.

A scenario builds the nominal model and an observer design, simulates a
(possibly perturbed) plant under unknown inputs and noise, feeds every
requested estimator the same sampled measurement stream and reports error
metrics on the common 60 Hz grid.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import fsolve

from ._validation import as_samples, as_vector
from .estimators import (ESTIMATORS, P0_DIAG_ORDER4, T_S, EstimatorDiverged, NoiseSpec,
                         sample_noise)
from .integrate import PMU_RATE, InputSignal, integrate_piecewise
from .lipschitz import plant_gammas
from .models import (OMEGA0, MachineParams, MachineParams10, OperatingBox, PlantModel,
                     build_plant, build_plant_10th, default_box, equilibrium_10th)
from .synthesis import (ObserverDesign, SynthesisInput, max_feasible_gamma_scale,
                        relax_lower, RelaxationBounds, synthesize_upper)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_R = (0.9, 2.1)
DEFAULT_X0 = (1.1548, OMEGA0, 0.8632, 0.6222)
DEFAULT_X_HAT0 = (0.7548, OMEGA0, 1.3632, 0.8222)
PLOT_SCALE = 5e3
# share of the largest feasible Lipschitz scale used for the default design;
# the gain grows quickly as this drops, and very close to 1 slows convergence
DESIGN_FRACTION = 0.95
CSV_COLUMNS = ("t", "i_R", "i_I", "T_m", "E_fd")


class GridMismatch(ValueError):
    pass


class OverlapError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Edit:
    """Additive change to one unknown-input channel.

    ``step`` adds ``magnitude`` on ``[t_start, t_end]``; ``ramp`` rises
    linearly from 0 to ``magnitude`` over the window and holds afterwards.
    """

    channel: int
    t_start: float
    t_end: float
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in ("step", "ramp"):
            raise ValueError(f"edit kind must be 'step' or 'ramp', got {self.kind!r}")
        if not self.t_end > self.t_start:
            raise ValueError("edit window must have t_end > t_start")


@dataclass(frozen=True)
class SyntheticSpec:
    """Unknown inputs that settle from a disturbance.

    Each channel is ``steady + amplitude * env(t) * sin(2 pi freq (t - t_fault) + phase)``
    with ``env`` rising over ``rise`` seconds and decaying with time
    constant ``tau``; phases are drawn from the seed.  The known input
    channels (currents) follow the same form around ``u_steady`` and are
    used only when the network is ``prescribed``.
    """

    steady: tuple = (0.79, 1.88)
    amplitude: tuple = (0.04, 0.12)
    freq_hz: tuple = (0.9, 0.5)
    tau: tuple = (2.0, 3.0)
    t_fault: float = 1.0
    rise: float = 0.05
    u_steady: tuple = (0.79, 0.055)
    u_amplitude: tuple = (0.0, 0.0)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SyntheticSpec":
        d = dict(d or {})
        d.pop("source", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic-input fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one case.

    ``network`` closes the loop between machine and grid:
    ``{"kind": "infinite_bus", "V": 1.0, "X_e": 0.3}`` solves the terminal
    currents from the machine state, ``{"kind": "prescribed"}`` uses the
    input trajectory's currents as given.

    ``process_noise`` accepts a plain noise spec or ``{"kind": "gaussian",
    "relative": 0.05}``, meaning a per-state standard deviation of that
    fraction of the state's range on the noise-free run.
    """

    case: str = "case1"
    model: str = "order4"
    machine: dict = field(default_factory=dict)
    box: Optional[dict] = None
    network: dict = field(default_factory=lambda: {"kind": "infinite_bus", "V": 1.0, "X_e": 0.3})
    inputs: dict = field(default_factory=lambda: {"source": "synthetic"})
    process_noise: dict = field(default_factory=lambda: {"kind": "none"})
    measurement_noise: dict = field(default_factory=lambda: {"kind": "none"})
    r: Sequence[float] = DEFAULT_R
    x0: Optional[Sequence[float]] = DEFAULT_X0
    x_hat0: Optional[Sequence[float]] = DEFAULT_X_HAT0
    t_span: Sequence[float] = (0.0, 15.0)
    delta: float = 0.0
    edits: list = field(default_factory=list)
    estimators: Sequence[str] = ("observer",)
    seed: int = 0
    design: dict = field(default_factory=dict)
    filters: dict = field(default_factory=dict)
    output_scale: float = 10.0
    y_interpolation: str = "hold"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.model not in ("order4", "order10"):
            raise ConfigError("model must be 'order4' or 'order10'")
        if not 0.0 <= float(self.delta) <= 1.0:
            raise ConfigError("delta must lie in [0, 1]")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {sorted(ESTIMATORS)}")
        if self.network.get("kind") not in ("infinite_bus", "prescribed"):
            raise ConfigError("network kind must be 'infinite_bus' or 'prescribed'")
        if self.inputs.get("source", "synthetic") not in ("synthetic", "csv"):
            raise ConfigError("inputs source must be 'synthetic' or 'csv'")
        t0, t1 = map(float, self.t_span)
        if not t1 > t0:
            raise ConfigError("t_span must be increasing")
        self.edit_list = [e if isinstance(e, Edit) else Edit(**e) for e in self.edits]

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d.setdefault("schema_version", SCHEMA_VERSION)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            d = json.load(fh)
        cfg = cls.from_dict(d)
        src = cfg.inputs.get("path")
        if src and not Path(src).is_absolute():
            cfg.inputs = dict(cfg.inputs, path=str(Path(path).parent / src))
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("edit_list", None)
        d["edits"] = [asdict(e) for e in self.edit_list]
        for k in ("r", "x0", "x_hat0", "t_span", "estimators"):
            if d[k] is not None:
                d[k] = [float(v) if k != "estimators" else v for v in d[k]]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------

def rmse(x_traj, x_hat_traj, times=None, times_hat=None) -> float:
    """Sum over states of each state's root-mean-square error."""
    X = as_samples(x_traj, name="x_traj")
    Xh = as_samples(x_hat_traj, name="x_hat_traj")
    if X.shape != Xh.shape:
        raise GridMismatch(f"trajectory shapes differ: {X.shape} vs {Xh.shape}")
    if times is not None and times_hat is not None:
        if len(times) != len(times_hat) or np.max(np.abs(np.asarray(times) - times_hat)) > 1e-9:
            raise GridMismatch("trajectories are sampled on different grids")
    return float(np.sum(np.sqrt(np.mean((X - Xh) ** 2, axis=0))))


@dataclass(frozen=True)
class StgResult:
    verdict: bool
    margin: float
    z_max: float
    bound: float


def stg_check(times, z_norm, mu_bar: float, w_inf: float, window=(10.0, 15.0)) -> StgResult:
    """Compare the peak of ``z_norm`` over ``window`` with ``mu_bar * w_inf``.

    ``margin`` is the ratio of peak to bound (0 when both vanish).
    """
    t = np.asarray(times, float)
    z = np.asarray(z_norm, float)
    if t.shape != z.shape:
        raise GridMismatch("times and z_norm must align")
    lo, hi = window
    if t[0] > lo + 1e-9 or t[-1] < hi - 1e-9:
        raise ValueError(f"series [{t[0]}, {t[-1]}] does not cover window {window}")
    sel = (t >= lo - 1e-9) & (t <= hi + 1e-9)
    z_max = float(np.max(z[sel]))
    bound = float(mu_bar) * float(w_inf)
    if bound > 0:
        margin = z_max / bound
    else:
        margin = 0.0 if z_max == 0 else np.inf
    return StgResult(bool(z_max <= bound), margin, z_max, bound)


def w_linf(q_traj, r) -> float:
    """Peak Euclidean norm of ``q - r`` over the samples."""
    Q = as_samples(q_traj, name="q_traj")
    if len(Q) == 0:
        raise ValueError("q_traj is empty")
    r = as_vector(r, Q.shape[1], "r")
    return float(np.max(np.linalg.norm(Q - r, axis=1)))


def apply_edits(times, q_traj, edits: Sequence[Edit]) -> np.ndarray:
    """Unknown inputs with step/ramp edits added."""
    t = np.asarray(times, float)
    Q = np.array(as_samples(q_traj, name="q_traj"))
    by_channel: dict = {}
    for e in edits:
        if not 0 <= e.channel < Q.shape[1]:
            raise ValueError(f"edit channel {e.channel} out of range")
        if e.t_start < t[0] - 1e-9 or e.t_end > t[-1] + 1e-9:
            raise ValueError(f"edit window [{e.t_start}, {e.t_end}] outside the signal span")
        by_channel.setdefault(e.channel, []).append(e)
    for ch, lst in by_channel.items():
        lst = sorted(lst, key=lambda e: e.t_start)
        for a, b in zip(lst, lst[1:]):
            if b.t_start < a.t_end:
                raise OverlapError(f"edits on channel {ch} overlap at t={b.t_start}")
        for e in lst:
            if e.kind == "step":
                inside = (t >= e.t_start) & (t <= e.t_end)
                Q[inside, ch] += e.magnitude
            else:
                frac = np.clip((t - e.t_start) / (e.t_end - e.t_start), 0.0, 1.0)
                Q[:, ch] += e.magnitude * frac
    return Q


def synth_inputs(spec: SyntheticSpec, seed: int, times) -> tuple:
    """Known and unknown input trajectories ``(u_traj, q_traj)`` on ``times``."""
    t = np.asarray(times, float)
    rng = np.random.default_rng([seed, 7])
    n_q, n_u = len(spec.steady), len(spec.u_steady)
    phases = rng.uniform(0.0, 2 * np.pi, n_q + n_u)
    s = np.clip(t - spec.t_fault, 0.0, None)
    rise = 1.0 - np.exp(-s / spec.rise) if spec.rise > 0 else (s > 0).astype(float)

    def channel(steady, amp, freq, tau, phase):
        env = rise * np.exp(-s / tau)
        return steady + amp * env * np.sin(2 * np.pi * freq * s + phase)

    q = np.column_stack([channel(spec.steady[i], spec.amplitude[i], spec.freq_hz[i],
                                 spec.tau[i], phases[i]) for i in range(n_q)])
    u = np.column_stack([channel(spec.u_steady[i], spec.u_amplitude[i], spec.freq_hz[i % n_q],
                                 spec.tau[i % n_q], phases[n_q + i]) for i in range(n_u)])
    return u, q


# ----------------------------------------------------------------------------
# CSV trajectories
# ----------------------------------------------------------------------------

def read_inputs_csv(path) -> tuple:
    """``(t, u, q)`` from a ``t,i_R,i_I,T_m,E_fd`` file sampled at 60 Hz."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(CSV_COLUMNS)}")
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], float)
    if data.ndim != 2 or data.shape[1] != 5 or len(data) < 2:
        raise ValueError(f"{path}: need at least two rows of five columns")
    t = data[:, 0]
    dt = np.diff(t)
    if np.any(np.abs(dt - 1.0 / PMU_RATE) > 1e-6):
        raise ValueError(f"{path}: samples must be spaced 1/{PMU_RATE:g} s apart")
    return t, data[:, 1:3], data[:, 3:5]


def write_inputs_csv(path, t, u, q) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in np.column_stack([t, u, q]):
            w.writerow([f"{v:.10g}" for v in row])


# ----------------------------------------------------------------------------
# model, network and design
# ----------------------------------------------------------------------------

def nominal_model(cfg: ScenarioConfig) -> tuple:
    """Nominal plant with its output matrix set, plus the operating box."""
    if cfg.model == "order4":
        plant = build_plant(MachineParams.from_dict(cfg.machine) if cfg.machine else None)
        box = OperatingBox.from_dict(cfg.box) if cfg.box else default_box()
    else:
        p = MachineParams10.from_dict(cfg.machine) if cfg.machine else MachineParams10()
        plant = build_plant_10th(p)
        box = OperatingBox.from_dict(cfg.box) if cfg.box else default_box_10th(p)
    C = plant.linearize_output(box.x_mid, box.u_mid, cfg.output_scale)
    return plant.with_output_matrix(C), box


def default_box_10th(p: Optional[MachineParams10] = None) -> OperatingBox:
    """Machine states from the 4th-order box; controller states within
    +-50 % (at least +-0.5) of their value at a loaded operating point."""
    x_eq, _, _ = equilibrium_10th(1.0, 0.9, 0.5, 1.88, p)
    base = default_box()
    half = np.maximum(0.5 * np.abs(x_eq[4:]), 0.5)
    return OperatingBox(np.concatenate([base.x_min, x_eq[4:] - half]),
                        np.concatenate([base.x_max, x_eq[4:] + half]),
                        base.u_min, base.u_max)


def perturb_plant(plant: PlantModel, delta: float) -> PlantModel:
    """Plant with ``A``, ``f`` and ``h`` all scaled by ``1 + delta``."""
    if delta == 0:
        return plant
    g = 1.0 + delta
    f, h, jf, jh = plant.f, plant.h, plant.jac_f, plant.jac_h
    return replace(plant, A=g * plant.A, f=lambda x, u: g * f(x, u), h=lambda x, u: g * h(x, u),
                   jac_f=lambda x, u: g * jf(x, u), jac_h=lambda x, u: g * jh(x, u),
                   C=None if plant.C is None else g * plant.C, extra=dict(plant.extra, delta=delta))


_J = np.array([[0.0, -1.0], [1.0, 0.0]])
_U3 = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def bus_currents(plant: PlantModel, x, q, V: float, X_e: float) -> np.ndarray:
    """Terminal currents of the machine feeding an infinite bus through ``X_e``.

    The terminal voltage is affine in the currents, so three output
    evaluations give it exactly; the line equation
    ``e_t = V + j X_e i`` then fixes the currents.
    """
    n_w = plant.n_w
    H3 = plant.h(np.broadcast_to(x, (3, len(x))), _U3)
    g = H3[0] + plant.D_u[:, :n_w] @ q + plant.D_w @ q
    M = (H3[1:] - H3[0]).T + plant.D_u[:, n_w:]
    return np.linalg.solve(M - X_e * _J, np.array([V, 0.0]) - g)


def network_equilibrium(plant: PlantModel, q, V: float, X_e: float, guess) -> np.ndarray:
    """Steady state of the machine on an infinite bus at fixed unknown inputs."""
    guess = np.asarray(guess, float).copy()
    guess[1] = OMEGA0
    # speed is pinned at synchronous, which zeroes the angle equation; the
    # remaining equations (torque balance first) fix the other states
    free = np.ones(plant.n_x, bool)
    free[1] = False
    eqs = np.ones(plant.n_x, bool)
    eqs[0] = False

    def full(z):
        x = guess.copy()
        x[free] = z
        return x, plant.rhs(x, bus_currents(plant, x, q, V, X_e), q)

    z, info, ok, msg = fsolve(lambda z: full(z)[1][eqs], guess[free], full_output=True,
                              xtol=1e-12)
    x, d = full(z)
    if ok != 1 or np.max(np.abs(d)) > 1e-8:
        raise RuntimeError(f"network equilibrium not found: {msg} "
                           f"(residual {np.max(np.abs(d)):.2e})")
    return x


def design_for(cfg: ScenarioConfig, model: Optional[PlantModel] = None,
               box: Optional[OperatingBox] = None) -> tuple:
    """Observer design for the scenario's nominal model.

    ``cfg.design`` keys: ``path`` (load a saved design), ``gamma_policy``
    (``fixed``, ``estimated`` or ``max_feasible``), ``gamma_f``, ``gamma_l``,
    ``z_scale``, ``nu4``, ``nu2``, ``fraction`` and ``budget``.
    Returns ``(design, info)``.
    """
    if model is None or box is None:
        model, box = nominal_model(cfg)
    d = dict(cfg.design)
    if d.get("path"):
        with open(d["path"]) as fh:
            return ObserverDesign.from_dict(json.load(fh)), {"source": d["path"]}
    policy = d.get("gamma_policy", "max_feasible")
    if policy not in ("fixed", "estimated", "max_feasible"):
        raise ConfigError(f"unknown gamma_policy {policy!r}")
    info = {"gamma_policy": policy}
    if "gamma_f" in d and "gamma_l" in d:
        gf, gl = float(d["gamma_f"]), float(d["gamma_l"])
    elif policy == "fixed":
        raise ConfigError("gamma_policy 'fixed' needs gamma_f and gamma_l")
    else:
        gf, gl, _ = plant_gammas(model, box, int(d.get("budget", 10_000)), int(d.get("seed", 0)))
    info.update(gamma_f_estimate=gf, gamma_l_estimate=gl)
    Z = float(d.get("z_scale", 2e-4)) * np.eye(model.n_x)
    inp = SynthesisInput.from_plant(model, gf, gl, Z=Z, nu4=float(d.get("nu4", 1.0)),
                                    nu2=float(d.get("nu2", 50.0)))
    if policy == "max_feasible":
        kappa = max_feasible_gamma_scale(inp)
        scale = kappa if kappa >= 1.0 else float(d.get("fraction", DESIGN_FRACTION)) * kappa
        inp = inp.with_(gamma_f=scale * gf, gamma_l=scale * gl)
        info.update(kappa=kappa, scale=scale)
    info.update(gamma_f=inp.gamma_f, gamma_l=inp.gamma_l)
    design = synthesize_upper(inp)
    if d.get("lower_bound"):
        cert = relax_lower(inp, RelaxationBounds.around(design, inp.z_scale))
        info["J_lower"] = cert.J_lower
    return design, info


# ----------------------------------------------------------------------------
# plant simulation
# ----------------------------------------------------------------------------

@dataclass
class PlantRun:
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    q: np.ndarray
    y_clean: np.ndarray


def simulate_plant(plant: PlantModel, cfg: ScenarioConfig, x0, times, u_traj, q_traj,
                   v_proc=None, rel_tol=1e-6, abs_tol=1e-8) -> PlantRun:
    """Integrate the plant over the sample grid.

    Unknown inputs are linearly interpolated, process noise is constant over
    each frame and the currents come either from the network closure or
    from ``u_traj``.
    """
    net = cfg.network
    n = plant.n_x
    N = len(times)
    V = np.zeros((N, n)) if v_proc is None else v_proc
    A, f, Bw = plant.A, plant.f, plant.B_w
    closed = net["kind"] == "infinite_bus"
    Vb, Xe = float(net.get("V", 1.0)), float(net.get("X_e", 0.3))

    def rhs_k(k):
        t0, dt = times[k], times[k + 1] - times[k]
        q0, dq = q_traj[k], q_traj[k + 1] - q_traj[k]
        u0, du = u_traj[k], u_traj[k + 1] - u_traj[k]
        vk = V[k]

        def rhs(t, x):
            s = (t - t0) / dt
            q = q0 + s * dq
            u = bus_currents(plant, x, q, Vb, Xe) if closed else u0 + s * du
            return A @ x + f(x, u) + Bw @ q + vk
        return rhs

    tr = integrate_piecewise(rhs_k, x0, times, rel_tol, abs_tol)
    X = tr.states
    if closed:
        U = np.array([bus_currents(plant, X[k], q_traj[k], Vb, Xe) for k in range(N)])
    else:
        U = np.asarray(u_traj, float)
    Y = plant.h(X, U) + U @ plant.D_u[:, plant.n_w:].T + q_traj @ (plant.D_u[:, :plant.n_w]
                                                                  + plant.D_w).T
    return PlantRun(np.asarray(times), X, U, np.asarray(q_traj), Y)


def _scenario_inputs(cfg: ScenarioConfig, n_w: int):
    src = cfg.inputs.get("source", "synthetic")
    t0, t1 = map(float, cfg.t_span)
    if src == "csv":
        t, u, q = read_inputs_csv(cfg.inputs["path"])
        keep = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
        t, u, q = t[keep], u[keep], q[keep]
        if len(t) < 2:
            raise ConfigError("CSV inputs do not cover t_span")
    else:
        n = int(round((t1 - t0) * PMU_RATE))
        t = t0 + np.arange(n + 1) / PMU_RATE
        u, q = synth_inputs(SyntheticSpec.from_dict(cfg.inputs), cfg.seed, t)
    if q.shape[1] != n_w:
        raise ConfigError(f"unknown inputs have {q.shape[1]} channels, model needs {n_w}")
    return t, u, apply_edits(t, q, cfg.edit_list)


def _noise_rng(cfg: ScenarioConfig, stream: int, spec: NoiseSpec):
    seed = cfg.seed if spec.seed is None else spec.seed
    return np.random.default_rng([seed, stream])


# ----------------------------------------------------------------------------
# case execution
# ----------------------------------------------------------------------------

@dataclass
class EstimatorResult:
    name: str
    x_hat: np.ndarray
    e_norm: np.ndarray
    z_norm: np.ndarray
    rmse: float
    wall_time: float
    diverged: bool = False
    fail_step: Optional[int] = None
    message: str = ""


@dataclass
class CaseReport:
    case: str
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    q: np.ndarray
    y: np.ndarray
    results: dict
    w_inf: float
    mu_bar: float
    J_bar: float
    J_lower: Optional[float]
    stg: Optional[StgResult]
    seed: int
    config_hash: str
    design_info: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        est = {}
        for name, r in self.results.items():
            est[name] = {"rmse": r.rmse, "wall_time": r.wall_time, "diverged": r.diverged,
                         "fail_step": r.fail_step, "max_z_window": _window_max(self.times, r.z_norm),
                         "message": r.message}
        return {
            "schema_version": SCHEMA_VERSION,
            "case": self.case,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "mu_bar": self.mu_bar,
            "w_linf": self.w_inf,
            "mu_bar_w_linf": self.mu_bar * self.w_inf,
            "J_bar": self.J_bar,
            "J_lower": self.J_lower,
            "stg": None if self.stg is None else asdict(self.stg),
            "estimators": est,
            "design": _jsonable(self.design_info),
            "meta": _jsonable(self.meta),
        }

    def estimator_csv(self, name: str) -> str:
        r = self.results[name]
        n = self.x.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"x{i + 1}_hat" for i in range(n)]
                   + ["e_norm", "z_norm"])
        for k in range(len(self.times)):
            row = [self.times[k], *self.x[k], *r.x_hat[k], r.e_norm[k], r.z_norm[k]]
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in self.results:
            p = out / f"{self.case}_{name}.csv"
            p.write_text(self.estimator_csv(name))
            paths.append(p)
        p = out / f"{self.case}_summary.json"
        p.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        paths.append(p)
        return paths


def _window_max(times, z, window=(10.0, 15.0)):
    sel = (times >= window[0] - 1e-9) & (times <= window[1] + 1e-9)
    if not np.any(sel):
        return None
    v = float(np.max(z[sel]))
    return v if np.isfinite(v) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _filter_noise(cfg, meas: NoiseSpec, Q_plant: np.ndarray, n_y: int):
    """Filter covariances: the discrete equivalent of the injected process
    noise and the measurement covariance (configured value for noise without
    finite variance)."""
    fcfg = cfg.filters
    if "Q" in fcfg:
        Q = np.asarray(fcfg["Q"], float)
    else:
        Q = T_S ** 2 * Q_plant + 1e-12 * np.eye(len(Q_plant))
    if "R" in fcfg:
        R = np.asarray(fcfg["R"], float)
    elif meas.kind == "gaussian":
        R = meas.cov
    elif meas.kind == "laplace":
        R = 2.0 * np.broadcast_to(np.square(meas.s), (n_y,)) * np.eye(n_y)
    else:
        R = 0.05 ** 2 * np.eye(n_y)
    Q = np.diag(Q) if Q.ndim == 1 else Q
    R = np.diag(R) if R.ndim == 1 else R
    return Q, R


def run_case(cfg: ScenarioConfig, design: Optional[ObserverDesign] = None,
             design_info: Optional[dict] = None) -> CaseReport:
    """Run one scenario end to end.

    Steps: nominal model and design; perturbed plant; noise-free reference
    run; noisy run; every estimator on the same measurements; metrics.
    """
    model, box = nominal_model(cfg)
    if design is None:
        design, design_info = design_for(cfg, model, box)
    design_info = dict(design_info or {})
    plant = perturb_plant(model, float(cfg.delta))
    times, u_traj, q_traj = _scenario_inputs(cfg, model.n_w)
    r = as_vector(cfg.r, model.n_w, "r")

    if cfg.x0 is None:
        if cfg.network["kind"] != "infinite_bus":
            raise ConfigError("x0 is required with a prescribed network")
        guess = box.x_mid
        x0 = network_equilibrium(plant, q_traj[0], cfg.network.get("V", 1.0),
                                 cfg.network.get("X_e", 0.3), guess)
    else:
        x0 = as_vector(cfg.x0, model.n_x, "x0")
    x_hat0 = x0 if cfg.x_hat0 is None else as_vector(cfg.x_hat0, model.n_x, "x_hat0")
    for name, v in (("x0", x0), ("x_hat0", x_hat0)):
        if not box.contains(v):
            warnings.warn(f"{name} lies outside the operating box", stacklevel=2)

    proc = dict(cfg.process_noise)
    relative = proc.pop("relative", None)
    ref = simulate_plant(plant, cfg, x0, times, u_traj, q_traj)
    if relative is not None:
        std = float(relative) * (ref.x.max(axis=0) - ref.x.min(axis=0))
        proc_spec = NoiseSpec(kind=proc.get("kind", "gaussian"), cov=np.square(std),
                              seed=proc.get("seed"))
    else:
        proc_spec = NoiseSpec.from_dict(proc)
    meas_spec = NoiseSpec.from_dict(cfg.measurement_noise)
    N = len(times)
    if proc_spec.kind == "none":
        run = ref
    else:
        v_p = sample_noise(proc_spec, N, _noise_rng(cfg, 1, proc_spec), model.n_x)
        run = simulate_plant(plant, cfg, x0, times, u_traj, q_traj, v_p)
    v_m = sample_noise(meas_spec, N, _noise_rng(cfg, 2, meas_spec), model.n_y)
    Y = run.y_clean + v_m
    Q_plant = proc_spec.cov if proc_spec.kind == "gaussian" else np.zeros((model.n_x, model.n_x))
    Qf, Rf = _filter_noise(cfg, meas_spec, Q_plant, model.n_y)
    P0 = cfg.filters.get("P0")
    if P0 is None and model.n_x == 4:
        P0 = np.diag(P0_DIAG_ORDER4)
    elif P0 is None:
        P0 = np.diag(np.concatenate([P0_DIAG_ORDER4, np.full(model.n_x - 4, 1e-3)]))

    Zm = design_info.get("Z", 2e-4 * np.eye(model.n_x))
    results = {}
    for name in cfg.estimators:
        if name == "observer":
            est = ESTIMATORS[name](design=design, r=r, y_interpolation=cfg.y_interpolation)
        else:
            est = ESTIMATORS[name](Q=Qf, R=Rf, P0=P0, r=r)
        est.fit(model)
        tic = time.perf_counter()
        diverged, step, msg = False, None, ""
        try:
            Xh = est.predict(run.u, Y, x_hat0)
        except EstimatorDiverged as exc:
            diverged, step, msg = True, exc.step, str(exc)
            Xh = np.full_like(run.x, np.nan)
        wall = time.perf_counter() - tic
        E = run.x - Xh
        e_norm = np.linalg.norm(E, axis=1)
        z_norm = np.linalg.norm(E @ np.asarray(Zm).T, axis=1)
        err = np.inf if diverged else rmse(run.x, Xh)
        results[name] = EstimatorResult(name, Xh, e_norm, z_norm, err, wall, diverged, step, msg)
        log.info("%s %s rmse=%.4g time=%.3fs", cfg.case, name, err, wall)

    w_inf = w_linf(q_traj, r)
    stg = None
    if "observer" in results and not results["observer"].diverged:
        t0, t1 = times[0], times[-1]
        if t0 <= 10.0 + 1e-9 and t1 >= 15.0 - 1e-9:
            stg = stg_check(times, results["observer"].z_norm, design.mu_bar, w_inf)
    meta = {"plot_scale_k": PLOT_SCALE, "delta": cfg.delta, "x0": x0, "x_hat0": x_hat0,
            "process_noise": proc_spec.to_dict(), "measurement_noise": meas_spec.to_dict()}
    return CaseReport(cfg.case, times, run.x, run.u, run.q, Y, results, w_inf, design.mu_bar,
                      design.J_bar, design_info.get("J_lower"), stg, cfg.seed, cfg.config_hash(),
                      design_info, meta)


def _run_one(args):
    cfg, design, info = args
    return run_case(cfg, design, info)


def run_cases(cfgs: Sequence[ScenarioConfig], design: Optional[ObserverDesign] = None,
              design_info: Optional[dict] = None, workers: int = 1) -> list:
    """Run independent scenarios, in parallel processes when ``workers > 1``."""
    jobs = [(c, design, design_info) for c in cfgs]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


def case_preset(name: str, **overrides) -> ScenarioConfig:
    """Scenario presets for the four 4th-order cases.

    ``case1`` has unknown inputs only; ``case2`` adds Gaussian process noise
    (5 % of each state's range) and Gaussian measurement noise (std 0.05);
    ``case3`` and ``case4`` swap the measurement noise for Laplace
    (``s = 0.02``) and Cauchy (``b = 1e-3``).
    """
    proc = {"kind": "gaussian", "relative": 0.05}
    presets = {
        "case1": {},
        "case2": {"process_noise": proc,
                  "measurement_noise": {"kind": "gaussian", "cov": [0.05 ** 2] * 2}},
        "case3": {"process_noise": proc,
                  "measurement_noise": {"kind": "laplace", "m": 0.0, "s": 0.02}},
        "case4": {"process_noise": proc,
                  "measurement_noise": {"kind": "cauchy", "a": 0.0, "b": 1e-3}},
    }
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    d = {"case": name, **presets[name], **overrides}
    return ScenarioConfig.from_dict(d)
