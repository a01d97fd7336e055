"""Sampled Lipschitz constants of the nonlinear model parts over an operating box."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .models import OperatingBox, PlantModel

DEFAULT_INFLATION = 1.05
CHUNK = 1000


@dataclass
class LipschitzEstimate:
    """Largest Jacobian spectral norm found over the box.

    ``gamma`` is the raw maximum; ``gamma_safe`` multiplies it by the safety
    inflation and is the value meant for synthesis.
    """

    gamma: float
    arg_x: np.ndarray
    arg_u: np.ndarray
    n_samples: int
    method: str
    inflation: float = DEFAULT_INFLATION

    @property
    def gamma_safe(self) -> float:
        return self.inflation * self.gamma


def _fd_jacobian(fn, x, u, h=1e-6):
    x = np.asarray(x, float)
    cols = []
    for i in range(x.shape[-1]):
        dx = np.zeros(x.shape[-1])
        dx[i] = h * max(1.0, abs(float(np.max(np.abs(x[..., i])))))
        cols.append((np.asarray(fn(x + dx, u)) - np.asarray(fn(x - dx, u))) / (2 * dx[i]))
    return np.stack(cols, axis=-1)


def _norms(jac, X, U):
    """Spectral norms of the x-Jacobian at a batch of points."""
    try:
        J = np.asarray(jac(X, U))
        if J.ndim != 3 or J.shape[0] != len(X):
            raise ValueError
    except (ValueError, IndexError, TypeError):
        J = np.array([jac(x, u) for x, u in zip(X, U)])
    J = np.atleast_3d(J) if J.ndim == 2 else J
    return np.linalg.svd(J, compute_uv=False)[:, 0]


def _chunk_points(box: OperatingBox, k: int, seed: int, n: int):
    """Latin-hypercube chunk ``k``; chunks depend only on (seed, k) so a larger
    budget always contains the samples of a smaller one."""
    nx, nu = len(box.x_min), len(box.u_min)
    lo = np.concatenate([box.x_min, box.u_min])
    hi = np.concatenate([box.x_max, box.u_max])
    rng = np.random.default_rng([seed, k])
    unit = qmc.LatinHypercube(d=nx + nu, seed=rng).random(n)
    pts = qmc.scale(unit, lo, hi)
    return pts[:, :nx], pts[:, nx:]


def estimate_gamma(fn: Callable, box: OperatingBox, budget: int = 10_000, seed: int = 0,
                   jac: Optional[Callable] = None, method: str = "multistart",
                   refine_top: int = 10, inflation: float = DEFAULT_INFLATION
                   ) -> LipschitzEstimate:
    """Estimate the Lipschitz constant in ``x`` of ``fn(x, u)`` over ``box``.

    Parameters
    ----------
    fn : callable
        Map ``(x, u) -> vector``.
    box : OperatingBox
        States and inputs are both sampled inside it.
    budget : int
        Number of samples, at least 1000.
    seed : int
        Sampling seed.
    jac : callable, optional
        Analytic x-Jacobian ``(x, u) -> (m, n_x)``; batched calls are used
        when supported.  Central differences otherwise.
    method : {"multistart", "grid"}
        ``multistart`` samples Latin-hypercube chunks of 1000 points and
        refines the ``refine_top`` best points of every chunk with bounded
        L-BFGS-B; ``grid`` evaluates a full factorial grid with no refinement.
    inflation : float
        Safety factor stored with the estimate (see ``gamma_safe``).
    """
    if budget < 1000:
        raise ValueError("budget must be at least 1000")
    if jac is None:
        def jac(x, u):
            return _fd_jacobian(fn, x, u)
    nx, nu = len(box.x_min), len(box.u_min)

    if method == "grid":
        d = nx + nu
        per = max(2, int(np.floor(budget ** (1.0 / d))))
        axes = [np.linspace(a, b, per) for a, b in zip(np.concatenate([box.x_min, box.u_min]),
                                                      np.concatenate([box.x_max, box.u_max]))]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        norms = _norms(jac, mesh[:, :nx], mesh[:, nx:])
        i = int(np.argmax(norms))
        return LipschitzEstimate(float(norms[i]), mesh[i, :nx], mesh[i, nx:], len(mesh),
                                 "grid", inflation)
    if method != "multistart":
        raise ValueError(f"unknown method {method!r}")

    n_chunks = int(np.ceil(budget / CHUNK))
    best, best_x, best_u = -np.inf, None, None
    lo = np.concatenate([box.x_min, box.u_min])
    hi = np.concatenate([box.x_max, box.u_max])
    bounds = list(zip(lo, hi))

    def neg_norm(z):
        return -float(np.linalg.svd(np.atleast_2d(jac(z[:nx], z[nx:])), compute_uv=False)[0])

    total = 0
    for k in range(n_chunks):
        m = min(CHUNK, budget - k * CHUNK)
        X, U = _chunk_points(box, k, seed, m)
        norms = _norms(jac, X, U)
        total += m
        order = np.argsort(-norms, kind="stable")[:refine_top]
        if norms[order[0]] > best:
            best, best_x, best_u = float(norms[order[0]]), X[order[0]], U[order[0]]
        for i in order:
            z0 = np.concatenate([X[i], U[i]])
            res = minimize(neg_norm, z0, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 50})
            z = np.clip(res.x, lo, hi)
            val = -neg_norm(z)
            if val > best:
                best, best_x, best_u = val, z[:nx], z[nx:]
    return LipschitzEstimate(best, np.asarray(best_x), np.asarray(best_u), total,
                             "multistart", inflation)


def compose_gamma_l(gamma_h: float, C) -> float:
    """Lipschitz constant of ``h(x, u) - C x``: ``gamma_h + ||C||_2``."""
    if gamma_h < 0:
        raise ValueError("gamma_h must be nonnegative")
    C = np.atleast_2d(np.asarray(C, float))
    return float(gamma_h + np.linalg.norm(C, 2))


def plant_gammas(plant: PlantModel, box: OperatingBox, budget: int = 10_000, seed: int = 0,
                 inflation: float = DEFAULT_INFLATION):
    """``(gamma_f, gamma_l)`` estimates for a plant with its output matrix set."""
    if plant.C is None:
        raise ValueError("plant has no output matrix; attach one with with_output_matrix")
    ef = estimate_gamma(plant.f, box, budget, seed, jac=plant.jac_f, inflation=inflation)
    eh = estimate_gamma(plant.h, box, budget, seed, jac=plant.jac_h, inflation=inflation)
    return ef.gamma_safe, compose_gamma_l(eh.gamma_safe, plant.C), (ef, eh)
