"""Euler-Maruyama simulation and pathwise differentiation machinery.

Three layers:

* simulate_sde_path: a plain Euler path with the driving Brownian
  increments retained, so baselines can re-drive perturbed dynamics
  with common random numbers.
* simulate_with_variations: the same path plus its first variation J
  (sensitivity of the discrete flow to the initial condition) and,
  optionally, the second variation K.  J and K are the exact
  derivatives of the Euler map itself, so downstream estimates are
  exact gradients of the discretized value function.
* estimate_value_derivatives_at: Monte Carlo estimates of grad v and
  hess v at an interior space-time point, averaging J/K-weighted
  reward derivatives over auxiliary paths.

All operations are pure given an rng stream: identical inputs and seed
give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ModelContractError
from .models import SdeModel

__all__ = [
    "TimeGrid",
    "SdePath",
    "VariationBundle",
    "ValueDerivativeDiagnostics",
    "simulate_sde_path",
    "simulate_with_variations",
    "estimate_value_derivatives_at",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of `steps` Euler steps on [t0, t_end]."""

    t0: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t0 < self.t_end:
            raise ModelContractError(f"empty time grid [{self.t0}, {self.t_end}]")
        if self.steps < 1:
            raise ModelContractError("grid needs at least one step")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True, eq=False)
class SdePath:
    grid: TimeGrid
    states: np.ndarray                # (steps+1, d)
    brownian_increments: np.ndarray   # (steps, w)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class VariationBundle:
    """First/second variation of the discrete flow along one path.

    J[k] is the (d, d) Jacobian of state k with respect to the initial
    condition; K[k], when present, is the (d, d, d) array of second
    derivatives K[k][a, i, j] = d^2 X_a(t_k) / (d x_i d x_j).
    """

    J: np.ndarray            # (steps+1, d, d), J[0] = identity
    K: np.ndarray | None     # (steps+1, d, d, d) or None when order == 1


@dataclass(frozen=True)
class ValueDerivativeDiagnostics:
    grad_stderr: np.ndarray   # (d,)
    hess_stderr: np.ndarray   # (d, d)
    n_aux: int


def _draw_increments(grid: TimeGrid, w: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(grid.dt), size=(grid.steps, w))


def _euler_path(model: SdeModel, theta, x0, grid: TimeGrid,
                increments: np.ndarray) -> np.ndarray:
    """Euler recursion for given increments; returns the (steps+1, d) states."""
    dt = grid.dt
    t0 = grid.t0
    mu, sigma = model.mu, model.sigma
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.d,):
        raise ModelContractError(f"x0 has shape {x.shape}, expected ({model.d},)")
    states = np.empty((grid.steps + 1, model.d))
    states[0] = x
    for k in range(grid.steps):
        t = t0 + k * dt
        x = x + mu(t, x, theta) * dt + sigma(t, x, theta) @ increments[k]
        # a single non-finite entry poisons the sum, so this catches inf and nan
        if not np.isfinite(x.sum()):
            raise DivergenceError(k)
        states[k + 1] = x
    return states


def simulate_sde_path(model: SdeModel, theta, x0, grid: TimeGrid,
                      rng: np.random.Generator) -> SdePath:
    """Simulate one Euler-Maruyama path, retaining the Brownian increments."""
    increments = _draw_increments(grid, model.w, rng)
    states = _euler_path(model, theta, x0, grid, increments)
    return SdePath(grid=grid, states=states, brownian_increments=increments)


def simulate_with_variations(model: SdeModel, theta, t_start: float, x, grid: TimeGrid,
                             rng: np.random.Generator, order: int = 1,
                             increments: np.ndarray | None = None):
    """Euler path from (t_start, x) with first (and second) variation processes.

    The variations satisfy the derivative of the Euler recursion itself:

        J_{k+1} = (I + grad mu dt + sum_j grad sigma_j dB_j) J_k
        K_{k+1} = K_k + dt [grad mu . K_k + hess mu : (J_k, J_k)]
                      + sum_j dB_j [grad sigma_j . K_k + hess sigma_j : (J_k, J_k)]

    so they are the exact first/second derivatives of the discrete flow
    map with respect to its initial condition.

    Returns (SdePath, VariationBundle).
    """
    if order not in (1, 2):
        raise ModelContractError(f"order must be 1 or 2, got {order}")
    if abs(grid.t0 - t_start) > 1e-12:
        raise ModelContractError("grid must start at t_start")
    d, w = model.d, model.w
    dt = grid.dt
    if increments is None:
        increments = _draw_increments(grid, w, rng)
    x = np.asarray(x, dtype=float).copy()
    states = np.empty((grid.steps + 1, d))
    states[0] = x
    J = np.empty((grid.steps + 1, d, d))
    J[0] = np.eye(d)
    K = None
    if order == 2:
        K = np.zeros((grid.steps + 1, d, d, d))
    jk = np.eye(d)
    kk = np.zeros((d, d, d))
    eye = np.eye(d)
    for k in range(grid.steps):
        t = grid.t0 + k * dt
        dB = increments[k]
        gm = model.grad_x_mu(t, x, theta)
        gs = model.grad_x_sigma(t, x, theta)
        step_matrix = eye + gm * dt
        for j in range(w):
            step_matrix = step_matrix + gs[:, j, :] * dB[j]
        if order == 2:
            hm = model.hess_x_mu(t, x, theta)
            hs = model.hess_x_sigma(t, x, theta)
            # grad . K contracts the state index; hess : (J, J) sandwiches J
            kk_flat = kk.reshape(d, d * d)
            drift_part = (gm @ kk_flat).reshape(d, d, d) + np.matmul(jk.T, hm @ jk)
            kk_new = kk + dt * drift_part
            for j in range(w):
                noise_part = (gs[:, j, :] @ kk_flat).reshape(d, d, d) \
                    + np.matmul(jk.T, hs[:, j, :, :] @ jk)
                kk_new = kk_new + dB[j] * noise_part
            kk = kk_new
            K[k + 1] = kk
        x = x + model.mu(t, x, theta) * dt + model.sigma(t, x, theta) @ dB
        if not np.isfinite(x.sum()):
            raise DivergenceError(k)
        jk = step_matrix @ jk
        states[k + 1] = x
        J[k + 1] = jk
    path = SdePath(grid=grid, states=states, brownian_increments=increments)
    return path, VariationBundle(J=J, K=K)


def _pathwise_value_derivatives(model: SdeModel, theta, path: SdePath,
                                bundle: VariationBundle):
    """Exact grad/hess of the discretized objective along one auxiliary path."""
    dt = path.grid.dt
    states = path.states
    J, K = bundle.J, bundle.K
    xT = states[-1]
    JT = J[-1]
    grad_g = model.grad_x_g(xT, theta)
    grad = JT.T @ grad_g
    hess = JT.T @ model.hess_x_g(xT, theta) @ JT
    hess = hess + np.tensordot(grad_g, K[-1], axes=(0, 0))
    if model.has_reward_rate:
        # running-reward quadrature matches the discrete objective: left endpoints
        for k in range(path.grid.steps):
            t = path.grid.t0 + k * dt
            xk = states[k]
            gr = model.grad_x_rho(t, xk, theta)
            jk = J[k]
            grad = grad + dt * (jk.T @ gr)
            hess = hess + dt * (jk.T @ model.hess_x_rho(t, xk, theta) @ jk
                                + np.tensordot(gr, K[k], axes=(0, 0)))
    return grad, hess


def estimate_value_derivatives_at(model: SdeModel, theta, t: float, x,
                                  n_aux: int, steps_aux: int,
                                  rng: np.random.Generator):
    """Monte Carlo estimate of (grad v, hess v) at an interior point (t, x).

    Averages the pathwise reward derivatives over n_aux independent
    auxiliary paths started at (t, x); the Hessian estimate is
    symmetrized, which only removes asymmetric Monte Carlo noise.

    Returns (grad_v, hess_v, ValueDerivativeDiagnostics).
    """
    if n_aux < 1:
        raise ModelContractError("n_aux must be >= 1")
    if not t < model.T:
        raise ModelContractError(f"evaluation time {t} must lie before T={model.T}")
    d = model.d
    grid = TimeGrid(t, model.T, steps_aux)
    grad_sum = np.zeros(d)
    grad_sq = np.zeros(d)
    hess_sum = np.zeros((d, d))
    hess_sq = np.zeros((d, d))
    for _ in range(n_aux):
        path, bundle = simulate_with_variations(model, theta, t, x, grid, rng, order=2)
        grad, hess = _pathwise_value_derivatives(model, theta, path, bundle)
        hess = 0.5 * (hess + hess.T)
        grad_sum += grad
        grad_sq += grad * grad
        hess_sum += hess
        hess_sq += hess * hess
    grad_v = grad_sum / n_aux
    hess_v = hess_sum / n_aux
    if n_aux > 1:
        gvar = np.maximum(grad_sq / n_aux - grad_v ** 2, 0.0) * n_aux / (n_aux - 1)
        hvar = np.maximum(hess_sq / n_aux - hess_v ** 2, 0.0) * n_aux / (n_aux - 1)
        diag = ValueDerivativeDiagnostics(
            grad_stderr=np.sqrt(gvar / n_aux),
            hess_stderr=np.sqrt(hvar / n_aux),
            n_aux=n_aux,
        )
    else:
        diag = ValueDerivativeDiagnostics(
            grad_stderr=np.zeros(d), hess_stderr=np.zeros((d, d)), n_aux=1
        )
    return grad_v, hess_v, diag
