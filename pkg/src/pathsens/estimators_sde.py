"""Unbiased parameter-gradient estimators for diffusion rewards.

The headline estimator ("gge") rewrites the gradient of the expected
reward as an expectation along the unperturbed path: the parameter
derivative of the generator, applied to the value function, integrated
over time, plus the explicit reward derivatives.  The unknown grad v
and hess v are estimated once per replicate by auxiliary pathwise
differentiation runs and reused for every parameter, so the per-sample
cost is governed by the state dimension, not the parameter count.  The
time integral is collapsed to a single uniformly drawn evaluation time
(weighted by the horizon), which keeps it unbiased.

Baselines: "pathwise" propagates one forward-sensitivity state per
parameter (cost linear in the parameter count by construction) and
"fd-sde" is a central finite difference under common random numbers
(biased in the step size).

Unbiasedness statements are with respect to the Euler-discretized
dynamics; all cross-checks use matching grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sde_engine
from .errors import ModelContractError
from .models import SdeModel, diffusion_matrix_param_derivative
from .sde_engine import TimeGrid, simulate_sde_path

__all__ = [
    "EstimatorConfig",
    "GradientEstimate",
    "generator_gradient_replicate",
    "pathwise_forward_replicate",
    "finite_difference_sde_replicate",
    "finite_difference_sde_replicate_vector",
]


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs shared by all estimators; each estimator reads what it needs."""

    n_samples: int = 1000
    steps_main: int = 256
    steps_aux: int = 64
    n_aux: int = 1
    randomization: str = "uniform"   # law of the evaluation time over [0, T]
    thinning_beta: float = 1.0       # auxiliary-spawn probability (jump models)
    fd_step: float = 1e-3            # parameter step for finite-difference baselines
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ModelContractError("n_samples must be >= 1")
        if self.steps_main < 1 or self.steps_aux < 1 or self.n_aux < 1:
            raise ModelContractError("steps_main, steps_aux and n_aux must be >= 1")
        if self.randomization != "uniform":
            raise ModelContractError(
                f"unsupported randomization {self.randomization!r} (only 'uniform')"
            )
        if not 0.0 < self.thinning_beta <= 1.0:
            raise ModelContractError("thinning_beta must lie in (0, 1]")
        if not self.fd_step > 0:
            raise ModelContractError("fd_step must be positive")


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """Aggregated estimator output: per-parameter mean and standard error."""

    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    wall_time_seconds: float
    estimator_id: str
    seed: int


def _reward_param_derivative(model: SdeModel, theta, states, grid: TimeGrid, i: int):
    """Explicit theta-derivative of the discrete objective along a path."""
    out = float(model.d_theta_g(states[-1], theta, i))
    if model.has_reward_rate:
        dt = grid.dt
        acc = 0.0
        for k in range(grid.steps):
            acc += model.d_theta_rho(grid.t0 + k * dt, states[k], theta, i)
        out += acc * dt
    return out


def generator_gradient_replicate(model: SdeModel, theta, x0,
                                 config: EstimatorConfig,
                                 rng: np.random.Generator) -> np.ndarray:
    """One unbiased replicate of the full gradient vector.

    Simulates the main path, draws a uniform evaluation time tau
    (snapped to the preceding grid node so the state stays on the
    simulated lattice), estimates grad v and hess v there with an
    independent auxiliary stream, and contracts them with the
    parameter derivatives of drift and diffusion for every parameter.
    The single (grad v, hess v) pair is shared across all parameters.
    """
    T = model.T
    grid = TimeGrid(0.0, T, config.steps_main)
    path = simulate_sde_path(model, theta, x0, grid, rng)
    tau = rng.uniform(0.0, T)
    j = min(int(tau / grid.dt), config.steps_main - 1)
    t_j = j * grid.dt
    x_j = path.states[j]
    aux_rng = rng.spawn(1)[0]
    grad_v, hess_v, _ = sde_engine.estimate_value_derivatives_at(
        model, theta, t_j, x_j, config.n_aux, config.steps_aux, aux_rng
    )
    out = np.empty(model.n)
    for i in range(model.n):
        dmu = model.d_theta_mu(t_j, x_j, theta, i)
        da = diffusion_matrix_param_derivative(model, t_j, x_j, theta, i)
        generator_term = float(grad_v @ dmu) + float(np.tensordot(hess_v, da))
        out[i] = T * generator_term + _reward_param_derivative(model, theta, path.states, grid, i)
    return out


def pathwise_forward_replicate(model: SdeModel, theta, x0,
                               config: EstimatorConfig,
                               rng: np.random.Generator) -> np.ndarray:
    """Forward-sensitivity baseline: one sensitivity state per parameter.

    Propagates Y_i = dX/dtheta_i through the differentiated Euler step
    for every parameter alongside the path, so per-replicate cost grows
    linearly with the parameter count.
    """
    d, w, n = model.d, model.w, model.n
    T = model.T
    grid = TimeGrid(0.0, T, config.steps_main)
    dt = grid.dt
    increments = rng.normal(0.0, np.sqrt(dt), size=(grid.steps, w))
    x = np.asarray(x0, dtype=float).copy()
    Y = np.zeros((d, n))
    out = np.zeros(n)
    has_rho = model.has_reward_rate
    for k in range(grid.steps):
        t = grid.t0 + k * dt
        dB = increments[k]
        if has_rho:
            grad_rho = model.grad_x_rho(t, x, theta)
            for i in range(n):
                out[i] += dt * (float(grad_rho @ Y[:, i])
                                + float(model.d_theta_rho(t, x, theta, i)))
        gm = model.grad_x_mu(t, x, theta)
        gs = model.grad_x_sigma(t, x, theta)
        dmu = np.empty((d, n))
        for i in range(n):
            dmu[:, i] = model.d_theta_mu(t, x, theta, i)
        drift = gm @ Y + dmu
        Y_new = Y + dt * drift
        for j in range(w):
            dsig_j = np.empty((d, n))
            for i in range(n):
                dsig_j[:, i] = model.d_theta_sigma(t, x, theta, i)[:, j]
            Y_new = Y_new + dB[j] * (gs[:, j, :] @ Y + dsig_j)
        Y = Y_new
        x = x + model.mu(t, x, theta) * dt + model.sigma(t, x, theta) @ dB
        if not np.isfinite(x.sum()):
            raise sde_engine.DivergenceError(k)
    grad_g = model.grad_x_g(x, theta)
    for i in range(n):
        out[i] += float(grad_g @ Y[:, i]) + float(model.d_theta_g(x, theta, i))
    return out


def _discrete_objective(model: SdeModel, theta, states, grid: TimeGrid) -> float:
    obj = float(model.g(states[-1], theta))
    if model.has_reward_rate:
        dt = grid.dt
        acc = 0.0
        for k in range(grid.steps):
            acc += model.rho(grid.t0 + k * dt, states[k], theta)
        obj += acc * dt
    return obj


def _fd_one_parameter(model: SdeModel, theta, x0, i: int, h: float,
                      grid: TimeGrid, increments: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=float)
    bump = np.zeros_like(theta)
    bump[i] = h
    up = sde_engine._euler_path(model, theta + bump, x0, grid, increments)
    down = sde_engine._euler_path(model, theta - bump, x0, grid, increments)
    return (_discrete_objective(model, theta + bump, up, grid)
            - _discrete_objective(model, theta - bump, down, grid)) / (2.0 * h)


def finite_difference_sde_replicate(model: SdeModel, theta, x0, i: int,
                                    config: EstimatorConfig,
                                    rng: np.random.Generator) -> float:
    """Central finite difference in theta_i under common Brownian increments."""
    if not 0 <= i < model.n:
        raise ModelContractError(f"parameter index {i} out of range for n={model.n}")
    grid = TimeGrid(0.0, model.T, config.steps_main)
    increments = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.steps, model.w))
    return _fd_one_parameter(model, theta, x0, i, config.fd_step, grid, increments)


def finite_difference_sde_replicate_vector(model: SdeModel, theta, x0,
                                           config: EstimatorConfig,
                                           rng: np.random.Generator) -> np.ndarray:
    """All-parameter finite-difference replicate; one set of increments
    is drawn per replicate and reused across every perturbed pair."""
    grid = TimeGrid(0.0, model.T, config.steps_main)
    increments = rng.normal(0.0, np.sqrt(grid.dt), size=(grid.steps, model.w))
    out = np.empty(model.n)
    for i in range(model.n):
        out[i] = _fd_one_parameter(model, theta, x0, i, config.fd_step, grid, increments)
    return out
