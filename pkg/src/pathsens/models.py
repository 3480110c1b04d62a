"""Model abstractions for parameterized diffusions and reaction networks.

An SdeModel bundles the drift, volatility and reward callables of a
parameterized Ito diffusion together with their analytic spatial and
parametric derivatives.  A CrnModel does the same for a stochastic
reaction network: stoichiometry, propensities and their parameter
derivatives.  All derivatives are supplied explicitly by the model
author; the test suite enforces consistency against finite differences,
so there is no automatic differentiation anywhere in the toolkit.

Conventions for derivative array layouts (d = state dim, w = noise dim):

    grad_x_mu(t, x, theta)[a, b]        = d mu_a / d x_b
    grad_x_sigma(t, x, theta)[a, j, b]  = d sigma_aj / d x_b
    hess_x_mu(t, x, theta)[a, b, c]     = d^2 mu_a / (d x_b d x_c)
    hess_x_sigma(t, x, theta)[a, j, b, c] = d^2 sigma_aj / (d x_b d x_c)

Models are immutable after construction and safe to evaluate from many
workers concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ModelContractError, UnknownIdError

__all__ = [
    "SdeModel",
    "CrnModel",
    "ValidationReport",
    "as_param_vector",
    "diffusion_matrix",
    "diffusion_matrix_param_derivative",
    "validate_model",
    "builtin_model",
    "default_theta",
    "default_x0",
    "default_probe_points",
    "constant_reward_rate_callables",
    "BUILTIN_SDE_IDS",
    "BUILTIN_CRN_IDS",
]

PSD_EIGENVALUE_FLOOR = -1e-12


def as_param_vector(theta, n: int | None = None) -> np.ndarray:
    """Coerce theta to a validated 1-D float vector."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if th.ndim != 1 or th.size < 1:
        raise ModelContractError(f"theta must be a nonempty vector, got shape {th.shape}")
    if not np.all(np.isfinite(th)):
        raise ModelContractError("theta contains non-finite entries")
    if n is not None and th.size != n:
        raise ModelContractError(f"theta has length {th.size}, model expects {n}")
    return th


@dataclass(frozen=True, eq=False)
class SdeModel:
    """Parameterized Ito diffusion with reward structure and derivatives.

    Coefficient callables take (t, x, theta) with x a (d,) array and
    return arrays of the shapes documented in the module docstring.
    Parametric derivatives take an extra trailing parameter index i.

    The running-reward family (rho and its derivatives) defaults to
    None, meaning rho is identically zero; estimators and solvers skip
    the corresponding terms instead of evaluating zero callables.
    """

    d: int
    w: int
    n: int
    T: float
    mu: Callable                 # (t, x, theta) -> (d,)
    sigma: Callable              # (t, x, theta) -> (d, w)
    g: Callable                  # (x, theta) -> float
    d_theta_mu: Callable         # (t, x, theta, i) -> (d,)
    d_theta_sigma: Callable      # (t, x, theta, i) -> (d, w)
    d_theta_g: Callable          # (x, theta, i) -> float
    grad_x_mu: Callable          # (t, x, theta) -> (d, d)
    grad_x_sigma: Callable       # (t, x, theta) -> (d, w, d)
    hess_x_mu: Callable          # (t, x, theta) -> (d, d, d)
    hess_x_sigma: Callable       # (t, x, theta) -> (d, w, d, d)
    grad_x_g: Callable           # (x, theta) -> (d,)
    hess_x_g: Callable           # (x, theta) -> (d, d)
    rho: Callable | None = None          # (t, x, theta) -> float
    d_theta_rho: Callable | None = None  # (t, x, theta, i) -> float
    grad_x_rho: Callable | None = None   # (t, x, theta) -> (d,)
    hess_x_rho: Callable | None = None   # (t, x, theta) -> (d, d)

    def __post_init__(self):
        if self.d < 1 or self.w < 1 or self.n < 1:
            raise ModelContractError("d, w and n must all be >= 1")
        if not self.T > 0:
            raise ModelContractError("terminal time T must be positive")
        rho_family = (self.rho, self.d_theta_rho, self.grad_x_rho, self.hess_x_rho)
        if any(f is None for f in rho_family) and any(f is not None for f in rho_family):
            raise ModelContractError(
                "rho, d_theta_rho, grad_x_rho and hess_x_rho must be supplied together"
            )

    @property
    def has_reward_rate(self) -> bool:
        return self.rho is not None

    def with_terminal_time(self, T: float) -> "SdeModel":
        return replace(self, T=float(T))


@dataclass(frozen=True, eq=False)
class CrnModel:
    """Stochastic reaction network: stoichiometry, propensities, reward.

    Propensities are time-homogeneous.  The admissibility invariant
    (propensity k vanishes whenever x + zeta_k would leave the
    nonnegative orthant) is a model obligation, checked by
    validate_model, not a simulator guard.
    """

    d: int
    m: int
    n: int
    T: float
    zeta: np.ndarray                 # (m, d) integer stoichiometric vectors
    propensities: Callable           # (x, theta) -> (m,) nonnegative rates
    d_theta_propensities: Callable   # (x, theta, i) -> (m,)
    g: Callable                      # (x,) -> float, theta-free terminal reward

    def __post_init__(self):
        if self.d < 1 or self.m < 1 or self.n < 1:
            raise ModelContractError("d, m and n must all be >= 1")
        if not self.T > 0:
            raise ModelContractError("terminal time T must be positive")
        zeta = np.asarray(self.zeta)
        if zeta.shape != (self.m, self.d):
            raise ModelContractError(
                f"zeta has shape {zeta.shape}, expected ({self.m}, {self.d})"
            )
        if not np.issubdtype(zeta.dtype, np.integer):
            raise ModelContractError("zeta must be an integer matrix")
        object.__setattr__(self, "zeta", zeta)

    def with_terminal_time(self, T: float) -> "CrnModel":
        return replace(self, T=float(T))


@dataclass
class ValidationReport:
    """Outcome of validate_model: pass/fail plus recorded violations."""

    ok: bool
    failures: list[str] = field(default_factory=list)

    @property
    def first_violation(self) -> str | None:
        return self.failures[0] if self.failures else None


# ---------------------------------------------------------------------------
# diffusion matrix operations


def diffusion_matrix(model: SdeModel, t: float, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Second-order generator coefficient, half sigma sigma^T; symmetric PSD."""
    sig = np.asarray(model.sigma(t, x, theta), dtype=float)
    if sig.shape != (model.d, model.w):
        raise ModelContractError(
            f"sigma returned shape {sig.shape}, expected ({model.d}, {model.w})"
        )
    return 0.5 * (sig @ sig.T)


def diffusion_matrix_param_derivative(
    model: SdeModel, t: float, x: np.ndarray, theta: np.ndarray, i: int
) -> np.ndarray:
    """Parameter derivative of the diffusion matrix along parameter i.

    Differentiating half sigma sigma^T gives
    half (d_i sigma . sigma^T + sigma . d_i sigma^T), symmetric by
    construction.
    """
    if not 0 <= i < model.n:
        raise ModelContractError(f"parameter index {i} out of range for n={model.n}")
    sig = np.asarray(model.sigma(t, x, theta), dtype=float)
    dsig = np.asarray(model.d_theta_sigma(t, x, theta, i), dtype=float)
    if sig.shape != (model.d, model.w) or dsig.shape != (model.d, model.w):
        raise ModelContractError(
            f"sigma/d_theta_sigma shapes {sig.shape}/{dsig.shape}, "
            f"expected ({model.d}, {model.w})"
        )
    prod = dsig @ sig.T
    return 0.5 * (prod + prod.T)


# ---------------------------------------------------------------------------
# validation


def _check_shape(failures, name, value, shape):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        failures.append(f"{name}: shape {arr.shape}, expected {shape}")
        return None
    if not np.all(np.isfinite(arr)):
        failures.append(f"{name}: non-finite entries")
        return None
    return arr


def _check_scalar(failures, name, value):
    arr = np.asarray(value, dtype=float)
    if arr.shape not in ((), (1,)):
        failures.append(f"{name}: expected a scalar, got shape {arr.shape}")
        return None
    v = float(arr.reshape(-1)[0]) if arr.shape == (1,) else float(arr)
    if not math.isfinite(v):
        failures.append(f"{name}: non-finite value")
        return None
    return v


def _validate_sde_at(model: SdeModel, t, x, theta, failures):
    d, w = model.d, model.w
    _check_shape(failures, "mu", model.mu(t, x, theta), (d,))
    sig = _check_shape(failures, "sigma", model.sigma(t, x, theta), (d, w))
    _check_scalar(failures, "g", model.g(x, theta))
    for i in range(model.n):
        _check_shape(failures, f"d_theta_mu[{i}]", model.d_theta_mu(t, x, theta, i), (d,))
        _check_shape(failures, f"d_theta_sigma[{i}]", model.d_theta_sigma(t, x, theta, i), (d, w))
        _check_scalar(failures, f"d_theta_g[{i}]", model.d_theta_g(x, theta, i))
    _check_shape(failures, "grad_x_mu", model.grad_x_mu(t, x, theta), (d, d))
    _check_shape(failures, "grad_x_sigma", model.grad_x_sigma(t, x, theta), (d, w, d))
    _check_shape(failures, "hess_x_mu", model.hess_x_mu(t, x, theta), (d, d, d))
    _check_shape(failures, "hess_x_sigma", model.hess_x_sigma(t, x, theta), (d, w, d, d))
    _check_shape(failures, "grad_x_g", model.grad_x_g(x, theta), (d,))
    _check_shape(failures, "hess_x_g", model.hess_x_g(x, theta), (d, d))
    if model.has_reward_rate:
        _check_scalar(failures, "rho", model.rho(t, x, theta))
        for i in range(model.n):
            _check_scalar(failures, f"d_theta_rho[{i}]", model.d_theta_rho(t, x, theta, i))
        _check_shape(failures, "grad_x_rho", model.grad_x_rho(t, x, theta), (d,))
        _check_shape(failures, "hess_x_rho", model.hess_x_rho(t, x, theta), (d, d))
    if sig is not None:
        a = 0.5 * (sig @ sig.T)
        if not np.allclose(a, a.T, atol=1e-12):
            failures.append("diffusion matrix not symmetric")
        eigmin = float(np.linalg.eigvalsh(a).min())
        if eigmin < PSD_EIGENVALUE_FLOOR:
            failures.append(f"diffusion matrix has eigenvalue {eigmin:.3e} below PSD floor")


def _validate_crn_at(model: CrnModel, x, theta, failures):
    m = model.m
    if np.any(np.all(model.zeta == 0, axis=1)):
        failures.append("zeta contains an all-zero row")
    lam = _check_shape(failures, "propensities", model.propensities(x, theta), (m,))
    _check_scalar(failures, "g", model.g(x))
    for i in range(model.n):
        _check_shape(
            failures, f"d_theta_propensities[{i}]",
            model.d_theta_propensities(x, theta, i), (m,),
        )
    if lam is None:
        return
    if np.any(lam < 0):
        failures.append(f"negative propensity at x={np.asarray(x).tolist()}")
    shifted = np.asarray(x) + model.zeta
    inadmissible = np.any(shifted < 0, axis=1)
    bad = inadmissible & (lam > 0)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        failures.append(
            f"admissibility violated: reaction {k} has rate {lam[k]:.3g} at "
            f"x={np.asarray(x).tolist()} but x+zeta_{k} leaves the nonnegative orthant"
        )


def validate_model(model, probe_points: Sequence[tuple]) -> ValidationReport:
    """Check shape, sign, PSD and admissibility contracts at probe points.

    probe_points is a sequence of (t, x, theta) tuples.  Violations are
    collected into the report rather than raised; exceptions thrown by
    model callables are recorded as failures too.
    """
    failures: list[str] = []
    for t, x, theta in probe_points:
        x = np.asarray(x)
        theta = np.asarray(theta, dtype=float)
        try:
            if isinstance(model, SdeModel):
                _validate_sde_at(model, t, x, theta, failures)
            elif isinstance(model, CrnModel):
                _validate_crn_at(model, x, theta, failures)
            else:
                failures.append(f"unsupported model type {type(model).__name__}")
                break
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            failures.append(f"callable raised at probe (t={t}, x={x.tolist()}): {exc!r}")
        if failures:
            break
    return ValidationReport(ok=not failures, failures=failures)


def default_probe_points(model, theta, n_points: int = 100, seed: int = 0,
                         x_center=None, x_spread: float = 2.0):
    """Random in-domain probe points for validate_model and derivative checks."""
    rng = np.random.default_rng(seed)
    theta = as_param_vector(theta, model.n)
    probes = []
    for _ in range(n_points):
        t = float(rng.uniform(0.0, model.T))
        if isinstance(model, CrnModel):
            x = rng.poisson(5.0, size=model.d).astype(np.int64)
        else:
            center = np.zeros(model.d) if x_center is None else np.asarray(x_center, dtype=float)
            x = center + x_spread * rng.standard_normal(model.d)
        probes.append((t, x, theta))
    return probes


# ---------------------------------------------------------------------------
# built-in model catalog


def constant_reward_rate_callables(d: int, value: float = 1.0) -> dict:
    """Callables for a theta-free constant running reward (handy in tests)."""
    return dict(
        rho=lambda t, x, theta: value,
        d_theta_rho=lambda t, x, theta, i: 0.0,
        grad_x_rho=lambda t, x, theta: np.zeros(d),
        hess_x_rho=lambda t, x, theta: np.zeros((d, d)),
    )


def _scalar_sde(mu, sigma, g, d_theta_mu, d_theta_sigma, d_theta_g,
                grad_x_mu, grad_x_sigma, hess_x_mu, hess_x_sigma,
                grad_x_g, hess_x_g, n, T):
    return SdeModel(
        d=1, w=1, n=n, T=T,
        mu=mu, sigma=sigma, g=g,
        d_theta_mu=d_theta_mu, d_theta_sigma=d_theta_sigma, d_theta_g=d_theta_g,
        grad_x_mu=grad_x_mu, grad_x_sigma=grad_x_sigma,
        hess_x_mu=hess_x_mu, hess_x_sigma=hess_x_sigma,
        grad_x_g=grad_x_g, hess_x_g=hess_x_g,
    )


def _drifted_bm(T: float) -> SdeModel:
    # dX = theta dt + dB, terminal reward g = x
    return _scalar_sde(
        mu=lambda t, x, th: np.array([th[0]]),
        sigma=lambda t, x, th: np.array([[1.0]]),
        g=lambda x, th: float(x[0]),
        d_theta_mu=lambda t, x, th, i: np.array([1.0]),
        d_theta_sigma=lambda t, x, th, i: np.zeros((1, 1)),
        d_theta_g=lambda x, th, i: 0.0,
        grad_x_mu=lambda t, x, th: np.zeros((1, 1)),
        grad_x_sigma=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_mu=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_sigma=lambda t, x, th: np.zeros((1, 1, 1, 1)),
        grad_x_g=lambda x, th: np.array([1.0]),
        hess_x_g=lambda x, th: np.zeros((1, 1)),
        n=1, T=T,
    )


def _ou(T: float) -> SdeModel:
    # dX = -theta1 X dt + theta2 dB, terminal reward g = x^2
    return _scalar_sde(
        mu=lambda t, x, th: np.array([-th[0] * x[0]]),
        sigma=lambda t, x, th: np.array([[th[1]]]),
        g=lambda x, th: float(x[0] * x[0]),
        d_theta_mu=lambda t, x, th, i: np.array([-x[0]]) if i == 0 else np.zeros(1),
        d_theta_sigma=lambda t, x, th, i: (
            np.array([[1.0]]) if i == 1 else np.zeros((1, 1))
        ),
        d_theta_g=lambda x, th, i: 0.0,
        grad_x_mu=lambda t, x, th: np.array([[-th[0]]]),
        grad_x_sigma=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_mu=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_sigma=lambda t, x, th: np.zeros((1, 1, 1, 1)),
        grad_x_g=lambda x, th: np.array([2.0 * x[0]]),
        hess_x_g=lambda x, th: np.array([[2.0]]),
        n=2, T=T,
    )


def _gbm(T: float) -> SdeModel:
    # dX = theta1 X dt + theta2 X dB, terminal reward g = x
    return _scalar_sde(
        mu=lambda t, x, th: np.array([th[0] * x[0]]),
        sigma=lambda t, x, th: np.array([[th[1] * x[0]]]),
        g=lambda x, th: float(x[0]),
        d_theta_mu=lambda t, x, th, i: np.array([x[0]]) if i == 0 else np.zeros(1),
        d_theta_sigma=lambda t, x, th, i: (
            np.array([[x[0]]]) if i == 1 else np.zeros((1, 1))
        ),
        d_theta_g=lambda x, th, i: 0.0,
        grad_x_mu=lambda t, x, th: np.array([[th[0]]]),
        grad_x_sigma=lambda t, x, th: np.array([[[th[1]]]]),
        hess_x_mu=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_sigma=lambda t, x, th: np.zeros((1, 1, 1, 1)),
        grad_x_g=lambda x, th: np.array([1.0]),
        hess_x_g=lambda x, th: np.zeros((1, 1)),
        n=2, T=T,
    )


FEATURE_DRIFT_WIDTH = 0.75


def _feature_drift(n_features: int, T: float) -> SdeModel:
    # drift is a linear combination of n bounded Gaussian-bump features;
    # n-parameter family used by the parameter-count scaling benchmark.
    if n_features < 1:
        raise UnknownIdError("feature-drift requires n_features >= 1")
    centers = np.linspace(-2.0, 2.0, n_features) if n_features > 1 else np.zeros(1)
    s2 = FEATURE_DRIFT_WIDTH ** 2

    def feature(x0: float, i: int) -> float:
        z = x0 - centers[i]
        return math.exp(-z * z / (2.0 * s2))

    def mu(t, x, th):
        x0 = x[0]
        z = (x0 - centers) / FEATURE_DRIFT_WIDTH
        return np.array([float(th @ np.exp(-0.5 * z * z))])

    def grad_x_mu(t, x, th):
        x0 = x[0]
        z = (x0 - centers)
        phi = np.exp(-z * z / (2.0 * s2))
        return np.array([[float(th @ (-z / s2 * phi))]])

    def hess_x_mu(t, x, th):
        x0 = x[0]
        z = (x0 - centers)
        phi = np.exp(-z * z / (2.0 * s2))
        return np.array([[[float(th @ ((z * z / s2 - 1.0) / s2 * phi))]]])

    return _scalar_sde(
        mu=mu,
        sigma=lambda t, x, th: np.array([[0.5]]),
        g=lambda x, th: float(x[0]),
        d_theta_mu=lambda t, x, th, i: np.array([feature(x[0], i)]),
        d_theta_sigma=lambda t, x, th, i: np.zeros((1, 1)),
        d_theta_g=lambda x, th, i: 0.0,
        grad_x_mu=grad_x_mu,
        grad_x_sigma=lambda t, x, th: np.zeros((1, 1, 1)),
        hess_x_mu=hess_x_mu,
        hess_x_sigma=lambda t, x, th: np.zeros((1, 1, 1, 1)),
        grad_x_g=lambda x, th: np.array([1.0]),
        hess_x_g=lambda x, th: np.zeros((1, 1)),
        n=n_features, T=T,
    )


def _pure_birth(T: float) -> CrnModel:
    return CrnModel(
        d=1, m=1, n=1, T=T,
        zeta=np.array([[1]]),
        propensities=lambda x, th: np.array([th[0]]),
        d_theta_propensities=lambda x, th, i: np.array([1.0]),
        g=lambda x: float(x[0]),
    )


def _birth_death(T: float) -> CrnModel:
    return CrnModel(
        d=1, m=2, n=2, T=T,
        zeta=np.array([[1], [-1]]),
        propensities=lambda x, th: np.array([th[0], th[1] * x[0]]),
        d_theta_propensities=lambda x, th, i: (
            np.array([1.0, 0.0]) if i == 0 else np.array([0.0, float(x[0])])
        ),
        g=lambda x: float(x[0]),
    )


def _gene_expression(T: float) -> CrnModel:
    # transcription, mRNA decay, translation, protein decay; reward = protein count
    zeta = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])

    def propensities(x, th):
        return np.array([th[0], th[1] * x[0], th[2] * x[0], th[3] * x[1]])

    def d_theta_propensities(x, th, i):
        out = np.zeros(4)
        out[i] = (1.0, float(x[0]), float(x[0]), float(x[1]))[i]
        return out

    return CrnModel(
        d=2, m=4, n=4, T=T,
        zeta=zeta,
        propensities=propensities,
        d_theta_propensities=d_theta_propensities,
        g=lambda x: float(x[1]),
    )


_SDE_BUILDERS = {
    "drifted-bm": (_drifted_bm, 1.0),
    "ou": (_ou, 1.0),
    "gbm": (_gbm, 1.0),
    "feature-drift": (_feature_drift, 1.0),
}

_CRN_BUILDERS = {
    "pure-birth": (_pure_birth, 1.0),
    "birth-death": (_birth_death, 2.0),
    "gene-expression": (_gene_expression, 1.0),
}

BUILTIN_SDE_IDS = tuple(_SDE_BUILDERS)
BUILTIN_CRN_IDS = tuple(_CRN_BUILDERS)

_DEFAULT_THETA = {
    "drifted-bm": (1.0,),
    "ou": (1.0, 0.5),
    "gbm": (0.1, 0.2),
    "feature-drift": None,  # depends on n_features
    "pure-birth": (2.0,),
    "birth-death": (10.0, 1.0),
    "gene-expression": (2.0, 1.0, 4.0, 1.0),
}

_DEFAULT_X0 = {
    "drifted-bm": (0.0,),
    "ou": (1.0,),
    "gbm": (1.0,),
    "feature-drift": (0.0,),
    "pure-birth": (0,),
    "birth-death": (0,),
    "gene-expression": (0, 0),
}


def builtin_model(model_id: str, n_features: int | None = None, T: float | None = None):
    """Instantiate a built-in model by string id.

    n_features is required for (and only accepted by) "feature-drift".
    T overrides the per-model default terminal time.
    """
    if model_id == "feature-drift":
        if n_features is None:
            raise UnknownIdError("feature-drift requires n_features")
        builder, default_T = _SDE_BUILDERS[model_id]
        return builder(int(n_features), float(T) if T is not None else default_T)
    if n_features is not None:
        raise UnknownIdError(f"n_features is only valid for feature-drift, not {model_id!r}")
    if model_id in _SDE_BUILDERS:
        builder, default_T = _SDE_BUILDERS[model_id]
    elif model_id in _CRN_BUILDERS:
        builder, default_T = _CRN_BUILDERS[model_id]
    else:
        known = sorted(_SDE_BUILDERS) + sorted(_CRN_BUILDERS)
        raise UnknownIdError(f"unknown model id {model_id!r}; known ids: {known}")
    return builder(float(T) if T is not None else default_T)


def default_theta(model_id: str, n_features: int | None = None) -> np.ndarray:
    if model_id == "feature-drift":
        if n_features is None:
            raise UnknownIdError("feature-drift requires n_features")
        return np.full(int(n_features), 0.1)
    if model_id not in _DEFAULT_THETA:
        raise UnknownIdError(f"unknown model id {model_id!r}")
    return np.array(_DEFAULT_THETA[model_id], dtype=float)


def default_x0(model_id: str) -> np.ndarray:
    if model_id not in _DEFAULT_X0:
        raise UnknownIdError(f"unknown model id {model_id!r}")
    x0 = _DEFAULT_X0[model_id]
    if model_id in _CRN_BUILDERS:
        return np.array(x0, dtype=np.int64)
    return np.array(x0, dtype=float)
