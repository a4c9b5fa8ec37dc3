"""Empirical-Bayes update of (Sigma_u, sigma_eps^2) by projected gradient ascent.

The objective is twice the log marginal likelihood of the engineered rewards
without the -mt log(2 pi) constant:

    l = log det X - log det(X + yA) + mt log y - y sum R^2 - mu^T X mu
        + (X mu + yB)^T (X + yA)^-1 (X mu + yB),   X = Sigma_theta_tilde^-1, y = 1/sigma^2

``dense`` evaluates this literally; ``structured`` integrates the random
effects user by user and the population term last, which gives the same value
in O(m p^3).
"""
import logging
from dataclasses import dataclass, field, fields
from typing import List

import numpy as np

from app.bandit.exceptions import ConfigError, IllConditionedError, InvalidHyperparametersError
from app.bandit.implicit import joint_posterior
from app.bandit.linalg import (cholesky, project_eigenvalues, spd_inverse, spd_logdet, spd_solve,
                               symmetrize)
from app.bandit.posterior import DENSE, METHODS, STRUCTURED, build_sigma_theta_tilde, stacked_prior_mean
from app.bandit.priors import HyperParams, PriorSpec
from app.bandit.stats import SufficientStats

logger = logging.getLogger(__name__)

DIAGONAL_LOG = 'diagonal-log'
CHOLESKY_FULL = 'cholesky-full'
PARAMETERIZATIONS = (DIAGONAL_LOG, CHOLESKY_FULL)


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.05
    max_iters: int = 200
    grad_tol: float = 1e-5
    eig_floor: float = 1e-6
    sigma_floor: float = 1e-4
    max_halvings: int = 20
    parameterization: str = DIAGONAL_LOG
    method: str = STRUCTURED

    def __post_init__(self):
        for name in ('step_size', 'max_iters', 'grad_tol', 'eig_floor', 'sigma_floor', 'max_halvings'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"optimizer.{name} must be positive, got {getattr(self, name)!r}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"optimizer.parameterization must be one of {PARAMETERIZATIONS}")
        if self.method not in METHODS:
            raise ConfigError(f"optimizer.method must be one of {METHODS}")

    @classmethod
    def from_dict(cls, data=None):
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class MarginalObjectiveInputs:
    X: np.ndarray
    y: float
    A: np.ndarray
    B: np.ndarray
    mu_theta: np.ndarray
    sum_sq: float
    mt: int


def objective_inputs(prior: PriorSpec, hp: HyperParams, stats: SufficientStats) -> MarginalObjectiveInputs:
    X = spd_inverse(build_sigma_theta_tilde(prior, hp, stats.m), 'Sigma_theta_tilde')
    return MarginalObjectiveInputs(X, 1.0 / hp.sigma_eps_sq, stats.block_A(), stats.stacked_B(),
                                   stacked_prior_mean(prior, stats.m), stats.total_sum_sq, stats.total_count)


def marginal_log_likelihood(inputs: MarginalObjectiveInputs) -> float:
    X, y = inputs.X, inputs.y
    if y <= 0:
        raise InvalidHyperparametersError(f"y = 1/sigma^2 must be positive, got {y!r}")
    precision = symmetrize(X + y * inputs.A)
    b = X @ inputs.mu_theta + y * inputs.B
    try:
        quad = float(b @ spd_solve(precision, b, 'X + yA'))
        logdet_precision = spd_logdet(precision, 'X + yA')
    except IllConditionedError as exc:
        raise InvalidHyperparametersError(f"X + yA is not positive definite: {exc}") from exc
    return (spd_logdet(X, 'X') - logdet_precision + inputs.mt * np.log(y) - y * inputs.sum_sq
            - float(inputs.mu_theta @ X @ inputs.mu_theta) + quad)


def structured_log_likelihood(prior: PriorSpec, hp: HyperParams, stats: SufficientStats) -> float:
    joint = joint_posterior(prior, hp, stats)
    pop = joint.population
    sigma_sq, p, m = hp.sigma_eps_sq, stats.dim, stats.m
    # per-user terms with u_i integrated out
    Psi_inv_B = np.einsum('ijk,ik->ij', pop.Psi_inv, stats.B)
    c = (stats.sum_sq - np.einsum('ij,ij->i', stats.B, Psi_inv_B)) / sigma_sq
    per_user = (stats.n * np.log(sigma_sq) + spd_logdet(hp.sigma_u, 'Sigma_u') - p * np.log(sigma_sq)
                + pop.Psi_logdet + c)
    # population term: m E is the posterior precision of theta_pop, m E lam its linear term
    mE = m * pop.E
    g = mE @ pop.lambda_vec
    sigma_prior_inv = spd_inverse(prior.sigma_prior, 'Sigma_prior')
    population = (spd_logdet(prior.sigma_prior, 'Sigma_prior') + spd_logdet(mE, 'm E')
                  + float(prior.mu_prior @ sigma_prior_inv @ prior.mu_prior) - float(g @ pop.lambda_vec))
    return -(float(per_user.sum()) + population)


def log_likelihood(prior, hp, stats, method=STRUCTURED) -> float:
    if method == DENSE:
        return marginal_log_likelihood(objective_inputs(prior, hp, stats))
    return structured_log_likelihood(prior, hp, stats)


def _dense_matrix_gradient(prior, hp, stats):
    inputs = objective_inputs(prior, hp, stats)
    X, y = inputs.X, inputs.y
    precision = symmetrize(X + y * inputs.A)
    sigma_post = spd_inverse(precision, 'X + yA')
    mu_post = sigma_post @ (X @ inputs.mu_theta + y * inputs.B)
    diff = inputs.mu_theta - mu_post
    sigma_tilde = build_sigma_theta_tilde(prior, hp, stats.m)
    grad_tilde = X @ (sigma_post - sigma_tilde + np.outer(diff, diff)) @ X
    p = stats.dim
    grad_u = sum(grad_tilde[i * p:(i + 1) * p, i * p:(i + 1) * p] for i in range(stats.m))
    expected_sq_residual = (inputs.sum_sq - 2 * mu_post @ inputs.B + mu_post @ inputs.A @ mu_post
                            + float(np.sum(inputs.A * sigma_post)))
    grad_sigma = -inputs.mt / hp.sigma_eps_sq + expected_sq_residual / hp.sigma_eps_sq ** 2
    return symmetrize(grad_u), float(grad_sigma)


def _structured_matrix_gradient(prior, hp, stats):
    joint = joint_posterior(prior, hp, stats)
    sigma_u_inv = spd_inverse(hp.sigma_u, 'Sigma_u')
    second_moment = joint.V4 + np.einsum('ij,ik->ijk', joint.mean_u, joint.mean_u)
    excess = (second_moment - hp.sigma_u[None]).sum(axis=0)
    grad_u = sigma_u_inv @ excess @ sigma_u_inv
    means, covs = joint.theta_means(), joint.theta_covs()
    expected_sq_residual = (stats.sum_sq - 2 * np.einsum('ij,ij->i', means, stats.B)
                            + np.einsum('ij,ijk,ik->i', means, stats.A, means)
                            + np.einsum('ijk,ijk->i', stats.A, covs))
    grad_sigma = (-stats.total_count / hp.sigma_eps_sq
                  + float(expected_sq_residual.sum()) / hp.sigma_eps_sq ** 2)
    return symmetrize(grad_u), float(grad_sigma)


def matrix_gradient(prior, hp, stats, method=STRUCTURED):
    """(dl/dSigma_u as a symmetric matrix, dl/dsigma^2)."""
    if method == DENSE:
        return _dense_matrix_gradient(prior, hp, stats)
    return _structured_matrix_gradient(prior, hp, stats)


class DiagonalLogParameterization:
    """z = [log diag(Sigma_u), log sigma^2]; Sigma_u off-diagonals fixed at 0."""

    name = DIAGONAL_LOG

    def __init__(self, dim, cfg: OptimizerConfig):
        self.dim = dim
        self.cfg = cfg

    def from_hp(self, hp):
        return self.project(np.concatenate([np.log(np.diag(hp.sigma_u)), [np.log(hp.sigma_eps_sq)]]))

    def to_hp(self, z):
        return HyperParams(float(np.exp(z[-1])), np.diag(np.exp(z[:-1])), floor=self.cfg.eig_floor)

    def chain(self, z, grad_u, grad_sigma):
        return np.concatenate([np.diag(grad_u) * np.exp(z[:-1]), [grad_sigma * np.exp(z[-1])]])

    def project(self, z):
        z = np.array(z, dtype=float)
        z[:-1] = np.maximum(z[:-1], np.log(self.cfg.eig_floor))
        z[-1] = max(z[-1], np.log(self.cfg.sigma_floor))
        return z


class CholeskyFullParameterization:
    """z = [lower-triangular entries of L, log sigma^2]; Sigma_u = L L^T."""

    name = CHOLESKY_FULL

    def __init__(self, dim, cfg: OptimizerConfig):
        self.dim = dim
        self.cfg = cfg
        self._rows, self._cols = np.tril_indices(dim)

    def _lower(self, z):
        L = np.zeros((self.dim, self.dim))
        L[self._rows, self._cols] = z[:-1]
        return L

    def from_hp(self, hp):
        L = np.linalg.cholesky(hp.sigma_u)
        return self.project(np.concatenate([L[self._rows, self._cols], [np.log(hp.sigma_eps_sq)]]))

    def to_hp(self, z):
        L = self._lower(z)
        return HyperParams(float(np.exp(z[-1])), L @ L.T, floor=self.cfg.eig_floor)

    def chain(self, z, grad_u, grad_sigma):
        grad_L = 2.0 * grad_u @ self._lower(z)
        return np.concatenate([grad_L[self._rows, self._cols], [grad_sigma * np.exp(z[-1])]])

    def project(self, z):
        z = np.array(z, dtype=float)
        L = self._lower(z)
        # slightly above the floor so the re-factorised matrix still clears it
        sigma_u = project_eigenvalues(L @ L.T, self.cfg.eig_floor * (1 + 1e-6))
        L = cholesky(sigma_u, 'projected Sigma_u')[0]
        L = np.tril(L)
        z[:-1] = L[self._rows, self._cols]
        z[-1] = max(z[-1], np.log(self.cfg.sigma_floor))
        return z


def make_parameterization(dim, cfg: OptimizerConfig):
    if cfg.parameterization == CHOLESKY_FULL:
        return CholeskyFullParameterization(dim, cfg)
    return DiagonalLogParameterization(dim, cfg)


def marginal_ll_gradient(prior, hp, stats, parameterization=DIAGONAL_LOG, method=STRUCTURED, cfg=None):
    """Gradient of l in the coordinates of the chosen parameterization."""
    cfg = cfg or OptimizerConfig(parameterization=parameterization, method=method)
    param = make_parameterization(prior.dim, cfg)
    z = param.from_hp(hp)
    grad_u, grad_sigma = matrix_gradient(prior, param.to_hp(z), stats, method)
    return param.chain(z, grad_u, grad_sigma)


@dataclass
class AscentResult:
    z: np.ndarray
    value: float
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    grad_norm: float = float('inf')
    stalled: bool = False


def projected_ascent(value_fn, grad_fn, project, z0, cfg: OptimizerConfig, scale=1.0) -> AscentResult:
    """Monotone projected gradient ascent with halving backtracking.

    ``scale`` divides the gradient, so the initial step size means the same
    for small and large data sets. The trial step doubles after every
    accepted move and halves on every rejected one.
    """
    z = project(z0)
    value = value_fn(z)
    result = AscentResult(z=z, value=value, trace=[value])
    step = cfg.step_size
    max_step = cfg.step_size * 2.0 ** cfg.max_halvings
    for iteration in range(1, cfg.max_iters + 1):
        grad = grad_fn(z) / scale
        result.grad_norm = float(np.max(np.abs(project(z + grad) - z)))
        if result.grad_norm <= cfg.grad_tol:
            result.converged = True
            break
        accepted = False
        for _ in range(cfg.max_halvings):
            candidate = project(z + step * grad)
            try:
                candidate_value = value_fn(candidate)
            except (IllConditionedError, InvalidHyperparametersError, np.linalg.LinAlgError, ValueError):
                candidate_value = -np.inf
            if np.isfinite(candidate_value) and candidate_value > value:
                accepted = True
                break
            step *= 0.5
        result.iterations = iteration
        if not accepted:
            result.stalled = True
            logger.warning(f"no ascent within {cfg.max_halvings} step halvings at iteration {iteration} "
                           f"(grad norm {result.grad_norm:.3e})")
            break
        z, value = candidate, candidate_value
        result.trace.append(value)
        step = min(2.0 * step, max_step)
    result.z, result.value = z, value
    return result


@dataclass(frozen=True, eq=False)
class HyperparamFit:
    hp: HyperParams
    objective: float
    initial_objective: float
    trace: List[float]
    iterations: int
    converged: bool
    grad_norm: float

    def summary(self):
        return {
            'sigma_eps_sq': self.hp.sigma_eps_sq,
            'sigma_u_diag': np.diag(self.hp.sigma_u).tolist(),
            'objective': self.objective,
            'initial_objective': self.initial_objective,
            'iterations': self.iterations,
            'converged': self.converged,
            'grad_norm': self.grad_norm,
        }


def update_hyperparams(prior: PriorSpec, stats: SufficientStats, hp_init: HyperParams,
                       cfg: OptimizerConfig = None) -> HyperparamFit:
    """Warm-started empirical-Bayes update; never raises on non-convergence."""
    cfg = cfg or OptimizerConfig()
    if stats.total_count == 0:
        return HyperparamFit(hp_init, 0.0, 0.0, [0.0], 0, True, 0.0)

    param = make_parameterization(prior.dim, cfg)

    def value_fn(z):
        return log_likelihood(prior, param.to_hp(z), stats, cfg.method)

    def grad_fn(z):
        grad_u, grad_sigma = matrix_gradient(prior, param.to_hp(z), stats, cfg.method)
        return param.chain(z, grad_u, grad_sigma)

    initial_value = log_likelihood(prior, hp_init, stats, cfg.method)
    result = projected_ascent(value_fn, grad_fn, param.project, param.from_hp(hp_init), cfg,
                              scale=max(stats.total_count, 1))
    hp = param.to_hp(result.z)
    if result.value < initial_value:
        # projecting hp_init onto the floors lowered the objective and nothing recovered it
        hp, result.value = hp_init, initial_value
    if not (result.converged or result.stalled):
        logger.warning(f"Hyperparameter ascent stopped after {result.iterations} iterations "
                       f"without converging (grad norm {result.grad_norm:.3e})")
    return HyperparamFit(hp, result.value, initial_value, result.trace, result.iterations,
                         result.converged, result.grad_norm)
