"""Full-pooling Bayesian linear regression, the uniform-random policy, and the
common Algorithm interface the trial runner and the study service drive."""
import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from app.bandit.empirical_bayes import (MarginalObjectiveInputs, OptimizerConfig, marginal_log_likelihood,
                                        projected_ascent, update_hyperparams)
from app.bandit.exceptions import InvalidInputError
from app.bandit.features import BETA, StateTriple, build_baseline_features
from app.bandit.linalg import spd_inverse, spd_solve, symmetrize
from app.bandit.policy import SmoothingParams, action_probability, classical_probability
from app.bandit.posterior import STRUCTURED, PosteriorState, posterior_update
from app.bandit.priors import (INITIAL_NOISE_VARIANCE, INITIAL_RANDOM_EFFECT_VARIANCE, HyperParams, PriorSpec,
                               initial_hyperparams)
from app.bandit.stats import SufficientStats

logger = logging.getLogger(__name__)

REBANDIT = 'rebandit'
BLR = 'blr'
RANDOM = 'random'
ALGORITHMS = (REBANDIT, BLR, RANDOM)

SMOOTH = 'smooth'
CLASSICAL = 'classical'

RANDOM_POLICY_PROBABILITY = 0.5


@dataclass(frozen=True, eq=False)
class BLRState:
    """One parameter vector shared by every user, fitted on pooled statistics."""

    mu_post: np.ndarray
    sigma_post: np.ndarray
    sigma_eps_sq: float
    XtX: np.ndarray
    XtR: np.ndarray
    sum_sq: float
    mt: int

    @classmethod
    def from_stats(cls, stats: SufficientStats, prior: PriorSpec, sigma_eps_sq=INITIAL_NOISE_VARIANCE):
        XtX, XtR, mt, sum_sq = stats.pooled()
        return cls(prior.mu_prior.copy(), prior.sigma_prior.copy(), float(sigma_eps_sq), XtX, XtR, sum_sq, mt)

    @classmethod
    def empty(cls, prior: PriorSpec, sigma_eps_sq=INITIAL_NOISE_VARIANCE):
        p = prior.dim
        return cls(prior.mu_prior.copy(), prior.sigma_prior.copy(), float(sigma_eps_sq),
                   np.zeros((p, p)), np.zeros(p), 0.0, 0)

    def with_noise_variance(self, sigma_eps_sq):
        return BLRState(self.mu_post, self.sigma_post, float(sigma_eps_sq), self.XtX, self.XtR, self.sum_sq, self.mt)


def blr_posterior_update(prior: PriorSpec, state: BLRState) -> BLRState:
    """Sigma_post = (XtX / sigma^2 + Sigma_prior^-1)^-1, mu_post = Sigma_post (XtR / sigma^2 + Sigma_prior^-1 mu_prior)."""
    if state.XtR.shape != (prior.dim,):
        raise InvalidInputError(f"pooled statistics have dimension {state.XtR.shape[0]}, prior {prior.dim}")
    if state.mt == 0:
        return BLRState(prior.mu_prior.copy(), prior.sigma_prior.copy(), state.sigma_eps_sq,
                        state.XtX, state.XtR, state.sum_sq, state.mt)
    prior_precision = spd_inverse(prior.sigma_prior, 'Sigma_prior')
    precision = symmetrize(state.XtX / state.sigma_eps_sq + prior_precision)
    rhs = state.XtR / state.sigma_eps_sq + prior_precision @ prior.mu_prior
    return BLRState(spd_solve(precision, rhs, 'BLR precision'), spd_inverse(precision, 'BLR precision'),
                    state.sigma_eps_sq, state.XtX, state.XtR, state.sum_sq, state.mt)


def blr_objective_inputs(prior: PriorSpec, state: BLRState, sigma_eps_sq=None) -> MarginalObjectiveInputs:
    sigma_eps_sq = state.sigma_eps_sq if sigma_eps_sq is None else sigma_eps_sq
    return MarginalObjectiveInputs(spd_inverse(prior.sigma_prior, 'Sigma_prior'), 1.0 / sigma_eps_sq,
                                   state.XtX, state.XtR, prior.mu_prior, state.sum_sq, state.mt)


def blr_marginal_log_likelihood(prior: PriorSpec, state: BLRState, sigma_eps_sq=None) -> float:
    """The mixed-effects objective with Sigma_u = 0 and a single pooled block."""
    return marginal_log_likelihood(blr_objective_inputs(prior, state, sigma_eps_sq))


def _blr_noise_gradient(prior, state, sigma_eps_sq):
    """dl/dsigma^2 = -n / sigma^2 + E||R - Phi theta||^2 / sigma^4."""
    inputs = blr_objective_inputs(prior, state, sigma_eps_sq)
    precision = symmetrize(inputs.X + inputs.y * inputs.A)
    sigma_post = spd_inverse(precision, 'X + yA')
    mu_post = sigma_post @ (inputs.X @ inputs.mu_theta + inputs.y * inputs.B)
    expected_sq_residual = (inputs.sum_sq - 2 * mu_post @ inputs.B + mu_post @ inputs.A @ mu_post
                            + float(np.sum(inputs.A * sigma_post)))
    return -inputs.mt / sigma_eps_sq + expected_sq_residual / sigma_eps_sq ** 2


def blr_update_noise_variance(prior: PriorSpec, state: BLRState, cfg: OptimizerConfig = None) -> float:
    """Empirical-Bayes sigma^2, warm-started at ``state.sigma_eps_sq``; ascent in log sigma^2."""
    cfg = cfg or OptimizerConfig()
    if state.mt == 0:
        return state.sigma_eps_sq
    floor = np.log(cfg.sigma_floor)

    def project(z):
        return np.maximum(np.asarray(z, dtype=float), floor)

    def value_fn(z):
        return blr_marginal_log_likelihood(prior, state, float(np.exp(z[0])))

    def grad_fn(z):
        sigma_sq = float(np.exp(z[0]))
        return np.array([_blr_noise_gradient(prior, state, sigma_sq) * sigma_sq])

    initial_value = value_fn(np.array([np.log(state.sigma_eps_sq)]))
    result = projected_ascent(value_fn, grad_fn, project, np.array([np.log(state.sigma_eps_sq)]), cfg,
                              scale=max(state.mt, 1))
    if result.value < initial_value:
        return state.sigma_eps_sq
    if not (result.converged or result.stalled):
        logger.warning(f"BLR noise-variance ascent stopped after {result.iterations} iterations "
                       f"without converging (grad norm {result.grad_norm:.3e})")
    return float(np.exp(result.z[0]))


def random_policy() -> float:
    return RANDOM_POLICY_PROBABILITY


def _probability(mu, sigma, state, sp, mode):
    f_s = build_baseline_features(state)
    if mode == CLASSICAL:
        return classical_probability(mu[BETA], sigma[BETA, BETA], f_s, sp)
    return action_probability(mu[BETA], sigma[BETA, BETA], f_s, sp)


class Algorithm(Protocol):
    name: str

    def probability(self, i: int, state: StateTriple) -> float:
        ...

    def update_posterior(self, stats: SufficientStats) -> None:
        ...

    def update_hyperparams(self, stats: SufficientStats) -> Optional[dict]:
        ...

    def snapshot_summary(self) -> dict:
        ...

    def hyperparams_dict(self) -> dict:
        ...


class ReBanditAlgorithm:
    name = REBANDIT

    def __init__(self, prior: PriorSpec, m: int, hp: HyperParams = None, sp: SmoothingParams = SmoothingParams(),
                 optimizer: OptimizerConfig = None, method=STRUCTURED, mode=SMOOTH):
        self.prior = prior
        self.hp = hp or initial_hyperparams(prior.dim)
        self.sp = sp
        self.optimizer = optimizer or OptimizerConfig()
        self.method = method
        self.mode = mode
        self.posterior: PosteriorState = posterior_update(prior, self.hp, SufficientStats.empty(m, prior.dim), method)

    def probability(self, i, state):
        mu_i, sigma_i = self.posterior.user(i)
        return _probability(mu_i, sigma_i, state, self.sp, self.mode)

    def update_posterior(self, stats):
        self.posterior = posterior_update(self.prior, self.hp, stats, self.method)

    def update_hyperparams(self, stats):
        fit = update_hyperparams(self.prior, stats, self.hp, self.optimizer)
        self.hp = fit.hp
        return fit.summary()

    def hyperparams_dict(self):
        return self.hp.to_dict()

    def snapshot_summary(self):
        k = BETA.start
        return {
            'sigma_eps_sq': self.hp.sigma_eps_sq,
            'sigma_u_diag': np.diag(self.hp.sigma_u).tolist(),
            'beta0_mean': float(self.posterior.user_means[:, k].mean()),
            'beta0_var': float(self.posterior.user_covs[:, k, k].mean()),
        }


class BLRAlgorithm:
    name = BLR

    def __init__(self, prior: PriorSpec, sigma_eps_sq=INITIAL_NOISE_VARIANCE, sp: SmoothingParams = SmoothingParams(),
                 optimizer: OptimizerConfig = None, mode=SMOOTH):
        self.prior = prior
        self.sp = sp
        self.optimizer = optimizer or OptimizerConfig()
        self.mode = mode
        self.state = BLRState.empty(prior, sigma_eps_sq)

    def probability(self, i, state):
        return _probability(self.state.mu_post, self.state.sigma_post, state, self.sp, self.mode)

    def update_posterior(self, stats):
        self.state = blr_posterior_update(self.prior, BLRState.from_stats(stats, self.prior, self.state.sigma_eps_sq))

    def update_hyperparams(self, stats):
        pooled = BLRState.from_stats(stats, self.prior, self.state.sigma_eps_sq)
        sigma_eps_sq = blr_update_noise_variance(self.prior, pooled, self.optimizer)
        self.state = self.state.with_noise_variance(sigma_eps_sq)
        return {'sigma_eps_sq': sigma_eps_sq,
                'objective': blr_marginal_log_likelihood(self.prior, pooled, sigma_eps_sq)}

    def hyperparams_dict(self):
        return {'sigma_eps_sq': self.state.sigma_eps_sq}

    def snapshot_summary(self):
        k = BETA.start
        return {
            'sigma_eps_sq': self.state.sigma_eps_sq,
            'beta0_mean': float(self.state.mu_post[k]),
            'beta0_var': float(self.state.sigma_post[k, k]),
        }


class RandomAlgorithm:
    name = RANDOM

    def probability(self, i, state):
        return random_policy()

    def update_posterior(self, stats):
        pass

    def update_hyperparams(self, stats):
        return None

    def hyperparams_dict(self):
        return {}

    def snapshot_summary(self):
        return {}


def make_algorithm(name, prior: PriorSpec, m: int, sp: SmoothingParams = SmoothingParams(),
                   optimizer: OptimizerConfig = None, method=STRUCTURED, mode=SMOOTH,
                   sigma_eps_sq=INITIAL_NOISE_VARIANCE, random_effect_variance=INITIAL_RANDOM_EFFECT_VARIANCE):
    if name == REBANDIT:
        hp = initial_hyperparams(prior.dim, sigma_eps_sq, random_effect_variance)
        return ReBanditAlgorithm(prior, m, hp, sp, optimizer, method, mode)
    if name == BLR:
        return BLRAlgorithm(prior, sigma_eps_sq, sp, optimizer, mode)
    if name == RANDOM:
        return RandomAlgorithm()
    raise InvalidInputError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
