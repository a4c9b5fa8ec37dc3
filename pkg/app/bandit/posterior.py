"""Closed-form joint posterior over all users' parameters.

theta = 1_m (x) theta_pop + u, so the prior of the stacked theta is
N(mu_theta, I_m (x) Sigma_u + J_m (x) Sigma_prior). Two evaluation paths:

* ``dense``: Cholesky solves on the (mp, mp) system, the reference path.
* ``structured``: population / random-effect decomposition from
  app.bandit.implicit, O(m p^3); agrees with the dense path.
"""
import logging
import threading

import numpy as np

from app.bandit.exceptions import InvalidInputError
from app.bandit.implicit import joint_posterior
from app.bandit.linalg import spd_inverse, spd_solve, symmetrize
from app.bandit.priors import HyperParams, PriorSpec
from app.bandit.stats import SufficientStats

logger = logging.getLogger(__name__)

DENSE = 'dense'
STRUCTURED = 'structured'
METHODS = (DENSE, STRUCTURED)


class PosteriorState:
    """Immutable posterior snapshot: stacked mean, per-user blocks, full covariance.

    The full (mp, mp) covariance is built on first access when the
    structured path produced the snapshot.
    """

    def __init__(self, mu, user_covs, sigma=None, sigma_factory=None, method=DENSE):
        self._mu = np.array(mu, dtype=float)
        self._user_covs = np.array(user_covs, dtype=float)
        self._mu.setflags(write=False)
        self._user_covs.setflags(write=False)
        self._sigma = sigma
        self._sigma_factory = sigma_factory
        self._lock = threading.Lock()
        self.method = method

    @property
    def m(self):
        return self._mu.shape[0]

    @property
    def dim(self):
        return self._mu.shape[1]

    @property
    def mu_post(self):
        """Stacked (mp,) mean."""
        return self._mu.reshape(-1)

    @property
    def user_means(self):
        return self._mu

    @property
    def user_covs(self):
        return self._user_covs

    @property
    def sigma_post(self):
        with self._lock:
            if self._sigma is None:
                self._sigma = self._sigma_factory()
                self._sigma.setflags(write=False)
            return self._sigma

    def mean(self, i):
        return self._mu[self._index(i)]

    def cov(self, i):
        return self._user_covs[self._index(i)]

    def user(self, i):
        return self.mean(i), self.cov(i)

    def _index(self, i):
        if not 0 <= i < self.m:
            raise InvalidInputError(f"user index {i} out of range for m={self.m}")
        return i


def build_sigma_theta_tilde(prior: PriorSpec, hp: HyperParams, m: int) -> np.ndarray:
    """I_m (x) Sigma_u + J_m (x) Sigma_prior."""
    if m < 1:
        raise InvalidInputError(f"need at least one user, got m={m}")
    return np.kron(np.eye(m), hp.sigma_u) + np.kron(np.ones((m, m)), prior.sigma_prior)


def stacked_prior_mean(prior: PriorSpec, m: int) -> np.ndarray:
    return np.tile(prior.mu_prior, m)


def _prior_state(prior, hp, m):
    p = prior.dim
    user_cov = prior.sigma_prior + hp.sigma_u
    return PosteriorState(np.tile(prior.mu_prior, (m, 1)), np.broadcast_to(user_cov, (m, p, p)),
                          sigma_factory=lambda: build_sigma_theta_tilde(prior, hp, m))


def _dense_update(prior, hp, stats):
    m, p = stats.m, stats.dim
    X = spd_inverse(build_sigma_theta_tilde(prior, hp, m), 'Sigma_theta_tilde')
    precision = symmetrize(X + stats.block_A() / hp.sigma_eps_sq)
    rhs = X @ stacked_prior_mean(prior, m) + stats.stacked_B() / hp.sigma_eps_sq
    sigma = spd_inverse(precision, 'posterior precision')
    mu = spd_solve(precision, rhs, 'posterior precision')
    user_covs = np.stack([sigma[i * p:(i + 1) * p, i * p:(i + 1) * p] for i in range(m)])
    return PosteriorState(mu.reshape(m, p), user_covs, sigma=sigma, method=DENSE)


def _structured_update(prior, hp, stats):
    joint = joint_posterior(prior, hp, stats)
    return PosteriorState(joint.theta_means(), joint.theta_covs(),
                          sigma_factory=joint.full_covariance, method=STRUCTURED)


def posterior_update(prior: PriorSpec, hp: HyperParams, stats: SufficientStats, method=STRUCTURED) -> PosteriorState:
    """Posterior N(mu_post, Sigma_post) of the stacked theta given engineered-reward statistics.

    Sigma_theta_tilde is rebuilt from ``hp`` on every call.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown posterior method {method!r}")
    if not (prior.dim == hp.dim == stats.dim):
        raise InvalidInputError(
            f"dimension mismatch: prior {prior.dim}, hyperparameters {hp.dim}, statistics {stats.dim}")
    if stats.total_count == 0:
        return _prior_state(prior, hp, stats.m)
    if method == DENSE:
        return _dense_update(prior, hp, stats)
    return _structured_update(prior, hp, stats)


def extract_user_posterior(posterior: PosteriorState, i: int):
    """(mu_i, Sigma_i): the i-th diagonal block of the joint posterior."""
    return posterior.mean(i), posterior.cov(i)
