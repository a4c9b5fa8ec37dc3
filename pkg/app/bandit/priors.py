"""Prior specification and hyperparameters of the mixed-effects reward model."""
from dataclasses import dataclass, field

import numpy as np

from app.bandit.exceptions import InvalidHyperparametersError, InvalidInputError
from app.bandit.features import FEATURE_DIM

# Informative prior, feature order [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3]
ALPHA_PRIOR_MEAN = (2.12, 0.0, 0.0, -0.69, 0.0, 0.0, 0.0, 0.0)
ALPHA_PRIOR_SD = (0.78, 0.38, 0.62, 0.98, 0.16, 0.16, 0.1, 0.1)
BETA_PRIOR_MEAN = (0.0,) * FEATURE_DIM
BETA_PRIOR_SD = (0.27, 0.33, 0.3, 0.32, 0.1, 0.1, 0.1, 0.1)

INITIAL_NOISE_VARIANCE = 0.85
INITIAL_RANDOM_EFFECT_VARIANCE = 0.1 ** 2
DEFAULT_FLOOR = 1e-6


def _symmetric(matrix, name):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {matrix.shape}")
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Gaussian prior N(mu_prior, sigma_prior) on the population parameter."""

    mu_prior: np.ndarray
    sigma_prior: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu_prior, dtype=float).reshape(-1)
        sigma = _symmetric(self.sigma_prior, 'sigma_prior')
        if sigma.shape[0] != mu.shape[0]:
            raise InvalidInputError(f"prior mean has {mu.shape[0]} entries but covariance is {sigma.shape}")
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise InvalidInputError("sigma_prior must be positive definite")
        object.__setattr__(self, 'mu_prior', mu)
        object.__setattr__(self, 'sigma_prior', sigma)

    @property
    def dim(self) -> int:
        return self.mu_prior.shape[0]

    @classmethod
    def isotropic(cls, dim, mean=0.0, variance=1.0) -> 'PriorSpec':
        return cls(np.full(dim, float(mean)), float(variance) * np.eye(dim))


def default_prior() -> PriorSpec:
    """24-dim prior; the gamma block reuses the beta block."""
    mu = np.concatenate([ALPHA_PRIOR_MEAN, BETA_PRIOR_MEAN, BETA_PRIOR_MEAN])
    sd = np.concatenate([ALPHA_PRIOR_SD, BETA_PRIOR_SD, BETA_PRIOR_SD])
    return PriorSpec(mu, np.diag(sd ** 2))


@dataclass(frozen=True, eq=False)
class HyperParams:
    """Noise variance and random-effects covariance."""

    sigma_eps_sq: float
    sigma_u: np.ndarray
    floor: float = field(default=DEFAULT_FLOOR, compare=False)

    def __post_init__(self):
        sigma_u = _symmetric(self.sigma_u, 'sigma_u')
        if not np.isfinite(self.sigma_eps_sq) or self.sigma_eps_sq < self.floor:
            raise InvalidHyperparametersError(
                f"sigma_eps_sq={self.sigma_eps_sq!r} is below the floor {self.floor}")
        min_eig = np.linalg.eigvalsh(sigma_u).min()
        # tolerate round-off from the eigenvalue projection
        if min_eig < self.floor * (1 - 1e-8):
            raise InvalidHyperparametersError(
                f"sigma_u has min eigenvalue {min_eig:.3e} below the floor {self.floor}")
        object.__setattr__(self, 'sigma_eps_sq', float(self.sigma_eps_sq))
        object.__setattr__(self, 'sigma_u', sigma_u)

    @property
    def dim(self) -> int:
        return self.sigma_u.shape[0]

    def to_dict(self):
        return {'sigma_eps_sq': self.sigma_eps_sq, 'sigma_u': self.sigma_u.tolist()}

    @classmethod
    def from_dict(cls, data, floor=DEFAULT_FLOOR) -> 'HyperParams':
        return cls(float(data['sigma_eps_sq']), np.asarray(data['sigma_u'], dtype=float), floor=floor)


def initial_hyperparams(dim, sigma_eps_sq=INITIAL_NOISE_VARIANCE,
                        random_effect_variance=INITIAL_RANDOM_EFFECT_VARIANCE) -> HyperParams:
    return HyperParams(sigma_eps_sq, random_effect_variance * np.eye(dim))
