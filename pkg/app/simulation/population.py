"""Multinomial-logistic user models and the simulated study population."""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List

import numpy as np

from app.bandit.exceptions import ConfigError
from app.simulation.config import (HABITUATION_ETA, MINIMAL, NONE, TREATMENT_MULTIPLIERS, EnvConfig,
                                   SyntheticPopulationParams)

logger = logging.getLogger(__name__)

N_CLASSES = 4
BASE_FEATURES = ('intercept', 'survey_completion', 'app_usage', 'cannabis_use', 'weekend', 'day_in_study')
ENV_FEATURES = BASE_FEATURES + tuple(f'a_{name}' for name in BASE_FEATURES) + ('dosage',)
N_ENV_FEATURES = len(ENV_FEATURES)

BASELINE = slice(0, 6)
ADVANTAGE = slice(6, 12)
ADVANTAGE_INTERCEPT = 6
DOSAGE = 12
HABITUATION_DIRECTION = np.array([1.0, -1.0 / 3, -1.0 / 3, -1.0 / 3])

WEIGHT_FILE_SCHEMA = 'rebandit.user-models/v1'

# Class-mean weights of synthetic models, rows = reward classes 0..3, columns
# = the six baseline features then the six advantage features. Every column
# sums to zero across classes.
DEFAULT_CLASS_MEANS = np.array([
    [1.2, -0.6, -0.4, 0.2, 0.1, 0.2, -0.4, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, -0.2, 0.1, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.5, 0.3, 0.2, -0.1, -0.05, -0.05, 0.15, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.9, 0.5, 0.1, -0.1, -0.05, -0.15, 0.15, 0.0, 0.0, 0.0, 0.0, 0.0],
])


@dataclass(frozen=True, eq=False)
class UserModelMLR:
    """Weights (4 x 13) of one simulated user plus its observable processes.

    ``app_usage`` is the mean daily app seconds; ``cannabis_rate`` the
    probability of reported use at a decision point.
    """

    weights: np.ndarray
    has_habituation: bool = False
    app_usage: float = 350.0
    cannabis_rate: float = 0.5
    source: str = 'synthetic'
    model_id: str = ''

    def __post_init__(self):
        if self.weights.shape != (N_CLASSES, N_ENV_FEATURES):
            raise ConfigError(f"user model weights must be {N_CLASSES}x{N_ENV_FEATURES}, got {self.weights.shape}")
        if not self.has_habituation and np.any(self.weights[:, DOSAGE] != 0):
            raise ConfigError(f"model {self.model_id!r} has dosage weights without habituation")
        if not 0.0 <= self.cannabis_rate <= 1.0:
            raise ConfigError(f"cannabis_rate must lie in [0, 1], got {self.cannabis_rate}")

    @property
    def advantage_intercepts(self):
        return self.weights[:, ADVANTAGE_INTERCEPT].copy()

    def with_weights(self, weights, **changes):
        return replace(self, weights=np.asarray(weights, dtype=float), **changes)


def center_classes(weights):
    """Subtract the across-class mean of every column."""
    weights = np.asarray(weights, dtype=float)
    return weights - weights.mean(axis=0, keepdims=True)


def synthesize_pool(params: SyntheticPopulationParams, heterogeneity: float, pool_size: int,
                    rng: np.random.Generator, class_means=DEFAULT_CLASS_MEANS) -> List[UserModelMLR]:
    """Base models around ``class_means``; heterogeneity 0 makes them identical."""
    noise = rng.standard_normal((pool_size, N_CLASSES, 12))
    app_noise = rng.standard_normal(pool_size)
    rates = rng.beta(params.cannabis_rate_a, params.cannabis_rate_b, size=pool_size)
    mean_rate = params.cannabis_rate_a / (params.cannabis_rate_a + params.cannabis_rate_b)

    pool = []
    for k in range(pool_size):
        weights = np.zeros((N_CLASSES, N_ENV_FEATURES))
        weights[:, :12] = center_classes(class_means + heterogeneity * params.weight_scale * noise[k])
        app_usage = max(params.app_usage_mean + heterogeneity * params.app_usage_sd * app_noise[k], 0.0)
        rate = float(np.clip(mean_rate + heterogeneity * (rates[k] - mean_rate), 0.0, 1.0))
        pool.append(UserModelMLR(weights, app_usage=app_usage, cannabis_rate=rate, source='synthetic',
                                 model_id=f'synthetic-{k}'))
    return pool


def load_weight_file(path) -> List[UserModelMLR]:
    """Base models from a ``rebandit.user-models/v1`` JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigError(f"weight file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"weight file {path} is not valid JSON: {exc}") from exc

    if not isinstance(data, dict) or data.get('schema') != WEIGHT_FILE_SCHEMA:
        raise ConfigError(f"weight file {path} must declare schema {WEIGHT_FILE_SCHEMA!r}")
    models = data.get('models')
    if not isinstance(models, list) or not models:
        raise ConfigError(f"weight file {path} holds no models")

    pool = []
    for k, entry in enumerate(models):
        try:
            weights = np.asarray(entry['weights'], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model {k} in {path} has no numeric 'weights'") from exc
        if weights.shape == (N_CLASSES, 12):
            weights = np.hstack([weights, np.zeros((N_CLASSES, 1))])
        if weights.shape != (N_CLASSES, N_ENV_FEATURES) or not np.all(np.isfinite(weights)):
            raise ConfigError(f"model {k} in {path} must have finite 4x12 or 4x13 weights, got {weights.shape}")
        pool.append(UserModelMLR(
            weights,
            has_habituation=bool(np.any(weights[:, DOSAGE] != 0)),
            app_usage=float(entry.get('app_usage', 350.0)),
            cannabis_rate=float(entry.get('cannabis_rate', 0.5)),
            source='file',
            model_id=str(entry.get('id', k)),
        ))
    return pool


def apply_treatment_effect(model: UserModelMLR, level: str) -> UserModelMLR:
    """Move the smallest advantage intercept into class 0, average classes 2 and 3, then scale."""
    if level == MINIMAL:
        return model
    if level not in TREATMENT_MULTIPLIERS:
        raise ConfigError(f"unknown treatment effect {level!r}")
    weights = model.weights.copy()
    column = weights[:, ADVANTAGE_INTERCEPT]
    k = int(np.argmin(column))
    if k != 0:
        column[[0, k]] = column[[k, 0]]
    column[2] = column[3] = (column[2] + column[3]) / 2.0
    weights[:, ADVANTAGE_INTERCEPT] = column * TREATMENT_MULTIPLIERS[level]
    return model.with_weights(weights)


def apply_habituation(model: UserModelMLR, eta: float) -> UserModelMLR:
    """Dosage column = (s / eta) * [1, -1/3, -1/3, -1/3].

    s is the mean absolute class sum of the baseline weights (1 when they
    are all zero). Class 0 carries the largest dosage weight, so for every
    state P(R=0) rises with dosage.
    """
    if eta <= 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    weights = model.weights.copy()
    scale = float(np.abs(weights[:, BASELINE].sum(axis=1)).mean()) or 1.0
    weights[:, DOSAGE] = scale / eta * HABITUATION_DIRECTION
    return model.with_weights(weights, has_habituation=True)


@dataclass(frozen=True, eq=False)
class Population:
    models: List[UserModelMLR]
    base_index: np.ndarray
    habituated: np.ndarray

    @property
    def m(self):
        return len(self.models)


def habituated_count(proportion, m):
    return int(np.floor(proportion * m + 0.5))


def generate_user_population(cfg: EnvConfig, rng: np.random.Generator, m: int) -> Population:
    """m users drawn with replacement from the base pool, then the variant applied.

    The same draws are consumed for every variant, so variants of one seed
    share their base models and habituated users.
    """
    if cfg.weights_file:
        pool = load_weight_file(cfg.weights_file)
        if len(pool) != cfg.pool_size:
            logger.warning(f"weight file has {len(pool)} models; using them instead of pool_size={cfg.pool_size}")
    else:
        pool = synthesize_pool(cfg.synthetic, cfg.heterogeneity, cfg.pool_size, rng)

    base_index = rng.integers(0, len(pool), size=m)
    order = rng.permutation(m)

    habituated = np.zeros(m, dtype=bool)
    if cfg.habituation != NONE:
        habituated[order[:habituated_count(cfg.habituation_proportion, m)]] = True

    models = []
    for i, k in enumerate(base_index):
        model = apply_treatment_effect(pool[k], cfg.treatment_effect)
        if habituated[i]:
            model = apply_habituation(model, HABITUATION_ETA[cfg.habituation])
        models.append(model)
    return Population(models, base_index, habituated)
