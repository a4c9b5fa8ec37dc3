"""Reward and state generation for one simulated user.

Each (user, decision point) consumes exactly ``DRAWS_PER_STEP`` uniforms from
the user's own environment substream, whatever the policy does, so two
algorithms run on one trial seed see the same environment randomness.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import ndtri, softmax

from app.bandit.exceptions import InvalidInputError
from app.bandit.features import INITIAL_STATE, StateTriple, next_state, time_of_day
from app.simulation.config import EnvConfig
from app.simulation.population import N_CLASSES, N_ENV_FEATURES, UserModelMLR

logger = logging.getLogger(__name__)

CANNABIS_MEAN = 1.3
CANNABIS_STD = 1.35
APP_USAGE_MEAN = 350.0
APP_USAGE_STD = 350.0
APP_USAGE_MAX = APP_USAGE_MEAN + APP_USAGE_STD
DAY_MEAN = 15.5
DAY_STD = 14.5

# Reported grams per use, scaled by the share of daily use at each time of day
GRAMS_GRID = (0.25, 0.5, 1.0, 1.5, 2.0, 2.5)
TIME_OF_DAY_FACTOR = (0.33 * 1.5, 0.67 * 1.5)

DOSAGE_WINDOW = 6
DOSAGE_KAPPA = 5.0 / 6.0

DRAWS_PER_STEP = 4


@dataclass(frozen=True)
class DosageState:
    kappa: float = DOSAGE_KAPPA
    window: int = DOSAGE_WINDOW

    @property
    def d_kappa(self):
        return (1.0 - self.kappa) / (1.0 - self.kappa ** self.window)

    @property
    def weights(self):
        """Weight of a_{t-1}, a_{t-2}, ...; sums to 1."""
        return self.d_kappa * self.kappa ** np.arange(self.window)


def compute_dosage(history: Sequence[int], ds: DosageState = DosageState()) -> float:
    """Q = d_kappa * sum_j kappa^(j-1) a_{t-j}; ``history`` is most recent first, zero-padded."""
    history = list(history)
    if len(history) > ds.window:
        raise InvalidInputError(f"dosage history holds at most {ds.window} actions, got {len(history)}")
    padded = np.zeros(ds.window)
    padded[:len(history)] = history
    return float(np.clip(ds.weights @ padded, 0.0, 1.0))


def normalize_day(day):
    return (day - DAY_MEAN) / DAY_STD


def normalize_app_usage(seconds):
    return (seconds - APP_USAGE_MEAN) / APP_USAGE_STD


def normalize_cannabis(grams):
    return (grams - CANNABIS_MEAN) / CANNABIS_STD


def is_weekend(day_index, start_weekday=0):
    """day_index is 0-based; weekdays 0 Monday .. 6 Sunday."""
    return int((day_index + start_weekday) % 7 >= 5)


def env_features(base, action, dosage) -> np.ndarray:
    """[six baseline features, action * (same six), dosage]."""
    base = np.asarray(base, dtype=float)
    return np.concatenate([base, action * base, [dosage]])


def reward_probabilities(model: UserModelMLR, features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape != (N_ENV_FEATURES,):
        raise InvalidInputError(f"environment features must have {N_ENV_FEATURES} entries, got {features.shape}")
    return softmax(model.weights @ features)


def reward_from_uniform(probabilities, u) -> int:
    cumulative = np.cumsum(probabilities)
    return int(min(np.searchsorted(cumulative, u, side='right'), N_CLASSES - 1))


def sample_reward(model: UserModelMLR, features, action, rng: np.random.Generator) -> int:
    """Class drawn from the softmax of the class logits.

    ``features`` is [six baseline features, dosage]; the action columns are
    built from ``action``.
    """
    features = np.asarray(features, dtype=float)
    if features.shape != (7,):
        raise InvalidInputError(f"expected six baseline features plus dosage, got {features.shape}")
    x = env_features(features[:6], action, features[6])
    return reward_from_uniform(reward_probabilities(model, x), rng.random())


def synthesize_observables(prev_reward):
    """(survey completion, app-usage indicator, activity answer) implied by a reward."""
    if prev_reward not in (0, 1, 2, 3):
        raise InvalidInputError(f"reward must be one of 0, 1, 2, 3, got {prev_reward!r}")
    return int(prev_reward >= 2), int(prev_reward >= 1), int(prev_reward == 3)


def initial_state() -> StateTriple:
    return INITIAL_STATE


@dataclass(frozen=True)
class StepOutcome:
    reward: int
    next_state: StateTriple
    dosage: float
    cannabis_report: Optional[bool]
    observables: tuple


class SimulatedUser:
    """Environment side of one participant: reward history, dosage and observables."""

    def __init__(self, model: UserModelMLR, rng: np.random.Generator, cfg: EnvConfig = EnvConfig(),
                 ds: DosageState = DosageState()):
        self.model = model
        self.rng = rng
        self.cfg = cfg
        self.ds = ds
        self.actions = deque(maxlen=ds.window)
        self.rewards: List[int] = []
        self.state = initial_state()

    @property
    def prev_reward(self):
        return self.rewards[-1] if self.rewards else None

    def dosage(self):
        return compute_dosage(reversed(self.actions), self.ds)

    def step(self, t: int, action: int) -> StepOutcome:
        """Sample the reward of decision point t under ``action`` and advance the RL state."""
        if action not in (0, 1):
            raise InvalidInputError(f"action must be 0 or 1, got {action!r}")
        u_reward, u_use, u_grams, u_app = self.rng.random(DRAWS_PER_STEP)

        prev = self.prev_reward
        survey, app_used, _ = synthesize_observables(prev) if prev is not None else (0, 0, 0)
        seconds = 0.0
        if app_used:
            seconds = float(np.clip(self.model.app_usage + self.cfg.synthetic.app_usage_noise_sd * ndtri(u_app),
                                    0.0, APP_USAGE_MAX))
        used = bool(u_use < self.model.cannabis_rate)
        grams = 0.0
        if used:
            grams = GRAMS_GRID[min(int(u_grams * len(GRAMS_GRID)), len(GRAMS_GRID) - 1)] * TIME_OF_DAY_FACTOR[time_of_day(t)]
        day_index = t // 2
        base = [1.0, survey, normalize_app_usage(seconds), normalize_cannabis(grams),
                is_weekend(day_index, self.cfg.start_weekday), normalize_day(day_index + 1)]

        dosage = self.dosage() if self.model.has_habituation else 0.0
        probabilities = reward_probabilities(self.model, env_features(base, action, dosage))
        if self.cfg.constant_reward is not None:
            reward = int(self.cfg.constant_reward)
        else:
            reward = reward_from_uniform(probabilities, u_reward)

        observables = synthesize_observables(reward)
        # use is only reported when this decision point's survey was completed
        report = used if observables[0] else None
        self.rewards.append(reward)
        self.actions.append(action)
        self.state = next_state(self.rewards, t + 1, report)
        return StepOutcome(reward, self.state, dosage, report, observables)


def step_environment(user: SimulatedUser, t: int, action: int):
    """(next RL state, reward) for one user at decision point t."""
    outcome = user.step(t, action)
    return outcome.next_state, outcome.reward
