"""State triples, feature maps g/f and the action-centred design vector."""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.bandit.exceptions import InvalidInputError

FEATURE_DIM = 8
PARAM_DIM = 3 * FEATURE_DIM

# Blocks of the 24-dim parameter [alpha | beta | gamma]
ALPHA = slice(0, FEATURE_DIM)
BETA = slice(FEATURE_DIM, 2 * FEATURE_DIM)
GAMMA = slice(2 * FEATURE_DIM, 3 * FEATURE_DIM)

FEATURE_NAMES = ('intercept', 'S1', 'S2', 'S3', 'S1S2', 'S2S3', 'S1S3', 'S1S2S3')

ENGAGEMENT_WINDOW = 3
ENGAGEMENT_THRESHOLD = 2.0


@dataclass(frozen=True)
class StateTriple:
    """RL state: recent engagement, time of day, recent cannabis use."""

    s1: int
    s2: int
    s3: int

    def __post_init__(self):
        for name in ('s1', 's2', 's3'):
            if getattr(self, name) not in (0, 1):
                raise InvalidInputError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")

    def as_tuple(self):
        return (self.s1, self.s2, self.s3)

    @classmethod
    def from_sequence(cls, values: Sequence[int]) -> 'StateTriple':
        if len(values) != 3:
            raise InvalidInputError(f"state needs 3 entries, got {len(values)}")
        return cls(*(int(v) for v in values))


# No engagement, morning, regular cannabis use
INITIAL_STATE = StateTriple(0, 0, 1)


def build_baseline_features(s: StateTriple) -> np.ndarray:
    """g(S) = f(S) = [1, S1, S2, S3, S1S2, S2S3, S1S3, S1S2S3]."""
    s1, s2, s3 = s.s1, s.s2, s.s3
    return np.array([1, s1, s2, s3, s1 * s2, s2 * s3, s1 * s3, s1 * s2 * s3], dtype=float)


def build_design(s: StateTriple, a: int, pi: float) -> np.ndarray:
    """Phi(S, a, pi) = [g(S), (a - pi) f(S), pi f(S)]."""
    if not 0.0 <= pi <= 1.0:
        raise InvalidInputError(f"pi must lie in [0, 1], got {pi!r}")
    if a not in (0, 1):
        raise InvalidInputError(f"action must be 0 or 1, got {a!r}")
    f = build_baseline_features(s)
    return np.concatenate([f, (a - pi) * f, pi * f])


def engagement_indicator(raw_rewards: Sequence[float]) -> int:
    """s1 = 1 when the mean of the last three observed raw rewards is >= 2."""
    recent = list(raw_rewards)[-ENGAGEMENT_WINDOW:]
    if not recent:
        return 0
    return int(float(np.mean(recent)) >= ENGAGEMENT_THRESHOLD)


def time_of_day(t: int) -> int:
    """0-based decision index -> 0 morning, 1 evening."""
    return t % 2


def cannabis_indicator(reported_use: Optional[bool]) -> int:
    # a missing report counts as use
    if reported_use is None or reported_use:
        return 0
    return 1


def next_state(raw_rewards: Sequence[float], t: int, reported_use: Optional[bool]) -> StateTriple:
    """State at 0-based decision index t from the user's observed history."""
    if t == 0:
        return INITIAL_STATE
    return StateTriple(engagement_indicator(raw_rewards), time_of_day(t), cannabis_indicator(reported_use))


def update_state(s: StateTriple, rewards_history: Sequence[float], cannabis_report: Optional[bool], t: int) -> StateTriple:
    """Advance ``s`` to decision index t; the previous state only matters at t == 0."""
    if t == 0:
        return s
    return next_state(rewards_history, t, cannabis_report)
