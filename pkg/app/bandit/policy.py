"""Clipped smooth posterior sampling, action sampling and reward engineering."""
import logging
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np
from scipy.special import expit, ndtr
from scipy.stats import norm

from app.bandit.exceptions import ConfigError, InvalidInputError
from app.bandit.features import BETA, StateTriple, build_baseline_features
from app.bandit.rng import generator_from_state, generator_state

logger = logging.getLogger(__name__)

REWARD_VALUES = (0, 1, 2, 3)
DEFAULT_LAMBDA = 0.2
NEGATIVE_VARIANCE_TOLERANCE = 1e-10
# logistic-scale spread up to which Gauss-Hermite alone is accurate
HERMITE_SCALE_LIMIT = 2.0


@dataclass(frozen=True)
class SmoothingParams:
    """rho(x) = l_min + (l_max - l_min) / (1 + c exp(-b x)); b = 20 / 0.95."""

    l_min: float = 0.2
    l_max: float = 0.8
    c: float = 5.0
    b: float = 21.053
    nodes: int = 64

    def __post_init__(self):
        if not 0.0 <= self.l_min < self.l_max <= 1.0:
            raise ConfigError(f"need 0 <= l_min < l_max <= 1, got ({self.l_min}, {self.l_max})")
        if self.c <= 0 or self.b <= 0:
            raise ConfigError(f"c and b must be positive, got c={self.c}, b={self.b}")
        if self.nodes < 1:
            raise ConfigError(f"quadrature needs at least one node, got {self.nodes}")

    @classmethod
    def from_dict(cls, data=None):
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown smoothing keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def rho(x, sp: SmoothingParams = SmoothingParams()):
    """Generalized logistic; works elementwise on arrays."""
    return sp.l_min + (sp.l_max - sp.l_min) * expit(sp.b * np.asarray(x, dtype=float) - np.log(sp.c))


@lru_cache(maxsize=8)
def _hermgauss(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=8)
def _laggauss(n):
    x, w = np.polynomial.laguerre.laggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _advantage_moments(mu_beta, sigma_beta, f_s):
    mu_beta = np.asarray(mu_beta, dtype=float)
    sigma_beta = np.asarray(sigma_beta, dtype=float)
    f_s = np.asarray(f_s, dtype=float)
    if mu_beta.shape != f_s.shape or sigma_beta.shape != (f_s.shape[0], f_s.shape[0]):
        raise InvalidInputError(
            f"shape mismatch: mean {mu_beta.shape}, covariance {sigma_beta.shape}, features {f_s.shape}")
    mean = float(f_s @ mu_beta)
    variance = float(f_s @ sigma_beta @ f_s)
    if variance < -NEGATIVE_VARIANCE_TOLERANCE:
        raise InvalidInputError(f"advantage variance is negative: {variance:.3e}")
    return mean, max(variance, 0.0)


def _expected_expit(loc, scale, nodes):
    """E[expit(U)], U ~ N(loc, scale^2), with fixed nodes.

    Narrow U: Gauss-Hermite on U directly. Wide U: expit = 1{u > 0} + remainder;
    the step term is Phi(loc / scale) and the remainder, which decays like
    exp(-|u|), is integrated on each half-line by Gauss-Laguerre.
    """
    if scale <= HERMITE_SCALE_LIMIT:
        x, w = _hermgauss(nodes)
        return float(w @ expit(loc + np.sqrt(2.0) * scale * x)) / np.sqrt(np.pi)
    v, w = _laggauss(nodes)
    tail = 1.0 / (1.0 + np.exp(-v))
    upper = float(w @ (norm.pdf(v, loc, scale) * tail))
    lower = float(w @ (norm.pdf(-v, loc, scale) * tail))
    return float(ndtr(loc / scale)) - upper + lower


def action_probability(mu_beta, sigma_beta, f_s, sp: SmoothingParams = SmoothingParams()) -> float:
    """E[rho(Z)], Z ~ N(f^T mu, f^T Sigma f), by fixed-node quadrature."""
    mean, variance = _advantage_moments(mu_beta, sigma_beta, f_s)
    if variance == 0.0:
        value = float(rho(mean, sp))
    else:
        expected = _expected_expit(sp.b * mean - np.log(sp.c), sp.b * np.sqrt(variance), sp.nodes)
        value = sp.l_min + (sp.l_max - sp.l_min) * expected
    return float(np.clip(value, sp.l_min, sp.l_max))


def classical_probability(mu_beta, sigma_beta, f_s, sp: SmoothingParams = SmoothingParams()) -> float:
    """Test mode: rho replaced by 1{x > 0}, i.e. P(Z > 0), then clipped."""
    mean, variance = _advantage_moments(mu_beta, sigma_beta, f_s)
    if variance == 0.0:
        value = float(mean > 0)
    else:
        value = float(norm.cdf(mean / np.sqrt(variance)))
    return float(np.clip(value, sp.l_min, sp.l_max))


def user_action_probability(mu_i, sigma_i, state: StateTriple, sp: SmoothingParams = SmoothingParams()) -> float:
    """Probability for a 24-dim user posterior; uses the advantage block."""
    return action_probability(np.asarray(mu_i)[BETA], np.asarray(sigma_i)[BETA, BETA],
                              build_baseline_features(state), sp)


def _check_probability(pi):
    if not 0.0 <= pi <= 1.0:
        raise InvalidInputError(f"pi must lie in [0, 1], got {pi!r}")


def action_from_draw(pi: float, draw: float) -> int:
    return int(draw < pi)


def sample_action(pi: float, rng: np.random.Generator):
    """(action, draw) with action = 1 iff draw < pi."""
    _check_probability(pi)
    draw = float(rng.random())
    return action_from_draw(pi, draw), draw


class PolicyStream:
    """The policy's random substream; checkpointable for replay."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def sample(self, pi):
        return sample_action(pi, self.rng)

    def state(self):
        return generator_state(self.rng)

    @classmethod
    def from_state(cls, data):
        return cls(generator_from_state(data))


def validate_reward(raw) -> int:
    if isinstance(raw, bool) or raw not in REWARD_VALUES:
        raise InvalidInputError(f"reward must be one of {REWARD_VALUES}, got {raw!r}")
    return int(raw)


class RunningRewardStats:
    """Welford count / mean / M2 of each user's observed raw rewards."""

    def __init__(self, count=None, mean=None, m2=None, m=0):
        self.count = np.zeros(m, dtype=np.int64) if count is None else np.asarray(count, dtype=np.int64)
        self.mean = np.zeros(m) if mean is None else np.asarray(mean, dtype=float)
        self.m2 = np.zeros(m) if m2 is None else np.asarray(m2, dtype=float)

    @property
    def m(self):
        return self.count.shape[0]

    def add_user(self):
        self.count = np.append(self.count, 0)
        self.mean = np.append(self.mean, 0.0)
        self.m2 = np.append(self.m2, 0.0)
        return self.m - 1

    def update(self, user, raw):
        self._check_user(user)
        self.count[user] += 1
        delta = raw - self.mean[user]
        self.mean[user] += delta / self.count[user]
        self.m2[user] += delta * (raw - self.mean[user])

    def std(self, user) -> float:
        """Population standard deviation; 0 below two observations."""
        self._check_user(user)
        if self.count[user] < 2:
            return 0.0
        return float(np.sqrt(max(self.m2[user], 0.0) / self.count[user]))

    def _check_user(self, user):
        if not 0 <= user < self.m:
            raise InvalidInputError(f"user index {user} out of range for m={self.m}")

    def copy(self):
        return RunningRewardStats(self.count.copy(), self.mean.copy(), self.m2.copy())

    def to_dict(self):
        return {'count': self.count.tolist(), 'mean': self.mean.tolist(), 'm2': self.m2.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data['count'], data['mean'], data['m2'])


class RewardEngineeringParams:
    """Penalty weight lambda plus the running raw-reward statistics."""

    def __init__(self, lam=DEFAULT_LAMBDA, stats: RunningRewardStats = None, m=0):
        if lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {lam!r}")
        self.lam = float(lam)
        self.stats = stats if stats is not None else RunningRewardStats(m=m)

    def sigma_obs(self, user):
        return self.stats.std(user)

    def record(self, user, raw):
        """Fold a raw reward into the statistics, after it was engineered."""
        self.stats.update(user, validate_reward(raw))


def engineer_reward(raw, action, params: RewardEngineeringParams, user) -> float:
    """raw - action * lambda * sigma_obs, sigma_obs taken before this decision point."""
    raw = validate_reward(raw)
    if action not in (0, 1):
        raise InvalidInputError(f"action must be 0 or 1, got {action!r}")
    if action == 0 or params.lam == 0.0:
        return float(raw)
    return raw - params.lam * params.sigma_obs(user)


@dataclass(frozen=True)
class DecisionRecord:
    user: int
    t: int
    state: StateTriple
    pi: float
    action: int
    raw_reward: int
    engineered_reward: float
    rng_draw: float

    def __post_init__(self):
        if self.action == 0 and self.engineered_reward != self.raw_reward:
            raise InvalidInputError("engineered reward must equal the raw reward when no action was sent")

    def to_dict(self):
        return {
            'user': self.user,
            't': self.t,
            'state': list(self.state.as_tuple()),
            'pi': self.pi,
            'action': self.action,
            'raw_reward': self.raw_reward,
            'engineered_reward': self.engineered_reward,
            'rng_draw': self.rng_draw,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['user']), int(data['t']), StateTriple.from_sequence(data['state']),
                   float(data['pi']), int(data['action']), int(data['raw_reward']),
                   float(data['engineered_reward']), float(data['rng_draw']))
