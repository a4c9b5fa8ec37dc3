from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from app.bandit.empirical_bayes import OptimizerConfig
from app.bandit.exceptions import ConfigError
from app.bandit.policy import DEFAULT_LAMBDA, SmoothingParams
from app.bandit.posterior import METHODS, STRUCTURED
from app.bandit.priors import INITIAL_NOISE_VARIANCE, INITIAL_RANDOM_EFFECT_VARIANCE


@dataclass(frozen=True)
class StudyConfig:
    """Settings of one deployed study."""

    max_users: int = 120
    seed: int = 0
    lam: float = DEFAULT_LAMBDA
    method: str = STRUCTURED
    initial_sigma_eps_sq: float = INITIAL_NOISE_VARIANCE
    initial_random_effect_variance: float = INITIAL_RANDOM_EFFECT_VARIANCE
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.max_users < 1:
            raise ConfigError("max_users must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.initial_sigma_eps_sq <= 0 or self.initial_random_effect_variance <= 0:
            raise ConfigError("initial variances must be positive")

    @classmethod
    def from_dict(cls, data=None, defaults=None):
        known = {f.name for f in fields(cls)}
        merged = {k: v for k, v in (defaults or {}).items() if k in known}
        data = dict(data or {})
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown study config keys: {sorted(unknown)}")
        for key in ('smoothing', 'optimizer'):
            if isinstance(merged.get(key), dict) and isinstance(data.get(key), dict):
                data[key] = {**merged[key], **data[key]}
        merged.update(data)
        merged['smoothing'] = SmoothingParams.from_dict(merged.get('smoothing'))
        merged['optimizer'] = OptimizerConfig.from_dict(merged.get('optimizer'))
        return cls(**merged)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ('smoothing', 'optimizer')}
        out['smoothing'] = self.smoothing.to_dict()
        out['optimizer'] = self.optimizer.to_dict()
        return out


def load_study_config(path=None, defaults=None) -> StudyConfig:
    if not path:
        return StudyConfig.from_dict({}, defaults)
    try:
        data = yaml.safe_load(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigError(f"study config not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"study config {path} is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"study config {path} must be a mapping")
    return StudyConfig.from_dict(data, defaults)
