"""Trial and environment configuration.

Files are YAML (JSON works too). Every key is optional; unknown keys are
rejected. ``to_dict`` feeds run manifests and trial-log headers.
"""
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from app.bandit.baselines import ALGORITHMS, REBANDIT
from app.bandit.empirical_bayes import OptimizerConfig
from app.bandit.exceptions import ConfigError
from app.bandit.policy import DEFAULT_LAMBDA, SmoothingParams
from app.bandit.posterior import METHODS, STRUCTURED
from app.bandit.priors import INITIAL_NOISE_VARIANCE, INITIAL_RANDOM_EFFECT_VARIANCE

MINIMAL, LOW, HIGH = 'minimal', 'low', 'high'
NONE = 'none'
TREATMENT_EFFECTS = (MINIMAL, LOW, HIGH)
HABITUATION_LEVELS = (NONE, LOW, HIGH)

TREATMENT_MULTIPLIERS = {LOW: 0.7, HIGH: 2.5}
HABITUATION_ETA = {LOW: 6.0, HIGH: 1.0}

# Variant id = 5 * treatment-effect index + habituation index
HABITUATION_VARIANTS = (
    (NONE, 0.0),
    (LOW, 0.5),
    (LOW, 1.0),
    (HIGH, 0.5),
    (HIGH, 1.0),
)
VARIANT_COUNT = len(TREATMENT_EFFECTS) * len(HABITUATION_VARIANTS)


def _check_keys(cls, data, section):
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _as_dict(data, section):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be a mapping, got {type(data).__name__}")
    return dict(data)


@dataclass(frozen=True)
class SyntheticPopulationParams:
    """Gaussian weight generator and observable processes of synthetic base models."""

    weight_scale: float = 0.3
    app_usage_mean: float = 350.0
    app_usage_sd: float = 150.0
    app_usage_noise_sd: float = 120.0
    cannabis_rate_a: float = 2.0
    cannabis_rate_b: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"synthetic.{f.name} must be non-negative")
        if self.cannabis_rate_a <= 0 or self.cannabis_rate_b <= 0:
            raise ConfigError("synthetic.cannabis_rate_a and cannabis_rate_b must be positive")

    @classmethod
    def from_dict(cls, data=None):
        data = _as_dict(data, 'synthetic')
        _check_keys(cls, data, 'synthetic')
        return cls(**data)


@dataclass(frozen=True)
class EnvConfig:
    treatment_effect: str = MINIMAL
    habituation: str = NONE
    habituation_proportion: float = 0.0
    pool_size: int = 42
    heterogeneity: float = 1.0
    weights_file: Optional[str] = None
    start_weekday: int = 0
    constant_reward: Optional[int] = None
    synthetic: SyntheticPopulationParams = field(default_factory=SyntheticPopulationParams)

    def __post_init__(self):
        if self.treatment_effect not in TREATMENT_EFFECTS:
            raise ConfigError(f"env.treatment_effect must be one of {TREATMENT_EFFECTS}")
        if self.habituation not in HABITUATION_LEVELS:
            raise ConfigError(f"env.habituation must be one of {HABITUATION_LEVELS}")
        if not 0.0 <= self.habituation_proportion <= 1.0:
            raise ConfigError("env.habituation_proportion must lie in [0, 1]")
        if self.pool_size < 1:
            raise ConfigError("env.pool_size must be at least 1")
        if self.heterogeneity < 0:
            raise ConfigError("env.heterogeneity must be non-negative")
        if not 0 <= self.start_weekday <= 6:
            raise ConfigError("env.start_weekday must be 0 (Monday) .. 6 (Sunday)")
        if self.constant_reward is not None and self.constant_reward not in (0, 1, 2, 3):
            raise ConfigError("env.constant_reward must be one of 0, 1, 2, 3")

    @property
    def habituation_eta(self):
        return HABITUATION_ETA.get(self.habituation)

    @classmethod
    def from_dict(cls, data=None):
        data = _as_dict(data, 'env')
        _check_keys(cls, data, 'env')
        data['synthetic'] = SyntheticPopulationParams.from_dict(data.get('synthetic'))
        return cls(**data)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'synthetic'}
        out['synthetic'] = {f.name: getattr(self.synthetic, f.name) for f in fields(self.synthetic)}
        return out


def variant_env(variant_id: int, base: EnvConfig = None) -> EnvConfig:
    """EnvConfig of environment variant 0..14."""
    if not 0 <= variant_id < VARIANT_COUNT:
        raise ConfigError(f"variant must lie in 0..{VARIANT_COUNT - 1}, got {variant_id}")
    te, h = divmod(variant_id, len(HABITUATION_VARIANTS))
    habituation, proportion = HABITUATION_VARIANTS[h]
    return replace(base or EnvConfig(), treatment_effect=TREATMENT_EFFECTS[te], habituation=habituation,
                   habituation_proportion=proportion)


def variant_id(env: EnvConfig) -> Optional[int]:
    for vid in range(VARIANT_COUNT):
        candidate = variant_env(vid, env)
        if candidate == env:
            return vid
    return None


@dataclass(frozen=True)
class TrialConfig:
    algorithm: str = REBANDIT
    env: EnvConfig = field(default_factory=EnvConfig)
    m: int = 120
    days: int = 30
    n_trials: int = 500
    seed: int = 0
    posterior_cadence: int = 2
    hyperparam_cadence: int = 14
    lam: float = DEFAULT_LAMBDA
    method: str = STRUCTURED
    initial_sigma_eps_sq: float = INITIAL_NOISE_VARIANCE
    initial_random_effect_variance: float = INITIAL_RANDOM_EFFECT_VARIANCE
    budget_seconds: float = 300.0
    workers: int = 1
    write_logs: bool = True
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.m < 1 or self.days < 1 or self.n_trials < 1:
            raise ConfigError("m, days and n_trials must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.posterior_cadence < 1 or not (2 % self.posterior_cadence == 0 or self.posterior_cadence % 2 == 0):
            raise ConfigError("posterior_cadence must be 1 or a whole number of days (even)")
        if self.hyperparam_cadence < 1 or self.hyperparam_cadence % self.posterior_cadence:
            raise ConfigError("hyperparam_cadence must be a positive multiple of posterior_cadence")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.initial_sigma_eps_sq <= 0 or self.initial_random_effect_variance <= 0:
            raise ConfigError("initial variances must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def decision_points(self):
        return 2 * self.days

    @classmethod
    def from_dict(cls, data=None, defaults=None):
        known = {f.name for f in fields(cls)}
        defaults = {k: v for k, v in _as_dict(defaults, 'defaults').items() if k in known}
        merged = _merge(defaults, _as_dict(data, 'config'))
        _check_keys(cls, merged, 'config')
        merged['env'] = EnvConfig.from_dict(merged.get('env'))
        merged['smoothing'] = SmoothingParams.from_dict(merged.get('smoothing'))
        merged['optimizer'] = OptimizerConfig.from_dict(merged.get('optimizer'))
        return cls(**merged)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ('env', 'smoothing', 'optimizer')}
        out['env'] = self.env.to_dict()
        out['smoothing'] = self.smoothing.to_dict()
        out['optimizer'] = self.optimizer.to_dict()
        return out

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def with_overrides(self, **changes):
        """Copy with top-level fields replaced; ``variant`` rewrites the environment."""
        variant = changes.pop('variant', None)
        env_changes = changes.pop('env_changes', None) or {}
        cfg = replace(self, **{k: v for k, v in changes.items() if v is not None})
        env = cfg.env
        if variant is not None:
            env = variant_env(variant, env)
        if env_changes:
            env = replace(env, **env_changes)
        return replace(cfg, env=env)


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_trial_config(path=None, defaults=None) -> TrialConfig:
    if path is None:
        return TrialConfig.from_dict({}, defaults)
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return TrialConfig.from_dict(data, defaults)
