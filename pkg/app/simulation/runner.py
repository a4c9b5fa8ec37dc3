"""Seeded simulated trials: the day / decision-point loop and the trial pool."""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from app import __version__
from app.bandit.baselines import make_algorithm
from app.bandit.exceptions import BanditError
from app.bandit.features import build_design
from app.bandit.policy import DecisionRecord, PolicyStream, RewardEngineeringParams, engineer_reward
from app.bandit.priors import PriorSpec, default_prior
from app.bandit.rng import stream, trial_seeds
from app.bandit.stats import SufficientStats
from app.simulation.config import TrialConfig, variant_id
from app.simulation.environment import SimulatedUser
from app.simulation.population import generate_user_population
from app.simulation.trial_log import HYPERPARAM_UPDATE, POSTERIOR_UPDATE, TrialLogWriter

logger = logging.getLogger(__name__)


@dataclass
class TrialResult:
    trial_index: int
    trial_seed: int
    algorithm: str
    user_totals: np.ndarray
    send_rate: float
    decision_points: int
    elapsed: float = 0.0
    log_path: Optional[str] = None
    posterior_trace: List[dict] = field(default_factory=list)
    numerical_warnings: int = 0

    @property
    def mean(self):
        """Average total raw reward per user."""
        return float(self.user_totals.mean())


def build_algorithm(cfg: TrialConfig, prior: PriorSpec = None):
    return make_algorithm(cfg.algorithm, prior or default_prior(), cfg.m, cfg.smoothing, cfg.optimizer,
                          cfg.method, sigma_eps_sq=cfg.initial_sigma_eps_sq,
                          random_effect_variance=cfg.initial_random_effect_variance)


def run_update(algorithm, update, stats, t):
    """Run one scheduled update; numerical failures keep the previous model."""
    try:
        if update == HYPERPARAM_UPDATE:
            return algorithm.update_hyperparams(stats), None
        algorithm.update_posterior(stats)
        return None, None
    except BanditError as exc:
        logger.warning(f"{update} update at t={t} failed, keeping the previous model: {exc}")
        return None, str(exc)


def scheduled_updates(cfg: TrialConfig, t: int):
    """Updates due after decision point t, hyperparameters first."""
    due = []
    if (t + 1) % cfg.hyperparam_cadence == 0:
        due.append(HYPERPARAM_UPDATE)
    if (t + 1) % cfg.posterior_cadence == 0:
        due.append(POSTERIOR_UPDATE)
    return due


def run_trial(cfg: TrialConfig, trial_seed: int, trial_index: int = 0, log_path=None,
              prior: PriorSpec = None) -> TrialResult:
    """One simulated trial of ``cfg.m`` users over ``cfg.days`` days."""
    started = time.monotonic()
    prior = prior or default_prior()
    population = generate_user_population(cfg.env, stream(trial_seed, 'population'), cfg.m)
    users = [SimulatedUser(model, stream(trial_seed, 'environment', i), cfg.env)
             for i, model in enumerate(population.models)]
    policy = PolicyStream(stream(trial_seed, 'policy'))
    algorithm = build_algorithm(cfg, prior)
    stats = SufficientStats.empty(cfg.m, prior.dim)
    reward_params = RewardEngineeringParams(cfg.lam, m=cfg.m)

    totals = np.zeros(cfg.m)
    sent = 0
    failures = 0
    trace = []
    with TrialLogWriter(log_path) as log:
        log.header(cfg.to_dict(), trial_seed, trial_index, cfg.algorithm, variant_id(cfg.env), __version__)
        for t in range(cfg.decision_points):
            for i, user in enumerate(users):
                state = user.state
                pi = algorithm.probability(i, state)
                action, draw = policy.sample(pi)
                outcome = user.step(t, action)
                engineered = engineer_reward(outcome.reward, action, reward_params, i)
                reward_params.record(i, outcome.reward)
                stats.add(i, build_design(state, action, pi), engineered)
                log.decision(DecisionRecord(i, t, state, pi, action, outcome.reward, engineered, draw))
                totals[i] += outcome.reward
                sent += action

            for update in scheduled_updates(cfg, t):
                summary, error = run_update(algorithm, update, stats, t)
                failures += error is not None
                log.update(t, update, summary, algorithm.hyperparams_dict(), error)
                if update == POSTERIOR_UPDATE:
                    trace.append({'trial': trial_index, 't': t, **algorithm.snapshot_summary()})

    elapsed = time.monotonic() - started
    if elapsed > cfg.budget_seconds:
        logger.warning(f"trial {trial_index} took {elapsed:.1f}s, over the {cfg.budget_seconds:g}s budget")
    return TrialResult(trial_index, trial_seed, cfg.algorithm, totals, sent / (cfg.m * cfg.decision_points),
                       cfg.decision_points, elapsed, str(log_path) if log_path else None, trace, failures)


def trial_log_path(out_dir, trial_index):
    return Path(out_dir) / 'logs' / f'trial-{trial_index}.jsonl'


def _run_task(task):
    cfg, seed, index, log_path = task
    return run_trial(cfg, seed, index, log_path)


def run_trials(cfg: TrialConfig, out_dir=None) -> List[TrialResult]:
    """All ``cfg.n_trials`` trials, ordered by trial index whatever the worker count."""
    seeds = trial_seeds(cfg.seed, cfg.n_trials)
    tasks = [(cfg, seed, k, trial_log_path(out_dir, k) if out_dir and cfg.write_logs else None)
             for k, seed in enumerate(seeds)]
    logger.info(f"running {len(tasks)} {cfg.algorithm} trials (m={cfg.m}, days={cfg.days}, "
                f"variant={variant_id(cfg.env)}, workers={cfg.workers})")
    if cfg.workers == 1:
        results = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            results = list(executor.map(_run_task, tasks))
    return sorted(results, key=lambda r: r.trial_index)
