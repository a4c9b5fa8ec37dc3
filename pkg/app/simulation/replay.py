"""Replay and diagnostics over recorded trial logs.

Neither function touches the environment: sufficient statistics are rebuilt
from the logged (state, pi, action, engineered reward) records.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.bandit.exceptions import BanditError
from app.bandit.features import build_design
from app.bandit.implicit import population_statistics, population_summary
from app.bandit.policy import DecisionRecord, action_from_draw
from app.bandit.priors import HyperParams, default_prior, initial_hyperparams
from app.bandit.stats import SufficientStats
from app.simulation.config import TrialConfig
from app.simulation.runner import build_algorithm, run_update
from app.simulation.trial_log import DECISION, HYPERPARAM_UPDATE, POSTERIOR_UPDATE, UPDATE, read_trial_log

logger = logging.getLogger(__name__)

PI_TOLERANCE = 1e-12


@dataclass
class ReplayReport:
    records: int = 0
    updates: int = 0
    mismatches: int = 0
    first_mismatch: Optional[dict] = None
    mismatched: List[dict] = field(default_factory=list)

    @property
    def ok(self):
        return self.mismatches == 0


def replay_trial_log(path, config: TrialConfig = None) -> ReplayReport:
    """Recompute every pi and action of a log; ``config`` overrides the logged one."""
    log = read_trial_log(path)
    cfg = config or TrialConfig.from_dict(log.config)
    prior = default_prior()
    algorithm = build_algorithm(cfg, prior)
    stats = SufficientStats.empty(cfg.m, prior.dim)
    report = ReplayReport()

    for event in log.events:
        if event['kind'] == UPDATE:
            run_update(algorithm, event['update'], stats, event['t'])
            report.updates += 1
            continue
        if event['kind'] != DECISION:
            continue
        record = DecisionRecord.from_dict(event)
        pi = algorithm.probability(record.user, record.state)
        action = action_from_draw(pi, record.rng_draw)
        if abs(pi - record.pi) > PI_TOLERANCE or action != record.action:
            mismatch = {'user': record.user, 't': record.t, 'logged_pi': record.pi, 'replayed_pi': pi,
                        'logged_action': record.action, 'replayed_action': action}
            report.mismatches += 1
            report.first_mismatch = report.first_mismatch or mismatch
            report.mismatched.append(mismatch)
        stats.add(record.user, build_design(record.state, record.action, record.pi), record.engineered_reward)
        report.records += 1

    if report.mismatches:
        logger.warning(f"replay of {path}: {report.mismatches} of {report.records} decisions differ")
    return report


def _logged_hyperparams(hyperparams, current: HyperParams) -> HyperParams:
    if not hyperparams:
        return current
    if 'sigma_u' in hyperparams:
        return HyperParams.from_dict(hyperparams)
    return HyperParams(float(hyperparams['sigma_eps_sq']), current.sigma_u)


def diagnose_trial_log(path) -> List[dict]:
    """One row of population statistics per posterior-update epoch of a log."""
    log = read_trial_log(path)
    cfg = TrialConfig.from_dict(log.config)
    prior = default_prior()
    hp = initial_hyperparams(prior.dim, cfg.initial_sigma_eps_sq, cfg.initial_random_effect_variance)
    stats = SufficientStats.empty(cfg.m, prior.dim)
    rows = []

    for event in log.events:
        if event['kind'] == DECISION:
            record = DecisionRecord.from_dict(event)
            stats.add(record.user, build_design(record.state, record.action, record.pi), record.engineered_reward)
            continue
        if event['kind'] != UPDATE:
            continue
        if event['update'] == HYPERPARAM_UPDATE:
            hp = _logged_hyperparams(event.get('hyperparams'), hp)
            continue
        if event['update'] != POSTERIOR_UPDATE:
            continue
        row = {'epoch': len(rows), 't': event['t'], 'sigma_eps_sq': hp.sigma_eps_sq,
               'sigma_u_trace': float(np.trace(hp.sigma_u))}
        try:
            row.update(population_summary(population_statistics(prior, hp, stats)))
        except BanditError as exc:
            logger.warning(f"epoch {row['epoch']} of {path}: {exc}")
        rows.append(row)
    return rows
