"""In-process state of a deployed study.

Every write (registration, decision, reward, update) is appended to the
journal before it takes effect in memory, under one writer lock. Decisions
read an immutable ``Snapshot``; an update builds its replacement from a cut
of the statistics outside the lock and swaps it in when done. Restarting
replays the journal, re-drawing every action from the checkpointed policy
stream, and must land on the same snapshot.
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from django.conf import settings

from app.bandit.empirical_bayes import update_hyperparams
from app.bandit.exceptions import InvalidInputError
from app.bandit.features import INITIAL_STATE, StateTriple, build_design, update_state
from app.bandit.policy import (PolicyStream, RewardEngineeringParams, engineer_reward, user_action_probability,
                               validate_reward)
from app.bandit.posterior import PosteriorState, posterior_update
from app.bandit.priors import HyperParams, PriorSpec, default_prior, initial_hyperparams
from app.bandit.rng import stream
from app.bandit.stats import SufficientStats
from app.study.config import StudyConfig, load_study_config
from app.study.exceptions import (DuplicateRegistrationError, ReplayMismatchError, RewardConflictError,
                                  StudyFullError, UnknownDecisionError, UnknownUserError)
from app.study.journal import Journal, latest_snapshot, save_snapshot

logger = logging.getLogger(__name__)

NIGHTLY = 'nightly'
WEEKLY = 'weekly'
UPDATE_KINDS = (NIGHTLY, WEEKLY)

REGISTER = 'register'
DECISION = 'decision'
REWARD = 'reward'
UPDATE = 'update'

PI_TOLERANCE = 1e-12


@dataclass
class Participant:
    user_id: int
    external_id: str
    metadata: dict = field(default_factory=dict)
    decision_ids: List[int] = field(default_factory=list)
    rewards: List[int] = field(default_factory=list)


@dataclass
class Decision:
    decision_id: int
    user_id: int
    t: int
    state: StateTriple
    pi: float
    action: int
    rng_draw: float
    snapshot: int
    observables: dict
    raw_reward: Optional[int] = None
    engineered_reward: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Snapshot:
    """What decisions are served from: posterior, hyperparameters and the statistics cut behind them."""

    seq: int
    hp: HyperParams
    posterior: Optional[PosteriorState] = None
    stats: Optional[SufficientStats] = None
    reward_cursor: int = 0
    user_cursor: int = 0

    @property
    def m(self):
        return 0 if self.posterior is None else self.posterior.m

    def extended(self, m, prior: PriorSpec, method):
        """Same cut, with empty users appended up to m."""
        stats = self.stats.with_users(m) if self.stats is not None else SufficientStats.empty(m, prior.dim)
        return Snapshot(self.seq, self.hp, posterior_update(prior, self.hp, stats, method), self.stats,
                        self.reward_cursor, self.user_cursor)

    def probability(self, user_id, state, sp):
        mu_i, sigma_i = self.posterior.user(user_id)
        return user_action_probability(mu_i, sigma_i, state, sp)


@dataclass(frozen=True, eq=False)
class UpdateResult:
    hp: HyperParams
    posterior: Optional[PosteriorState]
    fit: Optional[dict]


class StudyEngine:
    def __init__(self, state_dir, config: StudyConfig = None, prior: PriorSpec = None):
        self.config = config or StudyConfig()
        self.prior = prior or default_prior()
        self.state_dir = state_dir
        self._lock = threading.RLock()
        self._update_lock = threading.Lock()

        self.participants: List[Participant] = []
        self.by_external_id = {}
        self.decisions: List[Decision] = []
        self.stats: Optional[SufficientStats] = None
        self.observations = []
        self.reward_params = RewardEngineeringParams(self.config.lam, m=0)
        self.policy = PolicyStream(stream(self.config.seed, 'policy'))
        self.hp = initial_hyperparams(self.prior.dim, self.config.initial_sigma_eps_sq,
                                      self.config.initial_random_effect_variance)
        self.snapshot = Snapshot(0, self.hp)
        self.update_counts = {NIGHTLY: 0, WEEKLY: 0}
        self._last_update_posterior = None

        self.journal = Journal(state_dir)
        self._recover()

    # -- reads

    def participant(self, user_id) -> Participant:
        if not isinstance(user_id, int) or not 0 <= user_id < len(self.participants):
            raise UnknownUserError(f"unknown user {user_id!r}")
        return self.participants[user_id]

    def decision(self, decision_id) -> Decision:
        if not isinstance(decision_id, int) or not 0 <= decision_id < len(self.decisions):
            raise UnknownDecisionError(f"unknown decision {decision_id!r}")
        return self.decisions[decision_id]

    def list_decisions(self, user_id=None):
        with self._lock:
            if user_id is None:
                return list(self.decisions)
            return [self.decisions[k] for k in self.participant(user_id).decision_ids]

    def status(self):
        with self._lock:
            snapshot = self.snapshot
            return {
                'snapshot': snapshot.seq,
                'hyperparams': snapshot.hp.to_dict(),
                'users': len(self.participants),
                'decisions': len(self.decisions),
                'rewards': len(self.observations),
                'reward_cursor': snapshot.reward_cursor,
                'user_cursor': snapshot.user_cursor,
                'updates': dict(self.update_counts),
            }

    # -- writes

    def register(self, external_id, metadata=None):
        """(participant, created); re-registering the same external id is idempotent."""
        metadata = metadata or {}
        with self._lock:
            if external_id in self.by_external_id:
                existing = self.participants[self.by_external_id[external_id]]
                if metadata and metadata != existing.metadata:
                    raise DuplicateRegistrationError(f"{external_id!r} is registered with a different payload")
                return existing, False
            if len(self.participants) >= self.config.max_users:
                raise StudyFullError(f"study is full ({self.config.max_users} users)")
            event = self.journal.append({'type': REGISTER, 'external_id': external_id, 'metadata': metadata})
            participant = self._apply_register(event)
        logger.info(f"registered user {participant.user_id} (seq {event['seq']})")
        return participant, True

    def decide(self, user_id, survey_completion=0, app_usage=0, activity=None, cannabis_report=None) -> Decision:
        with self._lock:
            participant = self.participant(user_id)
            t = len(participant.decision_ids)
            report = reported_use(survey_completion, cannabis_report)
            state = update_state(INITIAL_STATE, participant.rewards, report, t)
            snapshot = self.snapshot
            pi = snapshot.probability(user_id, state, self.config.smoothing)
            checkpoint = self.policy.state()
            action, draw = self.policy.sample(pi)
            try:
                event = self.journal.append({
                    'type': DECISION, 'decision_id': len(self.decisions), 'user_id': user_id, 't': t,
                    'state': list(state.as_tuple()), 'pi': pi, 'action': action, 'rng_draw': draw,
                    'snapshot': snapshot.seq, 'cannabis_report': cannabis_report,
                    'observables': {'survey_completion': survey_completion, 'app_usage': app_usage,
                                    'activity': activity},
                    'rng_state': self.policy.state(),
                })
            except Exception:
                self.policy = PolicyStream.from_state(checkpoint)
                raise
            decision = self._apply_decision(event)
        logger.info(f"decision {decision.decision_id} for user {user_id} at t={t}: action {action} (pi {pi:.4f})")
        return decision

    def record_reward(self, decision_id, raw_reward) -> Decision:
        with self._lock:
            decision = self.decision(decision_id)
            if decision.raw_reward is not None:
                raise RewardConflictError(f"decision {decision_id} already has a reward")
            raw = validate_reward(raw_reward)
            engineered = engineer_reward(raw, decision.action, self.reward_params, decision.user_id)
            event = self.journal.append({'type': REWARD, 'decision_id': decision_id, 'user_id': decision.user_id,
                                         'raw_reward': raw, 'engineered_reward': engineered})
            self._apply_reward(event)
        logger.info(f"reward {raw} for decision {decision_id} (user {decision.user_id})")
        return decision

    def update(self, kind) -> dict:
        """Nightly posterior update; weekly also refits hyperparameters first."""
        if kind not in UPDATE_KINDS:
            raise InvalidInputError(f"update kind must be one of {UPDATE_KINDS}, got {kind!r}")
        with self._update_lock:
            with self._lock:
                cut = self.stats.copy() if self.stats is not None else None
                reward_cursor = len(self.observations)
                user_cursor = len(self.participants)
                before = self.snapshot

            result = self._compute_update(kind, cut, before.hp)

            with self._lock:
                event = self.journal.append({'type': UPDATE, 'kind': kind, 'reward_cursor': reward_cursor,
                                             'user_cursor': user_cursor, 'hp': result.hp.to_dict(),
                                             'fit': result.fit})
                self._apply_update(event, result, cut)
                after = self.snapshot
                self._save_snapshot(after)

        report = {
            'kind': kind,
            'snapshot': after.seq,
            'reward_cursor': reward_cursor,
            'user_cursor': user_cursor,
            'before': before.hp.to_dict(),
            'after': after.hp.to_dict(),
            'fit': result.fit,
            'posterior_max_change': _max_mean_change(before.posterior, result.posterior),
        }
        logger.info(f"{kind} update -> snapshot {after.seq}: {reward_cursor} rewards, {user_cursor} users, "
                    f"sigma_eps_sq {before.hp.sigma_eps_sq:.4f} -> {after.hp.sigma_eps_sq:.4f}")
        return report

    def close(self):
        self.journal.close()

    # -- shared by live writes and recovery

    def _apply_register(self, event):
        user_id = len(self.participants)
        participant = Participant(user_id, event['external_id'], event.get('metadata') or {})
        self.participants.append(participant)
        self.by_external_id[participant.external_id] = user_id
        if self.stats is None:
            self.stats = SufficientStats.empty(1, self.prior.dim)
        else:
            self.stats.add_user()
        self.reward_params.stats.add_user()
        self.snapshot = self.snapshot.extended(len(self.participants), self.prior, self.config.method)
        return participant

    def _apply_decision(self, event):
        decision = Decision(event['decision_id'], event['user_id'], event['t'],
                            StateTriple.from_sequence(event['state']), event['pi'], event['action'],
                            event['rng_draw'], event['snapshot'], event['observables'])
        self.decisions.append(decision)
        self.participants[decision.user_id].decision_ids.append(decision.decision_id)
        return decision

    def _apply_reward(self, event):
        decision = self.decisions[event['decision_id']]
        decision.raw_reward = event['raw_reward']
        decision.engineered_reward = event['engineered_reward']
        self.reward_params.record(decision.user_id, decision.raw_reward)
        self.participants[decision.user_id].rewards.append(decision.raw_reward)
        phi = build_design(decision.state, decision.action, decision.pi)
        self.stats.add(decision.user_id, phi, decision.engineered_reward)
        self.observations.append((decision.user_id, phi, decision.engineered_reward))

    def _compute_update(self, kind, cut, hp):
        if cut is None:
            return UpdateResult(hp, None, None)
        fit = None
        if kind == WEEKLY:
            result = update_hyperparams(self.prior, cut, hp, self.config.optimizer)
            hp = result.hp
            fit = result.summary()
        return UpdateResult(hp, posterior_update(self.prior, hp, cut, self.config.method), fit)

    def _apply_update(self, event, result, cut):
        self.hp = result.hp
        snapshot = Snapshot(self.snapshot.seq + 1, result.hp, result.posterior, cut,
                            event['reward_cursor'], event['user_cursor'])
        if len(self.participants) > snapshot.m:
            snapshot = snapshot.extended(len(self.participants), self.prior, self.config.method)
        self.snapshot = snapshot
        self._last_update_posterior = result.posterior
        self.update_counts[event['kind']] += 1

    def _save_snapshot(self, snapshot):
        posterior = self._last_update_posterior
        if posterior is None:
            return
        save_snapshot(self.state_dir, snapshot.seq, posterior.user_means, posterior.user_covs, snapshot.hp,
                      snapshot.reward_cursor, snapshot.user_cursor)

    # -- recovery

    def _recover(self):
        events = self.journal.read()
        if not events:
            return
        for event in events:
            kind = event.get('type')
            if kind == REGISTER:
                self._apply_register(event)
            elif kind == DECISION:
                self._replay_decision(event)
            elif kind == REWARD:
                self._replay_reward(event)
            elif kind == UPDATE:
                self._replay_update(event)
            else:
                raise ReplayMismatchError(f"unknown journal event type {kind!r} at seq {event.get('seq')}")
        self._check_snapshot_file()
        logger.info(f"recovered {len(events)} journal events: {len(self.participants)} users, "
                    f"{len(self.decisions)} decisions, snapshot {self.snapshot.seq}")

    def _mismatch(self, event, what):
        raise ReplayMismatchError(f"journal seq {event['seq']}: replayed {what} differs from the logged value")

    def _replay_decision(self, event):
        participant = self.participant(event['user_id'])
        if event['t'] != len(participant.decision_ids) or event['decision_id'] != len(self.decisions):
            self._mismatch(event, 'decision index')
        report = reported_use(event['observables']['survey_completion'], event['cannabis_report'])
        state = update_state(INITIAL_STATE, participant.rewards, report, event['t'])
        if list(state.as_tuple()) != event['state']:
            self._mismatch(event, 'state')
        pi = self.snapshot.probability(event['user_id'], state, self.config.smoothing)
        action, draw = self.policy.sample(pi)
        if abs(pi - event['pi']) > PI_TOLERANCE:
            self._mismatch(event, 'probability')
        if action != event['action'] or draw != event['rng_draw'] or self.policy.state() != event['rng_state']:
            self._mismatch(event, 'policy draw')
        self._apply_decision(event)

    def _replay_reward(self, event):
        decision = self.decision(event['decision_id'])
        engineered = engineer_reward(event['raw_reward'], decision.action, self.reward_params, decision.user_id)
        if engineered != event['engineered_reward']:
            self._mismatch(event, 'engineered reward')
        self._apply_reward(event)

    def _replay_update(self, event):
        reward_cursor, user_cursor = event['reward_cursor'], event['user_cursor']
        cut = None
        if user_cursor:
            cut = SufficientStats.from_observations(user_cursor, self.prior.dim, self.observations[:reward_cursor])
        result = self._compute_update(event['kind'], cut, self.hp)
        logged = HyperParams.from_dict(event['hp'])
        if (logged.sigma_eps_sq != result.hp.sigma_eps_sq
                or not np.array_equal(logged.sigma_u, result.hp.sigma_u)):
            self._mismatch(event, 'hyperparameters')
        self._apply_update(event, result, cut)

    def _check_snapshot_file(self):
        found = latest_snapshot(self.state_dir)
        posterior = self._last_update_posterior
        if found is None or posterior is None:
            return
        seq, arrays = found
        if seq != self.snapshot.seq:
            logger.warning(f"latest snapshot file is {seq} but the journal reaches snapshot {self.snapshot.seq}")
            return
        if not (np.allclose(arrays['means'], posterior.user_means, rtol=0, atol=PI_TOLERANCE)
                and np.allclose(arrays['covs'], posterior.user_covs, rtol=0, atol=PI_TOLERANCE)):
            raise ReplayMismatchError(f"replayed posterior differs from snapshot file {seq}")


def reported_use(survey_completion, cannabis_report):
    """A cannabis report only counts when the day's survey was completed."""
    return cannabis_report if survey_completion else None


def _max_mean_change(before: Optional[PosteriorState], after: Optional[PosteriorState]):
    if before is None or after is None:
        return None
    m = min(before.m, after.m)
    if m == 0:
        return None
    return float(np.max(np.abs(before.user_means[:m] - after.user_means[:m])))


_engine = None
_engine_lock = threading.Lock()


def _build_engine(state_dir=None, config_path=None):
    config = load_study_config(config_path or settings.STUDY_CONFIG, defaults=getattr(settings, 'REBANDIT', None))
    return StudyEngine(state_dir or settings.STUDY_STATE_DIR, config)


def configure_engine(state_dir=None, config_path=None) -> StudyEngine:
    """(Re)build the process-wide engine; unset arguments come from settings."""
    global _engine
    with _engine_lock:
        if _engine is not None:
            _engine.close()
            _engine = None
        _engine = _build_engine(state_dir, config_path)
        return _engine


def get_engine() -> StudyEngine:
    """The process-wide engine, built from settings on first use."""
    global _engine
    with _engine_lock:
        if _engine is None:
            _engine = _build_engine()
        return _engine


def reset_engine():
    global _engine
    with _engine_lock:
        if _engine is not None:
            _engine.close()
        _engine = None
