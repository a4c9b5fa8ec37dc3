import json
import tempfile
import threading
import time
from pathlib import Path
from unittest import mock

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose, assert_array_equal
from rest_framework.request import Request
from rest_framework.test import APIRequestFactory, APISimpleTestCase

from app.bandit.empirical_bayes import OptimizerConfig
from app.bandit.exceptions import ConfigError, InvalidInputError
from app.study.config import StudyConfig, load_study_config
from app.study.engine import NIGHTLY, WEEKLY, StudyEngine, get_engine, reset_engine
from app.study.exceptions import (DuplicateRegistrationError, ReplayMismatchError, RewardConflictError,
                                  StudyFullError, UnknownDecisionError, UnknownUserError)
from app.study.journal import JOURNAL_FILE, Journal, latest_snapshot
from app.study.pagination import DecisionPagination

ADMIN_TOKEN = 'test-admin-token'


def fast_config(**changes):
    base = dict(max_users=10, seed=3, optimizer=OptimizerConfig(max_iters=5))
    base.update(changes)
    return StudyConfig(**base)


def drive(engine, users=3, decisions=4, start=0, register=True):
    """Serve decisions with rewards cycling through 0..3, registering the users first."""
    for i in range(users if register else 0):
        engine.register(f'participant-{i}')
    for k in range(decisions):
        for user in range(users):
            decision = engine.decide(user, survey_completion=1, app_usage=1,
                                     cannabis_report=bool((k + user) % 2))
            engine.record_reward(decision.decision_id, (start + k + user) % 4)


class ConfigTests(SimpleTestCase):
    def test_defaults_and_overrides(self):
        cfg = load_study_config(None, defaults={'max_users': 7, 'budget_seconds': 10,
                                                'smoothing': {'l_min': 0.1}})
        self.assertEqual(cfg.max_users, 7)
        self.assertEqual(cfg.smoothing.l_min, 0.1)
        self.assertEqual(cfg.smoothing.l_max, 0.8)

    def test_rejects_unknown_keys_and_bad_values(self):
        with self.assertRaises(ConfigError):
            StudyConfig.from_dict({'users': 3})
        with self.assertRaises(ConfigError):
            StudyConfig(max_users=0)

    def test_reads_yaml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'study.yaml'
            path.write_text('max_users: 4\nseed: 11\noptimizer:\n  max_iters: 3\n', encoding='utf-8')
            cfg = load_study_config(path)
        self.assertEqual((cfg.max_users, cfg.seed, cfg.optimizer.max_iters), (4, 11, 3))


class JournalTests(SimpleTestCase):
    def test_append_assigns_sequence_numbers(self):
        with tempfile.TemporaryDirectory() as tmp:
            journal = Journal(tmp)
            journal.append({'type': 'register', 'external_id': 'a'})
            journal.append({'type': 'register', 'external_id': 'b'})
            journal.close()
            events = Journal(tmp).read()
        self.assertEqual([e['seq'] for e in events], [0, 1])

    def test_torn_last_line_is_dropped(self):
        with tempfile.TemporaryDirectory() as tmp:
            journal = Journal(tmp)
            journal.append({'type': 'register', 'external_id': 'a'})
            journal.close()
            with (Path(tmp) / JOURNAL_FILE).open('a', encoding='utf-8') as handle:
                handle.write('{"seq":1,"type":"regi')
            reopened = Journal(tmp)
            self.assertEqual(len(reopened.read()), 1)
            self.assertEqual(reopened.seq, 1)
            reopened.append({'type': 'register', 'external_id': 'b'})
            reopened.close()
            self.assertEqual([e['external_id'] for e in Journal(tmp).read()], ['a', 'b'])

    def test_corrupt_middle_line_is_an_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            (Path(tmp) / JOURNAL_FILE).write_text('{"seq":0}\nnot json\n{"seq":2}\n', encoding='utf-8')
            with self.assertRaises(ConfigError):
                Journal(tmp).read()


class EngineTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.engine = StudyEngine(self.tmp.name, fast_config())
        self.addCleanup(self.engine.close)

    def test_registration_is_idempotent_and_capped(self):
        engine = StudyEngine(Path(self.tmp.name) / 'capped', fast_config(max_users=2))
        self.addCleanup(engine.close)
        first, created = engine.register('a', {'site': 'x'})
        again, created_again = engine.register('a', {'site': 'x'})
        self.assertTrue(created)
        self.assertFalse(created_again)
        self.assertEqual(first.user_id, again.user_id)
        with self.assertRaises(DuplicateRegistrationError):
            engine.register('a', {'site': 'y'})
        engine.register('b')
        with self.assertRaises(StudyFullError):
            engine.register('c')

    def test_first_decision_uses_initial_state(self):
        self.engine.register('a')
        decision = self.engine.decide(0, survey_completion=0, app_usage=0)
        self.assertEqual(decision.state.as_tuple(), (0, 0, 1))
        self.assertEqual(decision.t, 0)
        self.assertTrue(0.2 <= decision.pi <= 0.8)
        self.assertIn(decision.action, (0, 1))
        self.assertEqual(decision.action, int(decision.rng_draw < decision.pi))

    def test_state_follows_rewards_and_reports(self):
        self.engine.register('a')
        for reward in (3, 2, 2):
            decision = self.engine.decide(0, 1, 1, cannabis_report=False)
            self.engine.record_reward(decision.decision_id, reward)
        decision = self.engine.decide(0, 1, 1, cannabis_report=False)
        self.assertEqual(decision.state.as_tuple(), (1, 1, 1))
        decision = self.engine.decide(0, 1, 1, cannabis_report=None)
        self.assertEqual(decision.state.as_tuple(), (1, 0, 0))

    def test_report_without_survey_counts_as_missing(self):
        self.engine.register('a')
        for reward in (3, 2):
            decision = self.engine.decide(0, 1, 1, cannabis_report=False)
            self.engine.record_reward(decision.decision_id, reward)
        skipped = self.engine.decide(0, 0, 1, cannabis_report=False)
        self.assertEqual(skipped.state.as_tuple()[2], 0)
        answered = self.engine.decide(0, 1, 1, cannabis_report=False)
        self.assertEqual(answered.state.as_tuple()[2], 1)

    def test_reward_validation(self):
        self.engine.register('a')
        decision = self.engine.decide(0)
        with self.assertRaises(InvalidInputError):
            self.engine.record_reward(decision.decision_id, 5)
        self.engine.record_reward(decision.decision_id, 3)
        with self.assertRaises(RewardConflictError):
            self.engine.record_reward(decision.decision_id, 2)
        with self.assertRaises(UnknownDecisionError):
            self.engine.record_reward(99, 1)
        with self.assertRaises(UnknownUserError):
            self.engine.decide(4)

    def test_engineered_reward_is_recorded(self):
        drive(self.engine, users=1, decisions=4)
        treated = [d for d in self.engine.decisions if d.action == 1 and d.t >= 2]
        for decision in self.engine.decisions:
            if decision.action == 0:
                self.assertEqual(decision.engineered_reward, float(decision.raw_reward))
        for decision in treated:
            self.assertLessEqual(decision.engineered_reward, decision.raw_reward)

    def test_nightly_update_without_new_rewards_keeps_posterior(self):
        drive(self.engine)
        self.engine.update(NIGHTLY)
        before = self.engine.snapshot.posterior.user_means.copy()
        report = self.engine.update(NIGHTLY)
        assert_allclose(self.engine.snapshot.posterior.user_means, before, rtol=0, atol=1e-12)
        self.assertLessEqual(report['posterior_max_change'], 1e-12)
        self.assertEqual(report['snapshot'], 2)

    def test_weekly_update_does_not_decrease_objective(self):
        drive(self.engine)
        report = self.engine.update(WEEKLY)
        self.assertGreaterEqual(report['fit']['objective'], report['fit']['initial_objective'] - 1e-10)
        self.assertIn('sigma_eps_sq', report['after'])
        self.assertEqual(self.engine.status()['updates'], {NIGHTLY: 0, WEEKLY: 1})

    def test_update_changes_decisions_snapshot(self):
        drive(self.engine)
        before = self.engine.snapshot
        self.engine.update(NIGHTLY)
        self.assertIsNot(self.engine.snapshot, before)
        self.assertEqual(self.engine.snapshot.reward_cursor, len(self.engine.observations))
        decision = self.engine.decide(0)
        self.assertEqual(decision.snapshot, 1)

    def test_decisions_are_served_during_an_update(self):
        drive(self.engine)
        self.engine.update(NIGHTLY)
        started, release = threading.Event(), threading.Event()
        compute = StudyEngine._compute_update

        def slow_compute(engine, kind, cut, hp):
            started.set()
            release.wait(10)
            return compute(engine, kind, cut, hp)

        with mock.patch.object(StudyEngine, '_compute_update', autospec=True, side_effect=slow_compute):
            worker = threading.Thread(target=self.engine.update, args=(WEEKLY,))
            worker.start()
            try:
                self.assertTrue(started.wait(10))
                begun = time.monotonic()
                decision = self.engine.decide(0, 1, 1)
                self.engine.record_reward(decision.decision_id, 2)
                waited = time.monotonic() - begun
            finally:
                release.set()
                worker.join(10)
        self.assertFalse(worker.is_alive())
        self.assertLess(waited, 5)
        self.assertEqual(decision.snapshot, 1)
        self.assertEqual(self.engine.snapshot.seq, 2)
        self.assertEqual(self.engine.snapshot.reward_cursor, len(self.engine.observations) - 1)

    def test_late_registration_leaves_existing_posteriors(self):
        drive(self.engine)
        self.engine.update(NIGHTLY)
        means = self.engine.snapshot.posterior.user_means.copy()
        self.engine.register('late')
        assert_allclose(self.engine.snapshot.posterior.user_means[:3], means, atol=1e-8)
        decision = self.engine.decide(3)
        self.assertTrue(0.2 <= decision.pi <= 0.8)

    def test_unknown_update_kind(self):
        with self.assertRaises(InvalidInputError):
            self.engine.update('hourly')

    def test_update_with_no_users(self):
        report = self.engine.update(NIGHTLY)
        self.assertIsNone(report['posterior_max_change'])
        self.assertEqual(self.engine.snapshot.seq, 1)


class RecoveryTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def build(self):
        engine = StudyEngine(self.tmp.name, fast_config())
        drive(engine)
        engine.update(NIGHTLY)
        drive(engine, start=1, register=False)
        for user in range(3):
            decision = engine.decide(user, 1, 0, cannabis_report=True)
            engine.record_reward(decision.decision_id, 2)
        engine.update(WEEKLY)
        engine.register('late')
        engine.decide(3)
        engine.decide(1, 0, 0, cannabis_report=True)
        engine.close()
        return engine

    def test_replay_reproduces_snapshot_and_stream(self):
        engine = self.build()
        recovered = StudyEngine(self.tmp.name, fast_config())
        self.addCleanup(recovered.close)

        self.assertEqual(recovered.snapshot.seq, engine.snapshot.seq)
        assert_array_equal(recovered.snapshot.posterior.user_means, engine.snapshot.posterior.user_means)
        assert_array_equal(recovered.snapshot.posterior.user_covs, engine.snapshot.posterior.user_covs)
        self.assertEqual(recovered.hp.sigma_eps_sq, engine.hp.sigma_eps_sq)
        self.assertEqual(recovered.policy.state(), engine.policy.state())
        self.assertEqual(recovered.policy.sample(0.5), engine.policy.sample(0.5))
        self.assertEqual([d.action for d in recovered.decisions], [d.action for d in engine.decisions])
        self.assertEqual([d.state.as_tuple() for d in recovered.decisions],
                         [d.state.as_tuple() for d in engine.decisions])
        self.assertEqual([d.engineered_reward for d in recovered.decisions],
                         [d.engineered_reward for d in engine.decisions])
        self.assertEqual(recovered.status()['updates'], engine.status()['updates'])

    def test_snapshot_files_are_written(self):
        self.build()
        seq, arrays = latest_snapshot(self.tmp.name)
        self.assertEqual(seq, 2)
        self.assertEqual(int(arrays['user_cursor']), 3)
        self.assertEqual(arrays['means'].shape, (3, 24))

    def test_recovered_engine_keeps_serving(self):
        self.build()
        recovered = StudyEngine(self.tmp.name, fast_config())
        decision = recovered.decide(3, 1, 1)
        self.assertEqual(decision.t, 1)
        recovered.record_reward(decision.decision_id, 1)
        recovered.close()
        again = StudyEngine(self.tmp.name, fast_config())
        self.addCleanup(again.close)
        self.assertEqual(again.decisions[-1].raw_reward, 1)

    def test_tampered_decision_is_detected(self):
        self.build()
        path = Path(self.tmp.name) / JOURNAL_FILE
        events = [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()]
        for event in events:
            if event['type'] == 'decision':
                event['pi'] = event['pi'] + 0.01
                break
        path.write_text(''.join(json.dumps(e) + '\n' for e in events), encoding='utf-8')
        with self.assertRaises(ReplayMismatchError):
            StudyEngine(self.tmp.name, fast_config())

    def test_different_seed_is_detected(self):
        self.build()
        with self.assertRaises(ReplayMismatchError):
            StudyEngine(self.tmp.name, fast_config(seed=4))


class StudyApiTests(APISimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        overrides = override_settings(
            STUDY_STATE_DIR=self.tmp.name,
            STUDY_CONFIG=None,
            STUDY_ADMIN_TOKEN=ADMIN_TOKEN,
            REBANDIT={**settings.REBANDIT, 'max_users': 2},
        )
        overrides.enable()
        self.addCleanup(overrides.disable)
        reset_engine()
        self.addCleanup(reset_engine)

    def register(self, external_id, **extra):
        return self.client.post('/api/study/users/', {'external_id': external_id, **extra}, format='json')

    def decide(self, user_id, **extra):
        payload = {'user_id': user_id, 'survey_completion': 1, 'app_usage': 0, 'cannabis_report': None}
        payload.update(extra)
        return self.client.post('/api/study/decision/', payload, format='json')

    def update(self, kind, token=ADMIN_TOKEN):
        headers = {'HTTP_AUTHORIZATION': f'Bearer {token}'} if token else {}
        return self.client.post('/api/study/admin/update/', {'kind': kind}, format='json', **headers)

    def test_register(self):
        response = self.register('p-1', metadata={'cohort': 'a'})
        self.assertEqual(response.status_code, 201)
        self.assertEqual(response.data['results']['user_id'], 0)

        response = self.register('p-1', metadata={'cohort': 'a'})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['results']['user_id'], 0)

        self.assertEqual(self.register('p-1', metadata={'cohort': 'b'}).status_code, 409)
        self.assertEqual(self.register('p-2').status_code, 201)
        self.assertEqual(self.register('p-3').status_code, 409)

    def test_user_detail(self):
        self.register('p-1')
        response = self.client.get('/api/study/users/0/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['results']['external_id'], 'p-1')
        self.assertEqual(self.client.get('/api/study/users/5/').status_code, 404)

    def test_decision(self):
        self.register('p-1')
        response = self.decide(0)
        self.assertEqual(response.status_code, 201)
        results = response.data['results']
        self.assertEqual(results['state'], [0, 0, 1])
        self.assertTrue(0.2 <= results['pi'] <= 0.8)
        self.assertIn(results['action'], (0, 1))
        self.assertEqual(results['decision_id'], 0)

    def test_decision_errors(self):
        self.assertEqual(self.decide(0).status_code, 404)
        self.register('p-1')
        response = self.client.post('/api/study/decision/', {'user_id': 0}, format='json')
        self.assertEqual(response.status_code, 422)
        self.assertEqual(self.decide(0, survey_completion=3).status_code, 422)

    def test_reward(self):
        self.register('p-1')
        decision_id = self.decide(0).data['results']['decision_id']
        self.assertEqual(self.client.post('/api/study/reward/', {'decision_id': decision_id, 'reward': 5},
                                          format='json').status_code, 422)
        response = self.client.post('/api/study/reward/', {'decision_id': decision_id, 'reward': 3}, format='json')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['results']['raw_reward'], 3)
        self.assertEqual(self.client.post('/api/study/reward/', {'decision_id': decision_id, 'reward': 3},
                                          format='json').status_code, 409)
        self.assertEqual(self.client.post('/api/study/reward/', {'decision_id': 42, 'reward': 1},
                                          format='json').status_code, 404)

    def test_decision_list(self):
        self.register('p-1')
        self.register('p-2')
        for user in (0, 1, 0):
            self.decide(user)
        response = self.client.get('/api/study/decisions/')
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data['results']['count'], 3)
        self.assertEqual(response.data['message'], 'Record retrieved successfully.')
        response = self.client.get('/api/study/decisions/', {'user': 0})
        self.assertEqual([row['t'] for row in response.data['results']['decisions']], [0, 1])

    def test_admin_update_requires_token(self):
        self.assertEqual(self.update(NIGHTLY, token=None).status_code, 401)
        self.assertEqual(self.update(NIGHTLY, token='wrong').status_code, 403)
        self.assertEqual(self.update('hourly').status_code, 422)

    def test_nightly_update(self):
        self.register('p-1')
        decision_id = self.decide(0).data['results']['decision_id']
        self.client.post('/api/study/reward/', {'decision_id': decision_id, 'reward': 2}, format='json')
        response = self.update(NIGHTLY)
        self.assertEqual(response.status_code, 200)
        results = response.data['results']
        self.assertEqual(results['reward_cursor'], 1)
        self.assertIn('sigma_u', results['after'])

        before = get_engine().snapshot.posterior.user_means.copy()
        self.update(NIGHTLY)
        assert_allclose(get_engine().snapshot.posterior.user_means, before, rtol=0, atol=1e-12)

        snapshot = self.client.get('/api/study/snapshot/').data['results']
        self.assertEqual(snapshot['updates'][NIGHTLY], 2)
        self.assertEqual(snapshot['decisions'], 1)
        self.assertTrue(np.isfinite(snapshot['hyperparams']['sigma_eps_sq']))


class PaginationTests(SimpleTestCase):
    def paginate(self, items, **params):
        request = Request(APIRequestFactory().get('/api/study/decisions/', params))
        paginator = DecisionPagination()
        paginator.page_size = 2
        return paginator, paginator.paginate_queryset(items, request)

    def test_page_size_from_query(self):
        _, page = self.paginate(list(range(10)), size=4)
        self.assertEqual(page, [0, 1, 2, 3])
        _, page = self.paginate(list(range(1000)), size=900)
        self.assertEqual(len(page), DecisionPagination.max_page_size)

    def test_out_of_range_page_is_last_page(self):
        _, page = self.paginate(list(range(5)), size=2, page=9)
        self.assertEqual(page, [4])

    def test_response_envelope(self):
        paginator, page = self.paginate(list(range(5)), page=2)
        response = paginator.get_paginated_response(page)
        self.assertEqual(response.status_code, 200)
        results = response.data['results']
        self.assertEqual((results['count'], results['page'], results['pages']), (5, 2, 3))
        self.assertEqual(results['decisions'], [2, 3])
        self.assertIn('page=3', results['next'])
        self.assertIsNotNone(results['previous'])
