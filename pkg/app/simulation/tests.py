import json
import tempfile
from dataclasses import replace
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from app.bandit.baselines import BLR, RANDOM, REBANDIT
from app.bandit.exceptions import ConfigError, InvalidInputError
from app.bandit.features import INITIAL_STATE, StateTriple
from app.bandit.rng import generator_state, stream, trial_seeds
from app.simulation.config import (HIGH, LOW, MINIMAL, NONE, EnvConfig, TrialConfig, load_trial_config, variant_env,
                                   variant_id)
from app.simulation.directional import run_directional_checks, wins_majority
from app.simulation.environment import (DosageState, SimulatedUser, compute_dosage, env_features, initial_state,
                                        is_weekend, reward_probabilities, sample_reward, step_environment,
                                        synthesize_observables)
from app.simulation.metrics import (A_BETTER, A_WINS_MAJORITY, B_BETTER, COMPARABLE, aggregate, ci_half_width,
                                    classify, compare_summaries, pairwise_win_count, read_run, write_run_artifacts)
from app.simulation.population import (ADVANTAGE_INTERCEPT, DEFAULT_CLASS_MEANS, DOSAGE, N_ENV_FEATURES,
                                       UserModelMLR, apply_habituation, apply_treatment_effect,
                                       generate_user_population, load_weight_file, synthesize_pool)
from app.simulation.replay import diagnose_trial_log, replay_trial_log
from app.simulation.runner import TrialResult, run_trial, run_trials, scheduled_updates
from app.simulation.trial_log import read_trial_log


def model_with(column=None, baseline_sums=None):
    weights = np.zeros((4, N_ENV_FEATURES))
    if column is not None:
        weights[:, ADVANTAGE_INTERCEPT] = column
    if baseline_sums is not None:
        weights[:, 0] = baseline_sums
    return UserModelMLR(weights)


def small_config(**changes):
    base = dict(m=3, days=2, n_trials=2, seed=7, posterior_cadence=2, hyperparam_cadence=2)
    base.update(changes)
    return TrialConfig(**base)


def fake_result(totals, index=0, send_rate=0.5, algorithm=REBANDIT):
    return TrialResult(index, index, algorithm, np.asarray(totals, dtype=float), send_rate, 60)


class ConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = TrialConfig()
        self.assertEqual((cfg.m, cfg.days, cfg.n_trials, cfg.decision_points), (120, 30, 500, 60))
        self.assertEqual((cfg.posterior_cadence, cfg.hyperparam_cadence), (2, 14))
        self.assertEqual(cfg.lam, 0.2)

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ConfigError):
            TrialConfig.from_dict({'users': 10})
        with self.assertRaises(ConfigError):
            TrialConfig.from_dict({'env': {'treatment': 'low'}})
        with self.assertRaises(ConfigError):
            TrialConfig.from_dict({'optimizer': {'lr': 0.1}})

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            TrialConfig(algorithm='ucb')
        with self.assertRaises(ConfigError):
            TrialConfig(posterior_cadence=3)
        with self.assertRaises(ConfigError):
            TrialConfig(posterior_cadence=2, hyperparam_cadence=5)
        with self.assertRaises(ConfigError):
            EnvConfig(habituation_proportion=1.5)

    def test_variant_table(self):
        self.assertEqual(variant_env(0).treatment_effect, MINIMAL)
        self.assertEqual(variant_env(0).habituation, NONE)
        env = variant_env(6)
        self.assertEqual((env.treatment_effect, env.habituation, env.habituation_proportion), (LOW, LOW, 0.5))
        env = variant_env(14)
        self.assertEqual((env.treatment_effect, env.habituation, env.habituation_proportion), (HIGH, HIGH, 1.0))
        self.assertEqual([variant_id(variant_env(k)) for k in range(15)], list(range(15)))
        with self.assertRaises(ConfigError):
            variant_env(15)

    def test_yaml_file_and_defaults(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trial.yaml'
            path.write_text('algorithm: blr\nm: 10\nenv:\n  treatment_effect: high\n  heterogeneity: 0.5\n'
                            'smoothing:\n  nodes: 32\n')
            cfg = load_trial_config(path, defaults={'lam': 0.1, 'smoothing': {'l_min': 0.1}})
        self.assertEqual((cfg.algorithm, cfg.m, cfg.lam), (BLR, 10, 0.1))
        self.assertEqual((cfg.env.treatment_effect, cfg.env.heterogeneity), (HIGH, 0.5))
        self.assertEqual((cfg.smoothing.nodes, cfg.smoothing.l_min), (32, 0.1))
        with self.assertRaises(ConfigError):
            load_trial_config('/nonexistent/trial.yaml')

    def test_config_hash(self):
        cfg = TrialConfig()
        self.assertEqual(cfg.config_hash(), TrialConfig.from_dict(cfg.to_dict()).config_hash())
        self.assertNotEqual(cfg.config_hash(), replace(cfg, seed=1).config_hash())

    def test_with_overrides(self):
        cfg = TrialConfig().with_overrides(algorithm=RANDOM, variant=9, m=None, env_changes={'heterogeneity': 0.0})
        self.assertEqual(cfg.algorithm, RANDOM)
        self.assertEqual(cfg.m, 120)
        self.assertEqual(variant_id(cfg.env), 9)
        self.assertEqual(cfg.env.heterogeneity, 0.0)


class PopulationTests(SimpleTestCase):
    def test_treatment_effect_trace(self):
        model = model_with([0.2, -0.5, 0.1, 0.4])
        assert_allclose(apply_treatment_effect(model, LOW).advantage_intercepts, [-0.35, 0.14, 0.175, 0.175])
        self.assertIs(apply_treatment_effect(model, MINIMAL), model)
        assert_allclose(model.advantage_intercepts, [0.2, -0.5, 0.1, 0.4])

    def test_treatment_effect_without_swap(self):
        model = model_with([-0.5, 0.2, 0.1, 0.4])
        assert_allclose(apply_treatment_effect(model, HIGH).advantage_intercepts,
                        2.5 * np.array([-0.5, 0.2, 0.25, 0.25]))

    def test_class_zero_intercept_is_smallest(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            model = model_with(rng.normal(size=4))
            for level in (LOW, HIGH):
                column = apply_treatment_effect(model, level).advantage_intercepts
                self.assertTrue(np.all(column[0] <= column[1:]))

    def test_habituation_weights(self):
        model = model_with(baseline_sums=[1.0, 3.0, -1.0, -3.0])
        assert_allclose(apply_habituation(model, 6.0).weights[:, DOSAGE], [1 / 3, -1 / 9, -1 / 9, -1 / 9])
        flipped = model_with(baseline_sums=[-1.0, 3.0, -1.0, -1.0])
        assert_allclose(apply_habituation(flipped, 6.0).weights[:, DOSAGE], [0.25, -1 / 12, -1 / 12, -1 / 12])
        assert_allclose(apply_habituation(model, 1.0).weights[:, DOSAGE],
                        6 * apply_habituation(model, 6.0).weights[:, DOSAGE])
        self.assertTrue(apply_habituation(model, 1.0).has_habituation)
        with self.assertRaises(ConfigError):
            apply_habituation(model, 0.0)

    def test_dosage_raises_zero_reward_for_every_pool_model(self):
        rng = np.random.default_rng(11)
        pool = synthesize_pool(EnvConfig().synthetic, 1.0, 42, np.random.default_rng(5))
        for model in pool:
            habituated = apply_habituation(model, 1.0)
            for _ in range(20):
                base = np.append(1.0, rng.uniform(-1, 1, 5))
                action = int(rng.integers(0, 2))
                low = reward_probabilities(habituated, env_features(base, action, 0.0))[0]
                high = reward_probabilities(habituated, env_features(base, action, 1.0))[0]
                self.assertGreater(high, low, msg=model.model_id)

    def test_dosage_weights_require_habituation(self):
        weights = np.zeros((4, N_ENV_FEATURES))
        weights[0, DOSAGE] = 1.0
        with self.assertRaises(ConfigError):
            UserModelMLR(weights)

    def test_synthetic_pool(self):
        cfg = EnvConfig()
        pool = synthesize_pool(cfg.synthetic, 1.0, 42, np.random.default_rng(3))
        self.assertEqual(len(pool), 42)
        for model in pool:
            assert_allclose(model.weights.sum(axis=0), 0.0, atol=1e-12)
            self.assertFalse(model.has_habituation)
        identical = synthesize_pool(cfg.synthetic, 0.0, 42, np.random.default_rng(3))
        for model in identical:
            assert_array_equal(model.weights, identical[0].weights)
            self.assertEqual(model.cannabis_rate, identical[0].cannabis_rate)
        assert_allclose(identical[0].weights[:, :12], DEFAULT_CLASS_MEANS)

    def test_population_is_seeded_and_uses_the_pool(self):
        cfg = variant_env(8)
        first = generate_user_population(cfg, stream(11, 'population'), 120)
        second = generate_user_population(cfg, stream(11, 'population'), 120)
        assert_array_equal(first.base_index, second.base_index)
        for a, b in zip(first.models, second.models):
            assert_array_equal(a.weights, b.weights)
        self.assertLessEqual(len(set(first.base_index.tolist())), 42)

    def test_habituated_count(self):
        for vid, expected in ((0, 0), (1, 5), (2, 10), (3, 5), (4, 10)):
            population = generate_user_population(variant_env(vid), stream(2, 'population'), 10)
            self.assertEqual(int(population.habituated.sum()), expected)
            for model, habituated in zip(population.models, population.habituated):
                self.assertEqual(model.has_habituation, bool(habituated))

    def test_variants_are_distinct(self):
        populations = [np.stack([m.weights for m in
                                 generate_user_population(variant_env(k), stream(5, 'population'), 20).models])
                       for k in range(15)]
        for i in range(15):
            for j in range(i + 1, 15):
                self.assertFalse(np.array_equal(populations[i], populations[j]), (i, j))

    def test_weight_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'models.json'
            path.write_text(json.dumps({'schema': 'rebandit.user-models/v1', 'models': [
                {'id': 'u1', 'weights': [[0.1] * 12] * 4, 'app_usage': 300.0, 'cannabis_rate': 0.3}]}))
            pool = load_weight_file(path)
            self.assertEqual(pool[0].weights.shape, (4, 13))
            self.assertEqual((pool[0].model_id, pool[0].source, pool[0].cannabis_rate), ('u1', 'file', 0.3))
            with self.assertLogs('app.simulation.population', 'WARNING'):
                population = generate_user_population(EnvConfig(weights_file=str(path)), stream(1, 'population'), 4)
            self.assertEqual(set(population.base_index.tolist()), {0})

            path.write_text(json.dumps({'schema': 'other', 'models': []}))
            with self.assertRaises(ConfigError):
                load_weight_file(path)
            path.write_text(json.dumps({'schema': 'rebandit.user-models/v1', 'models': [{'weights': [[1, 2]]}]}))
            with self.assertRaises(ConfigError):
                load_weight_file(path)
            path.write_text('{not json')
            with self.assertRaises(ConfigError):
                load_weight_file(path)


class EnvironmentTests(SimpleTestCase):
    def test_dosage(self):
        ds = DosageState()
        self.assertAlmostEqual(float(ds.weights.sum()), 1.0, places=12)
        self.assertEqual(compute_dosage([0] * 6), 0.0)
        self.assertAlmostEqual(compute_dosage([1] * 6), 1.0, places=12)
        self.assertAlmostEqual(compute_dosage([1, 0, 0, 0, 0, 0]), 0.2506, places=4)
        self.assertAlmostEqual(compute_dosage([1]), compute_dosage([1, 0, 0, 0, 0, 0]), places=15)
        with self.assertRaises(InvalidInputError):
            compute_dosage([1] * 7)

    def test_reward_probabilities(self):
        x = env_features([1, 0, 0, 0, 0, 0], 1, 0.0)
        assert_allclose(reward_probabilities(model_with(), x), 0.25)
        saturated = np.zeros((4, N_ENV_FEATURES))
        saturated[2, 0] = 20.0
        self.assertGreater(reward_probabilities(UserModelMLR(saturated), x)[2], 0.9999)
        rng = np.random.default_rng(4)
        for _ in range(20):
            model = UserModelMLR(np.hstack([rng.normal(size=(4, 12)), np.zeros((4, 1))]))
            probabilities = reward_probabilities(model, env_features(rng.uniform(-1, 1, 6), 1, 0.0))
            self.assertAlmostEqual(float(probabilities.sum()), 1.0, delta=1e-12)

    def test_sample_reward(self):
        saturated = np.zeros((4, N_ENV_FEATURES))
        saturated[3, 0] = 30.0
        rng = np.random.default_rng(0)
        draws = {sample_reward(UserModelMLR(saturated), [1, 0, 0, 0, 0, 0, 0.0], 0, rng) for _ in range(50)}
        self.assertEqual(draws, {3})
        with self.assertRaises(InvalidInputError):
            sample_reward(UserModelMLR(saturated), [1, 0, 0], 0, rng)

    def test_observables(self):
        self.assertEqual(synthesize_observables(0), (0, 0, 0))
        self.assertEqual(synthesize_observables(1), (0, 1, 0))
        self.assertEqual(synthesize_observables(2), (1, 1, 0))
        self.assertEqual(synthesize_observables(3), (1, 1, 1))
        with self.assertRaises(InvalidInputError):
            synthesize_observables(4)

    def test_initial_state_and_calendar(self):
        self.assertEqual(initial_state(), StateTriple(0, 0, 1))
        self.assertEqual([is_weekend(d) for d in range(7)], [0, 0, 0, 0, 0, 1, 1])
        self.assertEqual(is_weekend(0, start_weekday=5), 1)

    def test_state_sequence(self):
        pool = synthesize_pool(EnvConfig().synthetic, 1.0, 1, np.random.default_rng(0))
        user = SimulatedUser(pool[0], stream(3, 'environment', 0), EnvConfig(constant_reward=2))
        self.assertEqual(user.state, INITIAL_STATE)
        states = [step_environment(user, t, 1)[0] for t in range(6)]
        self.assertEqual([s.s2 for s in states], [1, 0, 1, 0, 1, 0])
        self.assertEqual(states[2].s1, 1)
        self.assertEqual(user.rewards, [2] * 6)

    def test_trajectory_is_seeded_and_action_independent(self):
        model = synthesize_pool(EnvConfig().synthetic, 1.0, 1, np.random.default_rng(1))[0]
        first = SimulatedUser(model, stream(9, 'environment', 2))
        second = SimulatedUser(model, stream(9, 'environment', 2))
        other = SimulatedUser(model, stream(9, 'environment', 2))
        actions = [1, 0, 1, 1, 0, 0, 1, 0]
        for t, a in enumerate(actions):
            self.assertEqual(first.step(t, a), second.step(t, a))
            other.step(t, 1 - a)
        self.assertEqual(generator_state(first.rng), generator_state(other.rng))

    def test_no_habituation_means_no_dosage(self):
        population = generate_user_population(variant_env(0), stream(4, 'population'), 5)
        for i, model in enumerate(population.models):
            user = SimulatedUser(model, stream(4, 'environment', i))
            for t in range(12):
                self.assertEqual(user.step(t, 1).dosage, 0.0)

    def test_habituation_shifts_mass_to_zero(self):
        model = synthesize_pool(EnvConfig().synthetic, 0.0, 1, np.random.default_rng(0))[0]
        habituated = apply_habituation(model, 1.0)
        base = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        for action in (0, 1):
            p0 = reward_probabilities(habituated, env_features(base, action, 0.0))[0]
            p1 = reward_probabilities(habituated, env_features(base, action, 1.0))[0]
            self.assertGreater(p1, p0)

    def test_treatment_effect_leaves_no_action_distribution(self):
        rng = np.random.default_rng(8)
        model = synthesize_pool(EnvConfig().synthetic, 1.0, 1, rng)[0]
        x = env_features(rng.uniform(-1, 1, 6), 0, 0.0)
        for level in (LOW, HIGH):
            assert_allclose(reward_probabilities(apply_treatment_effect(model, level), x),
                            reward_probabilities(model, x), rtol=0, atol=1e-15)


class RunnerTests(SimpleTestCase):
    def test_constant_reward_random_policy(self):
        cfg = TrialConfig(algorithm=RANDOM, m=5, days=30, n_trials=2, env=EnvConfig(constant_reward=2))
        results = run_trials(cfg)
        for result in results:
            assert_array_equal(result.user_totals, 120.0)
        summary = aggregate(results)
        self.assertEqual(summary['mean'], 120.0)
        self.assertEqual(summary['ci_half_width'], 0.0)
        self.assertEqual(summary['T'], 60)

    def test_update_schedule(self):
        cfg = TrialConfig()
        self.assertEqual(scheduled_updates(cfg, 0), [])
        self.assertEqual(scheduled_updates(cfg, 1), ['posterior'])
        self.assertEqual(scheduled_updates(cfg, 13), ['hyperparams', 'posterior'])

    def test_over_budget_trial_logs_warning(self):
        seed = trial_seeds(7, 1)[0]
        with self.assertLogs('app.simulation.runner', 'WARNING') as logs:
            result = run_trial(small_config(budget_seconds=1e-9), seed)
        self.assertTrue(any('over the 1e-09s budget' in line for line in logs.output))
        self.assertGreater(result.elapsed, 1e-9)
        with self.assertNoLogs('app.simulation.runner', 'WARNING'):
            run_trial(small_config(), seed)

    def test_log_is_deterministic_and_matches_totals(self):
        cfg = small_config()
        seed = trial_seeds(cfg.seed, 1)[0]
        with tempfile.TemporaryDirectory() as tmp:
            a = Path(tmp) / 'a.jsonl'
            b = Path(tmp) / 'b.jsonl'
            result = run_trial(cfg, seed, 0, a)
            run_trial(cfg, seed, 0, b)
            self.assertEqual(a.read_bytes(), b.read_bytes())
            log = read_trial_log(a)
        self.assertEqual(len(log.decisions()), cfg.m * cfg.decision_points)
        assert_array_equal(log.raw_reward_totals(cfg.m), result.user_totals)
        self.assertEqual(log.header['trial_seed'], seed)
        self.assertEqual(len(result.posterior_trace), cfg.decision_points // cfg.posterior_cadence)
        for record in log.decisions():
            self.assertTrue(0.2 <= record.pi <= 0.8)
            if record.action == 0:
                self.assertEqual(record.engineered_reward, record.raw_reward)

    def test_environment_is_shared_across_algorithms(self):
        cfg = small_config(m=4, days=1)
        seed = trial_seeds(cfg.seed, 1)[0]
        with tempfile.TemporaryDirectory() as tmp:
            logs = {}
            for name in (RANDOM, BLR):
                path = Path(tmp) / f'{name}.jsonl'
                run_trial(replace(cfg, algorithm=name), seed, 0, path)
                logs[name] = read_trial_log(path).decisions()
        for r, b in zip(logs[RANDOM], logs[BLR]):
            if r.t == 0 and r.action == b.action:
                self.assertEqual(r.raw_reward, b.raw_reward)

    def test_trials_are_ordered_and_worker_independent(self):
        cfg = TrialConfig(algorithm=RANDOM, m=3, days=2, n_trials=3, seed=2)
        serial = run_trials(cfg)
        parallel = run_trials(replace(cfg, workers=2))
        self.assertEqual([r.trial_index for r in parallel], [0, 1, 2])
        self.assertEqual([r.trial_seed for r in serial], trial_seeds(2, 3))
        for a, b in zip(serial, parallel):
            assert_array_equal(a.user_totals, b.user_totals)


class ReplayTests(SimpleTestCase):
    def test_replay_reproduces_every_decision(self):
        for algorithm in (REBANDIT, BLR, RANDOM):
            cfg = small_config(algorithm=algorithm)
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / 'trial.jsonl'
                run_trial(cfg, trial_seeds(cfg.seed, 1)[0], 0, path)
                report = replay_trial_log(path)
            self.assertTrue(report.ok, report.first_mismatch)
            self.assertEqual(report.records, cfg.m * cfg.decision_points)

    def test_tampered_log_is_detected(self):
        cfg = small_config()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trial.jsonl'
            run_trial(cfg, trial_seeds(cfg.seed, 1)[0], 0, path)
            lines = path.read_text().splitlines()
            event = json.loads(lines[1])
            event['pi'] = 0.123
            lines[1] = json.dumps(event)
            path.write_text('\n'.join(lines) + '\n')
            report = replay_trial_log(path)
        self.assertGreaterEqual(report.mismatches, 1)
        self.assertEqual(report.first_mismatch['t'], 0)

    def test_diagnose_rows(self):
        cfg = small_config(days=3, hyperparam_cadence=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'trial.jsonl'
            run_trial(cfg, trial_seeds(cfg.seed, 1)[0], 0, path)
            rows = diagnose_trial_log(path)
        self.assertEqual([row['t'] for row in rows], [1, 3, 5])
        self.assertEqual([row['epoch'] for row in rows], [0, 1, 2])
        for row in rows:
            self.assertIn('T4_trace', row)
            self.assertIn('lambda_norm', row)
            self.assertGreater(row['sigma_eps_sq'], 0)


class MetricsTests(SimpleTestCase):
    def test_aggregate(self):
        summary = aggregate([fake_result([10.0], 0), fake_result([20.0], 1)], lam=0.2, variant=3)
        self.assertEqual(summary['mean'], 15.0)
        self.assertEqual((summary['variant'], summary['lambda'], summary['n_trials']), (3, 0.2, 2))
        identical = aggregate([fake_result([5.0, 7.0], 0), fake_result([5.0, 7.0], 1)])
        self.assertEqual(identical['trial_mean_ci_half_width'], 0.0)
        self.assertEqual(aggregate([fake_result([4.0], 0), fake_result([4.0], 1)])['ci_half_width'], 0.0)
        with self.assertRaises(InvalidInputError):
            aggregate([])

    def test_ci_shrinks_with_more_trials(self):
        rng = np.random.default_rng(0)
        ratio = ci_half_width(rng.normal(size=1600)) / ci_half_width(rng.normal(size=400))
        self.assertAlmostEqual(ratio, 0.5, delta=0.1)

    def test_pairwise_win_count(self):
        rng = np.random.default_rng(1)
        b = rng.normal(size=50)
        self.assertEqual(pairwise_win_count(b, b), 0)
        self.assertEqual(pairwise_win_count(b + 1, b), 50)
        a = np.round(rng.normal(size=50))
        c = np.round(rng.normal(size=50))
        ties = int(np.sum(a == c))
        self.assertEqual(pairwise_win_count(a, c) + pairwise_win_count(c, a) + ties, 50)
        with self.assertRaises(InvalidInputError):
            pairwise_win_count([1, 2], [1])

    def test_classification(self):
        self.assertEqual(classify(10, 1, 5, 1, 0, 0, 10), A_BETTER)
        self.assertEqual(classify(5, 1, 10, 1, 0, 0, 10), B_BETTER)
        self.assertEqual(classify(10, 1, 9.5, 1, 6, 4, 10), A_WINS_MAJORITY)
        self.assertEqual(classify(10, 1, 9.5, 1, 5, 5, 10), COMPARABLE)

    def test_compare_summaries(self):
        a = aggregate([fake_result([10.0, 12.0], 0), fake_result([11.0, 13.0], 1)])
        b = aggregate([fake_result([10.0, 12.0], 0, algorithm=BLR), fake_result([11.0, 12.0], 1, algorithm=BLR)])
        row = compare_summaries(a, [11.0, 12.0], b, [11.0, 11.5])
        self.assertEqual((row['wins_a'], row['wins_b'], row['ties']), (1, 0, 1))
        self.assertTrue(row['ci_overlap'])

    def test_run_artifacts(self):
        cfg = TrialConfig(algorithm=RANDOM, m=3, days=2, n_trials=2)
        results = run_trials(cfg)
        with tempfile.TemporaryDirectory() as tmp:
            summary = write_run_artifacts(tmp, cfg, results)
            read_summary, means = read_run(tmp)
            manifest = json.loads((Path(tmp) / 'manifest.json').read_text())
        self.assertAlmostEqual(read_summary['mean'], summary['mean'])
        assert_allclose(means, [r.mean for r in results])
        self.assertEqual(manifest['config_hash'], cfg.config_hash())
        self.assertEqual(manifest['trial_seeds'], [str(s) for s in trial_seeds(cfg.seed, 2)])


def summary_row(algorithm, mean, ci=0.1):
    return {'algorithm': algorithm, 'mean': mean, 'ci_half_width': ci}


class DirectionalTests(SimpleTestCase):
    def test_heterogeneous_check_counts_trial_wins(self):
        # separated intervals but only one trial won
        row = compare_summaries(summary_row(REBANDIT, 10.0), [100, 1, 1, 1], summary_row(BLR, 5.0), [2, 2, 2, 2])
        self.assertEqual(row['classification'], A_BETTER)
        self.assertEqual(row['wins_a'], 1)
        self.assertFalse(wins_majority(row))

        row = compare_summaries(summary_row(REBANDIT, 2.5), [3, 3, 3, 1], summary_row(BLR, 2.0), [2, 2, 2, 2])
        self.assertTrue(wins_majority(row))

    def test_check_verdicts(self):
        one_win = compare_summaries(summary_row(REBANDIT, 10.0), [100, 1, 1, 1],
                                    summary_row(BLR, 5.0), [2, 2, 2, 2])
        separated = compare_summaries(summary_row(REBANDIT, 10.0), [10, 10, 10, 10],
                                      summary_row(RANDOM, 5.0), [5, 5, 5, 5])
        overlapping = compare_summaries(summary_row(REBANDIT, 5.0, ci=1.0), [5, 5, 5, 5],
                                        summary_row(BLR, 5.1, ci=1.0), [5, 5, 5, 5])
        rows = [dict(separated), dict(separated), dict(one_win), dict(overlapping)]
        with mock.patch('app.simulation.directional._compare', side_effect=rows):
            checks = run_directional_checks(TrialConfig(m=3, days=1, n_trials=4))
        self.assertEqual([row['check'] for row in checks],
                         ['rebandit-beats-random', 'blr-beats-random', 'rebandit-wins-heterogeneous',
                          'homogeneous-overlap'])
        self.assertEqual([row['passed'] for row in checks], [True, True, False, True])


class CommandTests(SimpleTestCase):
    def test_run_compare_replay_diagnose(self):
        with tempfile.TemporaryDirectory() as tmp:
            out_a = Path(tmp) / 'rebandit'
            out_b = Path(tmp) / 'random'
            common = ['--trials', '2', '--users', '3', '--days', '2', '--seed', '3', '--variant', '4']
            call_command('run', '--algorithm', REBANDIT, '--out', str(out_a), *common, stdout=StringIO())
            call_command('run', '--algorithm', RANDOM, '--out', str(out_b), *common, stdout=StringIO())
            self.assertTrue((out_a / 'summary.csv').exists())
            self.assertTrue((out_a / 'logs' / 'trial-1.jsonl').exists())

            stdout = StringIO()
            call_command('compare', '--a', str(out_a), '--b', str(out_b), stdout=stdout)
            self.assertIn('wins', stdout.getvalue())
            self.assertTrue((out_a / 'comparison.csv').exists())

            stdout = StringIO()
            call_command('replay', '--log', str(out_a / 'logs' / 'trial-0.jsonl'), stdout=stdout)
            self.assertIn('0 mismatches', stdout.getvalue())

            call_command('diagnose', '--log', str(out_a / 'logs' / 'trial-0.jsonl'), stdout=StringIO())
            self.assertTrue((out_a / 'logs' / 'trial-0.diagnostics.csv').exists())

    def test_bad_config_is_a_command_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'bad.yaml'
            path.write_text('unknown_key: 1\n')
            with self.assertRaises(CommandError):
                call_command('run', '--config', str(path), '--out', tmp, stdout=StringIO())
