from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import multivariate_normal

from app.bandit.baselines import (BLRAlgorithm, BLRState, RandomAlgorithm, ReBanditAlgorithm,
                                  blr_marginal_log_likelihood, blr_posterior_update, blr_update_noise_variance,
                                  make_algorithm, random_policy)
from app.bandit.empirical_bayes import (CHOLESKY_FULL, DIAGONAL_LOG, OptimizerConfig, log_likelihood,
                                        make_parameterization, marginal_ll_gradient, marginal_log_likelihood,
                                        objective_inputs, projected_ascent, structured_log_likelihood,
                                        update_hyperparams)
from app.bandit.exceptions import ConfigError, InvalidHyperparametersError, InvalidInputError
from app.bandit.features import (BETA, INITIAL_STATE, PARAM_DIM, StateTriple, build_baseline_features,
                                 build_design, next_state, update_state)
from app.bandit.implicit import joint_posterior, population_statistics, population_summary
from app.bandit.policy import (DecisionRecord, PolicyStream, RewardEngineeringParams, RunningRewardStats,
                               SmoothingParams, action_probability, classical_probability, engineer_reward,
                               rho, sample_action)
from app.bandit.posterior import (DENSE, STRUCTURED, build_sigma_theta_tilde, extract_user_posterior,
                                  posterior_update, stacked_prior_mean)
from app.bandit.priors import HyperParams, PriorSpec, default_prior, initial_hyperparams
from app.bandit.rng import generator_from_state, generator_state, stream, trial_seeds
from app.bandit.stats import SufficientStats


def random_spd(rng, p, jitter=0.5):
    q = rng.normal(size=(p, p))
    return q @ q.T / p + jitter * np.eye(p)


def random_instance(rng, m=None, t=None, p=None):
    """Small prior / hyperparameters / statistics with Gaussian designs and rewards."""
    m = m or int(rng.integers(1, 4))
    t = t or int(rng.integers(1, 6))
    p = p or int(rng.integers(2, 5))
    prior = PriorSpec(rng.normal(size=p), random_spd(rng, p))
    hp = HyperParams(float(rng.uniform(0.5, 1.5)), random_spd(rng, p, jitter=0.3))
    designs = rng.normal(size=(m, t, p))
    rewards = rng.normal(size=(m, t)) * 1.5 + 1.0
    stats = SufficientStats.from_observations(
        m, p, ((i, designs[i, k], rewards[i, k]) for i in range(m) for k in range(t)))
    return prior, hp, stats, designs, rewards


def naive_posterior(prior, hp, stats):
    m, p = stats.m, stats.dim
    sigma_tilde = np.kron(np.eye(m), hp.sigma_u) + np.kron(np.ones((m, m)), prior.sigma_prior)
    block_a = np.zeros((m * p, m * p))
    for i in range(m):
        block_a[i * p:(i + 1) * p, i * p:(i + 1) * p] = stats.A[i]
    precision = np.linalg.inv(sigma_tilde) + block_a / hp.sigma_eps_sq
    sigma = np.linalg.inv(precision)
    mu = sigma @ (np.linalg.inv(sigma_tilde) @ np.tile(prior.mu_prior, m) + stats.B.reshape(-1) / hp.sigma_eps_sq)
    return mu, sigma


def gaussian_marginal(prior, hp, designs, rewards):
    """2 log N(R; Phi mu_theta, Phi Sigma_tilde Phi^T + sigma^2 I) + mt log(2 pi)."""
    m, t, p = designs.shape
    phi = np.zeros((m * t, m * p))
    for i in range(m):
        phi[i * t:(i + 1) * t, i * p:(i + 1) * p] = designs[i]
    sigma_tilde = np.kron(np.eye(m), hp.sigma_u) + np.kron(np.ones((m, m)), prior.sigma_prior)
    cov = phi @ sigma_tilde @ phi.T + hp.sigma_eps_sq * np.eye(m * t)
    mean = phi @ np.tile(prior.mu_prior, m)
    return 2 * multivariate_normal.logpdf(rewards.reshape(-1), mean, cov) + m * t * np.log(2 * np.pi)


class FeatureTests(SimpleTestCase):
    def test_baseline_features(self):
        assert_array_equal(build_baseline_features(StateTriple(0, 0, 0)), [1, 0, 0, 0, 0, 0, 0, 0])
        assert_array_equal(build_baseline_features(StateTriple(1, 1, 1)), np.ones(8))
        assert_array_equal(build_baseline_features(StateTriple(1, 0, 1)), [1, 1, 0, 1, 0, 0, 1, 0])

    def test_design_blocks(self):
        phi = build_design(StateTriple(0, 0, 0), 0, 0.3)
        self.assertEqual(phi.shape, (PARAM_DIM,))
        assert_allclose(phi[:8], [1, 0, 0, 0, 0, 0, 0, 0])
        assert_allclose(phi[8:16], [-0.3, 0, 0, 0, 0, 0, 0, 0])
        assert_allclose(phi[16:], [0.3, 0, 0, 0, 0, 0, 0, 0])

        s = StateTriple(1, 0, 1)
        phi = build_design(s, 1, 1.0)
        assert_array_equal(phi[8:16], np.zeros(8))
        assert_array_equal(phi[16:], build_baseline_features(s))
        assert_array_equal(build_design(s, 0, 0.0)[8:], np.zeros(16))

    def test_design_reconstruction_identity(self):
        for a in (0, 1):
            for pi in (0.2, 0.37, 0.8):
                s = StateTriple(1, 1, 0)
                phi = build_design(s, a, pi)
                assert_allclose(phi[8:16] + phi[16:], a * build_baseline_features(s), atol=1e-15)

    def test_rejects_bad_inputs(self):
        with self.assertRaises(InvalidInputError):
            build_design(StateTriple(0, 0, 0), 1, 1.2)
        with self.assertRaises(InvalidInputError):
            build_design(StateTriple(0, 0, 0), 2, 0.5)
        with self.assertRaises(InvalidInputError):
            StateTriple(2, 0, 0)

    def test_state_rules(self):
        self.assertEqual(next_state([], 0, None), INITIAL_STATE)
        self.assertEqual(INITIAL_STATE.as_tuple(), (0, 0, 1))
        self.assertEqual([next_state([0], t, False).s2 for t in range(1, 5)], [1, 0, 1, 0])
        self.assertEqual(next_state([2, 2, 2], 3, False), StateTriple(1, 1, 1))
        self.assertEqual(next_state([3, 0, 2, 1], 4, None), StateTriple(0, 0, 0))
        self.assertEqual(next_state([3, 3, 3], 2, True).s3, 0)
        self.assertEqual(update_state(INITIAL_STATE, [], None, 0), INITIAL_STATE)


class PriorTests(SimpleTestCase):
    def test_default_prior_layout(self):
        prior = default_prior()
        self.assertEqual(prior.dim, 24)
        self.assertAlmostEqual(prior.mu_prior[0], 2.12)
        self.assertAlmostEqual(prior.mu_prior[3], -0.69)
        assert_array_equal(prior.mu_prior[8:16], prior.mu_prior[16:])
        assert_array_equal(np.diag(prior.sigma_prior)[8:16], np.diag(prior.sigma_prior)[16:])
        self.assertAlmostEqual(prior.sigma_prior[8, 8], 0.27 ** 2)

    def test_hyperparameter_floor(self):
        with self.assertRaises(InvalidHyperparametersError):
            HyperParams(1e-8, np.eye(2))
        with self.assertRaises(InvalidHyperparametersError):
            HyperParams(1.0, np.diag([1.0, 1e-9]))
        hp = initial_hyperparams(24)
        self.assertEqual(hp.sigma_eps_sq, 0.85)
        assert_allclose(hp.sigma_u, 0.01 * np.eye(24))


class PosteriorTests(SimpleTestCase):
    def test_sigma_theta_tilde(self):
        prior = PriorSpec(np.zeros(24), np.eye(24))
        hp = HyperParams(1.0, 2 * np.eye(24))
        assert_allclose(build_sigma_theta_tilde(prior, hp, 1), 3 * np.eye(24))
        tilde = build_sigma_theta_tilde(prior, hp, 2)
        assert_allclose(tilde[:24, :24], 3 * np.eye(24))
        assert_allclose(tilde[:24, 24:], np.eye(24))
        assert_allclose(tilde, tilde.T)
        self.assertGreater(np.linalg.eigvalsh(tilde).min(), 0)

    def test_zero_observations_reproduce_prior(self):
        rng = np.random.default_rng(3)
        prior, hp, _, _, _ = random_instance(rng, m=3, p=4)
        for method in (DENSE, STRUCTURED):
            post = posterior_update(prior, hp, SufficientStats.empty(3, 4), method)
            assert_array_equal(post.mu_post, stacked_prior_mean(prior, 3))
            assert_allclose(post.sigma_post, build_sigma_theta_tilde(prior, hp, 3), atol=1e-12)
            mu_0, sigma_0 = extract_user_posterior(post, 0)
            assert_array_equal(mu_0, prior.mu_prior)
            assert_allclose(sigma_0, prior.sigma_prior + hp.sigma_u, atol=1e-12)

    def test_prior_covariance_built_on_first_access(self):
        prior, hp, _, _, _ = random_instance(np.random.default_rng(5), m=3, p=4)
        with mock.patch('app.bandit.posterior.build_sigma_theta_tilde', wraps=build_sigma_theta_tilde) as build:
            post = posterior_update(prior, hp, SufficientStats.empty(3, 4))
            build.assert_not_called()
            sigma = post.sigma_post
            self.assertIs(post.sigma_post, sigma)
        build.assert_called_once_with(prior, hp, 3)
        assert_allclose(sigma, build_sigma_theta_tilde(prior, hp, 3))

    def test_scalar_conjugate_case(self):
        prior = PriorSpec(np.array([0.4, 0.0, 0.0]), np.diag([0.5, 1.0, 1.0]))
        hp = HyperParams(0.8, np.diag([0.25, 0.1, 0.1]))
        stats = SufficientStats.from_observations(1, 3, [(0, np.array([1.0, 0.0, 0.0]), 2.0)])
        prior_var = 0.5 + 0.25
        post_var = 1.0 / (1.0 / prior_var + 1.0 / 0.8)
        post_mean = post_var * (0.4 / prior_var + 2.0 / 0.8)
        for method in (DENSE, STRUCTURED):
            mu, sigma = extract_user_posterior(posterior_update(prior, hp, stats, method), 0)
            self.assertAlmostEqual(mu[0], post_mean, places=10)
            self.assertAlmostEqual(sigma[0, 0], post_var, places=10)

    def test_matches_naive_dense_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            prior, hp, stats, _, _ = random_instance(rng)
            mu, sigma = naive_posterior(prior, hp, stats)
            for method in (DENSE, STRUCTURED):
                post = posterior_update(prior, hp, stats, method)
                assert_allclose(post.mu_post, mu, atol=1e-8)
                assert_allclose(post.sigma_post, sigma, atol=1e-8)
                p = stats.dim
                for i in range(stats.m):
                    assert_allclose(post.cov(i), sigma[i * p:(i + 1) * p, i * p:(i + 1) * p], atol=1e-8)

    def test_posterior_is_symmetric_positive_definite(self):
        rng = np.random.default_rng(5)
        prior, hp, stats, _, _ = random_instance(rng, m=3, t=5, p=4)
        sigma = posterior_update(prior, hp, stats).sigma_post
        self.assertLess(np.max(np.abs(sigma - sigma.T)), 1e-12)
        self.assertGreater(np.linalg.eigvalsh(sigma).min(), 0)

    def test_single_user_equals_blr(self):
        rng = np.random.default_rng(17)
        prior, hp, stats, _, _ = random_instance(rng, m=1, t=5, p=4)
        post = posterior_update(prior, hp, stats)
        blr_prior = PriorSpec(prior.mu_prior, prior.sigma_prior + hp.sigma_u)
        blr = blr_posterior_update(blr_prior, BLRState.from_stats(stats, blr_prior, hp.sigma_eps_sq))
        assert_allclose(post.mean(0), blr.mu_post, atol=1e-8)
        assert_allclose(post.cov(0), blr.sigma_post, atol=1e-8)

    def test_vanishing_random_effects_pool_users(self):
        rng = np.random.default_rng(23)
        prior, hp, stats, _, _ = random_instance(rng, m=3, t=5, p=3)
        tiny = HyperParams(hp.sigma_eps_sq, 1e-8 * np.eye(3), floor=1e-12)
        post = posterior_update(prior, tiny, stats)
        blr_prior = PriorSpec(prior.mu_prior, prior.sigma_prior + tiny.sigma_u)
        blr = blr_posterior_update(blr_prior, BLRState.from_stats(stats, blr_prior, tiny.sigma_eps_sq))
        for i in range(3):
            assert_allclose(post.mean(i), blr.mu_post, atol=1e-4)

    def test_statistics_are_order_independent(self):
        rng = np.random.default_rng(2)
        obs = [(0, rng.normal(size=4), float(rng.integers(0, 4))) for _ in range(10)]
        forward = SufficientStats.from_observations(1, 4, obs)
        backward = SufficientStats.from_observations(1, 4, obs[::-1])
        assert_allclose(forward.A, backward.A, rtol=1e-12, atol=1e-12)
        assert_allclose(forward.B, backward.B, rtol=1e-12, atol=1e-12)
        self.assertEqual(forward.n[0], 10)

    def test_user_index_checks(self):
        post = posterior_update(default_prior(), initial_hyperparams(24), SufficientStats.empty(2, 24))
        with self.assertRaises(InvalidInputError):
            extract_user_posterior(post, 2)
        with self.assertRaises(InvalidInputError):
            extract_user_posterior(post, -1)

    def test_padding_users_leaves_existing_posteriors(self):
        rng = np.random.default_rng(31)
        prior, hp, stats, _, _ = random_instance(rng, m=2, t=4, p=3)
        before = posterior_update(prior, hp, stats)
        after = posterior_update(prior, hp, stats.with_users(3))
        self.assertEqual(after.m, 3)
        for i in range(2):
            assert_allclose(after.mean(i), before.mean(i), atol=1e-10)
            assert_allclose(after.cov(i), before.cov(i), atol=1e-10)
        assert_allclose(after.mean(2), joint_posterior(prior, hp, stats).lam, atol=1e-10)


class ImplicitFeatureTests(SimpleTestCase):
    def test_zero_data_recovers_prior(self):
        rng = np.random.default_rng(4)
        prior, hp, _, _, _ = random_instance(rng, m=2, p=3)
        joint = joint_posterior(prior, hp, SufficientStats.empty(2, 3))
        assert_allclose(joint.lam, prior.mu_prior, atol=1e-10)
        assert_allclose(joint.mean_u, np.zeros((2, 3)), atol=1e-12)

    def test_marginal_equivalence(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            prior, hp, stats, _, _ = random_instance(rng, m=int(rng.integers(1, 5)), t=int(rng.integers(1, 7)))
            mu, sigma = naive_posterior(prior, hp, stats)
            joint = joint_posterior(prior, hp, stats)
            p = stats.dim
            for i in range(stats.m):
                assert_allclose(joint.theta_mean(i), mu[i * p:(i + 1) * p], atol=1e-6)
                cov = joint.V1 + joint.V2[i] + joint.V3(i) + joint.V4[i]
                assert_allclose(cov, sigma[i * p:(i + 1) * p, i * p:(i + 1) * p], atol=1e-6)

    def test_population_statistics_averages(self):
        rng = np.random.default_rng(9)
        prior, hp, stats, _, _ = random_instance(rng, m=1, t=4, p=3)
        pop = population_statistics(prior, hp, stats)
        assert_allclose(pop.T3, stats.A[0])

        doubled = SufficientStats(np.concatenate([stats.A, stats.A]), np.concatenate([stats.B, stats.B]),
                                  np.concatenate([stats.n, stats.n]), np.concatenate([stats.sum_sq, stats.sum_sq]))
        pop2 = population_statistics(prior, hp, doubled)
        for name in ('T1', 'T2', 'T3', 'T4'):
            assert_allclose(getattr(pop2, name), getattr(pop, name), atol=1e-12)
        expected_T4 = stats.A[0] @ np.linalg.inv(pop.Psi[0]) @ stats.A[0]
        assert_allclose(pop2.T4, expected_T4, atol=1e-10)

    def test_lambda_is_permutation_invariant(self):
        rng = np.random.default_rng(10)
        prior, hp, stats, _, _ = random_instance(rng, m=4, t=3, p=3)
        order = [2, 0, 3, 1]
        shuffled = SufficientStats(stats.A[order], stats.B[order], stats.n[order], stats.sum_sq[order])
        assert_allclose(population_statistics(prior, hp, shuffled).lambda_vec,
                        population_statistics(prior, hp, stats).lambda_vec, atol=1e-12)

    def test_summary_is_scalar(self):
        rng = np.random.default_rng(12)
        prior, hp, stats, _, _ = random_instance(rng, m=2, t=3, p=3)
        summary = population_summary(population_statistics(prior, hp, stats))
        self.assertIn('E_trace', summary)
        self.assertTrue(all(isinstance(v, float) for v in summary.values()))


class MarginalLikelihoodTests(SimpleTestCase):
    def test_zero_observations(self):
        rng = np.random.default_rng(1)
        prior, hp, _, _, _ = random_instance(rng, m=2, p=3)
        empty = SufficientStats.empty(2, 3)
        self.assertAlmostEqual(marginal_log_likelihood(objective_inputs(prior, hp, empty)), 0.0, places=9)
        self.assertAlmostEqual(structured_log_likelihood(prior, hp, empty), 0.0, places=9)

    def test_matches_gaussian_marginal(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            prior, hp, stats, designs, rewards = random_instance(rng, t=int(rng.integers(2, 6)))
            expected = gaussian_marginal(prior, hp, designs, rewards)
            self.assertAlmostEqual(marginal_log_likelihood(objective_inputs(prior, hp, stats)), expected, delta=1e-8)
            self.assertAlmostEqual(structured_log_likelihood(prior, hp, stats), expected, delta=1e-8)

    def test_vanishing_rewards(self):
        rng = np.random.default_rng(22)
        prior, hp, stats, _, _ = random_instance(rng, m=2, t=3, p=3)
        zero_prior = PriorSpec(np.zeros(3), prior.sigma_prior)
        silent = SufficientStats(stats.A, np.zeros_like(stats.B), stats.n, np.zeros(2))
        inputs = objective_inputs(zero_prior, hp, silent)
        expected = (np.linalg.slogdet(inputs.X)[1] - np.linalg.slogdet(inputs.X + inputs.y * inputs.A)[1]
                    + inputs.mt * np.log(inputs.y))
        self.assertAlmostEqual(marginal_log_likelihood(inputs), expected, places=8)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(33)
        h = 1e-5
        for k in range(50):
            prior, hp, stats, _, _ = random_instance(rng, t=int(rng.integers(2, 6)))
            parameterization = DIAGONAL_LOG if k % 2 == 0 else CHOLESKY_FULL
            method = DENSE if k % 4 < 2 else STRUCTURED
            if parameterization == DIAGONAL_LOG:
                hp = HyperParams(hp.sigma_eps_sq, np.diag(np.diag(hp.sigma_u)))
            cfg = OptimizerConfig(parameterization=parameterization, method=method)
            param = make_parameterization(prior.dim, cfg)
            z = param.from_hp(hp)
            analytic = marginal_ll_gradient(prior, hp, stats, parameterization, method)
            numeric = np.zeros_like(z)
            for j in range(z.size):
                step = np.zeros_like(z)
                step[j] = h
                numeric[j] = (log_likelihood(prior, param.to_hp(z + step), stats, method)
                              - log_likelihood(prior, param.to_hp(z - step), stats, method)) / (2 * h)
            self.assertLessEqual(np.linalg.norm(analytic - numeric), 1e-4 * max(1.0, np.linalg.norm(numeric)))

    def test_zero_observation_gradient(self):
        rng = np.random.default_rng(34)
        prior, hp, _, _, _ = random_instance(rng, m=2, p=3)
        for method in (DENSE, STRUCTURED):
            grad = marginal_ll_gradient(prior, hp, SufficientStats.empty(2, 3), CHOLESKY_FULL, method)
            assert_allclose(grad, np.zeros_like(grad), atol=1e-8)


def simulate_mixed_effects(rng, m, t, sigma_eps_sq, sigma_u, theta_pop):
    p = theta_pop.shape[0]
    stats = SufficientStats.empty(m, p)
    for i in range(m):
        theta_i = theta_pop + rng.multivariate_normal(np.zeros(p), sigma_u)
        for _ in range(t):
            phi = np.concatenate([[1.0], rng.normal(size=p - 1)])
            stats.add(i, phi, phi @ theta_i + rng.normal() * np.sqrt(sigma_eps_sq))
    return stats


class HyperparameterUpdateTests(SimpleTestCase):
    def test_zero_observations_return_initial(self):
        hp = initial_hyperparams(3)
        fit = update_hyperparams(PriorSpec.isotropic(3), SufficientStats.empty(4, 3), hp)
        self.assertIs(fit.hp, hp)
        self.assertTrue(fit.converged)

    def test_exhausted_backtracking_is_not_converged(self):
        cfg = OptimizerConfig(max_halvings=3)
        with self.assertLogs('app.bandit.empirical_bayes', 'WARNING'):
            result = projected_ascent(lambda z: -float(z @ z), lambda z: np.ones(2), lambda z: z, np.zeros(2), cfg)
        self.assertFalse(result.converged)
        self.assertTrue(result.stalled)
        self.assertEqual(result.iterations, 1)
        assert_array_equal(result.z, np.zeros(2))
        self.assertEqual(result.trace, [0.0])

    def test_monotone_and_feasible(self):
        rng = np.random.default_rng(40)
        stats = simulate_mixed_effects(rng, 6, 10, 0.7, np.diag([0.4, 0.2, 0.1]), np.array([1.0, 0.5, -0.3]))
        prior = PriorSpec.isotropic(3)
        hp0 = initial_hyperparams(3)
        for parameterization in (DIAGONAL_LOG, CHOLESKY_FULL):
            cfg = OptimizerConfig(parameterization=parameterization, max_iters=60)
            fit = update_hyperparams(prior, stats, hp0, cfg)
            self.assertTrue(np.all(np.diff(fit.trace) >= -1e-10))
            self.assertGreaterEqual(fit.objective, fit.initial_objective - 1e-10)
            self.assertAlmostEqual(fit.objective, log_likelihood(prior, fit.hp, stats), places=6)
            self.assertGreaterEqual(np.linalg.eigvalsh(fit.hp.sigma_u).min(), cfg.eig_floor * (1 - 1e-8))
            self.assertGreaterEqual(fit.hp.sigma_eps_sq, cfg.sigma_floor)
            assert_allclose(fit.hp.sigma_u, fit.hp.sigma_u.T)

    def test_deterministic(self):
        rng = np.random.default_rng(41)
        stats = simulate_mixed_effects(rng, 4, 8, 1.0, np.diag([0.3, 0.3]), np.array([0.5, 0.5]))
        cfg = OptimizerConfig(max_iters=40)
        first = update_hyperparams(PriorSpec.isotropic(2), stats, initial_hyperparams(2), cfg)
        second = update_hyperparams(PriorSpec.isotropic(2), stats, initial_hyperparams(2), cfg)
        self.assertEqual(first.hp.sigma_eps_sq, second.hp.sigma_eps_sq)
        assert_array_equal(first.hp.sigma_u, second.hp.sigma_u)

    def test_converged_fit_is_stationary(self):
        rng = np.random.default_rng(42)
        stats = simulate_mixed_effects(rng, 10, 20, 0.8, np.diag([0.3, 0.2]), np.array([1.0, 0.0]))
        cfg = OptimizerConfig(max_iters=500)
        fit = update_hyperparams(PriorSpec.isotropic(2), stats, initial_hyperparams(2), cfg)
        if fit.converged and fit.grad_norm <= cfg.grad_tol:
            grad = marginal_ll_gradient(PriorSpec.isotropic(2), fit.hp, stats) / stats.total_count
            self.assertLessEqual(np.max(np.abs(grad)), cfg.grad_tol * 10)
        self.assertLessEqual(fit.iterations, cfg.max_iters)

    def test_noise_variance_recovery(self):
        prior = PriorSpec.isotropic(2)
        sigma_u = np.diag([0.3, 0.2])
        for true_sigma in (0.5, 0.85, 1.5):
            errors = []
            for seed in range(20):
                rng = np.random.default_rng(1000 + seed)
                stats = simulate_mixed_effects(rng, 20, 40, true_sigma, sigma_u, np.array([1.0, -0.5]))
                fit = update_hyperparams(prior, stats, initial_hyperparams(2))
                errors.append(abs(fit.hp.sigma_eps_sq - true_sigma) / true_sigma)
            self.assertLess(np.mean(errors), 0.25)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            OptimizerConfig(step_size=0)
        with self.assertRaises(ConfigError):
            OptimizerConfig.from_dict({'parameterization': 'full'})
        with self.assertRaises(ConfigError):
            OptimizerConfig.from_dict({'learning_rate': 0.1})
        self.assertEqual(OptimizerConfig.from_dict({'max_iters': 5}).max_iters, 5)


class PolicyTests(SimpleTestCase):
    def test_rho_constants(self):
        sp = SmoothingParams()
        self.assertAlmostEqual(float(rho(0.0, sp)), 0.3, delta=1e-12)
        self.assertAlmostEqual(float(rho(0.1, sp)), 0.5729, places=4)
        self.assertAlmostEqual(float(rho(50.0, sp)), 0.8, places=12)
        self.assertAlmostEqual(float(rho(-50.0, sp)), 0.2, places=12)
        xs = np.linspace(-0.5, 0.5, 101)
        self.assertTrue(np.all(np.diff(rho(xs, sp)) > 0))

    def test_degenerate_and_saturated(self):
        f_s = build_baseline_features(StateTriple(1, 0, 1))
        self.assertEqual(action_probability(np.zeros(8), np.zeros((8, 8)), f_s), float(rho(0.0)))
        mu = np.zeros(8)
        mu[0] = 10.0
        sigma = np.zeros((8, 8))
        sigma[0, 0] = 1e-8
        self.assertAlmostEqual(action_probability(mu, sigma, build_baseline_features(StateTriple(0, 0, 0))),
                               0.8, delta=1e-6)

    def test_matches_monte_carlo(self):
        f_s = build_baseline_features(StateTriple(0, 0, 0))
        sigma = np.zeros((8, 8))
        sigma[0, 0] = 1.0
        value = action_probability(np.zeros(8), sigma, f_s)
        z = np.random.default_rng(0).normal(size=1_000_000)
        self.assertAlmostEqual(value, float(np.mean(rho(z))), delta=1e-3)

    def test_quadrature_converged(self):
        rng = np.random.default_rng(6)
        coarse, fine = SmoothingParams(nodes=64), SmoothingParams(nodes=128)
        for _ in range(200):
            f_s = build_baseline_features(StateTriple(*rng.integers(0, 2, size=3)))
            mu = rng.normal(size=8) * 0.3
            sigma = random_spd(rng, 8, jitter=1e-3) * rng.choice([1e-4, 1e-2, 1.0])
            self.assertLess(abs(action_probability(mu, sigma, f_s, coarse) - action_probability(mu, sigma, f_s, fine)),
                            1e-8)

    def test_probabilities_are_clipped(self):
        rng = np.random.default_rng(7)
        for _ in range(2000):
            f_s = build_baseline_features(StateTriple(*rng.integers(0, 2, size=3)))
            mu = rng.normal(size=8) * rng.choice([0.01, 1.0, 100.0])
            sigma = random_spd(rng, 8, jitter=1e-6) * rng.choice([0.0, 1e-6, 1.0, 100.0])
            pi = action_probability(mu, sigma, f_s)
            self.assertTrue(0.2 <= pi <= 0.8)
            self.assertTrue(0.2 <= classical_probability(mu, sigma, f_s) <= 0.8)

    def test_monotone_in_mean(self):
        f_s = build_baseline_features(StateTriple(0, 0, 0))
        sigma = np.zeros((8, 8))
        sigma[0, 0] = 0.04
        values = []
        for shift in np.linspace(-0.3, 0.3, 31):
            mu = np.zeros(8)
            mu[0] = shift
            values.append(action_probability(mu, sigma, f_s))
        self.assertTrue(np.all(np.diff(values) > 0))

    def test_negative_variance_rejected(self):
        f_s = build_baseline_features(StateTriple(0, 0, 0))
        sigma = np.zeros((8, 8))
        sigma[0, 0] = -1e-6
        with self.assertRaises(InvalidInputError):
            action_probability(np.zeros(8), sigma, f_s)
        sigma[0, 0] = -1e-12
        self.assertEqual(action_probability(np.zeros(8), sigma, f_s), float(rho(0.0)))

    def test_sample_action_threshold(self):
        class FixedDraw:
            def __init__(self, value):
                self.value = value

            def random(self):
                return self.value

        self.assertEqual(sample_action(0.8, FixedDraw(0.79)), (1, 0.79))
        self.assertEqual(sample_action(0.2, FixedDraw(0.2)), (0, 0.2))

    def test_sampling_is_reproducible_and_checkpointable(self):
        policy = PolicyStream(stream(5, 'policy'))
        actions = [policy.sample(0.5) for _ in range(50)]
        again = PolicyStream(stream(5, 'policy'))
        self.assertEqual(actions, [again.sample(0.5) for _ in range(50)])
        self.assertEqual(sample_action(0.5, stream(5, 'policy')), actions[0])

        checkpoint = policy.state()
        expected = [policy.sample(0.4) for _ in range(10)]
        restored = PolicyStream.from_state(checkpoint)
        self.assertEqual(expected, [restored.sample(0.4) for _ in range(10)])

    def test_engineer_reward(self):
        params = RewardEngineeringParams(lam=1.0, m=1)
        for raw in (0, 3, 1, 2):
            self.assertEqual(engineer_reward(raw, 0, params, 0), raw)
        self.assertEqual(engineer_reward(2, 1, params, 0), 2.0)
        params.record(0, 1)
        params.record(0, 2)
        self.assertAlmostEqual(params.sigma_obs(0), 0.5)
        self.assertAlmostEqual(engineer_reward(2, 1, params, 0), 1.5)
        self.assertEqual(engineer_reward(2, 1, RewardEngineeringParams(lam=0.0, m=1), 0), 2.0)
        with self.assertRaises(InvalidInputError):
            engineer_reward(5, 1, params, 0)

    def test_running_stats(self):
        stats = RunningRewardStats(m=2)
        data = [3, 0, 2, 2, 1]
        for r in data:
            stats.update(1, r)
        self.assertAlmostEqual(stats.std(1), float(np.std(data)))
        self.assertEqual(stats.std(0), 0.0)
        restored = RunningRewardStats.from_dict(stats.to_dict())
        self.assertAlmostEqual(restored.std(1), stats.std(1))
        self.assertEqual(stats.add_user(), 2)

    def test_decision_record_round_trip(self):
        record = DecisionRecord(3, 7, StateTriple(1, 1, 0), 0.42, 1, 2, 1.8, 0.11)
        self.assertEqual(DecisionRecord.from_dict(record.to_dict()), record)
        with self.assertRaises(InvalidInputError):
            DecisionRecord(0, 0, INITIAL_STATE, 0.3, 0, 2, 1.8, 0.5)


class RngTests(SimpleTestCase):
    def test_streams_are_independent_and_stable(self):
        a = stream(9, 'environment', 0).random(5)
        b = stream(9, 'environment', 1).random(5)
        c = stream(9, 'policy').random(5)
        self.assertFalse(np.allclose(a, b))
        self.assertFalse(np.allclose(a, c))
        assert_array_equal(a, stream(9, 'environment', 0).random(5))
        self.assertEqual(trial_seeds(4, 3), trial_seeds(4, 5)[:3])
        with self.assertRaises(InvalidInputError):
            stream(9, 'weather')

    def test_state_round_trip(self):
        rng = stream(1, 'policy')
        rng.random(7)
        restored = generator_from_state(generator_state(rng))
        assert_array_equal(rng.random(4), restored.random(4))


class BaselineTests(SimpleTestCase):
    def test_blr_zero_data_is_prior(self):
        prior = default_prior()
        state = blr_posterior_update(prior, BLRState.empty(prior))
        assert_array_equal(state.mu_post, prior.mu_prior)
        assert_array_equal(state.sigma_post, prior.sigma_prior)
        self.assertEqual(blr_update_noise_variance(prior, BLRState.empty(prior)), 0.85)

    def test_blr_scalar_conjugate(self):
        prior = PriorSpec(np.array([1.0, 0.0]), np.diag([2.0, 1.0]))
        stats = SufficientStats.from_observations(1, 2, [(0, np.array([1.0, 0.0]), 3.0)])
        state = blr_posterior_update(prior, BLRState.from_stats(stats, prior, 0.5))
        var = 1.0 / (1.0 / 2.0 + 1.0 / 0.5)
        self.assertAlmostEqual(state.sigma_post[0, 0], var, places=10)
        self.assertAlmostEqual(state.mu_post[0], var * (1.0 / 2.0 + 3.0 / 0.5), places=10)

    def test_blr_dense_oracle(self):
        rng = np.random.default_rng(50)
        prior, hp, stats, designs, rewards = random_instance(rng, m=3, t=4, p=4)
        X = designs.reshape(-1, 4)
        R = rewards.reshape(-1)
        precision = X.T @ X / hp.sigma_eps_sq + np.linalg.inv(prior.sigma_prior)
        sigma = np.linalg.inv(precision)
        mu = sigma @ (X.T @ R / hp.sigma_eps_sq + np.linalg.inv(prior.sigma_prior) @ prior.mu_prior)
        state = blr_posterior_update(prior, BLRState.from_stats(stats, prior, hp.sigma_eps_sq))
        assert_allclose(state.mu_post, mu, atol=1e-8)
        assert_allclose(state.sigma_post, sigma, atol=1e-8)

    def test_blr_objective_is_single_block_special_case(self):
        rng = np.random.default_rng(51)
        prior, hp, stats, _, _ = random_instance(rng, m=1, t=5, p=3)
        tiny = HyperParams(hp.sigma_eps_sq, 1e-12 * np.eye(3), floor=1e-14)
        expected = marginal_log_likelihood(objective_inputs(prior, tiny, stats))
        actual = blr_marginal_log_likelihood(prior, BLRState.from_stats(stats, prior, hp.sigma_eps_sq))
        self.assertAlmostEqual(actual, expected, delta=1e-8 * max(1.0, abs(expected)))

    def test_blr_noise_recovery(self):
        prior = PriorSpec.isotropic(2)
        errors = []
        for seed in range(20):
            rng = np.random.default_rng(2000 + seed)
            stats = simulate_mixed_effects(rng, 20, 40, 1.0, 1e-6 * np.eye(2), np.array([1.0, 0.5]))
            sigma = blr_update_noise_variance(prior, BLRState.from_stats(stats, prior))
            errors.append(abs(sigma - 1.0))
        self.assertLess(np.mean(errors), 0.25)

    def test_random_policy(self):
        self.assertEqual(random_policy(), 0.5)
        algorithm = RandomAlgorithm()
        self.assertEqual(algorithm.probability(0, StateTriple(1, 1, 1)), 0.5)
        rng = stream(3, 'policy')
        actions = [sample_action(random_policy(), rng)[0] for _ in range(10_000)]
        self.assertAlmostEqual(np.mean(actions), 0.5, delta=0.02)

    def test_algorithms_emit_clipped_probabilities(self):
        prior = default_prior()
        for name in ('rebandit', 'blr'):
            algorithm = make_algorithm(name, prior, 2)
            pi = algorithm.probability(1, INITIAL_STATE)
            self.assertTrue(0.2 <= pi <= 0.8)
            self.assertIn('beta0_mean', algorithm.snapshot_summary())
        with self.assertRaises(InvalidInputError):
            make_algorithm('greedy', prior, 2)

    def test_rebandit_single_user_trajectory_matches_blr(self):
        prior = default_prior()
        hp = initial_hyperparams(24)
        rebandit = ReBanditAlgorithm(prior, 1, hp)
        blr = BLRAlgorithm(PriorSpec(prior.mu_prior, prior.sigma_prior + hp.sigma_u), hp.sigma_eps_sq)
        stats = SufficientStats.empty(1, 24)
        rng = np.random.default_rng(60)
        for t in range(60):
            state = StateTriple(*rng.integers(0, 2, size=3))
            pi_rebandit, pi_blr = rebandit.probability(0, state), blr.probability(0, state)
            self.assertAlmostEqual(pi_rebandit, pi_blr, delta=1e-8)
            action = int(rng.random() < pi_rebandit)
            stats.add(0, build_design(state, action, pi_rebandit), float(rng.integers(0, 4)))
            if t % 2 == 1:
                rebandit.update_posterior(stats)
                blr.update_posterior(stats)
                assert_allclose(rebandit.posterior.mean(0), blr.state.mu_post, atol=1e-8)
        self.assertAlmostEqual(rebandit.posterior.cov(0)[BETA, BETA][0, 0], blr.state.sigma_post[BETA, BETA][0, 0],
                               delta=1e-8)
