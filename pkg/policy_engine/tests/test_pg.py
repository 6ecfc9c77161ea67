import numpy as np
from django.test import SimpleTestCase, override_settings
from scipy.stats import chisquare

from policy_engine.envs import ChainMdp, ConstantRewardMdp, SurveillanceEnv, chain_exact_q, chain_exact_value
from policy_engine.exceptions import InvalidArgumentError, ModelOrderGuardExceeded
from policy_engine.mdp import GaussianPolicy
from policy_engine.pg import (
    StepRecord,
    TrainerConfig,
    estimate_q,
    horizon_cap,
    initial_trainer_state,
    sample_horizon,
    stochastic_gradient,
    train,
    train_step,
)
from policy_engine.rkhs import FunctionExpansion, KernelSpec, difference_norm, kernel_eval

CHAIN_KERNEL = KernelSpec(1, 1, (4.0,))


def chain_policy(weights=(0.4, -0.2, 0.8), centers=(1.0, 5.0, 9.0)):
    return GaussianPolicy(FunctionExpansion(CHAIN_KERNEL, [[c] for c in centers], [[w] for w in weights]), [1.0])


def zero_policy(spec=CHAIN_KERNEL, covariance=(1.0,)):
    return GaussianPolicy(FunctionExpansion.zero(spec), covariance)


def within_standard_errors(test, samples, expected, k=4.0):
    samples = np.asarray(samples, dtype=float)
    stderr = samples.std(ddof=1) / np.sqrt(samples.size)
    test.assertLessEqual(abs(samples.mean() - expected), k * stderr + 1e-9,
                         f"mean {samples.mean()} vs {expected} (stderr {stderr})")


class HorizonSamplerTests(SimpleTestCase):
    def chi_square_pvalue(self, gamma, draws, seed):
        rng = np.random.default_rng(seed)
        horizons = np.array([sample_horizon(gamma, rng)[0] for _ in range(draws)])
        # last explicit bin keeps an expected count >= 5, the rest goes to one tail bin
        last = int(np.floor(np.log(5.0 / (draws * (1 - gamma))) / np.log(gamma))) + 1
        observed = np.bincount(np.minimum(horizons, last), minlength=last + 1)
        expected = draws * np.append((1 - gamma) * gamma ** np.arange(last), gamma ** last)
        return chisquare(observed, expected).pvalue

    def test_geometric_distribution(self):
        self.assertGreater(self.chi_square_pvalue(0.5, 200000, seed=1), 0.001)
        self.assertGreater(self.chi_square_pvalue(0.9, 200000, seed=2), 0.001)

    def test_tiny_gamma_gives_zero_horizons(self):
        rng = np.random.default_rng(0)
        self.assertEqual({sample_horizon(1e-9, rng)[0] for _ in range(1000)}, {0})

    def test_cap_resamples_long_draws(self):
        with override_settings(POLICY_ENGINE={'HORIZON_CAP_FACTOR': 0.1}):
            cap = horizon_cap(0.9)
            rng = np.random.default_rng(0)
            with self.assertLogs('policy_engine.pg', 'WARNING'):
                draws = [sample_horizon(0.9, rng) for _ in range(500)]
        self.assertLessEqual(max(t for t, _ in draws), cap)
        self.assertGreater(sum(r for _, r in draws), 0)

    def test_default_cap(self):
        self.assertEqual(horizon_cap(0.5), 100)

    def test_gamma_must_be_a_discount(self):
        with self.assertRaises(InvalidArgumentError):
            sample_horizon(1.0, np.random.default_rng(0))


class EstimateQTests(SimpleTestCase):
    def test_tiny_gamma_returns_the_immediate_reward(self):
        rng = np.random.default_rng(0)
        estimate = estimate_q(ChainMdp(), zero_policy(), [10.0], [1.0], 1e-9, rng)
        self.assertEqual((estimate.q_hat, estimate.horizon, estimate.env_steps), (1.0, 0, 1))
        estimate = estimate_q(ChainMdp(), zero_policy(), [9.0], [1.0], 1e-9, rng)
        self.assertEqual(estimate.q_hat, 0.0)
        np.testing.assert_array_equal(estimate.end_state, [10.0])

    def test_constant_reward(self):
        env = ConstantRewardMdp(reward=2.0)
        rng = np.random.default_rng(1)
        estimates = [estimate_q(env, zero_policy(), [0.0], [0.0], 0.9, rng) for _ in range(20000)]
        for e in estimates[:50]:
            self.assertEqual(e.q_hat, 2.0 * (e.horizon + 1))
        within_standard_errors(self, [e.q_hat for e in estimates], 2.0 / (1 - 0.9))

    def test_unbiased_on_the_chain(self):
        policy = chain_policy()
        rng = np.random.default_rng(2)
        for s, a in ((5.0, 1.0), (8.0, -1.0), (9.0, 0.5)):
            samples = [estimate_q(ChainMdp(), policy, [s], [a], 0.9, rng).q_hat for _ in range(10000)]
            within_standard_errors(self, samples, chain_exact_q(policy, [s], [a], 0.9))

    def test_legacy_scaling(self):
        plain = estimate_q(ChainMdp(), chain_policy(), [9.0], [1.0], 0.9, np.random.default_rng(5))
        legacy = estimate_q(ChainMdp(), chain_policy(), [9.0], [1.0], 0.9, np.random.default_rng(5),
                            legacy_q_scaling=True)
        self.assertAlmostEqual(legacy.q_hat, 0.1 * plain.q_hat)


class StochasticGradientTests(SimpleTestCase):
    def test_mean_action_gives_a_zero_weight(self):
        for mode in ('plain', 'symmetric_q'):
            sample = stochastic_gradient(ChainMdp(), chain_policy(), [10.0], 1e-9, mode,
                                         np.random.default_rng(0), root_noise=[0.0])
            np.testing.assert_array_equal(sample.weight, [0.0])

    def test_both_horizons_collapse(self):
        sample = stochastic_gradient(ChainMdp(), zero_policy(), [10.0], 1e-9, 'plain',
                                     np.random.default_rng(0), root_noise=[0.7])
        self.assertEqual((sample.horizon_T, sample.horizon_TQ, sample.env_steps), (0, 0, 1))
        np.testing.assert_array_equal(sample.center, [10.0])
        np.testing.assert_allclose(sample.weight, [0.7], rtol=1e-8)

        mirrored = stochastic_gradient(ChainMdp(), zero_policy(), [10.0], 1e-9, 'symmetric_q',
                                       np.random.default_rng(0), root_noise=[0.7])
        self.assertEqual(mirrored.q_mirror, 1.0)
        np.testing.assert_array_equal(mirrored.weight, [0.0])

    def gradient_coordinates(self, mode, n, s0, seed):
        policy = chain_policy()
        rng = np.random.default_rng(seed)
        rows = []
        for _ in range(n):
            sample = stochastic_gradient(ChainMdp(), policy, [s0], 0.8, mode, rng)
            rows.append([kernel_eval(CHAIN_KERNEL, sample.center, c) * sample.weight[0]
                         for c in policy.mean.centers])
        return np.array(rows)

    def finite_differences(self, s0, gamma=0.8, step=1e-4):
        base = np.array(chain_policy().mean.weights)[:, 0]
        derivatives = []
        for j in range(base.size):
            up, down = base.copy(), base.copy()
            up[j] += step
            down[j] -= step
            derivatives.append((chain_exact_value(chain_policy(up), [s0], gamma)
                                - chain_exact_value(chain_policy(down), [s0], gamma)) / (2 * step))
        return np.array(derivatives)

    def test_unbiased_gradient_coordinates(self):
        oracle = self.finite_differences(8.0)
        for mode, seed in (('plain', 3), ('symmetric_q', 4)):
            coordinates = self.gradient_coordinates(mode, 15000, 8.0, seed)
            for j in range(3):
                within_standard_errors(self, coordinates[:, j], oracle[j])

    def test_symmetric_estimator_has_lower_variance(self):
        plain = self.gradient_coordinates('plain', 3000, 9.0, seed=5)[:, 2]
        symmetric = self.gradient_coordinates('symmetric_q', 3000, 9.0, seed=6)[:, 2]
        self.assertLess(symmetric.var(ddof=1) / plain.var(ddof=1), 1.0)

    def test_unknown_mode(self):
        with self.assertRaises(InvalidArgumentError):
            stochastic_gradient(ChainMdp(), zero_policy(), [0.0], 0.9, 'control_variate', np.random.default_rng(0))


class TrainerTests(SimpleTestCase):
    def chain_config(self, **kwargs):
        options = dict(gamma=0.9, eta=0.05, compression_K=0.5, seed=7)
        options.update(kwargs)
        return TrainerConfig(**options)

    def test_invalid_config(self):
        for kwargs in ({'gamma': 1.0}, {'gamma': 0.0}, {'eta': 0.0}, {'compression_K': -1.0},
                       {'variance_mode': 'natural'}, {'batch_size': 0}, {'max_model_order_guard': 0}):
            with self.assertRaises(InvalidArgumentError):
                self.chain_config(**kwargs)
        self.assertAlmostEqual(self.chain_config().eps_K, 0.025)

    def test_zero_iterations(self):
        history = train(ChainMdp(), self.chain_config(), 0, CHAIN_KERNEL, [1.0])
        self.assertEqual(len(history), 0)
        self.assertEqual(history.final_state.model_order, 0)
        self.assertEqual(history.final_state.iteration, 0)

    def test_same_seed_gives_identical_histories(self):
        first = train(ChainMdp(), self.chain_config(), 60, CHAIN_KERNEL, [1.0])
        second = train(ChainMdp(), self.chain_config(), 60, CHAIN_KERNEL, [1.0])
        self.assertEqual([r.as_row() for r in first.records], [r.as_row() for r in second.records])
        np.testing.assert_array_equal(first.final_state.policy.mean.weights,
                                      second.final_state.policy.mean.weights)
        np.testing.assert_array_equal(first.final_state.system_state, second.final_state.system_state)

    def test_step_bound_and_compression_bias(self):
        policies = [FunctionExpansion.zero(CHAIN_KERNEL)]
        records = []

        def keep(state, record):
            policies.append(state.policy.mean)
            records.append(record)

        config = self.chain_config()
        train(ChainMdp(), config, 100, CHAIN_KERNEL, [1.0], callback=keep)
        for k, record in enumerate(records):
            self.assertLessEqual(record.komp_residual, max(config.eps_K, 1e-6))
            step = difference_norm(policies[k + 1], policies[k])
            self.assertLessEqual(step, config.eta * record.wtilde_norm + max(config.eps_K, 1e-6) + 1e-6)

    def test_zero_budget_grows_by_at_most_one(self):
        history = train(ChainMdp(), self.chain_config(compression_K=0.0), 60, CHAIN_KERNEL, [1.0])
        orders = [0] + [r.model_order for r in history.records]
        for before, after in zip(orders, orders[1:]):
            self.assertLessEqual(after, before + 1)
        self.assertLessEqual(max(orders), 11)
        self.assertTrue(all(r.komp_residual <= 1e-6 for r in history.records))

    def test_system_state_chains_through_rollouts(self):
        history = train(ChainMdp(), self.chain_config(log_interval=2), 20, CHAIN_KERNEL, [1.0])
        for previous, record in zip(history.records, history.records[1:]):
            self.assertEqual(record.k, previous.k + 1)
        self.assertIsNone(history.records[0].system_state)
        np.testing.assert_array_equal(history.records[1].system_state, history.records[1].samples[-1].end_state)
        self.assertEqual(history.final_state.env_steps, sum(r.samples[0].env_steps for r in history.records))

    def test_training_improves_the_chain_value(self):
        chain = ChainMdp(num_states=5)
        kernel = KernelSpec(1, 1, (0.1,))
        config = TrainerConfig(gamma=0.9, eta=0.05, compression_K=0.5, variance_mode='symmetric_q',
                               restart_episodes=True, seed=0)
        history = train(chain, config, 1500, kernel, [1.0])
        before = chain_exact_value(zero_policy(kernel), [0.0], 0.9, num_states=5)
        after = chain_exact_value(history.final_state.policy, [0.0], 0.9, num_states=5)
        self.assertGreater(after, before)

    def test_model_order_guard(self):
        env = SurveillanceEnv()
        config = TrainerConfig(gamma=0.5, eta=0.05, compression_K=0.0, max_model_order_guard=1, seed=0)
        with self.assertRaises(ModelOrderGuardExceeded) as ctx:
            train(env, config, 5, KernelSpec.isotropic(6, 2, 1.0), [1.0, 1.0])
        self.assertEqual(ctx.exception.iteration, 2)
        self.assertIn('compression_K', str(ctx.exception))

    def test_batch_averaging(self):
        history = train(ChainMdp(), self.chain_config(batch_size=3), 5, CHAIN_KERNEL, [1.0])
        for record in history.records:
            self.assertEqual(len(record.samples), 3)
            self.assertEqual(record.horizon_T, sum(s.horizon_T for s in record.samples))
            self.assertLessEqual(record.model_order, 3 * record.k)

    def test_antithetic_noise_alternates(self):
        env = ChainMdp()
        config = self.chain_config(variance_mode='antithetic_noise')
        rng = np.random.default_rng(config.seed)
        state = initial_trainer_state(env, CHAIN_KERNEL, [1.0], rng)
        noises = []
        for _ in range(4):
            state, record = train_step(state, env, config, rng)
            noises.append(record.samples[0].root_noise)
        np.testing.assert_array_equal(noises[1], -noises[0])
        np.testing.assert_array_equal(noises[3], -noises[2])
        self.assertFalse(np.array_equal(noises[2], -noises[1]))

    def test_restart_episodes_start_from_the_initial_state(self):
        config = self.chain_config(gamma=1e-9, restart_episodes=True)
        history = train(ChainMdp(start_state=2), config, 10, CHAIN_KERNEL, [1.0])
        for record in history.records:
            np.testing.assert_array_equal(record.samples[0].center, [2.0])

    def test_dimension_mismatch(self):
        with self.assertRaises(InvalidArgumentError):
            train(SurveillanceEnv(), self.chain_config(), 1, CHAIN_KERNEL, [1.0])

    def test_step_record_row(self):
        history = train(ChainMdp(), self.chain_config(), 1, CHAIN_KERNEL, [1.0])
        row = history.records[0].as_row()
        self.assertEqual(len(row), len(StepRecord.CSV_HEADER))
        self.assertEqual(row[0], 1)
        self.assertEqual(row[-1], 0.025)

    def test_restart_when_absorbed(self):
        chain = ChainMdp()
        for restart, expected in ((False, [10.0]), (True, [0.0])):
            config = self.chain_config(gamma=1e-9, restart_when_absorbed=restart)
            rng = np.random.default_rng(0)
            state = initial_trainer_state(chain, CHAIN_KERNEL, [1.0], rng, initial_state=[10.0])
            _, record = train_step(state, chain, config, rng)
            np.testing.assert_array_equal(record.samples[0].center, expected)
        self.assertTrue(chain.is_absorbing([10.0]))
        self.assertFalse(chain.is_absorbing([9.0]))
        self.assertFalse(SurveillanceEnv().is_absorbing(np.zeros(6)))

    def test_online_training_improves_the_eleven_state_chain(self):
        # Narrow kernel: updates at the absorbing state must not leak into state 9
        kernel = KernelSpec(1, 1, (0.01,))
        before = chain_exact_value(zero_policy(kernel), [0.0], 0.9)
        for seed in range(3):
            config = TrainerConfig(gamma=0.9, eta=0.05, compression_K=0.5, variance_mode='symmetric_q',
                                   restart_when_absorbed=True, seed=seed)
            history = train(ChainMdp(), config, 2000, kernel, [1.0])
            self.assertLessEqual(history.final_state.model_order, 11)
            after = chain_exact_value(history.final_state.policy, [0.0], 0.9)
            self.assertGreater(after, before, f"seed {seed}")


class SurveillanceTrainingTests(SimpleTestCase):
    MAX_MODEL_ORDER = 100
    TIME_BUDGET = 120.0

    def test_compressed_run_stays_within_budget(self):
        env = SurveillanceEnv(reward_scale=1e-3)
        kernel = KernelSpec(6, 2, (100.0, 100.0, 100.0, 100.0, 1e4, 100.0))
        config = TrainerConfig(gamma=0.9, eta=0.05, compression_K=0.5, variance_mode='antithetic_noise',
                               restart_episodes=True, max_model_order_guard=self.MAX_MODEL_ORDER, seed=0)
        history = train(env, config, 300, kernel, [0.5, 0.5])

        self.assertEqual(len(history), 300)
        for record in history.records:
            self.assertLessEqual(record.komp_residual, config.eps_K + 1e-8, f"k={record.k}")
            self.assertLessEqual(record.model_order, self.MAX_MODEL_ORDER, f"k={record.k}")
        self.assertGreater(sum(r.removed_count for r in history.records), 0)
        self.assertLess(history.wall_time, self.TIME_BUDGET)

    def test_carried_inverse_matches_fresh_factorizations(self):
        env = SurveillanceEnv(reward_scale=1e-3)
        kernel = KernelSpec(6, 2, (1.0, 1.0, 1.0, 1.0, 100.0, 1.0))
        config = TrainerConfig(gamma=0.9, eta=0.05, compression_K=0.5, seed=1)
        carried = train(env, config, 40, kernel, [0.5, 0.5])
        with override_settings(POLICY_ENGINE={'KOMP_REFRESH_INTERVAL': 1}):
            fresh = train(env, config, 40, kernel, [0.5, 0.5])
        self.assertEqual([r.model_order for r in carried.records], [r.model_order for r in fresh.records])
        self.assertLess(difference_norm(carried.final_state.policy.mean, fresh.final_state.policy.mean), 1e-6)
