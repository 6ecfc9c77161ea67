import copy
import json
import os
import tempfile

from django.test import SimpleTestCase, override_settings
from rest_framework import serializers

from policy_engine.experiments import load_experiment_config
from policy_engine.serializers import ExperimentConfigSerializer, FunctionExpansionSerializer
from policy_engine.utils import DEFAULT_CONFIG_DIR, config_hash, load_json, write_json

CHAIN_CONFIG = {
    'environment': {'name': 'chain', 'params': {'num_states': 11}},
    'trainer': {'gamma': 0.9, 'eta': 0.05},
    'kernel': {'bandwidth': [1.0]},
    'policy': {'covariance': [1.0]},
    'schedule': {'num_iterations': 10},
}


def chain_config(**sections):
    data = copy.deepcopy(CHAIN_CONFIG)
    for name, values in sections.items():
        if isinstance(values, dict) and isinstance(data.get(name), dict):
            data[name].update(values)
        else:
            data[name] = values
    return data


class ExperimentConfigSerializerTests(SimpleTestCase):
    def test_bundled_configs_are_valid(self):
        for name in ('chain.json', 'surveillance.json'):
            serializer = ExperimentConfigSerializer(data=load_json(os.path.join(DEFAULT_CONFIG_DIR, name)))
            self.assertTrue(serializer.is_valid(), (name, serializer.errors))

    def test_trainer_defaults(self):
        serializer = ExperimentConfigSerializer(data=chain_config())
        self.assertTrue(serializer.is_valid(), serializer.errors)
        trainer = serializer.validated_data['trainer']
        self.assertEqual(trainer['compression_K'], 0.0)
        self.assertEqual(trainer['variance_mode'], 'plain')
        self.assertIsNone(trainer['max_model_order_guard'])
        self.assertEqual((trainer['seed'], trainer['batch_size']), (0, 1))
        self.assertFalse(trainer['legacy_q_scaling'])

    def test_missing_diagnostics_are_filled_in(self):
        serializer = ExperimentConfigSerializer(data=chain_config())
        self.assertTrue(serializer.is_valid(), serializer.errors)
        diagnostics = serializer.validated_data['diagnostics']
        self.assertTrue(diagnostics['enabled'])
        self.assertEqual((diagnostics['n_episodes'], diagnostics['horizon']), (100, 100))
        self.assertIsNone(diagnostics['reference_state'])

    @override_settings(POLICY_ENGINE={'CHECKPOINT_INTERVAL': 7, 'LOG_INTERVAL': 3})
    def test_schedule_defaults_come_from_settings(self):
        serializer = ExperimentConfigSerializer(data=chain_config())
        self.assertTrue(serializer.is_valid(), serializer.errors)
        schedule = serializer.validated_data['schedule']
        self.assertEqual((schedule['checkpoint_interval'], schedule['log_interval']), (7, 3))

    def test_unknown_keys_are_rejected(self):
        serializer = ExperimentConfigSerializer(data=chain_config(learning_rate=0.1))
        self.assertFalse(serializer.is_valid())
        self.assertIn('learning_rate', serializer.errors)

        serializer = ExperimentConfigSerializer(data=chain_config(trainer={'lr': 0.1}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('lr', serializer.errors['trainer'])

    def test_gamma_must_be_in_the_open_unit_interval(self):
        for gamma in (0.0, 1.0, 1.5):
            serializer = ExperimentConfigSerializer(data=chain_config(trainer={'gamma': gamma}))
            self.assertFalse(serializer.is_valid())
            self.assertIn('gamma', serializer.errors['trainer'])

    def test_eta_must_be_positive(self):
        serializer = ExperimentConfigSerializer(data=chain_config(trainer={'eta': 0.0}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('eta', serializer.errors['trainer'])

    def test_unknown_variance_mode(self):
        serializer = ExperimentConfigSerializer(data=chain_config(trainer={'variance_mode': 'control_variate'}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('variance_mode', serializer.errors['trainer'])

    def test_dimension_mismatches(self):
        serializer = ExperimentConfigSerializer(data=chain_config(policy={'covariance': [1.0, 1.0]}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('policy', serializer.errors)

        serializer = ExperimentConfigSerializer(data=chain_config(kernel={'bandwidth': [1.0, 1.0]}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('kernel', serializer.errors)

        serializer = ExperimentConfigSerializer(data=chain_config(diagnostics={'reference_state': [0.0, 1.0]}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('diagnostics', serializer.errors)

    def test_nonpositive_bandwidth_and_covariance(self):
        serializer = ExperimentConfigSerializer(data=chain_config(kernel={'bandwidth': [0.0]}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('bandwidth', serializer.errors['kernel'])

        serializer = ExperimentConfigSerializer(data=chain_config(policy={'covariance': [-1.0]}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('covariance', serializer.errors['policy'])

    def test_invalid_environment_params(self):
        serializer = ExperimentConfigSerializer(
            data=chain_config(environment={'name': 'chain', 'params': {'num_states': 1}}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('environment', serializer.errors)

        serializer = ExperimentConfigSerializer(
            data=chain_config(environment={'name': 'chain', 'params': {'length': 4}}))
        self.assertFalse(serializer.is_valid())
        self.assertIn('environment', serializer.errors)

    def test_bounds_inherit_the_run_constants(self):
        bounds = {'reward_bound': 1.0, 'rho_lower': 0.5, 'rho_upper': 1.0, 'epsilon': 1.0}
        serializer = ExperimentConfigSerializer(data=chain_config(bounds=bounds))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        constants = serializer.validated_data['bounds']
        self.assertEqual(constants['gamma'], 0.9)
        self.assertEqual((constants['state_dim'], constants['action_dim']), (1, 1))
        self.assertEqual(constants['policy_covariance'], [1.0])
        self.assertEqual(constants['kernel_bandwidth'], [1.0])
        self.assertEqual(constants['state_space_measure'], 1.0)
        self.assertFalse(constants['gamma_factored'])

    def test_bounds_density_range(self):
        bounds = {'reward_bound': 1.0, 'rho_lower': 2.0, 'rho_upper': 1.0, 'epsilon': 1.0}
        serializer = ExperimentConfigSerializer(data=chain_config(bounds=bounds))
        self.assertFalse(serializer.is_valid())
        self.assertIn('bounds', serializer.errors)


class FunctionExpansionSerializerTests(SimpleTestCase):
    def test_builds_an_expansion(self):
        data = {'state_dim': 1, 'action_dim': 2, 'bandwidth': [0.5],
                'centers': [[0.0], [1.0]], 'weights': [[1.0, 0.0], [0.0, -1.0]], 'iteration': 4}
        serializer = FunctionExpansionSerializer(data=data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        expansion = serializer.save()
        self.assertEqual(expansion.model_order, 2)
        self.assertEqual(expansion.spec.bandwidth, (0.5,))
        self.assertEqual(serializer.validated_data['iteration'], 4)

    def test_shape_errors(self):
        base = {'state_dim': 1, 'action_dim': 1, 'bandwidth': [1.0], 'centers': [[0.0]], 'weights': [[1.0]]}
        for field, value in (('bandwidth', [1.0, 1.0]), ('centers', [[0.0, 1.0]]), ('weights', [[1.0], [2.0]])):
            serializer = FunctionExpansionSerializer(data=dict(base, **{field: value}))
            self.assertFalse(serializer.is_valid(), field)


class LoadExperimentConfigTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError) as ctx:
            load_experiment_config(self.path('nope.json'))
        self.assertIn('nope.json', str(ctx.exception))

    def test_malformed_json(self):
        with open(self.path('broken.json'), 'w') as f:
            f.write('{"environment": ')
        with self.assertRaises(serializers.ValidationError):
            load_experiment_config(self.path('broken.json'))

    def test_overrides(self):
        write_json(self.path('cfg.json'), chain_config())
        cfg = load_experiment_config(self.path('cfg.json'), seed=17, iterations=3)
        self.assertEqual(cfg['trainer']['seed'], 17)
        self.assertEqual(cfg['schedule']['num_iterations'], 3)

    def test_manifest_reproduces_the_config(self):
        write_json(self.path('cfg.json'), chain_config())
        cfg = load_experiment_config(self.path('cfg.json'))
        write_json(self.path('manifest.json'), {'command': 'train', 'config': cfg, 'config_hash': config_hash(cfg)})
        again = load_experiment_config(self.path('manifest.json'))
        self.assertEqual(again, cfg)
        self.assertEqual(config_hash(again), config_hash(cfg))

    def test_result_is_plain_json(self):
        write_json(self.path('cfg.json'), chain_config())
        cfg = load_experiment_config(self.path('cfg.json'))
        self.assertEqual(json.loads(json.dumps(cfg)), cfg)
