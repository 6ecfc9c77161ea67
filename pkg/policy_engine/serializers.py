from rest_framework import serializers

from .envs import ENVIRONMENTS, make_environment
from .exceptions import PolicyEngineError
from .pg import VARIANCE_MODES
from .rkhs import FunctionExpansion, KernelSpec
from .utils import engine_setting


class StrictFieldsMixin:
    """Reject keys the serializer does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


def _positive_entries(values, name):
    if any(v <= 0 for v in values):
        raise serializers.ValidationError(f"All {name} entries must be > 0.")
    return values


class EnvironmentSerializer(StrictFieldsMixin, serializers.Serializer):
    name = serializers.ChoiceField(choices=sorted(ENVIRONMENTS))
    params = serializers.DictField(required=False, default=dict)


class TrainerSerializer(StrictFieldsMixin, serializers.Serializer):
    gamma = serializers.FloatField()
    eta = serializers.FloatField()
    compression_K = serializers.FloatField(min_value=0.0, default=0.0)
    variance_mode = serializers.ChoiceField(choices=VARIANCE_MODES, default='plain')
    max_model_order_guard = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    seed = serializers.IntegerField(min_value=0, default=0)
    legacy_q_scaling = serializers.BooleanField(default=False)
    batch_size = serializers.IntegerField(min_value=1, default=1)
    restart_episodes = serializers.BooleanField(default=False)
    restart_when_absorbed = serializers.BooleanField(default=False)

    def validate_gamma(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError("gamma must be in (0, 1).")
        return value

    def validate_eta(self, value):
        if value <= 0:
            raise serializers.ValidationError("eta must be > 0.")
        return value


class KernelSerializer(StrictFieldsMixin, serializers.Serializer):
    bandwidth = serializers.ListField(child=serializers.FloatField(), min_length=1)

    def validate_bandwidth(self, value):
        return _positive_entries(value, 'bandwidth')


class PolicySerializer(StrictFieldsMixin, serializers.Serializer):
    covariance = serializers.ListField(child=serializers.FloatField(), min_length=1)

    def validate_covariance(self, value):
        return _positive_entries(value, 'covariance')


class ScheduleSerializer(StrictFieldsMixin, serializers.Serializer):
    num_iterations = serializers.IntegerField(min_value=0)
    checkpoint_interval = serializers.IntegerField(min_value=1, required=False)
    log_interval = serializers.IntegerField(min_value=1, required=False)

    def validate(self, attrs):
        attrs.setdefault('checkpoint_interval', engine_setting('CHECKPOINT_INTERVAL', 500))
        attrs.setdefault('log_interval', engine_setting('LOG_INTERVAL', 1))
        return attrs


class DiagnosticsSerializer(StrictFieldsMixin, serializers.Serializer):
    enabled = serializers.BooleanField(default=True)
    n_episodes = serializers.IntegerField(min_value=1, default=100)
    horizon = serializers.IntegerField(min_value=0, default=100)
    gradient_samples = serializers.IntegerField(min_value=1, default=200)
    bootstrap_resamples = serializers.IntegerField(min_value=1, default=1000)
    alignment = serializers.BooleanField(default=True)
    trace_steps = serializers.IntegerField(min_value=0, default=1000)
    reference_state = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True,
                                            default=None)


class ProblemConstantsSerializer(StrictFieldsMixin, serializers.Serializer):
    """Constants for `kpg bounds`; gamma, dims, Sigma and Sigma_H default to the run's own."""
    reward_bound = serializers.FloatField()
    rho_lower = serializers.FloatField()
    rho_upper = serializers.FloatField()
    epsilon = serializers.FloatField()
    reward_lipschitz_state = serializers.FloatField(min_value=0.0, default=1.0)
    reward_lipschitz_action = serializers.FloatField(min_value=0.0, default=1.0)
    transition_lipschitz = serializers.FloatField(min_value=0.0, default=1.0)
    transition_lipschitz_state = serializers.FloatField(min_value=0.0, default=1.0)
    transition_lipschitz_action = serializers.FloatField(min_value=0.0, default=1.0)
    state_space_measure = serializers.FloatField(default=1.0)
    h_norm = serializers.FloatField(min_value=0.0, default=0.0)
    gamma = serializers.FloatField(required=False)
    action_dim = serializers.IntegerField(min_value=1, required=False)
    state_dim = serializers.IntegerField(min_value=1, required=False)
    policy_covariance = serializers.ListField(child=serializers.FloatField(), required=False)
    kernel_bandwidth = serializers.ListField(child=serializers.FloatField(), required=False)
    gamma_factored = serializers.BooleanField(default=False)

    def validate(self, attrs):
        for name in ('reward_bound', 'epsilon', 'state_space_measure'):
            if attrs[name] <= 0:
                raise serializers.ValidationError({name: [f"{name} must be > 0."]})
        if not 0 < attrs['rho_lower'] <= attrs['rho_upper']:
            raise serializers.ValidationError({'rho_lower': ["Need 0 < rho_lower <= rho_upper."]})
        return attrs


class ExperimentConfigSerializer(StrictFieldsMixin, serializers.Serializer):
    environment = EnvironmentSerializer()
    trainer = TrainerSerializer()
    kernel = KernelSerializer()
    policy = PolicySerializer()
    schedule = ScheduleSerializer()
    diagnostics = DiagnosticsSerializer(required=False)
    bounds = ProblemConstantsSerializer(required=False)
    output_dir = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        try:
            env = make_environment(attrs['environment']['name'], attrs['environment']['params'])
        except (PolicyEngineError, TypeError) as e:
            raise serializers.ValidationError({'environment': [f"Invalid environment params: {e}"]})

        if len(attrs['kernel']['bandwidth']) != env.state_dim:
            raise serializers.ValidationError({'kernel': [
                f"bandwidth needs {env.state_dim} entries for {env.name}, got {len(attrs['kernel']['bandwidth'])}."
            ]})
        if len(attrs['policy']['covariance']) != env.action_dim:
            raise serializers.ValidationError({'policy': [
                f"covariance needs {env.action_dim} entries for {env.name}, got {len(attrs['policy']['covariance'])}."
            ]})

        if 'diagnostics' not in attrs:
            defaults = DiagnosticsSerializer(data={})
            defaults.is_valid(raise_exception=True)
            attrs['diagnostics'] = dict(defaults.validated_data)
        reference = attrs['diagnostics'].get('reference_state')
        if reference is not None and len(reference) != env.state_dim:
            raise serializers.ValidationError({'diagnostics': [
                f"reference_state needs {env.state_dim} entries, got {len(reference)}."
            ]})

        if 'bounds' in attrs:
            constants = attrs['bounds']
            constants.setdefault('gamma', attrs['trainer']['gamma'])
            constants.setdefault('action_dim', env.action_dim)
            constants.setdefault('state_dim', env.state_dim)
            constants.setdefault('policy_covariance', list(attrs['policy']['covariance']))
            constants.setdefault('kernel_bandwidth', list(attrs['kernel']['bandwidth']))
        return attrs


class FunctionExpansionSerializer(StrictFieldsMixin, serializers.Serializer):
    """JSON form of a policy snapshot: kernel spec plus centers and weights."""
    state_dim = serializers.IntegerField(min_value=1)
    action_dim = serializers.IntegerField(min_value=1)
    bandwidth = serializers.ListField(child=serializers.FloatField(), min_length=1)
    centers = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    weights = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))
    iteration = serializers.IntegerField(min_value=0, required=False)
    covariance = serializers.ListField(child=serializers.FloatField(), required=False)

    def to_representation(self, instance):
        if isinstance(instance, FunctionExpansion):
            return instance.to_dict()
        return super().to_representation(instance)

    def validate(self, attrs):
        if len(attrs['bandwidth']) != attrs['state_dim']:
            raise serializers.ValidationError({'bandwidth': ["Length must equal state_dim."]})
        if len(attrs['centers']) != len(attrs['weights']):
            raise serializers.ValidationError({'weights': ["Need one weight row per center."]})
        if any(len(c) != attrs['state_dim'] for c in attrs['centers']):
            raise serializers.ValidationError({'centers': ["Every center needs state_dim entries."]})
        if any(len(w) != attrs['action_dim'] for w in attrs['weights']):
            raise serializers.ValidationError({'weights': ["Every weight needs action_dim entries."]})
        _positive_entries(attrs['bandwidth'], 'bandwidth')
        return attrs

    def create(self, validated_data):
        spec = KernelSpec(validated_data['state_dim'], validated_data['action_dim'],
                          tuple(validated_data['bandwidth']))
        return FunctionExpansion(spec, validated_data['centers'], validated_data['weights'])
