"""
Bodies of the `kpg` subcommands: config resolution, training runs with
checkpoint diagnostics, frozen-policy evaluation, the bounds table and the
figure datasets replayed from stored snapshots.
"""
from typing import Any, Dict, List, Optional
import glob
import json
import logging
import os
import platform

import django
import numpy as np
import rest_framework
import scipy
from django.db import DatabaseError
from rest_framework import serializers

from core.models import ExperimentRun, RunCheckpoint

from .bounds import FeasibilityReport, ProblemConstants, feasibility_report
from .diagnostics import (
    alignment_confidence_interval,
    mc_gradient,
    mc_value,
    model_order_summary,
    policy_rollout_trace,
    trace_header,
    trace_rows,
)
from .envs import SurveillanceEnv, environment_factory, make_environment
from .mdp import Environment, GaussianPolicy
from .pg import StepRecord, TrainerConfig, TrainerState, train
from .rkhs import FunctionExpansion, KernelSpec
from .serializers import ExperimentConfigSerializer, FunctionExpansionSerializer
from .utils import config_hash, engine_setting, format_cell, load_json, read_csv, write_csv, write_json

logger = logging.getLogger(__name__)

# Stream ids mixed into SeedSequence([seed, k, stream]) for diagnostics
VALUE_STREAM, GRADIENT_S0_STREAM, GRADIENT_SK_STREAM, BOOTSTRAP_STREAM = 0, 1, 2, 3
EVAL_STREAM, REPLAY_STREAM = 4, 5


def load_experiment_config(path: str, seed: Optional[int] = None,
                           iterations: Optional[int] = None) -> Dict[str, Any]:
    """
    Load, override and validate an experiment config.

    A run manifest is accepted too; its `config` section is used.

    Raises:
        FileNotFoundError: the path does not exist
        rest_framework.serializers.ValidationError: invalid config
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = load_json(path)
    except json.JSONDecodeError as e:
        raise serializers.ValidationError({'config': [f"{path} is not valid JSON: {e}"]})
    if isinstance(data, dict) and 'config' in data and 'config_hash' in data:
        data = data['config']
    if not isinstance(data, dict):
        raise serializers.ValidationError({'config': ["Top level must be a JSON object."]})

    if seed is not None:
        data.setdefault('trainer', {})['seed'] = seed
    if iterations is not None:
        data.setdefault('schedule', {})['num_iterations'] = iterations

    serializer = ExperimentConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    # Plain JSON types so the hash matches what the manifest stores
    return json.loads(json.dumps(serializer.validated_data))


def build_environment(cfg: Dict[str, Any]) -> Environment:
    return make_environment(cfg['environment']['name'], cfg['environment']['params'])


def build_kernel(cfg: Dict[str, Any], env: Environment) -> KernelSpec:
    return KernelSpec(env.state_dim, env.action_dim, tuple(cfg['kernel']['bandwidth']))


def build_trainer_config(cfg: Dict[str, Any]) -> TrainerConfig:
    trainer = cfg['trainer']
    return TrainerConfig(
        gamma=trainer['gamma'],
        eta=trainer['eta'],
        compression_K=trainer['compression_K'],
        variance_mode=trainer['variance_mode'],
        max_model_order_guard=trainer.get('max_model_order_guard'),
        seed=trainer['seed'],
        legacy_q_scaling=trainer['legacy_q_scaling'],
        batch_size=trainer['batch_size'],
        restart_episodes=trainer['restart_episodes'],
        restart_when_absorbed=trainer['restart_when_absorbed'],
        log_interval=cfg['schedule']['log_interval'],
    )


def build_problem_constants(cfg: Dict[str, Any]) -> ProblemConstants:
    if not cfg.get('bounds'):
        raise serializers.ValidationError({'bounds': ["A bounds section is required for this command."]})
    constants = {k: v for k, v in cfg['bounds'].items() if k != 'gamma_factored'}
    return ProblemConstants(**constants)


def reference_state(cfg: Dict[str, Any], env: Environment) -> np.ndarray:
    configured = cfg['diagnostics'].get('reference_state')
    if configured is not None:
        return np.asarray(configured, dtype=float)
    return env.reference_state()


def resolve_output_dir(cfg: Dict[str, Any], out: Optional[str], command: str) -> str:
    if out:
        return out
    if cfg.get('output_dir'):
        return cfg['output_dir']
    runs_dir = str(engine_setting('RUNS_DIR', 'runs'))
    return os.path.join(runs_dir, f"{command}-{cfg['environment']['name']}-{config_hash(cfg)[:12]}")


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def versions() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'django': django.get_version(),
        'djangorestframework': rest_framework.VERSION,
    }


def write_manifest(out_dir: str, cfg: Dict[str, Any], command: str, outputs: List[str], **extra) -> str:
    manifest = {
        'command': command,
        'config': cfg,
        'config_hash': config_hash(cfg),
        'seed': cfg['trainer']['seed'],
        'versions': versions(),
        'outputs': sorted(outputs),
    }
    manifest.update(extra)
    path = os.path.join(out_dir, 'manifest.json')
    write_json(path, manifest)
    return path


def snapshot_path(out_dir: str, k: int) -> str:
    return os.path.join(out_dir, 'snapshots', f"policy_{k:06d}.json")


def write_snapshot(path: str, policy: GaussianPolicy, k: int):
    data = FunctionExpansionSerializer(policy.mean).data
    data = dict(data, iteration=k, covariance=policy.covariance.tolist())
    write_json(path, data)


def load_snapshot(path: str) -> Dict[str, Any]:
    """
    Read a policy snapshot.

    Returns:
        dict with the mean `expansion`, `iteration` and `covariance` (or None)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Policy snapshot not found: {path}")
    serializer = FunctionExpansionSerializer(data=load_json(path))
    serializer.is_valid(raise_exception=True)
    return {
        'expansion': serializer.save(),
        'iteration': serializer.validated_data.get('iteration'),
        'covariance': serializer.validated_data.get('covariance'),
    }


class RunRecorder:
    """
    Best-effort mirror of a run in the ExperimentRun / RunCheckpoint tables.

    The CSV and JSON outputs are authoritative; database failures are logged
    and never fail the run.
    """

    def __init__(self, command: str, cfg: Dict[str, Any], out_dir: str):
        self.run = None
        if not engine_setting('RECORD_RUNS', True):
            return
        try:
            self.run = ExperimentRun.start(
                command=command,
                environment=cfg['environment']['name'],
                config_hash=config_hash(cfg),
                seed=cfg['trainer']['seed'],
                output_dir=out_dir,
                iterations=cfg['schedule']['num_iterations'],
            )
        except DatabaseError as e:
            logger.warning(f"Run registry unavailable, continuing without it: {e}")

    def checkpoint(self, **fields):
        if self.run is None:
            return
        try:
            RunCheckpoint.objects.create(run=self.run, **fields)
        except DatabaseError as e:
            logger.warning(f"Could not record checkpoint {fields.get('iteration')}: {e}")

    def finish(self, status: str, **summary):
        if self.run is None:
            return
        try:
            self.run.finish(status, **summary)
        except DatabaseError as e:
            logger.warning(f"Could not record the end of run {self.run.pk}: {e}")


class CheckpointDiagnostics:
    """Snapshot plus value and alignment estimates every checkpoint_interval iterations."""

    def __init__(self, cfg: Dict[str, Any], env: Environment, out_dir: str, recorder: RunRecorder):
        self.cfg = cfg
        self.env_factory = environment_factory(cfg['environment']['name'], cfg['environment']['params'])
        self.reference = reference_state(cfg, env)
        self.out_dir = out_dir
        self.recorder = recorder
        self.seed = cfg['trainer']['seed']
        self.gamma = cfg['trainer']['gamma']
        self.options = cfg['diagnostics']
        self.value_rows = []
        self.alignment_rows = []

    def __call__(self, k: int, policy: GaussianPolicy, system_state: np.ndarray):
        path = snapshot_path(self.out_dir, k)
        write_snapshot(path, policy, k)
        value = alignment = None
        if self.options['enabled']:
            value = mc_value(self.env_factory, policy, self.reference, self.gamma,
                             self.options['n_episodes'], self.options['horizon'],
                             _rng(self.seed, k, VALUE_STREAM), snapshot_id=k)
            self.value_rows.append((k, value.mean, value.stderr))
            if self.options['alignment']:
                alignment = self.alignment(k, policy, system_state)
                self.alignment_rows.append((k,) + alignment)
        logger.info(f"Checkpoint k={k}: M_k={policy.mean.model_order}"
                    + (f", U_hat={value.mean:.6g} +- {value.stderr:.3g}" if value else ""))
        self.recorder.checkpoint(
            iteration=k,
            model_order=policy.mean.model_order,
            value_mean=value.mean if value else None,
            value_stderr=value.stderr if value else None,
            alignment=alignment[0] if alignment else None,
            snapshot_path=path,
        )

    def alignment(self, k: int, policy: GaussianPolicy, system_state: np.ndarray):
        mode = self.cfg['trainer']['variance_mode']
        n = self.options['gradient_samples']
        at_reference = mc_gradient(self.env_factory, policy, self.reference, self.gamma, n, mode,
                                   _rng(self.seed, k, GRADIENT_S0_STREAM))
        at_state = mc_gradient(self.env_factory, policy, system_state, self.gamma, n, mode,
                               _rng(self.seed, k, GRADIENT_SK_STREAM))
        return alignment_confidence_interval(at_reference, at_state, _rng(self.seed, k, BOOTSTRAP_STREAM),
                                             num_resamples=self.options['bootstrap_resamples'])


def run_training(cfg: Dict[str, Any], out_dir: str) -> Dict[str, Any]:
    """
    Online training run writing steps.csv, model_order.csv, online_trace.csv,
    value_curve.csv, alignment.csv, policy snapshots and manifest.json.
    """
    env = build_environment(cfg)
    kernel = build_kernel(cfg, env)
    config = build_trainer_config(cfg)
    covariance = cfg['policy']['covariance']
    num_iterations = cfg['schedule']['num_iterations']
    interval = cfg['schedule']['checkpoint_interval']
    os.makedirs(out_dir, exist_ok=True)

    recorder = RunRecorder('train', cfg, out_dir)
    checkpoints = CheckpointDiagnostics(cfg, env, out_dir, recorder)
    records: List[StepRecord] = []

    s0 = env.initial_state(np.random.default_rng(config.seed))
    checkpoints(0, GaussianPolicy(FunctionExpansion.zero(kernel), covariance), s0)

    def on_step(state: TrainerState, record: StepRecord):
        records.append(record)
        if state.iteration % interval == 0 or state.iteration == num_iterations:
            checkpoints(state.iteration, state.policy, state.system_state)

    status = ExperimentRun.STATUS_FAILED
    final_state = None
    wall_time = None
    try:
        history = train(env, config, num_iterations, kernel, covariance, callback=on_step)
        final_state = history.final_state
        wall_time = history.wall_time
        status = ExperimentRun.STATUS_COMPLETED
    finally:
        outputs = _write_training_tables(out_dir, env, records, checkpoints)
        summary = model_order_summary([r.model_order for r in records])
        extra = {'iterations_completed': len(records), 'model_order': summary}
        if final_state is not None:
            extra.update(env_steps=final_state.env_steps, resampled_horizons=final_state.resampled_horizons,
                         training_seconds=round(wall_time, 3))
        outputs.append(write_manifest(out_dir, cfg, 'train', outputs, **extra))
        recorder.finish(status, final_model_order=records[-1].model_order if records else 0, **extra)

    logger.info(f"Training run written to {out_dir}")
    return dict(extra, output_dir=out_dir, final_model_order=final_state.model_order)


def _write_training_tables(out_dir: str, env: Environment, records: List[StepRecord],
                           checkpoints: CheckpointDiagnostics) -> List[str]:
    paths = {name: os.path.join(out_dir, name) for name in (
        'steps.csv', 'model_order.csv', 'online_trace.csv', 'value_curve.csv', 'alignment.csv')}
    write_csv(paths['steps.csv'], StepRecord.CSV_HEADER, (r.as_row() for r in records))
    write_csv(paths['model_order.csv'], ('k', 'M_k'), ((r.k, r.model_order) for r in records))
    write_csv(paths['online_trace.csv'], ('k',) + env.labels(),
              ((r.k,) + tuple(float(x) for x in r.system_state) for r in records if r.system_state is not None))
    write_csv(paths['value_curve.csv'], ('k', 'mean', 'stderr'), checkpoints.value_rows)
    write_csv(paths['alignment.csv'], ('k', 'inner_product', 'ci_lo', 'ci_hi'), checkpoints.alignment_rows)
    return list(paths.values())


def run_evaluation(cfg: Dict[str, Any], policy_path: str, out_dir: str,
                   state_override: Optional[List[float]] = None) -> Dict[str, Any]:
    """Episodic evaluation of a frozen snapshot: value estimate plus one rollout trace."""
    env = build_environment(cfg)
    snapshot = load_snapshot(policy_path)
    mean = snapshot['expansion']
    if mean.spec != build_kernel(cfg, env):
        logger.warning(f"Snapshot kernel {mean.spec} differs from the configured kernel; using the snapshot's")
    policy = GaussianPolicy(mean, snapshot['covariance'] or cfg['policy']['covariance'])
    state = np.asarray(state_override, dtype=float) if state_override is not None else reference_state(cfg, env)
    options = cfg['diagnostics']
    seed = cfg['trainer']['seed']
    k = snapshot['iteration'] or 0

    value = mc_value(env, policy, state, cfg['trainer']['gamma'], options['n_episodes'],
                     options['horizon'], _rng(seed, k, EVAL_STREAM), snapshot_id=k)
    trace = policy_rollout_trace(env, policy, state, options['trace_steps'], _rng(seed, k, EVAL_STREAM, 1))

    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, 'trace.csv')
    write_csv(trace_path, trace_header(env), trace_rows(trace))
    result = {
        'snapshot': os.path.abspath(policy_path),
        'iteration': k,
        'state': state.tolist(),
        'mean': value.mean,
        'stderr': value.stderr,
        'n_episodes': value.n_episodes,
        'horizon': value.horizon,
        'gamma': value.gamma,
        'model_order': mean.model_order,
    }
    value_path = os.path.join(out_dir, 'evaluation.json')
    write_json(value_path, result)
    write_manifest(out_dir, cfg, 'eval', [trace_path, value_path], snapshot=result['snapshot'])
    logger.info(f"Evaluated snapshot k={k}: U_hat={value.mean:.6g} +- {value.stderr:.3g}")
    return result


def run_bounds(cfg: Dict[str, Any]) -> FeasibilityReport:
    pc = build_problem_constants(cfg)
    return feasibility_report(pc, cfg['trainer']['compression_K'], cfg['trainer']['eta'],
                              gamma_factored=cfg['bounds'].get('gamma_factored', False))


def format_bounds_table(report: FeasibilityReport) -> str:
    rows = report.rows()
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {format_cell(value)}" for name, value in rows]
    lines.append(f"{'verdict'.ljust(width)}  {'feasible' if report.feasible else 'infeasible'}")
    lines.extend(report.messages)
    return '\n'.join(lines)


def _surveillance_stage(env: SurveillanceEnv, s: np.ndarray) -> str:
    x, battery, delta = s[0:2], s[4], s[5]
    if env.at_charger(x):
        return 'charging'
    if env.target_mode(battery, delta) == 'charger':
        return 'to_charger'
    if np.linalg.norm(x - env.goal) <= env.params.charger_radius:
        return 'at_goal'
    return 'to_goal'


def replay_figures(run_dir: str) -> List[str]:
    """
    Re-derive the figure datasets of a training run from its snapshots.

    Writes under <run_dir>/figures: trajectory.csv, value_curve.csv and
    snapshot_trajectories.csv for every environment; stages.csv,
    step_response.csv and hysteresis.csv for the surveillance task.
    """
    manifest_path = os.path.join(run_dir, 'manifest.json')
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"Run manifest not found: {manifest_path}")
    cfg = load_experiment_config(manifest_path)
    env = build_environment(cfg)
    snapshots = sorted(glob.glob(os.path.join(run_dir, 'snapshots', 'policy_*.json')))
    if not snapshots:
        raise FileNotFoundError(f"No policy snapshots under {os.path.join(run_dir, 'snapshots')}")

    seed = cfg['trainer']['seed']
    options = cfg['diagnostics']
    figures = os.path.join(run_dir, 'figures')
    written = []

    def policy_of(snapshot):
        return GaussianPolicy(snapshot['expansion'], snapshot['covariance'] or cfg['policy']['covariance'])

    final = load_snapshot(snapshots[-1])
    k_final = final['iteration'] or 0
    s0 = env.initial_state(np.random.default_rng(seed))
    trace = policy_rollout_trace(env, policy_of(final), s0, options['trace_steps'],
                                 _rng(seed, k_final, REPLAY_STREAM))
    path = os.path.join(figures, 'trajectory.csv')
    write_csv(path, trace_header(env), trace_rows(trace))
    written.append(path)

    if isinstance(env, SurveillanceEnv):
        states = [tr.s for tr in trace]
        path = os.path.join(figures, 'stages.csv')
        write_csv(path, ('t', 'stage', 'x1', 'x2', 'b'),
                  ((t, _surveillance_stage(env, s), s[0], s[1], s[4]) for t, s in enumerate(states)))
        written.append(path)
        path = os.path.join(figures, 'step_response.csv')
        write_csv(path, ('t', 'x2', 'target_x2', 'b'),
                  ((t, s[1], env.target(s[4], s[5])[1], s[4]) for t, s in enumerate(states)))
        written.append(path)
        path = os.path.join(figures, 'hysteresis.csv')
        write_csv(path, ('t', 'b', 'd', 'mode'),
                  ((t, s[4], s[5], env.target_mode(s[4], s[5])) for t, s in enumerate(states)))
        written.append(path)

    value_source = os.path.join(run_dir, 'value_curve.csv')
    path = os.path.join(figures, 'value_curve.csv')
    rows = read_csv(value_source) if os.path.exists(value_source) else []
    write_csv(path, ('k', 'mean', 'stderr'), ((r['k'], r['mean'], r['stderr']) for r in rows))
    written.append(path)

    trajectories = []
    for snapshot_file in snapshots:
        snapshot = load_snapshot(snapshot_file)
        k = snapshot['iteration'] or 0
        episode = policy_rollout_trace(env, policy_of(snapshot), s0, options['horizon'],
                                       _rng(seed, k, REPLAY_STREAM, 1))
        trajectories.extend((k,) + row for row in trace_rows(episode))
    path = os.path.join(figures, 'snapshot_trajectories.csv')
    write_csv(path, ('k',) + trace_header(env), trajectories)
    written.append(path)

    logger.info(f"Wrote {len(written)} figure datasets to {figures}")
    return written
