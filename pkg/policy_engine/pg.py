"""
Stochastic policy gradient in the RKHS.

estimate_q and stochastic_gradient draw geometric horizons so that discounting
becomes random truncation and every estimate is unbiased; train_step / train
run the fully online ascent, where each iteration starts where the previous
rollout ended and the policy is pruned by KOMP with budget eps_K = K * eta.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple
import logging
import math
import time

import numpy as np

from .exceptions import InvalidArgumentError, ModelOrderGuardExceeded
from .komp import komp
from .mdp import (
    Environment,
    GaussianPolicy,
    draw_noise,
    mirror_action,
    sample_action,
    score_factor,
)
from .rkhs import FunctionExpansion, KernelSpec, append
from .utils import engine_setting

logger = logging.getLogger(__name__)

PLAIN = 'plain'
SYMMETRIC_Q = 'symmetric_q'
ANTITHETIC_NOISE = 'antithetic_noise'
VARIANCE_MODES = (PLAIN, SYMMETRIC_Q, ANTITHETIC_NOISE)


@dataclass(frozen=True)
class TrainerConfig:
    """
    Hyper-parameters of the online trainer.

    Args:
        gamma: discount factor in (0, 1)
        eta: constant step size > 0
        compression_K: K >= 0, the KOMP budget is eps_K = K * eta
        variance_mode: "plain", "symmetric_q" or "antithetic_noise"
        max_model_order_guard: fail when the pruned model order exceeds this
        seed: seed of the run's random generator
        legacy_q_scaling: multiply Q estimates by (1 - gamma) (biased, for replication)
        batch_size: stochastic gradients averaged per update
        restart_episodes: restart every iteration from the initial state (episodic baseline)
        restart_when_absorbed: restart from the initial state once s_k is absorbing
        log_interval: keep the system state in the step record every N iterations
    """
    gamma: float
    eta: float
    compression_K: float = 0.0
    variance_mode: str = PLAIN
    max_model_order_guard: Optional[int] = None
    seed: int = 0
    legacy_q_scaling: bool = False
    batch_size: int = 1
    restart_episodes: bool = False
    restart_when_absorbed: bool = False
    log_interval: int = 1

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise InvalidArgumentError(f"gamma must be in (0, 1), got {self.gamma}")
        if not self.eta > 0:
            raise InvalidArgumentError(f"eta must be > 0, got {self.eta}")
        if self.compression_K < 0:
            raise InvalidArgumentError(f"compression_K must be >= 0, got {self.compression_K}")
        if self.variance_mode not in VARIANCE_MODES:
            raise InvalidArgumentError(
                f"variance_mode must be one of {VARIANCE_MODES}, got {self.variance_mode}"
            )
        if self.max_model_order_guard is not None and self.max_model_order_guard < 1:
            raise InvalidArgumentError("max_model_order_guard must be a positive integer")
        if self.batch_size < 1 or self.log_interval < 1:
            raise InvalidArgumentError("batch_size and log_interval must be positive integers")

    @property
    def eps_K(self) -> float:
        return self.compression_K * self.eta


@dataclass(frozen=True, eq=False)
class QEstimate:
    q_hat: float
    end_state: np.ndarray
    horizon: int
    env_steps: int
    resampled: int = 0


@dataclass(frozen=True, eq=False)
class GradientSample:
    """
    One stochastic gradient kappa(center, .) weight, in step-size-free form:
    weight = Q_hat * Sigma^{-1}(a_T - h(s_T)) / (1 - gamma).
    """
    center: np.ndarray
    weight: np.ndarray
    q_estimate: float
    horizon_T: int
    horizon_TQ: int
    end_state: np.ndarray
    root_noise: np.ndarray
    q_mirror: Optional[float] = None
    horizon_TQ_mirror: Optional[int] = None
    env_steps: int = 0
    resampled: int = 0

    @property
    def weight_norm(self) -> float:
        # ||kappa(c, .) w||_H = ||w|| because kappa(c, c) = 1
        return float(np.linalg.norm(self.weight))

    def as_expansion(self, spec: KernelSpec, scale: float = 1.0) -> FunctionExpansion:
        return FunctionExpansion(spec, self.center[None, :], scale * self.weight[None, :])


@dataclass(frozen=True, eq=False)
class TrainerState:
    policy: GaussianPolicy
    system_state: np.ndarray
    iteration: int = 0
    env_steps: int = 0
    gradient_calls: int = 0
    last_root_noise: Optional[np.ndarray] = None
    resampled_horizons: int = 0
    gram_inverse: Optional[np.ndarray] = None

    @property
    def model_order(self) -> int:
        return self.policy.mean.model_order

    @classmethod
    def initial(cls, policy: GaussianPolicy, system_state) -> "TrainerState":
        return cls(policy=policy, system_state=np.asarray(system_state, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Per-iteration log line; CSV_HEADER is the steps.csv schema."""
    k: int
    model_order: int
    horizon_T: int
    horizon_TQ: int
    q_hat: float
    wtilde_norm: float
    komp_residual: float
    eta: float
    eps_K: float
    removed_count: int = 0
    system_state: Optional[np.ndarray] = None
    samples: Tuple[GradientSample, ...] = field(default_factory=tuple)

    CSV_HEADER = ('k', 'M_k', 'T', 'T_Q', 'q_hat', 'wtilde_norm', 'komp_residual', 'eta', 'eps_K')

    def as_row(self) -> tuple:
        return (self.k, self.model_order, self.horizon_T, self.horizon_TQ, self.q_hat,
                self.wtilde_norm, self.komp_residual, self.eta, self.eps_K)


@dataclass(frozen=True, eq=False)
class TrainingHistory:
    records: List[StepRecord]
    final_state: TrainerState
    wall_time: float = 0.0

    def __len__(self):
        return len(self.records)


def horizon_cap(gamma: float) -> int:
    """T_max = ceil(factor / (1 - gamma)); longer draws have probability < e^-factor."""
    factor = engine_setting('HORIZON_CAP_FACTOR', 50)
    return int(math.ceil(factor / (1.0 - gamma)))


def sample_horizon(gamma: float, rng: np.random.Generator) -> Tuple[int, int]:
    """
    Draw T with P(T = t) = (1 - gamma) gamma^t by inverse CDF.

    Returns:
        (T, resampled): the horizon and how many draws beyond T_max were discarded
    """
    if not 0 < gamma < 1:
        raise InvalidArgumentError(f"gamma must be in (0, 1), got {gamma}")
    log_gamma = math.log(gamma)
    t_max = horizon_cap(gamma)
    resampled = 0
    while True:
        u = 1.0 - rng.random()  # uniform on (0, 1]
        horizon = int(math.floor(math.log(u) / log_gamma))
        if horizon <= t_max:
            if resampled:
                logger.warning(f"Resampled {resampled} horizon draws beyond T_max={t_max}")
            return horizon, resampled
        resampled += 1


def estimate_q(env: Environment, policy: GaussianPolicy, s, a, gamma: float,
               rng: np.random.Generator, legacy_q_scaling: bool = False) -> QEstimate:
    """
    Unbiased Q(s, a; h): the undiscounted sum of T_Q + 1 rewards from (s, a),
    T_Q ~ geom(gamma), continuing under the policy.
    """
    horizon, resampled = sample_horizon(gamma, rng)
    state, total = env.step(s, a, rng)
    for _ in range(horizon):
        action = sample_action(policy, state, rng)
        state, reward = env.step(state, action, rng)
        total += reward
    if legacy_q_scaling:
        total *= (1.0 - gamma)
    return QEstimate(float(total), np.asarray(state, dtype=float), horizon, horizon + 1, resampled)


def stochastic_gradient(env: Environment, policy: GaussianPolicy, s_start, gamma: float,
                        variance_mode: str = PLAIN, rng: Optional[np.random.Generator] = None,
                        root_noise=None, legacy_q_scaling: bool = False) -> GradientSample:
    """
    Unbiased estimate of grad_h U_{s_start}(h) as a single kernel element.

    Rolls T ~ geom(gamma) steps from s_start, then estimates Q at (s_T, a_T).
    In symmetric_q mode a second rollout restarts from s_T with the mirrored
    action and the weight uses the difference of the two estimates. root_noise
    fixes the exploration noise of the first action at s_start.
    """
    if variance_mode not in VARIANCE_MODES:
        raise InvalidArgumentError(f"unknown variance mode {variance_mode}")
    if rng is None:
        raise InvalidArgumentError("stochastic_gradient needs an rng")

    horizon, resampled = sample_horizon(gamma, rng)
    state = np.asarray(s_start, dtype=float).reshape(-1)
    noise = draw_noise(policy, rng) if root_noise is None else np.asarray(root_noise, dtype=float)
    action = sample_action(policy, state, noise=noise)
    for _ in range(horizon):
        state, _ = env.step(state, action, rng)
        action = sample_action(policy, state, rng)

    score = score_factor(policy, state, action)
    q = estimate_q(env, policy, state, action, gamma, rng, legacy_q_scaling)
    env_steps = horizon + q.env_steps
    resampled += q.resampled

    if variance_mode == SYMMETRIC_Q:
        # Semi-online: the simulator is reset to s_T for the mirrored rollout
        mirrored = estimate_q(env, policy, state, mirror_action(policy, state, action),
                              gamma, rng, legacy_q_scaling)
        weight = (q.q_hat - mirrored.q_hat) * score / (2.0 * (1.0 - gamma))
        return GradientSample(
            center=state, weight=weight, q_estimate=q.q_hat, horizon_T=horizon,
            horizon_TQ=q.horizon, end_state=mirrored.end_state, root_noise=noise,
            q_mirror=mirrored.q_hat, horizon_TQ_mirror=mirrored.horizon,
            env_steps=env_steps + mirrored.env_steps, resampled=resampled + mirrored.resampled,
        )

    weight = q.q_hat * score / (1.0 - gamma)
    return GradientSample(
        center=state, weight=weight, q_estimate=q.q_hat, horizon_T=horizon,
        horizon_TQ=q.horizon, end_state=q.end_state, root_noise=noise,
        env_steps=env_steps, resampled=resampled,
    )


def _root_noise_for(call_index: int, previous, variance_mode: str):
    """Antithetic pairing: odd calls reuse the negated noise of the previous call."""
    if variance_mode == ANTITHETIC_NOISE and previous is not None and call_index % 2 == 1:
        return -np.asarray(previous)
    return None


def train_step(state: TrainerState, env: Environment, config: TrainerConfig,
               rng: np.random.Generator) -> Tuple[TrainerState, StepRecord]:
    """
    One online iteration: gradient at s_k, ascent step, KOMP with eps_K = K * eta.

    Raises:
        ModelOrderGuardExceeded: when the pruned model order passes the guard
    """
    policy = state.policy
    spec = policy.mean.spec
    start = state.system_state
    if config.restart_episodes or (config.restart_when_absorbed and env.is_absorbing(start)):
        start = env.initial_state(rng)

    samples: List[GradientSample] = []
    previous_noise = state.last_root_noise
    calls = state.gradient_calls
    s = start
    for _ in range(config.batch_size):
        root_noise = _root_noise_for(calls, previous_noise, config.variance_mode)
        sample = stochastic_gradient(env, policy, s, config.gamma, config.variance_mode, rng,
                                     root_noise=root_noise, legacy_q_scaling=config.legacy_q_scaling)
        samples.append(sample)
        previous_noise = sample.root_noise
        calls += 1
        if not config.restart_episodes:
            s = sample.end_state
            if config.restart_when_absorbed and env.is_absorbing(s):
                s = env.initial_state(rng)

    scale = config.eta / config.batch_size
    h_tilde = policy.mean
    for sample in samples:
        h_tilde = append(h_tilde, sample.center, scale * sample.weight)
    if config.batch_size == 1:
        wtilde_norm = samples[0].weight_norm
    else:
        batch = FunctionExpansion(spec, [x.center for x in samples], [x.weight for x in samples])
        wtilde_norm = batch.rkhs_norm() / config.batch_size

    # Fresh factorization every KOMP_REFRESH_INTERVAL iterations
    refresh = engine_setting('KOMP_REFRESH_INTERVAL', 100)
    prefix_inverse = state.gram_inverse if state.iteration % refresh else None
    report = komp(h_tilde, config.eps_K, prefix_inverse=prefix_inverse)
    k = state.iteration + 1
    if config.max_model_order_guard is not None and report.pruned.model_order > config.max_model_order_guard:
        logger.error(f"Model order {report.pruned.model_order} exceeded guard at iteration {k}")
        raise ModelOrderGuardExceeded(k, report.pruned.model_order, config.max_model_order_guard,
                                      config.eps_K)

    new_state = TrainerState(
        policy=policy.with_mean(report.pruned),
        system_state=np.asarray(samples[-1].end_state, dtype=float),
        iteration=k,
        env_steps=state.env_steps + sum(x.env_steps for x in samples),
        gradient_calls=calls,
        last_root_noise=previous_noise,
        resampled_horizons=state.resampled_horizons + sum(x.resampled for x in samples),
        gram_inverse=report.gram_inverse,
    )
    record = StepRecord(
        k=k,
        model_order=report.pruned.model_order,
        horizon_T=sum(x.horizon_T for x in samples),
        horizon_TQ=sum(x.horizon_TQ for x in samples),
        q_hat=float(np.mean([x.q_estimate for x in samples])),
        wtilde_norm=wtilde_norm,
        komp_residual=report.residual_norm,
        eta=config.eta,
        eps_K=config.eps_K,
        removed_count=report.removed_count,
        system_state=new_state.system_state if k % config.log_interval == 0 else None,
        samples=tuple(samples),
    )
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"k={k} M_k={record.model_order} T={record.horizon_T} "
                     f"T_Q={record.horizon_TQ} q_hat={record.q_hat:.4g}")
    return new_state, record


def initial_trainer_state(env: Environment, kernel: KernelSpec, covariance,
                          rng: np.random.Generator, initial_state=None) -> TrainerState:
    """h_0 = 0 and s_0 drawn from the environment (or given)."""
    if kernel.state_dim != env.state_dim or kernel.action_dim != env.action_dim:
        raise InvalidArgumentError(
            f"kernel dims ({kernel.state_dim}, {kernel.action_dim}) do not match the environment "
            f"({env.state_dim}, {env.action_dim})"
        )
    policy = GaussianPolicy(FunctionExpansion.zero(kernel), covariance)
    s0 = env.initial_state(rng) if initial_state is None else initial_state
    return TrainerState.initial(policy, s0)


def train(env: Environment, config: TrainerConfig, num_iterations: int, kernel: KernelSpec,
          covariance, initial_state=None,
          callback: Optional[Callable[[TrainerState, StepRecord], None]] = None) -> TrainingHistory:
    """
    Online stochastic policy gradient ascent for num_iterations iterations.

    Deterministic given config.seed. The optional callback sees every
    (state, record) pair, which is how checkpoints are taken.
    """
    if num_iterations < 0:
        raise InvalidArgumentError(f"num_iterations must be >= 0, got {num_iterations}")
    rng = np.random.default_rng(config.seed)
    state = initial_trainer_state(env, kernel, covariance, rng, initial_state)
    logger.info(f"Training on {env.name} for {num_iterations} iterations "
                f"(gamma={config.gamma}, eta={config.eta}, eps_K={config.eps_K:g}, "
                f"mode={config.variance_mode}, seed={config.seed})")

    started = time.perf_counter()
    records: List[StepRecord] = []
    for _ in range(num_iterations):
        state, record = train_step(state, env, config, rng)
        records.append(record)
        if callback is not None:
            callback(state, record)

    wall_time = time.perf_counter() - started
    logger.info(f"Finished {state.iteration} iterations in {wall_time:.1f}s, model order {state.model_order}, "
                f"{state.env_steps} environment steps")
    return TrainingHistory(records, state, wall_time)
