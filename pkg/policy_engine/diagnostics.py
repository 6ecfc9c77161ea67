"""
Monte Carlo diagnostics: episodic value estimates, averaged gradient
bundles, gradient alignment between conditioning states, and trajectory
analytics for the training traces.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .exceptions import InvalidArgumentError
from .mdp import Environment, GaussianPolicy, Transition, sample_action
from .pg import ANTITHETIC_NOISE, GradientSample, VARIANCE_MODES, stochastic_gradient
from .rkhs import FunctionExpansion, gram, inner_product, merge_duplicates

logger = logging.getLogger(__name__)

TRUNCATION_WARNING = 1e-3

EnvSource = Union[Environment, Callable[[], Environment]]


def _resolve_env(env_factory: EnvSource) -> Environment:
    if isinstance(env_factory, Environment):
        return env_factory
    return env_factory()


@dataclass(frozen=True, eq=False)
class ValueEstimate:
    mean: float
    stderr: float
    n_episodes: int
    horizon: int
    gamma: float
    state: np.ndarray
    snapshot_id: Optional[int] = None


@dataclass(frozen=True, eq=False)
class GradientEstimateBundle:
    """Average of N stochastic gradients conditioned at the same start state."""
    mean: FunctionExpansion
    n_samples: int
    state: np.ndarray
    samples: Tuple[GradientSample, ...] = ()

    @property
    def is_empty(self) -> bool:
        return self.n_samples == 0 or self.mean.model_order == 0


def mc_value(env_factory: EnvSource, policy: GaussianPolicy, s, gamma: float, N: int, T: int,
             rng: np.random.Generator, snapshot_id: Optional[int] = None) -> ValueEstimate:
    """
    Average of N discounted returns sum_{t=0}^{T} gamma^t r_t from s.

    Unbiased for the T-truncated value; the truncation bias is at most
    B_r gamma^{T+1} / (1 - gamma).
    """
    if N < 1:
        raise InvalidArgumentError(f"mc_value needs N >= 1 episodes, got {N}")
    if T < 0:
        raise InvalidArgumentError(f"T must be >= 0, got {T}")
    if gamma ** T > TRUNCATION_WARNING:
        logger.warning(f"gamma^T = {gamma ** T:.3g} exceeds {TRUNCATION_WARNING}; "
                       f"the truncated value may be biased")
    env = _resolve_env(env_factory)
    start = np.asarray(s, dtype=float).reshape(-1)
    discounts = gamma ** np.arange(T + 1)

    returns = np.empty(N)
    for i in range(N):
        state = start
        rewards = np.empty(T + 1)
        for t in range(T + 1):
            action = sample_action(policy, state, rng)
            state, rewards[t] = env.step(state, action, rng)
        returns[i] = float(discounts @ rewards)

    stderr = float(np.std(returns, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return ValueEstimate(float(np.mean(returns)), stderr, N, T, gamma, start, snapshot_id)


def mc_gradient(env_factory: EnvSource, policy: GaussianPolicy, s, gamma: float, N: int,
                variance_mode: str, rng: np.random.Generator, legacy_q_scaling: bool = False,
                merge: bool = True) -> GradientEstimateBundle:
    """
    Average N independent stochastic gradients started at s.

    With merge=True samples sharing a center are aggregated, which keeps the
    bundle small on discrete-state environments.
    """
    if N < 1:
        raise InvalidArgumentError(f"mc_gradient needs N >= 1 samples, got {N}")
    if variance_mode not in VARIANCE_MODES:
        raise InvalidArgumentError(f"unknown variance mode {variance_mode}")
    env = _resolve_env(env_factory)
    spec = policy.mean.spec

    samples: List[GradientSample] = []
    previous = None
    for i in range(N):
        root_noise = -previous if (variance_mode == ANTITHETIC_NOISE and i % 2 == 1) else None
        sample = stochastic_gradient(env, policy, s, gamma, variance_mode, rng,
                                     root_noise=root_noise, legacy_q_scaling=legacy_q_scaling)
        previous = sample.root_noise
        samples.append(sample)

    mean = FunctionExpansion(spec, [x.center for x in samples], [x.weight / N for x in samples])
    if merge:
        mean = merge_duplicates(mean)
    return GradientEstimateBundle(mean, N, np.asarray(s, dtype=float).reshape(-1), tuple(samples))


def ascent_alignment(bundle_at_s0: GradientEstimateBundle, bundle_at_sk: GradientEstimateBundle) -> float:
    """<g(s0), g(sk)>_H; unbiased for <grad U_s0, grad U_sk> with independent bundles."""
    if bundle_at_s0.is_empty or bundle_at_sk.is_empty:
        return 0.0
    return inner_product(bundle_at_s0.mean, bundle_at_sk.mean)


def _grouped(samples: Sequence[GradientSample]):
    centers = np.array([x.center for x in samples])
    weights = np.array([x.weight for x in samples])
    unique, inverse = np.unique(centers, axis=0, return_inverse=True)
    return unique, np.ravel(inverse), weights


def _aggregate(num_unique: int, inverse: np.ndarray, weights: np.ndarray, counts: np.ndarray) -> np.ndarray:
    totals = np.zeros((num_unique, weights.shape[1]))
    np.add.at(totals, inverse, counts[:, None] * weights)
    return totals / counts.sum()


def alignment_confidence_interval(bundle_at_s0: GradientEstimateBundle, bundle_at_sk: GradientEstimateBundle,
                                  rng: np.random.Generator, num_resamples: int = 1000,
                                  level: float = 0.95) -> Tuple[float, float, float]:
    """
    Percentile bootstrap for ascent_alignment, resampling the gradient samples
    of both bundles with replacement.

    Returns:
        (inner_product, ci_lo, ci_hi)
    """
    estimate = ascent_alignment(bundle_at_s0, bundle_at_sk)
    if not bundle_at_s0.samples or not bundle_at_sk.samples:
        return estimate, estimate, estimate
    if not 0 < level < 1:
        raise InvalidArgumentError(f"level must be in (0, 1), got {level}")

    spec = bundle_at_s0.mean.spec
    u0, inv0, w0 = _grouped(bundle_at_s0.samples)
    uk, invk, wk = _grouped(bundle_at_sk.samples)
    G = gram(spec, u0, uk)
    n0, nk = len(inv0), len(invk)

    stats = np.empty(num_resamples)
    for b in range(num_resamples):
        c0 = rng.multinomial(n0, np.full(n0, 1.0 / n0)).astype(float)
        ck = rng.multinomial(nk, np.full(nk, 1.0 / nk)).astype(float)
        a0 = _aggregate(len(u0), inv0, w0, c0)
        ak = _aggregate(len(uk), invk, wk, ck)
        stats[b] = float(np.sum(G * (a0 @ ak.T)))

    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return estimate, float(lo), float(hi)


def policy_rollout_trace(env: Environment, policy: GaussianPolicy, s0, num_steps: int,
                         rng: np.random.Generator) -> List[Transition]:
    state = np.asarray(s0, dtype=float).reshape(-1)
    trace = []
    for t in range(num_steps):
        action = sample_action(policy, state, rng)
        s_next, reward = env.step(state, action, rng)
        trace.append(Transition(state, action, reward, s_next, t))
        state = s_next
    return trace


def trace_header(env: Environment) -> Tuple[str, ...]:
    return ('t',) + env.labels() + ('r',)


def trace_rows(trace: Iterable[Transition]):
    for tr in trace:
        yield (tr.t,) + tuple(float(x) for x in tr.s) + (tr.r,)


def battery_cycles(batteries: Iterable[float], low: float = 40.0, high: float = 90.0) -> int:
    """Number of complete low -> high -> low hysteresis cycles in a battery series."""
    cycles = 0
    armed = False
    charged = False
    for b in batteries:
        if b <= low:
            if armed and charged:
                cycles += 1
            armed = True
            charged = False
        elif b >= high and armed:
            charged = True
    return cycles


def alternating_visits(positions: Iterable[Sequence[float]], goal: Sequence[float],
                       charger: Sequence[float], radius: float = 1.0) -> int:
    """
    Visits to the goal and charger neighborhoods counted only when they
    alternate: the first visit counts, then every switch of neighborhood.
    """
    goal = np.asarray(goal, dtype=float)
    charger = np.asarray(charger, dtype=float)
    visits = 0
    last = None
    for x in positions:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x - goal) <= radius:
            where = 'goal'
        elif np.linalg.norm(x - charger) <= radius:
            where = 'charger'
        else:
            continue
        if where != last:
            visits += 1
            last = where
    return visits


def first_threshold_crossing(states: Sequence[Sequence[float]], threshold: float = 40.0,
                             battery_index: int = 4) -> Optional[Tuple[int, np.ndarray]]:
    """First time the battery falls to or below threshold from above."""
    for t in range(1, len(states)):
        previous, current = states[t - 1][battery_index], states[t][battery_index]
        if previous > threshold >= current:
            return t, np.asarray(states[t], dtype=float)
    return None


def model_order_summary(model_orders: Sequence[int], tolerance: float = 0.1) -> Dict[str, float]:
    """Max, half and last-quarter statistics of a model-order series."""
    orders = np.asarray(model_orders, dtype=float)
    if orders.size == 0:
        return {'max': 0, 'first_half_max': 0, 'second_half_max': 0, 'last_quarter_mean': 0.0,
                'last_quarter_min': 0, 'last_quarter_max': 0, 'stable': True}
    half = orders.size // 2
    quarter = orders[(3 * orders.size) // 4:]
    mean = float(quarter.mean())
    return {
        'max': int(orders.max()),
        'first_half_max': int(orders[:half].max()) if half else int(orders.max()),
        'second_half_max': int(orders[half:].max()),
        'last_quarter_mean': mean,
        'last_quarter_min': int(quarter.min()),
        'last_quarter_max': int(quarter.max()),
        'stable': bool(np.all(np.abs(quarter - mean) <= tolerance * max(mean, 1.0))),
    }
