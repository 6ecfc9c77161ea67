"""
Bundled environments: the 11-state chain MDP with its exact oracles, a
constant-reward test MDP, and the surveillance/battery navigation task.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .exceptions import InvalidArgumentError
from .mdp import Environment, GaussianPolicy
from .rkhs import evaluate

logger = logging.getLogger(__name__)


class ChainMdp(Environment):
    """
    Chain of states {0, ..., N-1} embedded as a 1-dim real state.

    The continuous action is binarized by sign (ties go up). Interior states
    move by +-1, state 0 can only move up, the last state is absorbing and pays
    reward 1 on every step; every other reward is 0.
    """

    name = "chain"
    state_labels = ("s",)

    def __init__(self, num_states: int = 11, start_state: int = 0):
        if num_states < 2:
            raise InvalidArgumentError("a chain needs at least 2 states")
        if not 0 <= start_state < num_states:
            raise InvalidArgumentError(f"start_state {start_state} outside the chain")
        self.num_states = int(num_states)
        self.start_state = int(start_state)

    @property
    def state_dim(self) -> int:
        return 1

    @property
    def action_dim(self) -> int:
        return 1

    @property
    def reward_bound(self) -> float:
        return 1.0

    @property
    def last_state(self) -> int:
        return self.num_states - 1

    def index(self, s) -> int:
        return int(np.clip(round(float(np.asarray(s, dtype=float).reshape(-1)[0])), 0, self.last_state))

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([float(self.start_state)])

    def is_absorbing(self, s) -> bool:
        return self.index(s) == self.last_state

    def next_index(self, state: int, up: bool) -> int:
        if state == self.last_state:
            return state
        if state == 0:
            return 1 if up else 0
        return state + 1 if up else state - 1

    def step(self, s, a, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
        state = self.index(s)
        up = float(np.asarray(a, dtype=float).reshape(-1)[0]) >= 0.0
        reward = 1.0 if state == self.last_state else 0.0
        return np.array([float(self.next_index(state, up))]), reward


class ConstantRewardMdp(Environment):
    """Every transition stays put and pays the same reward."""

    name = "constant"

    def __init__(self, reward: float = 1.0, state_dim: int = 1, action_dim: int = 1):
        self.reward = float(reward)
        self._state_dim = int(state_dim)
        self._action_dim = int(action_dim)

    @property
    def state_dim(self) -> int:
        return self._state_dim

    @property
    def action_dim(self) -> int:
        return self._action_dim

    @property
    def reward_bound(self) -> float:
        return abs(self.reward)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self._state_dim)

    def step(self, s, a, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
        return np.array(s, dtype=float).reshape(-1), self.reward


@dataclass(frozen=True)
class SurveillanceParams:
    goal: Tuple[float, float] = (-1.0, -5.0)
    charger: Tuple[float, float] = (-1.0, 5.0)
    start: Tuple[float, float] = (3.0, 0.0)
    initial_battery: float = 100.0
    battery_capacity: float = 100.0
    charge_rate: float = 1.0
    charger_radius: float = 0.5
    dt: float = 0.1
    low_threshold: float = 40.0
    high_threshold: float = 90.0
    obstacle_center: Tuple[float, float] = (-1.0, 0.0)
    obstacle_axes: Tuple[float, float] = (1.8, 0.9)
    distance_weight: float = 1.0
    velocity_weight: float = 0.1
    action_weight: float = 0.01
    barrier_weight: float = 0.5
    barrier_floor: float = 1e-3
    reward_bound: float = 50.0
    reward_scale: float = 1.0
    reference_state: Tuple[float, ...] = (-0.72, -4.58, -0.092, 0.049, 39.99, 3e-4)

    def __post_init__(self):
        for name in ('charge_rate', 'charger_radius', 'dt', 'reward_bound', 'barrier_floor',
                     'battery_capacity', 'reward_scale'):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be > 0")
        if not 0 <= self.low_threshold < self.high_threshold <= self.battery_capacity:
            raise InvalidArgumentError("thresholds must satisfy 0 <= low < high <= capacity")
        if min(self.obstacle_axes) <= 0:
            raise InvalidArgumentError("obstacle axes must be > 0")
        if len(self.reference_state) != 6:
            raise InvalidArgumentError("reference_state must be (x1, x2, v1, v2, b, d)")


class SurveillanceEnv(Environment):
    """
    Point mass with second-order dynamics and a battery.

    State s = (x1, x2, v1, v2, b, d): position, velocity, charge and the charge
    delta of the last step. The action is the acceleration. The battery
    charges at a constant rate inside the charger radius and discharges at the
    same rate elsewhere; the reward pulls the agent towards the goal or the
    charger depending on the hysteresis mode, with a log barrier around the
    elliptic obstacle, saturated to [-B_r, B_r] and multiplied by reward_scale.
    """

    name = "surveillance"
    state_labels = ("x1", "x2", "v1", "v2", "b", "d")

    GOAL = "goal"
    CHARGER = "charger"

    def __init__(self, params: Optional[SurveillanceParams] = None, **overrides):
        if params is None:
            params = SurveillanceParams(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in overrides.items()})
        self.params = params
        self.goal = np.asarray(params.goal, dtype=float)
        self.charger = np.asarray(params.charger, dtype=float)
        self.obstacle_center = np.asarray(params.obstacle_center, dtype=float)
        self.obstacle_semi_axes = 0.5 * np.asarray(params.obstacle_axes, dtype=float)

    @property
    def state_dim(self) -> int:
        return 6

    @property
    def action_dim(self) -> int:
        return 2

    @property
    def reward_bound(self) -> float:
        return self.params.reward_bound * self.params.reward_scale

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        return np.array([p.start[0], p.start[1], 0.0, 0.0, p.initial_battery, 0.0])

    def reference_state(self) -> np.ndarray:
        return np.asarray(self.params.reference_state, dtype=float)

    def target_mode(self, battery: float, delta: float) -> str:
        """
        Hysteresis on the battery: head for the charger when low and discharging,
        or while charging below the high threshold (delta = 0 counts as charging).
        """
        p = self.params
        if (battery < p.low_threshold and delta < 0) or (battery < p.high_threshold and delta >= 0):
            return self.CHARGER
        return self.GOAL

    def target(self, battery: float, delta: float) -> np.ndarray:
        return self.charger if self.target_mode(battery, delta) == self.CHARGER else self.goal

    def barrier(self, x) -> float:
        p = self.params
        scaled = (np.asarray(x, dtype=float) - self.obstacle_center) / self.obstacle_semi_axes
        q = float(np.sum(scaled * scaled) - 1.0)
        return p.barrier_weight * float(np.log(max(q, p.barrier_floor)))

    def at_charger(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.charger) <= self.params.charger_radius)

    def step(self, s, a, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, float]:
        p = self.params
        s = np.asarray(s, dtype=float).reshape(-1)
        a = np.asarray(a, dtype=float).reshape(-1)
        if s.shape[0] != 6 or a.shape[0] != 2:
            raise InvalidArgumentError("surveillance expects a 6-dim state and a 2-dim action")
        x, v, battery, delta = s[0:2], s[2:4], s[4], s[5]

        target = self.target(battery, delta)
        x_next = x + p.dt * v
        v_next = v + p.dt * a
        rate = p.charge_rate if self.at_charger(x) else -p.charge_rate
        battery_next = float(np.clip(battery + rate, 0.0, p.battery_capacity))
        delta_next = battery_next - battery

        reward = (
            -p.distance_weight * float(np.sum((x_next - target) ** 2))
            - p.velocity_weight * float(np.sum(v_next ** 2))
            - p.action_weight * float(np.sum(a ** 2))
            + self.barrier(x_next)
        )
        if not np.isfinite(reward):
            reward = -p.reward_bound
        reward = p.reward_scale * float(np.clip(reward, -p.reward_bound, p.reward_bound))
        s_next = np.concatenate([x_next, v_next, [battery_next, delta_next]])
        return s_next, reward


ENVIRONMENTS = {
    ChainMdp.name: ChainMdp,
    ConstantRewardMdp.name: ConstantRewardMdp,
    SurveillanceEnv.name: SurveillanceEnv,
}


def make_environment(name: str, params: Optional[Dict] = None) -> Environment:
    """
    Factory function to build a bundled environment.

    Args:
        name: "chain", "constant" or "surveillance"
        params: keyword parameters for the environment constructor

    Returns:
        An Environment instance
    """
    key = name.lower()
    if key not in ENVIRONMENTS:
        raise InvalidArgumentError(f"Unknown environment: {name}. Choose from {sorted(ENVIRONMENTS)}")
    logger.debug(f"Building {key} environment with params {params or {}}")
    return ENVIRONMENTS[key](**(params or {}))


def environment_factory(name: str, params: Optional[Dict] = None):
    """Zero-argument callable building fresh, independent environment copies."""
    def build() -> Environment:
        return make_environment(name, params)
    return build


# Exact oracles for the chain (sign-binarized Gaussian policies)

def chain_up_probabilities(policy: GaussianPolicy, num_states: int = 11) -> np.ndarray:
    """p_up(s) = P(a >= 0 | s) = Phi(h(s) / sigma) for every chain state."""
    sigma = float(policy.std[0])
    means = np.array([evaluate(policy.mean, [float(s)])[0] for s in range(num_states)])
    return norm.cdf(means / sigma)


def chain_transition_matrix(p_up) -> np.ndarray:
    p_up = np.asarray(p_up, dtype=float)
    n = p_up.shape[0]
    P = np.zeros((n, n))
    P[0, 1] = p_up[0]
    P[0, 0] = 1.0 - p_up[0]
    for s in range(1, n - 1):
        P[s, s + 1] = p_up[s]
        P[s, s - 1] = 1.0 - p_up[s]
    P[n - 1, n - 1] = 1.0
    return P


def chain_rewards(num_states: int = 11) -> np.ndarray:
    rewards = np.zeros(num_states)
    rewards[-1] = 1.0
    return rewards


def chain_values_from_probabilities(p_up, gamma: float) -> np.ndarray:
    """U = (I - gamma P)^{-1} r for the chain under the given up-probabilities."""
    if not 0 < gamma < 1:
        raise InvalidArgumentError(f"gamma must be in (0, 1), got {gamma}")
    P = chain_transition_matrix(p_up)
    n = P.shape[0]
    return scipy.linalg.solve(np.eye(n) - gamma * P, chain_rewards(n))


def chain_state_index(s, num_states: int = 11) -> int:
    """Index of an integer chain state; anything else is an argument error."""
    values = np.asarray(s, dtype=float).reshape(-1)
    if values.size != 1:
        raise InvalidArgumentError(f"a chain state is a single number, got {values.size} values")
    value = float(values[0])
    state = int(round(value)) if np.isfinite(value) else -1
    if not 0 <= state < num_states or abs(value - state) > 1e-9:
        raise InvalidArgumentError(f"state {value} is not one of the chain states 0..{num_states - 1}")
    return state


def chain_exact_values(policy: GaussianPolicy, gamma: float, num_states: int = 11) -> np.ndarray:
    return chain_values_from_probabilities(chain_up_probabilities(policy, num_states), gamma)


def chain_exact_value(policy: GaussianPolicy, s0, gamma: float, num_states: int = 11) -> float:
    """Exact discounted value U_{s0}(h) of the chain by a linear solve."""
    state = chain_state_index(s0, num_states)
    return float(chain_exact_values(policy, gamma, num_states)[state])


def chain_exact_q(policy: GaussianPolicy, s, a, gamma: float, num_states: int = 11) -> float:
    """Exact Q(s, a; h) = r(s) + gamma * U(s')."""
    chain = ChainMdp(num_states)
    state = chain_state_index(s, num_states)
    values = chain_exact_values(policy, gamma, num_states)
    up = float(np.asarray(a, dtype=float).reshape(-1)[0]) >= 0.0
    reward = 1.0 if state == chain.last_state else 0.0
    return float(reward + gamma * values[chain.next_index(state, up)])
