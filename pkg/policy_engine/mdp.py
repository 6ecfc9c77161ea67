"""
Environment abstraction and the Gaussian RKHS policy.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import InvalidArgumentError
from .rkhs import FunctionExpansion, evaluate


class Environment(ABC):
    """
    Abstract base class for the MDPs the trainer runs on.

    Implementations are memoryless given (s, a): the full system state is the
    state vector passed to step, and all randomness comes from the rng
    argument, so seeded runs are reproducible and rollouts can restart from
    any recorded state.
    """

    name = "environment"
    state_labels: Tuple[str, ...] = ()

    @property
    @abstractmethod
    def state_dim(self) -> int:
        pass

    @property
    @abstractmethod
    def action_dim(self) -> int:
        pass

    @property
    @abstractmethod
    def reward_bound(self) -> float:
        """B_r with |r(s, a)| <= B_r for every transition."""
        pass

    @abstractmethod
    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def step(self, s, a, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        """
        Advance the system one transition.

        Args:
            s: current state (state_dim vector)
            a: action (action_dim vector)
            rng: random generator for stochastic transitions

        Returns:
            (next_state, reward)
        """
        pass

    def is_absorbing(self, s) -> bool:
        """True when no action can ever leave s."""
        return False

    def reference_state(self) -> np.ndarray:
        """Default conditioning state for value curves and alignment checks."""
        return self.initial_state(np.random.default_rng(0))

    def labels(self) -> Tuple[str, ...]:
        if len(self.state_labels) == self.state_dim:
            return tuple(self.state_labels)
        return tuple(f"s{i + 1}" for i in range(self.state_dim))


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """
    Randomized policy a ~ N(h(s), Sigma) with diagonal Sigma.

    Args:
        mean: the RKHS function h
        covariance: diagonal of Sigma, p positive scalars
    """
    mean: FunctionExpansion
    covariance: np.ndarray

    def __post_init__(self):
        covariance = np.array(self.covariance, dtype=float).reshape(-1)
        if covariance.shape[0] != self.mean.spec.action_dim:
            raise InvalidArgumentError(
                f"covariance has {covariance.shape[0]} entries, expected {self.mean.spec.action_dim}"
            )
        if not np.all(covariance > 0):
            raise InvalidArgumentError("all covariance entries must be > 0")
        covariance.flags.writeable = False
        object.__setattr__(self, 'covariance', covariance)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.covariance)

    @property
    def action_dim(self) -> int:
        return self.mean.spec.action_dim

    def with_mean(self, mean: FunctionExpansion) -> "GaussianPolicy":
        return GaussianPolicy(mean, self.covariance)


@dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    t: int


def draw_noise(policy: GaussianPolicy, rng: np.random.Generator) -> np.ndarray:
    """Standard normal exploration noise z for one action."""
    return rng.standard_normal(policy.action_dim)


def sample_action(policy: GaussianPolicy, s, rng: Optional[np.random.Generator] = None,
                  noise=None) -> np.ndarray:
    """
    a = h(s) + Sigma^{1/2} z.

    A given noise vector z replaces the random draw (used by the antithetic
    mode and by tests that force a degenerate draw).
    """
    if noise is None:
        if rng is None:
            raise InvalidArgumentError("sample_action needs an rng when no noise is given")
        noise = draw_noise(policy, rng)
    noise = np.asarray(noise, dtype=float).reshape(-1)
    return evaluate(policy.mean, s) + policy.std * noise


def score_factor(policy: GaussianPolicy, s, a) -> np.ndarray:
    """Sigma^{-1}(a - h(s))."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != policy.action_dim:
        raise InvalidArgumentError(f"action has dimension {a.shape[0]}, expected {policy.action_dim}")
    return (a - evaluate(policy.mean, s)) / policy.covariance


def mirror_action(policy: GaussianPolicy, s, a) -> np.ndarray:
    """The action symmetric to a about the mean: 2 h(s) - a."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape[0] != policy.action_dim:
        raise InvalidArgumentError(f"action has dimension {a.shape[0]}, expected {policy.action_dim}")
    mean = evaluate(policy.mean, s)
    return mean - (a - mean)
