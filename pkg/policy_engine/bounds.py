"""
Closed-form constants of the online convergence analysis and the
admissibility checks for the step size eta, the compression factor K and the
kernel bandwidth Sigma_H.
"""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple
import logging
import math

import numpy as np
from scipy.special import gammaln

from .exceptions import InfeasibleConfigurationError, InvalidArgumentError

logger = logging.getLogger(__name__)


def _gamma_ratio(a: float, b: float) -> float:
    """Gamma(a) / Gamma(b) through log-Gamma."""
    return math.exp(gammaln(a) - gammaln(b))


@dataclass(frozen=True, eq=False)
class ProblemConstants:
    """
    Problem constants the convergence analysis is stated in.

    Args:
        reward_bound: B_r, |r(s, a)| <= B_r
        reward_lipschitz_state / reward_lipschitz_action: L_rs, L_ra
        rho_lower / rho_upper: beta_rho <= rho_s(s) <= B_rho
        transition_lipschitz: L_p
        transition_lipschitz_state / transition_lipschitz_action: L_ps, L_pa
        gamma: discount factor
        action_dim / state_dim: p, n
        policy_covariance: diagonal of Sigma (p entries)
        kernel_bandwidth: diagonal of Sigma_H (n entries)
        state_space_measure: |S|, the measure of the (compact) state space
        h_norm: ||h||_H of the current policy mean
        epsilon: stationarity threshold
    """
    reward_bound: float
    rho_lower: float
    rho_upper: float
    gamma: float
    action_dim: int
    state_dim: int
    policy_covariance: Tuple[float, ...]
    kernel_bandwidth: Tuple[float, ...]
    epsilon: float
    reward_lipschitz_state: float = 1.0
    reward_lipschitz_action: float = 1.0
    transition_lipschitz: float = 1.0
    transition_lipschitz_state: float = 1.0
    transition_lipschitz_action: float = 1.0
    state_space_measure: float = 1.0
    h_norm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'policy_covariance', tuple(float(x) for x in np.ravel(self.policy_covariance)))
        object.__setattr__(self, 'kernel_bandwidth', tuple(float(x) for x in np.ravel(self.kernel_bandwidth)))
        if self.reward_bound <= 0 or self.epsilon <= 0 or self.state_space_measure <= 0:
            raise InvalidArgumentError("reward_bound, epsilon and state_space_measure must be > 0")
        if not 0 <= self.gamma < 1:
            raise InvalidArgumentError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 < self.rho_lower <= self.rho_upper:
            raise InvalidArgumentError("need 0 < rho_lower <= rho_upper")
        if self.action_dim < 1 or self.state_dim < 1:
            raise InvalidArgumentError("action_dim and state_dim must be positive")
        if len(self.policy_covariance) != self.action_dim or min(self.policy_covariance) <= 0:
            raise InvalidArgumentError(f"policy_covariance needs {self.action_dim} positive entries")
        if len(self.kernel_bandwidth) != self.state_dim or min(self.kernel_bandwidth) <= 0:
            raise InvalidArgumentError(f"kernel_bandwidth needs {self.state_dim} positive entries")
        lipschitz = (self.reward_lipschitz_state, self.reward_lipschitz_action, self.transition_lipschitz,
                     self.transition_lipschitz_state, self.transition_lipschitz_action, self.h_norm)
        if min(lipschitz) < 0:
            raise InvalidArgumentError("Lipschitz constants and h_norm must be >= 0")

    @property
    def lambda_min_sigma(self) -> float:
        return min(self.policy_covariance)

    @property
    def lambda_min_sigma_sqrt(self) -> float:
        return math.sqrt(self.lambda_min_sigma)

    @property
    def lambda_min_sigma_h(self) -> float:
        return min(self.kernel_bandwidth)

    @property
    def sigma_h_norm(self) -> float:
        """Spectral norm of the diagonal Sigma_H."""
        return max(self.kernel_bandwidth)

    @property
    def rho_ratio(self) -> float:
        return self.rho_lower / self.rho_upper

    def normalizer(self) -> float:
        """Z = sqrt(det(2 pi Sigma_H))."""
        return float(np.sqrt(np.prod(2.0 * np.pi * np.asarray(self.kernel_bandwidth))))


class KernelCondition(NamedTuple):
    lhs: float
    rhs: float
    satisfied: bool


class LipschitzConstants(NamedTuple):
    B_D: float
    L_h: float
    L_Qs: float
    L_Qa: float
    L_D: float
    B: float
    L: float


def smoothness(pc: ProblemConstants) -> Tuple[float, float]:
    """Smoothness constants (L1, L2) of the value functional."""
    g, p, br = pc.gamma, pc.action_dim, pc.reward_bound
    lam = pc.lambda_min_sigma
    L1 = br * (1 - g + p * (1 + g)) / (lam * (1 - g) ** 2)
    L2 = br * (1 + p) * math.sqrt(p) / (lam ** 1.5 * (1 - g) ** 3)
    return L1, L2


def moment_sigma(pc: ProblemConstants) -> float:
    """Fourth-moment bound sigma of the stochastic gradient."""
    g, p = pc.gamma, pc.action_dim
    moment = (4.0 * _gamma_ratio(2 + p / 2, p / 2)) ** 0.25
    return (3 * g) ** (1 / 3) / (pc.lambda_min_sigma_sqrt * (1 - g) ** 2) * moment


def drift_constants(L1: float, L2: float, sigma: float, K: float) -> Tuple[float, float]:
    spread = sigma ** 2 + 2 * K * sigma + K ** 2
    return L1 * spread, L2 * spread ** 1.5


def gradient_norm_bound(pc: ProblemConstants) -> float:
    """B_grad bounding ||grad_h U_s(h)||_H."""
    return math.sqrt(pc.action_dim) * pc.reward_bound / ((1 - pc.gamma) ** 2 * pc.lambda_min_sigma_sqrt)


def max_compression_K(pc: ProblemConstants, B_grad: float) -> float:
    """K_max = (eps / (2 B_grad)) (beta_rho / B_rho)."""
    return pc.epsilon / (2.0 * B_grad) * pc.rho_ratio


def _stationarity_margin(pc: ProblemConstants, B_grad: float, K: float) -> float:
    return pc.epsilon * pc.rho_ratio / 2.0 - B_grad * K


def max_step(C1: float, C2: float, pc: ProblemConstants, B_grad: float, K: float) -> float:
    """
    Largest admissible constant step size for compression factor K.

    Positive root of C2 eta^2 + C1 eta = margin, evaluated in the cancellation
    free form 2 margin / (sqrt(C1^2 + 4 C2 margin) + C1).

    Raises:
        InfeasibleConfigurationError: K > K_max
    """
    if K < 0:
        raise InvalidArgumentError(f"K must be >= 0, got {K}")
    k_max = max_compression_K(pc, B_grad)
    if math.isclose(K, k_max, rel_tol=1e-12):
        return 0.0
    if K > k_max:
        raise InfeasibleConfigurationError(
            f"K={K:g} exceeds K_max={k_max:g}; no positive step size is admissible"
        )
    margin = _stationarity_margin(pc, B_grad, K)
    if margin <= 0:
        return 0.0
    return 2.0 * margin / (math.sqrt(C1 ** 2 + 4.0 * C2 * margin) + C1)


def drift_rate(C1: float, C2: float, B_grad: float, K: float, eta: float, pc: ProblemConstants) -> float:
    """Per-step drift coefficient; negative exactly when (eta, K) is admissible."""
    return K * B_grad - pc.epsilon / 2.0 * pc.rho_ratio + eta * C1 + eta ** 2 * C2


def kernel_condition(pc: ProblemConstants, L: float, B: float, Z: Optional[float] = None) -> KernelCondition:
    """Maximum-width condition on the kernel bandwidth Sigma_H."""
    if Z is None:
        Z = pc.normalizer()
    lhs = (math.sqrt(pc.state_dim * pc.action_dim) * (1 + pc.rho_ratio) * pc.sigma_h_norm
           * Z * L * B * pc.state_space_measure)
    rhs = pc.epsilon / 2.0 * pc.rho_ratio
    return KernelCondition(lhs, rhs, lhs < rhs)


def lipschitz_D(pc: ProblemConstants, gamma_factored: bool = False) -> LipschitzConstants:
    """
    Bound and Lipschitz constants of the gradient integrand.

    gamma_factored multiplies the transition terms of L_Qs and L_Qa by gamma.
    """
    g, br = pc.gamma, pc.reward_bound
    B_D = math.sqrt(2.0) * br / (1 - g) * _gamma_ratio((pc.action_dim + 1) / 2, pc.action_dim / 2)
    L_h = pc.h_norm / math.sqrt(pc.lambda_min_sigma_h)
    factor = g if gamma_factored else 1.0
    L_Qs = pc.reward_lipschitz_state + factor * br * pc.transition_lipschitz_state * pc.state_space_measure / (1 - g)
    L_Qa = pc.reward_lipschitz_action + factor * br * pc.transition_lipschitz_action * pc.state_space_measure / (1 - g)
    L_D = L_Qs + L_Qa * L_h
    B = pc.rho_upper * B_D
    L = B_D * pc.transition_lipschitz + pc.rho_upper * L_D
    return LipschitzConstants(B_D, L_h, L_Qs, L_Qa, L_D, B, L)


@dataclass
class FeasibilityReport:
    K: float
    eta: Optional[float]
    L1: float
    L2: float
    sigma: float
    C1: float
    C2: float
    B_grad: float
    K_max: float
    eta_max: Optional[float]
    drift: Optional[float]
    lipschitz: LipschitzConstants
    kernel: KernelCondition
    messages: List[str] = field(default_factory=list)

    @property
    def K_feasible(self) -> bool:
        return self.K < self.K_max

    @property
    def eta_feasible(self) -> Optional[bool]:
        if self.eta is None or self.eta_max is None:
            return None
        return 0 < self.eta <= self.eta_max

    @property
    def feasible(self) -> bool:
        return self.K_feasible and self.eta_feasible is not False and self.kernel.satisfied

    def rows(self) -> List[Tuple[str, object]]:
        rows = [
            ('L1', self.L1), ('L2', self.L2), ('sigma', self.sigma),
            ('C1', self.C1), ('C2', self.C2), ('B_grad', self.B_grad),
        ]
        rows.extend(self.lipschitz._asdict().items())
        rows.extend([
            ('K', self.K), ('K_max', self.K_max), ('K_feasible', self.K_feasible),
            ('eta_max', self.eta_max), ('eta', self.eta), ('eta_feasible', self.eta_feasible),
            ('drift_rate', self.drift),
            ('kernel_lhs', self.kernel.lhs), ('kernel_rhs', self.kernel.rhs),
            ('kernel_satisfied', self.kernel.satisfied), ('feasible', self.feasible),
        ])
        return rows


def feasibility_report(pc: ProblemConstants, K: float, eta: Optional[float] = None,
                       gamma_factored: bool = False) -> FeasibilityReport:
    """Every constant plus the verdicts on K, eta and the kernel width."""
    L1, L2 = smoothness(pc)
    sigma = moment_sigma(pc)
    C1, C2 = drift_constants(L1, L2, sigma, K)
    B_grad = gradient_norm_bound(pc)
    k_max = max_compression_K(pc, B_grad)
    lipschitz = lipschitz_D(pc, gamma_factored)
    kernel = kernel_condition(pc, lipschitz.L, lipschitz.B)

    messages = []
    try:
        eta_max = max_step(C1, C2, pc, B_grad, K)
    except InfeasibleConfigurationError as e:
        eta_max = None
        messages.append(str(e))
    drift = drift_rate(C1, C2, B_grad, K, eta, pc) if eta is not None else None
    if not kernel.satisfied:
        messages.append(f"kernel condition fails: {kernel.lhs:.6g} >= {kernel.rhs:.6g}")
    report = FeasibilityReport(K, eta, L1, L2, sigma, C1, C2, B_grad, k_max, eta_max, drift,
                               lipschitz, kernel, messages)
    logger.debug(f"Feasibility for K={K:g}, eta={eta}: {report.feasible}")
    return report
