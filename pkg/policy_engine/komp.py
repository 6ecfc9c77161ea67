"""
Kernel Orthogonal Matching Pursuit (KOMP).

Destructive pruning of a kernel dictionary: repeatedly drop the element whose
removal costs the least RKHS error, re-projecting the ORIGINAL function onto the
surviving dictionary by least squares, until the next removal would exceed the
compression budget.

The main path keeps the inverse Gram of the active dictionary and downdates it
after every removal, so a sweep costs O(M^2). The trainer passes the inverse of
the previous dictionary back in, and the appended elements are folded in by a
block (Schur complement) update. Whenever the Gram is too ill-conditioned for
that, or the exact residual disagrees with the running one, the direct path
re-solves every projection with a pseudo-inverse fallback.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.linalg

from .exceptions import InvalidArgumentError
from .rkhs import FunctionExpansion, gram
from .utils import engine_setting

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CompressionReport:
    """
    Outcome of one KOMP call.

    final_min_error and residual_norm are RKHS distances (square roots of the
    squared projection errors e_j). gram_inverse is the inverse Gram of the
    pruned dictionary when the incremental path produced one.
    """
    pruned: FunctionExpansion
    removed_count: int
    final_min_error: float
    residual_norm: float
    removed_indices: Tuple[int, ...] = ()
    gram_inverse: Optional[np.ndarray] = None


def _condition_limit() -> float:
    return engine_setting('KOMP_CONDITION_LIMIT', 1e12)


def cholesky_inverse(G: np.ndarray) -> Optional[np.ndarray]:
    """
    Inverse of a positive definite Gram through its Cholesky factor.

    Returns None when G is not numerically positive definite or when the
    squared ratio of the factor's extreme pivots (a lower bound on cond(G))
    passes KOMP_CONDITION_LIMIT.
    """
    m = G.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    try:
        factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return None
    pivots = np.abs(np.diag(factor[0]))
    if not np.all(np.isfinite(pivots)) or pivots.min() <= 0:
        return None
    if (pivots.max() / pivots.min()) ** 2 > _condition_limit():
        return None
    A = scipy.linalg.cho_solve(factor, np.eye(m), check_finite=False)
    return 0.5 * (A + A.T)


def _solve_psd(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Apply the pseudo-inverse of a PSD Gram matrix: G^+ rhs.

    Ridge-regularized Cholesky solve (ridge 1e-12 * trace / m); falls back to
    the eigen-decomposition pseudo-inverse when the regularized matrix is
    ill-conditioned or not numerically positive definite.
    """
    m = G.shape[0]
    if m == 0:
        return np.zeros((0,) + rhs.shape[1:])
    ridge = 1e-12 * np.trace(G) / m
    G_reg = G + ridge * np.eye(m)
    try:
        factor = scipy.linalg.cho_factor(G_reg, lower=True, check_finite=False)
        pivots = np.abs(np.diag(factor[0]))
        if pivots.min() > 0 and (pivots.max() / pivots.min()) ** 2 <= _condition_limit():
            return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    logger.debug(f"Gram of size {m} is ill-conditioned, using pseudo-inverse")
    return scipy.linalg.pinvh(G) @ rhs


def _projection(K: np.ndarray, weights: np.ndarray, subset: Sequence[int]) -> Tuple[float, np.ndarray]:
    """
    Least-squares projection of h = sum_j kappa(c_j, .) w_j onto span{c_i : i in subset}.

    K is the Gram of the full dictionary. Returns the squared error (clamped at
    zero) and the projected weights for the subset, in subset order.
    """
    subset = np.asarray(subset, dtype=int)
    w_star = _solve_psd(K[np.ix_(subset, subset)], K[subset] @ weights)
    residual = weights.copy()
    residual[subset] -= w_star
    error = float(np.sum(residual * (K @ residual)))
    return max(error, 0.0), w_star


def _squared_error(K: np.ndarray, weights: np.ndarray, active: Sequence[int], alpha: np.ndarray) -> float:
    residual = weights.copy()
    residual[np.asarray(active, dtype=int)] -= alpha
    return max(float(np.sum(residual * (K @ residual))), 0.0)


def leave_one_out_error(h: FunctionExpansion, j: int,
                        K: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    Cost of dropping dictionary element j.

    Args:
        h: the expansion being pruned
        j: index of the element to drop
        K: optional precomputed Gram of h's dictionary

    Returns:
        (e_j, w_star): squared RKHS error of the best approximation of h in the
        span of the other M - 1 centers, and the weights achieving it.
    """
    M = h.model_order
    if not 0 <= j < M:
        raise InvalidArgumentError(f"index {j} out of range for model order {M}")
    if K is None:
        K = gram(h.spec, h.centers, h.centers)
    keep = [i for i in range(M) if i != j]
    return _projection(K, np.asarray(h.weights), keep)


def pruning_errors(K: np.ndarray, weights: np.ndarray, active: Sequence[int]) -> np.ndarray:
    """
    e_j for every j in the active dictionary, measured against the full function.

    Uses the leave-one-out identity on the inverse active Gram,
    e_j = e_full + ||alpha_j||^2 / [G^-1]_jj, when the Gram is well conditioned;
    otherwise solves each projection separately.
    """
    active = list(active)
    m = len(active)
    if m == 0:
        return np.zeros(0)
    if m == 1:
        return np.array([max(float(np.sum(weights * (K @ weights))), 0.0)])

    A = cholesky_inverse(K[np.ix_(active, active)])
    if A is not None:
        alpha = A @ (K[active] @ weights)
        e_full = _squared_error(K, weights, active, alpha)
        diag = np.diag(A)
        if np.all(diag > 0):
            return np.maximum(e_full + np.sum(alpha * alpha, axis=1) / diag, 0.0)

    errors = np.empty(m)
    for position in range(m):
        subset = active[:position] + active[position + 1:]
        errors[position], _ = _projection(K, weights, subset)
    return errors


def extend_inverse(A: np.ndarray, cross: np.ndarray, block: np.ndarray) -> Optional[np.ndarray]:
    """
    Inverse of [[G, cross], [cross^T, block]] from A = G^-1 by the Schur complement.

    Returns None when the complement is not safely positive definite, i.e.
    some appended element lies numerically in the span of the others.
    """
    B = A @ cross
    schur = block - cross.T @ B
    schur = 0.5 * (schur + schur.T)
    S_inv = cholesky_inverse(schur)
    if S_inv is None or np.min(np.linalg.eigvalsh(schur)) * _condition_limit() <= 1.0:
        return None
    top_left = A + B @ S_inv @ B.T
    off = -B @ S_inv
    extended = np.block([[top_left, off], [off.T, S_inv]])
    return 0.5 * (extended + extended.T)


def downdate_inverse(A: np.ndarray, position: int) -> np.ndarray:
    """Inverse of the Gram with row and column `position` removed, from the full inverse."""
    keep = np.arange(A.shape[0]) != position
    a = A[keep, position]
    return A[np.ix_(keep, keep)] - np.outer(a, a) / A[position, position]


class _IncrementalSweep:
    """Running least-squares state of the fast path: active indices, inverse Gram, projection weights."""

    def __init__(self, K: np.ndarray, weights: np.ndarray, active: List[int], A: np.ndarray,
                 alpha: np.ndarray, e_full: float, removed: List[int]):
        self.K = K
        self.weights = weights
        self.active = active
        self.A = A
        self.alpha = alpha
        self.e_full = e_full
        self.removed = removed
        self.total_sq = max(float(np.sum(weights * (K @ weights))), 0.0)

    def errors(self) -> Optional[np.ndarray]:
        if len(self.active) == 1:
            return np.array([self.total_sq])
        diag = np.diag(self.A)
        if not np.all(diag > 0):
            return None
        return np.maximum(self.e_full + np.sum(self.alpha * self.alpha, axis=1) / diag, 0.0)

    def remove(self, position: int, error: float):
        self.removed.append(self.active[position])
        if len(self.active) == 1:
            self.active = []
            self.alpha = np.zeros((0, self.weights.shape[1]))
            self.A = np.zeros((0, 0))
        else:
            keep = np.arange(len(self.active)) != position
            a = self.A[:, position]
            self.alpha = self.alpha[keep] - np.outer(a[keep], self.alpha[position]) / a[position]
            self.A = downdate_inverse(self.A, position)
            self.active = [i for i, kept in zip(self.active, keep) if kept]
        self.e_full = error

    def refine(self):
        """One step of iterative refinement of the projection weights."""
        if not self.active:
            return
        idx = np.asarray(self.active, dtype=int)
        rhs = self.K[idx] @ self.weights - self.K[np.ix_(idx, idx)] @ self.alpha
        self.alpha = self.alpha + self.A @ rhs


def _start_sweep(K: np.ndarray, weights: np.ndarray, prefix_inverse: Optional[np.ndarray],
                 epsilon: float, floor: float) -> Optional[_IncrementalSweep]:
    M = K.shape[0]
    everything = list(range(M))
    if prefix_inverse is not None and 0 < prefix_inverse.shape[0] <= M:
        m0 = prefix_inverse.shape[0]
        if m0 == M:
            return _IncrementalSweep(K, weights, everything, prefix_inverse, weights.copy(), 0.0, [])
        A = extend_inverse(prefix_inverse, K[:m0, m0:], K[m0:, m0:])
        if A is not None:
            return _IncrementalSweep(K, weights, everything, A, weights.copy(), 0.0, [])
        if M - m0 == 1:
            # The appended element is numerically in the span of the old dictionary
            old = list(range(m0))
            alpha = weights[:m0] + prefix_inverse @ (K[:m0, m0:] @ weights[m0:])
            error = _squared_error(K, weights, old, alpha)
            if error <= floor or np.sqrt(error) < epsilon:
                return _IncrementalSweep(K, weights, old, prefix_inverse, alpha, error, [m0])
    A = cholesky_inverse(K)
    if A is None:
        return None
    return _IncrementalSweep(K, weights, everything, A, weights.copy(), 0.0, [])


def _komp_incremental(h: FunctionExpansion, K: np.ndarray, weights: np.ndarray, epsilon: float,
                      floor: float, prefix_inverse: Optional[np.ndarray]) -> Optional[CompressionReport]:
    sweep = _start_sweep(K, weights, prefix_inverse, epsilon, floor)
    if sweep is None:
        return None

    final_min_error = 0.0
    while sweep.active:
        errors = sweep.errors()
        if errors is None:
            return None
        position = int(np.argmin(errors))
        error = float(errors[position])
        if not (error <= floor or np.sqrt(error) < epsilon):
            final_min_error = float(np.sqrt(error))
            break
        sweep.remove(position, error)

    if not sweep.removed:
        return CompressionReport(h, 0, final_min_error, 0.0, gram_inverse=sweep.A)

    sweep.refine()
    residual_sq = _squared_error(K, weights, sweep.active, sweep.alpha) if sweep.active else sweep.total_sq
    if np.sqrt(residual_sq) > max(epsilon, np.sqrt(floor)) + 1e-9:
        logger.debug(f"Incremental residual {np.sqrt(residual_sq):.3e} exceeds the budget, re-solving")
        return None
    return CompressionReport(
        pruned=FunctionExpansion(h.spec, h.centers[sweep.active], sweep.alpha),
        removed_count=len(sweep.removed),
        final_min_error=final_min_error,
        residual_norm=float(np.sqrt(residual_sq)),
        removed_indices=tuple(sweep.removed),
        gram_inverse=sweep.A,
    )


def _komp_direct(h: FunctionExpansion, K: np.ndarray, weights: np.ndarray, epsilon: float,
                 floor: float) -> CompressionReport:
    M = h.model_order
    active: List[int] = list(range(M))
    removed: List[int] = []
    current_weights = weights
    residual_sq = 0.0
    final_min_error = 0.0

    while active:
        errors = pruning_errors(K, weights, active)
        position = int(np.argmin(errors))
        candidate = active[:position] + active[position + 1:]
        error, w_star = _projection(K, weights, candidate) if candidate else (errors[position], None)
        if not (error <= floor or np.sqrt(error) < epsilon):
            final_min_error = float(np.sqrt(error))
            break
        removed.append(active[position])
        active = candidate
        current_weights = w_star if w_star is not None else np.zeros((0, h.spec.action_dim))
        residual_sq = error

    if not removed:
        return CompressionReport(h, 0, final_min_error, 0.0)
    return CompressionReport(
        pruned=FunctionExpansion(h.spec, h.centers[active], current_weights),
        removed_count=len(removed),
        final_min_error=final_min_error,
        residual_norm=float(np.sqrt(residual_sq)),
        removed_indices=tuple(removed),
    )


def komp(h: FunctionExpansion, epsilon: float,
         prefix_inverse: Optional[np.ndarray] = None) -> CompressionReport:
    """
    Prune h with compression budget epsilon (an RKHS distance).

    Each sweep computes every e_j against the original h, removes the argmin
    (lowest index on ties) while sqrt(e_j*) < epsilon or e_j* is at the
    numerical floor, and re-weights the survivors by least squares.

    Args:
        h: expansion to prune
        epsilon: compression budget >= 0
        prefix_inverse: optional inverse Gram of h's first m centers (the
            gram_inverse of the previous report when h extends that dictionary)
    """
    if epsilon < 0:
        raise InvalidArgumentError(f"compression budget must be >= 0, got {epsilon}")
    M = h.model_order
    if M == 0:
        return CompressionReport(h, 0, 0.0, 0.0)

    floor = engine_setting('KOMP_ERROR_FLOOR', 1e-12)
    weights = np.array(h.weights)
    K = gram(h.spec, h.centers, h.centers)

    report = _komp_incremental(h, K, weights, epsilon, floor, prefix_inverse)
    if report is None:
        report = _komp_direct(h, K, weights, epsilon, floor)
    if report.removed_count and logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"KOMP removed {report.removed_count} of {M} elements, residual {report.residual_norm:.3e}")
    return report
