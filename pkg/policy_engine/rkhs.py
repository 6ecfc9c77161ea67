"""
Vector-valued RKHS primitives.

The kernel is the diagonal matrix-valued Gaussian kernel with equal diagonal
entries, so every p x p block of a Gram matrix is kappa * I_p. Only the scalar
Gram is ever built; it is applied to whole weight vectors.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import InvalidArgumentError, SpecMismatchError


def _as_vector(value, dim: int, what: str) -> np.ndarray:
    vector = np.asarray(value, dtype=float).reshape(-1)
    if vector.shape[0] != dim:
        raise InvalidArgumentError(f"{what} has dimension {vector.shape[0]}, expected {dim}")
    return vector


def _as_rows(values, dim: int, what: str) -> np.ndarray:
    rows = np.asarray(values, dtype=float)
    if rows.size == 0:
        return np.zeros((0, dim))
    rows = rows.reshape(-1, dim) if rows.ndim == 1 and dim == 1 else rows
    if rows.ndim != 2 or rows.shape[1] != dim:
        raise InvalidArgumentError(f"{what} must be a list of {dim}-dimensional vectors")
    return rows


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class KernelSpec:
    """
    Gaussian kernel kappa(s, s') = exp(-(s - s')^T Sigma_H^{-1} (s - s') / 2).

    Args:
        state_dim: n, dimension of the states (kernel inputs)
        action_dim: p, dimension of the weights (kernel outputs)
        bandwidth: diagonal of Sigma_H, n positive scalars
    """
    state_dim: int
    action_dim: int
    bandwidth: Tuple[float, ...]

    def __post_init__(self):
        if int(self.state_dim) < 1 or int(self.action_dim) < 1:
            raise InvalidArgumentError("state_dim and action_dim must be positive integers")
        bandwidth = tuple(float(b) for b in np.asarray(self.bandwidth, dtype=float).reshape(-1))
        if len(bandwidth) != self.state_dim:
            raise InvalidArgumentError(
                f"bandwidth has {len(bandwidth)} entries, expected state_dim={self.state_dim}"
            )
        if not all(b > 0 and np.isfinite(b) for b in bandwidth):
            raise InvalidArgumentError("all bandwidth entries must be finite and > 0")
        object.__setattr__(self, 'state_dim', int(self.state_dim))
        object.__setattr__(self, 'action_dim', int(self.action_dim))
        object.__setattr__(self, 'bandwidth', bandwidth)

    @classmethod
    def isotropic(cls, state_dim: int, action_dim: int, width: float) -> "KernelSpec":
        """Kernel with Sigma_H = width * I."""
        return cls(state_dim, action_dim, (float(width),) * int(state_dim))

    @property
    def inverse_bandwidth(self) -> np.ndarray:
        return 1.0 / np.asarray(self.bandwidth)

    def to_dict(self) -> dict:
        return {
            'state_dim': self.state_dim,
            'action_dim': self.action_dim,
            'bandwidth': list(self.bandwidth),
        }


@dataclass(frozen=True, eq=False)
class FunctionExpansion:
    """
    RKHS element h(.) = sum_j kappa(c_j, .) w_j.

    Immutable: centers and weights are read-only arrays of shape (M, n) and
    (M, p). Every "update" returns a new expansion.
    """
    spec: KernelSpec
    centers: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        centers = _as_rows(self.centers, self.spec.state_dim, "centers")
        weights = _as_rows(self.weights, self.spec.action_dim, "weights")
        if centers.shape[0] != weights.shape[0]:
            raise InvalidArgumentError(
                f"{centers.shape[0]} centers but {weights.shape[0]} weights"
            )
        object.__setattr__(self, 'centers', _frozen(centers))
        object.__setattr__(self, 'weights', _frozen(weights))

    @classmethod
    def zero(cls, spec: KernelSpec) -> "FunctionExpansion":
        return cls(spec, np.zeros((0, spec.state_dim)), np.zeros((0, spec.action_dim)))

    @property
    def model_order(self) -> int:
        return int(self.centers.shape[0])

    def __len__(self):
        return self.model_order

    def __call__(self, s) -> np.ndarray:
        return evaluate(self, s)

    def scaled(self, alpha: float) -> "FunctionExpansion":
        return FunctionExpansion(self.spec, self.centers, alpha * self.weights)

    def concatenate(self, other: "FunctionExpansion") -> "FunctionExpansion":
        """Sum of two expansions, kept as the union of both dictionaries."""
        _check_same_spec(self, other)
        return FunctionExpansion(
            self.spec,
            np.vstack([self.centers, other.centers]),
            np.vstack([self.weights, other.weights]),
        )

    def rkhs_norm(self) -> float:
        return float(np.sqrt(max(inner_product(self, self), 0.0)))

    def to_dict(self) -> dict:
        data = self.spec.to_dict()
        data['centers'] = self.centers.tolist()
        data['weights'] = self.weights.tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FunctionExpansion":
        spec = KernelSpec(data['state_dim'], data['action_dim'], tuple(data['bandwidth']))
        return cls(spec, data.get('centers', []), data.get('weights', []))


def _check_same_spec(h: FunctionExpansion, g: FunctionExpansion):
    if h.spec != g.spec:
        raise SpecMismatchError(f"expansions use different kernels: {h.spec} vs {g.spec}")


def kernel_eval(spec: KernelSpec, s, s_prime) -> float:
    """Scalar Gaussian kernel value in (0, 1]; equals 1 iff s == s_prime."""
    s = _as_vector(s, spec.state_dim, "state")
    s_prime = _as_vector(s_prime, spec.state_dim, "state")
    diff = s - s_prime
    return float(np.exp(-0.5 * np.sum(diff * diff * spec.inverse_bandwidth)))


def gram(spec: KernelSpec, first, second) -> np.ndarray:
    """Scalar Gram matrix K[i, j] = kappa(first[i], second[j])."""
    first = _as_rows(first, spec.state_dim, "first dictionary")
    second = _as_rows(second, spec.state_dim, "second dictionary")
    if first.shape[0] == 0 or second.shape[0] == 0:
        return np.zeros((first.shape[0], second.shape[0]))
    scale = np.sqrt(spec.inverse_bandwidth)
    quad = cdist(first * scale, second * scale, metric='sqeuclidean')
    return np.exp(-0.5 * quad)


def evaluate(h: FunctionExpansion, s) -> np.ndarray:
    """Action mean h(s) = sum_j kappa(c_j, s) w_j."""
    s = _as_vector(s, h.spec.state_dim, "state")
    if h.model_order == 0:
        return np.zeros(h.spec.action_dim)
    k = gram(h.spec, h.centers, s[None, :])[:, 0]
    return k @ h.weights


def inner_product(h: FunctionExpansion, g: FunctionExpansion) -> float:
    """<h, g>_H = sum_{j,l} kappa(c_j, c_l) w_j^T v_l."""
    _check_same_spec(h, g)
    if h.model_order == 0 or g.model_order == 0:
        return 0.0
    K = gram(h.spec, h.centers, g.centers)
    return float(np.sum(K * (h.weights @ g.weights.T)))


def append(h: FunctionExpansion, center, weight) -> FunctionExpansion:
    """h + kappa(center, .) weight, model order + 1 (no compression)."""
    center = _as_vector(center, h.spec.state_dim, "center")
    weight = _as_vector(weight, h.spec.action_dim, "weight")
    return FunctionExpansion(
        h.spec,
        np.vstack([h.centers, center[None, :]]),
        np.vstack([h.weights, weight[None, :]]),
    )


def unit_section(spec: KernelSpec, s, coordinate: int) -> FunctionExpansion:
    """The kernel section kappa(s, .) e_i, whose inner product with h is h(s)[i]."""
    if not 0 <= coordinate < spec.action_dim:
        raise InvalidArgumentError(f"coordinate {coordinate} out of range for p={spec.action_dim}")
    weight = np.zeros(spec.action_dim)
    weight[coordinate] = 1.0
    return FunctionExpansion(spec, _as_vector(s, spec.state_dim, "state")[None, :], weight[None, :])


def merge_duplicates(h: FunctionExpansion) -> FunctionExpansion:
    """Sum the weights of identical centers; the represented function is unchanged."""
    if h.model_order < 2:
        return h
    unique, inverse = np.unique(h.centers, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    weights = np.zeros((unique.shape[0], h.spec.action_dim))
    np.add.at(weights, inverse, h.weights)
    return FunctionExpansion(h.spec, unique, weights)


def difference_norm(h: FunctionExpansion, g: FunctionExpansion) -> float:
    """||h - g||_H over the union dictionary, clamped at zero before the root."""
    _check_same_spec(h, g)
    diff = h.concatenate(g.scaled(-1.0))
    return diff.rkhs_norm()


def combination(terms: Sequence[Tuple[float, FunctionExpansion]],
                spec: Optional[KernelSpec] = None) -> FunctionExpansion:
    """Linear combination sum_i alpha_i h_i as one concatenated expansion."""
    if not terms:
        if spec is None:
            raise InvalidArgumentError("an empty combination needs a kernel spec")
        return FunctionExpansion.zero(spec)
    result = terms[0][1].scaled(terms[0][0])
    for alpha, h in terms[1:]:
        result = result.concatenate(h.scaled(alpha))
    return result
