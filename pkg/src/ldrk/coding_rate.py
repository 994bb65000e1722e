"""Coding rates, rate reduction and their closed-form gradients.

Features are stored as columns: ``Z`` has shape ``(d, n)``.  The coding rate
of ``Z`` at precision ``epsilon`` is::

    R(Z) = 1/2 * logdet(I + alpha * Z @ Z.T)

and the rate reduction of a labelled feature set is ``R(Z) - Rc(Z)`` where
``Rc`` averages the rates of the individual classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DegenerateInput, InvalidMatrix, ShapeError

MIN_EPSILON = 1e-6


@dataclass(frozen=True)
class RateParams:
    """Quantization precision and the alpha convention.

    ``alpha=None`` selects the count-scaled convention
    ``alpha = d / (n * epsilon**2)`` resolved on the matrix a rate is applied
    to; a float fixes alpha regardless of shape.
    """

    epsilon: float = 0.5
    alpha: Optional[float] = None
    class_weighting: str = "uniform"
    skip_empty: bool = False

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon < MIN_EPSILON:
            raise DegenerateInput(f"epsilon must be >= {MIN_EPSILON}, got {self.epsilon}")
        if self.alpha is not None and not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DegenerateInput(f"fixed alpha must be positive, got {self.alpha}")
        if self.class_weighting not in ("uniform", "size"):
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")

    @property
    def count_scaled(self) -> bool:
        return self.alpha is None

    @classmethod
    def fixed(cls, alpha: float, **kw) -> "RateParams":
        return cls(alpha=float(alpha), **kw)


@dataclass(frozen=True, eq=False)
class Partition:
    """Hard assignment of ``n`` samples to ``k`` classes."""

    labels: np.ndarray
    k: int
    allow_empty: bool = False
    _members: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ShapeError("labels must be a 1-D array")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        k = int(self.k)
        if k <= 0:
            raise DegenerateInput("partition needs k >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "k", k)
        members = tuple(np.flatnonzero(labels == j) for j in range(k))
        if not self.allow_empty:
            empty = [j for j, m in enumerate(members) if m.size == 0]
            if empty:
                raise DegenerateInput(f"empty classes {empty}; pass allow_empty=True for incremental use")
        object.__setattr__(self, "_members", members)

    @classmethod
    def from_labels(cls, labels, k: Optional[int] = None, allow_empty: bool = False) -> "Partition":
        labels = np.asarray(labels, dtype=np.int64)
        if k is None:
            k = int(labels.max()) + 1 if labels.size else 1
        return cls(labels, k, allow_empty=allow_empty)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.labels, other.labels)

    __hash__ = None

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def members(self, j: int) -> np.ndarray:
        return self._members[j]

    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self._members], dtype=np.int64)

    def permuted(self, perm: Sequence[int]) -> "Partition":
        """Relabel class ``j`` as ``perm[j]``."""
        perm = np.asarray(perm, dtype=np.int64)
        return Partition(perm[self.labels], self.k, allow_empty=self.allow_empty)


def as_partition(part, n: Optional[int] = None) -> Partition:
    if not isinstance(part, Partition):
        part = Partition.from_labels(part)
    if n is not None and part.n != n:
        raise ShapeError(f"partition covers {part.n} samples, matrix has {n} columns")
    return part


def check_features(Z, normalized: bool = False, tol: float = 1e-9) -> np.ndarray:
    """Validate a ``(d, n)`` feature matrix and return it as float64."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InvalidMatrix("feature matrix has non-finite entries")
    if normalized and Z.shape[1]:
        norms = np.linalg.norm(Z, axis=0)
        if np.max(np.abs(norms - 1.0)) > tol:
            raise InvalidMatrix("columns are not unit-norm")
    return Z


def normalize_columns(Z: np.ndarray) -> np.ndarray:
    """Project every column onto the unit sphere."""
    norms = np.linalg.norm(Z, axis=0)
    if np.any(norms == 0):
        raise DegenerateInput("cannot normalize a zero column")
    return Z / norms


def alpha_for(params: RateParams, d: int, n: int) -> float:
    """Resolve alpha for a ``d x n`` matrix."""
    if n < 1:
        raise DegenerateInput("alpha is undefined for n = 0 samples")
    if params.alpha is not None:
        return float(params.alpha)
    return d / (n * params.epsilon**2)


def _gram_eigenvalues(Z: np.ndarray) -> np.ndarray:
    d, n = Z.shape
    gram = Z.T @ Z if n < d else Z @ Z.T
    return np.clip(linalg.eigvalsh(gram), 0.0, None)


def coding_rate(Z, alpha: float) -> float:
    """``1/2 logdet(I + alpha Z Z^T)`` via the eigenvalues of the smaller Gram."""
    Z = check_features(Z)
    if not alpha > 0:
        raise DegenerateInput("alpha must be positive")
    if Z.size == 0:
        return 0.0
    return 0.5 * float(np.sum(np.log1p(alpha * _gram_eigenvalues(Z))))


def rate(Z, params: RateParams) -> float:
    """Coding rate with alpha resolved from ``params`` on ``Z``'s shape."""
    Z = check_features(Z)
    if Z.shape[1] == 0:
        return 0.0
    return coding_rate(Z, alpha_for(params, *Z.shape))


def _class_weights(part: Partition, params: RateParams) -> np.ndarray:
    sizes = part.sizes()
    if params.class_weighting == "size":
        return sizes / max(part.n, 1)
    if params.skip_empty:
        k_eff = int(np.count_nonzero(sizes))
        if k_eff == 0:
            raise DegenerateInput("all classes are empty")
        return np.where(sizes > 0, 1.0 / k_eff, 0.0)
    return np.full(part.k, 1.0 / part.k)


def class_rates(Z, part, params: RateParams) -> np.ndarray:
    """Per-class coding rates; empty classes rate 0."""
    Z = check_features(Z)
    part = as_partition(part, Z.shape[1])
    out = np.zeros(part.k)
    for j in range(part.k):
        out[j] = rate(Z[:, part.members(j)], params)
    return out


def class_rate_average(Z, part, params: RateParams) -> float:
    """Average per-class rate ``Rc``; uniform ``1/k`` unless configured otherwise."""
    Z = check_features(Z)
    part = as_partition(part, Z.shape[1])
    weights = _class_weights(part, params)
    rates = class_rates(Z, part, params)
    total = 0.0
    for j in range(part.k):
        total += weights[j] * rates[j]
    return float(total)


def rate_terms(Z, part, params: RateParams) -> tuple[float, float, float]:
    """Return ``(R, Rc, R - Rc)``."""
    R = rate(Z, params)
    Rc = class_rate_average(Z, part, params)
    return R, Rc, R - Rc


def rate_reduction(Z, part, params: RateParams) -> float:
    return rate_terms(Z, part, params)[2]


def _spd_factor(A: np.ndarray):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise InvalidMatrix(f"Cholesky factorization failed: {exc}") from exc


def rate_gradient(Z, alpha: float) -> np.ndarray:
    """Gradient ``alpha (I + alpha Z Z^T)^{-1} Z`` of the coding rate."""
    Z = check_features(Z)
    if not alpha > 0:
        raise DegenerateInput("alpha must be positive")
    d, n = Z.shape
    if n == 0:
        return np.zeros((d, 0))
    if n < d:
        # push-through identity keeps the solve n x n
        factor = _spd_factor(np.eye(n) + alpha * (Z.T @ Z))
        return alpha * linalg.cho_solve(factor, Z.T).T
    factor = _spd_factor(np.eye(d) + alpha * (Z @ Z.T))
    return alpha * linalg.cho_solve(factor, Z)


def rate_reduction_gradient(Z, part, params: RateParams) -> np.ndarray:
    """Gradient of ``R(Z) - Rc(Z)`` with respect to every column of ``Z``."""
    Z = check_features(Z)
    d, n = Z.shape
    part = as_partition(part, n)
    grad = rate_gradient(Z, alpha_for(params, d, n))
    weights = _class_weights(part, params)
    for j in range(part.k):
        idx = part.members(j)
        if idx.size == 0:
            continue
        Zj = Z[:, idx]
        grad[:, idx] -= weights[j] * rate_gradient(Zj, alpha_for(params, d, idx.size))
    return grad


def pairwise_rate_reduction(Z, Zhat, params: RateParams) -> float:
    """``R(Z u Zhat) - (R(Z) + R(Zhat)) / 2``."""
    Z = check_features(Z)
    Zhat = check_features(Zhat)
    if Z.shape[0] != Zhat.shape[0]:
        raise ShapeError(f"dimension mismatch: {Z.shape[0]} vs {Zhat.shape[0]}")
    union = np.concatenate([Z, Zhat], axis=1)
    return rate(union, params) - 0.5 * (rate(Z, params) + rate(Zhat, params))


def pairwise_rate_reduction_gradient(Z, Zhat, params: RateParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`pairwise_rate_reduction` w.r.t. ``Z`` and ``Zhat``."""
    Z = check_features(Z)
    Zhat = check_features(Zhat)
    if Z.shape[0] != Zhat.shape[0]:
        raise ShapeError(f"dimension mismatch: {Z.shape[0]} vs {Zhat.shape[0]}")
    d, n = Z.shape
    m = Zhat.shape[1]
    union = np.concatenate([Z, Zhat], axis=1)
    g_union = rate_gradient(union, alpha_for(params, d, n + m))
    gZ = g_union[:, :n]
    gZhat = g_union[:, n:]
    if n:
        gZ = gZ - 0.5 * rate_gradient(Z, alpha_for(params, d, n))
    if m:
        gZhat = gZhat - 0.5 * rate_gradient(Zhat, alpha_for(params, d, m))
    return gZ, gZhat
