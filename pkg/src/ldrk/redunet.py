"""Forward-constructed ReduNet: every layer is one projected gradient ascent
step on the rate reduction, with operators built from the current features.

During construction the class membership of each training column is known
and the compression term uses hard labels.  At inference the labels are
replaced by a softmax over the residual norms ``||C_j z||``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg
from scipy.special import softmax

from .coding_rate import (
    Partition,
    RateParams,
    _class_weights,
    _spd_factor,
    alpha_for,
    as_partition,
    check_features,
    normalize_columns,
    rate_terms,
)
from .errors import DegenerateInput, ShapeError


@dataclass
class ReduLayer:
    E: np.ndarray
    C: np.ndarray  # (k, d, d)
    eta: float
    lam: float
    gamma: np.ndarray  # per-class weights of the compression term

    @property
    def k(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class BuildConfig:
    num_layers: int = 30
    eta: float = 0.5
    lam: float = 1.0
    params: RateParams = field(default_factory=RateParams)
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.eta < 0 or self.lam <= 0:
            raise ValueError("eta must be >= 0 and lam > 0")


class RateRecord(NamedTuple):
    layer: int
    R: float
    Rc: float
    dR: float


@dataclass
class ReduNetModel:
    layers: list
    d: int
    k: int
    params: RateParams
    class_subspaces: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def eta(self) -> float:
        return self.layers[0].eta

    @property
    def lam(self) -> float:
        return self.layers[0].lam


def expansion_operator(Z, alpha: float) -> np.ndarray:
    """``alpha (I + alpha Z Z^T)^{-1}``, symmetrized."""
    Z = check_features(Z)
    if not alpha > 0:
        raise DegenerateInput("alpha must be positive")
    d = Z.shape[0]
    factor = _spd_factor(np.eye(d) + alpha * (Z @ Z.T))
    E = alpha * linalg.cho_solve(factor, np.eye(d))
    return 0.5 * (E + E.T)


def compression_operators(Z, part, params: RateParams) -> np.ndarray:
    """Stack of per-class resolvents, shape ``(k, d, d)``.

    An empty class gets ``alpha_1 * I`` with alpha resolved as if the class
    held a single sample.
    """
    Z = check_features(Z)
    d, n = Z.shape
    part = as_partition(part, n)
    C = np.empty((part.k, d, d))
    for j in range(part.k):
        idx = part.members(j)
        if idx.size == 0:
            C[j] = alpha_for(params, d, 1) * np.eye(d)
        else:
            C[j] = expansion_operator(Z[:, idx], alpha_for(params, d, idx.size))
    return C


def soft_assignment(z, C, lam: float) -> np.ndarray:
    """Softmax of ``-lam * ||C_j z||`` over classes.

    ``z`` may be a single vector ``(d,)`` or a batch ``(d, n)``; the result has
    shape ``(k,)`` or ``(k, n)``.
    """
    if lam <= 0:
        raise DegenerateInput("softmax temperature must be positive")
    C = np.asarray(C)
    dist = np.linalg.norm(np.einsum("kij,j...->ki...", C, z), axis=1)
    return softmax(-lam * dist, axis=0)


def _step_direction(Z: np.ndarray, layer: ReduLayer, pi: np.ndarray) -> np.ndarray:
    CZ = np.einsum("kij,jn->kin", layer.C, Z)
    compress = np.einsum("k,kn,kin->in", layer.gamma, pi, CZ)
    return layer.E @ Z - compress


def layer_forward(z, layer: ReduLayer, pi: Optional[np.ndarray] = None) -> np.ndarray:
    """One ascent step followed by projection onto the sphere.

    ``pi`` overrides the soft class assignment (hard labels during
    construction); by default it comes from :func:`soft_assignment`.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[:, None] if single else z
    if Z.shape[0] != layer.E.shape[0]:
        raise ShapeError(f"layer expects dimension {layer.E.shape[0]}, got {Z.shape[0]}")
    if np.any(np.linalg.norm(Z, axis=0) == 0):
        raise DegenerateInput("zero feature vector")
    if pi is None:
        pi = soft_assignment(Z, layer.C, layer.lam)
    out = normalize_columns(Z + layer.eta * _step_direction(Z, layer, pi))
    return out[:, 0] if single else out


def _one_hot(part: Partition) -> np.ndarray:
    pi = np.zeros((part.k, part.n))
    pi[part.labels, np.arange(part.n)] = 1.0
    return pi


def class_bases(Z: np.ndarray, part: Partition, rel_tol: float = 0.2, cap: Optional[int] = None) -> list:
    """Leading left singular vectors of each class, one basis per class."""
    d = Z.shape[0]
    if cap is None:
        cap = max(1, d // part.k)
    bases = []
    for j in range(part.k):
        idx = part.members(j)
        if idx.size == 0:
            bases.append(np.zeros((d, 0)))
            continue
        U, s, _ = np.linalg.svd(Z[:, idx], full_matrices=False)
        rank = int(np.count_nonzero(s >= rel_tol * s[0])) if s[0] > 0 else 0
        bases.append(U[:, : min(rank, cap)])
    return bases


def build_redunet(X, part, cfg: BuildConfig = BuildConfig()) -> tuple[ReduNetModel, np.ndarray]:
    """Unroll ``cfg.num_layers`` ascent steps on the training features.

    Returns the model and the final training features.
    """
    Z = check_features(X, normalized=True, tol=1e-8)
    d, n = Z.shape
    part = as_partition(part, n)
    params = cfg.params
    weights = _class_weights(part, params)
    pi = _one_hot(part)
    layers = []
    trace = [RateRecord(0, *rate_terms(Z, part, params))]
    for ell in range(cfg.num_layers):
        layer = ReduLayer(
            E=expansion_operator(Z, alpha_for(params, d, n)),
            C=compression_operators(Z, part, params),
            eta=cfg.eta,
            lam=cfg.lam,
            gamma=weights,
        )
        Z = layer_forward(Z, layer, pi=pi)
        layers.append(layer)
        trace.append(RateRecord(ell + 1, *rate_terms(Z, part, params)))
    model = ReduNetModel(
        layers=layers,
        d=d,
        k=part.k,
        params=params,
        class_subspaces=class_bases(Z, part),
        trace=trace,
    )
    return model, Z


def forward(model: ReduNetModel, x) -> tuple[np.ndarray, list]:
    """Run stored layers with softmax membership.

    Returns the final features and the per-layer assignment matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    Z = check_features(x[:, None] if single else x)
    assignments = []
    for layer in model.layers:
        pi = soft_assignment(Z, layer.C, layer.lam)
        assignments.append(pi[:, 0] if single else pi)
        Z = layer_forward(Z, layer, pi=pi)
    return (Z[:, 0] if single else Z), assignments


def nearest_subspace_classify(model: ReduNetModel, z) -> np.ndarray:
    """Class with the largest projection norm; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[:, None] if single else z
    if not model.class_subspaces:
        raise DegenerateInput("model has no class subspaces")
    scores = np.stack([np.linalg.norm(U.T @ Z, axis=0) for U in model.class_subspaces])
    labels = np.argmax(scores, axis=0)
    return int(labels[0]) if single else labels


def layer_rate_trace(model: ReduNetModel, X, part) -> list:
    """Rate terms at every layer boundary, applying layers with hard labels."""
    Z = check_features(X)
    part = as_partition(part, Z.shape[1])
    pi = _one_hot(part)
    records = [RateRecord(0, *rate_terms(Z, part, model.params))]
    for ell, layer in enumerate(model.layers):
        Z = layer_forward(Z, layer, pi=pi)
        records.append(RateRecord(ell + 1, *rate_terms(Z, part, model.params)))
    return records
