"""Linear self-attention as a truncated rate-gradient step.

Replacing the resolvent in ``alpha (I + alpha Z Z^T)^{-1} Z`` by its
first-order Neumann term gives ``alpha (Z - alpha Z (Z^T Z))``, which only
needs the token auto-correlation ``Z^T Z``.  Learnable maps on each factor
turn the step into a residual linear-attention layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coding_rate import check_features, rate_gradient
from .errors import DegenerateInput, ShapeError


@dataclass
class AttentionLayer:
    U_o: np.ndarray
    U_v: np.ndarray
    U_k: np.ndarray
    U_q: np.ndarray
    alpha: float

    def __post_init__(self):
        mats = [np.asarray(m, dtype=np.float64) for m in (self.U_o, self.U_v, self.U_k, self.U_q)]
        d = mats[0].shape[0]
        for m in mats:
            if m.shape != (d, d):
                raise ShapeError("attention maps must all be square with the same size")
            if not np.all(np.isfinite(m)):
                raise ValueError("attention maps must be finite")
        self.U_o, self.U_v, self.U_k, self.U_q = mats

    @classmethod
    def identity(cls, d: int, alpha: float) -> "AttentionLayer":
        eye = np.eye(d)
        return cls(eye, eye, eye, eye, alpha)

    @property
    def d(self) -> int:
        return self.U_o.shape[0]


def approx_rate_gradient(Z, alpha: float) -> np.ndarray:
    """``alpha * (Z - alpha * Z @ (Z.T @ Z))``; no linear solve."""
    Z = check_features(Z)
    if not alpha > 0:
        raise DegenerateInput("alpha must be positive")
    return alpha * (Z - alpha * Z @ (Z.T @ Z))


def _head(Z: np.ndarray, layer: AttentionLayer) -> np.ndarray:
    V = layer.U_v @ Z
    K = layer.U_k @ Z
    Q = layer.U_q @ Z
    return layer.U_o @ (Z - layer.alpha * V @ (K.T @ Q))


def attention_layer_forward(Z, layer: AttentionLayer) -> np.ndarray:
    """``Z + U_o [Z - alpha (U_v Z)(U_k Z)^T (U_q Z)]``, unnormalized."""
    Z = check_features(Z)
    if Z.shape[0] != layer.d:
        raise ShapeError(f"layer expects dimension {layer.d}, got {Z.shape[0]}")
    return Z + _head(Z, layer)


def multi_head_forward(Z, heads: list) -> np.ndarray:
    """Residual sum of several heads, each with its own output map."""
    Z = check_features(Z)
    out = Z.copy()
    for layer in heads:
        if Z.shape[0] != layer.d:
            raise ShapeError(f"head expects dimension {layer.d}, got {Z.shape[0]}")
        out += _head(Z, layer)
    return out


def approximation_error_profile(Z, alphas) -> list:
    """``(alpha * lambda_max(Z Z^T), relative Frobenius error)`` for each alpha."""
    Z = check_features(Z)
    lmax = float(np.linalg.eigvalsh(Z @ Z.T)[-1]) if Z.size else 0.0
    out = []
    for alpha in sorted(float(a) for a in alphas):
        exact = rate_gradient(Z, alpha)
        approx = approx_rate_gradient(Z, alpha)
        denom = np.linalg.norm(exact)
        err = np.linalg.norm(exact - approx) / denom if denom > 0 else 0.0
        out.append((alpha * lmax, float(err)))
    return out
