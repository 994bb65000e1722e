"""Evaluation metrics for learned representations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coding_rate import as_partition, check_features, normalize_columns

COLLAPSE_RATIO = 0.05


def principal_angles(U, V) -> np.ndarray:
    """Principal angles (ascending, radians) between two orthonormal bases."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if V.ndim == 1:
        V = V[:, None]
    s = np.linalg.svd(U.T @ V, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, 0.0, 1.0)))


def orthonormal_basis(X, rank=None, rel_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of ``span(X)`` via SVD."""
    U, s, _ = np.linalg.svd(np.asarray(X, dtype=np.float64), full_matrices=False)
    if rank is None:
        rank = int(np.count_nonzero(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :rank]


def block_diagonality(Z, part) -> float:
    """Share of off-diagonal ``|cos|`` mass that lies inside classes.

    1.0 when classes are mutually orthogonal; also 1.0 for ``k = 1`` and when
    there is no off-diagonal mass at all.
    """
    Z = normalize_columns(check_features(Z))
    part = as_partition(part, Z.shape[1])
    if part.k == 1:
        return 1.0
    G = np.abs(Z.T @ Z)
    np.fill_diagonal(G, 0.0)
    total = G.sum()
    if total == 0:
        return 1.0
    same = part.labels[:, None] == part.labels[None, :]
    return float(G[same].sum() / total)


def per_class_spectrum(Z, part) -> list:
    """Descending singular values of each class block."""
    Z = check_features(Z)
    part = as_partition(part, Z.shape[1])
    return [np.linalg.svd(Z[:, part.members(j)], compute_uv=False) for j in range(part.k)]


def is_collapsed(spectrum, ratio: float = COLLAPSE_RATIO) -> bool:
    """Second singular value below ``ratio`` times the first."""
    if len(spectrum) < 2 or spectrum[0] == 0:
        return True
    return bool(spectrum[1] / spectrum[0] < ratio)


def accuracy(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    return float(np.mean(pred == labels)) if labels.size else 0.0


@dataclass
class MetricsRecord:
    R: float = float("nan")
    Rc: float = float("nan")
    dR: float = float("nan")
    accuracy: float = float("nan")
    block_diagonality: float = float("nan")
    principal_angles: list = field(default_factory=list)
    spectra: list = field(default_factory=list)

    def __post_init__(self):
        bd = self.block_diagonality
        if not np.isnan(bd) and not (0.0 <= bd <= 1.0 + 1e-12):
            raise ValueError("block-diagonality score must lie in [0, 1]")
        for a in self.principal_angles:
            if not (0.0 <= a <= np.pi / 2 + 1e-12):
                raise ValueError("principal angles must lie in [0, pi/2]")

    def rows(self) -> list:
        """Flat ``(name, value)`` pairs in a fixed order."""
        out = [
            ("R", self.R),
            ("Rc", self.Rc),
            ("dR", self.dR),
            ("accuracy", self.accuracy),
            ("block_diagonality", self.block_diagonality),
        ]
        for i, a in enumerate(self.principal_angles):
            out.append((f"max_principal_angle_{i}", a))
        for j, s in enumerate(self.spectra):
            for i, v in enumerate(s):
                out.append((f"class{j}_sv{i}", float(v)))
        return out
