"""Closed-loop transcription with a linear encoder and decoder.

The encoder ``f`` (``d x D``, orthonormal rows) maps data to unit-norm
features, the decoder ``g`` (``D x d``) lifts features back::

    X --f--> Z --g--> Xhat --f--> Zhat

The game utility is ``dR(Z) + dR(Zhat) + dR(Z, Zhat)``.  Rounds alternate a
decoder phase (``steps_g`` descent steps) and an encoder phase (``steps_f``
Riemannian ascent steps, each followed by a polar retraction onto the
Stiefel manifold).  Every step uses backtracking so a phase never moves its
objective the wrong way.

The incremental variant adds ``rho * dR(Z_old, f(g(Z_old)))``: the decoder
minimizes it, the encoder subtracts it, so both players are pulled towards
keeping old memories a fixed point of the loop.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .coding_rate import (
    RateParams,
    as_partition,
    check_features,
    pairwise_rate_reduction,
    pairwise_rate_reduction_gradient,
    rate_reduction,
    rate_reduction_gradient,
)
from .errors import DegenerateInput, DivergenceError, ShapeError

ARMIJO_C = 1e-4
DECODER_OBJECTIVES = ("classwise_pair", "pair", "full")
MAX_BACKTRACK = 30


@dataclass(frozen=True)
class GameConfig:
    rounds: int = 100
    steps_g: int = 5
    steps_f: int = 1
    lr_g: float = 1.0
    lr_f: float = 1.0
    rho: float = 0.0
    params: RateParams = field(default_factory=RateParams)
    seed: int = 0
    detach_decoded: bool = True
    decoder_objective: str = "classwise_pair"
    detect: bool = True

    def __post_init__(self):
        if self.rounds < 0 or self.steps_g < 0 or self.steps_f < 0:
            raise ValueError("round and step counts must be non-negative")
        if self.lr_g <= 0 or self.lr_f <= 0 or self.rho < 0:
            raise ValueError("learning rates must be positive and rho non-negative")
        if self.decoder_objective not in DECODER_OBJECTIVES:
            raise ValueError(f"unknown decoder_objective {self.decoder_objective!r}")


class RoundRecord(NamedTuple):
    round: int
    dR_Z: float
    dR_Zhat: float
    dR_pair: float
    constraint_residual: float
    utility_start: float
    utility_after_g: float
    utility_after_f: float
    g_objective_start: float
    g_objective_end: float
    f_objective_start: float
    f_objective_end: float
    orthonormality_error: float


@dataclass
class TranscriptionState:
    f: np.ndarray
    g: np.ndarray
    iter: int = 0
    history: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.f.shape[0]

    @property
    def D(self) -> int:
        return self.f.shape[1]

    def copy(self) -> "TranscriptionState":
        return copy.deepcopy(self)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.f @ self.f.T - np.eye(self.d))))


class Utility(NamedTuple):
    total: float
    dR_Z: float
    dR_Zhat: float
    dR_pair: float


def init_state(D: int, d: int, seed: int) -> TranscriptionState:
    """Encoder from QR of a seeded Gaussian, decoder its transpose."""
    if not 0 < d < D:
        raise ShapeError(f"need 0 < d < D, got d={d}, D={D}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))
    Q, _ = np.linalg.qr(rng.standard_normal((D, d)))
    f = np.ascontiguousarray(Q.T)
    return TranscriptionState(f=f, g=f.T.copy())


def _normalize(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Y, axis=0)
    if np.any(norms == 0):
        raise DegenerateInput("zero feature column cannot be normalized")
    return Y / norms, norms


def _normalize_backward(G: np.ndarray, Z: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (G - Z * np.sum(Z * G, axis=0)) / norms


def encode(state: TranscriptionState, X) -> np.ndarray:
    X = check_features(X)
    if X.shape[0] != state.D:
        raise ShapeError(f"encoder expects dimension {state.D}, got {X.shape[0]}")
    return _normalize(state.f @ X)[0]


def decode(state: TranscriptionState, Z) -> np.ndarray:
    Z = check_features(Z)
    if Z.shape[0] != state.d:
        raise ShapeError(f"decoder expects dimension {state.d}, got {Z.shape[0]}")
    return state.g @ Z


def game_utility(state: TranscriptionState, X, part, params: RateParams) -> Utility:
    """Three-term utility and its components."""
    X = check_features(X)
    part = as_partition(part, X.shape[1])
    Z = encode(state, X)
    Zhat = encode(state, decode(state, Z))
    a = rate_reduction(Z, part, params)
    b = rate_reduction(Zhat, part, params)
    c = pairwise_rate_reduction(Z, Zhat, params)
    return Utility(a + b + c, a, b, c)


def fixed_point_residual(state: TranscriptionState, Z_ref, params: RateParams = RateParams()) -> float:
    """``dR(Z_ref, f(g(Z_ref)))``; zero iff the loop reproduces ``Z_ref``."""
    Z_ref = check_features(Z_ref)
    if Z_ref.shape[1] == 0:
        return 0.0
    return pairwise_rate_reduction(Z_ref, encode(state, decode(state, Z_ref)), params)


class _Game:
    """Objective and gradients for one dataset (plus optional old memory)."""

    def __init__(self, X, part, params, Z_old=None, rho=0.0):
        self.X = X
        self.part = part
        self.params = params
        self.Z_old = Z_old if Z_old is not None and Z_old.shape[1] else None
        self.rho = rho

    def _classwise_pair(self, Z, Zhat) -> float:
        total = 0.0
        for j in range(self.part.k):
            idx = self.part.members(j)
            if idx.size:
                total += pairwise_rate_reduction(Z[:, idx], Zhat[:, idx], self.params)
        return total

    def utility(self, f, g, Xhat=None, terms="full") -> float:
        """Encoder utility (``terms="full"``) or a decoder discrepancy."""
        Z = _normalize(f @ self.X)[0]
        if Xhat is None:
            Xhat = g @ Z
        Zhat = _normalize(f @ Xhat)[0]
        p = self.params
        if terms == "classwise_pair":
            return self._classwise_pair(Z, Zhat)
        pair = pairwise_rate_reduction(Z, Zhat, p)
        if terms == "pair":
            return pair
        return rate_reduction(Z, self.part, p) + rate_reduction(Zhat, self.part, p) + pair

    def residual(self, f, g) -> float:
        if self.Z_old is None:
            return 0.0
        Zh = _normalize(f @ (g @ self.Z_old))[0]
        return pairwise_rate_reduction(self.Z_old, Zh, self.params)

    def gradients(self, f, g, Xhat=None, terms="full") -> tuple[np.ndarray, np.ndarray]:
        """``(dU/df, dU/dg)``; with ``Xhat`` given it is held fixed."""
        p = self.params
        Y = f @ self.X
        Z, y_norms = _normalize(Y)
        detached = Xhat is not None
        if not detached:
            Xhat = g @ Z
        Yhat = f @ Xhat
        Zhat, yh_norms = _normalize(Yhat)
        if terms == "classwise_pair":
            G_Z = np.zeros_like(Z)
            G_Zhat = np.zeros_like(Zhat)
            for j in range(self.part.k):
                idx = self.part.members(j)
                if idx.size:
                    G_Z[:, idx], G_Zhat[:, idx] = pairwise_rate_reduction_gradient(Z[:, idx], Zhat[:, idx], p)
        elif terms == "pair":
            G_Z, G_Zhat = pairwise_rate_reduction_gradient(Z, Zhat, p)
        else:
            pair_Z, pair_Zhat = pairwise_rate_reduction_gradient(Z, Zhat, p)
            G_Z = rate_reduction_gradient(Z, self.part, p) + pair_Z
            G_Zhat = rate_reduction_gradient(Zhat, self.part, p) + pair_Zhat
        G_Yhat = _normalize_backward(G_Zhat, Zhat, yh_norms)
        grad_g = f.T @ G_Yhat @ Z.T
        if not detached:
            G_Z = G_Z + g.T @ (f.T @ G_Yhat)
        grad_f = _normalize_backward(G_Z, Z, y_norms) @ self.X.T + G_Yhat @ Xhat.T
        return grad_f, grad_g

    def residual_gradients(self, f, g) -> tuple[np.ndarray, np.ndarray]:
        Zo = self.Z_old
        Xh = g @ Zo
        Zh, norms = _normalize(f @ Xh)
        _, G_Zh = pairwise_rate_reduction_gradient(Zo, Zh, self.params)
        G_Yh = _normalize_backward(G_Zh, Zh, norms)
        return G_Yh @ Xh.T, f.T @ G_Yh @ Zo.T


def retract(f: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal rows (polar factor)."""
    U, _, Vt = np.linalg.svd(f, full_matrices=False)
    return U @ Vt


def _tangent(f: np.ndarray, G: np.ndarray) -> np.ndarray:
    S = G @ f.T
    return G - 0.5 * (S + S.T) @ f


def _check_finite(value, state):
    if not np.isfinite(value):
        raise DivergenceError("non-finite game utility", last_good=state)


def _g_phase(game: _Game, f, g, cfg: GameConfig):
    rho = cfg.rho if game.Z_old is not None else 0.0
    terms = cfg.decoder_objective

    def objective(gg):
        val = game.utility(f, gg, terms=terms)
        if rho:
            val += rho * game.residual(f, gg)
        return val

    start = current = objective(g)
    for _ in range(cfg.steps_g):
        _, grad = game.gradients(f, g, terms=terms)
        if rho:
            grad = grad + rho * game.residual_gradients(f, g)[1]
        sq = float(np.sum(grad * grad))
        if sq == 0:
            break
        t = cfg.lr_g
        for _ in range(MAX_BACKTRACK):
            cand = g - t * grad
            val = objective(cand)
            if np.isfinite(val) and val <= current - ARMIJO_C * t * sq:
                g, current = cand, val
                break
            t *= 0.5
        else:
            break
    return g, start, current


def _f_phase(game: _Game, f, g, cfg: GameConfig):
    rho = cfg.rho if game.Z_old is not None else 0.0
    Xhat = None
    if cfg.detach_decoded:
        # the encoder judges the decoder's current output as fixed data
        Xhat = g @ _normalize(f @ game.X)[0]

    def objective(ff):
        val = game.utility(ff, g, Xhat)
        if rho:
            val -= rho * game.residual(ff, g)
        return val

    def ascend(f0):
        f1, current = f0, objective(f0)
        for _ in range(cfg.steps_f):
            grad, _ = game.gradients(f1, g, Xhat)
            if rho:
                grad = grad - rho * game.residual_gradients(f1, g)[0]
            xi = _tangent(f1, grad)
            sq = float(np.sum(xi * xi))
            if sq == 0:
                break
            t = cfg.lr_f
            for _ in range(MAX_BACKTRACK):
                cand = retract(f1 + t * xi)
                val = objective(cand)
                if np.isfinite(val) and val >= current + ARMIJO_C * t * sq:
                    f1, current = cand, val
                    break
                t *= 0.5
            else:
                break
        return f1, current

    start = objective(f)
    best_f, best = ascend(f)
    if cfg.detect:
        probe_f, probe = ascend(_detection_projection(game, f, g))
        if probe > best:
            best_f, best = probe_f, probe
    return best_f, start, best


def _detection_projection(game: _Game, f, g) -> np.ndarray:
    """Encoder whose rows span the dominant joint subspace of data and decodings.

    When data and decodings each span at most ``k`` dimensions with
    ``2k <= d``, this encoder sees every difference between the two.
    """
    parts = [game.X, g @ _normalize(f @ game.X)[0]]
    if game.Z_old is not None and game.rho:
        parts.append(g @ game.Z_old)
    U, _, _ = np.linalg.svd(np.concatenate(parts, axis=1), full_matrices=False)
    d = f.shape[0]
    basis = U[:, :d]
    # keep the current encoder's orientation where the subspaces overlap
    W, _, Vt = np.linalg.svd(f @ basis, full_matrices=False)
    return (W @ Vt) @ basis.T


def _play(state: TranscriptionState, game: _Game, cfg: GameConfig) -> TranscriptionState:
    f, g = state.f.copy(), state.g.copy()
    history = list(state.history)
    it = state.iter
    for _ in range(cfg.rounds):
        last_good = TranscriptionState(f.copy(), g.copy(), it, list(history))
        u0 = game.utility(f, g)
        _check_finite(u0, last_good)
        g, gs, ge = _g_phase(game, f, g, cfg)
        u1 = game.utility(f, g)
        _check_finite(u1, last_good)
        f, fs, fe = _f_phase(game, f, g, cfg)
        it += 1
        tmp = TranscriptionState(f, g, it)
        util = game_utility(tmp, game.X, game.part, game.params)
        _check_finite(util.total, last_good)
        history.append(
            RoundRecord(
                round=it,
                dR_Z=util.dR_Z,
                dR_Zhat=util.dR_Zhat,
                dR_pair=util.dR_pair,
                constraint_residual=game.residual(f, g),
                utility_start=u0,
                utility_after_g=u1,
                utility_after_f=util.total,
                g_objective_start=gs,
                g_objective_end=ge,
                f_objective_start=fs,
                f_objective_end=fe,
                orthonormality_error=tmp.orthonormality_error(),
            )
        )
    return TranscriptionState(f, g, it, history)


def train_transcription(X, part, cfg: GameConfig = GameConfig(), d: int = 8, state: Optional[TranscriptionState] = None):
    """Play ``cfg.rounds`` rounds of the maximin game on ``X`` (``D x n``).

    Starts from ``state`` when given, else from :func:`init_state` with
    ``cfg.seed`` and feature dimension ``d``.
    """
    X = check_features(X)
    part = as_partition(part, X.shape[1])
    if state is None:
        state = init_state(X.shape[0], d, cfg.seed)
    return _play(state, _Game(X, part, cfg.params), cfg)


def incremental_step(state: TranscriptionState, X_new, part_new, Z_old, cfg: GameConfig) -> TranscriptionState:
    """Learn new classes while penalizing loss of the old memory ``Z_old``.

    With ``cfg.rho == 0`` or an empty ``Z_old`` this is exactly
    :func:`train_transcription` on the new data started from ``state``.
    """
    X_new = check_features(X_new)
    part_new = as_partition(part_new, X_new.shape[1])
    Z_old = check_features(Z_old) if Z_old is not None else None
    if Z_old is not None and Z_old.shape[1] and Z_old.shape[0] != state.d:
        raise ShapeError("old memory must live in the feature space")
    return _play(state, _Game(X_new, part_new, cfg.params, Z_old, cfg.rho), cfg)


def decoder_phase(state: TranscriptionState, X, part, cfg: GameConfig = GameConfig()) -> TranscriptionState:
    """One decoder phase with the encoder held fixed."""
    X = check_features(X)
    game = _Game(X, as_partition(part, X.shape[1]), cfg.params)
    g, _, _ = _g_phase(game, state.f, state.g, cfg)
    return TranscriptionState(state.f.copy(), g, state.iter, list(state.history))


def encoder_phase(state: TranscriptionState, X, part, cfg: GameConfig = GameConfig()) -> TranscriptionState:
    """One encoder phase with the decoder held fixed."""
    X = check_features(X)
    game = _Game(X, as_partition(part, X.shape[1]), cfg.params)
    f, _, _ = _f_phase(game, state.f, state.g, cfg)
    return TranscriptionState(f, state.g.copy(), state.iter, list(state.history))
