"""Shift-invariant ReduNet on multi-channel cyclic signals.

A sample is a real ``(C, T)`` array.  Treating every cyclic shift of every
sample as a feature makes the covariance block-circulant, so the expansion
and compression resolvents are block-circulant as well: under the unitary DFT
along time they become ``T`` independent ``C x C`` blocks.  All operators
here are stored and applied per frequency bin; :func:`densify` and
:func:`shift_augmented_matrix` rebuild the explicit dense objects for
testing.

Signals use the channel-major flattening ``vec(x)[c * T + t] = x[c, t]``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coding_rate import Partition, RateParams, _class_weights, alpha_for, as_partition
from .errors import DegenerateInput, InvalidMatrix, ShapeError
from .redunet import BuildConfig, RateRecord


def _check_signals(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"signals must have shape (C, T) or (n, C, T), got {x.shape}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError("signals need C >= 1 and T >= 1")
    if not np.all(np.isfinite(x)):
        raise InvalidMatrix("signal has non-finite entries")
    return x


def _rfft(x: np.ndarray) -> np.ndarray:
    return np.fft.rfft(x, axis=-1, norm="ortho")


def _irfft(xh: np.ndarray, T: int) -> np.ndarray:
    return np.fft.irfft(xh, n=T, axis=-1, norm="ortho")


def _mirror(half: np.ndarray, T: int) -> np.ndarray:
    """Extend ``T // 2 + 1`` rfft-bin blocks to all ``T`` bins by conjugation."""
    full = np.empty((T,) + half.shape[1:], dtype=complex)
    full[: half.shape[0]] = half
    for f in range(half.shape[0], T):
        full[f] = np.conj(half[T - f])
    return full


@dataclass
class SpectralOperator:
    """Block-circulant operator stored as one ``C x C`` block per frequency.

    ``blocks`` has shape ``(T, C, C)`` and satisfies
    ``blocks[f] == conj(blocks[-f])`` so its time-domain action is real.
    """

    blocks: np.ndarray
    alpha: float = 1.0

    @property
    def T(self) -> int:
        return self.blocks.shape[0]

    @property
    def C(self) -> int:
        return self.blocks.shape[1]

    @classmethod
    def identity(cls, C: int, T: int, alpha: float = 1.0) -> "SpectralOperator":
        return cls(np.broadcast_to(np.eye(C, dtype=complex), (T, C, C)).copy() * alpha, alpha)

    def half(self) -> np.ndarray:
        return self.blocks[: self.T // 2 + 1]

    def conjugate_symmetry_error(self) -> float:
        mirrored = np.conj(self.blocks[(-np.arange(self.T)) % self.T])
        return float(np.max(np.abs(self.blocks - mirrored)))


def shift(x, tau: int) -> np.ndarray:
    """Cyclic delay by ``tau`` taps: ``out[..., t] = x[..., t - tau]``."""
    return np.roll(np.asarray(x), tau, axis=-1)


def shift_augment(x) -> np.ndarray:
    """All ``T`` cyclic shifts of one ``(C, T)`` signal, shape ``(T, C, T)``."""
    x = _check_signals(x)[0]
    return np.stack([shift(x, tau) for tau in range(x.shape[1])])


def shift_augmented_matrix(samples) -> np.ndarray:
    """Dense ``(C*T, n*T)`` feature matrix of every shift of every sample."""
    x = _check_signals(samples)
    n, C, T = x.shape
    cols = [shift_augment(x[i]).reshape(T, C * T) for i in range(n)]
    return np.concatenate(cols, axis=0).T if cols else np.zeros((C * T, 0))


def frequency_covariance(samples) -> np.ndarray:
    """Per-bin channel covariance of the shift-augmented set, rfft bins only.

    Equals the diagonal blocks of ``F Z Z^T F^H`` for the dense augmented
    matrix ``Z`` and unitary DFT ``F``.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, C, T = x.shape
    xh = _rfft(x)  # (n, C, F)
    cov = T * np.einsum("ncf,ndf->fcd", xh, np.conj(xh))
    cov = 0.5 * (cov + np.conj(np.transpose(cov, (0, 2, 1))))
    cov[0] = cov[0].real
    if T % 2 == 0:
        cov[-1] = cov[-1].real
    return cov


def _resolvent_blocks(cov_half: np.ndarray, alpha: float, T: int) -> np.ndarray:
    C = cov_half.shape[1]
    eye = np.eye(C)
    half = alpha * np.linalg.solve(eye + alpha * cov_half, np.broadcast_to(eye, cov_half.shape))
    half = 0.5 * (half + np.conj(np.transpose(half, (0, 2, 1))))
    half[0] = half[0].real
    if T % 2 == 0:
        half[-1] = half[-1].real
    return _mirror(half, T)


def circulant_expansion(samples, alpha: float, shape: Optional[tuple] = None) -> SpectralOperator:
    """``alpha (I + alpha Z Z^T)^{-1}`` for the shift-augmented ``samples``.

    ``shape=(C, T)`` is required only when ``samples`` is empty.
    """
    if not alpha > 0:
        raise DegenerateInput("alpha must be positive")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        if shape is None:
            raise ShapeError("shape=(C, T) is required for an empty sample set")
        return SpectralOperator.identity(shape[0], shape[1], alpha)
    x = _check_signals(x)
    if shape is not None and tuple(shape) != x.shape[1:]:
        raise ShapeError(f"samples have shape {x.shape[1:]}, expected {tuple(shape)}")
    T = x.shape[2]
    return SpectralOperator(_resolvent_blocks(frequency_covariance(x), alpha, T), alpha)


def _spectral_alpha(params: RateParams, C: int, T: int, n: int) -> float:
    # n samples stand for n*T augmented columns of dimension C*T
    return alpha_for(params, C * T, max(n, 1) * T)


def circulant_compressions(samples, part, params: RateParams) -> list:
    """Per-class :func:`circulant_expansion`; empty classes get ``alpha I``."""
    x = _check_signals(samples)
    n, C, T = x.shape
    part = as_partition(part, n)
    ops = []
    for j in range(part.k):
        idx = part.members(j)
        alpha = _spectral_alpha(params, C, T, idx.size)
        ops.append(circulant_expansion(x[idx], alpha, shape=(C, T)))
    return ops


def spectral_apply(op: SpectralOperator, x) -> np.ndarray:
    """Apply a block-circulant operator through the DFT.

    Accepts one signal ``(C, T)`` or a batch ``(n, C, T)``.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    arr = _check_signals(arr)
    if arr.shape[1:] != (op.C, op.T):
        raise ShapeError(f"operator acts on {(op.C, op.T)} signals, got {arr.shape[1:]}")
    xh = _rfft(arr)
    yh = np.einsum("fcd,ndf->ncf", op.half(), xh)
    y = _irfft(yh, op.T)
    return y[0] if single else y


def densify(op: SpectralOperator) -> np.ndarray:
    """Explicit real ``(C*T, C*T)`` block-circulant matrix."""
    T, C = op.T, op.C
    kernel = np.fft.ifft(op.blocks, axis=0).real  # (T, C, C): first column of each circulant block
    lag = (np.arange(T)[:, None] - np.arange(T)[None, :]) % T
    dense = np.empty((C * T, C * T))
    for c in range(C):
        for d in range(C):
            dense[c * T : (c + 1) * T, d * T : (d + 1) * T] = kernel[lag, c, d]
    return dense


@dataclass
class SpectralLayer:
    E: SpectralOperator
    C: list
    eta: float
    lam: float
    gamma: np.ndarray

    @property
    def k(self) -> int:
        return len(self.C)


@dataclass
class SpectralClassBasis:
    """Orthonormal class subspace stored per frequency bin.

    ``vectors[f]`` is a ``(C, r_f)`` complex matrix; bins ``f`` and ``-f``
    carry conjugate vectors so the subspace is real.
    """

    vectors: list

    @property
    def rank(self) -> int:
        return int(sum(v.shape[1] for v in self.vectors))

    def projection_norm(self, x) -> np.ndarray:
        x = _check_signals(x)
        xh = np.fft.fft(x, axis=-1, norm="ortho")  # (n, C, T)
        total = np.zeros(x.shape[0])
        for f, V in enumerate(self.vectors):
            if V.shape[1]:
                total += np.sum(np.abs(np.conj(V.T) @ xh[:, :, f].T) ** 2, axis=0)
        return np.sqrt(total)

    def dense(self) -> np.ndarray:
        """Real orthonormal ``(C*T, rank)`` basis spanning the same subspace."""
        cols = []
        T = len(self.vectors)
        for f, V in enumerate(self.vectors):
            phase = np.exp(2j * np.pi * f * np.arange(T) / T) / np.sqrt(T)
            for r in range(V.shape[1]):
                cols.append((V[:, r][:, None] * phase[None, :]).ravel())
        if not cols:
            return np.zeros((0, 0))
        B = np.stack(cols, axis=1)
        U, s, _ = np.linalg.svd(np.concatenate([B.real, B.imag], axis=1), full_matrices=False)
        return U[:, : len(cols)]


def spectral_class_bases(samples, part, rel_tol: float = 0.2, cap: Optional[int] = None) -> list:
    """Leading singular subspaces of each class's shift-augmented features.

    Eigenpairs of the per-bin class covariances are the squared singular
    values and (Fourier-lifted) singular vectors of the dense augmented class
    matrix.  Conjugate bin pairs are kept or dropped together.
    """
    x = _check_signals(samples)
    n, C, T = x.shape
    part = as_partition(part, n)
    if cap is None:
        cap = max(1, (C * T) // part.k)
    bases = []
    for j in range(part.k):
        idx = part.members(j)
        vectors = [np.zeros((C, 0), dtype=complex) for _ in range(T)]
        if idx.size == 0:
            bases.append(SpectralClassBasis(vectors))
            continue
        cov = frequency_covariance(x[idx])
        evals, evecs = np.linalg.eigh(cov)  # ascending per bin
        evals = np.clip(evals, 0.0, None)
        top = evals.max()
        keep = []
        for f in range(cov.shape[0]):
            mult = 1 if f == 0 or (T % 2 == 0 and f == T // 2) else 2
            for r in range(C):
                if top > 0 and evals[f, r] >= rel_tol**2 * top:
                    keep.append((-evals[f, r], f, r, mult))
        keep.sort()
        chosen = {}
        used = 0
        for _, f, r, mult in keep:
            if used >= cap:
                break
            chosen.setdefault(f, []).append(r)
            used += mult
        for f, rs in chosen.items():
            V = evecs[f][:, sorted(rs)]
            vectors[f] = V
            if f != 0 and f != T - f:
                vectors[T - f] = np.conj(V)
        bases.append(SpectralClassBasis(vectors))
    return bases


@dataclass
class SpectralReduNet:
    layers: list
    C: int
    T: int
    k: int
    params: RateParams
    class_subspaces: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _signal_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=(1, 2)))


def normalize_signals(x) -> np.ndarray:
    x = _check_signals(x)
    norms = _signal_norms(x)
    if np.any(norms == 0):
        raise DegenerateInput("cannot normalize a zero signal")
    return x / norms[:, None, None]


def spectral_soft_assignment(x, ops: list, lam: float) -> np.ndarray:
    """Softmax of ``-lam * ||C_j x||`` over classes; shape ``(k, n)``."""
    x = _check_signals(x)
    dist = np.stack([_signal_norms(spectral_apply(op, x)) for op in ops])
    z = -lam * dist
    z -= z.max(axis=0, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=0, keepdims=True)


def spectral_layer_forward(x, layer: SpectralLayer, pi: Optional[np.ndarray] = None) -> np.ndarray:
    x = _check_signals(x)
    if pi is None:
        pi = spectral_soft_assignment(x, layer.C, layer.lam)
    step = spectral_apply(layer.E, x)
    for j, op in enumerate(layer.C):
        step -= (layer.gamma[j] * pi[j])[:, None, None] * spectral_apply(op, x)
    return normalize_signals(x + layer.eta * step)


def spectral_rate_terms(x, part: Partition, params: RateParams) -> tuple:
    """``(R, Rc, dR)`` of the shift-augmented features, from per-bin spectra."""
    n, C, T = x.shape

    def rate_of(sub):
        if sub.shape[0] == 0:
            return 0.0
        alpha = _spectral_alpha(params, C, T, sub.shape[0])
        ev = np.clip(np.linalg.eigvalsh(frequency_covariance(sub)), 0.0, None)
        weight = np.full(ev.shape[0], 2.0)
        weight[0] = 1.0
        if T % 2 == 0:
            weight[-1] = 1.0
        return 0.5 * float(np.sum(weight[:, None] * np.log1p(alpha * ev)))

    R = rate_of(x)
    weights = _class_weights(part, params)
    Rc = 0.0
    for j in range(part.k):
        Rc += weights[j] * rate_of(x[part.members(j)])
    return R, Rc, R - Rc


def build_spectral_redunet(samples, part, cfg: BuildConfig = BuildConfig()):
    """Forward construction on cyclic signals; returns ``(model, features)``."""
    x = _check_signals(samples)
    n, C, T = x.shape
    if np.max(np.abs(_signal_norms(x) - 1.0)) > 1e-8:
        raise InvalidMatrix("signals must have unit Frobenius norm")
    part = as_partition(part, n)
    params = cfg.params
    weights = _class_weights(part, params)
    pi = np.zeros((part.k, n))
    pi[part.labels, np.arange(n)] = 1.0
    layers = []
    trace = [RateRecord(0, *spectral_rate_terms(x, part, params))]
    for ell in range(cfg.num_layers):
        layer = SpectralLayer(
            E=circulant_expansion(x, _spectral_alpha(params, C, T, n)),
            C=circulant_compressions(x, part, params),
            eta=cfg.eta,
            lam=cfg.lam,
            gamma=weights,
        )
        x = spectral_layer_forward(x, layer, pi=pi)
        layers.append(layer)
        trace.append(RateRecord(ell + 1, *spectral_rate_terms(x, part, params)))
    model = SpectralReduNet(
        layers=layers,
        C=C,
        T=T,
        k=part.k,
        params=params,
        class_subspaces=spectral_class_bases(x, part),
        trace=trace,
    )
    return model, x


def spectral_forward(model: SpectralReduNet, x) -> tuple:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    arr = normalize_signals(arr)
    assignments = []
    for layer in model.layers:
        pi = spectral_soft_assignment(arr, layer.C, layer.lam)
        assignments.append(pi)
        arr = spectral_layer_forward(arr, layer, pi=pi)
    return (arr[0] if single else arr), assignments


def spectral_classify(model: SpectralReduNet, x) -> np.ndarray:
    """Nearest class subspace; ties go to the lowest index."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 2
    scores = np.stack([B.projection_norm(arr) for B in model.class_subspaces])
    labels = np.argmax(scores, axis=0)
    return int(labels[0]) if single else labels


def benchmark_apply(Ts=(512, 1024), C: int = 2, n_samples: int = 8, reps: int = 30, seed: int = 0) -> list:
    """Time dense matrix-vector products against per-bin application.

    Returns rows ``(T, C, dense_ms, spectral_ms, max_abs_err)`` with median
    timings.
    """
    rows = []
    for T in Ts:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))
        samples = normalize_signals(rng.standard_normal((n_samples, C, T)))
        op = circulant_expansion(samples, 1.0)
        dense = densify(op)
        x = normalize_signals(rng.standard_normal((C, T)))[0]
        v = x.ravel()
        err = float(np.max(np.abs(dense @ v - spectral_apply(op, x).ravel())))
        dense_t, spec_t = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            dense @ v
            dense_t.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            spectral_apply(op, x)
            spec_t.append(time.perf_counter() - t0)
        rows.append((T, C, 1e3 * float(np.median(dense_t)), 1e3 * float(np.median(spec_t)), err))
    return rows
