"""Seeded synthetic datasets.

Randomness comes from ``numpy.random.Generator(PCG64)`` streams derived with
``SeedSequence``:

* bases of a subspace mixture use ``SeedSequence(basis_seed).spawn(1)[0]``
  (``basis_seed`` defaults to the call seed), one stream for all attempts of
  the rejection loop;
* class ``j`` draws its coefficients and noise from
  ``SeedSequence(seed).spawn(k)[j]``.

Every generator is a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from .coding_rate import Partition, normalize_columns
from .errors import DegenerateInput, ShapeError
from .metrics import principal_angles

MAX_BASIS_ATTEMPTS = 100


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _per_class(value, k, name):
    if np.isscalar(value):
        return [value] * k
    value = list(value)
    if len(value) != k:
        raise ShapeError(f"{name} has {len(value)} entries for {k} classes")
    return value


@dataclass(frozen=True)
class SubspaceMixtureSpec:
    D: int
    dims: tuple
    samples: Union[int, tuple] = 50
    noise: Union[float, tuple] = 0.0
    min_angle_deg: Optional[float] = None
    orthogonal: bool = False
    basis_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if not np.isscalar(self.samples):
            object.__setattr__(self, "samples", tuple(int(x) for x in self.samples))
        if not np.isscalar(self.noise):
            object.__setattr__(self, "noise", tuple(float(x) for x in self.noise))
        if not self.dims or min(self.dims) < 1:
            raise DegenerateInput("every class needs dimension >= 1")
        if sum(self.dims) > self.D:
            raise DegenerateInput(f"total dimension {sum(self.dims)} exceeds ambient D={self.D}")
        if min(_per_class(self.noise, len(self.dims), "noise")) < 0:
            raise ValueError("noise must be non-negative")

    @property
    def k(self) -> int:
        return len(self.dims)


def _min_pairwise_angle(bases) -> float:
    best = np.pi / 2
    for i in range(len(bases)):
        for j in range(i + 1, len(bases)):
            best = min(best, principal_angles(bases[i], bases[j])[0])
    return best


def _draw_bases(spec: SubspaceMixtureSpec, seed: int) -> list:
    root = spec.basis_seed if spec.basis_seed is not None else seed
    rng = _rng(np.random.SeedSequence(root).spawn(1)[0])
    if spec.orthogonal:
        Q, _ = np.linalg.qr(rng.standard_normal((spec.D, sum(spec.dims))))
        offsets = np.cumsum((0,) + spec.dims)
        return [Q[:, offsets[j] : offsets[j + 1]] for j in range(spec.k)]
    for _ in range(MAX_BASIS_ATTEMPTS):
        bases = [np.linalg.qr(rng.standard_normal((spec.D, dj)))[0] for dj in spec.dims]
        if spec.min_angle_deg is None or _min_pairwise_angle(bases) >= np.deg2rad(spec.min_angle_deg):
            return bases
    raise DegenerateInput(
        f"no bases with minimum principal angle {spec.min_angle_deg} deg after {MAX_BASIS_ATTEMPTS} attempts"
    )


def sample_subspace_mixture(spec: SubspaceMixtureSpec, seed: int):
    """Unit-norm samples from a union of linear subspaces.

    Returns ``(X, partition, bases)`` with ``X`` of shape ``(D, n)`` and
    columns grouped by class.
    """
    bases = _draw_bases(spec, seed)
    counts = _per_class(spec.samples, spec.k, "samples")
    noise = _per_class(spec.noise, spec.k, "noise")
    streams = np.random.SeedSequence(seed).spawn(spec.k)
    blocks, labels = [], []
    for j, (U, nj, sj) in enumerate(zip(bases, counts, noise)):
        rng = _rng(streams[j])
        block = U @ rng.standard_normal((U.shape[1], nj))
        block = block + sj * rng.standard_normal((spec.D, nj))
        blocks.append(block)
        labels.append(np.full(nj, j))
    X = normalize_columns(np.concatenate(blocks, axis=1))
    return X, Partition(np.concatenate(labels), spec.k), bases


def sample_nonlinear_manifolds(kind: str, n: int, noise: float, seed: int):
    """Two classes on curved 1-D submanifolds of the unit sphere in R^3.

    ``kind`` is one of ``circles``, ``helix`` or ``moons-on-sphere``.
    """
    streams = np.random.SeedSequence(seed).spawn(2)
    sizes = (n - n // 2, n // 2)
    blocks = []
    for j, (stream, nj) in enumerate(zip(streams, sizes)):
        rng = _rng(stream)
        t = rng.uniform(0.0, 2 * np.pi, nj)
        if kind == "circles":
            lat = np.pi / 6 if j == 0 else -np.pi / 6
            pts = np.stack([np.cos(lat) * np.cos(t), np.cos(lat) * np.sin(t), np.full(nj, np.sin(lat))])
        elif kind == "helix":
            phase = j * np.pi
            pts = np.stack([np.cos(t + phase), np.sin(t + phase), t / np.pi - 1.0])
        elif kind == "moons-on-sphere":
            s = t / 2  # half circle
            if j == 0:
                xy = np.stack([np.cos(s), np.sin(s)])
            else:
                xy = np.stack([1.0 - np.cos(s), 0.5 - np.sin(s)])
            pts = np.vstack([xy - 0.5, np.ones((1, nj))])
        else:
            raise ValueError(f"unknown manifold kind {kind!r}")
        blocks.append(pts + noise * rng.standard_normal(pts.shape))
    X = normalize_columns(np.concatenate(blocks, axis=1))
    labels = np.concatenate([np.full(sizes[0], 0), np.full(sizes[1], 1)])
    return X, Partition(labels, 2)


@dataclass(frozen=True)
class Augmentation:
    """How to grow one self-supervised class out of a sample.

    ``kind``: ``none``, ``shift`` (cyclic shifts by every value in
    ``shifts``, columns read as ``channels x T`` signals), ``rotation``
    (``copies`` random rotations of angle ``magnitude``) or ``noise``
    (``copies`` noisy re-normalized copies with std ``magnitude``).
    """

    kind: str = "none"
    copies: int = 0
    magnitude: float = 0.05
    shifts: Sequence[int] = ()
    channels: int = 1


def self_supervised_partition(X, aug: Augmentation, seed: int):
    """Augment every column and make each sample plus its copies one class.

    Output columns are grouped per source sample, original first.
    """
    X = np.asarray(X, dtype=np.float64)
    D, n = X.shape
    rng = _rng(np.random.SeedSequence(seed).spawn(1)[0])
    groups = []
    for i in range(n):
        x = X[:, i]
        copies = [x]
        if aug.kind == "shift":
            if D % aug.channels:
                raise ShapeError(f"D={D} is not a multiple of channels={aug.channels}")
            sig = x.reshape(aug.channels, D // aug.channels)
            copies += [np.roll(sig, int(tau), axis=1).ravel() for tau in aug.shifts if int(tau) % sig.shape[1]]
        elif aug.kind == "rotation":
            for _ in range(aug.copies):
                A = rng.standard_normal((D, D))
                A = A - A.T
                A *= aug.magnitude / np.linalg.norm(A, 2)
                copies.append(expm(A) @ x)
        elif aug.kind == "noise":
            for _ in range(aug.copies):
                y = x + aug.magnitude * rng.standard_normal(D)
                copies.append(y / np.linalg.norm(y))
        elif aug.kind != "none":
            raise ValueError(f"unknown augmentation {aug.kind!r}")
        groups.append(np.stack(copies, axis=1))
    labels = np.concatenate([np.full(g.shape[1], i) for i, g in enumerate(groups)])
    return np.concatenate(groups, axis=1), Partition(labels, n)


def sample_shift_orbit_signals(
    n_per_class: Sequence[int],
    channels: int,
    T: int,
    bands: Sequence[Sequence[int]],
    shared_bins: Sequence[int] = (1,),
    shared_scale: float = 1.0,
    noise: float = 0.0,
    seed: int = 0,
):
    """Multi-channel cyclic signals whose classes occupy disjoint frequency bands.

    Every class draws random complex amplitudes (per channel) on its own bins
    in ``bands[j]``; all classes additionally share one fixed random
    component on ``shared_bins`` scaled by ``shared_scale``, which makes the
    raw signals correlated across classes.  Returns ``(signals, partition)``
    with signals of shape ``(n, channels, T)``, unit Frobenius norm.
    """
    if len(bands) != len(n_per_class):
        raise ShapeError("one frequency band per class is required")
    streams = np.random.SeedSequence(seed).spawn(len(bands) + 1)
    shared_rng = _rng(streams[-1])
    shared_spec = np.zeros((channels, T // 2 + 1), dtype=complex)
    for b in shared_bins:
        shared_spec[:, b] = shared_rng.standard_normal(channels) + 1j * shared_rng.standard_normal(channels)
    shared = np.fft.irfft(shared_spec, n=T, axis=1)
    shared *= shared_scale / np.linalg.norm(shared)
    signals, labels = [], []
    for j, (nj, band) in enumerate(zip(n_per_class, bands)):
        rng = _rng(streams[j])
        for _ in range(nj):
            spec = np.zeros((channels, T // 2 + 1), dtype=complex)
            for b in band:
                spec[:, b] = rng.standard_normal(channels) + 1j * rng.standard_normal(channels)
            x = np.fft.irfft(spec, n=T, axis=1)
            x /= np.linalg.norm(x)
            x = x + shared + noise * rng.standard_normal((channels, T))
            signals.append(x / np.linalg.norm(x))
            labels.append(j)
    return np.stack(signals), Partition(np.array(labels), len(bands))
