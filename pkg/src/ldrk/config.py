"""Experiment configuration: strict JSON schema with materialized defaults.

Every section is a frozen dataclass.  Parsing rejects unknown keys, wrong
types and out-of-range values with a dotted path such as ``ctrl.rho``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

KINDS = ("redunet", "spectral", "ctrl", "ctrl-incremental", "attention-profile", "bench")
DATA_KINDS = ("subspaces", "manifolds", "shift-orbit", "file")


@dataclass(frozen=True)
class RateConfig:
    epsilon: float = 0.5
    alpha: Optional[float] = None
    class_weighting: str = "uniform"
    skip_empty: bool = False


@dataclass(frozen=True)
class DataConfig:
    """Synthetic dataset description.

    ``subspaces`` uses ``D``, ``dims``, ``samples``, ``noise``,
    ``orthogonal`` and ``min_angle_deg``; ``manifolds`` uses ``manifold``,
    ``samples`` and ``noise``; ``shift-orbit`` uses ``channels``, ``T``,
    ``bands``, ``shared_bins``, ``shared_scale``, ``samples`` and ``noise``;
    ``file`` reads ``path``.  ``test_samples`` extra samples per class are
    drawn from the same bases for evaluation.
    """

    kind: str = "subspaces"
    D: int = 8
    dims: tuple = (1, 1, 1)
    samples: int = 30
    test_samples: int = 30
    noise: float = 1e-3
    orthogonal: bool = True
    min_angle_deg: Optional[float] = None
    manifold: str = "circles"
    channels: int = 2
    T: int = 16
    bands: tuple = ((2, 3), (5, 6))
    shared_bins: tuple = (1,)
    shared_scale: float = 0.5
    path: Optional[str] = None


@dataclass(frozen=True)
class RedunetConfig:
    num_layers: int = 30
    eta: float = 0.5
    lam: float = 1.0


@dataclass(frozen=True)
class SpectralConfig:
    self_supervised: bool = False
    bench_T: tuple = (512, 1024)
    bench_C: int = 2
    bench_samples: int = 8
    bench_reps: int = 30


@dataclass(frozen=True)
class AttentionConfig:
    d: int = 8
    n: int = 32
    alpha_lmax: tuple = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3)
    heads: int = 1


@dataclass(frozen=True)
class CtrlConfig:
    d: int = 8
    rounds: int = 40
    steps_g: int = 5
    steps_f: int = 1
    lr_g: float = 1.0
    lr_f: float = 1.0
    rho: float = 10.0
    detach_decoded: bool = True
    decoder_objective: str = "classwise_pair"
    detect: bool = True
    old_classes: tuple = (0, 1)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    out: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    rate: RateConfig = field(default_factory=RateConfig)
    redunet: RedunetConfig = field(default_factory=RedunetConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    ctrl: CtrlConfig = field(default_factory=CtrlConfig)


_REQUIRED = {"kind", "seed"}

_CHOICES = {
    "kind": KINDS,
    "data.kind": DATA_KINDS,
    "data.manifold": ("circles", "helix", "moons-on-sphere"),
    "rate.class_weighting": ("uniform", "size"),
    "ctrl.decoder_objective": ("classwise_pair", "pair", "full"),
}

_POSITIVE = {
    "rate.epsilon", "rate.alpha", "data.D", "data.samples", "data.channels", "data.T",
    "redunet.num_layers", "redunet.eta", "redunet.lam", "spectral.bench_C",
    "spectral.bench_samples", "spectral.bench_reps", "attention.d", "attention.n",
    "attention.heads", "ctrl.d", "ctrl.rounds", "ctrl.steps_g", "ctrl.steps_f",
    "ctrl.lr_g", "ctrl.lr_f",
}

_NON_NEGATIVE = {"seed", "data.test_samples", "data.noise", "data.shared_scale", "ctrl.rho"}


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            _fail(path, f"expected an object, got {type(value).__name__}")
        return _build(hint, value, path + ".")
    if hint is bool:
        if not isinstance(value, bool):
            _fail(path, f"expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            _fail(path, f"expected a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, (list, tuple)):
            _fail(path, f"expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    raise TypeError(f"unsupported schema type {hint!r} at {path}")


def _check_range(path: str, value) -> None:
    if path in _CHOICES and value not in _CHOICES[path]:
        _fail(path, f"must be one of {', '.join(_CHOICES[path])}; got {value!r}")
    if value is None or isinstance(value, (str, tuple, bool)):
        return
    if path in _POSITIVE and not value > 0:
        _fail(path, f"must be positive; got {value!r}")
    if path in _NON_NEGATIVE and not value >= 0:
        _fail(path, f"must be non-negative; got {value!r}")


def _build(cls, doc: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            _fail(f"{prefix}{key}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        path = f"{prefix}{f.name}"
        if f.name in doc:
            value = _coerce(doc[f.name], hints[f.name], path)
            _check_range(path, value)
            kwargs[f.name] = value
        elif not prefix and f.name in _REQUIRED:
            _fail(path, "missing required key")
    return cls(**kwargs)


def _check_semantics(cfg: ExperimentConfig) -> None:
    data = cfg.data
    if data.kind == "file" and not data.path:
        _fail("data.path", "required when data.kind is 'file'")
    if any(not isinstance(x, int) or x < 1 for x in data.dims):
        _fail("data.dims", "entries must be positive integers")
    if data.kind == "subspaces" and data.orthogonal and sum(data.dims) > data.D:
        _fail("data.dims", f"orthogonal subspaces need sum(dims) <= D={data.D}")
    if data.min_angle_deg is not None and not 0 <= data.min_angle_deg <= 90:
        _fail("data.min_angle_deg", "must lie in [0, 90]")
    half = data.T // 2
    for j, band in enumerate(data.bands):
        if not isinstance(band, tuple) or any(not 0 <= b <= half for b in band):
            _fail(f"data.bands[{j}]", f"bins must lie in [0, {half}]")
    if any(not 0 <= b <= half for b in data.shared_bins):
        _fail("data.shared_bins", f"bins must lie in [0, {half}]")
    if cfg.rate.epsilon < 1e-6:
        _fail("rate.epsilon", "must be at least 1e-6")
    if cfg.kind == "ctrl-incremental":
        k = len(data.dims)
        old = cfg.ctrl.old_classes
        if not old or any(not isinstance(j, int) or not 0 <= j < k for j in old) or len(set(old)) >= k:
            _fail("ctrl.old_classes", f"must be a proper, non-empty subset of 0..{k - 1}")


def config_from_dict(doc) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    cfg = _build(ExperimentConfig, doc)
    _check_semantics(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read a JSON config file; raises :class:`ConfigError` on any problem."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return config_from_dict(doc)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def convert(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = convert(v) if dataclasses.is_dataclass(v) else _plain(v)
        return out

    return convert(cfg)


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical serialization, ignoring the output directory."""
    doc = config_to_dict(cfg)
    doc.pop("out", None)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy with top-level fields replaced, re-validated."""
    return config_from_dict({**config_to_dict(cfg), **{k: _plain(v) for k, v in changes.items()}})
