"""Command-line front end and experiment orchestration.

Each subcommand resolves an :class:`ExperimentConfig` (from ``--config`` or
defaults), applies ``--seed``/``--out`` overrides, runs under a BLAS thread
cap and writes CSV metrics, JSON models and a ``manifest.json``.

Exit codes: 0 success, 1 usage or input error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from . import io as lio
from .attention import AttentionLayer, approximation_error_profile, multi_head_forward
from .coding_rate import Partition, RateParams, normalize_columns, rate_terms
from .config import ExperimentConfig, config_from_dict, config_hash, config_to_dict, parse_config
from .ctrl import GameConfig, decode, encode, fixed_point_residual, incremental_step, train_transcription
from .datagen import SubspaceMixtureSpec, sample_nonlinear_manifolds, sample_shift_orbit_signals, sample_subspace_mixture
from .errors import DivergenceError, LDRKError
from .metrics import (
    MetricsRecord,
    accuracy,
    block_diagonality,
    orthonormal_basis,
    per_class_spectrum,
    principal_angles,
)
from .redunet import BuildConfig, build_redunet, forward, nearest_subspace_classify
from .spectral import (
    benchmark_apply,
    build_spectral_redunet,
    shift,
    shift_augmented_matrix,
    spectral_classify,
    spectral_forward,
)

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2

SUBCOMMAND_KIND = {
    "gen-data": None,
    "build-redunet": "redunet",
    "eval": "redunet",
    "spectral-build": "spectral",
    "bench-spectral": "bench",
    "attention-profile": "attention-profile",
    "ctrl-train": "ctrl",
    "ctrl-incremental": "ctrl-incremental",
}

DEFAULT_DATA = {
    "spectral": {"kind": "shift-orbit", "samples": 8, "test_samples": 8, "noise": 0.0},
    "ctrl": {"D": 20, "dims": [2, 2], "samples": 200, "test_samples": 0, "noise": 0.0},
    "ctrl-incremental": {"D": 20, "dims": [2, 2, 2], "samples": 200, "test_samples": 0, "noise": 0.0},
}


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def rate_params(cfg: ExperimentConfig) -> RateParams:
    r = cfg.rate
    return RateParams(epsilon=r.epsilon, alpha=r.alpha, class_weighting=r.class_weighting, skip_empty=r.skip_empty)


def _split(X, part: Partition, n_train: int):
    """First ``n_train`` columns of every class for training, rest held out."""
    train, test = [], []
    for j in range(part.k):
        idx = part.members(j)
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    tr, te = np.concatenate(train), np.concatenate(test)
    return (X[..., tr] if X.ndim == 2 else X[tr]), Partition(part.labels[tr], part.k, allow_empty=True), (
        X[..., te] if X.ndim == 2 else X[te]
    ), Partition(part.labels[te], part.k, allow_empty=True)


def make_dataset(cfg: ExperimentConfig):
    """``(X_train, part_train, X_test, part_test, bases)`` from the data section.

    Vector data is ``(D, n)``; shift-orbit data is ``(n, C, T)``.  ``bases``
    is ``None`` unless ground-truth subspaces exist.
    """
    data = cfg.data
    per_class = data.samples + data.test_samples
    if data.kind == "subspaces":
        spec = SubspaceMixtureSpec(
            D=data.D,
            dims=tuple(data.dims),
            samples=per_class,
            noise=data.noise,
            min_angle_deg=data.min_angle_deg,
            orthogonal=data.orthogonal,
        )
        X, part, bases = sample_subspace_mixture(spec, cfg.seed)
        return (*_split(X, part, data.samples), bases)
    if data.kind == "manifolds":
        X, part = sample_nonlinear_manifolds(data.manifold, 2 * per_class, data.noise, cfg.seed)
        return (*_split(X, part, data.samples), None)
    if data.kind == "shift-orbit":
        k = len(data.bands)
        x, part = sample_shift_orbit_signals(
            (per_class,) * k,
            data.channels,
            data.T,
            data.bands,
            shared_bins=data.shared_bins,
            shared_scale=data.shared_scale,
            noise=data.noise,
            seed=cfg.seed,
        )
        return (*_split(x, part, data.samples), None)
    X, part = lio.load_dataset(data.path)
    return X, part, X[:, :0], Partition(np.zeros(0, dtype=int), part.k, allow_empty=True), None


def _resolve_out(cfg: ExperimentConfig, command: str) -> Path:
    if cfg.out:
        return Path(cfg.out)
    root = Path(os.environ.get("LDRK_OUT_DIR", "runs"))
    return root / f"{command}-{config_hash(cfg)[:10]}"


def _metric_rows(record: MetricsRecord, extra=()) -> list:
    return record.rows() + list(extra)


def _write_metrics(out: Path, rows) -> None:
    lio.write_csv(out / "metrics.csv", ("metric", "value"), rows)


def _angles_to_truth(bases, X_rec, part) -> list:
    out = []
    for j, U in enumerate(bases):
        cols = X_rec[:, part.members(j)]
        out.append(float(principal_angles(U, orthonormal_basis(cols, rank=U.shape[1]))[-1]))
    return out


# -- experiments ------------------------------------------------------------


def _run_gen_data(cfg, out: Path, binary: bool = False):
    Xtr, ptr, Xte, pte, _ = make_dataset(cfg)
    if Xtr.ndim == 3:
        Xtr = Xtr.reshape(Xtr.shape[0], -1).T
        Xte = Xte.reshape(Xte.shape[0], -1).T
    lio.write_dataset_csv(out / "train.csv", Xtr, ptr)
    lio.write_dataset_csv(out / "test.csv", Xte, pte)
    if binary:
        lio.write_dataset_binary(out / "train.bin", Xtr, ptr)
        lio.write_dataset_binary(out / "test.bin", Xte, pte)
    _write_metrics(
        out,
        [
            ("dimension", Xtr.shape[0]),
            ("classes", ptr.k),
            ("train_samples", Xtr.shape[1]),
            ("test_samples", Xte.shape[1]),
            ("input_block_diagonality", block_diagonality(Xtr, ptr)),
        ],
    )
    return []


def _eval_redunet(model, X, part, bases, prefix="test"):
    if X.shape[1] == 0:
        return []
    Z, _ = forward(model, X)
    pred = nearest_subspace_classify(model, Z)
    R, Rc, dR = rate_terms(Z, part, model.params)
    rec = MetricsRecord(
        R=R,
        Rc=Rc,
        dR=dR,
        accuracy=accuracy(pred, part.labels),
        block_diagonality=block_diagonality(Z, part),
        spectra=[s[:3] for s in per_class_spectrum(Z, part)],
    )
    rows = [(f"{prefix}_{name}", v) for name, v in rec.rows()]
    return rows


def _run_redunet(cfg, out: Path):
    Xtr, ptr, Xte, pte, bases = make_dataset(cfg)
    r = cfg.redunet
    build = BuildConfig(num_layers=r.num_layers, eta=r.eta, lam=r.lam, params=rate_params(cfg), seed=cfg.seed)
    model, Z = build_redunet(Xtr, ptr, build)
    lio.save_json(out / "model.json", lio.redunet_to_dict(model))
    lio.write_csv(out / "trace.csv", lio.TRACE_HEADER, lio.trace_rows(model.trace))
    last = model.trace[-1]
    rec = MetricsRecord(
        R=last.R,
        Rc=last.Rc,
        dR=last.dR,
        accuracy=accuracy(nearest_subspace_classify(model, Z), ptr.labels),
        block_diagonality=block_diagonality(Z, ptr),
        spectra=[s[:3] for s in per_class_spectrum(Z, ptr)],
    )
    extra = [("input_block_diagonality", block_diagonality(Xtr, ptr))]
    extra += _eval_redunet(model, Xte, pte, bases)
    _write_metrics(out, _metric_rows(rec, extra))
    return []


def _run_eval(cfg, out: Path, model_path: str, data_path=None):
    model = lio.redunet_from_dict(lio.load_json(model_path))
    if data_path:
        X, part = lio.load_dataset(data_path)
        bases = None
    else:
        _, _, X, part, bases = make_dataset(cfg)
    Z, _ = forward(model, X)
    pred = nearest_subspace_classify(model, Z)
    lio.write_csv(out / "predictions.csv", ("sample_id", "class", "predicted"), zip(range(len(pred)), part.labels, pred))
    _write_metrics(out, _eval_redunet(model, X, part, bases, prefix="eval"))
    return []


def _shift_invariance_failures(model, x) -> int:
    base = spectral_classify(model, x)
    T = x.shape[2]
    failures = 0
    for tau in range(1, T):
        failures += int(np.count_nonzero(spectral_classify(model, shift(x, tau)) != base))
    return failures


def _run_spectral(cfg, out: Path):
    xtr, ptr, xte, pte, _ = make_dataset(cfg)
    r = cfg.redunet
    build = BuildConfig(num_layers=r.num_layers, eta=r.eta, lam=r.lam, params=rate_params(cfg), seed=cfg.seed)
    hidden = ptr
    part = Partition(np.arange(xtr.shape[0]), xtr.shape[0]) if cfg.spectral.self_supervised else ptr
    model, xf = build_spectral_redunet(xtr, part, build)
    lio.save_json(out / "model.json", lio.spectral_to_dict(model))
    lio.write_csv(out / "trace.csv", lio.TRACE_HEADER, lio.trace_rows(model.trace))
    T = xtr.shape[2]
    aug_hidden = Partition(np.repeat(hidden.labels, T), hidden.k)
    bd_in = block_diagonality(shift_augmented_matrix(xtr), aug_hidden)
    bd_out = block_diagonality(shift_augmented_matrix(xf), aug_hidden)
    last = model.trace[-1]
    rec = MetricsRecord(R=last.R, Rc=last.Rc, dR=last.dR, block_diagonality=bd_out)
    extra = [("input_block_diagonality", bd_in), ("block_diagonality_gain", bd_out - bd_in)]
    if not cfg.spectral.self_supervised and xte.shape[0]:
        zte, _ = spectral_forward(model, xte)
        extra.append(("test_accuracy", accuracy(spectral_classify(model, zte), pte.labels)))
        extra.append(("shift_invariance_failures", _shift_invariance_failures(model, xte)))
    _write_metrics(out, _metric_rows(rec, extra))
    return []


def _run_bench(cfg, out: Path):
    s = cfg.spectral
    rows = benchmark_apply(Ts=tuple(s.bench_T), C=s.bench_C, n_samples=s.bench_samples, reps=s.bench_reps, seed=cfg.seed)
    lio.write_csv(out / "bench.csv", lio.BENCH_HEADER, rows)
    extra = []
    if len(rows) >= 2:
        extra = [
            ("dense_growth", rows[-1][2] / rows[0][2]),
            ("spectral_growth", rows[-1][3] / rows[0][3]),
        ]
    extra.append(("max_abs_err", max(r[4] for r in rows)))
    _write_metrics(out, extra)
    return ["bench.csv", "metrics.csv"]


def _attention_data(cfg):
    a = cfg.attention
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed).spawn(1)[0]))
    return normalize_columns(rng.standard_normal((a.d, a.n))), rng


def _run_attention(cfg, out: Path):
    a = cfg.attention
    Z, rng = _attention_data(cfg)
    lmax = float(np.linalg.eigvalsh(Z @ Z.T)[-1])
    rows = approximation_error_profile(Z, [t / lmax for t in a.alpha_lmax])
    lio.write_csv(out / "profile.csv", lio.PROFILE_HEADER, rows)
    alpha = a.alpha_lmax[0] / lmax
    heads = [
        AttentionLayer(*(np.eye(a.d) + 0.1 * rng.standard_normal((a.d, a.d)) for _ in range(4)), alpha)
        for _ in range(a.heads)
    ]
    out_Z = multi_head_forward(Z, heads)
    extra = [("max_ratio", max(err / t for t, err in rows if t > 0)), ("heads_output_norm", float(np.linalg.norm(out_Z)))]
    _write_metrics(out, extra)
    return []


def _game_config(cfg, rho=None) -> GameConfig:
    c = cfg.ctrl
    return GameConfig(
        rounds=c.rounds,
        steps_g=c.steps_g,
        steps_f=c.steps_f,
        lr_g=c.lr_g,
        lr_f=c.lr_f,
        rho=c.rho if rho is None else rho,
        params=rate_params(cfg),
        seed=cfg.seed,
        detach_decoded=c.detach_decoded,
        decoder_objective=c.decoder_objective,
        detect=c.detect,
    )


def _ctrl_rows(state, X, part, bases):
    Xh = decode(state, encode(state, X))
    rows = []
    if bases is not None:
        angles = _angles_to_truth(bases, Xh, part)
        rows += [(f"max_principal_angle_{j}", a) for j, a in enumerate(angles)]
    rows.append(("orthonormality_error", state.orthonormality_error()))
    if state.history:
        h = state.history[-1]
        rows += [("dR_pair", h.dR_pair), ("max_orthonormality_error", max(r.orthonormality_error for r in state.history))]
    return rows


def _run_ctrl(cfg, out: Path):
    X, part, _, _, bases = make_dataset(cfg)
    state = train_transcription(X, part, _game_config(cfg), d=cfg.ctrl.d)
    lio.save_json(out / "state.json", lio.state_to_dict(state))
    lio.write_csv(out / "history.csv", lio.HISTORY_HEADER, lio.history_rows(state.history))
    _write_metrics(out, _ctrl_rows(state, X, part, bases))
    return []


def _run_ctrl_incremental(cfg, out: Path):
    X, part, _, _, bases = make_dataset(cfg)
    old_set = sorted(set(cfg.ctrl.old_classes))
    new_set = [j for j in range(part.k) if j not in old_set]
    old = np.isin(part.labels, old_set)
    relabel = lambda labels, keep: np.searchsorted(keep, labels)  # noqa: E731
    X_old, p_old = X[:, old], Partition(relabel(part.labels[old], old_set), len(old_set))
    X_new, p_new = X[:, ~old], Partition(relabel(part.labels[~old], new_set), len(new_set))
    stage1 = train_transcription(X_old, p_old, _game_config(cfg, rho=0.0), d=cfg.ctrl.d)
    Z_old = encode(stage1, X_old)
    stage2 = incremental_step(stage1, X_new, p_new, Z_old, _game_config(cfg))
    lio.save_json(out / "state_stage1.json", lio.state_to_dict(stage1))
    lio.save_json(out / "state.json", lio.state_to_dict(stage2))
    lio.write_csv(out / "history_stage1.csv", lio.HISTORY_HEADER, lio.history_rows(stage1.history))
    lio.write_csv(out / "history.csv", lio.HISTORY_HEADER, lio.history_rows(stage2.history))
    params = rate_params(cfg)
    rows = [
        ("old_residual_before", fixed_point_residual(stage1, Z_old, params)),
        ("old_residual_after", fixed_point_residual(stage2, Z_old, params)),
    ]
    new_bases = [bases[j] for j in new_set] if bases is not None else None
    rows += _ctrl_rows(stage2, X_new, p_new, new_bases)
    _write_metrics(out, rows)
    return []


RUNNERS = {
    "redunet": _run_redunet,
    "spectral": _run_spectral,
    "bench": _run_bench,
    "attention-profile": _run_attention,
    "ctrl": _run_ctrl,
    "ctrl-incremental": _run_ctrl_incremental,
}


def _versions() -> dict:
    return {
        "ldrk": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run(cfg: ExperimentConfig, command=None, threads: int = 1, **extra) -> int:
    """Execute one experiment; returns the process exit code."""
    command = command or cfg.kind
    out = _resolve_out(cfg, command)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status, error = EXIT_OK, None
    try:
        with threadpool_limits(limits=threads):
            if command == "gen-data":
                _run_gen_data(cfg, out, binary=extra.get("binary", False))
            elif command == "eval":
                _run_eval(cfg, out, extra["model"], extra.get("data"))
            else:
                RUNNERS[cfg.kind](cfg, out)
    except DivergenceError as exc:
        status, error = EXIT_DIVERGED, str(exc)
        if getattr(exc, "last_good", None) is not None:
            lio.save_json(out / "last_good_state.json", lio.state_to_dict(exc.last_good))
    manifest = {
        "command": command,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "versions": _versions(),
        "threads": threads,
        "wall_time_s": time.perf_counter() - t0,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "exit_code": status,
        "error": error,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    lio.save_json(out / "manifest.json", manifest)
    if error:
        print(f"error: {error}", file=sys.stderr)
    print(out)
    return status


def report(run_dir, stream=None) -> None:
    """Print the metrics of a run directory as a fixed-width table."""
    stream = stream or sys.stdout
    run_dir = Path(run_dir)
    path = run_dir / "metrics.csv"
    if not path.exists():
        raise UsageError(f"{run_dir}: no metrics.csv")
    _, rows = lio.read_csv(path)
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        doc = lio.load_json(manifest)
        stream.write(f"run: {doc.get('command')}  config: {doc.get('config_hash', '')[:10]}\n")
    width = max([len("metric")] + [len(r[0]) for r in rows])
    stream.write(f"{'metric':<{width}}  value\n")
    stream.write(f"{'-' * width}  {'-' * 22}\n")
    for name, value in rows:
        v = float(value)
        text = f"{v:.6g}" if np.isfinite(v) else str(v)
        stream.write(f"{name:<{width}}  {text}\n")


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ldrk", description="Rate-reduction models and experiments.")
    parser.add_argument("--version", action="version", version=f"ldrk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: $LDRK_OUT_DIR/<command>-<hash>)")
        p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (1 is the reference mode)")
        return p

    common(sub.add_parser("gen-data", help="write a synthetic dataset")).add_argument(
        "--binary", action="store_true", help="also write the binary format"
    )
    common(sub.add_parser("build-redunet", help="construct a ReduNet layer by layer"))
    p = common(sub.add_parser("eval", help="evaluate a stored ReduNet"))
    p.add_argument("--model", required=True, help="model.json from build-redunet")
    p.add_argument("--data", help="dataset file (CSV or binary); default is the config's held-out split")
    common(sub.add_parser("spectral-build", help="construct a shift-invariant ReduNet"))
    common(sub.add_parser("bench-spectral", help="dense versus per-frequency operator timing"))
    common(sub.add_parser("attention-profile", aliases=["attention-bridge"], help="attention approximation error"))
    common(sub.add_parser("ctrl-train", help="closed-loop transcription game"))
    common(sub.add_parser("ctrl-incremental", help="two-stage class-incremental transcription"))
    p = sub.add_parser("report", help="print the metrics table of a run directory")
    p.add_argument("run_dir")
    return parser


def _resolve_config(args, command: str) -> ExperimentConfig:
    kind = SUBCOMMAND_KIND.get(command)
    if args.config:
        cfg = parse_config(args.config)
        if kind is not None and command != "eval" and cfg.kind != kind:
            raise UsageError(f"config kind {cfg.kind!r} does not match subcommand {command!r}")
        doc = config_to_dict(cfg)
    else:
        kind = kind or "redunet"
        doc = {"kind": kind, "seed": 0}
        if kind in DEFAULT_DATA:
            doc["data"] = dict(DEFAULT_DATA[kind])
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    return config_from_dict(doc)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = "attention-profile" if args.command == "attention-bridge" else args.command
    try:
        if command == "report":
            report(args.run_dir)
            return EXIT_OK
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = _resolve_config(args, command)
        extra = {}
        if command == "gen-data":
            extra["binary"] = args.binary
        if command == "eval":
            extra = {"model": args.model, "data": args.data}
        return run(cfg, command=command, threads=args.threads, **extra)
    except (UsageError, LDRKError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
