"""Dataset files, model documents and metric CSVs.

Floats are written with ``repr`` (shortest round-trip form), so every text
format here reads back bit-exactly.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .coding_rate import Partition, RateParams
from .ctrl import TranscriptionState
from .errors import ShapeError
from .redunet import RateRecord, ReduLayer, ReduNetModel
from .spectral import SpectralClassBasis, SpectralLayer, SpectralOperator, SpectralReduNet

MODEL_VERSION = 1
BINARY_MAGIC = b"LDRK1"

TRACE_HEADER = ("layer", "R", "Rc", "dR")
HISTORY_HEADER = ("round", "dR_Z", "dR_Zhat", "dR_pair", "constraint_residual")
PROFILE_HEADER = ("alpha_lmax", "rel_err")
BENCH_HEADER = ("T", "C", "dense_ms", "spectral_ms", "max_abs_err")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# -- datasets ---------------------------------------------------------------


def write_dataset_csv(path, X, part: Partition) -> None:
    X = np.asarray(X, dtype=np.float64)
    D, n = X.shape
    header = ["sample_id", "class"] + [f"x{i}" for i in range(D)]
    rows = ([i, int(part.labels[i])] + list(X[:, i]) for i in range(n))
    write_csv(path, header, rows)


def read_dataset_csv(path, k=None) -> tuple[np.ndarray, Partition]:
    header, rows = read_csv(path)
    if header[:2] != ["sample_id", "class"]:
        raise ShapeError(f"{path}: expected header sample_id,class,x0,...")
    D = len(header) - 2
    rows.sort(key=lambda r: int(r[0]))
    X = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64).reshape(len(rows), D).T
    labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
    return np.ascontiguousarray(X), Partition.from_labels(labels, k)


def write_dataset_binary(path, X, part: Partition) -> None:
    X = np.asarray(X, dtype=np.float64)
    D, n = X.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<III", D, n, part.k))
        fh.write(np.asarray(X.T, dtype="<f8").tobytes())  # column-major
        fh.write(np.asarray(part.labels, dtype="<u4").tobytes())


def read_dataset_binary(path) -> tuple[np.ndarray, Partition]:
    raw = Path(path).read_bytes()
    if raw[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise ShapeError(f"{path}: bad magic")
    off = len(BINARY_MAGIC)
    D, n, k = struct.unpack_from("<III", raw, off)
    off += 12
    expected = off + 8 * D * n + 4 * n
    if len(raw) != expected:
        raise ShapeError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=D * n, offset=off).reshape(n, D).T
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off + 8 * D * n)
    return np.ascontiguousarray(data, dtype=np.float64), Partition(labels.astype(np.int64), k, allow_empty=True)


def load_dataset(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return read_dataset_binary(path)
    return read_dataset_csv(path)


# -- models -----------------------------------------------------------------


def _params_doc(params: RateParams) -> dict:
    return {
        "epsilon": params.epsilon,
        "alpha": params.alpha,
        "class_weighting": params.class_weighting,
        "skip_empty": params.skip_empty,
    }


def _params_from(doc: dict) -> RateParams:
    return RateParams(
        epsilon=doc["epsilon"],
        alpha=doc.get("alpha"),
        class_weighting=doc.get("class_weighting", "uniform"),
        skip_empty=doc.get("skip_empty", False),
    )


def _check_version(doc: dict, kind: str) -> None:
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    if doc.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} document, got {doc.get('kind')!r}")


def redunet_to_dict(model: ReduNetModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": "redunet",
        "d": model.d,
        "k": model.k,
        "epsilon": model.params.epsilon,
        "eta": model.layers[0].eta if model.layers else None,
        "lambda": model.layers[0].lam if model.layers else None,
        "params": _params_doc(model.params),
        "layers": [
            {"E": layer.E.tolist(), "C": [c.tolist() for c in layer.C], "gamma": layer.gamma.tolist()}
            for layer in model.layers
        ],
        "class_subspaces": [U.tolist() for U in model.class_subspaces],
    }


def redunet_from_dict(doc: dict) -> ReduNetModel:
    _check_version(doc, "redunet")
    d = doc["d"]
    layers = [
        ReduLayer(
            E=np.array(L["E"], dtype=np.float64),
            C=np.array(L["C"], dtype=np.float64).reshape(-1, d, d),
            eta=doc["eta"],
            lam=doc["lambda"],
            gamma=np.array(L["gamma"], dtype=np.float64),
        )
        for L in doc["layers"]
    ]
    bases = [np.array(U, dtype=np.float64).reshape(d, -1) for U in doc["class_subspaces"]]
    return ReduNetModel(layers=layers, d=d, k=doc["k"], params=_params_from(doc["params"]), class_subspaces=bases)


def _complex_doc(a: np.ndarray) -> dict:
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def _complex_from(doc: dict, shape) -> np.ndarray:
    return (np.array(doc["re"], dtype=np.float64) + 1j * np.array(doc["im"], dtype=np.float64)).reshape(shape)


def spectral_to_dict(model: SpectralReduNet) -> dict:
    first = model.layers[0]
    return {
        "version": MODEL_VERSION,
        "kind": "spectral-redunet",
        "C": model.C,
        "T": model.T,
        "k": model.k,
        "epsilon": model.params.epsilon,
        "eta": first.eta,
        "lambda": first.lam,
        "params": _params_doc(model.params),
        "layers": [
            {
                "E": {"alpha": L.E.alpha, **_complex_doc(L.E.blocks)},
                "C": [{"alpha": op.alpha, **_complex_doc(op.blocks)} for op in L.C],
                "gamma": L.gamma.tolist(),
            }
            for L in model.layers
        ],
        "class_subspaces": [[_complex_doc(V) for V in B.vectors] for B in model.class_subspaces],
    }


def spectral_from_dict(doc: dict) -> SpectralReduNet:
    _check_version(doc, "spectral-redunet")
    C, T = doc["C"], doc["T"]
    shape = (T, C, C)
    layers = [
        SpectralLayer(
            E=SpectralOperator(_complex_from(L["E"], shape), L["E"]["alpha"]),
            C=[SpectralOperator(_complex_from(op, shape), op["alpha"]) for op in L["C"]],
            eta=doc["eta"],
            lam=doc["lambda"],
            gamma=np.array(L["gamma"], dtype=np.float64),
        )
        for L in doc["layers"]
    ]
    bases = [
        SpectralClassBasis([_complex_from(V, (C, -1)) for V in vecs]) for vecs in doc["class_subspaces"]
    ]
    return SpectralReduNet(layers=layers, C=C, T=T, k=doc["k"], params=_params_from(doc["params"]), class_subspaces=bases)


def state_to_dict(state: TranscriptionState) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": "transcription",
        "d": state.d,
        "D": state.D,
        "iter": state.iter,
        "f": state.f.tolist(),
        "g": state.g.tolist(),
    }


def state_from_dict(doc: dict) -> TranscriptionState:
    _check_version(doc, "transcription")
    f = np.array(doc["f"], dtype=np.float64).reshape(doc["d"], doc["D"])
    g = np.array(doc["g"], dtype=np.float64).reshape(doc["D"], doc["d"])
    return TranscriptionState(f=f, g=g, iter=doc["iter"])


def save_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def trace_rows(records) -> list:
    return [(r.layer, r.R, r.Rc, r.dR) for r in records]


def history_rows(history) -> list:
    return [(h.round, h.dR_Z, h.dR_Zhat, h.dR_pair, h.constraint_residual) for h in history]


def records_from_trace_csv(path) -> list:
    _, rows = read_csv(path)
    return [RateRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]
