"""File formats: NPY matrices, JSON dataset manifests, and JSON model files.

The NPY reader accepts exactly the interchange subset this pipeline emits:
format versions 1.0/2.0, little-endian f4/f8, C order, 1-D or 2-D. f4 payloads
are widened to f8 on load and 1-D arrays come back as a single-row matrix.

Model files are JSON with every float stored as its C99 hex literal, so a
save/load round trip is bit-exact and regression runs can diff the files
directly.
"""

from __future__ import annotations

import ast
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import LayerClassStats, MahalanobisParams
from .chain import LsgmModel, TransitionMatrix
from .errors import (
    CorruptFileError,
    InvalidArgumentError,
    NotNpyError,
    UnsupportedFormatError,
)
from .linalg import SpdFactor
from .mixture import LayerMixture

NPY_MAGIC = b"\x93NUMPY"
MODEL_FORMAT_VERSION = 1
MANIFEST_ROLES = ("train_in", "test_in", "test_ood")


def read_npy(path) -> np.ndarray:
    """Parse an NPY file into a 2-D float64 array (1-D data becomes 1 x D)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:6] != NPY_MAGIC:
        raise NotNpyError(f"{path}: missing NPY magic")
    major, minor = raw[6], raw[7]
    if major == 1:
        if len(raw) < 10:
            raise CorruptFileError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<H", raw[8:10])
        header_start = 10
    elif major == 2:
        if len(raw) < 12:
            raise CorruptFileError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw[8:12])
        header_start = 12
    else:
        raise UnsupportedFormatError(f"{path}: NPY version {major}.{minor}")

    header_end = header_start + header_len
    if len(raw) < header_end:
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[header_start:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise CorruptFileError(f"{path}: unparsable header") from exc
    if not isinstance(header, dict):
        raise CorruptFileError(f"{path}: header is not a dict")

    try:
        descr = header["descr"]
        fortran = header["fortran_order"]
        shape = header["shape"]
    except KeyError as exc:
        raise CorruptFileError(f"{path}: header missing {exc}") from exc
    if fortran:
        raise UnsupportedFormatError(f"{path}: fortran_order arrays unsupported")
    if descr not in ("<f4", "<f8"):
        raise UnsupportedFormatError(f"{path}: dtype {descr!r} unsupported")
    if not isinstance(shape, tuple) or len(shape) not in (1, 2):
        raise UnsupportedFormatError(f"{path}: shape {shape!r} unsupported")

    itemsize = 4 if descr == "<f4" else 8
    count = 1
    for s in shape:
        count *= int(s)
    expected = count * itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise CorruptFileError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype=descr).astype(np.float64)
    matrix = data.reshape(shape if len(shape) == 2 else (1, shape[0]))
    if not np.isfinite(matrix).all():
        raise CorruptFileError(f"{path}: non-finite values in payload")
    return matrix


def write_npy(path, matrix) -> None:
    """Write a 2-D float64 array as NPY v1.0, little-endian, C order."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<f8"))
    if m.ndim != 2:
        raise InvalidArgumentError(f"matrix must be 2-D, got ndim={m.ndim}")
    header = (
        "{'descr': '<f8', 'fortran_order': False, "
        f"'shape': ({m.shape[0]}, {m.shape[1]}), }}"
    )
    prefix_len = len(NPY_MAGIC) + 2 + 2
    padded = -(prefix_len + len(header) + 1) % 64
    header = header + " " * padded + "\n"
    with open(path, "wb") as fh:
        fh.write(NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(m.tobytes(order="C"))


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    """Resolved description of one dataset: named layer files plus optional
    labels and logits, all paths absolute."""

    name: str
    role: str
    layer_names: tuple[str, ...]
    layer_paths: tuple[Path, ...]
    labels_path: Path | None = None
    logits_path: Path | None = None
    checksums: dict[str, str] | None = None


def load_manifest(path) -> DatasetManifest:
    """Read and validate a JSON manifest; referenced files must exist."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{p}: invalid JSON manifest") from exc
    if not isinstance(doc, dict):
        raise CorruptFileError(f"{p}: manifest must be a JSON object")

    role = doc.get("role")
    if role not in MANIFEST_ROLES:
        raise CorruptFileError(f"{p}: role {role!r} not one of {MANIFEST_ROLES}")
    layers = doc.get("layers")
    if not isinstance(layers, list) or not layers:
        raise CorruptFileError(f"{p}: manifest needs a non-empty 'layers' list")

    base = p.parent

    def resolve(rel) -> Path:
        target = (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
        if not target.exists():
            raise InvalidArgumentError(f"{p}: referenced file missing: {target}")
        return target

    names, paths = [], []
    for entry in layers:
        if not isinstance(entry, dict) or "name" not in entry or "path" not in entry:
            raise CorruptFileError(f"{p}: each layer needs 'name' and 'path'")
        names.append(str(entry["name"]))
        paths.append(resolve(entry["path"]))
    if len(set(names)) != len(names):
        raise CorruptFileError(f"{p}: duplicate layer names")

    labels = resolve(doc["labels"]) if "labels" in doc else None
    logits = resolve(doc["logits"]) if "logits" in doc else None
    checksums = doc.get("checksums")
    if checksums is not None and not isinstance(checksums, dict):
        raise CorruptFileError(f"{p}: 'checksums' must be an object")

    manifest = DatasetManifest(
        name=str(doc.get("name", p.stem)),
        role=role,
        layer_names=tuple(names),
        layer_paths=tuple(paths),
        labels_path=labels,
        logits_path=logits,
        checksums=checksums,
    )
    if checksums:
        declared = {str(e["path"]): e["path"] for e in layers}
        for rel, digest in checksums.items():
            if rel in declared or rel in (doc.get("labels"), doc.get("logits")):
                actual = sha256_of(resolve(rel))
                if actual != digest:
                    raise CorruptFileError(
                        f"{p}: checksum mismatch for {rel}: "
                        f"expected {digest}, found {actual}"
                    )
    return manifest


@dataclass(frozen=True)
class FeatureBundle:
    """All per-layer feature matrices of one dataset, in manifest order."""

    layer_names: tuple[str, ...]
    per_layer: tuple[np.ndarray, ...]
    labels: np.ndarray | None = None
    logits: np.ndarray | None = None

    @property
    def num_samples(self) -> int:
        return self.per_layer[0].shape[0]


def load_bundle(manifest: DatasetManifest) -> FeatureBundle:
    """Load every file a manifest references and cross-check row counts."""
    per_layer = []
    n = None
    for name, path in zip(manifest.layer_names, manifest.layer_paths):
        mat = read_npy(path)
        if n is None:
            n = mat.shape[0]
        elif mat.shape[0] != n:
            raise InvalidArgumentError(
                f"layer {name!r} has {mat.shape[0]} rows, expected {n}"
            )
        per_layer.append(mat)

    labels = None
    if manifest.labels_path is not None:
        raw = read_npy(manifest.labels_path).ravel()
        if raw.shape[0] != n:
            raise InvalidArgumentError(
                f"labels have {raw.shape[0]} entries, expected {n}"
            )
        rounded = np.rint(raw)
        if np.abs(raw - rounded).max() > 0:
            raise InvalidArgumentError("labels must be integer class ids")
        labels = rounded.astype(np.int64)

    logits = None
    if manifest.logits_path is not None:
        logits = read_npy(manifest.logits_path)
        if logits.shape[0] != n:
            raise InvalidArgumentError(
                f"logits have {logits.shape[0]} rows, expected {n}"
            )

    return FeatureBundle(manifest.layer_names, tuple(per_layer), labels, logits)


# --- model serialization ----------------------------------------------------


def _enc(x: float) -> str:
    return float(x).hex()


def _enc_vec(v) -> list[str]:
    return [_enc(x) for x in np.asarray(v, dtype=np.float64).ravel()]


def _enc_mat(m) -> list[list[str]]:
    return [[_enc(x) for x in row] for row in np.asarray(m, dtype=np.float64)]


def _dec(s) -> float:
    return float.fromhex(s)


def _dec_vec(v) -> np.ndarray:
    return np.array([_dec(x) for x in v], dtype=np.float64)


def _dec_mat(m) -> np.ndarray:
    return np.array([[_dec(x) for x in row] for row in m], dtype=np.float64)


def _factor_doc(f: SpdFactor) -> dict:
    return {
        "lower": _enc_mat(f.lower),
        "log_det": _enc(f.log_det),
        "ridge_used": _enc(f.ridge_used),
    }


def _factor_from(doc) -> SpdFactor:
    lower = _dec_mat(doc["lower"])
    return SpdFactor(
        dim=lower.shape[0],
        lower=lower,
        log_det=_dec(doc["log_det"]),
        ridge_used=_dec(doc["ridge_used"]),
    )


@dataclass(frozen=True)
class StoredModel:
    """A deserialized model file: its kind, layer names, and the model."""

    kind: str
    layer_names: tuple[str, ...]
    model: LsgmModel | MahalanobisParams


def save_model(path, model, layer_names=None) -> None:
    """Serialize a chain model or Mahalanobis parameters to a JSON file.

    ``layer_names`` is required for MahalanobisParams (a chain model carries
    its own names).
    """
    if isinstance(model, LsgmModel):
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "model_kind": "lsgm",
            "layer_names": list(model.layer_names),
            "layers": [
                {
                    "covariance_mode": layer.covariance_mode,
                    "weights": _enc_vec(layer.weights),
                    "means": _enc_mat(layer.means),
                    "cov_factors": [_factor_doc(f) for f in layer.cov_factors],
                }
                for layer in model.layers
            ],
            "transitions": [
                {"smoothing": _enc(t.smoothing), "probs": _enc_mat(t.probs)}
                for t in model.transitions
            ],
        }
    elif isinstance(model, MahalanobisParams):
        if layer_names is None or len(layer_names) != model.num_layers:
            raise InvalidArgumentError(
                "saving MahalanobisParams requires one layer name per layer"
            )
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "model_kind": "mahalanobis",
            "layer_names": list(layer_names),
            "layer_weights": _enc_vec(model.layer_weights),
            "layers": [
                {
                    "class_means": _enc_mat(stats.class_means),
                    "shared_cov_factor": _factor_doc(stats.shared_cov_factor),
                }
                for stats in model.per_layer
            ],
        }
    else:
        raise InvalidArgumentError(f"cannot serialize {type(model).__name__}")
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path) -> StoredModel:
    """Load a model file written by save_model."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{p}: invalid JSON model file") from exc
    if not isinstance(doc, dict):
        raise CorruptFileError(f"{p}: model file must be a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedFormatError(
            f"{p}: format_version {version!r}, reader supports {MODEL_FORMAT_VERSION}"
        )
    kind = doc.get("model_kind")
    try:
        if kind == "lsgm":
            layers = tuple(
                LayerMixture(
                    _dec_vec(layer["weights"]),
                    _dec_mat(layer["means"]),
                    tuple(_factor_from(f) for f in layer["cov_factors"]),
                    layer["covariance_mode"],
                )
                for layer in doc["layers"]
            )
            transitions = tuple(
                TransitionMatrix(_dec_mat(t["probs"]), _dec(t["smoothing"]))
                for t in doc["transitions"]
            )
            names = tuple(str(n) for n in doc["layer_names"])
            return StoredModel("lsgm", names, LsgmModel(layers, transitions, names))
        if kind == "mahalanobis":
            per_layer = tuple(
                LayerClassStats(
                    _dec_mat(layer["class_means"]),
                    _factor_from(layer["shared_cov_factor"]),
                )
                for layer in doc["layers"]
            )
            params = MahalanobisParams(per_layer, _dec_vec(doc["layer_weights"]))
            names = tuple(str(n) for n in doc["layer_names"])
            return StoredModel("mahalanobis", names, params)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptFileError(f"{p}: malformed model document: {exc}") from exc
    raise CorruptFileError(f"{p}: unknown model_kind {kind!r}")
