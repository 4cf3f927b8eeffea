"""Versioned binary checkpoints for online trainers, plus model files.

Checkpoint layout (all integers little-endian)::

    b"SSVM"                      magic, 4 bytes
    uint32 version               currently 1
    uint32 header_length
    header                       canonical JSON (sorted keys, no spaces, ASCII)
    array payloads               raw little-endian bytes, in header["arrays"] order
    sha256                       32-byte digest of every preceding byte

Scalar floats in the header are stored with :meth:`float.hex` so they
round-trip bit for bit.  Kernel matrices are not stored; they are
recomputed on load from the stored samples, which reproduces them exactly.
The ISVM bordered inverse is stored, then checked against the matrix it
inverts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Model
from .errors import CorruptCheckpointError, UnsupportedVersionError, CheckpointError, DataError
from .isvm import IsvmState
from .kernel import KernelSpec, kernel_block
from .lasvm import LasvmState

log = logging.getLogger(__name__)

MAGIC = b"SSVM"
VERSION = 1
DIGEST_SIZE = 32
INVERSE_TOLERANCE = 1e-6

_ISVM_SCALARS = ("C", "eps_kkt", "kappa_min", "mu")
_ISVM_INTS = ("n", "next_id", "rebuilds", "last_iterations")
_LASVM_SCALARS = ("C", "tau", "b", "delta")
_LASVM_INTS = ("n", "next_id", "removed_total")


@dataclass
class Checkpoint:
    """A trainer state plus the stream bookkeeping needed to continue it.

    ``position`` counts samples consumed; ``meta`` holds JSON-serializable
    run settings (data fingerprint, schedule, seed and so on).
    """

    state: object
    position: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def trainer(self) -> str:
        return "isvm" if isinstance(self.state, IsvmState) else "lasvm"


def _atomic_write_bytes(path, blob: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False).encode("ascii")


def _state_fields(state):
    """Split a trainer state into (header dict, ordered [(name, array)])."""
    if isinstance(state, IsvmState):
        n = state.n
        header = {"trainer": "isvm"}
        header.update({k: float(getattr(state, k)).hex() for k in _ISVM_SCALARS})
        header.update({k: int(getattr(state, k)) for k in _ISVM_INTS})
        arrays = [("X", state._X[:n]), ("y", state._y[:n]), ("alpha", state._alpha[:n]),
                  ("g", state._g[:n]), ("member", state._member[:n]), ("ids", state._ids[:n]),
                  ("support", np.asarray(state.support, dtype=np.int64)),
                  ("inverse", state.inverse)]
    elif isinstance(state, LasvmState):
        n = state.n
        header = {"trainer": "lasvm"}
        header.update({k: float(getattr(state, k)).hex() for k in _LASVM_SCALARS})
        header.update({k: int(getattr(state, k)) for k in _LASVM_INTS})
        arrays = [("X", state._X[:n]), ("y", state._y[:n]), ("alpha", state._alpha[:n]),
                  ("g", state._g[:n]), ("ids", state._ids[:n])]
    else:
        raise CheckpointError(f"cannot checkpoint a {type(state).__name__}")
    header["dim"] = -1 if state.dim is None else int(state.dim)
    header["kernel"] = state.kernel.to_text()
    return header, arrays


def dumps(checkpoint: Checkpoint) -> bytes:
    header, arrays = _state_fields(checkpoint.state)
    header["position"] = int(checkpoint.position)
    header["meta"] = checkpoint.meta
    manifest = []
    payload = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest.append([name, le.dtype.str, list(arr.shape)])
        payload.append(le.tobytes())
    header["arrays"] = manifest
    head = _canonical_json(header)
    body = MAGIC + struct.pack("<II", VERSION, len(head)) + head + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(checkpoint, path):
    """Atomically write ``checkpoint`` (a :class:`Checkpoint` or bare state)."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint(checkpoint)
    _atomic_write_bytes(path, dumps(checkpoint))


def _gram(kernel, X, n):
    K = np.zeros((n, n))
    for p in range(n):
        K[p] = kernel_block(kernel, X, X[p])
    return K


def loads(blob: bytes) -> Checkpoint:
    if len(blob) < 12 + DIGEST_SIZE or blob[:4] != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic or too short)")
    version, head_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    body, digest = blob[:-DIGEST_SIZE], blob[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch; the file is truncated or damaged")
    try:
        header = json.loads(body[12:12 + head_len].decode("ascii"))
        arrays = {}
        offset = 12 + head_len
        for name, dtype, shape in header["arrays"]:
            dt = np.dtype(dtype)
            count = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(body, dt, count, offset).reshape(shape).astype(dt.newbyteorder("="))
            offset += count * dt.itemsize
        if offset != len(body):
            raise CorruptCheckpointError("payload length does not match the array manifest")
        state = _build_state(header, arrays)
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc
    return Checkpoint(state, int(header["position"]), header["meta"])


def _restore_buffers(state, header, arrays, names):
    n = header["n"]
    dim = header["dim"]
    capacity = max(64, 1 << max(0, n - 1).bit_length())
    state._alloc(capacity, max(dim, 1))
    state.dim = None if dim < 0 else dim
    state.n = n
    for name in names:
        getattr(state, "_" + name)[:n] = arrays[name]


def _build_state(header, arrays):
    kernel = KernelSpec.from_text(header["kernel"])
    hexf = float.fromhex
    if header["trainer"] == "isvm":
        state = IsvmState(hexf(header["C"]), kernel, hexf(header["eps_kkt"]), hexf(header["kappa_min"]))
        _restore_buffers(state, header, arrays, ("X", "y", "alpha", "g", "member", "ids"))
        for k in _ISVM_INTS:
            setattr(state, k, int(header[k]))
        state.mu = hexf(header["mu"])
        n = state.n
        state._G[:n, :n] = _gram(kernel, state._X[:n], n)
        state.support = [int(p) for p in arrays["support"]]
        state.inverse = arrays["inverse"]
        residual = state.inverse_residual()
        if not residual <= INVERSE_TOLERANCE:
            log.warning("stored inverse fails verification (residual %.3e); rebuilding", residual)
            state._rebuild_inverse()
        return state
    if header["trainer"] == "lasvm":
        state = LasvmState(hexf(header["C"]), hexf(header["tau"]), kernel)
        _restore_buffers(state, header, arrays, ("X", "y", "alpha", "g", "ids"))
        for k in _LASVM_INTS:
            setattr(state, k, int(header[k]))
        state.b = hexf(header["b"])
        state.delta = hexf(header["delta"])
        n = state.n
        state._hi[:n] = np.maximum(0.0, state.C * state._y[:n])
        state._lo[:n] = np.minimum(0.0, state.C * state._y[:n])
        state._K[:n, :n] = _gram(kernel, state._X[:n], n)
        return state
    raise CorruptCheckpointError(f"unknown trainer {header['trainer']!r}")


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(blob)


# -- model files -------------------------------------------------------------------

MODEL_FORMAT = "streamsvm-model"


def model_to_json(model: Model) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": 1,
        "kernel": model.kernel.to_text(),
        "C": float(model.C).hex(),
        "bias": float(model.bias).hex(),
        "convention": model.convention,
        "labels": [int(v) for v in model.labels],
        "coefficients": [float(v).hex() for v in model.coefficients],
        "support_vectors": [[float(v).hex() for v in row] for row in model.support_vectors],
        "feature_dim": int(model.support_vectors.shape[1]) if model.n_support else None,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def save_model(model: Model, path):
    _atomic_write_bytes(path, model_to_json(model).encode("ascii"))


def load_model(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text(encoding="ascii"))
        if doc.get("format") != MODEL_FORMAT:
            raise DataError(f"{path} is not a model file")
        if doc.get("version") != 1:
            raise UnsupportedVersionError(f"model version {doc.get('version')} is not supported")
        hexf = float.fromhex
        sv = np.array([[hexf(v) for v in row] for row in doc["support_vectors"]], dtype=np.float64)
        if sv.size == 0:
            sv = np.zeros((0, doc["feature_dim"] or 0))
        return Model(KernelSpec.from_text(doc["kernel"]), sv, doc["labels"],
                     [hexf(v) for v in doc["coefficients"]], hexf(doc["bias"]), hexf(doc["C"]),
                     doc["convention"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
