"""Shared domain types, validation and the binary model format.

Conventions used across the package: samples are matrix *columns*
(``Y`` has shape ``(d, N)``), dictionaries have shape ``(d, K)`` and
coefficient matrices ``(K, N)``.  Everything is float64.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

ATOM_NORM_TOL = 1e-10


class SparseDLError(Exception):
    """Base class for all package errors."""


class DataError(SparseDLError, ValueError):
    """Input data violates a documented invariant."""


class NumericalError(SparseDLError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class DegenerateDictionaryError(NumericalError):
    """Selected atoms are (numerically) linearly dependent."""

    def __init__(self, message: str, column: Optional[int] = None):
        if column is not None:
            message = f"column {column}: {message}"
        super().__init__(message)
        self.column = column


class FormatError(SparseDLError, ValueError):
    """Malformed model stream."""


class VersionError(FormatError):
    pass


class TruncatedStreamError(FormatError):
    pass


# ---------------------------------------------------------------------------
# domain types


def normalize_columns(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scale columns to unit l2 norm; returns ``(A_normalized, norms)``.

    Zero columns are left untouched (their norm is reported as 0).
    """
    A = np.asarray(A, dtype=np.float64)
    norms = np.linalg.norm(A, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return A / safe, norms


def sign_canonical(A: np.ndarray) -> np.ndarray:
    """Per-column signs making the largest-magnitude entry of each column positive."""
    A = np.asarray(A)
    if A.size == 0:
        return np.ones(A.shape[1] if A.ndim == 2 else 0)
    idx = np.argmax(np.abs(A), axis=0)
    s = np.sign(A[idx, np.arange(A.shape[1])])
    s[s == 0] = 1.0
    return s


@dataclass(frozen=True, eq=False)
class Dictionary:
    """A ``d x K`` matrix of unit-norm atoms.

    ``class_partition`` optionally maps a class id to the half-open atom
    range ``(start, stop)`` owned by that class.
    """

    atoms: np.ndarray
    class_partition: Optional[Dict[int, Tuple[int, int]]] = None

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=np.float64, order="C")
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise DataError(f"dictionary must be a non-empty 2-D array, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise DataError("dictionary contains non-finite values")
        dev = np.abs(np.linalg.norm(atoms, axis=0) - 1.0)
        if dev.max() > ATOM_NORM_TOL:
            k = int(np.argmax(dev))
            raise DataError(f"atom {k} has norm deviating from 1 by {dev[k]:.3e}")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        if self.class_partition is not None:
            part = {int(c): (int(a), int(b)) for c, (a, b) in self.class_partition.items()}
            spans = sorted(part.values())
            pos = 0
            for a, b in spans:
                if a != pos or b <= a:
                    raise DataError("class_partition ranges must be disjoint, non-empty and cover [0, K)")
                pos = b
            if pos != atoms.shape[1]:
                raise DataError("class_partition ranges must cover [0, K)")
            object.__setattr__(self, "class_partition", part)

    @classmethod
    def from_matrix(cls, A, class_partition=None) -> "Dictionary":
        """Build a dictionary from arbitrary columns by normalizing them."""
        An, norms = normalize_columns(A)
        if np.any(norms == 0):
            raise DataError(f"zero column {int(np.argmin(norms))} cannot be normalized")
        return cls(An, class_partition)

    @property
    def d(self) -> int:
        return self.atoms.shape[0]

    @property
    def K(self) -> int:
        return self.atoms.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.atoms if dtype is None else self.atoms.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Dictionary):
            return NotImplemented
        return self.class_partition == other.class_partition and np.array_equal(self.atoms, other.atoms)

    def coherence(self) -> float:
        return mutual_coherence(self.atoms)

    def to_record(self):
        meta = {"class_partition": _partition_to_json(self.class_partition)}
        return meta, {"atoms": self.atoms}

    @classmethod
    def from_record(cls, meta, arrays):
        return cls(arrays["atoms"], _partition_from_json(meta["class_partition"]))


def mutual_coherence(D) -> float:
    """Largest absolute inner product between two distinct (normalized) atoms."""
    Dn, _ = normalize_columns(np.asarray(D))
    G = np.abs(Dn.T @ Dn)
    np.fill_diagonal(G, 0.0)
    return float(G.max()) if G.size > 1 else 0.0


def _partition_to_json(part):
    if part is None:
        return None
    return [[c, a, b] for c, (a, b) in sorted(part.items())]


def _partition_from_json(obj):
    if obj is None:
        return None
    return {int(c): (int(a), int(b)) for c, a, b in obj}


@dataclass(frozen=True, eq=False)
class SparseCodes:
    """Column-sparse ``K x N`` coefficient matrix.

    Stored as per-column index/value lists laid out contiguously: column
    ``j`` owns ``indices[indptr[j]:indptr[j + 1]]`` (strictly increasing)
    and the matching ``values``.
    """

    n_atoms: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    budget: Optional[int] = None

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indptr.ndim != 1 or indptr.size < 1 or indptr[0] != 0 or indptr[-1] != indices.size:
            raise DataError("malformed indptr")
        if indices.shape != values.shape:
            raise DataError("indices and values differ in length")
        if np.any(np.diff(indptr) < 0):
            raise DataError("indptr must be non-decreasing")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_atoms):
            raise DataError("atom index out of range")
        for j in range(indptr.size - 1):
            seg = indices[indptr[j] : indptr[j + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise DataError(f"indices of column {j} are not strictly increasing")
        if self.budget is not None and indptr.size > 1 and np.diff(indptr).max() > self.budget:
            raise DataError("a column exceeds the sparsity budget")
        for name, arr in (("indptr", indptr), ("indices", indices), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dense(cls, X, budget: Optional[int] = None) -> "SparseCodes":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("expected a 2-D coefficient matrix")
        mask = X != 0
        rows, cols = np.nonzero(mask.T)  # column-major traversal
        indptr = np.zeros(X.shape[1] + 1, dtype=np.int64)
        np.cumsum(mask.sum(axis=0), out=indptr[1:])
        return cls(X.shape[0], indptr, cols, X[cols, rows], budget)

    @classmethod
    def empty(cls, n_atoms: int, budget: Optional[int] = None) -> "SparseCodes":
        return cls(n_atoms, np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0), budget)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_atoms, self.indptr.size - 1

    @property
    def n_cols(self) -> int:
        return self.indptr.size - 1

    def nnz_per_column(self) -> np.ndarray:
        return np.diff(self.indptr)

    def column(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.indptr[j], self.indptr[j + 1]
        return self.indices[a:b], self.values[a:b]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for j in range(self.n_cols):
            yield self.column(j)

    def to_dense(self) -> np.ndarray:
        X = np.zeros(self.shape)
        cols = np.repeat(np.arange(self.n_cols), self.nnz_per_column())
        X[self.indices, cols] = self.values
        return X

    def __eq__(self, other):
        if not isinstance(other, SparseCodes):
            return NotImplemented
        return (
            self.n_atoms == other.n_atoms
            and self.budget == other.budget
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def to_record(self):
        meta = {"n_atoms": self.n_atoms, "budget": self.budget}
        return meta, {"indptr": self.indptr, "indices": self.indices, "values": self.values}

    @classmethod
    def from_record(cls, meta, arrays):
        return cls(meta["n_atoms"], arrays["indptr"], arrays["indices"], arrays["values"], meta["budget"])


@dataclass(frozen=True)
class Dataset:
    """Samples as columns of ``Y`` (``d x N``) with integer class labels."""

    Y: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int] = None
    class_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if Y.ndim != 2:
            raise DataError(f"samples must be 2-D (d x N), got shape {Y.shape}")
        if Y.shape[1] != labels.size:
            raise DataError(f"dimension mismatch: {Y.shape[1]} samples but {labels.size} labels")
        n_classes = self.n_classes
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise DataError("labels must lie in [0, n_classes)")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", int(n_classes))

    @property
    def d(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    def one_hot(self) -> np.ndarray:
        return one_hot(self.labels, self.n_classes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.Y[:, idx], self.labels[idx], self.n_classes, self.class_names)


def one_hot(labels, n_classes: Optional[int] = None) -> np.ndarray:
    """``C x N`` label matrix with a single 1 per column."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    H = np.zeros((n_classes, labels.size))
    H[labels, np.arange(labels.size)] = 1.0
    return H


def validate(samples, labels) -> None:
    """Check a sample matrix against a one-hot label matrix.

    Raises :class:`DataError` describing the first violated invariant;
    returns ``None`` when the pair is consistent.
    """
    Y = np.asarray(samples, dtype=np.float64)
    H = np.asarray(labels, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] < 1 or Y.shape[1] < 1:
        raise DataError(f"samples must be a non-empty d x N matrix, got shape {Y.shape}")
    if H.ndim != 2:
        raise DataError(f"labels must be a C x N matrix, got shape {H.shape}")
    if H.shape[1] != Y.shape[1]:
        raise DataError(f"dimension mismatch: {Y.shape[1]} samples but {H.shape[1]} label columns")
    if H.shape[0] < 2:
        raise DataError(f"need at least 2 classes, got {H.shape[0]}")
    bad = np.argwhere(~np.isfinite(Y))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"non-finite at ({i},{j})")
    for j in range(H.shape[1]):
        col = H[:, j]
        if not (np.all((col == 0) | (col == 1)) and col.sum() == 1):
            raise DataError(f"non-one-hot at column {j}")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the learning pipeline in one place.

    Loaded from plain ``key = value`` text files (``#`` starts a comment);
    see :meth:`from_file`.
    """

    seed: int = 0
    sparsity: int = 10
    atoms_per_class: int = 18
    dksvd_alpha: float = 1.0
    ridge_lambda: float = 1.0
    class_ksvd_iters: int = 10
    dksvd_iters: int = 20
    omp_rel_tol: float = 1e-6
    ista_max_iter: int = 5000
    ista_tol: float = 1e-12
    hidden1: int = 256
    hidden2: int = 128
    dropout: float = 0.3
    bn_momentum: float = 0.9
    batch_size: int = 128
    learning_rate: float = 0.01
    epochs: int = 30
    workers: int = 1

    def __post_init__(self):
        checks = [
            (self.seed >= 0, "seed must be >= 0"),
            (self.sparsity >= 1, "sparsity must be >= 1"),
            (self.atoms_per_class >= 1, "atoms_per_class must be >= 1"),
            (self.dksvd_alpha >= 0, "dksvd_alpha must be >= 0"),
            (self.ridge_lambda >= 0, "ridge_lambda must be >= 0"),
            (self.class_ksvd_iters >= 1 and self.dksvd_iters >= 0, "iteration caps out of range"),
            (self.omp_rel_tol > 0 and self.ista_tol > 0, "tolerances must be > 0"),
            (self.ista_max_iter >= 1, "ista_max_iter must be >= 1"),
            (0 <= self.dropout < 1, "dropout must be in [0, 1)"),
            (0 <= self.bn_momentum < 1, "bn_momentum must be in [0, 1)"),
            (self.hidden1 >= 1 and self.hidden2 >= 1, "hidden sizes must be >= 1"),
            (self.batch_size >= 1 and self.epochs >= 0, "batch_size/epochs out of range"),
            (self.learning_rate >= 0, "learning_rate must be >= 0"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DataError(msg)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise DataError(f"unknown config key {key!r}")
            conv = int if types[key] in ("int", int) else float
            try:
                kwargs[key] = conv(raw)
            except ValueError:
                raise DataError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
        return cls.from_mapping(values)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))

    def to_record(self):
        return dataclasses.asdict(self), {}

    @classmethod
    def from_record(cls, meta, arrays):
        return cls(**meta)


# ---------------------------------------------------------------------------
# model serialization
#
# stream := MAGIC version:u16 kind meta n_arrays:u32 array*
# kind   := len:u16 utf8
# meta   := len:u32 utf8-json (sorted keys)
# array  := name(len:u16 utf8) dtype:u8 ('d' f8 | 'q' i8) ndim:u8 shape:u64*ndim payload
# All integers and payloads little-endian.

MAGIC = b"SDLM"
FORMAT_VERSION = 1

_REGISTRY: Dict[str, type] = {}


def register_model(kind: str) -> Callable[[type], type]:
    """Class decorator adding a type to the serialization registry.

    Registered classes provide ``to_record() -> (meta, arrays)`` and a
    ``from_record(meta, arrays)`` classmethod.  Nested models are stored
    by prefixing their array names (see :func:`nest_record`).
    """

    def deco(cls):
        _REGISTRY[kind] = cls
        cls._model_kind = kind
        return cls

    return deco


register_model("dictionary")(Dictionary)
register_model("sparse_codes")(SparseCodes)
register_model("run_config")(RunConfig)


def nest_record(prefix: str, model) -> Tuple[dict, Dict[str, np.ndarray]]:
    meta, arrays = model.to_record()
    return {"kind": model._model_kind, "meta": meta}, {f"{prefix}/{k}": v for k, v in arrays.items()}


def unnest_record(prefix: str, meta: dict, arrays: Mapping[str, np.ndarray]):
    _ensure_registry()
    cls = _REGISTRY[meta["kind"]]
    head = prefix + "/"
    sub = {k[len(head) :]: v for k, v in arrays.items() if k.startswith(head)}
    return cls.from_record(meta["meta"], sub)


def _ensure_registry():
    # model classes living in other modules register themselves on import
    from . import dictionary_learning, mlp, pipeline  # noqa: F401


def serialize_model(model) -> bytes:
    """Encode a registered model into the versioned little-endian format."""
    kind = getattr(type(model), "_model_kind", None)
    if kind is None:
        raise TypeError(f"{type(model).__name__} is not a serializable model type")
    meta, arrays = model.to_record()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    _write_str(buf, kind, "<H")
    _write_str(buf, json.dumps(meta, sort_keys=True, allow_nan=False), "<I")
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype.kind == "f":
            code, dt = b"d", np.dtype("<f8")
        elif arr.dtype.kind in "iub":
            code, dt = b"q", np.dtype("<i8")
        else:
            raise TypeError(f"cannot serialize array {name!r} of dtype {arr.dtype}")
        _write_str(buf, name, "<H")
        buf.write(code)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def deserialize_model(data: bytes):
    """Inverse of :func:`serialize_model`."""
    reader = _Reader(data)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise VersionError(f"bad magic bytes {magic!r}; not a sparsedl model stream")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    kind = reader.string("<H")
    meta = json.loads(reader.string("<I"))
    (n_arrays,) = reader.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        name = reader.string("<H")
        code = reader.take(1)
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q")
        dt = {b"d": np.dtype("<f8"), b"q": np.dtype("<i8")}.get(code)
        if dt is None:
            raise FormatError(f"unknown dtype code {code!r}")
        count = math.prod(shape)
        arrays[name] = np.frombuffer(reader.take(count * 8), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if reader.pos != len(data):
        raise FormatError("trailing bytes after model payload")
    _ensure_registry()
    if kind not in _REGISTRY:
        raise FormatError(f"unknown model kind {kind!r}")
    return _REGISTRY[kind].from_record(meta, arrays)


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


def _write_str(buf, s: str, len_fmt: str):
    raw = s.encode("utf-8")
    buf.write(struct.pack(len_fmt, len(raw)))
    buf.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStreamError(
                f"stream truncated: needed {n} bytes at offset {self.pos}, {len(self.data) - self.pos} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, len_fmt: str) -> str:
        (n,) = self.unpack(len_fmt)
        return self.take(n).decode("utf-8")
