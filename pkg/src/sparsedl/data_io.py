"""Dataset loading, synthetic generators and splitting."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .core import DataError, Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(raw: bytes, expected_magic: int) -> np.ndarray:
    """Decode an unsigned-byte IDX payload into an array of its declared shape."""
    if len(raw) < 4:
        raise DataError("truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(f"magic mismatch: got 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError("truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        raise DataError(f"truncated IDX payload: expected {count} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def encode_idx(arr: np.ndarray) -> bytes:
    """Inverse of :func:`parse_idx` for ``uint8`` arrays."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """MNIST-style IDX pair as a ``Dataset`` with pixels scaled to [0, 1].

    Columns are row-major flattened images (``d = 784`` for MNIST).
    """
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"count mismatch: {images.shape[0]} images but {labels.shape[0]} labels")
    Y = images.reshape(images.shape[0], -1).T.astype(np.float64) / 255.0
    return Dataset(Y, labels.astype(np.int64), n_classes=10)


def find_mnist(root, part: str = "train") -> Optional[Tuple[Path, Path]]:
    """Locate the IDX pair for ``part`` ("train"/"test") under ``root``."""
    root = Path(root)
    img, lab = MNIST_FILES[part]
    for suffix in ("", ".gz"):
        a, b = root / (img + suffix), root / (lab + suffix)
        if a.is_file() and b.is_file():
            return a, b
    return None


def load_image_dir(root) -> Dataset:
    """Images stored as ``root/<class>/<file>``, binarized and flattened.

    Class ids follow the sorted subdirectory names.  Pixels are converted
    to grayscale in [0, 1] and thresholded at 0.5 (``>= 0.5`` -> 1).
    """
    from PIL import Image

    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"no class subdirectories under {root}")
    cols, labels = [], []
    size = None
    for c, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.is_file())
        if not files:
            raise DataError(f"empty class directory {name!r}")
        for f in files:
            with Image.open(f) as im:
                g = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            if size is None:
                size = g.shape
            elif g.shape != size:
                raise DataError(f"size mismatch: {f} is {g.shape[1]}x{g.shape[0]}, expected {size[1]}x{size[0]}")
            cols.append((g >= 0.5).astype(np.float64).reshape(-1))
            labels.append(c)
    return Dataset(np.stack(cols, axis=1), np.array(labels), n_classes=len(classes), class_names=tuple(classes))


def load_npz(path) -> Dataset:
    """``.npz`` with ``Y`` (``d x N``) and ``labels``; optional ``n_classes``."""
    with np.load(path) as z:
        n_classes = int(z["n_classes"]) if "n_classes" in z else None
        return Dataset(z["Y"], z["labels"], n_classes)


def save_npz(path, ds: Dataset) -> None:
    np.savez(path, Y=ds.Y, labels=ds.labels, n_classes=ds.n_classes)


def load_dataset(path, part: str = "train") -> Dataset:
    """Dispatch on ``path``: ``.npz`` file, MNIST IDX directory or image tree."""
    path = Path(path)
    if path.is_file() and path.suffix == ".npz":
        return load_npz(path)
    if path.is_dir():
        pair = find_mnist(path, part)
        if pair is not None:
            return load_mnist_idx(*pair)
        return load_image_dir(path)
    raise DataError(f"cannot load a dataset from {path}")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    d: int
    K: int
    N: int
    T: int
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d, self.K, self.N, self.T) < 1 or self.T > self.K or self.sigma < 0:
            raise DataError("SynthSpec needs positive sizes, T <= K and sigma >= 0")


def synth_recovery(spec: SynthSpec):
    """Ground-truth dictionary, ``T``-sparse codes and ``Y = D X + sigma * noise``."""
    rng = np.random.default_rng(spec.seed)
    D = rng.standard_normal((spec.d, spec.K))
    D /= np.linalg.norm(D, axis=0)
    X = np.zeros((spec.K, spec.N))
    for j in range(spec.N):
        support = rng.choice(spec.K, size=spec.T, replace=False)
        X[support, j] = rng.standard_normal(spec.T)
    Y = D @ X
    if spec.sigma > 0:
        Y = Y + spec.sigma * rng.standard_normal(Y.shape)
    return D, X, Y


def gaussian_blobs(n_classes: int, d: int, n_per_class: int, spread: float = 0.3, separation: float = 5.0, seed: int = 0) -> Dataset:
    """Isotropic clusters around random, well separated centres."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((d, n_classes))
    centres *= separation / np.linalg.norm(centres, axis=0)
    cols = [centres[:, [c]] + spread * rng.standard_normal((d, n_per_class)) for c in range(n_classes)]
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(np.hstack(cols), labels, n_classes)


# ---------------------------------------------------------------------------
# splits


Number = Union[int, float]


@dataclass(frozen=True)
class SplitSpec:
    """Sizes of the train/val/test parts, as counts (ints) or fractions (floats)."""

    train: Number
    val: Number = 0
    test: Number = 0
    seed: int = 0
    stratified: bool = False
    min_per_class: int = 1

    def __post_init__(self):
        parts = (self.train, self.val, self.test)
        if any(p < 0 for p in parts):
            raise DataError("split sizes must be >= 0")
        if all(isinstance(p, float) for p in parts) and sum(parts) > 1 + 1e-12:
            raise DataError("split fractions sum to more than 1")

    def fractions(self, N: int):
        parts = (self.train, self.val, self.test)
        if all(isinstance(p, float) for p in parts):
            return parts
        if sum(parts) > N:
            raise DataError(f"split counts {parts} exceed N={N}")
        return tuple(p / N if not isinstance(p, float) else p for p in parts)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5 + 1e-9))


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Disjoint train/val/test subsets.

    Unstratified: one seeded permutation cut at the requested counts.
    Stratified: each class is cut proportionally, every part within one
    sample of its exact share; when the fractions cover the whole dataset
    the rounding remainder goes to train.
    """
    N = ds.N
    rng = np.random.default_rng(spec.seed)
    fr = spec.fractions(N)
    full = abs(sum(fr) - 1.0) < 1e-12
    if not spec.stratified:
        counts = [int(round(f * N)) for f in fr]
        if full:
            counts[0] = N - counts[1] - counts[2]
        perm = rng.permutation(N)
        a, b = counts[0], counts[0] + counts[1]
        parts = [perm[:a], perm[a:b], perm[b : b + counts[2]]]
    else:
        parts = [[], [], []]
        for c in range(ds.n_classes):
            idx = np.flatnonzero(ds.labels == c)
            if idx.size == 0:
                continue
            idx = idx[rng.permutation(idx.size)]
            n = idx.size
            # cumulative rounding keeps every part within one sample of its share
            nt = _round_half_up(n * fr[2])
            nv = _round_half_up(n * (fr[1] + fr[2])) - nt
            ntr = n - nv - nt if full else min(_round_half_up(n * fr[0]), n - nv - nt)
            for share, f in zip((ntr, nv, nt), fr):
                if f > 0 and share < spec.min_per_class:
                    raise DataError(f"class {c} has {n} samples, too few for a stratified split with at least {spec.min_per_class} per part")
            parts[0].append(idx[:ntr])
            parts[1].append(idx[ntr : ntr + nv])
            parts[2].append(idx[ntr + nv : ntr + nv + nt])
        parts = [np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64) for p in parts]
    return tuple(ds.subset(p) for p in parts)


def class_histogram(labels, n_classes: Optional[int] = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return np.bincount(labels, minlength=0 if n_classes is None else n_classes)


def histogram_csv(counts) -> str:
    lines = ["class,count"] + [f"{c},{int(n)}" for c, n in enumerate(counts)]
    return "\n".join(lines) + "\n"


def mnist_available(root) -> bool:
    return root is not None and os.path.isdir(root) and find_mnist(root, "train") is not None and find_mnist(root, "test") is not None
