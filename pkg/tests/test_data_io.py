import gzip
import struct

import numpy as np
import pytest
from PIL import Image

from oracles import read_idx, write_idx
from sparsedl.core import DataError, Dataset
from sparsedl.data_io import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    SplitSpec,
    SynthSpec,
    class_histogram,
    encode_idx,
    find_mnist,
    histogram_csv,
    load_dataset,
    load_image_dir,
    load_mnist_idx,
    parse_idx,
    split,
    synth_recovery,
)


def write_mnist_pair(root, n=5, gz=False, part="train", n_labels=None):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n_labels or n, dtype=np.uint8)
    names = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"), "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}[part]
    suffix = ".gz" if gz else ""
    opener = gzip.open if gz else open
    for name, arr in zip(names, (images, labels)):
        with opener(root / (name + suffix), "wb") as fh:
            fh.write(write_idx(arr))
    return images, labels


class TestIdx:
    def test_matches_reference_reader(self):
        arr = np.random.default_rng(1).integers(0, 256, size=(3, 4, 2), dtype=np.uint8)
        raw = write_idx(arr)
        shape, flat = read_idx(raw)
        parsed = parse_idx(raw, IDX_IMAGES_MAGIC)
        assert list(parsed.shape) == shape and parsed.reshape(-1).tolist() == flat

    def test_encode_round_trip(self):
        arr = np.arange(10, dtype=np.uint8)
        raw = encode_idx(arr)
        assert raw == write_idx(arr)
        assert np.array_equal(parse_idx(raw, IDX_LABELS_MAGIC), arr)

    def test_byte_swapped_magic(self):
        raw = write_idx(np.zeros(4, np.uint8))
        swapped = struct.pack("<I", IDX_LABELS_MAGIC) + raw[4:]
        with pytest.raises(DataError, match="magic mismatch"):
            parse_idx(swapped, IDX_LABELS_MAGIC)

    def test_truncated_payload(self):
        raw = write_idx(np.zeros((2, 3, 3), np.uint8))
        with pytest.raises(DataError, match="truncated"):
            parse_idx(raw[:-1], IDX_IMAGES_MAGIC)
        with pytest.raises(DataError, match="truncated"):
            parse_idx(raw[:6], IDX_IMAGES_MAGIC)

    def test_load_pair(self, tmp_path):
        images, labels = write_mnist_pair(tmp_path)
        ds = load_mnist_idx(*find_mnist(tmp_path, "train"))
        assert (ds.d, ds.N) == (784, 5)
        assert 0.0 <= ds.Y.min() and ds.Y.max() <= 1.0
        assert np.array_equal(ds.Y[:, 2], images[2].reshape(-1) / 255.0)
        _, ref_labels = read_idx(write_idx(labels))
        assert ds.labels.tolist() == ref_labels

    def test_gzip_and_dispatch(self, tmp_path):
        write_mnist_pair(tmp_path, gz=True, part="test")
        assert find_mnist(tmp_path, "train") is None
        assert load_dataset(tmp_path, "test").N == 5

    def test_count_mismatch(self, tmp_path):
        write_mnist_pair(tmp_path, n=5, n_labels=4)
        with pytest.raises(DataError, match="count mismatch"):
            load_mnist_idx(*find_mnist(tmp_path))

    def test_pure_given_bytes(self, tmp_path):
        write_mnist_pair(tmp_path)
        a = load_mnist_idx(*find_mnist(tmp_path))
        b = load_mnist_idx(*find_mnist(tmp_path))
        assert np.array_equal(a.Y, b.Y) and np.array_equal(a.labels, b.labels)


def save_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


class TestImageDir:
    def test_two_classes(self, tmp_path):
        rng = np.random.default_rng(2)
        for name in ("b_class", "a_class"):
            for i in range(3):
                save_png(tmp_path / name / f"{i}.png", rng.integers(0, 256, (4, 4)))
        ds = load_image_dir(tmp_path)
        assert ds.Y.shape == (16, 6)
        assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1]
        assert ds.class_names == ("a_class", "b_class")
        assert set(np.unique(ds.Y)) <= {0.0, 1.0}

    def test_mixed_sizes(self, tmp_path):
        save_png(tmp_path / "a" / "0.png", np.zeros((4, 4)))
        save_png(tmp_path / "a" / "1.png", np.zeros((8, 8)))
        with pytest.raises(DataError, match="size mismatch"):
            load_image_dir(tmp_path)

    def test_all_white(self, tmp_path):
        save_png(tmp_path / "a" / "0.png", np.full((4, 4), 255))
        save_png(tmp_path / "b" / "0.png", np.zeros((4, 4)))
        ds = load_image_dir(tmp_path)
        assert np.array_equal(ds.Y[:, 0], np.ones(16))
        assert not ds.Y[:, 1].any()

    def test_threshold(self, tmp_path):
        save_png(tmp_path / "a" / "0.png", [[127, 128], [0, 255]])
        ds = load_image_dir(tmp_path)
        assert ds.Y[:, 0].tolist() == [0.0, 1.0, 0.0, 1.0]

    def test_empty_class(self, tmp_path):
        save_png(tmp_path / "a" / "0.png", np.zeros((4, 4)))
        (tmp_path / "b").mkdir()
        with pytest.raises(DataError, match="empty class"):
            load_image_dir(tmp_path)


class TestSynth:
    def test_noiseless_exact(self):
        D, X, Y = synth_recovery(SynthSpec(10, 20, 50, 3))
        assert np.linalg.norm(Y - D @ X) == 0.0
        assert np.allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-12)

    def test_seeded(self):
        spec = SynthSpec(8, 12, 30, 2, sigma=0.1, seed=4)
        assert synth_recovery(spec)[2].tobytes() == synth_recovery(spec)[2].tobytes()

    def test_exact_sparsity(self):
        _, X, _ = synth_recovery(SynthSpec(8, 12, 200, 4, seed=5))
        assert np.all(np.count_nonzero(X, axis=0) == 4)

    def test_invalid(self):
        with pytest.raises(DataError):
            SynthSpec(4, 3, 10, 5)


def balanced(n_per_class=50, C=2):
    labels = np.repeat(np.arange(C), n_per_class)
    Y = np.arange(2 * labels.size, dtype=float).reshape(2, -1)
    return Dataset(Y, labels, C)


class TestSplit:
    def test_stratified_proportions(self):
        tr, va, te = split(balanced(), SplitSpec(0.6, 0.2, 0.2, seed=1, stratified=True))
        assert class_histogram(tr.labels).tolist() == [30, 30]
        assert class_histogram(va.labels).tolist() == [10, 10]
        assert class_histogram(te.labels).tolist() == [10, 10]

    @pytest.mark.parametrize("stratified", [False, True])
    def test_disjoint_and_exhaustive(self, stratified):
        ds = Dataset(np.arange(2 * 97, dtype=float).reshape(2, 97), np.arange(97) % 3, 3)
        parts = split(ds, SplitSpec(0.7, 0.15, 0.15, seed=2, stratified=stratified))
        ids = np.concatenate([p.Y[0] for p in parts])
        assert np.unique(ids).size == ids.size == 97

    def test_stratified_within_one_sample(self):
        labels = np.repeat([0, 1, 2], [41, 23, 36])
        ds = Dataset(np.zeros((1, 100)), labels, 3)
        tr, _, _ = split(ds, SplitSpec(0.5, 0.25, 0.25, seed=3, stratified=True))
        got = class_histogram(tr.labels, 3)
        assert np.all(np.abs(got - 0.5 * np.array([41, 23, 36])) <= 1 + 1e-9)

    def test_counts(self):
        tr, va, te = split(balanced(), SplitSpec(50, 30, 20, seed=4))
        assert (tr.N, va.N, te.N) == (50, 30, 20)

    def test_too_few_per_class(self):
        ds = Dataset(np.zeros((1, 6)), [0, 0, 0, 0, 0, 1], 2)
        with pytest.raises(DataError, match="class 1"):
            split(ds, SplitSpec(0.6, 0.2, 0.2, stratified=True))

    def test_oversized(self):
        with pytest.raises(DataError):
            split(balanced(), SplitSpec(80, 30, 0))
        with pytest.raises(DataError):
            SplitSpec(0.8, 0.3, 0.0)


class TestHistogram:
    def test_counts(self):
        assert class_histogram([0, 0, 1]).tolist() == [2, 1]

    def test_sums_to_n(self):
        labels = np.random.default_rng(5).integers(0, 7, 300)
        assert class_histogram(labels).sum() == 300

    def test_csv(self):
        assert histogram_csv([2, 1]) == "class,count\n0,2\n1,1\n"
