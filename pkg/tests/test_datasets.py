"""Tests for the dataset loaders and fixtures."""

import struct

import numpy as np
import pytest

from ttsnn.datasets import (
    CIFAR_RECORD,
    IDX_LABELS_MAGIC,
    DatasetHandle,
    data_dir,
    find_mnist,
    load_cifar10_bin,
    load_mnist_idx,
    save_mnist_idx,
    synthetic_blobs,
)


def write_cifar_bin(path, labels, pixel_fill=7):
    records = []
    for y in labels:
        records.append(bytes([y]) + bytes([pixel_fill]) * (CIFAR_RECORD - 1))
    path.write_bytes(b"".join(records))


class TestDatasetHandle:
    def test_shape_and_label_alignment(self):
        with pytest.raises(ValueError, match="aligned"):
            DatasetHandle(np.zeros((3, 1, 4, 4), np.float32),
                          np.zeros(2, np.int64), 10)
        with pytest.raises(ValueError, match="aligned"):
            DatasetHandle(np.zeros((3, 4, 4), np.float32),
                          np.zeros(3, np.int64), 10)

    def test_label_exceeds_classes(self):
        with pytest.raises(ValueError, match="class count"):
            DatasetHandle(np.zeros((1, 1, 4, 4), np.float32),
                          np.array([10]), 10)

    def test_len_iter_subset(self):
        ds = synthetic_blobs(8, hw=12, seed=1)
        assert len(ds) == 8
        assert ds.image_shape == (1, 12, 12)
        pairs = list(ds)
        assert len(pairs) == 8 and pairs[0][0].shape == (1, 12, 12)
        sub = ds.subset(3)
        assert len(sub) == 3
        np.testing.assert_array_equal(sub.labels, ds.labels[:3])


class TestSyntheticBlobs:
    def test_properties(self):
        ds = synthetic_blobs(64, num_classes=10, hw=16, seed=0)
        assert ds.images.dtype == np.float32
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert ds.num_classes == 10
        assert set(np.unique(ds.labels)) <= set(range(10))

    def test_seed_determinism(self):
        a = synthetic_blobs(16, seed=3)
        b = synthetic_blobs(16, seed=3)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)
        c = synthetic_blobs(16, seed=4)
        assert not np.array_equal(a.images, c.images)

    def test_classes_are_separable_by_blob_position(self):
        ds = synthetic_blobs(200, num_classes=10, hw=16, seed=0)
        # the bright blob sits in a class-specific cell, so the arg-max
        # pixel position must be identical within a class
        for y in range(10):
            imgs = ds.images[ds.labels == y]
            if len(imgs) < 2:
                continue
            pos = [np.unravel_index(np.argmax(im[0]), im[0].shape) for im in imgs]
            rows = {p[0] // 8 for p in pos}
            assert len(rows) == 1


class TestCifarLoader:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "batch.bin"
        write_cifar_bin(path, [0, 3, 9], pixel_fill=51)
        ds = load_cifar10_bin(path)
        assert ds.images.shape == (3, 3, 32, 32)
        np.testing.assert_array_equal(ds.labels, [0, 3, 9])
        assert ds.images.dtype == np.float32
        assert np.allclose(ds.images, 51 / 255.0)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(CIFAR_RECORD + 100))
        with pytest.raises(ValueError, match="not a multiple"):
            load_cifar10_bin(path)

    def test_corrupt_label(self, tmp_path):
        path = tmp_path / "bad.bin"
        write_cifar_bin(path, [1, 12])
        with pytest.raises(ValueError, match="label 12"):
            load_cifar10_bin(path)


class TestMnistIdx:
    def make_pair(self, tmp_path, n=5, hw=8):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (n, hw, hw)).astype(np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        save_mnist_idx(ip, lp, images, labels)
        return ip, lp, images, labels

    def test_round_trip(self, tmp_path):
        ip, lp, images, labels = self.make_pair(tmp_path)
        ds = load_mnist_idx(ip, lp)
        assert ds.images.shape == (5, 1, 8, 8)
        np.testing.assert_array_equal(ds.labels, labels)
        np.testing.assert_allclose(ds.images[:, 0] * 255.0, images, atol=1e-4)

    def test_bad_magic(self, tmp_path):
        ip, lp, *_ = self.make_pair(tmp_path, n=20)
        with pytest.raises(ValueError, match="bad IDX magic"):
            load_mnist_idx(lp, ip)  # swapped arguments

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short"
        p.write_bytes(b"\x00\x00")
        with pytest.raises(ValueError, match="truncated IDX header"):
            load_mnist_idx(p, p)

    def test_truncated_pixels(self, tmp_path):
        ip, lp, *_ = self.make_pair(tmp_path)
        data = ip.read_bytes()
        ip.write_bytes(data[:-10])
        with pytest.raises(ValueError, match="truncated pixel payload"):
            load_mnist_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp, images, labels = self.make_pair(tmp_path)
        lp2 = tmp_path / "lbls2"
        with open(lp2, "wb") as f:
            f.write(struct.pack(">2I", IDX_LABELS_MAGIC, 3))
            f.write(labels[:3].tobytes())
        with pytest.raises(ValueError, match="dim mismatch"):
            load_mnist_idx(ip, lp2)


class TestDiscovery:
    def test_data_dir_env(self, monkeypatch):
        monkeypatch.setenv("TTSNN_DATA_DIR", "/some/where")
        assert data_dir() == "/some/where"
        monkeypatch.delenv("TTSNN_DATA_DIR")
        assert data_dir("fallback") == "fallback"

    def test_find_mnist(self, tmp_path):
        assert find_mnist(str(tmp_path)) is None
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (2, 4, 4)).astype(np.uint8)
        labels = np.array([0, 1], np.uint8)
        for stem in ("train", "t10k"):
            save_mnist_idx(tmp_path / f"{stem}-images-idx3-ubyte",
                           tmp_path / f"{stem}-labels-idx1-ubyte",
                           images, labels)
        found = find_mnist(str(tmp_path))
        assert found is not None and len(found) == 4
        ds = load_mnist_idx(found[0], found[1])
        assert len(ds) == 2
