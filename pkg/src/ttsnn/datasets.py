"""Dataset ingestion: CIFAR-10 binary batches and MNIST IDX files.

Both loaders return a DatasetHandle with float32 pixels scaled once to
[0, 1]. The default dataset root is taken from the TTSNN_DATA_DIR
environment variable.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 image bytes
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DatasetHandle:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.labels) != len(self.images):
            raise ValueError("images must be (N,C,H,W) aligned with labels")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label exceeds class count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def __iter__(self):
        return zip(self.images, self.labels)

    def subset(self, n: int) -> "DatasetHandle":
        return DatasetHandle(self.images[:n], self.labels[:n], self.num_classes)


def data_dir(default: str = ".") -> str:
    return os.environ.get("TTSNN_DATA_DIR", default)


def synthetic_blobs(n: int, *, num_classes: int = 10, hw: int = 16,
                    seed: int = 0) -> DatasetHandle:
    """Class-coded bright blobs on noise — a dataset-free training substrate
    with the same tensor layout as the file-backed loaders."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, n)
    images = rng.normal(0.1, 0.05, (n, 1, hw, hw)).astype(np.float32)
    cols = max(1, (num_classes + 1) // 2)
    cell_h, cell_w = hw // 2, max(hw // cols, 2)
    for i, y in enumerate(labels):
        r, c = divmod(int(y), cols)
        r0, c0 = r * cell_h, min(c * cell_w, hw - 3)
        images[i, 0, r0 + 1 : r0 + cell_h - 1, c0 + 1 : c0 + 3] += 0.8
    return DatasetHandle(np.clip(images, 0.0, 1.0), labels, num_classes)


def load_cifar10_bin(path) -> DatasetHandle:
    """CIFAR-10 binary batch: N records of 1 label byte + 3072 image
    bytes (R, G, B planes, row-major 32x32)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD != 0:
        offset = (raw.size // CIFAR_RECORD) * CIFAR_RECORD
        raise ValueError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD} "
            f"(truncated after byte {offset})"
        )
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise ValueError(f"{path}: corrupt record {bad[0]}: label {labels[bad[0]]} >= 10")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return DatasetHandle(images, labels, 10)


def _read_idx_header(f, path, expected_magic, ndim):
    header = f.read(4 * (1 + ndim))
    if len(header) != 4 * (1 + ndim):
        raise ValueError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + ndim}I", header)
    if fields[0] != expected_magic:
        raise ValueError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}"
        )
    return fields[1:]


def load_mnist_idx(images_path, labels_path) -> DatasetHandle:
    """MNIST-style IDX pair: big-endian u8 images (N, H, W) + labels (N,)."""
    with open(images_path, "rb") as f:
        n, h, w = _read_idx_header(f, images_path, IDX_IMAGES_MAGIC, 3)
        pixels = np.frombuffer(f.read(n * h * w), dtype=np.uint8)
    if pixels.size != n * h * w:
        raise ValueError(f"{images_path}: truncated pixel payload")
    with open(labels_path, "rb") as f:
        (n_labels,) = _read_idx_header(f, labels_path, IDX_LABELS_MAGIC, 1)
        labels = np.frombuffer(f.read(n_labels), dtype=np.uint8)
    if n_labels != n:
        raise ValueError(
            f"IDX dim mismatch: {n} images vs {n_labels} labels"
        )
    images = pixels.reshape(n, 1, h, w).astype(np.float32) / 255.0
    return DatasetHandle(images, labels.astype(np.int64), 10)


def save_mnist_idx(images_path, labels_path, images: np.ndarray,
                   labels: np.ndarray) -> None:
    """Write (N, H, W) u8 images + labels in IDX format (test fixtures)."""
    n, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


def find_mnist(root: str | None = None) -> tuple[str, str, str, str] | None:
    """Locate train/test IDX files under a dataset root, if present."""
    root = root or data_dir()
    names = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ]
    for candidate in names:
        paths = [os.path.join(root, n) for n in candidate]
        if all(os.path.exists(p) for p in paths):
            return tuple(paths)
    return None
