"""Image data: IDX files, binarization, half splits, downsampling and
synthetic batches.

The desk-scale default dataset is scikit-learn's bundled 8x8 digits. Real
MNIST is read from IDX files when a directory is given (or found through
``CATREPARAM_MNIST_DIR``); nothing is downloaded.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MNIST_ENV = "CATREPARAM_MNIST_DIR"
FIXTURE_IMAGES = "fixture-images-idx3-ubyte"
FIXTURE_LABELS = "fixture-labels-idx1-ubyte"
SYNTHETIC_KINDS = ("stripes", "random_bernoulli", "blobs")


class IDXFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageBatch:
    images: np.ndarray  # (n, H, W)
    labels: Optional[np.ndarray] = None
    binarized: bool = False

    def __post_init__(self):
        if np.ndim(self.images) != 3 or (len(self.images) and min(self.images.shape[1:]) < 1):
            raise ValueError(f"images must be (n, H, W) with H, W > 0, got {self.images.shape}")
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError("images and labels disagree on n")
        # read-only views; the caller's arrays keep their flags
        for name in ("images", "labels"):
            value = getattr(self, name)
            if value is not None:
                view = np.asarray(value).view()
                view.setflags(write=False)
                object.__setattr__(self, name, view)

    def __len__(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def subset(self, index) -> "ImageBatch":
        labels = None if self.labels is None else self.labels[index]
        return replace(self, images=self.images[index], labels=labels)


# --------------------------------------------------------------------------
# IDX


def _open(path: Path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Raw unsigned-byte IDX array (images or labels)."""
    with _open(Path(path)) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IDXFormatError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(path, labels_path=None) -> ImageBatch:
    """Images from an IDX3 file scaled to [0, 1], plus optional IDX1 labels."""
    images = read_idx(path)
    if images.ndim != 3:
        raise IDXFormatError(f"{path}: not an image file (magic 0x{0x800 + images.ndim:08x})")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise IDXFormatError(f"{labels_path}: not a label file")
        if len(labels) != len(images):
            raise IDXFormatError(f"{len(images)} images but {len(labels)} labels")
        labels = labels.astype(np.int64)
    return ImageBatch(images.astype(np.float64) / 255.0, labels)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("IDX writer supports unsigned bytes only")
    magic = 0x800 + array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        fh.write(array.tobytes())


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# preprocessing


def binarize_fixed(batch: ImageBatch, threshold: float = 0.5) -> ImageBatch:
    """Pixels ``>= threshold`` become 1; already-binary input is unchanged."""
    return replace(batch, images=(batch.images >= threshold).astype(np.float64), binarized=True)


def binarize_dynamic(batch: ImageBatch, rng) -> ImageBatch:
    """Fresh Bernoulli(pixel) draw on every call."""
    draw = rng.random(batch.images.shape) < batch.images
    return replace(batch, images=draw.astype(np.float64), binarized=True)


def split_halves(batch: ImageBatch) -> tuple[ImageBatch, ImageBatch]:
    h = batch.images.shape[1]
    if h % 2:
        raise ValueError(f"cannot split odd height {h}")
    return replace(batch, images=batch.images[:, : h // 2]), replace(batch, images=batch.images[:, h // 2 :])


def downsample(images: np.ndarray, size: int = 8) -> np.ndarray:
    """Zero-pad to the next ``size * 2**j`` square, then average 2x2 blocks
    ``j`` times. 28x28 becomes 32x32 (2 pixels each side), then 16, then 8."""
    n, h, w = images.shape
    side = size
    while side < max(h, w):
        side *= 2
    top, left = (side - h) // 2, (side - w) // 2
    out = np.zeros((n, side, side))
    out[:, top : top + h, left : left + w] = images
    while out.shape[1] > size:
        s = out.shape[1] // 2
        out = out.reshape(n, s, 2, s, 2).mean(axis=(2, 4))
    return out


# --------------------------------------------------------------------------
# synthetic data


def synthetic_batch(kind: str, n: int, rng, height: int = 28, width: int = 28) -> ImageBatch:
    """Grey-level images in [0, 1] with labels in [0, 10).

    ``stripes``: horizontal or vertical bars (label = orientation and
    period). ``random_bernoulli``: i.i.d. pixel intensities. ``blobs``: a
    Gaussian bump at one of ten fixed centres (label = centre).
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}, got {kind!r}")
    labels = rng.integers(0, 10, size=n)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    if kind == "random_bernoulli":
        images = rng.random((n, height, width))
    elif kind == "stripes":
        period = 2 + labels % 5
        phase = rng.integers(0, 2, size=n)
        vertical = labels >= 5
        coord = np.where(vertical[:, None, None], cols[None], rows[None])
        images = (((coord // period[:, None, None]) + phase[:, None, None]) % 2).astype(np.float64)
    else:
        angles = 2 * np.pi * np.arange(10) / 10
        cy = height / 2 + 0.3 * height * np.sin(angles[labels])
        cx = width / 2 + 0.3 * width * np.cos(angles[labels])
        cy = cy + rng.normal(0, 1, n)
        cx = cx + rng.normal(0, 1, n)
        r2 = (rows[None] - cy[:, None, None]) ** 2 + (cols[None] - cx[:, None, None]) ** 2
        images = np.exp(-r2 / (2 * (0.12 * height) ** 2))
    return ImageBatch(np.asarray(images, dtype=np.float64).reshape(n, height, width), labels.astype(np.int64))


def random_labels(batch: ImageBatch, k: int, rng) -> ImageBatch:
    return replace(batch, labels=rng.integers(0, k, size=len(batch)).astype(np.int64))


def one_hot(labels, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(labels)]


# --------------------------------------------------------------------------
# datasets


def fixture_paths() -> tuple[Path, Path]:
    root = resources.files("catreparam") / "fixtures"
    return Path(str(root / FIXTURE_IMAGES)), Path(str(root / FIXTURE_LABELS))


def load_fixture() -> ImageBatch:
    """200 bundled synthetic 28x28 images with labels."""
    images, labels = fixture_paths()
    return load_idx(images, labels)


def make_fixture(seed: int = 0, n: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Regenerate the bundled fixture bytes (blobs and stripes, half each)."""
    rng = np.random.default_rng(seed)
    a = synthetic_batch("blobs", n // 2, rng)
    b = synthetic_batch("stripes", n - n // 2, rng)
    images = np.concatenate([a.images, b.images])
    labels = np.concatenate([a.labels, b.labels])
    order = rng.permutation(n)
    return to_bytes(images[order]), labels[order].astype(np.uint8)


@dataclass(frozen=True)
class Splits:
    train: ImageBatch
    valid: ImageBatch
    test: ImageBatch
    source: str


def _split(batch: ImageBatch, rng, valid_frac: float, test_frac: float, source: str) -> Splits:
    order = rng.permutation(len(batch))
    n_test = int(round(test_frac * len(batch)))
    n_valid = int(round(valid_frac * len(batch)))
    test, valid, train = np.split(order, [n_test, n_test + n_valid])
    return Splits(batch.subset(train), batch.subset(valid), batch.subset(test), source)


def load_digits_8x8() -> ImageBatch:
    from sklearn.datasets import load_digits

    d = load_digits()
    return ImageBatch(d.images / 16.0, d.target.astype(np.int64))


def find_mnist(directory=None) -> Optional[Path]:
    directory = directory or os.environ.get(MNIST_ENV)
    if not directory:
        return None
    path = Path(directory)
    for suffix in ("", ".gz"):
        if (path / f"train-images-idx3-ubyte{suffix}").exists():
            return path
    return None


def load_mnist(directory, split: str = "train") -> ImageBatch:
    prefix = "train" if split == "train" else "t10k"
    path = Path(directory)
    for suffix in ("", ".gz"):
        images = path / f"{prefix}-images-idx3-ubyte{suffix}"
        if images.exists():
            return load_idx(images, path / f"{prefix}-labels-idx1-ubyte{suffix}")
    raise FileNotFoundError(f"no MNIST {split} files under {path}")


def load_dataset(name: str = "digits", seed: int = 0, valid_frac: float = 0.1, test_frac: float = 0.2, mnist_dir=None, size: int = 8) -> Splits:
    """Train/valid/test splits of grey-level images.

    ``digits``: scikit-learn's 8x8 digits. ``mnist``: IDX files, downsampled
    to ``size`` unless ``size`` is 28. ``fixture``: the bundled 200 images,
    downsampled likewise.
    """
    rng = np.random.default_rng(seed)
    if name == "digits":
        return _split(load_digits_8x8(), rng, valid_frac, test_frac, "sklearn-digits-8x8")
    if name == "fixture":
        batch = load_fixture()
    elif name == "mnist":
        root = find_mnist(mnist_dir)
        if root is None:
            raise FileNotFoundError(f"MNIST not found; pass a directory or set {MNIST_ENV}")
        train, test = load_mnist(root, "train"), load_mnist(root, "test")
        if size != 28:
            train = replace(train, images=downsample(train.images, size))
            test = replace(test, images=downsample(test.images, size))
        n_valid = int(round(valid_frac * len(train)))
        order = rng.permutation(len(train))
        return Splits(train.subset(order[n_valid:]), train.subset(order[:n_valid]), test, f"mnist-{size}x{size}")
    else:
        raise ValueError(f"unknown dataset {name!r}")
    if size != batch.shape[0]:
        batch = replace(batch, images=downsample(batch.images, size))
    return _split(batch, rng, valid_frac, test_frac, f"{name}-{size}x{size}")
