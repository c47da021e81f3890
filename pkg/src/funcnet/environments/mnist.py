"""MNIST ingestion from IDX files, with seeded epoch batch streams."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_SIDE = 28
NUM_CLASSES = 10
UBYTE_CODE = 0x08

# canonical file stems per split; a .gz suffix is also accepted
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class MnistError(Exception):
    """IDX data that cannot be used."""


class BadMagic(MnistError):
    """IDX header does not announce the expected payload kind."""


class TruncatedPayload(MnistError):
    """IDX payload shorter than its header promises."""


class CountMismatch(MnistError):
    """Image and label files disagree on the sample count."""


@dataclass(frozen=True)
class MnistSet:
    images: np.ndarray  # uint8, (count, 28, 28)
    labels: np.ndarray  # uint8, (count,)
    split: str


def _open(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse one big-endian IDX file of unsigned bytes, any dimension count."""
    path = Path(path)
    with _open(path) as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise TruncatedPayload(f"{path}: shorter than an IDX header")
    zero, dtype_code, ndim = blob[0] << 8 | blob[1], blob[2], blob[3]
    if zero != 0 or dtype_code != UBYTE_CODE:
        raise BadMagic(f"{path}: magic {blob[:4].hex()} is not an unsigned-byte IDX")
    if len(blob) < 4 + 4 * ndim:
        raise TruncatedPayload(f"{path}: header cut off inside dimension sizes")
    dims = struct.unpack(f">{ndim}I", blob[4:4 + 4 * ndim])
    payload = blob[4 + 4 * ndim:]
    expected = int(np.prod(dims, dtype=np.int64)) if dims else 0
    if len(payload) < expected:
        raise TruncatedPayload(f"{path}: payload holds {len(payload)} bytes, "
                               f"header promises {expected}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte IDX file (inverse of read_idx)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, UBYTE_CODE, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no {stem}[.gz] under {directory}")


def mnist_load(directory, split: str = "train") -> MnistSet:
    """Load one split from a directory holding the canonical IDX files."""
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be one of {sorted(SPLIT_FILES)}, got {split!r}")
    directory = Path(directory)
    image_stem, label_stem = SPLIT_FILES[split]
    images = read_idx(_find(directory, image_stem))
    labels = read_idx(_find(directory, label_stem))
    if images.ndim != 3 or images.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise BadMagic(f"image file is not {IMAGE_SIDE}x{IMAGE_SIDE} images: "
                       f"shape {images.shape}")
    if labels.ndim != 1:
        raise BadMagic(f"label file is not a label vector: shape {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    return MnistSet(images=images, labels=labels, split=split)


def mnist_batches(dataset: MnistSet, batch_size: int, rng: np.random.Generator):
    """Endless stream of (inputs, labels) batches, reshuffled every epoch.

    Inputs are flattened to length-784 vectors scaled to [0, 1]. The final
    short batch of an epoch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    count = dataset.labels.shape[0]
    flat = dataset.images.reshape(count, -1)
    while True:
        order = rng.permutation(count)
        for lo in range(0, count, batch_size):
            pick = order[lo:lo + batch_size]
            yield flat[pick] / 255.0, dataset.labels[pick].astype(np.int64)
