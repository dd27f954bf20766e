"""Toy datasets and an IDX reader/writer for small image sets."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class Kind(str, enum.Enum):
    GMM_RING = "gmm_ring"
    CHECKERBOARD = "checkerboard"
    GAUSSIAN = "gaussian"
    IMAGES = "images"


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray  # (n, dim) float64
    kind: Kind

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise DomainError("samples must be a 2-d array")
        if not np.isfinite(self.samples).all():
            raise DomainError("samples must be finite")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def std(self) -> float:
        """Root of the mean per-coordinate variance."""
        return float(np.sqrt(self.samples.var(axis=0).mean()))


def gmm_ring(n: int, modes: int, radius: float, std: float, rng: np.random.Generator) -> Dataset:
    if modes < 1 or std <= 0:
        raise DomainError("need modes >= 1 and std > 0")
    k = rng.integers(0, modes, size=n)
    ang = 2 * np.pi * k / modes
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return Dataset(centers + std * rng.normal(size=(n, 2)), Kind.GMM_RING)


def checkerboard(n: int, squares: int, rng: np.random.Generator) -> Dataset:
    """Uniform over the cells (i, j) of a squares x squares board with i + j even.

    The board is centred on the origin; cells have unit side.
    """
    if squares < 1:
        raise DomainError("need squares >= 1")
    cells = np.array([(i, j) for i in range(squares) for j in range(squares) if (i + j) % 2 == 0])
    pick = cells[rng.integers(0, len(cells), size=n)]
    pts = pick + rng.uniform(size=(n, 2)) - squares / 2
    return Dataset(pts, Kind.CHECKERBOARD)


def gaussian(n: int, dim: int, rng: np.random.Generator, mean=0.0, std=1.0) -> Dataset:
    return Dataset(mean + std * rng.normal(size=(n, dim)), Kind.GAUSSIAN)


def idx_write(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (rank 3 images or rank 1 labels)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError("IDX writer only handles uint8 arrays")
    if array.ndim == 3:
        magic = IDX_IMAGES
    elif array.ndim == 1:
        magic = IDX_LABELS
    else:
        raise FormatError(f"unsupported IDX rank {array.ndim}")
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))


def idx_read(path) -> np.ndarray:
    """Parse an IDX file into a uint8 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES:
        rank = 3
    elif magic == IDX_LABELS:
        rank = 1
    else:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected "
                          f"0x{IDX_IMAGES:08x} or 0x{IDX_LABELS:08x}")
    head = 4 + 4 * rank
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{rank}I", raw[4:head])
    need = int(np.prod(dims))
    if len(raw) - head != need:
        raise FormatError(f"{path}: payload has {len(raw) - head} bytes, header declares {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims).copy()


def downsample(images: np.ndarray, size: int) -> np.ndarray:
    """Block-average (n, h, w) images to (n, size, size); h and w must be multiples of size."""
    n, h, w = images.shape
    if h % size or w % size:
        raise DomainError(f"cannot block-average {h}x{w} to {size}x{size}")
    return images.reshape(n, size, h // size, size, w // size).mean(axis=(2, 4))


def idx_load(path, size: int | None = None) -> Dataset:
    """Load IDX images as flattened vectors with pixels in [0, 1]."""
    arr = idx_read(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected an image file (rank 3), got rank {arr.ndim}")
    images = arr.astype(np.float64) / 255.0
    if size is not None:
        images = downsample(images, size)
    return Dataset(images.reshape(images.shape[0], -1), Kind.IMAGES)
