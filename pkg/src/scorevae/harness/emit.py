"""Writers for sample dumps: binary PGM image grids and CSV point clouds."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def to_bytes(pixels) -> np.ndarray:
    """Map [0, 1] floats to uint8 (1.0 -> 255), clipping out-of-range values."""
    return np.round(np.clip(np.asarray(pixels, float), 0.0, 1.0) * 255.0).astype(np.uint8)


def image_grid(states, side: int | None = None, cols: int | None = None) -> np.ndarray:
    """Tile flattened square images (n, side*side) into one 2-d uint8 array."""
    states = np.atleast_2d(np.asarray(states, float))
    n, d = states.shape
    side = side or math.isqrt(d)
    if side * side != d:
        raise ValueError(f"cannot view {d} values as a square image")
    cols = cols or math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.zeros((rows * side, cols * side), np.uint8)
    for i, img in enumerate(to_bytes(states).reshape(n, side, side)):
        r, c = divmod(i, cols)
        grid[r * side:(r + 1) * side, c * side:(c + 1) * side] = img
    return grid


def write_pgm(image: np.ndarray, path) -> Path:
    image = np.asarray(image, np.uint8)
    h, w = image.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + image.tobytes())
    return path


def write_points_csv(states, path) -> Path:
    states = np.atleast_2d(np.asarray(states, float))
    header = ",".join(f"x{i}" for i in range(states.shape[1]))
    lines = [header] + [",".join(f"{v:.9g}" for v in row) for row in states]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_images(states, path) -> Path:
    """PGM grid for ``.pgm`` paths, CSV point cloud otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return write_pgm(image_grid(states), path)
    return write_points_csv(states, path)
