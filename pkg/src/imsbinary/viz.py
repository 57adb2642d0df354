"""Raster renderings of cluster maps, DIPPS maps and Jaccard grids.

Images are plain RGB byte buffers. Binary PPM (P6) is the canonical on-disk
format; PNG output goes through Pillow when it is installed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

WHITE = (255, 255, 255)
BLUE = (0, 0, 255)
RED = (255, 0, 0)

# high-contrast cluster colours, in cluster-index order
CLUSTER_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (255, 225, 25),
    (145, 30, 180),
    (245, 130, 48),
    (70, 240, 240),
    (128, 128, 128),
)


@dataclass(eq=False)
class RasterImage:
    pixels: np.ndarray  # (height, width, 3) uint8, row 0 at the top

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def to_ppm(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + np.ascontiguousarray(self.pixels, dtype=np.uint8).tobytes()

    def save(self, path) -> Path:
        path = Path(path)
        if path.suffix.lower() == ".png":
            from PIL import Image

            Image.fromarray(np.ascontiguousarray(self.pixels, dtype=np.uint8), "RGB").save(path)
        else:
            path.write_bytes(self.to_ppm())
        return path

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


def read_ppm(path) -> RasterImage:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)
    return RasterImage(pixels.copy())


def _paint(coords, colors, scale) -> RasterImage:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if coords.shape[0] == 0:
        raise ContractError("nothing to render")
    if scale < 1:
        raise ContractError("scale must be a positive integer")
    x0, y0 = coords.min(axis=0)
    x1, y1 = coords.max(axis=0)
    grid = np.empty((y1 - y0 + 1, x1 - x0 + 1, 3), dtype=np.uint8)
    grid[:] = WHITE
    grid[coords[:, 1] - y0, coords[:, 0] - x0] = colors
    if scale > 1:
        grid = np.repeat(np.repeat(grid, scale, axis=0), scale, axis=1)
    return RasterImage(grid)


def render_cluster_map(assignments, coords, palette=CLUSTER_PALETTE, scale: int = 1) -> RasterImage:
    assignments = np.asarray(assignments, dtype=np.int64)
    k = int(assignments.max()) + 1 if assignments.size else 0
    if len(palette) < k:
        raise ContractError(f"palette has {len(palette)} colours, need {k}")
    colors = np.asarray(palette, dtype=np.uint8)[assignments]
    return _paint(coords, colors, scale)


def _round_half_up(num, den):
    return (2 * num + den) // (2 * den)


def heat_color(count: int, n_features: int) -> tuple[int, int, int]:
    """Linear blue (0) to red (n_features) colour."""
    if n_features < 1:
        raise ContractError("n_features must be >= 1")
    if not 0 <= count <= n_features:
        raise ContractError(f"count {count} outside [0, {n_features}]")
    red = _round_half_up(255 * count, n_features)
    blue = _round_half_up(255 * (n_features - count), n_features)
    return (int(red), 0, int(blue))


def render_dipps_map(map_counts, n_features: int, coords, scale: int = 1) -> RasterImage:
    counts = np.asarray(map_counts, dtype=np.int64)
    if n_features < 1:
        raise ContractError("n_features must be >= 1")
    if counts.size and (counts.min() < 0 or counts.max() > n_features):
        raise ContractError(f"map counts must lie in [0, {n_features}]")
    colors = np.zeros((counts.size, 3), dtype=np.uint8)
    colors[:, 0] = _round_half_up(255 * counts, n_features)
    colors[:, 2] = _round_half_up(255 * (n_features - counts), n_features)
    return _paint(coords, colors, scale)


def render_jaccard_grid(matrix, cell_size: int = 16) -> RasterImage:
    """Grey cells, black for distance 0 and white for 1."""
    values = np.asarray(getattr(matrix, "values", matrix), dtype=np.float64)
    if cell_size < 1:
        raise ContractError("cell_size must be a positive integer")
    gray = np.floor(255 * values + 0.5).astype(np.uint8)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    img = np.repeat(np.repeat(img, cell_size, axis=0), cell_size, axis=1)
    return RasterImage(img)
