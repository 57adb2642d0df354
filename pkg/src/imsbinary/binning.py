"""Equal-width m/z bins and the binary presence/absence matrix.

Bin ``i`` of a grid with width ``w`` and offset ``o`` covers
``[(i - 0.5) * w + o, (i + 0.5) * w + o)`` and is centred on ``i * w + o``.
The tandem grid is the same partition shifted by half a bin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, RangeError, SchemaVersionError
from .peaklist_io import Dataset, read_meta, read_table, write_meta, write_table

MATRIX_SCHEMA = "imsbinary-matrix/1"


@dataclass(frozen=True)
class BinGrid:
    mz_min: float
    mz_max: float
    width: float = 0.25
    offset: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ContractError(f"bin width must be positive, got {self.width}")
        if self.mz_min > self.mz_max:
            raise ContractError("mz_min exceeds mz_max")

    @property
    def shifted(self) -> bool:
        return self.offset != 0

    def center(self, index):
        return np.asarray(index) * self.width + self.offset

    def edges(self, index) -> tuple[float, float]:
        return ((index - 0.5) * self.width + self.offset, (index + 0.5) * self.width + self.offset)

    def same_partition(self, other: "BinGrid") -> bool:
        return self.width == other.width and self.offset == other.offset


def bin_indices(mz, grid: BinGrid) -> np.ndarray:
    """Vectorised :func:`bin_index`."""
    mz = np.asarray(mz, dtype=np.float64)
    if mz.size and (mz.min() < grid.mz_min or mz.max() > grid.mz_max):
        bad = mz[(mz < grid.mz_min) | (mz > grid.mz_max)][0]
        raise RangeError(f"mz {bad} outside [{grid.mz_min}, {grid.mz_max}]")
    # half-up rounding: an m/z exactly on an edge goes to the upper bin
    return np.floor((mz - grid.offset) / grid.width + 0.5).astype(np.int64)


def bin_index(mz: float, grid: BinGrid) -> int:
    return int(bin_indices(np.array([mz]), grid)[0])


def tandem_grid(grid: BinGrid) -> BinGrid:
    if grid.shifted:
        raise ContractError("tandem grid requires an unshifted grid (offset 0)")
    return replace(grid, offset=grid.width / 2)


@dataclass(eq=False)
class BinaryDataMatrix:
    """d x n presence/absence matrix; rows are m/z bins, columns are spectra."""

    values: np.ndarray
    bin_indices: np.ndarray
    coords: np.ndarray
    grid: BinGrid
    name: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.uint8)
        self.bin_indices = np.asarray(self.bin_indices, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        if self.values.ndim != 2:
            raise ContractError("values must be 2-D")
        d, n = self.values.shape
        if self.bin_indices.shape != (d,):
            raise ContractError(f"expected {d} bin indices, got {self.bin_indices.shape}")
        if self.coords.shape[0] != n:
            raise ContractError(f"expected {n} coordinates, got {self.coords.shape[0]}")
        if d > 1 and np.any(np.diff(self.bin_indices) <= 0):
            raise ContractError("bin indices must be strictly increasing")

    @property
    def shape(self):
        return self.values.shape

    @property
    def bin_centers(self) -> np.ndarray:
        return self.grid.center(self.bin_indices)

    def select_rows(self, mask) -> "BinaryDataMatrix":
        mask = np.asarray(mask)
        return BinaryDataMatrix(
            self.values[mask], self.bin_indices[mask], self.coords, self.grid, self.name
        )

    def with_values(self, values) -> "BinaryDataMatrix":
        return BinaryDataMatrix(values, self.bin_indices, self.coords, self.grid, self.name)

    def __eq__(self, other):
        if not isinstance(other, BinaryDataMatrix):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.name == other.name
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.bin_indices, other.bin_indices)
            and np.array_equal(self.coords, other.coords)
        )


def build_binary_matrix(dataset: Dataset, grid: BinGrid | None = None) -> BinaryDataMatrix:
    """Bin every peak of ``dataset`` and mark bin/spectrum presence.

    Only bins holding at least one peak become rows. Columns follow the
    dataset's spectrum order.
    """
    if len(dataset) == 0:
        raise ContractError("dataset has no spectra")
    if grid is None:
        grid = BinGrid(dataset.mz_min, dataset.mz_max)
    counts = np.array([len(s) for s in dataset.spectra], dtype=np.int64)
    n = counts.size
    if counts.sum():
        mz = np.concatenate([s.mz for s in dataset.spectra])
        cols = np.repeat(np.arange(n), counts)
        idx = bin_indices(mz, grid)
        rows_bins, row_of_peak = np.unique(idx, return_inverse=True)
        values = np.zeros((rows_bins.size, n), dtype=np.uint8)
        values[row_of_peak, cols] = 1
    else:
        rows_bins = np.empty(0, dtype=np.int64)
        values = np.zeros((0, n), dtype=np.uint8)
    return BinaryDataMatrix(values, rows_bins, dataset.coords, grid, dataset.name)


def merge_feature_intervals(features_a, features_b) -> list[tuple[float, float]]:
    """Union of the bins of two feature sets from a grid and its tandem.

    Overlapping or abutting intervals are coalesced. Returned as sorted
    half-open ``(low, high)`` pairs in Daltons.
    """
    ga, gb = features_a.grid, features_b.grid
    if ga.width != gb.width:
        raise ContractError(f"bin widths differ: {ga.width} vs {gb.width}")
    if ga.offset != 0:
        raise ContractError("first feature set must come from the unshifted grid")
    if gb.offset != ga.width / 2:
        raise ContractError("second feature set must come from the half-bin shifted grid")
    # work in half-bin units so that all edges are integers
    spans = [(2 * i - 1, 2 * i + 1) for i in features_a.bin_indices]
    spans += [(2 * j, 2 * j + 2) for j in features_b.bin_indices]
    spans.sort()
    merged: list[list[int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    half = ga.width / 2
    return [(lo * half, hi * half) for lo, hi in merged]


def write_matrix(matrix: BinaryDataMatrix, directory, extra_meta=()) -> Path:
    """Export in sparse coordinate form.

    ``matrix.tsv`` has header ``d<TAB>n`` then ``bin_index<TAB>spectrum_index``
    for every 1-entry. ``bins.tsv`` and ``coords.tsv`` hold row and column
    labels and ``matrix.meta`` the grid.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d, n = matrix.shape
    rows, cols = np.nonzero(matrix.values)
    with open(directory / "matrix.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{d}\t{n}\n")
        labels = matrix.bin_indices[rows].tolist()
        fh.writelines(f"{b}\t{c}\n" for b, c in zip(labels, cols.tolist()))
    write_table(
        zip(matrix.bin_indices.tolist(), matrix.bin_centers.tolist()),
        ("bin_index", "bin_center"),
        directory / "bins.tsv",
    )
    write_table(matrix.coords.tolist(), ("x", "y"), directory / "coords.tsv")
    g = matrix.grid
    write_meta(
        [
            ("schema", MATRIX_SCHEMA),
            ("name", matrix.name),
            ("width", g.width),
            ("offset", g.offset),
            ("mz_min", g.mz_min),
            ("mz_max", g.mz_max),
            *extra_meta,
        ],
        directory / "matrix.meta",
    )
    return directory


def read_matrix(directory) -> BinaryDataMatrix:
    directory = Path(directory)
    meta_path = directory / "matrix.meta"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing {meta_path}")
    meta = read_meta(meta_path)
    if meta.get("schema") != MATRIX_SCHEMA:
        raise SchemaVersionError(
            f"{meta_path}: expected schema {MATRIX_SCHEMA!r}, got {meta.get('schema')!r}"
        )
    grid = BinGrid(
        float(meta["mz_min"]), float(meta["mz_max"]), float(meta["width"]), float(meta["offset"])
    )
    path = directory / "matrix.tsv"
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split("\t")
        if len(head) != 2:
            raise ParseError("expected header d<TAB>n", path, 1)
        d, n = int(head[0]), int(head[1])
        body = fh.read()
    entries = np.array(body.split(), dtype=np.int64).reshape(-1, 2)
    _, bin_rows = read_table(directory / "bins.tsv")
    _, coord_rows = read_table(directory / "coords.tsv")
    bins = np.array([int(r[0]) for r in bin_rows], dtype=np.int64)
    if bins.size != d:
        raise ParseError(f"header says {d} bins, bins.tsv lists {bins.size}", path, 1)
    rows = np.searchsorted(bins, entries[:, 0])
    if entries.size and (rows.max() >= d or not np.array_equal(bins[rows], entries[:, 0])):
        raise ParseError("entry refers to a bin missing from bins.tsv", path, 2)
    values = np.zeros((d, n), dtype=np.uint8)
    values[rows, entries[:, 1]] = 1
    coords = np.array([(int(r[0]), int(r[1])) for r in coord_rows], dtype=np.int64)
    return BinaryDataMatrix(values, bins, coords.reshape(-1, 2), grid, meta.get("name", ""))
