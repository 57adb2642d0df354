"""Reading and writing peaklist datasets, annotation subsets and output tables.

A dataset lives in a directory holding two files:

``dataset.meta``
    ``key=value`` lines; ``name``, ``mz_min`` and ``mz_max`` are required,
    ``annotation`` optionally names an annotation TSV relative to the directory.
``peaks.tsv``
    Header ``x<TAB>y<TAB>mz<TAB>intensity`` and one row per peak. A row whose
    ``mz`` and ``intensity`` fields are both empty declares a spectrum without
    peaks, so that such spectra survive a write/parse round trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError

PEAKS_FILE = "peaks.tsv"
META_FILE = "dataset.meta"
PEAKS_HEADER = ("x", "y", "mz", "intensity")
ANNOTATION_HEADER = ("x", "y")


class Peak(NamedTuple):
    mz: float
    intensity: float


@dataclass(eq=False)
class Spectrum:
    """Peaks acquired at one grid point, stored as parallel arrays sorted by m/z."""

    x: int
    y: int
    mz: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.mz = np.asarray(self.mz, dtype=np.float64)
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.mz.shape != self.intensity.shape or self.mz.ndim != 1:
            raise ContractError("mz and intensity must be 1-D arrays of equal length")
        if self.mz.size and np.any(self.mz[1:] < self.mz[:-1]):
            order = np.argsort(self.mz, kind="stable")
            self.mz = self.mz[order]
            self.intensity = self.intensity[order]

    @property
    def peaks(self) -> list[Peak]:
        return [Peak(float(m), float(i)) for m, i in zip(self.mz, self.intensity)]

    @property
    def coord(self) -> tuple[int, int]:
        return (self.x, self.y)

    def __len__(self):
        return int(self.mz.size)

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (
            self.x == other.x
            and self.y == other.y
            and np.array_equal(self.mz, other.mz)
            and np.array_equal(self.intensity, other.intensity)
        )


@dataclass(eq=False)
class Dataset:
    name: str
    spectra: list[Spectrum]
    mz_min: float
    mz_max: float
    annotation_path: Path | None = None

    @property
    def coords(self) -> np.ndarray:
        """(n, 2) integer array of (x, y), aligned with ``spectra``."""
        return np.array([(s.x, s.y) for s in self.spectra], dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.spectra)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.mz_min == other.mz_min
            and self.mz_max == other.mz_max
            and self.spectra == other.spectra
        )


@dataclass(frozen=True)
class AnnotationSubset:
    coords: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.coords)

    def __contains__(self, item):
        return tuple(item) in self.coords


def canonical_dataset(name, spectra, mz_min, mz_max, annotation_path=None) -> Dataset:
    """Build a Dataset with spectra in row-major (y, then x) order.

    Spectra sharing a coordinate are merged; duplicate m/z values within a
    spectrum keep the largest intensity.
    """
    merged: dict[tuple[int, int], list] = {}
    for s in spectra:
        merged.setdefault((int(s.x), int(s.y)), []).append(s)
    out = []
    for (x, y) in sorted(merged, key=lambda c: (c[1], c[0])):
        parts = merged[(x, y)]
        mz = np.concatenate([p.mz for p in parts]) if parts else np.empty(0)
        inten = np.concatenate([p.intensity for p in parts]) if parts else np.empty(0)
        mz, inten = _collapse_duplicates(mz, inten)
        out.append(Spectrum(x, y, mz, inten))
    return Dataset(name, out, float(mz_min), float(mz_max), annotation_path)


def _collapse_duplicates(mz, inten):
    if mz.size == 0:
        return mz.astype(np.float64), inten.astype(np.float64)
    # sort by mz ascending, then intensity descending; keep first of each mz
    order = np.lexsort((-inten, mz))
    mz, inten = mz[order], inten[order]
    keep = np.ones(mz.size, dtype=bool)
    keep[1:] = mz[1:] != mz[:-1]
    return mz[keep], inten[keep]


def read_meta(path) -> dict[str, str]:
    """Parse a ``key=value`` file. Blank lines and ``#`` comments are skipped."""
    path = Path(path)
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", path, lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _parse_float(text, what, path, lineno):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric {what} {text!r}", path, lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", path, lineno)
    return value


def _parse_int(text, what, path, lineno):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"non-integer {what} {text!r}", path, lineno) from None


def _check_header(header_line, expected, path):
    got = tuple(h.strip() for h in header_line.rstrip("\r\n").split("\t"))
    if got != expected:
        raise ParseError(
            f"expected header {'<TAB>'.join(expected)!r}, got {'<TAB>'.join(got)!r}", path, 1
        )


def parse_dataset(path) -> Dataset:
    """Load a dataset directory (or a path to its ``dataset.meta``)."""
    path = Path(path)
    root = path.parent if path.is_file() else path
    meta_path = root / META_FILE
    peaks_path = root / PEAKS_FILE
    if not meta_path.exists():
        raise FileNotFoundError(f"missing manifest {meta_path}")
    if not peaks_path.exists():
        raise FileNotFoundError(f"missing peaks table {peaks_path}")

    meta = read_meta(meta_path)
    for key in ("name", "mz_min", "mz_max"):
        if key not in meta:
            raise ParseError(f"manifest lacks required key {key!r}", meta_path)
    mz_min = _parse_float(meta["mz_min"], "mz_min", meta_path, None)
    mz_max = _parse_float(meta["mz_max"], "mz_max", meta_path, None)
    if not 0 < mz_min <= mz_max:
        raise ParseError(f"invalid acquisition range [{mz_min}, {mz_max}]", meta_path)
    annotation = root / meta["annotation"] if meta.get("annotation") else None

    xs, ys, mzs, ints = [], [], [], []
    empty_coords = []
    with open(peaks_path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("no spectra", peaks_path)
        _check_header(header, PEAKS_HEADER, peaks_path)
        for lineno, raw in enumerate(fh, 2):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", peaks_path, lineno)
            x = _parse_int(parts[0], "x", peaks_path, lineno)
            y = _parse_int(parts[1], "y", peaks_path, lineno)
            if parts[2] == "" and parts[3] == "":
                empty_coords.append((x, y))
                continue
            mz = _parse_float(parts[2], "mz", peaks_path, lineno)
            inten = _parse_float(parts[3], "intensity", peaks_path, lineno)
            if mz <= 0:
                raise ParseError(f"mz must be positive, got {mz}", peaks_path, lineno)
            if inten < 0:
                raise ParseError(f"negative intensity {inten}", peaks_path, lineno)
            if not mz_min <= mz <= mz_max:
                raise ParseError(
                    f"mz {mz} outside declared range [{mz_min}, {mz_max}]", peaks_path, lineno
                )
            xs.append(x)
            ys.append(y)
            mzs.append(mz)
            ints.append(inten)

    if not xs and not empty_coords:
        raise ParseError("no spectra", peaks_path)

    spectra = _group_spectra(
        np.array(xs, dtype=np.int64),
        np.array(ys, dtype=np.int64),
        np.array(mzs, dtype=np.float64),
        np.array(ints, dtype=np.float64),
    )
    spectra.extend(Spectrum(x, y, np.empty(0), np.empty(0)) for x, y in empty_coords)
    return canonical_dataset(meta["name"], spectra, mz_min, mz_max, annotation)


def _group_spectra(xs, ys, mzs, ints) -> list[Spectrum]:
    if xs.size == 0:
        return []
    order = np.lexsort((mzs, xs, ys))
    xs, ys, mzs, ints = xs[order], ys[order], mzs[order], ints[order]
    change = np.flatnonzero((xs[1:] != xs[:-1]) | (ys[1:] != ys[:-1])) + 1
    starts = np.concatenate(([0], change))
    stops = np.concatenate((change, [xs.size]))
    return [
        Spectrum(int(xs[a]), int(ys[a]), mzs[a:b], ints[a:b]) for a, b in zip(starts, stops)
    ]


def parse_annotation(path, dataset) -> AnnotationSubset:
    """Load an ``x<TAB>y`` coordinate list and check each pair exists in ``dataset``.

    ``dataset`` may also be an (n, 2) coordinate array.
    """
    path = Path(path)
    coords = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ParseError("empty annotation file", path)
        _check_header(header, ANNOTATION_HEADER, path)
        for lineno, raw in enumerate(fh, 2):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 2 fields, got {len(parts)}", path, lineno)
            coords.add(
                (_parse_int(parts[0], "x", path, lineno), _parse_int(parts[1], "y", path, lineno))
            )
    if isinstance(dataset, Dataset):
        present = {s.coord for s in dataset.spectra}
        label = repr(dataset.name)
    else:
        present = {(int(x), int(y)) for x, y in np.asarray(dataset).reshape(-1, 2)}
        label = "coordinates"
    missing = sorted(coords - present, key=lambda c: (c[1], c[0]))
    if missing:
        shown = ", ".join(f"({x},{y})" for x, y in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise ValidationError(
            f"annotation {path} lists coordinates absent from dataset {label}: {shown}{more}"
        )
    return AnnotationSubset(frozenset(coords))


def format_value(value) -> str:
    """Text form of a table cell. Floats use the shortest round-tripping repr."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_table(rows: Iterable[Sequence], schema: Sequence[str], path, delimiter=None) -> None:
    """Write ``rows`` under a header line ``schema``.

    The delimiter defaults to ``,`` for ``.csv`` paths and a tab otherwise. Rows
    are written in the order given.
    """
    path = Path(path)
    if delimiter is None:
        delimiter = "," if path.suffix.lower() == ".csv" else "\t"
    width = len(schema)
    lines = [delimiter.join(schema)]
    for n, row in enumerate(rows):
        row = list(row)
        if len(row) != width:
            raise ContractError(f"row {n} has {len(row)} fields, schema has {width}")
        lines.append(delimiter.join(format_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_table(path, delimiter=None) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if delimiter is None:
        delimiter = "," if path.suffix.lower() == ".csv" else "\t"
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    if not lines:
        raise ParseError("empty table", path)
    header = lines[0].split(delimiter)
    rows = [ln.split(delimiter) for ln in lines[1:] if ln]
    return header, rows


def write_meta(pairs: Sequence[tuple[str, object]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in pairs:
            fh.write(f"{key}={format_value(value)}\n")


def write_dataset(dataset: Dataset, directory, annotation: AnnotationSubset | None = None) -> Path:
    """Write ``dataset`` as a directory readable by :func:`parse_dataset`.

    If ``annotation`` is given it is written to ``annotation.tsv`` and linked
    from the manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in dataset.spectra:
        if len(s) == 0:
            rows.append((s.x, s.y, "", ""))
        for m, i in zip(s.mz, s.intensity):
            rows.append((s.x, s.y, float(m), float(i)))
    write_table(rows, PEAKS_HEADER, directory / PEAKS_FILE)
    meta = [("name", dataset.name), ("mz_min", dataset.mz_min), ("mz_max", dataset.mz_max)]
    if annotation is not None:
        ann_rows = sorted(annotation.coords, key=lambda c: (c[1], c[0]))
        write_table(ann_rows, ANNOTATION_HEADER, directory / "annotation.tsv")
        meta.append(("annotation", "annotation.tsv"))
    write_meta(meta, directory / META_FILE)
    return directory
