"""Synthetic peaklist datasets with planted tissue regions.

Each spectrum receives a peak (intensity 1.0, exactly at the bin centre) for
every bin independently, with probability set by the spectrum's region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .binning import BinGrid, bin_index
from .dipps import FeatureSet
from .errors import ValidationError
from .peaklist_io import AnnotationSubset, Spectrum, canonical_dataset, write_dataset, write_table

Predicate = Callable[[int, int], bool]


@dataclass
class PlantedBin:
    center: float
    probabilities: Mapping[str, float]


@dataclass
class SynthSpec:
    grid_width: int
    grid_height: int
    regions: Sequence[tuple[str, Predicate]]
    bins: Sequence[PlantedBin]
    noise_bins: int = 0
    p_noise: float = 0.0
    seed: int = 0
    name: str = "synth"
    bin_width: float = 0.25
    mz_min: float = 1000.0
    mz_max: float = 4500.0
    noise_start: float | None = None
    target_region: str | None = None

    def validate(self):
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValidationError("grid dimensions must be positive")
        labels = [r[0] for r in self.regions]
        if len(set(labels)) != len(labels):
            raise ValidationError("region labels must be unique")
        for b in self.bins:
            for label, p in b.probabilities.items():
                if label not in labels:
                    raise ValidationError(f"bin {b.center}: unknown region {label!r}")
                if not 0 <= p <= 1:
                    raise ValidationError(f"bin {b.center}: probability {p} outside [0, 1]")
        if not 0 <= self.p_noise <= 1:
            raise ValidationError("p_noise outside [0, 1]")
        if self.noise_bins < 0:
            raise ValidationError("noise_bins must be non-negative")


@dataclass
class SynthOutput:
    dataset: object
    labels: np.ndarray  # region label per spectrum, aligned with dataset.spectra
    planted: dict = field(default_factory=dict)  # region -> FeatureSet
    noise: FeatureSet | None = None
    target_region: str | None = None

    def region_coords(self, region: str) -> AnnotationSubset:
        coords = self.dataset.coords[self.labels == region]
        return AnnotationSubset(frozenset((int(x), int(y)) for x, y in coords))


def _assign_regions(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = np.meshgrid(np.arange(spec.grid_width), np.arange(spec.grid_height))
    coords = np.column_stack([xs.ravel(), ys.ravel()])  # row-major: y, then x
    labels = np.empty(coords.shape[0], dtype=object)
    labels[:] = None
    for label, pred in spec.regions:
        hit = np.array([bool(pred(int(x), int(y))) for x, y in coords])
        labels[hit & (labels == None)] = label  # noqa: E711  first matching region wins
    if any(v is None for v in labels):
        raise ValidationError("region predicates do not cover the whole grid")
    for label, _ in spec.regions:
        if not np.any(labels == label):
            raise ValidationError(f"region {label!r} is empty")
    return coords, labels


def noise_centers(spec: SynthSpec) -> np.ndarray:
    """Centres of the nuisance bins, placed after the planted ones."""
    step = 3 * spec.bin_width
    start = spec.noise_start
    if start is None:
        top = max((b.center for b in spec.bins), default=spec.mz_min)
        start = top + step
    return start + step * np.arange(spec.noise_bins)


def generate(spec: SynthSpec) -> SynthOutput:
    spec.validate()
    coords, labels = _assign_regions(spec)
    n = coords.shape[0]
    centers = [b.center for b in spec.bins] + noise_centers(spec).tolist()
    probs = np.zeros((n, len(centers)))
    for col, b in enumerate(spec.bins):
        for label, p in b.probabilities.items():
            probs[labels == label, col] = p
    probs[:, len(spec.bins) :] = spec.p_noise
    if centers and (min(centers) < spec.mz_min or max(centers) > spec.mz_max):
        raise ValidationError("bin centres fall outside [mz_min, mz_max]")

    rng = np.random.default_rng(spec.seed)
    present = rng.random((n, len(centers))) < probs
    centers = np.asarray(centers, dtype=np.float64)
    spectra = []
    for j, (x, y) in enumerate(coords):
        mz = centers[present[j]]
        spectra.append(Spectrum(int(x), int(y), mz, np.ones(mz.size)))
    dataset = canonical_dataset(spec.name, spectra, spec.mz_min, spec.mz_max)

    grid = BinGrid(spec.mz_min, spec.mz_max, spec.bin_width)
    planted = {}
    for label, _ in spec.regions:
        chosen = [
            bin_index(b.center, grid)
            for b in spec.bins
            if _is_specific(b, label)
        ]
        planted[label] = FeatureSet.from_indices(chosen, grid, spec.name)
    noise = FeatureSet.from_indices(
        [bin_index(c, grid) for c in noise_centers(spec)], grid, spec.name
    )
    return SynthOutput(dataset, labels.astype(str), planted, noise, spec.target_region)


def _is_specific(b: PlantedBin, label: str) -> bool:
    """A bin is specific to ``label`` if it is strictly more likely there than elsewhere."""
    p_in = b.probabilities.get(label, 0.0)
    others = [p for k, p in b.probabilities.items() if k != label]
    return p_in > max(others, default=0.0)


def two_region_spec(
    width: int = 40,
    height: int = 40,
    n_planted: int = 30,
    n_background: int | None = None,
    n_noise: int = 200,
    p_in: float = 0.9,
    p_out: float = 0.05,
    p_noise: float = 0.02,
    seed: int = 0,
    name: str = "synth",
    radius: float | None = None,
) -> SynthSpec:
    """A disc-shaped ``target`` region inside a ``background`` region.

    ``n_planted`` bins occur with ``p_in`` in the target and ``p_out`` in the
    background; ``n_background`` bins (default ``n_planted``) do the reverse,
    so both tissue types carry their own signature. ``n_noise`` bins occur
    with ``p_noise`` everywhere.
    """
    if n_background is None:
        n_background = n_planted
    if radius is None:
        radius = 0.3 * min(width, height)
    cx, cy = (width - 1) / 2, (height - 1) / 2
    r2 = radius * radius

    def in_disc(x, y):
        return (x - cx) ** 2 + (y - cy) ** 2 <= r2

    step = 0.75
    bins = [
        PlantedBin(1000.0 + step * (i + 1), {"target": p_in, "background": p_out})
        for i in range(n_planted)
    ]
    bins += [
        PlantedBin(1000.0 + step * (n_planted + i + 1), {"target": p_out, "background": p_in})
        for i in range(n_background)
    ]
    return SynthSpec(
        grid_width=width,
        grid_height=height,
        regions=[("target", in_disc), ("background", lambda x, y: True)],
        bins=bins,
        noise_bins=n_noise,
        p_noise=p_noise,
        seed=seed,
        name=name,
        target_region="target",
    )


def write_synth(output: SynthOutput, directory) -> Path:
    """Write a dataset directory plus ``truth.tsv`` and the target-region annotation."""
    directory = Path(directory)
    target = output.target_region or output.labels[0]
    write_dataset(output.dataset, directory, annotation=output.region_coords(target))
    rows = [(int(x), int(y), lab) for (x, y), lab in zip(output.dataset.coords, output.labels)]
    write_table(rows, ("x", "y", "region"), directory / "truth.tsv")
    return directory
