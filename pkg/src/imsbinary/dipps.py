"""Difference in proportions of occurrence (DIPPS) between a column subset and
its complement, the data-driven feature cutoff, and DIPPS map counts.

DIPPS values are kept internally as exact integer numerators over
``|C| * |C^c|`` so that equal proportions compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binning import BinaryDataMatrix, BinGrid
from .clustering import cosine_distance
from .errors import ContractError, DegenerateSubsetError


@dataclass(frozen=True)
class FeatureSet:
    """Selected bins, identified by their index on ``grid``."""

    bin_indices: frozenset
    grid: BinGrid
    name: str = ""
    cutoff: float | None = None

    @classmethod
    def from_indices(cls, indices, grid, name="", cutoff=None) -> "FeatureSet":
        return cls(frozenset(int(i) for i in indices), grid, name, cutoff)

    @property
    def centers(self) -> list[float]:
        return [float(self.grid.center(i)) for i in sorted(self.bin_indices)]

    def __len__(self):
        return len(self.bin_indices)

    def __contains__(self, bin_idx):
        return int(bin_idx) in self.bin_indices


@dataclass(eq=False)
class DippsResult:
    dipps: np.ndarray
    cutoff: float
    template: np.ndarray
    n_features: int
    map_counts: np.ndarray
    subset_size: int
    cutoff_distance: float = 1.0


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, BinaryDataMatrix) else np.asarray(X)


def subset_mask(n: int, subset) -> np.ndarray:
    """Boolean column mask from indices or an existing boolean mask."""
    arr = np.asarray(subset)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ContractError(f"boolean subset must have length {n}")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    if arr.size:
        idx = arr.astype(np.int64).ravel()
        if idx.min() < 0 or idx.max() >= n:
            raise ContractError("subset index out of range")
        mask[idx] = True
    return mask


def _counts(values, mask):
    return values[:, mask].sum(axis=1, dtype=np.int64)


def occurrence_proportions(X, subset) -> np.ndarray:
    values = _values(X)
    mask = subset_mask(values.shape[1], subset)
    size = int(mask.sum())
    if size == 0:
        raise ContractError("subset is empty")
    return _counts(values, mask) / size


def _dipps_numerators(values, mask):
    """Integer numerators of the DIPPS vector over ``|C| |C^c|``."""
    size_in = int(mask.sum())
    size_out = mask.size - size_in
    if size_in == 0:
        raise ContractError("subset is empty")
    if size_out == 0:
        raise ContractError("subset complement is empty")
    num = _counts(values, mask) * size_out - _counts(values, ~mask) * size_in
    return num, size_in * size_out


def dipps_vector(X, subset) -> np.ndarray:
    """``p(C) - p(C^c)`` per bin."""
    values = _values(X)
    num, den = _dipps_numerators(values, subset_mask(values.shape[1], subset))
    return num / den


def subset_centroid(X, subset) -> np.ndarray:
    """Mean of the subset's columns after scaling each to unit length."""
    values = np.asarray(_values(X), dtype=np.float64)
    mask = subset_mask(values.shape[1], subset)
    if not mask.any():
        raise ContractError("subset is empty")
    cols = values[:, mask]
    norms = np.linalg.norm(cols, axis=0)
    scaled = np.divide(cols, norms, out=np.zeros_like(cols), where=norms > 0)
    return scaled.mean(axis=1)


def _cutoff_from_numerators(num, den, centroid):
    candidates = np.unique(num[num > 0])[::-1]  # largest first
    if candidates.size == 0:
        raise DegenerateSubsetError("no bin has a positive DIPPS value for this subset")
    best_a = None
    best_dist = np.inf
    best_template = None
    # scanning from the largest cutoff down, a strict improvement is required,
    # so ties resolve to the largest cutoff
    for a in candidates:
        template = (num >= a).astype(np.uint8)
        dist = cosine_distance(centroid, template)
        if dist < best_dist:
            best_a, best_dist, best_template = a, dist, template
    return int(best_a), best_template, best_dist


def optimal_cutoff(X, subset) -> tuple[float, np.ndarray, int]:
    """Cutoff ``a*`` minimising the cosine distance between the subset centroid
    and the template ``dipps >= a``. Returns ``(a*, template, n_features)``."""
    values = _values(X)
    mask = subset_mask(values.shape[1], subset)
    num, den = _dipps_numerators(values, mask)
    a, template, _ = _cutoff_from_numerators(num, den, subset_centroid(values, mask))
    return a / den, template, int(template.sum())


def dipps_map_values(X, template) -> np.ndarray:
    """Per-spectrum count of template bins with a peak, ``t^T x_j``."""
    values = _values(X)
    template = np.asarray(template)
    if template.shape != (values.shape[0],):
        raise ContractError(f"template must have length {values.shape[0]}")
    if not np.isin(template, (0, 1)).all():
        raise ContractError("template must be binary")
    return template.astype(np.int64) @ values.astype(np.int64)


def extract_features(X: BinaryDataMatrix, subset) -> tuple[DippsResult, FeatureSet]:
    values = X.values
    mask = subset_mask(values.shape[1], subset)
    num, den = _dipps_numerators(values, mask)
    a, template, dist = _cutoff_from_numerators(num, den, subset_centroid(values, mask))
    result = DippsResult(
        dipps=num / den,
        cutoff=a / den,
        template=template,
        n_features=int(template.sum()),
        map_counts=dipps_map_values(values, template),
        subset_size=int(mask.sum()),
        cutoff_distance=dist,
    )
    features = FeatureSet.from_indices(
        X.bin_indices[template.astype(bool)], X.grid, X.name, result.cutoff
    )
    return result, features
