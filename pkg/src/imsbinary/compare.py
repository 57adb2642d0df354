"""Jaccard distances between feature sets of different datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dipps import FeatureSet
from .errors import ContractError


@dataclass(eq=False)
class JaccardMatrix:
    labels: list[str]
    values: np.ndarray

    def rows(self, decimals: int = 4) -> list[list[str]]:
        """Table body for ``jaccard.csv``: label column then fixed-point distances."""
        return [
            [label, *(f"{v:.{decimals}f}" for v in row)]
            for label, row in zip(self.labels, self.values)
        ]


def _members(s):
    if isinstance(s, FeatureSet):
        return s.bin_indices
    return frozenset(s)


def jaccard_distance(s1, s2) -> float:
    """``1 - |s1 & s2| / |s1 | s2|``, with two empty sets at distance 0.

    Accepts FeatureSets (which must share a bin grid) or plain sets.
    """
    if isinstance(s1, FeatureSet) and isinstance(s2, FeatureSet):
        if not s1.grid.same_partition(s2.grid):
            raise ContractError(
                f"feature sets come from different bin grids "
                f"(width {s1.grid.width}/{s2.grid.width}, "
                f"offset {s1.grid.offset}/{s2.grid.offset})"
            )
    a, b = _members(s1), _members(s2)
    union = len(a | b)
    if union == 0:
        return 0.0
    # (|A u B| - |A n B|) / |A u B| rounds once, unlike 1 - |A n B| / |A u B|
    return (union - len(a & b)) / union


def pairwise_jaccard(sets, labels=None) -> JaccardMatrix:
    sets = list(sets)
    if len(sets) < 2:
        raise ContractError("need at least two feature sets to compare")
    if labels is None:
        labels = [getattr(s, "name", "") or f"set{i}" for i, s in enumerate(sets)]
    m = len(sets)
    values = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            values[i, j] = values[j, i] = jaccard_distance(sets[i], sets[j])
    return JaccardMatrix(list(labels), values)
