"""Iterative binary spatial smoothing over distance neighbourhoods.

For every bin ``i`` and spectrum ``j`` the agreement proportion ``T_ij`` is the
fraction of ``j``'s spatial neighbours whose value in bin ``i`` equals
``x_ij``. An entry flips when ``T_ij <= tau``. All entries are updated at once
from the previous iterate, and iteration stops at the first fixed point.

Comparisons against ``tau`` are done in integer arithmetic (``tau`` is a
:class:`fractions.Fraction`), so ``T_ij == tau`` is never subject to
rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .binning import BinaryDataMatrix
from .errors import ContractError

# rows processed per sparse product; bounds the int32 workspace to ~chunk * n
ROW_CHUNK = 512


def parse_tau(value) -> Fraction:
    """Accept ``"1/4"``, ``"0.25"``, a float or a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**6)
    return Fraction(str(value).strip())


@dataclass(frozen=True)
class SmoothingParams:
    tau: Fraction = Fraction(1, 4)
    delta: float = math.sqrt(2)
    max_iters: int = 100

    def __post_init__(self):
        object.__setattr__(self, "tau", parse_tau(self.tau))
        if not 0 <= self.tau < Fraction(1, 2):
            raise ContractError(f"tau must satisfy 0 <= tau < 1/2, got {self.tau}")
        if not self.delta >= 0:
            raise ContractError(f"delta must be non-negative, got {self.delta}")
        if int(self.max_iters) < 1:
            raise ContractError("max_iters must be a positive integer")


@dataclass(eq=False)
class NeighborIndex:
    """Self-excluded spatial neighbours in CSR layout."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, j) -> np.ndarray:
        return self.indices[self.indptr[j] : self.indptr[j + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.int32)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def build_neighbor_index(coords, delta: float = math.sqrt(2)) -> NeighborIndex:
    """Neighbours ``j'`` of ``j`` satisfy ``0 < dist(j, j') <= delta``."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    n = coords.shape[0]
    if n == 0:
        return NeighborIndex(np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int64))
    if np.unique(coords, axis=0).shape[0] != n:
        raise ContractError("coordinates must be distinct")
    # small slack so that delta = sqrt(2) reliably includes diagonal neighbours
    pairs = cKDTree(coords).query_pairs(r=delta * (1 + 1e-9), output_type="ndarray")
    if pairs.size:
        d2 = ((coords[pairs[:, 0]] - coords[pairs[:, 1]]) ** 2).sum(axis=1)
        pairs = pairs[d2 <= delta * delta * (1 + 1e-9)]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return NeighborIndex(np.cumsum(indptr), cols.astype(np.int64))


def agreement_proportion(X, i: int, j: int, index: NeighborIndex) -> Fraction:
    """Exact ``T_ij``. A spectrum without neighbours has ``T_ij = 1``."""
    X = _values(X)
    nb = index.neighbors(j)
    if nb.size == 0:
        return Fraction(1)
    same = int(np.count_nonzero(X[i, nb] == X[i, j]))
    return Fraction(same, int(nb.size))


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, BinaryDataMatrix) else np.asarray(X)


def _flip_mask(X: np.ndarray, tau: Fraction, adjacency, counts) -> np.ndarray:
    """Entries of ``X`` (rows = bins) with ``T_ij <= tau``."""
    p, q = tau.numerator, tau.denominator
    out = np.empty(X.shape, dtype=bool)
    has_nb = counts > 0
    for start in range(0, X.shape[0], ROW_CHUNK):
        block = X[start : start + ROW_CHUNK]
        ones = np.asarray(adjacency @ block.T.astype(np.int32)).T
        agree = np.where(block == 1, ones, counts - ones).astype(np.int64)
        out[start : start + ROW_CHUNK] = (agree * q <= p * counts) & has_nb
    return out


def smooth_step(X, params: SmoothingParams, index: NeighborIndex) -> np.ndarray:
    """One simultaneous update of every entry."""
    X = np.asarray(_values(X), dtype=np.uint8)
    flip = _flip_mask(X, params.tau, index.adjacency(), index.counts)
    return X ^ flip.astype(np.uint8)


@dataclass(eq=False)
class SmoothResult:
    matrix: BinaryDataMatrix
    iterations: int
    converged: bool
    retained_bins: np.ndarray
    smoothed_values: np.ndarray
    cycling_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n_retained(self) -> int:
        return int(self.retained_bins.sum())


def smooth(
    X: BinaryDataMatrix,
    params: SmoothingParams | None = None,
    index: NeighborIndex | None = None,
) -> SmoothResult:
    """Smooth to a fixed point, then drop bins that are constant across spectra.

    Bins are independent, so once a bin reaches its fixed point it is no
    longer recomputed. The run stops without convergence when every still
    changing bin has entered a period-2 cycle, or after ``max_iters``.
    """
    params = params or SmoothingParams()
    if index is None:
        index = build_neighbor_index(X.coords, params.delta)
    adjacency = index.adjacency()
    counts = index.counts
    cur = np.array(X.values, dtype=np.uint8, copy=True)
    d = cur.shape[0]
    active = np.arange(d)
    prev_active = None  # values of active rows one iteration back
    cycling = np.zeros(d, dtype=bool)
    converged = False
    k = 0
    for k in range(1, int(params.max_iters) + 1):
        block = cur[active]
        new = block ^ _flip_mask(block, params.tau, adjacency, counts).astype(np.uint8)
        unchanged = np.all(new == block, axis=1)
        back2 = (
            np.all(new == prev_active, axis=1)
            if prev_active is not None
            else np.zeros(active.size, dtype=bool)
        )
        cur[active] = new
        if unchanged.all():
            converged = True
            break
        # a bin that reached its fixed point only now differs from two steps back
        if not unchanged.any() and back2.all():
            cycling[active] = True
            break
        keep = ~unchanged
        prev_active = block[keep]
        active = active[keep]
    smoothed = cur
    if not converged and not cycling.any():
        cycling[active] = True
    lo = smoothed.min(axis=1) if d else np.zeros(0, dtype=np.uint8)
    hi = smoothed.max(axis=1) if d else np.zeros(0, dtype=np.uint8)
    retained = lo != hi
    matrix = BinaryDataMatrix(
        smoothed[retained], X.bin_indices[retained], X.coords, X.grid, X.name
    )
    return SmoothResult(matrix, k, converged, retained, smoothed, cycling)
