"""Cosine-distance k-means over spectra with seeded multi-restart selection."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .binning import BinaryDataMatrix
from .errors import ContractError

logger = logging.getLogger(__name__)

MAX_ITER = 500


def cosine_distance(u, v) -> float:
    """``1 - u.v / (|u| |v|)``, defined as 1 when either vector is all zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - np.dot(u, v) / (nu * nv))))


def normalize_columns(values) -> np.ndarray:
    """Spectra as unit-length rows (n x d); all-zero spectra stay zero."""
    cols = np.asarray(values, dtype=np.float64).T
    norms = np.linalg.norm(cols, axis=1)
    out = np.zeros_like(cols)
    nz = norms > 0
    out[nz] = cols[nz] / norms[nz, None]
    return out


def _distances(units: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """n x k cosine distances between unit (or zero) rows and centroids."""
    cnorm = np.linalg.norm(centroids, axis=1)
    dots = units @ centroids.T
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = 1.0 - dots / cnorm[None, :]
    unorm_zero = ~np.any(units != 0, axis=1)
    dist[:, cnorm == 0] = 1.0
    dist[unorm_zero, :] = 1.0
    return np.clip(dist, 0.0, 1.0)


def _centroids(units: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, units.shape[1]))
    np.add.at(sums, labels, units)
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    return sums / np.maximum(sizes, 1.0)[:, None]


def _objective(dist: np.ndarray, labels: np.ndarray) -> float:
    return float(dist[np.arange(labels.size), labels].sum())


def _fill_empty(labels: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    """Give every empty cluster the spectrum farthest from its current centroid."""
    sizes = np.bincount(labels, minlength=k)
    if sizes.min() > 0:
        return labels
    labels = labels.copy()
    own = dist[np.arange(labels.size), labels].copy()
    for c in np.flatnonzero(sizes == 0):
        movable = sizes[labels] > 1
        cand = np.where(movable, own, -np.inf)
        j = int(np.argmax(cand))
        sizes[labels[j]] -= 1
        sizes[c] += 1
        labels[j] = c
        own[j] = -np.inf  # already moved; do not pick again
    return labels


@dataclass
class _Run:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    trace: list
    iterations: int


def _single_run(units: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> _Run:
    n = units.shape[0]
    init = rng.choice(n, size=k, replace=False)
    centroids = units[init].copy()
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        dist = _distances(units, centroids)
        new = _fill_empty(np.argmin(dist, axis=1), dist, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _centroids(units, labels, k)
        trace.append(_objective(_distances(units, centroids), labels))
    return _Run(labels, centroids, trace[-1], trace, it)


@dataclass(eq=False)
class ClusterResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    seed: int
    restarts: int
    best_restart: int = 0
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(restart)]))


def kmeans(
    X,
    k: int,
    restarts: int = 100,
    seed: int = 0,
    max_iter: int = MAX_ITER,
    workers: int = 1,
) -> ClusterResult:
    """Cluster the columns of ``X`` and keep the restart with the smallest
    within-cluster sum of cosine distances (ties go to the earliest restart).
    """
    values = X.values if isinstance(X, BinaryDataMatrix) else np.asarray(X)
    if values.ndim != 2:
        raise ContractError("X must be 2-D (bins x spectra)")
    n = values.shape[1]
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= n, got k={k}, n={n}")
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    units = normalize_columns(values)

    def run(r):
        return _single_run(units, k, restart_rng(seed, r), max_iter)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, range(restarts)))
    else:
        runs = [run(r) for r in range(restarts)]

    best = 0
    for r in range(1, restarts):
        if runs[r].objective < runs[best].objective:
            best = r
    b = runs[best]
    logger.debug("k-means k=%d: best restart %d objective %.6f", k, best, b.objective)
    return ClusterResult(
        k=k,
        assignments=b.labels,
        centroids=b.centroids,
        objective=b.objective,
        seed=seed,
        restarts=restarts,
        best_restart=best,
        iterations=b.iterations,
        objective_trace=b.trace,
        restart_objectives=[r.objective for r in runs],
    )


def annotation_overlap(result: ClusterResult, cluster_id: int, annotation, coords) -> float:
    """Fraction of annotated spectra that fall in ``cluster_id``."""
    if not 0 <= cluster_id < result.k:
        raise ContractError(f"cluster id {cluster_id} not in [0, {result.k})")
    ann = annotation.coords if hasattr(annotation, "coords") else frozenset(annotation)
    if not ann:
        raise ContractError("annotation subset is empty")
    coords = np.asarray(coords).reshape(-1, 2)
    in_cluster = {
        (int(x), int(y)) for (x, y), c in zip(coords, result.assignments) if c == cluster_id
    }
    return len(ann & in_cluster) / len(ann)
