"""Workflow stages and their on-disk intermediates.

Every stage has a ``run_*`` function working on in-memory objects and a
``write_*``/``read_*`` pair for its files, so that a stage run standalone on
serialized inputs writes exactly the bytes it writes inside the pipeline.
"""

from __future__ import annotations

import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .binning import (
    BinaryDataMatrix,
    BinGrid,
    build_binary_matrix,
    merge_feature_intervals,
    tandem_grid,
    write_matrix,
)
from .clustering import ClusterResult, annotation_overlap, kmeans
from .compare import JaccardMatrix, pairwise_jaccard
from .dipps import DippsResult, FeatureSet, extract_features
from .errors import ContractError, SchemaVersionError, ValidationError
from .peaklist_io import (
    AnnotationSubset,
    Dataset,
    parse_annotation,
    parse_dataset,
    read_meta,
    read_table,
    write_dataset,
    write_meta,
    write_table,
)
from .smoothing import SmoothingParams, SmoothResult, parse_tau, smooth
from .viz import render_cluster_map, render_dipps_map, render_jaccard_grid

logger = logging.getLogger(__name__)

FEATURES_SCHEMA = "imsbinary-features/1"
CLUSTERS_SCHEMA = "imsbinary-clusters/1"
STAGES = ("ingest", "bin", "smooth", "cluster", "dipps", "compare", "render", "synth")
VALIDATED_WIDTHS = (0.05, 2.0)


class StageFailure(RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_subset_selector(text):
    if text is None or isinstance(text, int):
        return text
    text = str(text).strip()
    if text == "annotation":
        return text
    value = int(text)
    if value < 0:
        raise ValueError("cluster index must be non-negative")
    return value


@dataclass
class PipelineConfig:
    bin_width: float = 0.25
    tandem: bool = False
    tau: Fraction = Fraction(1, 4)
    delta: float = math.sqrt(2)
    max_iters: int = 100
    k: int = 4
    restarts: int = 100
    seed: int = 0
    subset_cluster: int | str | None = None
    output: Path = Path("imsbinary-out")
    scale: int = 4
    png: bool = False
    all_bins: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.tau = parse_tau(self.tau)
        self.output = Path(self.output)
        self.subset_cluster = parse_subset_selector(self.subset_cluster)

    def validate(self):
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")
        lo, hi = VALIDATED_WIDTHS
        if not lo <= self.bin_width <= hi:
            logger.warning(
                "bin width %s lies outside the validated range [%s, %s]", self.bin_width, lo, hi
            )
        self.smoothing_params()  # raises on bad tau/delta/max_iters
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        return self

    def smoothing_params(self) -> SmoothingParams:
        return SmoothingParams(self.tau, self.delta, self.max_iters)


_CONVERTERS = {
    "bin_width": float,
    "tandem": _bool,
    "tau": parse_tau,
    "delta": float,
    "max_iters": int,
    "k": int,
    "restarts": int,
    "seed": int,
    "subset_cluster": parse_subset_selector,
    "output": Path,
    "scale": int,
    "png": _bool,
    "all_bins": _bool,
    "jobs": int,
}


def load_config(path) -> dict:
    """Read a ``key=value`` config file into converted PipelineConfig fields."""
    raw = read_meta(path)
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in _CONVERTERS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        try:
            out[name] = _CONVERTERS[name](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"{path}: bad value for {key!r}: {exc}") from None
    return out


def make_config(file_values=None, overrides=None) -> PipelineConfig:
    """Defaults, then config-file values, then explicit overrides."""
    values = {}
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(PipelineConfig)}
    return PipelineConfig(**{k: v for k, v in values.items() if k in known})


# --- ingest -----------------------------------------------------------------


def run_ingest(dataset_path) -> tuple[Dataset, AnnotationSubset | None]:
    dataset = parse_dataset(dataset_path)
    annotation = None
    if dataset.annotation_path is not None:
        annotation = parse_annotation(dataset.annotation_path, dataset)
    return dataset, annotation


def write_ingest(dataset, annotation, outdir) -> Path:
    return write_dataset(dataset, outdir, annotation)


# --- bin --------------------------------------------------------------------


def run_bin(dataset: Dataset, config: PipelineConfig, shifted: bool = False) -> BinaryDataMatrix:
    grid = BinGrid(dataset.mz_min, dataset.mz_max, config.bin_width)
    if shifted:
        grid = tandem_grid(grid)
    return build_binary_matrix(dataset, grid)


def write_bin(matrix: BinaryDataMatrix, outdir) -> Path:
    return write_matrix(matrix, outdir)


# --- smooth -----------------------------------------------------------------


def run_smooth(matrix: BinaryDataMatrix, config: PipelineConfig) -> SmoothResult:
    result = smooth(matrix, config.smoothing_params())
    if not result.converged:
        logger.warning(
            "%s: smoothing stopped after %d iterations without converging (%d bins cycling)",
            matrix.name,
            result.iterations,
            int(result.cycling_bins.sum()),
        )
    return result


def write_smooth(result: SmoothResult, source: BinaryDataMatrix, config, outdir) -> Path:
    outdir = Path(outdir)
    write_matrix(
        result.matrix,
        outdir,
        extra_meta=[
            ("tau", str(config.tau)),
            ("delta", config.delta),
            ("iterations", result.iterations),
            ("converged", result.converged),
        ],
    )
    pre = source.values.sum(axis=1, dtype=np.int64)
    post = result.smoothed_values.sum(axis=1, dtype=np.int64)
    rows = zip(
        source.bin_indices.tolist(),
        np.round(source.bin_centers, 10).tolist(),
        pre.tolist(),
        post.tolist(),
        result.retained_bins.astype(int).tolist(),
    )
    write_table(
        rows,
        ("bin_index", "bin_center", "pre_count", "post_count", "retained"),
        outdir / "retained_bins.tsv",
    )
    return outdir


# --- cluster ----------------------------------------------------------------


def run_cluster(matrix: BinaryDataMatrix, config: PipelineConfig) -> ClusterResult:
    n = matrix.shape[1]
    if config.k > n:
        raise ContractError(f"k={config.k} exceeds the number of spectra ({n})")
    return kmeans(matrix, config.k, config.restarts, config.seed)


def write_cluster(result: ClusterResult, matrix: BinaryDataMatrix, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [(int(x), int(y), int(c)) for (x, y), c in zip(matrix.coords, result.assignments)]
    write_table(rows, ("x", "y", "cluster"), outdir / "clusters.tsv")
    write_meta(
        [
            ("schema", CLUSTERS_SCHEMA),
            ("name", matrix.name),
            ("k", result.k),
            ("restarts", result.restarts),
            ("seed", result.seed),
            ("best_restart", result.best_restart),
            ("iterations", result.iterations),
            ("objective", result.objective),
            ("sizes", ",".join(str(int(s)) for s in result.sizes())),
        ],
        outdir / "cluster.meta",
    )
    return outdir


def read_cluster_assignments(path, matrix: BinaryDataMatrix) -> tuple[np.ndarray, int]:
    """Assignments from ``clusters.tsv`` (or its directory), aligned to ``matrix``."""
    path = Path(path)
    if path.is_dir():
        path = path / "clusters.tsv"
    header, rows = read_table(path)
    if header != ["x", "y", "cluster"]:
        raise SchemaVersionError(f"{path}: unexpected header {header}")
    coords = np.array([(int(r[0]), int(r[1])) for r in rows], dtype=np.int64).reshape(-1, 2)
    if not np.array_equal(coords, matrix.coords):
        raise ValidationError(f"{path}: coordinates do not match the matrix columns")
    labels = np.array([int(r[2]) for r in rows], dtype=np.int64)
    k = int(labels.max()) + 1 if labels.size else 0
    meta_path = path.parent / "cluster.meta"
    if meta_path.exists():
        meta = read_meta(meta_path)
        if meta.get("schema") != CLUSTERS_SCHEMA:
            raise SchemaVersionError(f"{meta_path}: unexpected schema {meta.get('schema')!r}")
        k = int(meta["k"])
    return labels, k


# --- dipps ------------------------------------------------------------------


def select_cluster(labels, k, coords, selector, annotation) -> tuple[int, float | None]:
    """Cluster used as the DIPPS subset, and its annotation overlap if known.

    With ``selector`` None or ``"annotation"`` the cluster holding the largest
    share of the annotation subset wins (lowest index on ties).
    """
    overlaps = None
    if annotation is not None and len(annotation):
        proxy = ClusterResult(k, labels, np.zeros((k, 0)), 0.0, 0, 1)
        overlaps = [annotation_overlap(proxy, c, annotation, coords) for c in range(k)]
    if isinstance(selector, int):
        if not 0 <= selector < k:
            raise ContractError(f"subset cluster {selector} not in [0, {k})")
        return selector, (overlaps[selector] if overlaps else None)
    if overlaps is None:
        raise ContractError(
            "no annotation available: choose the DIPPS subset with --subset-cluster INDEX"
        )
    best = int(np.argmax(overlaps))
    return best, overlaps[best]


def run_dipps(matrix, labels, cluster_id) -> tuple[DippsResult, FeatureSet]:
    return extract_features(matrix, labels == cluster_id)


def write_dipps(
    result: DippsResult,
    features: FeatureSet,
    matrix: BinaryDataMatrix,
    cluster_id: int,
    overlap,
    outdir,
    all_bins: bool = False,
) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    centers = np.round(matrix.bin_centers, 10)
    keep = np.ones(result.dipps.size, dtype=bool) if all_bins else result.template.astype(bool)
    idx = np.flatnonzero(keep)
    order = idx[np.lexsort((centers[idx], -result.dipps[idx]))]
    rows = [(float(centers[i]), float(result.dipps[i])) for i in order]
    header = ("bin_center", "dipps", "selected") if all_bins else ("bin_center", "dipps")
    if all_bins:
        rows = [r + (int(result.template[i]),) for r, i in zip(rows, order)]
    write_table(rows, header, outdir / "features.csv")
    g = matrix.grid
    write_meta(
        [
            ("schema", FEATURES_SCHEMA),
            ("name", matrix.name),
            ("width", g.width),
            ("offset", g.offset),
            ("mz_min", g.mz_min),
            ("mz_max", g.mz_max),
            ("cutoff", result.cutoff),
            ("n_features", result.n_features),
            ("cutoff_distance", result.cutoff_distance),
            ("subset_cluster", cluster_id),
            ("subset_size", result.subset_size),
            ("annotation_overlap", "" if overlap is None else overlap),
        ],
        outdir / "features.meta",
    )
    rows = [(int(x), int(y), int(c)) for (x, y), c in zip(matrix.coords, result.map_counts)]
    write_table(rows, ("x", "y", "count"), outdir / "dipps_map.tsv")
    return outdir


def read_features(directory) -> FeatureSet:
    directory = Path(directory)
    meta_path = directory / "features.meta"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing {meta_path}")
    meta = read_meta(meta_path)
    if meta.get("schema") != FEATURES_SCHEMA:
        raise SchemaVersionError(f"{meta_path}: unexpected schema {meta.get('schema')!r}")
    grid = BinGrid(
        float(meta["mz_min"]), float(meta["mz_max"]), float(meta["width"]), float(meta["offset"])
    )
    header, rows = read_table(directory / "features.csv")
    if header[:2] != ["bin_center", "dipps"]:
        raise SchemaVersionError(f"{directory / 'features.csv'}: unexpected header {header}")
    selected = [r for r in rows if len(header) < 3 or r[2] == "1"]
    indices = [round((float(r[0]) - grid.offset) / grid.width) for r in selected]
    return FeatureSet.from_indices(indices, grid, meta.get("name", ""), float(meta["cutoff"]))


# --- render -----------------------------------------------------------------


def _image_name(stem, config) -> str:
    return f"{stem}.png" if config.png else f"{stem}.ppm"


def write_cluster_image(labels, coords, config, path) -> Path:
    return render_cluster_map(labels, coords, scale=config.scale).save(path)


def write_dipps_image(counts, n_features, coords, config, path) -> Path:
    return render_dipps_map(counts, n_features, coords, scale=config.scale).save(path)


def read_count_table(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    header, rows = read_table(path)
    if len(header) != 3 or header[:2] != ["x", "y"]:
        raise SchemaVersionError(f"{path}: expected x, y and a value column")
    coords = np.array([(int(r[0]), int(r[1])) for r in rows], dtype=np.int64).reshape(-1, 2)
    values = np.array([int(r[2]) for r in rows], dtype=np.int64)
    return coords, values, header


# --- compare ----------------------------------------------------------------


def run_compare(feature_sets) -> JaccardMatrix:
    names = [fs.name for fs in feature_sets]
    if len(set(names)) != len(names):
        raise ContractError(f"feature set names must be unique, got {names}")
    return pairwise_jaccard(feature_sets, names)


def write_compare(matrix: JaccardMatrix, config, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_table(matrix.rows(), ("dataset", *matrix.labels), outdir / "jaccard.csv")
    render_jaccard_grid(matrix, cell_size=4 * config.scale).save(
        outdir / _image_name("jaccard", config)
    )
    return outdir


def read_jaccard(path) -> JaccardMatrix:
    header, rows = read_table(path)
    labels = header[1:]
    values = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(labels), -1)
    return JaccardMatrix(labels, values)


# --- whole workflow ---------------------------------------------------------


@dataclass
class DatasetOutcome:
    name: str
    features: FeatureSet | None = None
    stages: list = field(default_factory=list)  # (stage, status, detail)
    error: StageFailure | None = None


def _stage(outcome: DatasetOutcome, stage: str, fn, *args):
    try:
        value = fn(*args)
    except (OSError, ValueError, RuntimeError) as exc:
        outcome.stages.append((stage, "failed", str(exc).replace("\t", " ").replace("\n", " ")))
        raise StageFailure(stage, f"{outcome.name}: {exc}") from exc
    outcome.stages.append((stage, "complete", ""))
    return value


def _chain(dataset, annotation, config, outdir, outcome, shifted, tag=""):
    """bin -> smooth -> cluster -> dipps -> render for one grid."""
    matrix = _stage(outcome, tag + "bin", run_bin, dataset, config, shifted)
    write_bin(matrix, outdir / "binned")
    smoothed = _stage(outcome, tag + "smooth", run_smooth, matrix, config)
    write_smooth(smoothed, matrix, config, outdir / "smoothed")
    logger.info(
        "%s%s: %d nonempty bins, %d retained after smoothing (%d iterations)",
        dataset.name,
        " (tandem)" if shifted else "",
        matrix.shape[0],
        smoothed.n_retained,
        smoothed.iterations,
    )
    clusters = _stage(outcome, tag + "cluster", run_cluster, smoothed.matrix, config)
    write_cluster(clusters, smoothed.matrix, outdir)

    def dipps_stage():
        cid, overlap = select_cluster(
            clusters.assignments, clusters.k, smoothed.matrix.coords, config.subset_cluster, annotation
        )
        res, feats = run_dipps(smoothed.matrix, clusters.assignments, cid)
        return cid, overlap, res, feats

    cid, overlap, res, feats = _stage(outcome, tag + "dipps", dipps_stage)
    write_dipps(res, feats, smoothed.matrix, cid, overlap, outdir, config.all_bins)
    logger.info(
        "%s%s: DIPPS subset cluster %d (%d spectra, annotation overlap %s): a*=%.4f, %d features",
        dataset.name,
        " (tandem)" if shifted else "",
        cid,
        res.subset_size,
        "n/a" if overlap is None else f"{overlap:.3f}",
        res.cutoff,
        res.n_features,
    )

    def render_stage():
        coords = smoothed.matrix.coords
        write_cluster_image(
            clusters.assignments, coords, config, outdir / _image_name("cluster_map", config)
        )
        write_dipps_image(
            res.map_counts, res.n_features, coords, config, outdir / _image_name("dipps_map", config)
        )

    _stage(outcome, tag + "render", render_stage)
    return feats


def _process_dataset(path, config: PipelineConfig, root: Path) -> DatasetOutcome:
    outcome = DatasetOutcome(name=str(path))
    try:
        dataset, annotation = _stage(outcome, "ingest", run_ingest, path)
        outcome.name = dataset.name
        outdir = root / dataset.name
        if outdir.exists():
            shutil.rmtree(outdir)
        outdir.mkdir(parents=True)
        outcome.features = _chain(dataset, annotation, config, outdir, outcome, False)
        if config.tandem:
            shifted = _chain(
                dataset, annotation, config, outdir / "tandem", outcome, True, tag="tandem-"
            )
            intervals = merge_feature_intervals(outcome.features, shifted)
            write_table(
                [(round(lo, 10), round(hi, 10)) for lo, hi in intervals],
                ("mz_low", "mz_high"),
                outdir / "merged_intervals.tsv",
            )
    except StageFailure as exc:
        outcome.error = exc
        logger.error("stage failure %s", exc)
    return outcome


def _write_manifest(root: Path, outcomes, compare_status) -> None:
    rows = []
    for o in outcomes:
        for stage, status, detail in o.stages:
            rows.append((o.name, stage, status, detail))
    if compare_status is not None:
        rows.append(("*", "compare", *compare_status))
    write_table(rows, ("dataset", "stage", "status", "detail"), root / "MANIFEST.tsv")


def run_pipeline(config: PipelineConfig, dataset_paths) -> int:
    """Run every stage for each dataset and compare the feature sets.

    Returns the process exit status: 0 on success, 1 if any stage failed.
    """
    root = config.output
    root.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in dataset_paths]
    if config.jobs > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(lambda p: _process_dataset(p, config, root), paths))
    else:
        outcomes = [_process_dataset(p, config, root) for p in paths]

    names = [o.name for o in outcomes]
    failed = any(o.error is not None for o in outcomes)
    compare_status = None
    jaccard_path = root / "jaccard.csv"
    if jaccard_path.exists():
        jaccard_path.unlink()
    if len(set(names)) != len(names):
        failed = True
        compare_status = ("failed", f"duplicate dataset names {names}")
        logger.error("duplicate dataset names: %s", names)
    elif failed:
        compare_status = ("skipped", "upstream stage failure")
    elif len(outcomes) < 2:
        compare_status = ("skipped", "comparison needs at least two datasets")
        logger.warning("only one dataset given: no Jaccard comparison is written")
    else:
        try:
            jm = run_compare([o.features for o in outcomes])
            write_compare(jm, config, root)
            compare_status = ("complete", "")
        except (OSError, ValueError) as exc:
            failed = True
            compare_status = ("failed", str(exc))
            logger.error("stage failure [compare] %s", exc)
    _write_manifest(root, outcomes, compare_status)
    return 1 if failed else 0
