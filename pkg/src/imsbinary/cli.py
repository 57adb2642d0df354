"""Command line interface.

Exit status: 0 on success, 1 when a stage fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import pipeline as pl
from .binning import read_matrix
from .errors import ContractError
from .peaklist_io import parse_annotation
from .smoothing import parse_tau
from .synth import generate, two_region_spec, write_synth

logger = logging.getLogger("imsbinary")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _tau(text) -> Fraction:
    try:
        tau = parse_tau(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None
    if not 0 <= tau < Fraction(1, 2):
        raise argparse.ArgumentTypeError(f"tau must satisfy 0 <= tau < 1/2, got {tau}")
    return tau


def _positive(kind):
    def conv(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return conv


def _non_negative_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _selector(text):
    try:
        return pl.parse_subset_selector(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a cluster index or 'annotation', got {text!r}"
        ) from None


def _add_common(p, *names):
    opts = {
        "bin_width": lambda: p.add_argument(
            "--bin-width", type=_positive(float), help="m/z bin width in Daltons (default 0.25)"
        ),
        "tandem": lambda: p.add_argument(
            "--tandem",
            action="store_true",
            default=None,
            help="also run on the half-bin shifted grid and merge feature intervals",
        ),
        "tau": lambda: p.add_argument("--tau", type=_tau, help="smoothing threshold, e.g. 1/4"),
        "delta": lambda: p.add_argument(
            "--delta", type=_non_negative_float, help="neighbourhood radius (default sqrt 2)"
        ),
        "max_iters": lambda: p.add_argument(
            "--max-iters", type=_positive(int), help="smoothing iteration cap (default 100)"
        ),
        "k": lambda: p.add_argument("--k", type=_positive(int), help="number of clusters"),
        "restarts": lambda: p.add_argument(
            "--restarts", type=_positive(int), help="k-means restarts (default 100)"
        ),
        "seed": lambda: p.add_argument("--seed", type=int, help="random seed (default 0)"),
        "subset_cluster": lambda: p.add_argument(
            "--subset-cluster",
            type=_selector,
            help="cluster index used as the DIPPS subset, or 'annotation'",
        ),
        "scale": lambda: p.add_argument(
            "--scale", type=_positive(int), help="pixels per spectrum in images (default 4)"
        ),
        "png": lambda: p.add_argument(
            "--png", action="store_true", default=None, help="write PNG instead of PPM"
        ),
        "all_bins": lambda: p.add_argument(
            "--all-bins",
            action="store_true",
            default=None,
            help="list every bin in features.csv, with a selected column",
        ),
        "jobs": lambda: p.add_argument(
            "--jobs", type=_positive(int), help="datasets processed concurrently"
        ),
    }
    for name in names:
        opts[name]()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imsbinary",
        description="Binary binning, spatial smoothing, cosine k-means and DIPPS "
        "features for imaging mass spectrometry peak lists.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", help="validate a dataset and write it in canonical form")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("bin", help="build the binary bin x spectrum matrix")
    p.add_argument("dataset", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_common(p, "bin_width", "tandem")

    p = sub.add_parser("smooth", help="spatially smooth a binned matrix")
    p.add_argument("matrix", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_common(p, "tau", "delta", "max_iters")

    p = sub.add_parser("cluster", help="cosine k-means over spectra")
    p.add_argument("matrix", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_common(p, "k", "restarts", "seed")

    p = sub.add_parser("dipps", help="DIPPS features of one cluster")
    p.add_argument("matrix", type=Path)
    p.add_argument("--clusters", type=Path, required=True, help="clusters.tsv or its directory")
    p.add_argument("--annotation", type=Path, help="annotation TSV (x, y)")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_common(p, "subset_cluster", "all_bins")

    p = sub.add_parser("compare", help="pairwise Jaccard distances of feature sets")
    p.add_argument("features", type=Path, nargs="+", help="directories holding features.csv")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_common(p, "scale", "png")

    p = sub.add_parser("render", help="render a cluster map, DIPPS map or Jaccard grid")
    p.add_argument("kind", choices=("clusters", "dipps", "jaccard"))
    p.add_argument("input", type=Path, help="clusters.tsv, dipps_map.tsv or jaccard.csv")
    p.add_argument("-o", "--output", type=Path, required=True, help="image file (.ppm or .png)")
    p.add_argument("--n-features", type=_positive(int), help="DIPPS map maximum count")
    _add_common(p, "scale")

    p = sub.add_parser("synth", help="write a synthetic two-region dataset")
    p.add_argument("output", type=Path)
    p.add_argument("--name", default="synth")
    p.add_argument("--width", type=_positive(int), default=40)
    p.add_argument("--height", type=_positive(int), default=40)
    p.add_argument("--planted", type=int, default=30, help="target-specific bins")
    p.add_argument("--background-bins", type=int, default=None)
    p.add_argument("--noise-bins", type=int, default=200)
    p.add_argument("--p-in", type=float, default=0.9)
    p.add_argument("--p-out", type=float, default=0.05)
    p.add_argument("--p-noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pipeline", help="run the whole workflow on one or more datasets")
    p.add_argument("datasets", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path)
    _add_common(
        p,
        "bin_width",
        "tandem",
        "tau",
        "delta",
        "max_iters",
        "k",
        "restarts",
        "seed",
        "subset_cluster",
        "scale",
        "png",
        "all_bins",
        "jobs",
    )
    return parser


def _config(args) -> pl.PipelineConfig:
    file_values = {}
    if args.config is not None:
        try:
            file_values = pl.load_config(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    try:
        return pl.make_config(file_values, overrides).validate()
    except (ValueError, ContractError) as exc:
        raise UsageError(str(exc)) from None


def run_stage(stage: str, config: pl.PipelineConfig, args) -> list[Path]:
    """Run one stage on serialized inputs; returns the files or directories written."""
    if stage == "ingest":
        dataset, annotation = pl.run_ingest(args.dataset)
        return [pl.write_ingest(dataset, annotation, args.output)]
    if stage == "bin":
        dataset, _ = pl.run_ingest(args.dataset)
        matrix = pl.run_bin(dataset, config, shifted=bool(config.tandem))
        return [pl.write_bin(matrix, args.output)]
    if stage == "smooth":
        matrix = read_matrix(args.matrix)
        result = pl.run_smooth(matrix, config)
        return [pl.write_smooth(result, matrix, config, args.output)]
    if stage == "cluster":
        matrix = read_matrix(args.matrix)
        result = pl.run_cluster(matrix, config)
        return [pl.write_cluster(result, matrix, args.output)]
    if stage == "dipps":
        matrix = read_matrix(args.matrix)
        labels, k = pl.read_cluster_assignments(args.clusters, matrix)
        annotation = None
        if args.annotation is not None:
            annotation = parse_annotation(args.annotation, matrix.coords)
        cid, overlap = pl.select_cluster(labels, k, matrix.coords, config.subset_cluster, annotation)
        result, features = pl.run_dipps(matrix, labels, cid)
        return [
            pl.write_dipps(result, features, matrix, cid, overlap, args.output, config.all_bins)
        ]
    if stage == "compare":
        sets = [pl.read_features(p) for p in args.features]
        if len(sets) < 2:
            raise UsageError("compare needs at least two feature directories")
        return [pl.write_compare(pl.run_compare(sets), config, args.output)]
    if stage == "render":
        return [_render(config, args)]
    if stage == "synth":
        spec = two_region_spec(
            width=args.width,
            height=args.height,
            n_planted=args.planted,
            n_background=args.background_bins,
            n_noise=args.noise_bins,
            p_in=args.p_in,
            p_out=args.p_out,
            p_noise=args.p_noise,
            seed=args.seed,
            name=args.name,
        )
        return [write_synth(generate(spec), args.output)]
    raise UsageError(f"unknown stage {stage!r}; expected one of {', '.join(pl.STAGES)}")


def _render(config, args) -> Path:
    out = args.output
    if args.kind == "jaccard":
        from .viz import render_jaccard_grid

        matrix = pl.read_jaccard(args.input)
        return render_jaccard_grid(matrix, cell_size=4 * config.scale).save(out)
    coords, values, header = pl.read_count_table(args.input)
    if args.kind == "clusters":
        return pl.write_cluster_image(values, coords, config, out)
    n_features = args.n_features
    if n_features is None:
        meta = args.input.parent / "features.meta"
        if not meta.exists():
            raise UsageError("--n-features is required when features.meta is not alongside")
        n_features = int(pl.read_meta(meta)["n_features"])
    return pl.write_dipps_image(values, n_features, coords, config, out)


def _setup_logging(verbose, logfile=None):
    root = logging.getLogger("imsbinary")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(fh)
    root.propagate = False
    return root


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.verbose)
    try:
        config = _config(args)
        if args.command == "pipeline":
            if args.output is None:
                args.output = config.output
            config.output = args.output
            config.output.mkdir(parents=True, exist_ok=True)
            _setup_logging(args.verbose, config.output / "pipeline.log")
            return pl.run_pipeline(config, args.datasets)
        for path in run_stage(args.command, config, args):
            logger.info("wrote %s", path)
        return EXIT_OK
    except UsageError as exc:
        print(f"imsbinary: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"imsbinary: error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        root = logging.getLogger("imsbinary")
        for h in list(root.handlers):
            if isinstance(h, logging.FileHandler):
                root.removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
