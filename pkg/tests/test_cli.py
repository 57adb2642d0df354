import filecmp
from pathlib import Path

import pytest

from imsbinary.cli import main

FAST = ["--k", "2", "--seed", "7", "--restarts", "5"]


def _tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "pipeline.log"
    }


@pytest.fixture(scope="module")
def synth_pair(tmp_path_factory):
    base = tmp_path_factory.mktemp("data")
    for name, seed in (("A", 1), ("B", 2)):
        assert main([
            "synth", str(base / name), "--name", name, "--width", "16", "--height", "16",
            "--planted", "8", "--noise-bins", "20", "--seed", str(seed),
        ]) == 0
    return base / "A", base / "B"


@pytest.fixture(scope="module")
def pipeline_out(synth_pair, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["pipeline", *map(str, synth_pair), "-o", str(out), *FAST]) == 0
    return out


def test_pipeline_layout(pipeline_out):
    for name in ("A", "B"):
        d = pipeline_out / name
        for f in ("clusters.tsv", "cluster.meta", "features.csv", "features.meta",
                  "dipps_map.tsv", "cluster_map.ppm", "dipps_map.ppm",
                  "binned/matrix.tsv", "smoothed/matrix.tsv"):
            assert (d / f).is_file(), f
    for f in ("jaccard.csv", "jaccard.ppm", "MANIFEST.tsv", "pipeline.log"):
        assert (pipeline_out / f).is_file()
    manifest = (pipeline_out / "MANIFEST.tsv").read_text().splitlines()
    assert manifest[0] == "dataset\tstage\tstatus\tdetail"
    assert all("\tcomplete\t" in line for line in manifest[1:])
    assert (pipeline_out / "jaccard.csv").read_text().splitlines()[0] == "dataset,A,B"


def test_standalone_stages_match_pipeline(synth_pair, pipeline_out, tmp_path):
    a = synth_pair[0]
    run = pipeline_out / "A"
    assert main(["bin", str(a), "-o", str(tmp_path / "binned")]) == 0
    assert _tree(tmp_path / "binned") == _tree(run / "binned")
    assert main(["smooth", str(run / "binned"), "-o", str(tmp_path / "smoothed")]) == 0
    assert _tree(tmp_path / "smoothed") == _tree(run / "smoothed")
    assert main(["cluster", str(run / "smoothed"), "-o", str(tmp_path / "c"), *FAST]) == 0
    assert filecmp.cmp(tmp_path / "c" / "clusters.tsv", run / "clusters.tsv", shallow=False)
    assert filecmp.cmp(tmp_path / "c" / "cluster.meta", run / "cluster.meta", shallow=False)
    assert main([
        "dipps", str(run / "smoothed"), "--clusters", str(run / "clusters.tsv"),
        "--annotation", str(a / "annotation.tsv"), "-o", str(tmp_path / "d"),
    ]) == 0
    for f in ("features.csv", "features.meta", "dipps_map.tsv"):
        assert filecmp.cmp(tmp_path / "d" / f, run / f, shallow=False), f
    assert main(["compare", str(run), str(pipeline_out / "B"), "-o", str(tmp_path / "cmp")]) == 0
    assert filecmp.cmp(tmp_path / "cmp" / "jaccard.csv", pipeline_out / "jaccard.csv", shallow=False)
    assert filecmp.cmp(tmp_path / "cmp" / "jaccard.ppm", pipeline_out / "jaccard.ppm", shallow=False)
    assert main(["render", "clusters", str(run / "clusters.tsv"), "-o", str(tmp_path / "c.ppm")]) == 0
    assert filecmp.cmp(tmp_path / "c.ppm", run / "cluster_map.ppm", shallow=False)
    assert main(["render", "dipps", str(run / "dipps_map.tsv"), "-o", str(tmp_path / "d.ppm")]) == 0
    assert filecmp.cmp(tmp_path / "d.ppm", run / "dipps_map.ppm", shallow=False)
    assert main(["ingest", str(a), "-o", str(tmp_path / "ing")]) == 0
    assert (tmp_path / "ing" / "peaks.tsv").read_bytes() == (a / "peaks.tsv").read_bytes()


def test_determinism(synth_pair, pipeline_out, tmp_path):
    assert main(["pipeline", *map(str, synth_pair), "-o", str(tmp_path), *FAST]) == 0
    assert _tree(tmp_path) == _tree(pipeline_out)


def test_usage_errors(synth_pair, tmp_path, capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["smooth", str(tmp_path), "-o", str(tmp_path / "x"), "--tau", "1/2"]) == 2
    assert main(["smooth", str(tmp_path), "-o", str(tmp_path / "x"), "--tau", "abc"]) == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    assert main(["--config", str(cfg), "pipeline", str(synth_pair[0]), "-o", str(tmp_path)]) == 2


def test_single_dataset_warns(synth_pair, tmp_path, capsys):
    assert main(["pipeline", str(synth_pair[0]), "-o", str(tmp_path), *FAST]) == 0
    assert not (tmp_path / "jaccard.csv").exists()
    assert "only one dataset" in capsys.readouterr().err
    assert "compare\tskipped" in (tmp_path / "MANIFEST.tsv").read_text()


def test_stage_failure_exit_and_manifest(synth_pair, tmp_path):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "dataset.meta").write_text("name=broken\nmz_min=1000\nmz_max=4500\n")
    (broken / "peaks.tsv").write_text("x\ty\tmz\tintensity\n0\t0\tnope\t1\n")
    out = tmp_path / "out"
    assert main(["pipeline", str(synth_pair[0]), str(broken), "-o", str(out), *FAST]) == 1
    manifest = (out / "MANIFEST.tsv").read_text()
    assert "ingest\tfailed" in manifest
    assert "A\trender\tcomplete" in manifest
    assert (out / "A" / "features.csv").exists()  # partial outputs are kept
    assert not (out / "jaccard.csv").exists()


def test_schema_mismatch(pipeline_out, tmp_path):
    import shutil

    src = tmp_path / "m"
    shutil.copytree(pipeline_out / "A" / "smoothed", src)
    meta = src / "matrix.meta"
    meta.write_text(meta.read_text().replace("imsbinary-matrix/1", "imsbinary-matrix/9"))
    assert main(["smooth", str(src), "-o", str(tmp_path / "o")]) == 1


def test_dipps_needs_subset(pipeline_out, tmp_path):
    run = pipeline_out / "A"
    args = ["dipps", str(run / "smoothed"), "--clusters", str(run / "clusters.tsv")]
    assert main([*args, "-o", str(tmp_path / "x")]) == 1
    assert main([*args, "--subset-cluster", "0", "-o", str(tmp_path / "y")]) == 0
    assert "cluster=0" in (tmp_path / "y" / "features.meta").read_text()


def test_config_file_and_flag_precedence(synth_pair, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("k=3\nseed=7\nrestarts=5\n")
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "pipeline", str(synth_pair[0]), "-o", str(out), "--k", "2"]) == 0
    meta = (out / "A" / "cluster.meta").read_text()
    assert "k=2" in meta and "seed=7" in meta


def test_tandem(synth_pair, tmp_path):
    out = tmp_path / "o"
    assert main(["pipeline", *map(str, synth_pair), "-o", str(out), "--tandem", *FAST]) == 0
    for name in ("A", "B"):
        assert (out / name / "tandem" / "features.csv").is_file()
        lines = (out / name / "merged_intervals.tsv").read_text().splitlines()
        assert lines[0] == "mz_low\tmz_high" and len(lines) > 1
        for line in lines[1:]:
            lo, hi = map(float, line.split("\t"))
            assert hi > lo
    assert (out / "tandem" / "binned").exists() is False
