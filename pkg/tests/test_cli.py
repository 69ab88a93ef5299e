"""End-to-end tests for the command-line pipeline.

These drive ``vocscan.cli.main`` in process on a miniature synthetic
corpus: 6 samples of 1200 rows x 12 channels with 3 target compounds.
Heavy stages share module-scoped fixtures so the pipeline runs once.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from vocscan import load_dataset, load_model, parse_detections, parse_manifest
from vocscan.cli import main

GEN_ARGS = [
    "--train", "4",
    "--test", "2",
    "--templates", "3",
    "--rows", "1200",
    "--channels", "12",
    "--shifts", "4",
    "--intensity-variants", "1",
    "--seed", "7",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen", "--out", str(out), *GEN_ARGS]) == 0
    return out


@pytest.fixture(scope="module")
def dataset_path(corpus):
    path = corpus / "train.npz"
    rc = main(["extract", "--manifest", str(corpus / "manifest.json"), "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def model_path(corpus, dataset_path):
    path = corpus / "centroid.npz"
    rc = main([
        "train",
        "--manifest", str(corpus / "manifest.json"),
        "--dataset", str(dataset_path),
        "--out", str(path),
        "--kind", "centroid",
    ])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def detections_dir(corpus, model_path):
    out = corpus / "det"
    rc = main([
        "detect",
        "--manifest", str(corpus / "manifest.json"),
        "--model", str(model_path),
        "--out-dir", str(out),
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def report_path(corpus, detections_dir):
    path = corpus / "report.json"
    rc = main([
        "eval",
        "--manifest", str(corpus / "manifest.json"),
        "--detections-dir", str(detections_dir),
        "--out", str(path),
    ])
    assert rc == 0
    return path


# ---------------------------------------------------------------------------
# gen


class TestGen:
    def test_writes_samples_and_manifest(self, corpus):
        manifest = parse_manifest(corpus / "manifest.json")
        assert manifest.n_targets == 3
        assert len(manifest.split_samples("train")) == 4
        assert len(manifest.split_samples("test")) == 2
        for entry in manifest.samples:
            assert (corpus / entry.matrix_path).exists()
            assert (corpus / entry.annotation_path).exists()

    def test_voc_table_names_cover_labels(self, corpus):
        manifest = parse_manifest(corpus / "manifest.json")
        assert sorted(v.label for v in manifest.voc_table) == [1, 2, 3]
        assert all(v.name for v in manifest.voc_table)

    def test_rerun_is_byte_identical(self, corpus, tmp_path):
        assert main(["gen", "--out", str(tmp_path), *GEN_ARGS]) == 0
        for name in ("manifest.json", "train_000.csv", "train_000.ann.csv", "test_001.csv"):
            assert (tmp_path / name).read_bytes() == (corpus / name).read_bytes()

    def test_seed_changes_samples(self, tmp_path):
        args = [a for a in GEN_ARGS if a != "7"]
        args[args.index("--seed") + 1 - 1 :] = []  # drop trailing --seed flag
        rc = main(["gen", "--out", str(tmp_path), *args, "--seed", "8",
                   ])
        assert rc == 0
        manifest = parse_manifest(tmp_path / "manifest.json")
        assert manifest.params.seed == 8

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VOCSCAN_OUT", str(tmp_path / "envout"))
        rc = main(["gen", "--train", "1", "--test", "0", "--templates", "2",
                   "--rows", "600", "--channels", "8", "--seed", "3"])
        assert rc == 0
        assert (tmp_path / "envout" / "manifest.json").exists()

    def test_missing_out_dir_errors(self, monkeypatch, capsys):
        monkeypatch.delenv("VOCSCAN_OUT", raising=False)
        rc = main(["gen", "--train", "1", "--test", "0"])
        assert rc == 1
        diagnostic = json.loads(capsys.readouterr().err)
        assert "--out" in diagnostic["detail"]


# ---------------------------------------------------------------------------
# extract / train


class TestExtractTrain:
    def test_dataset_contents(self, dataset_path):
        dataset = load_dataset(dataset_path)
        assert len(dataset) > 0
        assert set(dataset.class_counts) <= {0, 1, 2, 3}
        # default negative ratio 1.0: one background window per compound window
        positives = sum(v for k, v in dataset.class_counts.items() if k > 0)
        assert dataset.class_counts[0] == positives
        assert dataset.points[0].values.shape == (80, 12)

    def test_centroid_model_loads(self, model_path):
        model = load_model(model_path)
        assert model.meta.kind == "centroid"
        assert model.meta.n_classes == 4

    def test_convnet_training_runs(self, corpus, dataset_path, tmp_path):
        path = tmp_path / "convnet.npz"
        rc = main([
            "train",
            "--manifest", str(corpus / "manifest.json"),
            "--dataset", str(dataset_path),
            "--out", str(path),
            "--kind", "convnet",
            "--blocks", "4,3,2;8,3,2",
            "--dense", "8",
            "--epochs", "2",
            "--batch-size", "32",
        ])
        assert rc == 0
        model = load_model(path)
        assert model.meta.kind == "convnet"
        assert model.train_accuracy is not None
        assert 0.0 <= model.train_accuracy <= 1.0

    def test_bad_blocks_spec_errors(self, corpus, dataset_path, tmp_path, capsys):
        rc = main([
            "train",
            "--manifest", str(corpus / "manifest.json"),
            "--dataset", str(dataset_path),
            "--out", str(tmp_path / "m.npz"),
            "--blocks", "4,3",
        ])
        assert rc == 1
        diagnostic = json.loads(capsys.readouterr().err)
        assert "filters,kernel,pool" in diagnostic["detail"]


# ---------------------------------------------------------------------------
# scan / detect


class TestScanDetect:
    def test_scan_dump_has_one_row_per_window(self, corpus, model_path, tmp_path):
        rc = main([
            "scan",
            "--manifest", str(corpus / "manifest.json"),
            "--model", str(model_path),
            "--out-dir", str(tmp_path),
            "--sample", "test_000",
        ])
        assert rc == 0
        lines = (tmp_path / "test_000.scan.csv").read_text().splitlines()
        assert lines[0] == "index,rt,label,confidence"
        assert len(lines) - 1 == 1200 - 80 + 1
        first = lines[1].split(",")
        assert first[0] == "0"
        assert int(first[2]) >= 0
        assert 0.0 <= float(first[3]) <= 1.0

    def test_detect_outputs(self, corpus, detections_dir):
        manifest = parse_manifest(corpus / "manifest.json")
        for entry in manifest.split_samples("test"):
            final = parse_detections(detections_dir / f"{entry.sample_id}.detections.csv")
            prefilter = parse_detections(detections_dir / f"{entry.sample_id}.prefilter.csv")
            assert len(prefilter) >= len(final)
            labels = [d.label for d in final]
            assert len(labels) == len(set(labels))  # uniqueness rule applied
            for d in final:
                assert d.sample_id == entry.sample_id

    def test_timings_sidecar(self, detections_dir):
        timings = json.loads((detections_dir / "timings.json").read_text())
        assert sorted(timings) == ["test_000", "test_001"]
        for entry in timings.values():
            assert entry["windows"] == 1200 - 80 + 1
            assert entry["scan_seconds"] > 0
            assert entry["rt_span_minutes"] == pytest.approx(1199 / 375)

    def test_detect_rerun_matches_except_timings(self, corpus, model_path, detections_dir, tmp_path):
        rc = main([
            "detect",
            "--manifest", str(corpus / "manifest.json"),
            "--model", str(model_path),
            "--out-dir", str(tmp_path),
            "--workers", "3",
            "--batch-size", "64",
        ])
        assert rc == 0
        for name in ("test_000.detections.csv", "test_000.prefilter.csv",
                     "test_001.detections.csv", "test_001.prefilter.csv"):
            assert (tmp_path / name).read_bytes() == (detections_dir / name).read_bytes()

    def test_json_format(self, corpus, model_path, tmp_path):
        rc = main([
            "detect",
            "--manifest", str(corpus / "manifest.json"),
            "--model", str(model_path),
            "--out-dir", str(tmp_path),
            "--sample", "test_000",
            "--format", "json",
        ])
        assert rc == 0
        detections = parse_detections(tmp_path / "test_000.detections.json")
        reference = parse_detections(corpus / "det" / "test_000.detections.csv")
        assert detections == reference

    def test_unknown_sample_id_errors(self, corpus, model_path, tmp_path, capsys):
        rc = main([
            "detect",
            "--manifest", str(corpus / "manifest.json"),
            "--model", str(model_path),
            "--out-dir", str(tmp_path),
            "--sample", "nope",
        ])
        assert rc == 1
        diagnostic = json.loads(capsys.readouterr().err)
        assert "nope" in diagnostic["detail"]


# ---------------------------------------------------------------------------
# eval / report


class TestEvalReport:
    def test_report_json_shape(self, report_path):
        report = json.loads(report_path.read_text())
        for key in ("tallies", "ap", "mean_ap", "sensitivity", "specificity",
                    "p_max", "per_sample"):
            assert key in report
        assert sorted(report["tallies"]) == sorted(
            ["tp", "ttp", "fp", "ttn", "fn", "tn", "fp_star", "ttp_star"])
        assert sorted(report["sensitivity"]) == ["corrected", "expert"]
        assert sorted(report["ap"]) == ["1", "2", "3"]
        assert len(report["per_sample"]) == 2

    def test_tallies_are_consistent(self, report_path, corpus):
        tallies = json.loads(report_path.read_text())["tallies"]
        annotated = 0
        for name in ("test_000", "test_001"):
            annotated += len((corpus / f"{name}.ann.csv").read_text().splitlines()) - 1
        # every annotation lands in exactly one verification bucket
        assert tallies["tp"] + tallies["ttn"] + tallies["fn"] == annotated

    def test_render_uses_compound_names(self, report_path, corpus, capsys):
        rc = main(["report", "--report", str(report_path),
                   "--manifest", str(corpus / "manifest.json")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "detection tallies" in out
        assert "synthetic-01" in out
        assert "sensitivity" in out

    def test_render_without_manifest(self, report_path, capsys):
        rc = main(["report", "--report", str(report_path)])
        assert rc == 0
        assert "label 1" in capsys.readouterr().out

    def test_eval_before_detect_errors(self, corpus, tmp_path, capsys):
        rc = main([
            "eval",
            "--manifest", str(corpus / "manifest.json"),
            "--detections-dir", str(tmp_path),
            "--out", str(tmp_path / "report.json"),
        ])
        assert rc == 1
        diagnostic = json.loads(capsys.readouterr().err)
        assert "missing detection file" in diagnostic["detail"]

    def test_missing_manifest_errors(self, tmp_path, capsys):
        rc = main(["extract", "--manifest", str(tmp_path / "none.json"),
                   "--out", str(tmp_path / "d.npz")])
        assert rc == 1
        diagnostic = json.loads(capsys.readouterr().err)
        assert diagnostic["error"] == "FileNotFoundError"
