import json
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from vsdetect import pipeline
from vsdetect.cli import cli
from vsdetect.core import CHANNELS, FeatureChannel
from vsdetect.dataset import load_split, read_feature_table
from vsdetect.errors import ConfigError, DegenerateDataError
from vsdetect.synthetic import SyntheticSpec, make_corpus

SMALL = {"n_train": 30, "n_test": 20, "svm_c_values": [1.0], "seed": 3}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(root, SyntheticSpec(n_videos=20, seed=3))


@pytest.fixture(scope="module")
def models(corpus):
    config = pipeline.PipelineConfig.from_json(SMALL)
    return pipeline.build_blood_models(corpus["blood_dir"], corpus["nonblood_dir"], corpus["extend_dir"], config)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        pipeline.PipelineConfig.from_json({"n_trian": 5})


def test_config_hash_ignores_workers():
    a = pipeline.PipelineConfig(workers=1)
    b = pipeline.PipelineConfig(workers=8)
    c = pipeline.PipelineConfig(seed=1)
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_config_json_round_trip():
    cfg = pipeline.PipelineConfig.from_json(dict(SMALL, svm_gammas=[0.5], mfcc={"n_coeffs": 12}))
    again = pipeline.PipelineConfig.from_json(cfg.to_json())
    assert again.config_hash() == cfg.config_hash()
    assert again.mfcc.n_coeffs == 12


def test_blood_models_grow_from_extension(corpus, models):
    bm, nbm = models
    base = pipeline._corpus_model(corpus["blood_dir"])
    assert bm.total > base.total
    assert nbm.total > 0


def test_extract_video_rows(corpus, models):
    config = pipeline.PipelineConfig.from_json(SMALL)
    vdir = sorted(corpus["videos"].iterdir())[0]
    rows = pipeline.extract_video(vdir, *models, config)
    assert len(rows) == 10
    assert all(r.complete for r in rows)
    assert rows[0].features[FeatureChannel.AUDIO].shape == (22,)
    assert rows[0].features[FeatureChannel.BLOOD].shape == (14,)
    assert rows[0].features[FeatureChannel.MOTION].shape == (24,)
    assert rows[0].features[FeatureChannel.CONCEPTS].shape == (8,)


def test_missing_input_leaves_channel_out(corpus, models, tmp_path, caplog):
    vdir = tmp_path / "v"
    shutil.copytree(sorted(corpus["videos"].iterdir())[0], vdir)
    (vdir / pipeline.MOTION_FILE).unlink()
    rows = pipeline.extract_video(vdir, *models, pipeline.PipelineConfig())
    assert all(FeatureChannel.MOTION not in r.features for r in rows)
    assert all(FeatureChannel.AUDIO in r.features for r in rows)
    assert "motion channel missing" in caplog.text


def test_full_pipeline_in_process(corpus, models):
    config = pipeline.PipelineConfig.from_json(SMALL)
    rows = pipeline.extract_corpus(pipeline.find_video_dirs([corpus["videos"]]), *models, config)
    split = load_split(corpus["split"])
    trained = pipeline.train_classifiers(rows, split, config)
    assert set(trained.classifiers) == set(CHANNELS)
    assert trained.report["n_train"] == 30
    weights = pipeline.fusion_search(rows, trained.classifiers, split.validation_ids, config)
    assert weights.report["Fire"]["tuples_evaluated"] == 1771
    test_rows = [r for r in rows if r.video_id in split.test_ids]
    records = pipeline.predict(test_rows, trained.classifiers, weights)
    assert len(records) == len(test_rows)
    result, curves = pipeline.evaluate(records, rows, "binary")
    assert set(curves) == {"binary"}
    assert 0.0 <= result["binary"]["eer"] <= 1.0


def test_training_needs_both_labels(corpus, models):
    config = pipeline.PipelineConfig.from_json(SMALL)
    vdir = sorted(corpus["videos"].iterdir())[0]
    rows = [r for r in pipeline.extract_video(vdir, *models, config) if not r.violent]
    with pytest.raises(DegenerateDataError):
        pipeline.train_classifiers(rows, load_split(corpus["split"]), config)


def test_channel_probabilities_mark_missing(corpus, models):
    config = pipeline.PipelineConfig.from_json(SMALL)
    rows = pipeline.extract_corpus(pipeline.find_video_dirs([corpus["videos"]]), *models, config)
    trained = pipeline.train_classifiers(rows, load_split(corpus["split"]), config)
    del rows[0].features[FeatureChannel.BLOOD]
    probs = pipeline.channel_probabilities(rows[:2], trained.classifiers)
    assert np.isnan(probs[0, 1]) and not np.isnan(probs[1]).any()
    assert np.all((probs[1] > 0) & (probs[1] < 1))


# ------------------------------------------------------------------ CLI


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def test_cli_stages(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    base = ["--config", cfg]
    r = invoke(*base, "build-blood-model", "--blood-dir", corpus["blood_dir"], "--nonblood-dir", corpus["nonblood_dir"],
               "--out-blood", tmp_path / "b.vfbm", "--out-nonblood", tmp_path / "n.vfbm")
    assert r.exit_code == 0, r.output
    manifest = json.loads((tmp_path / "b.meta.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_hash"]) == 16

    r = invoke(*base, "extract", corpus["videos"], "--blood-model", tmp_path / "b.vfbm",
               "--nonblood-model", tmp_path / "n.vfbm", "--out", tmp_path / "f.jsonl")
    assert r.exit_code == 0, r.output
    meta, rows = read_feature_table(tmp_path / "f.jsonl")
    assert meta["videos"] == 20 and len(rows) == 200

    r = invoke(*base, "train", tmp_path / "f.jsonl", "--split", corpus["split"], "--out-dir", tmp_path / "clf")
    assert r.exit_code == 0, r.output
    assert sorted(p.name for p in (tmp_path / "clf").iterdir()) == ["audio.json", "blood.json", "concepts.json", "motion.json", "report.json"]

    r = invoke(*base, "fuse-search", tmp_path / "f.jsonl", "--classifiers", tmp_path / "clf", "--split", corpus["split"],
               "--out", tmp_path / "w.json")
    assert r.exit_code == 0, r.output
    assert "1771 tuples evaluated" in r.output

    r = invoke(*base, "predict", tmp_path / "f.jsonl", "--classifiers", tmp_path / "clf", "--weights", tmp_path / "w.json",
               "--split", corpus["split"], "--out", tmp_path / "p.jsonl")
    assert r.exit_code == 0, r.output

    r = invoke("evaluate", tmp_path / "p.jsonl", "--ground-truth", tmp_path / "f.jsonl", "--out-dir", tmp_path / "ev")
    assert r.exit_code == 0, r.output
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    curves = sorted(p.name for p in (tmp_path / "ev").glob("roc_*.csv"))
    assert curves == sorted(f"roc_{c}.csv" for c, m in metrics["classes"].items() if m is not None)

    r = invoke("evaluate", tmp_path / "p.jsonl", "--ground-truth", tmp_path / "f.jsonl", "--mode", "binary",
               "--out-dir", tmp_path / "evb")
    assert r.exit_code == 0, r.output
    assert (tmp_path / "evb" / "roc_binary.csv").read_text().startswith("threshold,fpr,tpr\n")


def test_cli_exit_codes(corpus, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"bogus": 1}')
    assert invoke("--config", cfg, "synth", tmp_path / "x").exit_code == 2
    assert invoke("--workers", 0, "synth", tmp_path / "x").exit_code == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    r = invoke("build-blood-model", "--blood-dir", empty, "--nonblood-dir", empty,
               "--out-blood", tmp_path / "b", "--out-nonblood", tmp_path / "n")
    assert r.exit_code == 3
    assert "empty corpus" in r.output

    table = tmp_path / "f.jsonl"
    row = {"video_id": "a", "index": 0, "start_frame": 0, "end_frame": 25,
           "features": {c.value: [0.0] * 3 for c in CHANNELS}, "labels": [], "violent": False}
    table.write_text(json.dumps(row) + "\n")
    r = invoke("train", table, "--split", corpus["split"], "--out-dir", tmp_path / "c")
    assert r.exit_code == 4
