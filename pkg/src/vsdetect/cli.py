"""``vsd`` command-line interface.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 degenerate
training data.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import blood, pipeline
from .core import CHANNELS, FeatureChannel
from .dataset import load_split, read_feature_table, write_feature_table
from .errors import ConfigError, VsdError
from .fusion import DEFAULT_STEP, load_weights, save_weights
from .svm import load_classifier, save_classifier

logger = logging.getLogger("vsdetect")


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except VsdError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)


def _config(ctx) -> pipeline.PipelineConfig:
    return ctx.obj["config"]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


@click.group(cls=_Group)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON pipeline config.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=None, help="Worker threads for extraction and grid search.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, seed, workers, verbose):
    """Violent scene detection: feature extraction, channel SVMs and late fusion."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    config = pipeline.PipelineConfig.load(config_path) if config_path else pipeline.PipelineConfig()
    if seed is not None:
        config.seed = seed
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be at least 1")
        config.workers = workers
    ctx.obj = {"config": config}


@cli.command("build-blood-model")
@click.option("--blood-dir", required=True, type=click.Path(file_okay=False))
@click.option("--nonblood-dir", required=True, type=click.Path(file_okay=False))
@click.option("--extend-dir", type=click.Path(file_okay=False), help="Unlabeled images used to grow the blood model.")
@click.option("--out-blood", required=True, type=click.Path(dir_okay=False))
@click.option("--out-nonblood", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def build_blood_model(ctx, blood_dir, nonblood_dir, extend_dir, out_blood, out_nonblood):
    """Build blood and non-blood color models (VFBM files)."""
    config = _config(ctx)
    bm, nm = pipeline.build_blood_models(blood_dir, nonblood_dir, extend_dir, config)
    blood.save_model(bm, out_blood)
    blood.save_model(nm, out_nonblood)
    _write_json(
        Path(out_blood).with_suffix(".meta.json"),
        config.provenance(blood_total=bm.total, nonblood_total=nm.total),
    )
    click.echo(f"blood model: {bm.total} pixels -> {out_blood}")
    click.echo(f"non-blood model: {nm.total} pixels -> {out_nonblood}")


@cli.command()
@click.argument("videos", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--blood-model", type=click.Path(dir_okay=False, exists=True))
@click.option("--nonblood-model", type=click.Path(dir_okay=False, exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def extract(ctx, videos, blood_model, nonblood_model, out):
    """Extract per-second features from video directories into a JSONL table."""
    config = _config(ctx)
    bm = blood.load_model(blood_model) if blood_model else None
    nm = blood.load_model(nonblood_model) if nonblood_model else None
    dirs = pipeline.find_video_dirs(videos)
    if not dirs:
        raise VsdError("no video directories found")
    rows = pipeline.extract_corpus(dirs, bm, nm, config)
    write_feature_table(out, rows, config.provenance(videos=len(dirs)))
    incomplete = sum(not r.complete for r in rows)
    click.echo(f"{len(rows)} segments from {len(dirs)} videos ({incomplete} incomplete) -> {out}")
    if rows and incomplete == len(rows):
        click.echo("error: every row is missing at least one channel", err=True)
        ctx.exit(3)


@cli.command()
@click.argument("table", type=click.Path(dir_okay=False, exists=True))
@click.option("--split", "split_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def train(ctx, table, split_path, out_dir):
    """Train one calibrated SVM per channel."""
    config = _config(ctx)
    _, rows = read_feature_table(table)
    result = pipeline.train_classifiers(rows, load_split(split_path), config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ch, clf in result.classifiers.items():
        save_classifier(clf, out / f"{ch.value}.json")
        sel = result.report["channels"][ch.value]["selected"]
        click.echo(f"{ch.value}: {clf.kernel} C={clf.C:g} validation EER={sel['validation_eer']:.4f}")
    _write_json(out / "report.json", result.report)


def _load_classifiers(directory) -> dict[FeatureChannel, object]:
    directory = Path(directory)
    out = {}
    for ch in CHANNELS:
        path = directory / f"{ch.value}.json"
        if not path.is_file():
            raise VsdError(f"missing classifier {path}")
        out[ch] = load_classifier(path)
    return out


def _select_rows(rows, split_path, part):
    if split_path is None:
        return rows
    ids = set(load_split(split_path).part(part))
    return [r for r in rows if r.video_id in ids]


@cli.command("fuse-search")
@click.argument("table", type=click.Path(dir_okay=False, exists=True))
@click.option("--classifiers", "clf_dir", required=True, type=click.Path(file_okay=False, exists=True))
@click.option("--split", "split_path", type=click.Path(dir_okay=False, exists=True))
@click.option("--part", default="validation", show_default=True, help="Split part used for the search.")
@click.option("--step", type=float, default=None, help=f"Grid step (default from config, {DEFAULT_STEP}).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def fuse_search(ctx, table, clf_dir, split_path, part, step, out):
    """Search per-class fusion weights minimizing EER."""
    config = _config(ctx)
    if step is not None:
        config.grid_step = step
    _, rows = read_feature_table(table)
    rows = _select_rows(rows, split_path, part)
    weights = pipeline.fusion_search(rows, _load_classifiers(clf_dir), {r.video_id for r in rows}, config, dataset_id=Path(table).name)
    save_weights(weights, out)
    for cls, rep in weights.report.items():
        eer = "skipped" if rep["skipped"] else f"EER={rep['eer']:.4f}"
        click.echo(f"{cls}: {rep['weights']} {eer} ({rep['tuples_evaluated']} tuples evaluated)")


@cli.command()
@click.argument("table", type=click.Path(dir_okay=False, exists=True))
@click.option("--classifiers", "clf_dir", required=True, type=click.Path(file_okay=False, exists=True))
@click.option("--weights", "weights_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--split", "split_path", type=click.Path(dir_okay=False, exists=True))
@click.option("--part", default="test", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def predict(ctx, table, clf_dir, weights_path, split_path, part, out):
    """Score every segment: per-class fused scores plus both decisions."""
    config = _config(ctx)
    _, rows = read_feature_table(table)
    rows = _select_rows(rows, split_path, part)
    records = pipeline.predict(rows, _load_classifiers(clf_dir), load_weights(weights_path))
    pipeline.write_predictions(out, records, config.provenance(weights=Path(weights_path).name))
    violent = sum(r.binary for r in records)
    click.echo(f"{len(records)} segments scored, {violent} violent -> {out}")


@cli.command()
@click.argument("predictions", type=click.Path(dir_okay=False, exists=True))
@click.option("--ground-truth", required=True, type=click.Path(dir_okay=False, exists=True), help="Labeled feature table.")
@click.option("--mode", type=click.Choice(["multiclass", "binary"]), default="multiclass", show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def evaluate(ctx, predictions, ground_truth, mode, out_dir):
    """Metrics JSON and ROC CSVs for a prediction file."""
    config = _config(ctx)
    _, records = pipeline.read_predictions(predictions)
    _, rows = read_feature_table(ground_truth)
    result, curves = pipeline.evaluate(records, rows, mode)
    result["provenance"] = config.provenance()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", result)
    for name, curve in curves.items():
        curve.to_csv(out / f"roc_{name}.csv")
    if mode == "binary":
        m = result["binary"]
        click.echo(f"binary: EER={m['eer']:.4f} AUC={m['auc']:.4f} P={m['precision']:.3f} R={m['recall']:.3f} Acc={m['accuracy']:.3f}")
    else:
        for cls, m in result["classes"].items():
            if m is not None:
                click.echo(f"{cls}: EER={m['eer']:.4f} AUC={m['auc']:.4f} AP={m['ap']:.3f}")


@cli.command()
@click.argument("root", type=click.Path(file_okay=False))
@click.option("--videos", "n_videos", type=int, default=200, show_default=True)
@click.pass_context
def synth(ctx, root, n_videos):
    """Write a synthetic corpus with planted class signals."""
    from .synthetic import SyntheticSpec, make_corpus

    paths = make_corpus(root, SyntheticSpec(n_videos=n_videos, seed=_config(ctx).seed))
    for k, v in paths.items():
        click.echo(f"{k}: {v}")


def main(argv=None):
    return cli.main(args=argv, prog_name="vsd")


if __name__ == "__main__":
    sys.exit(main())
