"""End-to-end workflow: blood models, extraction, training, fusion, prediction, evaluation.

The CLI is a thin wrapper over the functions here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import audio, blood, concepts, motion
from .core import (
    CHANNELS,
    VIOLENCE_CLASSES,
    FeatureChannel,
    SegmentScoreRecord,
    ViolenceClass,
    label_segments,
    segmentize,
    violent_segments,
)
from .dataset import FeatureRow, SplitSpec, balanced_sample, parse_annotations
from .errors import ConfigError, DegenerateDataError, FormatError, IncompleteInputError, VsdError
from .fusion import FusionWeights, decide_binary, decide_label, fuse, weight_search
from .metrics import RocCurve, average_precision, roc, threshold_metrics
from .ppm import read_ppm
from .svm import KernelKind, KernelSpec, TrainConfig, TrainedClassifier, default_grid, kernel_grid_search

logger = logging.getLogger(__name__)

VIDEO_MANIFEST = "video.json"
FRAMES_DIR = "frames"
AUDIO_FILE = "audio.wav"
MOTION_FILE = "motion.csv"
CONCEPTS_FILE = "concepts.jsonl"
ANNOTATIONS_FILE = "annotations.txt"


@dataclass
class PipelineConfig:
    fps: float = 25.0
    mfcc: audio.MfccConfig = field(default_factory=audio.MfccConfig)
    blood_threshold: float = blood.DEFAULT_BINARIZE_THRESHOLD
    accept_threshold: float = blood.DEFAULT_ACCEPT_THRESHOLD
    blood_model_target: int = blood.TARGET_MODEL_PIXELS
    grid_step: float = 0.05
    svm_c_values: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    svm_gammas: tuple[float, ...] | None = None  # None: (1/D, 0.1, 1)
    svm_kernels: tuple[str, ...] = ("linear", "rbf", "chi_square")
    svm_tolerance: float = 1e-3
    svm_max_passes: int = 1000
    scale_features: bool = True
    n_train: int = 2000
    n_test: int = 3000
    seed: int = 0
    workers: int = 1
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "mfcc" in kwargs:
            kwargs["mfcc"] = audio.MfccConfig(**kwargs["mfcc"])
        for key in ("svm_c_values", "svm_gammas", "svm_kernels"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except (TypeError, VsdError) as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["mfcc"]["window"] = self.mfcc.window.value
        return out

    def config_hash(self) -> str:
        """Hash of everything that can change outputs (worker count excluded)."""
        obj = self.to_json()
        obj.pop("workers")
        obj.pop("paths")
        return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]

    def provenance(self, **extra) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, **extra}

    def train_config(self) -> TrainConfig:
        return TrainConfig(tolerance=self.svm_tolerance, max_passes=self.svm_max_passes, seed=self.seed)

    def grid_for(self, dim: int, allow_chi_square: bool) -> list[tuple[KernelSpec, float]]:
        kinds = {KernelKind(k) for k in self.svm_kernels}
        if self.svm_gammas is None:
            cells = default_grid(dim, allow_chi_square=allow_chi_square, c_values=self.svm_c_values)
        else:
            kernels = [KernelSpec.linear()]
            kernels += [KernelSpec.rbf(g) for g in self.svm_gammas]
            if allow_chi_square:
                kernels += [KernelSpec.chi_square(g) for g in self.svm_gammas]
            cells = [(k, float(c)) for k in kernels for c in self.svm_c_values]
        return [(k, c) for k, c in cells if k.kind in kinds]


def _map(func, items, workers: int):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


# ---------------------------------------------------------------- blood models


def list_images(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise VsdError(f"corpus directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".ppm")


def _corpus_model(directory) -> blood.ColorModel3D:
    paths = list_images(directory)
    if not paths:
        raise VsdError(f"empty corpus: no .ppm images in {directory}")
    model = blood.ColorModel3D.empty()
    for p in paths:
        model = model.add(read_ppm(p))
    return model


def build_blood_models(
    blood_dir, nonblood_dir, extend_dir=None, config: PipelineConfig | None = None
) -> tuple[blood.ColorModel3D, blood.ColorModel3D]:
    """Bootstrap both color models; optionally grow the blood model from ``extend_dir``."""
    config = config or PipelineConfig()
    blood_model = _corpus_model(blood_dir)
    nonblood_model = _corpus_model(nonblood_dir)
    if extend_dir is not None:
        blood_model = blood.extend_model(
            blood_model,
            blood_model,
            nonblood_model,
            list_images(extend_dir),
            accept_threshold=config.accept_threshold,
            target_total=config.blood_model_target,
        )
    return blood_model, nonblood_model


# ------------------------------------------------------------------ extraction


@dataclass
class VideoInfo:
    video_id: str
    fps: float
    frame_count: int
    width: int | None = None
    height: int | None = None


def read_video_info(video_dir: Path) -> VideoInfo:
    manifest = video_dir / VIDEO_MANIFEST
    try:
        obj = json.loads(manifest.read_text(encoding="utf-8"))
        return VideoInfo(
            video_id=str(obj.get("video_id", video_dir.name)),
            fps=float(obj["fps"]),
            frame_count=int(obj["frame_count"]),
            width=obj.get("width"),
            height=obj.get("height"),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VsdError(f"bad video manifest {manifest}: {exc}") from None


def find_video_dirs(paths: Iterable[str | os.PathLike]) -> list[Path]:
    """Video directories among ``paths``; a path without a manifest is searched one level down."""
    out = []
    for p in map(Path, paths):
        if (p / VIDEO_MANIFEST).is_file():
            out.append(p)
        elif p.is_dir():
            out.extend(sorted(c for c in p.iterdir() if (c / VIDEO_MANIFEST).is_file()))
        else:
            raise VsdError(f"{p} is not a video directory")
    return out


def _frame_files(video_dir: Path) -> dict[int, Path]:
    frames_dir = video_dir / FRAMES_DIR
    if not frames_dir.is_dir():
        return {}
    out = {}
    for p in frames_dir.iterdir():
        if p.suffix.lower() == ".ppm" and p.stem.isdigit():
            out[int(p.stem)] = p
    return out


def extract_video(
    video_dir: str | os.PathLike,
    blood_model: blood.ColorModel3D | None,
    nonblood_model: blood.ColorModel3D | None,
    config: PipelineConfig,
) -> list[FeatureRow]:
    """Feature rows for every one-second segment of one video directory.

    A missing input file leaves that channel out of every row (with a
    warning) instead of failing the video.
    """
    video_dir = Path(video_dir)
    info = read_video_info(video_dir)
    segments = segmentize(info.frame_count, info.fps, info.video_id)

    ann_path = video_dir / ANNOTATIONS_FILE
    annotations = parse_annotations(ann_path) if ann_path.is_file() else []
    labels = label_segments(segments, annotations)
    violent = violent_segments(segments, annotations)
    rows = [
        FeatureRow(s.video_id, s.index, s.start_frame, s.end_frame, {}, lab, v)
        for (s, lab), v in zip(labels, violent)
    ]

    frames = _frame_files(video_dir)
    width, height = info.width, info.height
    if frames and (width is None or height is None):
        h, w = read_ppm(frames[min(frames)]).shape[:2]
        width, height = w, h

    if not frames:
        logger.warning("%s: no frames; blood channel missing", info.video_id)
    elif blood_model is None or nonblood_model is None:
        logger.warning("%s: no blood models given; blood channel missing", info.video_id)
    else:
        table = blood.probability_table(blood_model, nonblood_model)
        for row, seg in zip(rows, segments):
            idx = next((f for f in seg.frames() if f in frames), None)
            if idx is None:
                continue
            vec = blood.blood_feature(read_ppm(frames[idx]), blood_model, nonblood_model, config.blood_threshold, table=table)
            row.features[FeatureChannel.BLOOD] = vec.values

    wav = video_dir / AUDIO_FILE
    if wav.is_file():
        track = audio.read_wav(wav)
        vectors = np.array([v.values for v in audio.mfcc_track(track, info.fps, config.mfcc)])
        for row, seg in zip(rows, segments):
            if seg.end_frame <= len(vectors):
                row.features[FeatureChannel.AUDIO] = vectors[seg.start_frame : seg.end_frame].mean(axis=0)
    else:
        logger.warning("%s: no %s; audio channel missing", info.video_id, AUDIO_FILE)

    sidecar = video_dir / MOTION_FILE
    if sidecar.is_file() and width and height:
        vectors_by_frame = motion.parse_sidecar(sidecar)
        for row, seg in zip(rows, segments):
            row.features[FeatureChannel.MOTION] = motion.segment_motion_feature(
                vectors_by_frame, seg, int(width), int(height)
            ).values
    else:
        logger.warning("%s: no motion sidecar or frame size; motion channel missing", info.video_id)

    cpath = video_dir / CONCEPTS_FILE
    if cpath.is_file():
        cmap = concepts.load_concepts(cpath)
        for row, seg in zip(rows, segments):
            try:
                row.features[FeatureChannel.CONCEPTS] = concepts.segment_concept_feature(cmap, seg).values
            except LookupError:
                pass
    else:
        logger.warning("%s: no %s; concepts channel missing", info.video_id, CONCEPTS_FILE)
    return rows


def extract_corpus(video_dirs: Sequence, blood_model, nonblood_model, config: PipelineConfig) -> list[FeatureRow]:
    per_video = _map(lambda d: extract_video(d, blood_model, nonblood_model, config), video_dirs, config.workers)
    return [row for rows in per_video for row in rows]


# -------------------------------------------------------------------- training


@dataclass
class TrainingResult:
    classifiers: dict[FeatureChannel, TrainedClassifier]
    report: dict


def train_classifiers(rows: Sequence[FeatureRow], split: SplitSpec, config: PipelineConfig) -> TrainingResult:
    """One grid-searched SVM per channel on a balanced sample of complete rows."""
    complete = [r for r in rows if r.complete]
    if not complete:
        raise DegenerateDataError("no complete feature rows to train on")
    if all(r.violent for r in complete) or not any(r.violent for r in complete):
        raise DegenerateDataError("training table contains a single class")
    train_set, val_set = balanced_sample(
        complete, split.train_ids, split.validation_ids, config.n_train, config.n_test, config.seed
    )
    y_train = np.where(train_set.labels, 1.0, -1.0)
    y_val = np.where(val_set.labels, 1.0, -1.0)
    classifiers = {}
    report = {"provenance": config.provenance(), "n_train": len(train_set.entries), "n_validation": len(val_set.entries), "channels": {}}
    for channel in CHANNELS:
        x_train = train_set.matrix(channel)
        x_val = val_set.matrix(channel)
        nonneg = bool(np.all(x_train >= 0) and np.all(x_val >= 0)) and channel is not FeatureChannel.AUDIO
        # min-max scaling maps into [0, 1], so chi-square stays valid for any channel but audio
        allow_chi = channel is not FeatureChannel.AUDIO and (config.scale_features or nonneg)
        grid = config.grid_for(x_train.shape[1], allow_chi)
        clf, cells = kernel_grid_search(
            (x_train, y_train),
            (x_val, y_val),
            grid,
            config.train_config(),
            channel=channel,
            scale=config.scale_features,
            workers=config.workers,
        )
        best = min((c for c in cells if c.eer is not None), key=lambda c: c.eer)
        clf.meta.update(config.provenance(validation_eer=best.eer))
        classifiers[channel] = clf
        report["channels"][channel.value] = {
            "selected": {"kernel": clf.kernel.to_json(), "C": clf.C, "validation_eer": best.eer},
            "grid": [c.to_json() for c in cells],
        }
    return TrainingResult(classifiers, report)


# ---------------------------------------------------------------- fusion stage


def channel_probabilities(rows: Sequence[FeatureRow], classifiers: dict[FeatureChannel, TrainedClassifier]) -> np.ndarray:
    """``(n, 4)`` calibrated channel probabilities; NaN where a channel is missing."""
    out = np.full((len(rows), len(CHANNELS)), np.nan)
    for j, ch in enumerate(CHANNELS):
        idx = [i for i, r in enumerate(rows) if r.features.get(ch) is not None]
        if not idx:
            continue
        x = np.array([rows[i].features[ch] for i in idx])
        out[idx, j] = classifiers[ch].predict_proba(x)
    return out


def class_truth(rows: Sequence[FeatureRow]) -> dict[ViolenceClass, np.ndarray]:
    return {c: np.array([c in r.labels for r in rows], dtype=bool) for c in VIOLENCE_CLASSES}


def fusion_search(
    rows: Sequence[FeatureRow],
    classifiers: dict[FeatureChannel, TrainedClassifier],
    video_ids: Iterable[str],
    config: PipelineConfig,
    dataset_id: str = "",
) -> FusionWeights:
    ids = set(video_ids)
    subset = [r for r in rows if r.video_id in ids and r.complete]
    if not subset:
        raise DegenerateDataError("no complete rows for weight search")
    scores = channel_probabilities(subset, classifiers)
    return weight_search(
        scores,
        class_truth(subset),
        config.grid_step,
        provenance=config.provenance(dataset=dataset_id, segments=len(subset)),
    )


# ------------------------------------------------------------------ prediction


def predict(
    rows: Sequence[FeatureRow],
    classifiers: dict[FeatureChannel, TrainedClassifier],
    weights: FusionWeights,
) -> list[SegmentScoreRecord]:
    usable = [r for r in rows if r.complete]
    if len(usable) < len(rows):
        logger.warning("skipping %d incomplete rows", len(rows) - len(usable))
    if not usable:
        raise IncompleteInputError("no complete rows to score")
    probs = channel_probabilities(usable, classifiers)
    records = []
    for row, p in zip(usable, probs):
        per_class = {c: fuse(p, weights[c]) for c in VIOLENCE_CLASSES}
        records.append(
            SegmentScoreRecord(
                segment=row.segment,
                class_scores=per_class,
                label=decide_label(per_class),
                binary=decide_binary(per_class),
            )
        )
    return records


def write_predictions(path, records: Sequence[SegmentScoreRecord], meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_predictions(path) -> tuple[dict, list[SegmentScoreRecord]]:
    meta: dict = {}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if "_meta" in obj:
                    meta = obj["_meta"]
                    continue
                out.append(SegmentScoreRecord.from_json(obj))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad prediction row: {exc}", path=path, line=lineno) from None
    return meta, out


# ------------------------------------------------------------------ evaluation


def _metrics_block(scores: np.ndarray, truth: np.ndarray) -> tuple[dict, RocCurve]:
    curve = roc(scores, truth)
    tm = threshold_metrics(scores, truth, 0.5)
    return (
        {
            "auc": curve.auc,
            "eer": curve.eer,
            "precision": tm.precision,
            "recall": tm.recall,
            "accuracy": tm.accuracy,
            "ap": average_precision(scores, truth),
            "ap_at_100": average_precision(scores, truth, cutoff=100),
            "positives": int(truth.sum()),
            "negatives": int((~truth).sum()),
        },
        curve,
    )


def evaluate(records: Sequence[SegmentScoreRecord], rows: Sequence[FeatureRow], mode: str = "multiclass") -> tuple[dict, dict[str, RocCurve]]:
    """Metrics and ROC curves of predictions against a labeled feature table.

    ``multiclass`` gives one curve per class that has both labels in the
    ground truth; ``binary`` scores each segment by its top class score
    against the violent/non-violent ground truth.
    """
    truth_rows = {r.key: r for r in rows}
    matched = [(rec, truth_rows[(rec.segment.video_id, rec.segment.index)]) for rec in records
               if (rec.segment.video_id, rec.segment.index) in truth_rows]
    if len(matched) < len(records):
        logger.warning("%d predictions have no ground truth", len(records) - len(matched))
    if not matched:
        raise VsdError("no predictions match the ground truth table")
    curves: dict[str, RocCurve] = {}
    result: dict = {"mode": mode, "segments": len(matched)}
    if mode == "multiclass":
        per_class = {}
        for cls in VIOLENCE_CLASSES:
            scores = np.array([rec.class_scores[cls] for rec, _ in matched])
            truth = np.array([cls in row.labels for _, row in matched])
            if truth.all() or not truth.any():
                per_class[cls.value] = None
                continue
            per_class[cls.value], curves[cls.value] = _metrics_block(scores, truth)
        result["classes"] = per_class
        pred_labels = [rec.label for rec, _ in matched]
        result["label_counts"] = {lab: pred_labels.count(lab) for lab in sorted(set(pred_labels))}
    elif mode == "binary":
        scores = np.array([max(rec.class_scores.values()) for rec, _ in matched])
        truth = np.array([row.violent for _, row in matched])
        if truth.all() or not truth.any():
            raise DegenerateDataError("binary ground truth has a single label")
        result["binary"], curves["binary"] = _metrics_block(scores, truth)
    else:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    return result, curves
