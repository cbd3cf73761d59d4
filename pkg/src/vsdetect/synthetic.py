"""Synthetic corpora with planted per-class channel signals.

Used by the end-to-end tests and the ``vsd synth`` command. Four classes
carry a signal in exactly one channel:

* Gunshots: broadband noise bursts instead of low-passed background audio
* Blood: a dark-red blob in the frame
* Fights: large codec motion vectors
* Fire: elevated concept scores in the first concept dimensions

Every other segment is background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioTrack, write_wav
from .core import Annotation, ViolenceClass
from .dataset import SplitSpec, write_annotations
from .motion import SIDECAR_HEADER
from .ppm import write_ppm

PLANTED_CLASSES = (
    ViolenceClass.GUNSHOTS,
    ViolenceClass.BLOOD,
    ViolenceClass.FIGHTS,
    ViolenceClass.FIRE,
)


@dataclass(frozen=True)
class SyntheticSpec:
    n_videos: int = 200
    seconds: int = 10
    fps: int = 25
    width: int = 32
    height: int = 24
    sample_rate: int = 8000
    concept_dim: int = 8
    block: int = 8
    violent_fraction: float = 0.4
    seed: int = 0


def _background_color(rng) -> np.ndarray:
    # greens, blues, greys and skin-ish tones; never saturated dark red
    palette = np.array(
        [[40, 120, 40], [60, 90, 160], [128, 128, 128], [200, 170, 140], [90, 70, 50], [220, 220, 230]]
    )
    return palette[rng.integers(len(palette))] + rng.integers(-15, 16, size=3)


def blood_color(rng, n: int = 1) -> np.ndarray:
    r = rng.integers(120, 200, size=n)
    g = rng.integers(0, 24, size=n)
    b = rng.integers(0, 24, size=n)
    return np.stack([r, g, b], axis=-1)


def _frame(rng, spec: SyntheticSpec, bloody: bool) -> np.ndarray:
    img = np.empty((spec.height, spec.width, 3), dtype=np.int64)
    img[:] = _background_color(rng)
    # a second background patch for texture
    y0, x0 = rng.integers(0, spec.height // 2), rng.integers(0, spec.width // 2)
    img[y0 : y0 + spec.height // 3, x0 : x0 + spec.width // 3] = _background_color(rng)
    img += rng.integers(-6, 7, size=img.shape)
    if bloody:
        bh = rng.integers(spec.height // 3, spec.height * 2 // 3 + 1)
        bw = rng.integers(spec.width // 3, spec.width * 2 // 3 + 1)
        y, x = rng.integers(0, spec.height - bh + 1), rng.integers(0, spec.width - bw + 1)
        img[y : y + bh, x : x + bw] = blood_color(rng, bh * bw).reshape(bh, bw, 3)
    return np.clip(img, 0, 255).astype(np.uint8)


def _audio_second(rng, spec: SyntheticSpec, gunshot: bool) -> np.ndarray:
    n = spec.sample_rate
    white = rng.standard_normal(n)
    if gunshot:
        env = np.zeros(n)
        for start in rng.integers(0, n - n // 8, size=4):
            length = n // 10
            env[start : start + length] += np.exp(-np.arange(length) / (length / 4))
        sig = 0.6 * white * np.clip(env, 0, 1) + 0.02 * white
    else:
        # smoothed noise plus a low tone: energy concentrated below ~500 Hz
        kernel = np.ones(24) / 24
        low = np.convolve(white, kernel, mode="same")
        t = np.arange(n) / spec.sample_rate
        sig = 0.3 * low + 0.05 * np.sin(2 * np.pi * rng.uniform(100, 300) * t)
    return np.clip(sig, -1, 1)


def _motion_rows(rng, spec: SyntheticSpec, frame_idx: int, fighting: bool):
    rows = []
    for by in range(0, spec.height, spec.block):
        for bx in range(0, spec.width, spec.block):
            scale = 6.0 if fighting else 0.6
            dx, dy = rng.normal(0, scale, size=2)
            rows.append(
                f"{frame_idx},{bx + spec.block // 2},{by + spec.block // 2},{dx:.4f},{dy:.4f},{spec.block},{spec.block}"
            )
    return rows


def _concepts(rng, spec: SyntheticSpec, fire: bool) -> list[float]:
    scores = rng.uniform(0.0, 0.5, size=spec.concept_dim)
    if fire:
        scores[:3] = rng.uniform(0.6, 1.0, size=3)
    return [round(float(s), 6) for s in scores]


def _plan(rng, spec: SyntheticSpec) -> list[ViolenceClass | None]:
    """Per-second class plan: violent runs of 1-3 seconds, one planted class each."""
    plan: list[ViolenceClass | None] = [None] * spec.seconds
    target = int(round(spec.violent_fraction * spec.seconds))
    attempts = 0
    while sum(p is not None for p in plan) < target and attempts < 100:
        attempts += 1
        length = int(rng.integers(1, 4))
        start = int(rng.integers(0, spec.seconds - length + 1))
        if any(plan[s] is not None for s in range(start, start + length)):
            continue
        cls = PLANTED_CLASSES[int(rng.integers(len(PLANTED_CLASSES)))]
        for s in range(start, start + length):
            plan[s] = cls
    return plan


def _annotations(plan, fps: int) -> list[Annotation]:
    out = []
    s = 0
    while s < len(plan):
        cls = plan[s]
        if cls is None:
            s += 1
            continue
        e = s
        while e + 1 < len(plan) and plan[e + 1] == cls:
            e += 1
        out.append(Annotation(s * fps, (e + 1) * fps - 1, frozenset({cls})))
        s = e + 1
    return out


def write_video(root: Path, video_id: str, spec: SyntheticSpec, rng) -> list[ViolenceClass | None]:
    vdir = root / video_id
    (vdir / "frames").mkdir(parents=True, exist_ok=True)
    plan = _plan(rng, spec)
    frame_count = spec.seconds * spec.fps
    (vdir / "video.json").write_text(
        json.dumps({"video_id": video_id, "fps": spec.fps, "frame_count": frame_count, "width": spec.width, "height": spec.height})
    )
    write_annotations(vdir / "annotations.txt", _annotations(plan, spec.fps))

    samples = []
    motion_lines = [",".join(SIDECAR_HEADER)]
    concept_lines = []
    for sec, cls in enumerate(plan):
        first = sec * spec.fps
        write_ppm(vdir / "frames" / f"{first:06d}.ppm", _frame(rng, spec, cls is ViolenceClass.BLOOD))
        samples.append(_audio_second(rng, spec, cls is ViolenceClass.GUNSHOTS))
        for f in range(first, first + spec.fps):
            motion_lines += _motion_rows(rng, spec, f, cls is ViolenceClass.FIGHTS)
        concept_lines.append(json.dumps({"frame": first, "scores": _concepts(rng, spec, cls is ViolenceClass.FIRE)}))
    write_wav(vdir / "audio.wav", AudioTrack(spec.sample_rate, np.concatenate(samples)))
    (vdir / "motion.csv").write_text("\n".join(motion_lines) + "\n", encoding="utf-8")
    (vdir / "concepts.jsonl").write_text("\n".join(concept_lines) + "\n", encoding="utf-8")
    return plan


def write_color_corpora(root: Path, spec: SyntheticSpec, rng, n_images: int = 6) -> tuple[Path, Path, Path]:
    """Cropped blood patches, non-blood images and an unlabeled extension corpus."""
    dirs = [root / "blood", root / "nonblood", root / "extend"]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        write_ppm(dirs[0] / f"b{i:03d}.ppm", blood_color(rng, 400).reshape(20, 20, 3).astype(np.uint8))
        write_ppm(dirs[1] / f"n{i:03d}.ppm", _frame(rng, spec, False))
        write_ppm(dirs[2] / f"e{i:03d}.ppm", _frame(rng, spec, bool(i % 2)))
    return dirs[0], dirs[1], dirs[2]


def make_corpus(root: str | Path, spec: SyntheticSpec = SyntheticSpec()) -> dict:
    """Write videos, color corpora and a 50/30/20 train/validation/test split under ``root``."""
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    colors = write_color_corpora(root / "colors", spec, rng)
    videos = root / "videos"
    ids = []
    for v in range(spec.n_videos):
        vid = f"vid{v:04d}"
        write_video(videos, vid, spec, rng)
        ids.append(vid)
    n_train = spec.n_videos // 2
    n_val = spec.n_videos * 3 // 10
    split = SplitSpec(tuple(ids[:n_train]), tuple(ids[n_train : n_train + n_val]), tuple(ids[n_train + n_val :]))
    (root / "split.json").write_text(json.dumps(split.to_json(), indent=1))
    return {
        "videos": videos,
        "blood_dir": colors[0],
        "nonblood_dir": colors[1],
        "extend_dir": colors[2],
        "split": root / "split.json",
    }
