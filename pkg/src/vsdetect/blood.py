"""Blood detection from RGB color histograms.

Two 32x32x32 histograms (blood and non-blood) give, for every color bin, the
probability that a pixel of that color shows blood. Applying that ratio to a
frame yields a blood probability map, which is binarized and summarized into
a 14-value feature vector.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from .core import FeatureChannel, FeatureVector
from .errors import FormatError, InvalidArgumentError
from .ppm import read_ppm

logger = logging.getLogger(__name__)

BINS_PER_AXIS = 32
BIN_WIDTH = 8
N_BINS = BINS_PER_AXIS**3
DEFAULT_BINARIZE_THRESHOLD = 0.5
DEFAULT_ACCEPT_THRESHOLD = 0.9
TARGET_MODEL_PIXELS = 1_000_000

MODEL_MAGIC = b"VFBM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sBIQ")

FEATURE_NAMES = (
    "blood_ratio",
    "mean_probability",
    "probability_variance",
    "max_probability",
    "probability_ratio",
    "largest_component_area",
    "second_component_area",
    "component_density",
    "largest_bbox_fill",
    "largest_centroid_x",
    "largest_centroid_y",
    "largest_compactness",
    "row_ratio_variance",
    "column_ratio_variance",
)


def bin_of(pixel) -> tuple[int, int, int]:
    r, g, b = (int(c) for c in pixel)
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise InvalidArgumentError(f"color component {c} outside [0, 255]")
    return r // BIN_WIDTH, g // BIN_WIDTH, b // BIN_WIDTH


def _as_pixels(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.shape[-1] != 3:
        raise InvalidArgumentError(f"expected RGB data with a trailing axis of 3, got {arr.shape}")
    arr = arr.reshape(-1, 3)
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise InvalidArgumentError("color components must lie in [0, 255]")
        arr = arr.astype(np.int64)
    return arr


def _flat_bins(pixels: np.ndarray) -> np.ndarray:
    q = pixels.astype(np.int64) // BIN_WIDTH
    return (q[:, 0] * BINS_PER_AXIS + q[:, 1]) * BINS_PER_AXIS + q[:, 2]


@dataclass(frozen=True, eq=False)
class ColorModel3D:
    """Normalized RGB histogram with 32 bins of width 8 per axis."""

    counts: np.ndarray
    total: int = field(init=False, default=0)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(
            BINS_PER_AXIS, BINS_PER_AXIS, BINS_PER_AXIS
        )
        if np.any(counts < 0):
            raise InvalidArgumentError("histogram counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(counts.sum()))

    bins_per_axis = BINS_PER_AXIS
    bin_width = BIN_WIDTH

    @classmethod
    def empty(cls) -> "ColorModel3D":
        return cls(np.zeros(N_BINS, dtype=np.int64))

    @property
    def normalized(self) -> bool:
        return self.total > 0

    @property
    def probs(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / self.total

    def prob_of(self, pixel) -> float:
        return float(self.probs[bin_of(pixel)])

    def add(self, pixels) -> "ColorModel3D":
        arr = _as_pixels(pixels)
        extra = np.bincount(_flat_bins(arr), minlength=N_BINS)
        return ColorModel3D(self.counts.reshape(-1) + extra)

    def __eq__(self, other):
        if not isinstance(other, ColorModel3D):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


def build_model(pixels) -> ColorModel3D:
    """Histogram a stream of RGB triples.

    ``pixels`` may be an ``(N, 3)`` array, an image, or an iterable of
    images / pixel arrays. An empty stream gives an all-zero, unnormalized
    model.
    """
    if isinstance(pixels, np.ndarray):
        return ColorModel3D.empty().add(pixels)
    model = ColorModel3D.empty()
    chunk = []
    for item in pixels:
        arr = np.asarray(item)
        if arr.ndim == 1:
            chunk.append(arr)
            if len(chunk) >= 65536:
                model = model.add(np.stack(chunk))
                chunk = []
        else:
            model = model.add(arr)
    if chunk:
        model = model.add(np.stack(chunk))
    return model


def blood_probability_from(p_blood, p_nonblood):
    """Pb / (Pb + Pn), with 0/0 taken as 0 (colors unseen by both models)."""
    pb = np.asarray(p_blood, dtype=np.float64)
    pn = np.asarray(p_nonblood, dtype=np.float64)
    denom = pb + pn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, pb / np.where(denom > 0, denom, 1.0), 0.0)
    return out if out.ndim else float(out)


def blood_probability(pixel, blood_model: ColorModel3D, nonblood_model: ColorModel3D) -> float:
    idx = bin_of(pixel)
    return float(blood_probability_from(blood_model.probs[idx], nonblood_model.probs[idx]))


def probability_table(blood_model: ColorModel3D, nonblood_model: ColorModel3D) -> np.ndarray:
    """Blood probability for every color bin, flattened in (r, g, b) order."""
    return blood_probability_from(blood_model.probs.reshape(-1), nonblood_model.probs.reshape(-1))


@dataclass(frozen=True, eq=False)
class BloodProbabilityMap:
    p: np.ndarray

    @property
    def height(self) -> int:
        return self.p.shape[0]

    @property
    def width(self) -> int:
        return self.p.shape[1]


def _check_frame(frame) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidArgumentError(f"frame must have shape (height, width, 3), got {frame.shape}")
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise InvalidArgumentError("frame has a zero dimension")
    return frame


def compute_bpm(frame, blood_model: ColorModel3D, nonblood_model: ColorModel3D, *, table=None) -> BloodProbabilityMap:
    frame = _check_frame(frame)
    if table is None:
        table = probability_table(blood_model, nonblood_model)
    bins = _flat_bins(_as_pixels(frame))
    return BloodProbabilityMap(table[bins].reshape(frame.shape[:2]))


def binarize_bpm(bpm: BloodProbabilityMap | np.ndarray, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in [0, 1], got {threshold}")
    p = bpm.p if isinstance(bpm, BloodProbabilityMap) else np.asarray(bpm)
    return p >= threshold


@dataclass(frozen=True)
class Component:
    area: int
    bbox: tuple[int, int, int, int]  # (x_min, y_min, x_max, y_max), inclusive
    centroid: tuple[float, float]  # (x, y) in pixel-index units
    perimeter: int

    @property
    def bbox_area(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0 + 1) * (y1 - y0 + 1)


_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def label_components(mask) -> tuple[np.ndarray, list[Component]]:
    """4-connected labeling.

    Returns a label image (0 = background, 1 = largest component, ...) and
    the matching component list sorted by descending area. Equal areas keep
    raster order of their first pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    raw, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    if n == 0:
        return np.zeros(mask.shape, dtype=np.int64), []
    flat = raw.reshape(-1)
    areas = np.bincount(flat, minlength=n + 1)[1:]
    padded = np.pad(mask, 1)
    open_edges = (
        4
        - padded[:-2, 1:-1].astype(np.int64)
        - padded[2:, 1:-1]
        - padded[1:-1, :-2]
        - padded[1:-1, 2:]
    )
    perims = np.bincount(flat, weights=np.where(mask, open_edges, 0).reshape(-1), minlength=n + 1)[1:]
    ys, xs = np.indices(mask.shape)
    sum_x = np.bincount(flat, weights=xs.reshape(-1), minlength=n + 1)[1:]
    sum_y = np.bincount(flat, weights=ys.reshape(-1), minlength=n + 1)[1:]
    slices = ndimage.find_objects(raw)

    order = sorted(range(n), key=lambda k: -areas[k])
    relabel = np.zeros(n + 1, dtype=np.int64)
    comps = []
    for new, k in enumerate(order, start=1):
        relabel[k + 1] = new
        sy, sx = slices[k]
        area = int(areas[k])
        comps.append(
            Component(
                area=area,
                bbox=(sx.start, sy.start, sx.stop - 1, sy.stop - 1),
                centroid=(sum_x[k] / area, sum_y[k] / area),
                perimeter=int(round(perims[k])),
            )
        )
    return relabel[raw], comps


def connected_components(mask) -> list[Component]:
    return label_components(mask)[1]


def blood_feature_values(bpm: BloodProbabilityMap, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> np.ndarray:
    p = bpm.p
    h, w = p.shape
    area = float(h * w)
    mask = binarize_bpm(bpm, threshold)
    comps = connected_components(mask)

    f = np.zeros(14)
    f[0] = mask.mean()
    f[1] = p.mean()
    f[2] = p.var()
    f[3] = p.max()
    if mask.any() and f[1] > 0:
        f[4] = p[mask].mean() / f[1]
    if comps:
        big = comps[0]
        f[5] = big.area / area
        f[6] = comps[1].area / area if len(comps) > 1 else 0.0
        f[7] = len(comps) / (area / 1000.0)
        f[8] = big.area / big.bbox_area
        # pixel centers, so a full-frame component sits at exactly 0.5
        f[9] = (big.centroid[0] + 0.5) / w
        f[10] = (big.centroid[1] + 0.5) / h
        f[11] = big.perimeter**2 / (4.0 * math.pi * big.area)
    f[12] = mask.mean(axis=1).var()
    f[13] = mask.mean(axis=0).var()
    return f


def blood_feature(
    frame,
    blood_model: ColorModel3D,
    nonblood_model: ColorModel3D,
    threshold: float = DEFAULT_BINARIZE_THRESHOLD,
    *,
    table=None,
) -> FeatureVector:
    bpm = compute_bpm(frame, blood_model, nonblood_model, table=table)
    return FeatureVector(FeatureChannel.BLOOD, blood_feature_values(bpm, threshold))


def _iter_images(images):
    for item in images:
        if isinstance(item, (str, os.PathLike)):
            try:
                yield read_ppm(item)
            except (OSError, FormatError) as exc:
                logger.warning("skipping unreadable image %s: %s", item, exc)
        else:
            yield np.asarray(item)


def extend_model(
    model: ColorModel3D,
    blood_model: ColorModel3D,
    nonblood_model: ColorModel3D,
    images: Iterable,
    accept_threshold: float = DEFAULT_ACCEPT_THRESHOLD,
    target_total: int = TARGET_MODEL_PIXELS,
) -> ColorModel3D:
    """Grow ``model`` with confidently-blood pixels found in ``images``.

    A pixel is accepted when its blood probability under the fixed pair
    (``blood_model``, ``nonblood_model``) is at least ``accept_threshold``.
    Images are consumed whole; once the model holds ``target_total``
    pixels no further image is used.
    """
    if not 0.0 < accept_threshold < 1.0:
        raise InvalidArgumentError(f"accept_threshold must lie in (0, 1), got {accept_threshold}")
    table = probability_table(blood_model, nonblood_model)
    for image in _iter_images(images):
        if model.total >= target_total:
            break
        try:
            frame = _check_frame(image)
        except InvalidArgumentError as exc:
            logger.warning("skipping image: %s", exc)
            continue
        pixels = _as_pixels(frame)
        accepted = pixels[table[_flat_bins(pixels)] >= accept_threshold]
        if len(accepted):
            model = model.add(accepted)
    return model


def save_model(model: ColorModel3D, path: str | os.PathLike) -> None:
    probs = np.ascontiguousarray(model.probs.reshape(-1), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, BINS_PER_AXIS, model.total))
        fh.write(probs.tobytes())


def load_model(path: str | os.PathLike) -> ColorModel3D:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("truncated model header", path=path)
    magic, version, bins, total = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path=path)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", path=path)
    if bins != BINS_PER_AXIS:
        raise FormatError(f"unsupported bins_per_axis {bins}", path=path)
    body = data[_HEADER.size :]
    if len(body) != N_BINS * 8:
        raise FormatError("model body has wrong size", path=path)
    probs = np.frombuffer(body, dtype="<f8")
    counts = np.rint(probs * total).astype(np.int64)
    loaded = ColorModel3D(counts)
    if loaded.total != total:
        raise FormatError("stored probabilities inconsistent with total", path=path)
    return loaded
