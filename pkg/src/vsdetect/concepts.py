"""Precomputed per-frame concept scores (e.g. detector-bank outputs).

Files are JSON Lines: ``{"frame": <int>, "scores": [<float>, ...]}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import FeatureChannel, FeatureVector, Segment
from .errors import FormatError, MissingFeatureError


@dataclass(frozen=True, eq=False)
class ConceptVector:
    frame_idx: int
    scores: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.scores.size)


class ConceptMap(dict):
    """``{frame_idx: ConceptVector}`` that remembers the shared dimension."""

    def __init__(self, *args, dim: int | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.dim = dim


def load_concepts(path: str | os.PathLike) -> ConceptMap:
    out = ConceptMap()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                frame = obj["frame"]
                scores = obj["scores"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad concept row: {exc}", path=path, line=lineno) from None
            if not isinstance(frame, int) or isinstance(frame, bool):
                raise FormatError("'frame' must be an integer", path=path, line=lineno)
            if not isinstance(scores, list) or not all(
                isinstance(s, (int, float)) and not isinstance(s, bool) for s in scores
            ):
                raise FormatError("'scores' must be a numeric array", path=path, line=lineno)
            values = np.array(scores, dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise FormatError("non-finite concept score", path=path, line=lineno)
            if out.dim is None:
                out.dim = values.size
            elif values.size != out.dim:
                raise FormatError(
                    f"row for frame {frame} has {values.size} scores, expected {out.dim}",
                    path=path,
                    line=lineno,
                )
            out[frame] = ConceptVector(frame, values)
    return out


def dump_concepts(concepts, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame, vec in concepts.items():
            fh.write(json.dumps({"frame": int(frame), "scores": [float(s) for s in vec.scores]}) + "\n")


def segment_concept_feature(concepts, segment: Segment) -> FeatureVector:
    """Scores of the segment's first frame, or of its first available frame."""
    for frame in segment.frames():
        vec = concepts.get(frame)
        if vec is not None:
            return FeatureVector(FeatureChannel.CONCEPTS, vec.scores)
    raise MissingFeatureError(
        f"no concept scores for frames {segment.start_frame}..{segment.end_frame - 1} of {segment.video_id!r}"
    )
