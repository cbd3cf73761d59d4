"""Motion features from codec motion vectors.

Motion vectors arrive as a CSV sidecar (one row per macroblock vector). Each
frame is split into 3 columns x 4 rows; every block adds ``|dx| * area`` and
``|dy| * area`` to the cell holding its center. Sums are normalized by frame
area and segment length.
"""

from __future__ import annotations

import csv
import logging
import os
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .core import FeatureChannel, FeatureVector, Segment
from .errors import FormatError, InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

SIDECAR_HEADER = ("frame", "dst_x", "dst_y", "dx", "dy", "block_w", "block_h")
GRID_COLUMNS = 3
GRID_ROWS = 4


@dataclass(frozen=True)
class MotionVectorRecord:
    frame_idx: int
    dst_x: int
    dst_y: int
    dx: float
    dy: float
    block_w: int
    block_h: int

    def __post_init__(self):
        if self.block_w <= 0 or self.block_h <= 0:
            raise InvalidArgumentError("block dimensions must be positive")

    @property
    def area(self) -> int:
        return self.block_w * self.block_h


def _parse_row(fields, lineno, path):
    if len(fields) != len(SIDECAR_HEADER):
        raise ParseError(f"expected {len(SIDECAR_HEADER)} fields, got {len(fields)}", path=path, line=lineno)
    try:
        return MotionVectorRecord(
            frame_idx=int(fields[0]),
            dst_x=int(fields[1]),
            dst_y=int(fields[2]),
            dx=float(fields[3]),
            dy=float(fields[4]),
            block_w=int(fields[5]),
            block_h=int(fields[6]),
        )
    except (ValueError, InvalidArgumentError) as exc:
        raise ParseError(str(exc), path=path, line=lineno) from None


def parse_sidecar(path: str | os.PathLike) -> dict[int, list[MotionVectorRecord]]:
    """Read a motion sidecar into ``{frame_idx: [records...]}`` (file order kept)."""
    frames: dict[int, list[MotionVectorRecord]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError("missing header", path=path, line=1)
        if tuple(h.strip() for h in header) != SIDECAR_HEADER:
            raise FormatError(f"unknown header {','.join(header)!r}", path=path, line=1)
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            rec = _parse_row(row, reader.line_num, path)
            frames[rec.frame_idx].append(rec)
    return dict(frames)


def write_sidecar(path: str | os.PathLike, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SIDECAR_HEADER)
        for r in records:
            writer.writerow([r.frame_idx, r.dst_x, r.dst_y, repr(float(r.dx)), repr(float(r.dy)), r.block_w, r.block_h])


def _cell_index(coord: int, size: int, parts: int) -> int:
    # equal parts; remainder pixels belong to the last one
    step = size // parts
    if step == 0:
        return min(coord, parts - 1)
    return min(coord // step, parts - 1)


def motion_histogram(records, frame_w: int, frame_h: int) -> np.ndarray:
    """Un-normalized ``(4 rows, 3 cols, 2)`` sums of ``|d| * block area``."""
    if frame_w <= 0 or frame_h <= 0:
        raise InvalidArgumentError("frame dimensions must be positive")
    grid = np.zeros((GRID_ROWS, GRID_COLUMNS, 2))
    skipped = 0
    for r in records:
        if not (0 <= r.dst_x < frame_w and 0 <= r.dst_y < frame_h):
            skipped += 1
            continue
        row = _cell_index(r.dst_y, frame_h, GRID_ROWS)
        col = _cell_index(r.dst_x, frame_w, GRID_COLUMNS)
        grid[row, col, 0] += abs(r.dx) * r.area
        grid[row, col, 1] += abs(r.dy) * r.area
    if skipped:
        logger.warning("skipped %d motion vectors centered outside the %dx%d frame", skipped, frame_w, frame_h)
    return grid


def motion_feature(records, frame_w: int, frame_h: int, frame_count_in_segment: int = 1) -> FeatureVector:
    """24-value motion feature: row-major cells, ``dx`` before ``dy`` in each."""
    if frame_count_in_segment <= 0:
        raise InvalidArgumentError("frame_count_in_segment must be positive")
    grid = motion_histogram(records, frame_w, frame_h)
    grid /= float(frame_w) * float(frame_h) * frame_count_in_segment
    return FeatureVector(FeatureChannel.MOTION, grid.reshape(-1))


def segment_motion_feature(
    sidecar: dict[int, list[MotionVectorRecord]], segment: Segment, frame_w: int, frame_h: int
) -> FeatureVector:
    records = [r for f in segment.frames() for r in sidecar.get(f, ())]
    return motion_feature(records, frame_w, frame_h, segment.length)
