"""MFCC audio features, one vector per video frame.

The audio track is cut into non-overlapping windows of
``round(sample_rate / fps)`` samples so each window lines up with one video
frame. Per-segment features are the mean of the segment's frame vectors.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.fft
from scipy.io import wavfile

from .core import FeatureChannel, FeatureVector, Segment
from .errors import FormatError, InvalidArgumentError


class WindowKind(str, Enum):
    RECTANGULAR = "rectangular"
    HANN = "hann"


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 22
    n_mel_filters: int = 26
    include_c0: bool = False
    log_floor: float = 1e-10
    window: WindowKind = WindowKind.HANN

    def __post_init__(self):
        object.__setattr__(self, "window", WindowKind(self.window))
        if self.n_coeffs > self.n_mel_filters - (0 if self.include_c0 else 1):
            raise InvalidArgumentError("n_coeffs must not exceed the number of mel filters")


@dataclass(frozen=True, eq=False)
class AudioTrack:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidArgumentError("sample_rate must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples.mean(axis=1)
        object.__setattr__(self, "samples", samples)


def read_wav(path: str | os.PathLike) -> AudioTrack:
    """Load a PCM16 / float32 WAV, downmixed to mono, scaled to [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported sample type {data.dtype}", path=path)
    return AudioTrack(int(rate), samples)


def write_wav(path: str | os.PathLike, track: AudioTrack, *, pcm16: bool = True) -> None:
    samples = np.clip(track.samples, -1.0, 1.0)
    if pcm16:
        wavfile.write(path, track.sample_rate, np.round(samples * 32767).astype(np.int16))
    else:
        wavfile.write(path, track.sample_rate, samples.astype(np.float32))


def window_length(sample_rate: int, fps: float) -> int:
    """Audio samples per video frame, ``round(sample_rate / fps)``."""
    if not fps > 0:
        raise InvalidArgumentError(f"fps must be positive, got {fps}")
    return int(math.floor(sample_rate / fps + 0.5))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(n_fft: int, sample_rate: int, n_filters: int) -> np.ndarray:
    """Triangular HTK-mel filters over the ``n_fft // 2 + 1`` rfft bins, 0 Hz to Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.flags.writeable = False
    return fb


@lru_cache(maxsize=32)
def _window(kind: WindowKind, n: int) -> np.ndarray:
    if kind is WindowKind.HANN:
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return np.ones(n)


def mfcc_matrix(windows: np.ndarray, sample_rate: int, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCCs for a stack of equal-length windows, shape ``(k, n_coeffs)``."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    n = windows.shape[1]
    if n < 2:
        raise InvalidArgumentError("MFCC windows need at least 2 samples")
    spectrum = np.abs(np.fft.rfft(windows * _window(config.window, n), axis=1)) ** 2
    energies = spectrum @ mel_filterbank(n, sample_rate, config.n_mel_filters).T
    log_e = np.log(np.maximum(energies, config.log_floor))
    cepstrum = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)
    start = 0 if config.include_c0 else 1
    return cepstrum[:, start : start + config.n_coeffs]


def mfcc_frame(samples, sample_rate: int, config: MfccConfig = MfccConfig()) -> FeatureVector:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    return FeatureVector(FeatureChannel.AUDIO, mfcc_matrix(samples[None, :], sample_rate, config)[0])


def mfcc_track(track: AudioTrack, fps: float, config: MfccConfig = MfccConfig()) -> list[FeatureVector]:
    """One MFCC vector per video frame; the trailing partial window is dropped."""
    n = window_length(track.sample_rate, fps)
    count = track.samples.size // n
    if count == 0:
        return []
    windows = track.samples[: count * n].reshape(count, n)
    return [FeatureVector(FeatureChannel.AUDIO, row) for row in mfcc_matrix(windows, track.sample_rate, config)]


def segment_audio_feature(vectors, segment: Segment) -> FeatureVector:
    chunk = vectors[segment.start_frame : segment.end_frame]
    if len(chunk) == 0:
        raise InvalidArgumentError(f"no audio frames in segment {segment.index} of {segment.video_id!r}")
    values = np.mean([v.values if isinstance(v, FeatureVector) else v for v in chunk], axis=0)
    return FeatureVector(FeatureChannel.AUDIO, values)
