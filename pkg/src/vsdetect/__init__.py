"""Multimodal violent scene detection.

Per-second features from four channels (MFCC audio, blood color regions,
codec motion, visual concept scores), one calibrated SVM per channel, and
per-class convex late fusion tuned for minimum equal error rate.
"""

from .core import CHANNELS, NON_VIOLENT, VIOLENCE_CLASSES, FeatureChannel, ViolenceClass
from .errors import VsdError

__all__ = [
    "CHANNELS",
    "NON_VIOLENT",
    "VIOLENCE_CLASSES",
    "FeatureChannel",
    "ViolenceClass",
    "VsdError",
]

__version__ = "0.1.0"
