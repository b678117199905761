"""Frame-wise melody decoding from the CFP representation and CNN scores.

Three strategies are available:

``cfp-max``
    The pitch bin where the CFP representation peaks, every frame voiced.
``cnn-maxin``
    Among peaks the CNN scores above the threshold, the one with the largest
    CFP value.
``cnn-maxout``
    Among the same peaks, the one with the largest CNN probability.

Both CNN modes share their voicing decision: a frame is voiced iff at least
one peak clears the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from cfpmelody.cfp import TimeFreqRep, pitch_centers
from cfpmelody.errors import DecodeModeError
from cfpmelody.net import CnnModel, vocal_probability
from cfpmelody.patches import extract_patches, peak_coordinates
from cfpmelody.signal_io import MelodyContour

CFP_MAX = "cfp-max"
CNN_MAXIN = "cnn-maxin"
CNN_MAXOUT = "cnn-maxout"
MODES = (CFP_MAX, CNN_MAXIN, CNN_MAXOUT)

N_BINS = 159
LOW_HZ = 80.0
BINS_PER_OCTAVE = 48


@dataclass
class SalienceMap:
    """CNN vocal probability at every scored peak; zero elsewhere."""

    probs: np.ndarray
    hop_seconds: float = 0.02
    frame_offset: float = 0.0


@dataclass
class DecodeConfig:
    mode: str = CNN_MAXOUT
    threshold: float = 0.5

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def normalize_mode(mode: str) -> str:
    m = mode.strip().lower().replace("_", "-")
    if m not in MODES:
        raise DecodeModeError(f"unknown decode mode {mode!r}; choose from {', '.join(MODES)}")
    return m


def bin_to_hz(p):
    """Centre frequency of pitch bin ``p`` (0-based), ``80 * 2 ** (p / 48)``."""
    arr = np.asarray(p)
    if np.any(arr < 0) or np.any(arr > N_BINS - 1):
        raise ValueError(f"pitch bin out of range 0..{N_BINS - 1}: {p}")
    out = LOW_HZ * 2.0 ** (arr / BINS_PER_OCTAVE)
    return float(out) if np.ndim(out) == 0 else out


def score_peaks(y: TimeFreqRep, peaks: List[np.ndarray], model: CnnModel,
                dtype=np.float64) -> SalienceMap:
    """Run the classifier on the patch around every peak and scatter the
    vocal probability back onto the ``(bin, frame)`` grid."""
    probs = np.zeros_like(y.values)
    bins, frames = peak_coordinates(peaks)
    if bins.size:
        patches = extract_patches(y, bins, frames)
        probs[bins, frames] = vocal_probability(model, patches, dtype=dtype)
    return SalienceMap(probs, y.hop_seconds, y.frame_offset)


def decode(y: TimeFreqRep, salience: Optional[SalienceMap] = None,
           config: DecodeConfig = DecodeConfig()) -> MelodyContour:
    """Per-frame f0 (Hz, 0 for unvoiced) under ``config.mode``."""
    values = y.values
    centers = pitch_centers(LOW_HZ, values.shape[0], BINS_PER_OCTAVE)
    n_frames = values.shape[1]
    f0 = np.zeros(n_frames)

    if config.mode == CFP_MAX:
        best = np.argmax(values, axis=0)
        voiced = values.max(axis=0) > 0
        f0[voiced] = centers[best[voiced]]
        return MelodyContour(f0, y.hop_seconds)

    if salience is None:
        raise DecodeModeError(f"mode {config.mode} needs CNN scores; only cfp-max runs without a model")
    probs = salience.probs
    if probs.shape != values.shape:
        raise DecodeModeError(f"salience map shape {probs.shape} != representation {values.shape}")
    candidate = probs > config.threshold
    voiced = candidate.any(axis=0)

    if config.mode == CNN_MAXIN:
        score = np.where(candidate, values, -np.inf)
        best = np.argmax(score, axis=0)
    else:
        # lexicographic: probability, then CFP value, then the lower bin (argmax takes the first)
        order = np.lexsort((-values, -np.where(candidate, probs, -np.inf)), axis=0)
        best = order[0]
    f0[voiced] = centers[best[voiced]]
    return MelodyContour(f0, y.hop_seconds)
