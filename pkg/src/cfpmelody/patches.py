"""Peak candidates and fixed-size patches cut from the CFP representation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from cfpmelody.cfp import TimeFreqRep
from cfpmelody.errors import ShapeError
from cfpmelody.signal_io import MelodyContour

PATCH_SIZE = 25
HALF = PATCH_SIZE // 2
NEGATIVE_KEEP = 0.10


@dataclass
class Patch:
    values: np.ndarray
    center_bin: int
    center_frame: int


@dataclass
class PatchSet:
    """A stack of patches with their centres and (optionally) labels.

    ``labels`` is ``None`` for inference-only sets.
    """

    values: np.ndarray          # (n, 25, 25)
    bins: np.ndarray            # (n,)
    frames: np.ndarray          # (n,)
    labels: np.ndarray = None   # (n,) of {0, 1}

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, idx):
        return PatchSet(self.values[idx], self.bins[idx], self.frames[idx],
                        None if self.labels is None else self.labels[idx])

    @classmethod
    def empty(cls, labelled: bool = True) -> "PatchSet":
        return cls(np.zeros((0, PATCH_SIZE, PATCH_SIZE)), np.zeros(0, int), np.zeros(0, int),
                   np.zeros(0, np.int64) if labelled else None)

    @classmethod
    def concatenate(cls, sets) -> "PatchSet":
        sets = list(sets)
        if not sets:
            return cls.empty()
        labels = None
        if all(s.labels is not None for s in sets):
            labels = np.concatenate([s.labels for s in sets])
        return cls(np.concatenate([s.values for s in sets]),
                   np.concatenate([s.bins for s in sets]),
                   np.concatenate([s.frames for s in sets]), labels)


def _column_peaks(col: np.ndarray) -> np.ndarray:
    n = col.shape[0]
    starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
    ends = np.r_[starts[1:] - 1, n - 1]
    level = col[starts]
    left_ok = np.ones(starts.size, bool)
    left_ok[1:] = level[:-1] < level[1:]
    right_ok = np.ones(starts.size, bool)
    right_ok[:-1] = level[1:] < level[:-1]
    ok = left_ok & right_ok & (level > 0) & ~((starts == 0) & (ends == n - 1))
    return starts[ok]


def pick_peaks(y: TimeFreqRep) -> List[np.ndarray]:
    """Local maxima of every frame of ``y`` along the pitch axis.

    A plateau of equal values counts once, at its lowest bin, and only if both
    of its neighbours are strictly lower. Edge bins compare against their
    single neighbour; zero-valued bins never qualify.
    """
    values = y.values if isinstance(y, TimeFreqRep) else np.asarray(y)
    return [_column_peaks(values[:, n]) for n in range(values.shape[1])]


def peak_coordinates(peaks: List[np.ndarray]):
    """Flatten a per-frame peak list into ``(bins, frames)`` arrays."""
    if not peaks:
        return np.zeros(0, int), np.zeros(0, int)
    bins = np.concatenate(peaks).astype(int)
    frames = np.repeat(np.arange(len(peaks)), [len(p) for p in peaks])
    return bins, frames


def extract_patch(y: TimeFreqRep, center_bin: int, center_frame: int) -> Patch:
    """25x25 window of ``y`` centred on ``(center_bin, center_frame)``; zero outside."""
    values = y.values if isinstance(y, TimeFreqRep) else np.asarray(y)
    n_bins, n_frames = values.shape
    if not (0 <= center_bin < n_bins and 0 <= center_frame < n_frames):
        raise IndexError(f"centre ({center_bin}, {center_frame}) outside {values.shape}")
    out = np.zeros((PATCH_SIZE, PATCH_SIZE))
    b0, f0 = center_bin - HALF, center_frame - HALF
    rb = slice(max(b0, 0), min(b0 + PATCH_SIZE, n_bins))
    rf = slice(max(f0, 0), min(f0 + PATCH_SIZE, n_frames))
    out[rb.start - b0:rb.stop - b0, rf.start - f0:rf.stop - f0] = values[rb, rf]
    return Patch(out, int(center_bin), int(center_frame))


def extract_patches(y: TimeFreqRep, bins, frames) -> np.ndarray:
    """Vectorised :func:`extract_patch` for many centres, shape ``(n, 25, 25)``."""
    values = y.values if isinstance(y, TimeFreqRep) else np.asarray(y)
    padded = np.pad(values, HALF)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (PATCH_SIZE, PATCH_SIZE))
    return np.ascontiguousarray(windows[np.asarray(bins, int), np.asarray(frames, int)])


def hz_to_bin(f0, low_hz: float = 80.0, bins_per_octave: int = 48) -> np.ndarray:
    """Nearest pitch-bin index for each frequency (undefined for f0 <= 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.round(bins_per_octave * np.log2(np.asarray(f0, float) / low_hz))


def keep_draws(seed: int, bins: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draw per peak from a counter-based generator.

    The draw for a peak depends only on ``(seed, frame, bin)``, so it is the
    same whatever order or partition the peaks are processed in.
    """
    out = np.empty(bins.shape[0])
    for i, (b, f) in enumerate(zip(bins, frames)):
        bitgen = np.random.Philox(key=seed, counter=[int(f), int(b), 0, 0])
        out[i] = np.random.Generator(bitgen).random()
    return out


def label_peaks(bins, frames, annotation: MelodyContour, tolerance_bins: int = 1,
                low_hz: float = 80.0, bins_per_octave: int = 48) -> np.ndarray:
    f0 = annotation.f0[frames]
    target = hz_to_bin(np.where(f0 > 0, f0, 1.0), low_hz, bins_per_octave)
    return ((f0 > 0) & (np.abs(target - bins) <= tolerance_bins)).astype(np.int64)


def build_training_set(y: TimeFreqRep, peaks: List[np.ndarray], annotation: MelodyContour,
                       rng_seed: int, keep_negative: float = NEGATIVE_KEEP,
                       tolerance_bins: int = 1) -> PatchSet:
    """Label every peak against ``annotation`` and subsample the negatives.

    A peak is positive when its frame is voiced and it lies within
    ``tolerance_bins`` of the annotated pitch's nearest bin. All positives
    are kept; each negative survives independently with probability
    ``keep_negative``. Output is ordered by frame, then bin.
    """
    n_frames = y.n_frames if isinstance(y, TimeFreqRep) else np.asarray(y).shape[1]
    if len(annotation) != n_frames or len(peaks) != n_frames:
        raise ShapeError(
            f"annotation has {len(annotation)} frames, representation {n_frames}, "
            f"peak list {len(peaks)}")
    bins, frames = peak_coordinates(peaks)
    labels = label_peaks(bins, frames, annotation, tolerance_bins)
    keep = labels == 1
    neg = ~keep
    keep[neg] = keep_draws(rng_seed, bins[neg], frames[neg]) < keep_negative
    bins, frames, labels = bins[keep], frames[keep], labels[keep]
    return PatchSet(extract_patches(y, bins, frames), bins, frames, labels)
